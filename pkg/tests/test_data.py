import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interbench.data import (CsvSchema, DataError, LabeledDataset, MinMaxNormalizer, SplitSpec,
                             SyntheticSpec, corner_patch, label_conditionals, load_csv,
                             minmax_normalize, sample_with_ratio, split, split_indices, synth_gauss)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestCsv:
    def test_label_only(self, tmp_path):
        ds = load_csv(write(tmp_path, "label\n0\n1\n1\n"))
        assert len(ds) == 3 and ds.z is None and ds.n_features == 0

    def test_sensitive_column(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,sens_race,label\n1,0,0\n2,1,1\n3,1,0\n"))
        assert ds.n_groups == 2
        assert ds.z.tolist() == [0, 1, 1]
        assert ds.n_features == 1  # sens_race stays out of X

    def test_sensitive_as_features(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,sens_race,label\n1,0,0\n2,1,1\n"),
                      CsvSchema(sensitive_as_features=True))
        assert ds.n_features == 2

    def test_constant_column_maps_to_zero(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b,label\n5,0,0\n5,2,1\n5,4,0\n"))
        assert ds.X[:, 0].tolist() == [0, 0, 0]
        assert ds.X[:, 1].tolist() == [0, 0.5, 1]
        assert ds.normalized

    def test_no_normalisation(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,label\n5,0\n7,1\n"), CsvSchema(normalize=False))
        assert ds.X[:, 0].tolist() == [5, 7] and not ds.normalized

    def test_row_order_kept(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,label\n3,1\n1,0\n2,1\n"), CsvSchema(normalize=False))
        assert ds.X[:, 0].tolist() == [3, 1, 2]

    def test_sidecar_grid(self, tmp_path):
        header = ",".join(f"p{i}" for i in range(4)) + ",label\n"
        p = write(tmp_path, header + "0,1,0,1,0\n1,0,1,0,1\n")
        p.with_suffix(".json").write_text(json.dumps({"grid": [2, 2], "normalized": True}))
        assert load_csv(p).grid == (2, 2)

    @pytest.mark.parametrize("text,match", [
        ("", "empty"),
        ("a,label\n", "no data"),
        ("a,b\n1,2\n", "label"),
        ("a,label\nx,0\n", "non-numeric"),
        ("a,label\n1\n", "cells"),
        ("a,label\n1,0.5\n", "integers"),
    ])
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(DataError, match=match):
            load_csv(write(tmp_path, text))

    def test_missing_sensitive(self, tmp_path):
        with pytest.raises(DataError, match="sens_sex"):
            load_csv(write(tmp_path, "a,label\n1,0\n"), CsvSchema(sensitive="sens_sex"))


class TestDataset:
    def test_label_range(self):
        with pytest.raises(DataError):
            LabeledDataset(X=np.zeros((2, 1)), y=[0, 2], n_classes=2)

    def test_declared_normalized(self):
        with pytest.raises(DataError):
            LabeledDataset(X=[[2.0]], y=[0], n_classes=1, normalized=True)

    def test_non_finite(self):
        with pytest.raises(DataError):
            LabeledDataset(X=[[np.nan]], y=[0], n_classes=1)

    def test_grid_must_cover(self):
        with pytest.raises(DataError):
            LabeledDataset(X=np.zeros((1, 5)), y=[0], n_classes=1, grid=(2, 2))

    def test_z_length(self):
        with pytest.raises(DataError):
            LabeledDataset(X=np.zeros((2, 1)), y=[0, 0], n_classes=1, z=[0])


class TestSplit:
    def test_all_train(self):
        ds = synth_gauss(SyntheticSpec(n=50, d=2))
        parts = split(ds, SplitSpec(1.0, 0.0, 0.0, seed=3))
        assert len(parts.train) == 50 and len(parts.test) == 0
        assert sorted(map(tuple, parts.train.X)) == sorted(map(tuple, ds.X))

    def test_sizes_and_disjoint(self):
        tr, te, adv = split_indices(10, SplitSpec(0.5, 0.3, 0.2, seed=0))
        assert (len(tr), len(te), len(adv)) == (5, 3, 2)
        assert len(set(tr) | set(te) | set(adv)) == 10

    def test_same_seed(self):
        a = split_indices(37, SplitSpec(0.4, 0.3, 0.2, seed=11))
        b = split_indices(37, SplitSpec(0.4, 0.3, 0.2, seed=11))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_sum_above_one(self):
        with pytest.raises(DataError):
            SplitSpec(0.6, 0.4, 0.2)

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(0, 300),
           fr=st.lists(st.floats(0, 1, allow_nan=False), min_size=3, max_size=3),
           seed=st.integers(0, 2**63))
    def test_property(self, n, fr, seed):
        total = sum(fr)
        if fr[0] <= 0 or total == 0:
            return
        if total > 1:
            fr = [f / total for f in fr]
            if fr[0] <= 0:
                return
        spec = SplitSpec(*fr, seed=seed)
        parts = split_indices(n, spec)
        allidx = np.concatenate(parts)
        assert len(np.unique(allidx)) == allidx.size
        assert allidx.size == 0 or (allidx.min() >= 0 and allidx.max() < n)
        for p, f in zip(parts, fr):
            assert abs(len(p) - f * n) <= 2
        again = split_indices(n, spec)
        assert all(np.array_equal(a, b) for a, b in zip(parts, again))


class TestNormalisation:
    def test_idempotent(self, rng):
        X = rng.standard_normal((30, 4)) * 5
        once = minmax_normalize(X)
        np.testing.assert_allclose(minmax_normalize(once), once, rtol=0, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_idempotent_property(self, seed):
        X = np.random.default_rng(seed).standard_normal((8, 3)) * 100
        X[:, 2] = 4.0
        once = minmax_normalize(X)
        np.testing.assert_allclose(minmax_normalize(once), once, rtol=0, atol=1e-15)
        assert once.min() >= 0 and once.max() <= 1

    def test_transformer_matches_function(self, rng):
        X = rng.random((10, 3))
        np.testing.assert_allclose(MinMaxNormalizer().fit(X).transform(X), minmax_normalize(X))


class TestSynthetic:
    def test_uncorrelated(self):
        ds = synth_gauss(SyntheticSpec(n=2000, correlation=0.0, seed=0))
        assert abs(np.corrcoef(ds.z, ds.y)[0, 1]) < 0.1

    @pytest.mark.parametrize("rho,r", [(0.8, 0.5), (0.5, 0.3), (-0.6, 0.7), (1.0, 0.5)])
    def test_target_correlation(self, rho, r):
        ds = synth_gauss(SyntheticSpec(n=20000, correlation=rho, ratio=r, seed=1))
        assert np.corrcoef(ds.z, ds.y)[0, 1] == pytest.approx(rho, abs=0.03)
        assert ds.z.mean() == pytest.approx(r, abs=0.02)

    @pytest.mark.parametrize("rho,r", [(0.3, 0.2), (0.9, 0.1), (-1.0, 0.5), (0.7, 0.95)])
    def test_conditionals_exact(self, rho, r):
        p0, p1 = label_conditionals(rho, r)
        py = (1 - r) * p0 + r * p1
        cov = r * p1 - r * py
        corr = cov / np.sqrt(r * (1 - r) * py * (1 - py))
        assert corr == pytest.approx(rho, abs=1e-12)
        assert 0 <= p0 <= 1 and 0 <= p1 <= 1

    def test_zero_ratio(self):
        assert not synth_gauss(SyntheticSpec(n=500, ratio=0.0)).z.any()

    def test_infeasible(self):
        with pytest.raises(DataError):
            SyntheticSpec(correlation=0.5, ratio=0.0)
        with pytest.raises(DataError):
            SyntheticSpec(label_noise=0.5)

    def test_bayes_classifier(self):
        ds = synth_gauss(SyntheticSpec(n=2000, d=5, separation=3.0, normalize=False, seed=2))
        assert np.mean((ds.X[:, 0] > 0) == (ds.y == 1)) >= 0.95

    def test_reproducible(self):
        a = synth_gauss(SyntheticSpec(seed=5, correlation=0.4))
        b = synth_gauss(SyntheticSpec(seed=5, correlation=0.4))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)

    def test_label_noise_rate(self):
        clean = synth_gauss(SyntheticSpec(n=5000, seed=3, normalize=False))
        noisy = synth_gauss(SyntheticSpec(n=5000, seed=3, normalize=False, label_noise=0.2))
        assert np.mean((noisy.X[:, 0] > 0) != (noisy.y == 1)) > np.mean((clean.X[:, 0] > 0) != (clean.y == 1)) + 0.1

    def test_multiclass(self):
        ds = synth_gauss(SyntheticSpec(n=300, d=4, n_classes=4))
        assert set(ds.y.tolist()) == {0, 1, 2, 3}


def test_sample_with_ratio(rng):
    pool = synth_gauss(SyntheticSpec(n=400, seed=0))
    sub = sample_with_ratio(pool, 0.2, 100, rng)
    assert len(sub) == 100 and sub.z.sum() == 20


def test_corner_patch():
    assert corner_patch((4, 4), 2) == [10, 11, 14, 15]
    assert corner_patch((3, 3), 1, "top_left") == [0]
    with pytest.raises(DataError):
        corner_patch((2, 2), 3)
