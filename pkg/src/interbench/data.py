"""Labelled datasets: CSV ingestion, seeded splits and synthetic Gaussian tasks."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from interbench._rng import substream


class DataError(ValueError):
    """Malformed input data or infeasible synthetic-data parameters."""


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix, integer labels and optional sensitive attribute.

    ``z`` holds the sensitive attribute (one integer group per row) and is never
    part of ``X`` unless the loader was told to map it as a feature. ``grid`` is
    the ``(H, W)`` layout of flattened image rows.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    z: np.ndarray | None = None
    grid: tuple[int, int] | None = None
    name: str = "dataset"
    normalized: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        y = np.asarray(self.y).astype(np.int64, copy=False).reshape(-1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0] if X.ndim else 0} feature rows for {y.shape[0]} labels")
        if self.n_classes < 1:
            raise DataError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        if self.z is not None:
            z = np.asarray(self.z).astype(np.int64, copy=False).reshape(-1)
            if z.shape[0] != y.shape[0]:
                raise DataError("sensitive attribute length differs from label count")
            if z.size and z.min() < 0:
                raise DataError("sensitive groups must be non-negative integers")
            object.__setattr__(self, "z", z)
        if self.grid is not None:
            grid = tuple(int(v) for v in self.grid)
            if len(grid) != 2 or grid[0] * grid[1] != X.shape[1]:
                raise DataError(f"grid {self.grid} does not cover {X.shape[1]} features")
            object.__setattr__(self, "grid", grid)
        if self.normalized and X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise DataError("dataset declared normalized but features leave [0, 1]")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        if self.z is None or self.z.size == 0:
            return 0
        return int(self.z.max()) + 1

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        z = None if self.z is None else self.z[index]
        return dataclasses.replace(self, X=self.X[index], y=self.y[index], z=z)

    def replace(self, **changes) -> "LabeledDataset":
        return dataclasses.replace(self, **changes)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if (self.z is None) != (other.z is None):
            raise DataError("cannot concatenate datasets with and without sensitive attributes")
        z = None if self.z is None else np.concatenate([self.z, other.z])
        return dataclasses.replace(
            self,
            X=np.vstack([self.X, other.X]),
            y=np.concatenate([self.y, other.y]),
            z=z,
            n_classes=max(self.n_classes, other.n_classes),
            normalized=self.normalized and other.normalized,
        )


# ---------------------------------------------------------------------------
# normalisation


def minmax_normalize(X: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return X.copy()
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (X - lo) / safe
    out[:, span == 0] = 0.0
    return np.clip(out, 0.0, 1.0)


class MinMaxNormalizer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Per-feature min-max scaling with the constant-column-to-zero convention.

    Unlike ``sklearn.preprocessing.MinMaxScaler`` this clips transformed values into
    [0, 1], which the evasion and reconstruction code relies on.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        out = (X - self.data_min_) / safe
        out[:, span == 0] = 0.0
        return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """How to read a CSV file.

    ``label`` names the label column. Columns prefixed ``sens_`` are sensitive;
    ``sensitive`` picks the one stored as ``z`` (default: the first). Sensitive
    columns only become features when ``sensitive_as_features`` is set.
    """

    label: str = "label"
    sensitive: str | None = None
    normalize: bool = True
    features: tuple[str, ...] | None = None
    sensitive_as_features: bool = False
    meta: str | None = None


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} in column {column!r}, row {row}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell {cell!r} in column {column!r}, row {row}")
    return value


def _read_meta(path: Path, schema: CsvSchema) -> dict:
    meta_path = Path(schema.meta) if schema.meta else path.with_suffix(".json")
    if not meta_path.exists():
        if schema.meta:
            raise DataError(f"metadata file {meta_path} not found")
        return {}
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if not isinstance(meta, dict):
        raise DataError("metadata sidecar must be a JSON object")
    return meta


def load_csv(path, schema: CsvSchema | None = None) -> LabeledDataset:
    """Read a header-first numeric CSV into a :class:`LabeledDataset`.

    A sidecar JSON (``<file>.json`` unless ``schema.meta`` says otherwise) may give
    ``{"grid": [H, W], "normalized": bool}``.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    if schema.label not in header:
        raise DataError(f"{path}: missing label column {schema.label!r}")
    sens_cols = [h for h in header if h.startswith("sens_")]
    if schema.sensitive is not None and schema.sensitive not in sens_cols:
        raise DataError(f"{path}: missing sensitive column {schema.sensitive!r}")
    if schema.features is not None:
        missing = [f for f in schema.features if f not in header]
        if missing:
            raise DataError(f"{path}: missing feature columns {missing}")
        feature_cols = list(schema.features)
    else:
        feature_cols = [
            h for h in header
            if h != schema.label and (schema.sensitive_as_features or not h.startswith("sens_"))
        ]
    col = {h: i for i, h in enumerate(header)}
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")

    def column(name: str) -> np.ndarray:
        j = col[name]
        return np.array([_parse_float(row[j], r, name) for r, row in enumerate(body, start=2)])

    X = np.column_stack([column(f) for f in feature_cols]) if feature_cols else np.zeros((len(body), 0))
    y = _integer_column(column(schema.label), schema.label)
    z = None
    chosen = schema.sensitive or (sens_cols[0] if sens_cols else None)
    if chosen is not None:
        z = _integer_column(column(chosen), chosen)
        if z.min() < 0:
            raise DataError(f"sensitive column {chosen!r} has negative values")
    meta = _read_meta(path, schema)
    normalized = bool(meta.get("normalized", False))
    if schema.normalize:
        X = minmax_normalize(X)
        normalized = True
    grid = meta.get("grid")
    return LabeledDataset(
        X=X,
        y=y,
        n_classes=int(y.max()) + 1,
        z=z,
        grid=tuple(grid) if grid else None,
        name=path.stem,
        normalized=normalized,
    )


def _integer_column(values: np.ndarray, name: str) -> np.ndarray:
    if not np.all(values == np.round(values)):
        raise DataError(f"column {name!r} must hold integers")
    out = values.astype(np.int64)
    if out.min() < 0:
        raise DataError(f"column {name!r} must be non-negative")
    return out


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.5
    test: float = 0.25
    adversary: float = 0.25
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.test, self.adversary)
        if any(f < 0 for f in fr):
            raise DataError("split fractions must be non-negative")
        if self.train <= 0:
            raise DataError("train fraction must be positive")
        if sum(fr) > 1.0 + 1e-12:
            raise DataError(f"split fractions sum to {sum(fr):g} > 1")


class Splits(NamedTuple):
    train: LabeledDataset
    test: LabeledDataset
    adversary: LabeledDataset


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sizes = [_round_half_up(f * n) for f in (spec.train, spec.test, spec.adversary)]
    # rounding can overshoot n by at most a couple of rows; trim from the back
    excess = sum(sizes) - n
    for k in (2, 1, 0):
        cut = min(excess, sizes[k]) if excess > 0 else 0
        sizes[k] -= cut
        excess -= cut
    order = substream(spec.seed, "data/split").permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return order[:a], order[a:b], order[b:b + sizes[2]]


def split(dataset: LabeledDataset, spec: SplitSpec) -> Splits:
    """Disjoint seeded train/test/adversary partitions of sizes ``round(f * n)``."""
    tr, te, adv = split_indices(len(dataset), spec)
    return Splits(dataset.subset(tr), dataset.subset(te), dataset.subset(adv))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """A Gaussian-mixture task with a tunable sensitive attribute.

    Construction (see :func:`synth_gauss`): ``z ~ Bernoulli(ratio)``, then the
    label given ``z``, then features given the label (and ``z`` when
    ``attribute_shift`` is non-zero).
    """

    n: int = 2000
    d: int = 10
    n_classes: int = 2
    separation: float = 3.0
    scale: float = 1.0
    correlation: float = 0.0
    ratio: float = 0.5
    label_noise: float = 0.0
    attribute_shift: float = 0.0
    grid: tuple[int, int] | None = None
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DataError("n and d must be positive")
        if self.n_classes < 2:
            raise DataError("n_classes must be at least 2")
        if self.n_classes > 2 and self.d < self.n_classes:
            raise DataError("multi-class synthetic data needs d >= n_classes")
        if not -1.0 <= self.correlation <= 1.0:
            raise DataError("correlation must lie in [-1, 1]")
        if not 0.0 <= self.ratio <= 1.0:
            raise DataError("ratio must lie in [0, 1]")
        if not 0.0 <= self.label_noise < 0.5:
            raise DataError("label_noise must lie in [0, 0.5)")
        if self.scale <= 0:
            raise DataError("scale must be positive")
        if self.correlation != 0.0:
            if self.n_classes != 2:
                raise DataError("a label-attribute correlation needs a binary task")
            if self.ratio in (0.0, 1.0):
                raise DataError("correlation is undefined when the attribute is constant")
        if self.attribute_shift != 0.0 and self.d < 2:
            raise DataError("attribute_shift needs d >= 2")
        if self.grid is not None and self.grid[0] * self.grid[1] != self.d:
            raise DataError("grid must satisfy H * W == d")


def label_conditionals(correlation: float, ratio: float) -> tuple[float, float]:
    """``(P(y=1 | z=0), P(y=1 | z=1))`` giving ``corr(z, y) == correlation``.

    With ``P(y=1|z) = 1/2 + delta (2z - 1)`` and ``s = sqrt(r(1-r))``,
    ``t = 2r - 1``, the correlation equals ``rho`` when
    ``delta = rho / (2 sqrt(4 s^2 + rho^2 t^2))``; since ``4 s^2 + t^2 = 1`` this is
    always within [-1/2, 1/2] and every ``|rho| <= 1`` is feasible for ``0 < r < 1``.
    """
    s2 = ratio * (1.0 - ratio)
    t = 2.0 * ratio - 1.0
    if correlation == 0.0:
        return 0.5, 0.5
    if s2 == 0.0:
        raise DataError("correlation is undefined when the attribute is constant")
    delta = correlation / (2.0 * math.sqrt(4.0 * s2 + correlation**2 * t**2))
    return 0.5 - delta, 0.5 + delta


def class_means(spec: SyntheticSpec) -> np.ndarray:
    means = np.zeros((spec.n_classes, spec.d))
    if spec.n_classes == 2:
        means[0, 0], means[1, 0] = -spec.separation, spec.separation
    else:
        means[np.arange(spec.n_classes), np.arange(spec.n_classes)] = spec.separation
    return means


def synth_gauss(spec: SyntheticSpec) -> LabeledDataset:
    """Sample a Gaussian-mixture task.

    1. ``z ~ Bernoulli(ratio)``.
    2. Binary tasks: ``y | z ~ Bernoulli(p_z)`` with ``p_z`` from
       :func:`label_conditionals`, so ``P(z=1) = ratio`` and ``corr(z, y) = rho``.
       Multi-class tasks draw ``y`` uniformly (``rho`` must be 0).
    3. ``x = mean_y + attribute_shift * (2z - 1) * e_2 + scale * N(0, I)``; binary
       means are ``-/+ separation * e_1``, multi-class means ``separation * e_y``.
    4. With ``label_noise`` > 0 each observed label is replaced by a uniformly
       drawn different class with that probability (features keep the clean label).
    5. Optional min-max normalisation to [0, 1].
    """
    rng = substream(spec.seed, "data/synth")
    n = spec.n
    z = (rng.random(n) < spec.ratio).astype(np.int64)
    if spec.n_classes == 2:
        p0, p1 = label_conditionals(spec.correlation, spec.ratio)
        p = np.where(z == 1, p1, p0)
        y = (rng.random(n) < p).astype(np.int64)
    else:
        y = rng.integers(0, spec.n_classes, size=n)
    X = class_means(spec)[y] + spec.scale * rng.standard_normal((n, spec.d))
    if spec.attribute_shift:
        X[:, 1] += spec.attribute_shift * (2 * z - 1)
    observed = y.copy()
    if spec.label_noise > 0:
        flip = rng.random(n) < spec.label_noise
        offset = rng.integers(1, spec.n_classes, size=n)
        observed[flip] = (y[flip] + offset[flip]) % spec.n_classes
    if spec.normalize:
        X = minmax_normalize(X)
    return LabeledDataset(
        X=X,
        y=observed,
        n_classes=spec.n_classes,
        z=z,
        grid=spec.grid,
        name="synthetic",
        normalized=spec.normalize,
    )


def sample_with_ratio(pool: LabeledDataset, ratio: float, size: int, rng: np.random.Generator) -> LabeledDataset:
    """Subsample ``size`` rows of ``pool`` with a ``ratio`` share of ``z == 1``.

    Draws without replacement while each group has enough rows, with replacement
    otherwise.
    """
    if pool.z is None:
        raise DataError("ratio sampling needs a sensitive attribute")
    ones = np.flatnonzero(pool.z == 1)
    zeros = np.flatnonzero(pool.z != 1)
    k1 = _round_half_up(ratio * size)
    k0 = size - k1
    if (k1 and not ones.size) or (k0 and not zeros.size):
        raise DataError("pool lacks one attribute group")
    pick1 = rng.choice(ones, size=k1, replace=k1 > ones.size) if k1 else np.zeros(0, np.int64)
    pick0 = rng.choice(zeros, size=k0, replace=k0 > zeros.size) if k0 else np.zeros(0, np.int64)
    return pool.subset(rng.permutation(np.concatenate([pick1, pick0])))


def dataset_from_arrays(X, y, z=None, n_classes: int | None = None, **kwargs) -> LabeledDataset:
    y = np.asarray(y)
    return LabeledDataset(
        X=np.asarray(X, dtype=np.float64),
        y=y,
        n_classes=int(n_classes if n_classes is not None else (y.max() + 1 if y.size else 1)),
        z=z,
        **kwargs,
    )


def corner_patch(grid: Sequence[int], size: int = 3, corner: str = "bottom_right") -> list[int]:
    """Flattened indices of a ``size x size`` patch in one corner of an ``H x W`` grid."""
    h, w = int(grid[0]), int(grid[1])
    if size < 1 or size > min(h, w):
        raise DataError(f"patch of size {size} does not fit a {h}x{w} grid")
    rows = range(h - size, h) if corner.startswith("bottom") else range(size)
    cols = range(w - size, w) if corner.endswith("right") else range(size)
    return [r * w + c for r in rows for c in cols]
