"""scikit-learn style wrappers around the training and attack routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from interbench import nn
from interbench.data import LabeledDataset


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Dense ReLU network trained with :func:`interbench.nn.train`.

    Attributes after ``fit``: ``network_``, ``history_``, ``classes_``,
    ``n_features_in_``.
    """

    def __init__(self, hidden=(32,), epochs=20, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.seed = seed

    def _train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate, optimizer=self.optimizer,
                              seed=self.seed)

    def _template(self, d: int, c: int) -> nn.Network:
        return nn.init_network([d, *self.hidden, c], seed=self.seed)

    def _encode(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need samples of at least two classes")
        self.n_features_in_ = X.shape[1]
        return X, codes

    def _dataset(self, X, codes, **extra) -> LabeledDataset:
        return LabeledDataset(X=X, y=codes, n_classes=self.classes_.size, **extra)

    def _fit_network(self, template, dataset):
        return nn.train(template, dataset, self._train_config())

    def fit(self, X, y):
        X, codes = self._encode(X, y)
        template = self._template(X.shape[1], self.classes_.size)
        self.network_, self.history_ = self._fit_network(template, self._dataset(X, codes))
        return self

    def _check(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def decision_function(self, X):
        return nn.forward(self.network_, self._check(X))

    def predict_proba(self, X):
        return nn.predict_proba(self.network_, self._check(X))

    def predict(self, X):
        X = self._check(X)
        return self.classes_[nn.predict(self.network_, X)]

    def encode_labels(self, y) -> np.ndarray:
        """Map original labels to the network's class indices."""
        check_is_fitted(self, "classes_")
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, self.classes_.size - 1)
        if not np.all(self.classes_[idx] == y):
            raise ValueError("y contains labels unseen during fit")
        return idx


class AdversarialTrainingClassifier(MLPClassifier):
    """MLP trained on PGD perturbations of every batch."""

    def __init__(self, hidden=(32,), epochs=20, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", seed=0, epsilon=0.03, pgd_steps=10, pgd_step=None):
        super().__init__(hidden, epochs, batch_size, learning_rate, optimizer, seed)
        self.epsilon = epsilon
        self.pgd_steps = pgd_steps
        self.pgd_step = pgd_step

    def _fit_network(self, template, dataset):
        from interbench.security.evasion import PgdConfig, adversarial_training

        pgd = PgdConfig(epsilon=self.epsilon, step=self.pgd_step, steps=self.pgd_steps, seed=self.seed)
        return adversarial_training(template, dataset.replace(normalized=True), self._train_config(), pgd)


class DPSGDClassifier(MLPClassifier):
    """MLP trained with DP-SGD; ``epsilon_`` holds the accountant's bound."""

    def __init__(self, hidden=(32,), epochs=20, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", seed=0, clip_norm=1.0, noise_multiplier=1.0, delta=1e-5):
        super().__init__(hidden, epochs, batch_size, learning_rate, optimizer, seed)
        self.clip_norm = clip_norm
        self.noise_multiplier = noise_multiplier
        self.delta = delta

    def _fit_network(self, template, dataset):
        from interbench.privacy.dp import DpConfig, dpsgd_train

        dp = DpConfig(clip_norm=self.clip_norm, noise_multiplier=self.noise_multiplier, delta=self.delta)
        net, self.privacy_report_ = dpsgd_train(template, dataset, self._train_config(), dp)
        self.epsilon_ = self.privacy_report_.epsilon
        return net, None


class AdversarialDebiasingClassifier(MLPClassifier):
    """MLP trained against an adversary predicting ``sensitive`` from its outputs."""

    def __init__(self, hidden=(32,), epochs=20, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", seed=0, lam=1.0, adversary_hidden=(16,), adversary_lr=3e-2):
        super().__init__(hidden, epochs, batch_size, learning_rate, optimizer, seed)
        self.lam = lam
        self.adversary_hidden = adversary_hidden
        self.adversary_lr = adversary_lr

    def fit(self, X, y, sensitive=None):
        from interbench.fairness import DebiasConfig, adversarial_debiasing_train

        if sensitive is None:
            raise ValueError("adversarial debiasing needs the sensitive attribute")
        X, codes = self._encode(X, y)
        z = np.asarray(sensitive, dtype=np.int64)
        c = self.classes_.size
        predictor = self._template(X.shape[1], c)
        adversary = nn.init_network([c, *self.adversary_hidden, 2], seed=self.seed + 1)
        cfg = DebiasConfig(lam=self.lam, train=self._train_config(), adversary_lr=self.adversary_lr)
        self.network_, self.adversary_ = adversarial_debiasing_train(
            predictor, adversary, self._dataset(X, codes, z=z), cfg, return_adversary=True)
        self.history_ = None
        return self


class PGDTransformer(TransformerMixin, BaseEstimator):
    """Replace inputs by L-inf PGD adversarial examples against a fitted classifier.

    Without ``y`` the classifier's own predictions are attacked.
    """

    def __init__(self, estimator, epsilon=0.03, step=None, steps=10, random_start=True, seed=0):
        self.estimator = estimator
        self.epsilon = epsilon
        self.step = step
        self.steps = steps
        self.random_start = random_start
        self.seed = seed

    def fit(self, X, y=None):
        check_is_fitted(self.estimator, "network_")
        self.n_features_in_ = self.estimator.n_features_in_
        return self

    def transform(self, X, y=None):
        from interbench.security.evasion import PgdConfig, pgd_perturb

        check_is_fitted(self, "n_features_in_")
        X = self.estimator._check(X)
        codes = (nn.predict(self.estimator.network_, X) if y is None
                 else self.estimator.encode_labels(y))
        cfg = PgdConfig(epsilon=self.epsilon, step=self.step, steps=self.steps,
                        random_start=self.random_start, seed=self.seed)
        return pgd_perturb(self.estimator.network_, X, codes, cfg)


class SurrogateClassifier(ClassifierMixin, BaseEstimator):
    """Extraction surrogate fit to a fitted target's logits (labels ignored)."""

    def __init__(self, target, hidden=None, epochs=50, batch_size=64, learning_rate=3e-3, seed=0):
        self.target = target
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y=None):
        from interbench.security.ownership import extract_model

        check_is_fitted(self.target, "network_")
        X = self.target._check(X)
        t = self.target.network_
        hidden = [layer.weight.shape[0] for layer in t.layers[:-1]] if self.hidden is None else list(self.hidden)
        template = nn.init_network([t.n_inputs, *hidden, t.n_outputs], seed=self.seed)
        cfg = nn.TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, seed=self.seed)
        self.network_, self.history_ = extract_model(t, template, X, cfg)
        self.classes_ = self.target.classes_
        self.n_features_in_ = t.n_inputs
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return self.classes_[nn.predict(self.network_, X)]

    def fidelity(self, X) -> float:
        """Fraction of ``X`` on which surrogate and target agree."""
        return float(np.mean(self.predict(X) == self.target.predict(X)))
