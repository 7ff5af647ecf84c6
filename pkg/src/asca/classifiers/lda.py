"""Linear discriminant analysis with diagonal shrinkage of the pooled covariance."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from ..errors import DegenerateData, InsufficientData, SizeError
from .posterior import Posterior

DEFAULT_SHRINKAGE = 0.1
# smallest acceptable eigenvalue ratio of the regularised covariance
MIN_RCOND = 1e-12


@dataclass(frozen=True, eq=False)
class LdaModel:
    class_means: np.ndarray  # K x d
    shared_covariance: np.ndarray  # d x d
    priors: np.ndarray  # K
    labels: tuple
    shrinkage: float = DEFAULT_SHRINKAGE

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @cached_property
    def _discriminant(self):
        cf = cho_factor(self.shared_covariance, lower=True)
        coef = cho_solve(cf, self.class_means.T).T  # K x d
        intercept = -0.5 * np.einsum("kd,kd->k", coef, self.class_means) + np.log(self.priors)
        return coef, intercept


def _as_matrix(features) -> np.ndarray:
    rows = [getattr(f, "values", f) for f in features]
    try:
        X = np.asarray(rows, dtype=float)
    except ValueError as exc:
        raise SizeError("inconsistent feature dimensionality") from exc
    if X.ndim != 2:
        raise SizeError("inconsistent feature dimensionality")
    return X


def lda_train(features, labels, shrinkage=DEFAULT_SHRINKAGE, label_order=None) -> LdaModel:
    """Fit class means, empirical priors and a shrunk pooled covariance.

    ``features`` is an ``n x d`` array or a list of FeatureVectors.  The
    covariance is ``(1 - shrinkage) * S + shrinkage * diag(S)`` with ``S`` the
    pooled within-class covariance.
    """
    X = _as_matrix(features)
    y = list(labels)
    if len(y) != len(X):
        raise SizeError("one label per feature vector required")
    present = set(y)
    order = tuple(label_order) if label_order is not None else tuple(sorted(present))
    classes = [c for c in order if c in present]
    if len(classes) < 2:
        raise InsufficientData("LDA needs at least two classes")
    y_arr = np.array([classes.index(v) if v in classes else -1 for v in y])
    if (y_arr < 0).any():
        raise InsufficientData("label outside label_order")
    counts = np.bincount(y_arr, minlength=len(classes))
    if (counts < 2).any():
        raise InsufficientData("every class needs at least two samples")

    means = np.stack([X[y_arr == k].mean(axis=0) for k in range(len(classes))])
    centred = X - means[y_arr]
    S = centred.T @ centred / max(len(X) - len(classes), 1)
    cov = (1.0 - shrinkage) * S + shrinkage * np.diag(np.diag(S))
    cov = 0.5 * (cov + cov.T)

    eig = np.linalg.eigvalsh(cov)
    if eig[-1] <= 0 or eig[0] <= MIN_RCOND * eig[-1]:
        raise DegenerateData("regularised covariance is singular")
    try:
        cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - caught by eig test
        raise DegenerateData(str(exc)) from exc

    priors = counts / counts.sum()
    return LdaModel(means, cov, priors, tuple(classes), float(shrinkage))


def lda_log_posterior(model: LdaModel, X) -> np.ndarray:
    """Normalised log posteriors, shape ``(n, K)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise SizeError(f"expected {model.dim} features, got {X.shape[1]}")
    coef, intercept = model._discriminant
    scores = X @ coef.T + intercept
    return scores - logsumexp(scores, axis=1, keepdims=True)


def lda_posterior(model: LdaModel, feature) -> Posterior:
    x = np.asarray(getattr(feature, "values", feature), dtype=float)
    if x.ndim != 1:
        raise SizeError("lda_posterior takes a single feature vector")
    return Posterior(np.exp(lda_log_posterior(model, x[None, :])[0]), model.labels)


def lda_posterior_batch(model: LdaModel, X) -> np.ndarray:
    return np.exp(lda_log_posterior(model, X))
