"""Probabilistic classifiers sharing a Posterior interface."""

import numpy as np

from .conv import ConvConfig, ConvModel, conv_posterior, conv_posterior_batch, conv_train
from .io import load_model, model_from_bytes, model_to_bytes, save_model
from .lda import LdaModel, lda_posterior, lda_posterior_batch, lda_train
from .posterior import Posterior


def posterior_batch(model, X) -> np.ndarray:
    """Posterior matrix ``(n, K)`` for either model family."""
    if isinstance(model, LdaModel):
        return lda_posterior_batch(model, X)
    if isinstance(model, ConvModel):
        X = np.asarray(X, dtype=float)
        return conv_posterior_batch(model, X.reshape((len(X),) + tuple(model.input_shape)))
    raise TypeError(f"unsupported model {type(model).__name__}")


def posterior(model, x) -> Posterior:
    if isinstance(model, LdaModel):
        return lda_posterior(model, x)
    return conv_posterior(model, x)


def uniform_model(labels, dim):
    """An LDA model whose discriminants are all equal (posterior = uniform)."""
    k = len(labels)
    return LdaModel(np.zeros((k, dim)), np.eye(dim), np.full(k, 1.0 / k), tuple(labels), 0.0)


__all__ = [
    "ConvConfig", "ConvModel", "LdaModel", "Posterior", "conv_posterior",
    "conv_posterior_batch", "conv_train", "lda_posterior", "lda_posterior_batch", "lda_train",
    "load_model", "model_from_bytes", "model_to_bytes", "posterior", "posterior_batch",
    "save_model", "uniform_model",
]
