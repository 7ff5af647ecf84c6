"""Small convolutional softmax classifier over (channels, frames, buckets) grids.

Two 3x3 'same' convolutions (8 then 16 maps) with ReLU and 2x2 max-pooling,
then a dense softmax layer.  Training is plain Adam on mini-batches whose
order is fixed by the seed, so a given seed reproduces parameters exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import InsufficientData, SizeError, TrainingDiverged
from .posterior import Posterior, softmax_rows

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class ConvConfig:
    seed: int = 0
    epochs: int = 30
    rate: float = 0.005
    batch_size: int = 32
    maps: tuple = (8, 16)
    weight_decay: float = 1e-4


@dataclass(frozen=True, eq=False)
class ConvModel:
    params: dict
    input_shape: tuple  # (channels, frames, buckets)
    labels: tuple
    config: ConvConfig = field(default_factory=ConvConfig)
    # per-input-channel standardisation
    input_mean: np.ndarray = None
    input_std: np.ndarray = None


def _pool(a):
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    blocks = a[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], -1)[..., 0], arg


def _unpool(g, arg, shape):
    n, c, h, w = shape
    h2, w2 = g.shape[2], g.shape[3]
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, arg[..., None], g[..., None], -1)
    blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros(shape)
    out[:, :, :2 * h2, :2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
    return out


def _forward(params, x):
    z1 = kernels.conv3_forward(x, params["w1"], params["b1"])
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = _pool(a1)
    z2 = kernels.conv3_forward(p1, params["w2"], params["b2"])
    a2 = np.maximum(z2, 0.0)
    p2, arg2 = _pool(a2)
    flat = p2.reshape(len(x), -1)
    logits = flat @ params["w3"].T + params["b3"]
    return logits, (x, z1, a1, arg1, p1, z2, a2, arg2, p2, flat)


def _backward(params, cache, glogits):
    x, z1, a1, arg1, p1, z2, a2, arg2, p2, flat = cache
    g = {"w3": glogits.T @ flat, "b3": glogits.sum(axis=0)}
    gp2 = (glogits @ params["w3"]).reshape(p2.shape)
    gz2 = _unpool(gp2, arg2, a2.shape) * (z2 > 0)
    gp1, g["w2"], g["b2"] = kernels.conv3_backward(p1, params["w2"], gz2)
    gz1 = _unpool(gp1, arg1, a1.shape) * (z1 > 0)
    _, g["w1"], g["b1"] = kernels.conv3_backward(x, params["w1"], gz1)
    return g


def loss_and_grad(params, x, y, weight_decay=0.0):
    """Mean cross-entropy (+ L2 on weights) and its gradient."""
    logits, cache = _forward(params, x)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(x)
    loss = -logp[np.arange(n), y].mean()
    glogits = np.exp(logp)
    glogits[np.arange(n), y] -= 1.0
    grads = _backward(params, cache, glogits / n)
    for name in ("w1", "w2", "w3"):
        loss += 0.5 * weight_decay * np.sum(params[name] ** 2)
        grads[name] = grads[name] + weight_decay * params[name]
    return float(loss), grads


def init_params(input_shape, n_classes, config: ConvConfig, rng):
    c, h, w = input_shape
    m1, m2 = config.maps
    flat = m2 * ((h // 2) // 2) * ((w // 2) // 2)
    return {
        "w1": rng.standard_normal((m1, c, 3, 3)) * np.sqrt(2.0 / (9 * c)),
        "b1": np.zeros(m1),
        "w2": rng.standard_normal((m2, m1, 3, 3)) * np.sqrt(2.0 / (9 * m1)),
        "b2": np.zeros(m2),
        "w3": rng.standard_normal((n_classes, flat)) * np.sqrt(1.0 / flat),
        "b3": np.zeros(n_classes),
    }


def _as_tensor(tensors, input_shape=None):
    if not isinstance(tensors, np.ndarray):
        tensors = np.stack([np.asarray(getattr(t, "values", t), dtype=float) for t in tensors])
    x = np.asarray(tensors, dtype=float)
    if input_shape is not None:
        x = x.reshape((len(x),) + tuple(input_shape))
    if x.ndim != 4:
        raise SizeError("conv input must be (n, channels, frames, buckets)")
    return x


def conv_train(tensors, labels, config: ConvConfig = ConvConfig(), input_shape=None,
               label_order=None) -> ConvModel:
    x = _as_tensor(tensors, input_shape)
    y_list = list(labels)
    if len(y_list) != len(x):
        raise SizeError("one label per input tensor required")
    present = set(y_list)
    order = tuple(label_order) if label_order is not None else tuple(sorted(present))
    if len(present) < 2:
        raise InsufficientData("conv training needs at least two classes")
    y = np.array([order.index(v) for v in y_list])

    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    xs = (x - mean[None, :, None, None]) / std[None, :, None, None]

    rng = np.random.default_rng(config.seed)
    params = init_params(x.shape[1:], len(order), config, rng)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(len(xs))
        for s in range(0, len(xs), config.batch_size):
            idx = perm[s:s + config.batch_size]
            loss, grads = loss_and_grad(params, xs[idx], y[idx], config.weight_decay)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at step {step}")
            step += 1
            for k in PARAM_NAMES:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mh = m[k] / (1 - b1 ** step)
                vh = v[k] / (1 - b2 ** step)
                params[k] = params[k] - config.rate * mh / (np.sqrt(vh) + eps)
    return ConvModel(params, tuple(x.shape[1:]), order, config, mean, std)


def conv_logits(model: ConvModel, tensors) -> np.ndarray:
    x = _as_tensor(tensors)
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise SizeError(f"expected input shape {model.input_shape}, got {x.shape[1:]}")
    xs = (x - model.input_mean[None, :, None, None]) / model.input_std[None, :, None, None]
    return _forward(model.params, xs)[0]


def conv_posterior_batch(model: ConvModel, tensors) -> np.ndarray:
    return softmax_rows(conv_logits(model, tensors))


def conv_posterior(model: ConvModel, tensor) -> Posterior:
    x = np.asarray(getattr(tensor, "values", tensor), dtype=float)
    if x.size != int(np.prod(model.input_shape)):
        raise SizeError(f"expected {np.prod(model.input_shape)} values, got {x.size}")
    p = conv_posterior_batch(model, x.reshape((1,) + tuple(model.input_shape)))[0]
    return Posterior(p, model.labels)
