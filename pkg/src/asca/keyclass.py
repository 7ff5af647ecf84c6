"""Key classification of taps, top-k accuracy and confusion matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MultichannelRecording
from .classifiers import ConvModel, Posterior, posterior_batch
from .detection import conv_input
from .errors import ConfigError, SizeError
from .features import tap_mfcc


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (true, predicted)
    labels: tuple

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accuracy(self) -> float | None:
        total = int(self.counts.sum())
        return float(np.trace(self.counts)) / total if total else None

    def report(self) -> str:
        head = "true\\pred\t" + "\t".join(map(str, self.labels))
        rows = [f"{lab}\t" + "\t".join(str(int(v)) for v in row)
                for lab, row in zip(self.labels, self.counts)]
        return "\n".join([head] + rows)


def classification_features(model, rec: MultichannelRecording, frames) -> np.ndarray:
    """Feature vector for a tap at per-channel ``frames``, matching ``model``'s family."""
    if isinstance(model, ConvModel):
        return conv_input(rec, frames).ravel()
    return tap_mfcc(rec, frames, n_windows=1).values


def classify_taps(model, taps, layout) -> list:
    """One key Posterior per tap.

    ``taps`` is a feature matrix (one row per tap) or a list of
    ``(recording, per_channel_frames)`` pairs.  Taps need not be real taps;
    the answer is conditional on tap-ness.
    """
    keys = tuple(layout.keys) if hasattr(layout, "keys") else tuple(layout)
    if set(model.labels) != set(keys):
        raise ConfigError(f"model labels {model.labels} do not match layout keys {keys}")
    if len(taps) == 0:
        return []
    if len(model.labels) == 1:
        return [Posterior(np.ones(1), model.labels) for _ in range(len(taps))]
    if isinstance(taps, np.ndarray):
        X = taps
    else:
        X = np.stack([t if isinstance(t, np.ndarray) else classification_features(model, *t)
                      for t in taps])
    P = posterior_batch(model, X)
    return [Posterior(row, model.labels) for row in P]


def _check(posteriors, truth):
    if len(posteriors) != len(truth):
        raise SizeError(f"{len(posteriors)} posteriors for {len(truth)} truth labels")


def topk_accuracy(posteriors, truth, k: int) -> float | None:
    """Fraction whose true key is among the ``k`` most probable (ties by label order)."""
    _check(posteriors, truth)
    if k < 1:
        raise SizeError("k must be >= 1")
    if not posteriors:
        return None
    hits = sum(t in p.top(k) for p, t in zip(posteriors, truth))
    return hits / len(posteriors)


def topk_curve(posteriors, truth, max_k: int) -> list:
    return [topk_accuracy(posteriors, truth, k) for k in range(1, max_k + 1)]


def confusion(posteriors, truth, labels=None) -> ConfusionMatrix:
    """Tally argmax predictions against the truth."""
    _check(posteriors, truth)
    if labels is None:
        labels = posteriors[0].labels if posteriors else tuple(sorted(set(truth)))
    labels = tuple(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(posteriors, truth):
        counts[index[t], index[p.argmax]] += 1
    return ConfusionMatrix(counts, labels)


def error_distances(cm: ConfusionMatrix, layout) -> np.ndarray:
    """Keyboard distance (mm) for every misclassified tap."""
    out = []
    for i, a in enumerate(cm.labels):
        for j, b in enumerate(cm.labels):
            if i != j and cm.counts[i, j]:
                out.extend([layout.distance_mm(a, b)] * int(cm.counts[i, j]))
    return np.array(out, dtype=float)
