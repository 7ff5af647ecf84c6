from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Posterior:
    """Class probabilities aligned with an ordered label tuple."""

    probabilities: np.ndarray
    labels: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "labels", tuple(self.labels))

    def ranking(self) -> np.ndarray:
        """Label indices, most probable first; ties keep label order."""
        return np.argsort(-self.probabilities, kind="stable")

    def top(self, k: int) -> list:
        return [self.labels[i] for i in self.ranking()[:k]]

    @property
    def argmax(self):
        return self.labels[int(self.ranking()[0])]

    def prob(self, label) -> float:
        return float(self.probabilities[self.labels.index(label)])

    def as_dict(self) -> dict:
        return {str(k): float(v) for k, v in zip(self.labels, self.probabilities)}


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
