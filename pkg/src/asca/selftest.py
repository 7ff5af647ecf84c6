"""Fast built-in oracle checks exposed through ``asca selftest``."""

from __future__ import annotations

import math

import numpy as np

from .audio import ArrayGeometry, PolarDirection, expected_pair_delay
from .classifiers import lda_posterior_batch, lda_train
from .features import STFT_HOP, STFT_WINDOW, hann, stft
from .guessing import GuessInstance, rank_pin, rank_pin_bruteforce


def _geometry(rng):
    geo = ArrayGeometry.hexagon()
    axis = math.atan2(*(geo.mic_positions[0] - geo.mic_positions[1])[1::-1])
    d = expected_pair_delay(geo, PolarDirection(axis), 0, 1)
    return abs(d - 6.48) <= 0.5, f"adjacent delay {d:.3f} samples"


def _parseval(rng):
    # a Hann window at hop N/4 sums to a constant, so total STFT energy is
    # proportional to signal energy away from the edges
    x = np.zeros(4096)
    x[512:3584] = rng.standard_normal(3072)
    spec = stft(x)
    m = spec.magnitudes
    energy = (2 * (m ** 2).sum() - (m[:, 0] ** 2).sum() - (m[:, -1] ** 2).sum()) / STFT_WINDOW
    w2 = (hann(STFT_WINDOW) ** 2).sum() / STFT_HOP
    rel = abs(energy - w2 * (x ** 2).sum()) / (w2 * (x ** 2).sum())
    return rel < 1e-6, f"relative error {rel:.2e}"


def _lda(rng):
    X = np.concatenate([rng.standard_normal((50, 3)) + 2, rng.standard_normal((50, 3)) - 2])
    y = ["a"] * 50 + ["b"] * 50
    P = lda_posterior_batch(lda_train(X, y), rng.standard_normal((200, 3)) * 4)
    err = float(np.max(np.abs(P.sum(axis=1) - 1)))
    return err < 1e-9, f"max normalization error {err:.1e}"


def _guessing(rng):
    bad = 0
    for _ in range(25):
        n = int(rng.integers(2, 7))
        length = int(rng.integers(1, min(n, 3) + 1))
        p = rng.uniform(0.05, 0.95, n)
        c = rng.dirichlet(np.ones(10), n)
        ti = tuple(sorted(rng.choice(n, length, replace=False).tolist()))
        tk = tuple(str(k) for k in rng.integers(0, 10, length))
        inst = GuessInstance(p, c, tuple(str(i) for i in range(10)), length, ti, tk)
        bad += rank_pin(inst, budget=None).rank != rank_pin_bruteforce(inst).rank
    return bad == 0, f"{bad} rank mismatches in 25 instances"


CHECKS = (("geometry", _geometry), ("stft-parseval", _parseval), ("lda-normalization", _lda),
          ("guess-rank", _guessing))


def run_selftest(seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [(name, *fn(rng)) for name, fn in CHECKS]
