"""Hot inner loops, each with a numba version and a pure-numpy fallback.

Set ``ASCA_DISABLE_JIT=1`` to force the fallback path.  The numba path is
used whenever numba imports; ``backend()`` reports which is active.
Both implementations are always importable (``JIT`` / ``NUMPY`` namespaces)
so tests and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

SINC_HALF_WIDTH = 32

_disabled = os.environ.get("ASCA_DISABLE_JIT", "").lower() in ("1", "true", "yes", "on")
HAVE_NUMBA = numba is not None
USE_JIT = HAVE_NUMBA and not _disabled


def backend() -> str:
    return "numba" if USE_JIT else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# fractional delay (windowed sinc)


def sinc_taps(frac: float, half_width: int = SINC_HALF_WIDTH) -> np.ndarray:
    """Blackman-windowed sinc taps for offsets ``-half_width .. half_width + 1``."""
    j = np.arange(-half_width, half_width + 2, dtype=float)
    t = j - frac
    m = half_width + 1
    w = 0.42 + 0.5 * np.cos(np.pi * t / m) + 0.08 * np.cos(2 * np.pi * t / m)
    return np.sinc(t) * np.where(np.abs(t) < m, w, 0.0)


def _frac_delay_add_np(out, signal, delay, gain, half_width=SINC_HALF_WIDTH):
    base = int(np.floor(delay))
    h = sinc_taps(delay - base, half_width)
    y = np.convolve(signal, h) * gain
    start = base - half_width
    lo, hi = max(start, 0), min(start + len(y), len(out))
    if hi > lo:
        out[lo:hi] += y[lo - start:hi - start]
    return out


def _frac_delay_add_loop(out, signal, delay, gain, half_width):
    base = int(np.floor(delay))
    frac = delay - base
    m = half_width + 1
    ntap = 2 * half_width + 2
    h = np.empty(ntap)
    for q in range(ntap):
        t = (q - half_width) - frac
        if abs(t) >= m:
            h[q] = 0.0
            continue
        w = 0.42 + 0.5 * np.cos(np.pi * t / m) + 0.08 * np.cos(2 * np.pi * t / m)
        s = 1.0 if t == 0.0 else np.sin(np.pi * t) / (np.pi * t)
        h[q] = s * w
    n_out = out.shape[0]
    for k in range(signal.shape[0]):
        a = gain * signal[k]
        if a == 0.0:
            continue
        o = base + k - half_width
        for q in range(ntap):
            idx = o + q
            if 0 <= idx < n_out:
                out[idx] += a * h[q]
    return out


_frac_delay_add_nb = _njit(_frac_delay_add_loop)


def _frac_delay_add_jit(out, signal, delay, gain, half_width=SINC_HALF_WIDTH):
    return _frac_delay_add_nb(out, np.ascontiguousarray(signal, dtype=np.float64),
                              float(delay), float(gain), int(half_width))


# ---------------------------------------------------------------------------
# 3x3 'same' convolution, NCHW


def _conv3_forward_np(x, w, b):
    n, c, hh, ww = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * hh * ww, c * 9)
    y = cols @ w.reshape(f, c * 9).T + b
    return np.ascontiguousarray(y.reshape(n, hh, ww, f).transpose(0, 3, 1, 2))


def _conv3_backward_np(x, w, gy):
    n, c, hh, ww = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * hh * ww, c * 9)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(n * hh * ww, f)
    gw = (gy2.T @ cols).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3))
    gp = np.pad(gy, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gwin = np.lib.stride_tricks.sliding_window_view(gp, (3, 3), axis=(2, 3))
    gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(n * hh * ww, f * 9)
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, f * 9)
    gx = (gcols @ wf.T).reshape(n, hh, ww, c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx), gw, gb


@_njit
def _conv3_forward_nb(x, w, b):
    n, c, hh, ww = x.shape
    f = w.shape[0]
    y = np.empty((n, f, hh, ww))
    for s in range(n):
        for o in range(f):
            for r in range(hh):
                for q in range(ww):
                    acc = b[o]
                    for ch in range(c):
                        for i in range(3):
                            rr = r + i - 1
                            if rr < 0 or rr >= hh:
                                continue
                            for j in range(3):
                                qq = q + j - 1
                                if 0 <= qq < ww:
                                    acc += x[s, ch, rr, qq] * w[o, ch, i, j]
                    y[s, o, r, q] = acc
    return y


@_njit
def _conv3_backward_nb(x, w, gy):
    n, c, hh, ww = x.shape
    f = w.shape[0]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(f)
    for s in range(n):
        for o in range(f):
            for r in range(hh):
                for q in range(ww):
                    g = gy[s, o, r, q]
                    if g == 0.0:
                        continue
                    gb[o] += g
                    for ch in range(c):
                        for i in range(3):
                            rr = r + i - 1
                            if rr < 0 or rr >= hh:
                                continue
                            for j in range(3):
                                qq = q + j - 1
                                if 0 <= qq < ww:
                                    gw[o, ch, i, j] += g * x[s, ch, rr, qq]
                                    gx[s, ch, rr, qq] += g * w[o, ch, i, j]
    return gx, gw, gb


def _conv3_forward_jit(x, w, b):
    return _conv3_forward_nb(np.ascontiguousarray(x, dtype=np.float64),
                             np.ascontiguousarray(w, dtype=np.float64),
                             np.ascontiguousarray(b, dtype=np.float64))


def _conv3_backward_jit(x, w, gy):
    return _conv3_backward_nb(np.ascontiguousarray(x, dtype=np.float64),
                              np.ascontiguousarray(w, dtype=np.float64),
                              np.ascontiguousarray(gy, dtype=np.float64))


# ---------------------------------------------------------------------------
# pruned guess counting


def _count_guesses_loop(wflat, n_keys, prefix, length, thr, eps, cap, start_row, part0):
    """Count L-subsets-with-keys whose score sum is >= thr - eps.

    ``wflat`` is an ``n x K`` row-major score table whose rows are sorted by
    their maximum (descending) and whose entries within a row are sorted
    descending; ``prefix[i]`` is the sum of the first ``i`` row maxima.
    Only rows from ``start_row`` on are chosen, and sums start at ``part0``
    (this lets a caller fix the first pick and search the rest).  Stops once
    the count exceeds ``cap``.
    """
    n = len(prefix) - 1
    lim = thr - 2.0 * eps
    leaf = thr - eps
    rows = [0] * (length + 1)
    keys = [0] * (length + 1)
    part = [0.0] * (length + 1)
    count = 0
    d = 0
    rows[0] = start_row
    keys[0] = -1
    part[0] = part0
    while d >= 0:
        r = length - d
        keys[d] += 1
        found = False
        while rows[d] <= n - r:
            i = rows[d]
            if part[d] + (prefix[i + r] - prefix[i]) < lim:
                break
            k = keys[d]
            if k < n_keys:
                v = part[d] + wflat[i * n_keys + k]
                if v + (prefix[i + r] - prefix[i + 1]) >= lim:
                    found = True
                    break
            rows[d] = i + 1
            keys[d] = 0
        if not found:
            d -= 1
            continue
        v = part[d] + wflat[rows[d] * n_keys + keys[d]]
        if r == 1:
            if v >= leaf:
                count += 1
                if count > cap:
                    return count
            continue
        part[d + 1] = v
        rows[d + 1] = rows[d] + 1
        keys[d + 1] = -1
        d += 1
    return count


_count_guesses_nb = _njit(_count_guesses_loop)


def _count_guesses_np(table, prefix, length, thr, eps, cap, start_row=0, part0=0.0):
    return _count_guesses_loop(table.ravel().tolist(), table.shape[1], prefix.tolist(),
                               int(length), float(thr), float(eps), int(cap),
                               int(start_row), float(part0))


def _count_guesses_jit(table, prefix, length, thr, eps, cap, start_row=0, part0=0.0):
    return int(_count_guesses_nb(np.ascontiguousarray(table, dtype=np.float64).ravel(),
                                 table.shape[1], np.ascontiguousarray(prefix, dtype=np.float64),
                                 int(length), float(thr), float(eps), int(cap),
                                 int(start_row), float(part0)))


# ---------------------------------------------------------------------------

NUMPY = SimpleNamespace(frac_delay_add=_frac_delay_add_np, conv3_forward=_conv3_forward_np,
                        conv3_backward=_conv3_backward_np, count_guesses=_count_guesses_np)
JIT = SimpleNamespace(frac_delay_add=_frac_delay_add_jit, conv3_forward=_conv3_forward_jit,
                      conv3_backward=_conv3_backward_jit, count_guesses=_count_guesses_jit)
if not HAVE_NUMBA:  # pragma: no cover
    JIT = NUMPY

_active = JIT if USE_JIT else NUMPY
frac_delay_add = _active.frac_delay_add
conv3_forward = _active.conv3_forward
conv3_backward = _active.conv3_backward
count_guesses = _active.count_guesses
