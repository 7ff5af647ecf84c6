"""Pairwise time differences of arrival and far-field azimuth estimation.

Only direction is estimated.  Range is left out on purpose: with a 4.6 cm
array and sources tens of centimetres away the curvature of the wavefront
is too small to measure from tap audio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import ArrayGeometry, MultichannelRecording, PolarDirection, pair_delays
from .detection import band_filter
from .errors import AmbiguousDirection, NoPeak, SizeError
from .features import SEGMENT, SPIKE_BAND

PEAK_FLOOR = 0.5
GRID_STEP = math.radians(0.5)
HIST_BIN = 0.1
_MARGIN = 256  # extra samples filtered on each side to settle the band-pass


@dataclass(frozen=True)
class TdoaMeasurement:
    pair: tuple
    delay: float  # samples; positive when mic_a hears the tap first
    peak: float  # normalized correlation at the peak


def _band_segments(rec, center, channels, band):
    start = int(center) - SEGMENT // 2
    lo, hi = start - _MARGIN, start + SEGMENT + _MARGIN
    if start < 0 or start + SEGMENT > rec.frames:
        raise SizeError(f"candidate at frame {center} too close to the recording edge")
    pad_lo, pad_hi = max(0, -lo), max(0, hi - rec.frames)
    x = rec.samples[list(channels), max(lo, 0):min(hi, rec.frames)]
    x = np.pad(x, ((0, 0), (pad_lo, pad_hi)))
    y = band_filter(x, band, rec.sample_rate)
    return y[:, _MARGIN:_MARGIN + SEGMENT]


def _frame_of(candidate):
    return int(getattr(candidate, "center_frame", candidate))


def measure_tdoa(rec: MultichannelRecording, candidate, pair, band=SPIKE_BAND,
                 geometry: ArrayGeometry | None = None) -> TdoaMeasurement:
    """Delay of ``pair[1]`` relative to ``pair[0]`` around a candidate tap.

    Both channels use the same 512-sample window.  The integer correlation
    peak is refined with a parabola through its neighbours and the result is
    clamped to the pair's geometric bound.
    """
    a, b = int(pair[0]), int(pair[1])
    geometry = geometry or ArrayGeometry.hexagon(sample_rate=rec.sample_rate)
    bound = geometry.pair_bound(a, b)
    xa, xb = _band_segments(rec, _frame_of(candidate), (a, b), band)
    denom = math.sqrt(float(xa @ xa) * float(xb @ xb))
    if denom <= 0:
        raise NoPeak("silent segment")
    reach = int(math.ceil(bound)) + 1
    lags = np.arange(-reach, reach + 1)
    cc = np.empty(len(lags))
    for i, lag in enumerate(lags):
        # xb[t] ~ xa[t - lag]
        if lag >= 0:
            cc[i] = xb[lag:] @ xa[:SEGMENT - lag]
        else:
            cc[i] = xb[:SEGMENT + lag] @ xa[-lag:]
    cc /= denom
    i = int(np.argmax(cc))
    peak = float(cc[i])
    if peak < PEAK_FLOOR:
        raise NoPeak(f"correlation peak {peak:.3f} below {PEAK_FLOOR}")
    frac = 0.0
    if 0 < i < len(cc) - 1:
        den = cc[i - 1] - 2 * cc[i] + cc[i + 1]
        if den < 0:
            frac = 0.5 * (cc[i - 1] - cc[i + 1]) / den
    delay = float(np.clip(lags[i] + frac, -bound, bound))
    return TdoaMeasurement((a, b), delay, peak)


def all_pairs(n_mics: int) -> list:
    return [(a, b) for a in range(n_mics) for b in range(a + 1, n_mics)]


def measure_all(rec, candidate, pairs=None, band=SPIKE_BAND, geometry=None) -> list:
    pairs = pairs if pairs is not None else all_pairs(rec.channel_count)
    return [measure_tdoa(rec, candidate, p, band, geometry) for p in pairs]


def estimate_azimuth(measurements, geometry: ArrayGeometry, elevation=math.pi / 2):
    """Grid-search azimuth minimizing squared error to far-field pair delays.

    Returns ``(azimuth, residual)`` with azimuth in ``[-pi, pi)`` and the
    residual as the summed squared delay error (samples^2).
    """
    if len(measurements) < 3:
        raise SizeError("at least 3 pair measurements are needed")
    pairs = [m.pair for m in measurements]
    pos = geometry.mic_positions
    base = np.array([pos[a] - pos[b] for a, b in pairs])[:, :2]
    if np.linalg.matrix_rank(base, tol=1e-9) < 2:
        raise SizeError("pairs must span two independent baselines")
    measured = np.array([m.delay for m in measurements])
    if np.all(np.abs(measured) < 1e-12):
        raise AmbiguousDirection("all delays are zero; source is on the array axis")
    grid = -math.pi + GRID_STEP * np.arange(int(round(2 * math.pi / GRID_STEP)))
    model = pair_delays(geometry, grid, elevation, pairs)
    err = ((model - measured[None, :]) ** 2).sum(axis=1)
    i = int(np.argmin(err))
    return float(PolarDirection(grid[i]).azimuth_theta), float(err[i])


def angle_diff(a, b):
    """Signed smallest difference ``a - b`` wrapped into ``[-pi, pi)``."""
    return (np.asarray(a) - np.asarray(b) + math.pi) % (2 * math.pi) - math.pi


def key_bearings(key_offsets: dict, device_position: PolarDirection) -> dict:
    """Azimuth of every key as seen from the array centre."""
    origin = device_position.cartesian()
    return {k: math.atan2(origin[1] + off[1], origin[0] + off[0])
            for k, off in key_offsets.items()}


@dataclass(frozen=True)
class KeyHistogram:
    key: object
    counts: np.ndarray
    modal_center: float
    true_bearing: float | None

    @property
    def modal_mass(self) -> float:
        total = self.counts.sum()
        return float(self.counts.max() / total) if total else 0.0


def histogram_edges(bin_width=HIST_BIN):
    n = int(math.ceil(2 * math.pi / bin_width))
    return -math.pi + bin_width * np.arange(n + 1)


def doa_histogram(azimuths, truth_keys, true_bearings: dict | None = None,
                  bin_width=HIST_BIN) -> dict:
    """Per-key histogram of azimuths on ``[-pi, pi)``.

    Returns ``{key: KeyHistogram}``; keys appear in first-seen order.
    """
    if len(azimuths) != len(truth_keys):
        raise SizeError("one azimuth per truth key")
    edges = histogram_edges(bin_width)
    nb = len(edges) - 1
    out = {}
    az = np.asarray(angle_diff(np.asarray(azimuths, dtype=float), 0.0))
    for key in dict.fromkeys(truth_keys):
        sel = az[[k == key for k in truth_keys]]
        idx = np.minimum(((sel + math.pi) // bin_width).astype(int), nb - 1)
        counts = np.bincount(idx, minlength=nb)
        m = int(np.argmax(counts))
        bearing = None if true_bearings is None else true_bearings.get(key)
        out[key] = KeyHistogram(key, counts, float(edges[m] + bin_width / 2), bearing)
    return out


def bin_index(angle, bin_width=HIST_BIN) -> int:
    nb = len(histogram_edges(bin_width)) - 1
    a = float(angle_diff(angle, 0.0))
    return min(int((a + math.pi) // bin_width), nb - 1)


def histogram_report(hist: dict) -> str:
    lines = ["key\tmodal_center\ttrue_bearing\tmodal_mass\tcounts"]
    for key, h in hist.items():
        tb = "" if h.true_bearing is None else f"{h.true_bearing:.4f}"
        lines.append(f"{key}\t{h.modal_center:.4f}\t{tb}\t{h.modal_mass:.4f}\t"
                     + ",".join(str(int(c)) for c in h.counts))
    return "\n".join(lines)


def delay_features(rec: MultichannelRecording, frame, pairs=None, band=SPIKE_BAND,
                   geometry=None) -> np.ndarray:
    """Pair delays around ``frame`` as an extra feature block (0 where no peak is found)."""
    pairs = pairs if pairs is not None else all_pairs(rec.channel_count)
    out = np.zeros(len(pairs))
    for i, p in enumerate(pairs):
        try:
            out[i] = measure_tdoa(rec, frame, p, band, geometry).delay
        except (NoPeak, SizeError):
            pass
    return out
