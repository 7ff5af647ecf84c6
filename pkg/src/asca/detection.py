"""Two-stage tap detection and precision/recall scoring.

Stage one flags every short-window energy peak in the spike band that
clears ``k`` times a rolling-median noise floor; the threshold is kept low
on purpose, so many candidates are false.  Stage two assigns each candidate
a tap probability using a two-class classifier on its features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import butter, sosfiltfilt

from .audio import MultichannelRecording
from .classifiers import ConvModel, posterior_batch
from .errors import SizeError
from .features import SEGMENT, SPIKE_BAND, fourier_detection_features, extract_segments, tap_mfcc

TAP, NOT_TAP = "tap", "not-tap"
DETECTOR_LABELS = (NOT_TAP, TAP)
ENVELOPE_WINDOW = 128
ENVELOPE_HOP = 32
DEFAULT_THRESHOLD = 3.0
MIN_SEPARATION = 0.05
MATCH_TOLERANCE = 0.025
REFINE_RADIUS = 32
DETECTION_MFCC_WINDOWS = 3
MIC_SUBSETS = {1: (0,), 2: (0, 3), 6: (0, 1, 2, 3, 4, 5)}


@dataclass(frozen=True, eq=False)
class TapCandidate:
    center_frame: int
    per_channel_frames: tuple
    p_tap: float | None = None
    strength: float = 0.0  # envelope peak over noise floor
    detection_features: object = None
    classification_features: object = None
    posterior: object = None

    def time(self, sample_rate) -> float:
        return self.center_frame / sample_rate


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float | None
    recall: float | None
    true_positives: int
    predicted: int
    actual: int
    tolerance: float

    @property
    def precision_defined(self) -> bool:
        return self.precision is not None

    @property
    def recall_defined(self) -> bool:
        return self.recall is not None


@lru_cache(maxsize=None)
def _bandpass(band, sample_rate):
    return butter(4, band, btype="bandpass", fs=sample_rate, output="sos")


def band_filter(x, band, sample_rate):
    return sosfiltfilt(_bandpass(tuple(band), float(sample_rate)), x, axis=-1)


def energy_envelope(x, window=ENVELOPE_WINDOW, hop=ENVELOPE_HOP):
    """Mean power of ``window``-sample frames every ``hop`` samples, and frame centres."""
    c = np.concatenate([[0.0], np.cumsum(x * x)])
    starts = np.arange(0, len(x) - window + 1, hop)
    env = (c[starts + window] - c[starts]) / window
    return env, starts + window // 2


def _refine(filtered, center, radius=REFINE_RADIUS, half=128):
    """Per-channel lag of each channel against channel 0 around ``center``."""
    n = filtered.shape[1]
    lo, hi = center - half - radius, center + half + radius
    if lo < 0 or hi > n:
        return tuple([int(center)] * len(filtered))
    ref = filtered[0, center - half:center + half]
    out = [int(center)]
    for ch in range(1, len(filtered)):
        seg = filtered[ch, lo:hi]
        cc = np.correlate(seg, ref, mode="valid")  # lags -radius..radius
        out.append(int(center + np.argmax(cc) - radius))
    return tuple(out)


def energy_candidates(rec: MultichannelRecording, band=SPIKE_BAND,
                      threshold_factor=DEFAULT_THRESHOLD, min_separation=MIN_SEPARATION,
                      floor_seconds=1.0, refine=True) -> list:
    """Candidate taps from band-limited energy peaks on channel 0."""
    if rec.frames < SEGMENT:
        raise SizeError(f"recording needs at least {SEGMENT} frames")
    fs = rec.sample_rate
    filtered = band_filter(rec.samples, band, fs)
    env, centers = energy_envelope(filtered[0])
    size = max(3, int(floor_seconds * fs / ENVELOPE_HOP) | 1)
    floor = median_filter(env, size=size, mode="nearest")
    above = env > threshold_factor * floor
    peak = above.copy()
    peak[1:] &= env[1:] >= env[:-1]
    peak[:-1] &= env[:-1] > env[1:]
    idx = np.flatnonzero(peak)
    order = idx[np.argsort(-env[idx], kind="stable")]
    min_gap = min_separation * fs
    kept = []
    for i in order:
        c = centers[i]
        if all(abs(c - centers[j]) >= min_gap for j in kept):
            kept.append(i)
    kept.sort()
    out = []
    for i in kept:
        c = int(centers[i])
        frames = _refine(filtered, c) if refine and rec.channel_count > 1 else (c,) * rec.channel_count
        out.append(TapCandidate(c, frames, strength=float(env[i] / max(floor[i], 1e-300))))
    return out


def conv_input(rec: MultichannelRecording, frames) -> np.ndarray:
    """Log-energy detection grid ``(channels, 13, 16)`` for the conv models."""
    fv = fourier_detection_features(extract_segments(rec, frames, SEGMENT), rec.sample_rate)
    return np.log(fv.values + 1e-6).reshape(rec.channel_count, 13, 16)


def detection_features(model, rec: MultichannelRecording, candidate: TapCandidate):
    if isinstance(model, ConvModel):
        return conv_input(rec, candidate.per_channel_frames).ravel()
    return tap_mfcc(rec, candidate.per_channel_frames, n_windows=DETECTION_MFCC_WINDOWS).values


def score_candidates(detector, candidates, rec: MultichannelRecording) -> list:
    """Set ``p_tap`` on each candidate from the detector's "tap" posterior."""
    if not candidates:
        return []
    if TAP not in detector.labels:
        raise SizeError("detector must be trained on tap / not-tap")
    feats = np.stack([detection_features(detector, rec, c) for c in candidates])
    probs = posterior_batch(detector, feats)[:, list(detector.labels).index(TAP)]
    return [replace(c, p_tap=float(p), detection_features=f)
            for c, p, f in zip(candidates, probs, feats)]


def match_events(pred_times, truth_times, tolerance=MATCH_TOLERANCE):
    """Greedy one-to-one matching in time order; returns ``truth -> pred`` index map."""
    pred_order = np.argsort(np.asarray(pred_times, dtype=float), kind="stable")
    truth = np.asarray(truth_times, dtype=float)
    used = np.zeros(len(truth), dtype=bool)
    out = {}
    for i in pred_order:
        t = pred_times[i]
        best, best_d = -1, None
        for j in np.flatnonzero(~used & (np.abs(truth - t) <= tolerance)):
            d = abs(truth[j] - t)
            if best_d is None or d < best_d:
                best, best_d = j, d
        if best >= 0:
            used[best] = True
            out[int(best)] = int(i)
    return out


def _pred_time(p, sample_rate):
    if isinstance(p, TapCandidate):
        return p.center_frame / sample_rate
    return float(p)


def eval_detection(predicted, truth_offsets, tolerance=MATCH_TOLERANCE, p_threshold=0.5,
                   sample_rate=48000.0) -> DetectionMetrics:
    """Precision / recall of ``predicted`` against truth times (seconds).

    ``predicted`` holds TapCandidates (kept when ``p_tap >= p_threshold``,
    or always when unscored) or plain times in seconds.
    """
    kept = [p for p in predicted
            if not isinstance(p, TapCandidate) or p.p_tap is None or p.p_tap >= p_threshold]
    times = [_pred_time(p, sample_rate) for p in kept]
    truth = [float(t) for t in truth_offsets]
    tp = len(match_events(times, truth, tolerance))
    precision = tp / len(times) if times else None
    recall = tp / len(truth) if truth else None
    return DetectionMetrics(precision, recall, tp, len(times), len(truth), tolerance)
