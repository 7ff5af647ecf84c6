"""Spectrograms, detection Fourier features, MFCCs and SNR profiles."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from .audio import MultichannelRecording, slice_window
from .errors import SizeError, SpecError

STFT_WINDOW = 128
STFT_HOP = 32
SEGMENT = 512
N_BUCKETS = 16
BUCKET_MAX_HZ = 12000.0
MFCC_WINDOW = 1024
MFCC_HOP = 256
N_MFCC = 20
N_MEL = 40
LOG_FLOOR = 1e-10
SPIKE_BAND = (1000.0, 5500.0)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    magnitudes: np.ndarray  # frames x bins
    window_length: int
    hop: int
    bin_hz: float


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    kind: str  # "fourier-detection" | "mfcc"
    channels: tuple = (0,)


@lru_cache(maxsize=None)
def hann(n: int) -> np.ndarray:
    w = get_window("hann", n)  # periodic
    w.setflags(write=False)
    return w


def frame_signal(x: np.ndarray, window_length: int, hop: int) -> np.ndarray:
    n_frames = (len(x) - window_length) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, window_length)[::hop][:n_frames]


def stft(signal, window_length=STFT_WINDOW, hop=STFT_HOP, sample_rate=48000.0) -> Spectrogram:
    """Magnitude STFT with a periodic Hann window."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or len(x) < window_length:
        raise SizeError(f"signal of length {x.shape} shorter than window {window_length}")
    frames = frame_signal(x, window_length, hop) * hann(window_length)
    mags = np.abs(rfft(frames, axis=1))
    return Spectrogram(mags, window_length, hop, sample_rate / window_length)


@lru_cache(maxsize=None)
def _bucket_index(window_length: int, sample_rate: float) -> np.ndarray:
    freqs = np.arange(window_length // 2 + 1) * sample_rate / window_length
    width = BUCKET_MAX_HZ / N_BUCKETS
    idx = np.floor(freqs / width).astype(int)
    idx[freqs >= BUCKET_MAX_HZ] = -1
    return idx


@lru_cache(maxsize=None)
def _bucket_matrix(window_length: int, sample_rate: float) -> np.ndarray:
    """``(bins, 16)`` matrix averaging rfft power bins into buckets."""
    idx = _bucket_index(window_length, sample_rate)
    m = np.zeros((len(idx), N_BUCKETS))
    for b in range(N_BUCKETS):
        sel = idx == b
        if sel.any():
            m[sel, b] = 1.0 / sel.sum()
    m.setflags(write=False)
    return m


def bucket_energies(segment, sample_rate=48000.0) -> np.ndarray:
    """Raw mean power per 750 Hz bucket for each STFT frame, shape ``(13, 16)``.

    Leading dimensions are batch dimensions: ``(..., n)`` gives ``(..., frames, 16)``.
    """
    x = np.asarray(segment, dtype=float)
    if x.ndim == 1:
        return (stft(x, sample_rate=sample_rate).magnitudes ** 2) @ _bucket_matrix(
            STFT_WINDOW, float(sample_rate))
    if x.shape[-1] < STFT_WINDOW:
        raise SizeError(f"segment shorter than window {STFT_WINDOW}")
    frames = np.lib.stride_tricks.sliding_window_view(x, STFT_WINDOW, axis=-1)[..., ::STFT_HOP, :]
    power = np.abs(rfft(frames * hann(STFT_WINDOW), axis=-1)) ** 2
    return power @ _bucket_matrix(STFT_WINDOW, float(sample_rate))


def _as_channels(segment) -> np.ndarray:
    x = np.asarray(segment, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def fourier_detection_features(segment, sample_rate=48000.0, normalize=True) -> FeatureVector:
    """Frames x buckets energy grid per channel, flattened and concatenated.

    ``segment`` is a 512-sample vector or a ``(channels, 512)`` matrix.  With
    ``normalize`` the stacked vector is divided by its maximum (if non-zero).
    """
    x = _as_channels(segment)
    if x.shape[1] != SEGMENT:
        raise SizeError(f"detection segment must be {SEGMENT} samples, got {x.shape[1]}")
    values = bucket_energies(x, sample_rate).ravel()
    if normalize:
        peak = values.max()
        if peak > 0:
            values = values / peak
    return FeatureVector(values, "fourier-detection", tuple(range(len(x))))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_fft: int, sample_rate: float, n_filters=N_MEL, fmin=0.0,
                   fmax=BUCKET_MAX_HZ) -> np.ndarray:
    """Peak-normalised triangular filters, shape ``(n_filters, n_fft // 2 + 1)``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mfcc(segment, analysis_window=MFCC_WINDOW, coeff_count=N_MFCC, hop=MFCC_HOP,
         sample_rate=48000.0, n_filters=N_MEL) -> FeatureVector:
    """MFCCs of every hop-aligned analysis window, concatenated.

    Each window: Hann, power spectrum, mel filterbank (0-12 kHz), natural log
    floored at 1e-10, orthonormal DCT-II, first ``coeff_count`` terms.
    """
    x = np.asarray(segment, dtype=float)
    if x.ndim != 1 or len(x) < analysis_window:
        raise SizeError(f"MFCC segment shorter than {analysis_window} samples")
    frames = frame_signal(x, analysis_window, hop) * hann(analysis_window)
    power = np.abs(rfft(frames, axis=1)) ** 2
    fb = mel_filterbank(analysis_window, float(sample_rate), n_filters)
    logmel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :coeff_count]
    return FeatureVector(coeffs.ravel(), "mfcc")


def extract_segments(rec: MultichannelRecording, centers, length: int) -> np.ndarray:
    """One ``length``-sample window per channel around ``centers[ch]``."""
    centers = np.broadcast_to(np.asarray(centers, dtype=int), (rec.channel_count,))
    return np.stack([slice_window(rec, ch, centers[ch], length).samples
                     for ch in range(rec.channel_count)])


def detection_fourier(rec: MultichannelRecording, centers) -> FeatureVector:
    return fourier_detection_features(extract_segments(rec, centers, SEGMENT), rec.sample_rate)


def tap_mfcc(rec: MultichannelRecording, centers, n_windows=1, hop=MFCC_HOP) -> FeatureVector:
    """MFCCs of ``n_windows`` 1024-sample windows centred on each channel's tap."""
    span = MFCC_WINDOW + (n_windows - 1) * hop
    seg = extract_segments(rec, centers, span)
    values = np.concatenate([mfcc(ch, hop=hop, sample_rate=rec.sample_rate).values
                             for ch in seg])
    return FeatureVector(values, "mfcc", tuple(range(rec.channel_count)))


def bucket_edges() -> np.ndarray:
    return np.linspace(0.0, BUCKET_MAX_HZ, N_BUCKETS + 1)


def band_buckets(band=SPIKE_BAND) -> np.ndarray:
    """Indices of the buckets that overlap ``band``."""
    e = bucket_edges()
    return np.flatnonzero((e[1:] > band[0]) & (e[:-1] < band[1]))


def mean_bucket_power(x: np.ndarray, sample_rate=48000.0) -> np.ndarray:
    """Bucket power of a 512-sample segment averaged over its 13 frames.

    Accepts ``(..., 512)`` batches and returns ``(..., 16)``.
    """
    return bucket_energies(x, sample_rate).mean(axis=-2)


def _noise_segments(regions, frames):
    for start, stop in regions:
        start, stop = max(int(start), 0), min(int(stop), frames)
        for s in range(start, stop - SEGMENT + 1, SEGMENT):
            yield s


def snr_profile(rec: MultichannelRecording, tap_offsets, noise_regions) -> np.ndarray:
    """Per-bucket SNR in dB, shape ``(channels, 16)``.

    ``tap_offsets`` is a sequence of centre frames (scalar or one per
    channel); ``noise_regions`` a sequence of ``(start, stop)`` frame ranges,
    each cut into whole 512-sample segments.
    """
    tap_offsets = list(tap_offsets)
    noise_starts = list(_noise_segments(noise_regions, rec.frames))
    if not tap_offsets or not noise_starts:
        raise SpecError("snr_profile needs at least one tap and one noise segment")
    chans = rec.channel_count
    tap_pow = np.zeros((chans, N_BUCKETS))
    for off in tap_offsets:
        tap_pow += mean_bucket_power(extract_segments(rec, off, SEGMENT), rec.sample_rate)
    tap_pow /= len(tap_offsets)
    idx = np.asarray(noise_starts)[:, None] + np.arange(SEGMENT)[None, :]
    noise_pow = mean_bucket_power(rec.samples[:, idx], rec.sample_rate).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(tap_pow / noise_pow)


def band_snr_db(profile_tap_power, profile_noise_power, band=SPIKE_BAND) -> float:
    sel = band_buckets(band)
    return float(10.0 * np.log10(np.sum(profile_tap_power[..., sel]) /
                                 np.sum(profile_noise_power[..., sel])))
