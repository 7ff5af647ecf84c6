"""Synthetic tap scenes rendered onto a microphone array, with exact ground truth.

A tap is a 1-2 ms band-limited spike built from damped plate modes whose
weights depend on where the key sits on the screen, followed by a decaying
tone near 500 Hz.  Scenes place taps on every channel with windowed-sinc
fractional delays and 1/r gains, then add background noise, optional decoy
taps, ambient clutter bursts and a near-ultrasonic sync chirp.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.fft import irfft, rfft, rfftfreq
from scipy.fft import next_fast_len

from . import kernels
from .audio import ArrayGeometry, MultichannelRecording, PolarDirection, load_wav
from .errors import SpecError
from .features import SEGMENT, band_buckets, mean_bucket_power
from .layouts import KeyLayout, key_offsets

SPIKE_BUFFER = 512
SPIKE_ONSET = 64
MAX_TAP_SAMPLES = 4096
MIN_TAP_GAP = 0.05
CHIRP_BAND = (18000.0, 22000.0)
CHIRP_DURATION = 0.1
DEFAULT_SEPARATION = 0.5


@dataclass(frozen=True)
class TapFingerprint:
    key_id: str
    spike_band: tuple = (1000.0, 5500.0)
    spike_duration: float = 0.0015
    tail_freq: float = 500.0
    tail_duration: float = 0.02
    mode_seed: int = 0
    # (frequency Hz, weight) resonances; derived from mode_seed when empty
    modes: tuple = ()
    tail_level: float = 0.35
    phase_jitter: float = 0.35  # radians, per tap and mode

    def __post_init__(self):
        lo, hi = self.spike_band
        if not 0 < lo < hi:
            raise SpecError(f"bad spike band {self.spike_band}")
        if not 0 < self.spike_duration <= 0.005 or self.tail_duration < 0:
            raise SpecError("bad fingerprint durations")

    def resolved_modes(self):
        if self.modes:
            return self.modes
        rng = np.random.default_rng(self.mode_seed)
        lo, hi = self.spike_band
        freqs = np.sort(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 10))
        return tuple(zip(freqs.tolist(), rng.uniform(0.2, 1.0, 10).tolist()))


def _band_mask(freqs, lo, hi, edge=250.0):
    m = np.zeros_like(freqs)
    inner = (freqs >= lo + edge) & (freqs <= hi - edge)
    m[inner] = 1.0
    rise = (freqs > lo) & (freqs < lo + edge)
    m[rise] = 0.5 - 0.5 * np.cos(np.pi * (freqs[rise] - lo) / edge)
    fall = (freqs > hi - edge) & (freqs < hi)
    m[fall] = 0.5 - 0.5 * np.cos(np.pi * (hi - freqs[fall]) / edge)
    return m


def synth_spike(fp: TapFingerprint, rng, sample_rate=48000.0) -> np.ndarray:
    """512-sample spike, onset at index 64, strictly band-limited to ``spike_band``."""
    t = np.arange(SPIKE_BUFFER - SPIKE_ONSET) / sample_rate
    tau = fp.spike_duration / 4.0
    env = np.exp(-t / tau)
    x = np.zeros(SPIKE_BUFFER)
    for freq, weight in fp.resolved_modes():
        # a struck plate rings each mode in sine phase, signed by the mode shape
        amp = weight * math.exp(0.15 * rng.standard_normal())
        phase = fp.phase_jitter * rng.standard_normal()
        x[SPIKE_ONSET:] += amp * env * np.sin(2 * math.pi * freq * t + phase)
    # a little unstructured broadband impact noise
    n_imp = max(1, int(round(fp.spike_duration * sample_rate)))
    x[SPIKE_ONSET:SPIKE_ONSET + n_imp] += 0.1 * rng.standard_normal(n_imp) * env[:n_imp]
    spec = rfft(x) * _band_mask(rfftfreq(SPIKE_BUFFER, 1 / sample_rate), *fp.spike_band)
    return irfft(spec, SPIKE_BUFFER)


def synth_tap(fp: TapFingerprint, rng, sample_rate=48000.0) -> np.ndarray:
    """Mono tap waveform with peak amplitude 1; the spike onset is at index 64."""
    spike = synth_spike(fp, rng, sample_rate)
    n_tail = int(round(fp.tail_duration * sample_rate))
    length = min(max(SPIKE_BUFFER, SPIKE_ONSET + n_tail), MAX_TAP_SAMPLES)
    out = np.zeros(length)
    spike_peak = np.max(np.abs(spike))
    out[:SPIKE_BUFFER] = spike / spike_peak if spike_peak > 0 else spike
    if n_tail > 0:
        n = min(n_tail, length - SPIKE_ONSET)
        t = np.arange(n) / sample_rate
        freq = fp.tail_freq * (1.0 + 0.03 * rng.standard_normal())
        attack = 1.0 - np.exp(-t / 0.001)
        tail = attack * np.exp(-t / (fp.tail_duration / 5.0)) * np.sin(2 * math.pi * freq * t)
        out[SPIKE_ONSET:SPIKE_ONSET + n] += fp.tail_level * tail
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def plate_fingerprints(layout: KeyLayout, separation=DEFAULT_SEPARATION, device_seed=0,
                       n_modes=12, band=(1000.0, 5500.0)) -> dict:
    """Per-key fingerprints from standing-wave modes of a rectangular screen.

    Mode ``(m, n)`` is excited with signed weight ``sin(m pi x / W) sin(n pi y / H)``
    by a tap at ``(x, y)``; ``separation`` in [0, 1] blends these position-
    dependent weights with a flat response (0 makes every key identical).
    Nearby keys get similar weights, so confusions concentrate on neighbours.
    """
    rng = np.random.default_rng(device_seed)
    w, h = layout.screen_mm
    pitch = max(np.min(np.diff(np.unique(np.round(layout.positions_mm[:, 0], 3))))
                if len(layout.keys) > 1 else w, 5.0)
    max_m = max(3, int(round(w / pitch)))
    max_n = max(3, int(round(h / pitch)))
    orders = [(m, n) for m in range(1, max_m + 1) for n in range(1, max_n + 1)]
    pick = rng.choice(len(orders), size=min(n_modes, len(orders)), replace=False)
    lo, hi = band
    freqs = np.sort(rng.uniform(lo + 400.0, hi - 400.0, len(pick)))
    out = {}
    for key, (x, y) in zip(layout.keys, layout.positions_mm):
        modes = []
        for f, idx in zip(freqs, pick):
            m, n = orders[idx]
            shape = math.sin(m * math.pi * x / w) * math.sin(n * math.pi * y / h)
            modes.append((float(f), float((1 - separation) + separation * shape)))
        out[key] = TapFingerprint(key, spike_band=band, modes=tuple(modes),
                                  mode_seed=int(device_seed))
    return out


@dataclass(frozen=True, eq=False)
class SceneSpec:
    geometry: ArrayGeometry
    device_position: PolarDirection
    key_layout: dict  # key -> 3-D offset (m) from the device origin
    tap_schedule: tuple  # ((time_s, key), ...)
    fingerprints: dict = field(default_factory=dict)
    snr_db: float = 20.0
    # SNR applies at this nearest-mic range; None means at each tap's own range
    snr_ref_range: float | None = None
    noise_kind: str = "pink"
    noise_file: str | None = None
    noise_rms: float = 0.003
    decoy_rate: float = 0.0
    clutter_rate: float = 0.0
    sync_chirp: bool = False
    sync_time: float = 0.25
    sync_level: float = 0.05
    table_echo: bool = False
    duration: float | None = None
    rng_seed: int = 0

    def validate(self):
        if self.device_position.range_r is None or not 0 < self.device_position.range_r <= 1.0:
            raise SpecError("device range must be in (0, 1] m")
        times = [t for t, _ in self.tap_schedule]
        if any(b - a < MIN_TAP_GAP - 1e-12 for a, b in zip(times, times[1:])):
            raise SpecError("taps must be increasing and at least 0.05 s apart")
        if times and times[0] < 0:
            raise SpecError("negative tap time")
        for _, key in self.tap_schedule:
            if key not in self.key_layout:
                raise SpecError(f"key {key!r} not in layout")
        if self.noise_kind not in ("white", "pink", "babble"):
            raise SpecError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "babble" and not self.noise_file:
            raise SpecError("babble noise needs noise_file")
        if self.decoy_rate < 0 or self.clutter_rate < 0:
            raise SpecError("event rates must be non-negative")


@dataclass(frozen=True)
class TapTruth:
    time: float  # emission time, seconds
    key: str | None
    arrivals: tuple  # per-channel arrival of the spike onset, fractional samples
    is_decoy: bool = False


@dataclass(frozen=True)
class GroundTruth:
    taps: tuple
    sync_offset: float | None
    clutter_times: tuple = ()

    @property
    def true_taps(self):
        return tuple(t for t in self.taps if not t.is_decoy)

    @property
    def decoys(self):
        return tuple(t for t in self.taps if t.is_decoy)


def _noise(kind, shape, rng, rms, noise_file=None, sample_rate=48000.0):
    chans, n = shape
    if n == 0:
        return np.zeros(shape)
    if kind == "white":
        x = rng.standard_normal(shape)
    elif kind == "pink":
        m = next_fast_len(n, real=True)
        spec = rfft(rng.standard_normal((chans, m)), axis=1)
        f = rfftfreq(m, 1 / sample_rate)
        shaping = 1.0 / np.sqrt(np.maximum(f, 20.0))
        x = irfft(spec * shaping, m, axis=1)[:, :n]
    else:
        src = load_wav(noise_file).samples
        reps = int(np.ceil(n / max(src.shape[1], 1))) + 1
        start = int(rng.integers(0, max(src.shape[1], 1)))
        x = np.stack([np.tile(src[c % len(src)], reps)[start:start + n] for c in range(chans)])
    scale = np.sqrt(np.mean(x ** 2, axis=1, keepdims=True))
    return x / np.where(scale > 0, scale, 1.0) * rms


def linear_chirp(sample_rate=48000.0, band=CHIRP_BAND, duration=CHIRP_DURATION) -> np.ndarray:
    """Unit-amplitude linear sweep with 5 ms raised-cosine edges."""
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    f0, f1 = band
    x = np.sin(2 * math.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t ** 2))
    ramp = int(0.005 * sample_rate)
    edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    x[:ramp] *= edge
    x[-ramp:] *= edge[::-1]
    return x


def _arrivals(geometry, source, t_emit):
    d = np.linalg.norm(geometry.mic_positions - source[None, :], axis=1)
    return (t_emit + d / geometry.speed_of_sound) * geometry.sample_rate, d


def _band_energy(x, sample_rate):
    return float(np.sum(mean_bucket_power(x, sample_rate)[band_buckets()]))


def _excess(snr_db):
    """Signal-to-noise power ratio giving a measured (S + N) / N of ``snr_db``."""
    return max(10.0 ** (snr_db / 10.0) - 1.0, 0.0)


def _clutter_burst(rng, sample_rate):
    """Ambient event: either a short knock near the tap band or a longer rustle."""
    if rng.uniform() < 0.5:
        n = int(rng.uniform(0.001, 0.004) * sample_rate)
        lo = rng.uniform(700.0, 1500.0)
        hi = lo + rng.uniform(3000.0, 5500.0)
    else:
        n = int(rng.uniform(0.003, 0.04) * sample_rate)
        lo = rng.uniform(200.0, 2500.0)
        hi = lo + rng.uniform(1500.0, 7000.0)
    x = rng.standard_normal(n) * np.hanning(n) ** rng.uniform(0.3, 2.0)
    spec = rfft(x) * _band_mask(rfftfreq(n, 1 / sample_rate), lo, min(hi, 0.45 * sample_rate),
                                edge=150.0)
    y = irfft(spec, n)
    return y / max(np.max(np.abs(y)), 1e-12)


def render_scene(spec: SceneSpec):
    """Render ``spec``; returns ``(MultichannelRecording, GroundTruth)``.

    Pure function of ``spec`` (including ``rng_seed``).
    """
    spec.validate()
    geo = spec.geometry
    fs = geo.sample_rate
    times = [t for t, _ in spec.tap_schedule]
    duration = spec.duration if spec.duration is not None else (times[-1] + 0.5 if times else 1.0)
    if spec.sync_chirp:
        duration = max(duration, spec.sync_time + CHIRP_DURATION + 0.05)
    n = int(round(duration * fs))
    chans = geo.n_mics
    seq = np.random.SeedSequence(spec.rng_seed)
    noise_rng, tap_rng, decoy_rng, clutter_rng = (np.random.default_rng(s) for s in seq.spawn(4))

    noise = _noise(spec.noise_kind, (chans, n), noise_rng, spec.noise_rms, spec.noise_file, fs)
    out = noise.copy()
    # reference in-band noise power per channel, same measure as snr_profile
    usable = (n // SEGMENT) * SEGMENT
    if usable:
        segs = noise[:, :usable].reshape(chans, -1, SEGMENT)
        noise_band = mean_bucket_power(segs, fs)[..., band_buckets()].sum(axis=-1).mean(axis=1)
    else:
        noise_band = np.ones(chans)

    origin = spec.device_position.cartesian()
    fps = spec.fingerprints or {}

    def place(waveform, source, t_emit, snr_db):
        arr, dist = _arrivals(geo, source, t_emit)
        near = int(np.argmin(dist))
        seg = np.zeros(SEGMENT)
        lo = SEGMENT // 2 - SPIKE_ONSET
        take = min(len(waveform), SEGMENT - lo)
        seg[lo:lo + take] = waveform[:take]
        ref_range = spec.snr_ref_range or dist[near]
        gain_ref = math.sqrt(noise_band[near] * _excess(snr_db) / _band_energy(seg, fs))
        for c in range(chans):
            g = gain_ref * ref_range / dist[c]
            kernels.frac_delay_add(out[c], waveform, arr[c] - SPIKE_ONSET, g)
            if spec.table_echo:
                img = source.copy()
                img[2] = -2 * 0.02 - img[2]
                arr_e, dist_e = _arrivals(geo, img, t_emit)
                kernels.frac_delay_add(out[c], waveform, arr_e[c] - SPIKE_ONSET,
                                       0.3 * gain_ref * ref_range / dist_e[c])
        return tuple(float(a) for a in arr)

    entries = []
    for t, key in spec.tap_schedule:
        fp = fps.get(key) or TapFingerprint(str(key), mode_seed=zlib.crc32(str(key).encode()))
        wave = synth_tap(fp, tap_rng, fs)
        source = origin + np.asarray(spec.key_layout[key], dtype=float)
        entries.append(TapTruth(float(t), key, place(wave, source, t, spec.snr_db), False))

    if spec.decoy_rate > 0:
        taken = list(times)
        t = 0.05
        while True:
            t += decoy_rng.exponential(1.0 / spec.decoy_rate)
            if t > duration - 0.1:
                break
            jitter = decoy_rng.uniform(0.8, 1.2, 2)
            band = (1000.0 * jitter[0], max(5500.0 * jitter[1], 1000.0 * jitter[0] + 1500.0))
            seed = int(decoy_rng.integers(2 ** 31))
            if any(abs(t - u) < MIN_TAP_GAP for u in taken):
                continue
            fp = TapFingerprint("decoy", spike_band=band, mode_seed=seed)
            wave = synth_tap(fp, decoy_rng, fs)
            entries.append(TapTruth(float(t), None, place(wave, origin, t, spec.snr_db), True))
            taken.append(t)

    clutter = []
    if spec.clutter_rate > 0:
        t = 0.0
        while True:
            t += clutter_rng.exponential(1.0 / spec.clutter_rate)
            if t > duration - 0.05:
                break
            burst = _clutter_burst(clutter_rng, fs)
            ang = clutter_rng.uniform(-math.pi, math.pi)
            src = clutter_rng.uniform(1.0, 3.0) * np.array([math.cos(ang), math.sin(ang), 0.3])
            level = spec.snr_db + clutter_rng.uniform(-8.0, 3.0)
            arr, dist = _arrivals(geo, src, t)
            seg = np.zeros(SEGMENT)
            take = min(len(burst), SEGMENT)
            seg[:take] = burst[:take]
            g0 = math.sqrt(noise_band.mean() * _excess(level) / max(_band_energy(seg, fs), 1e-30))
            for c in range(chans):
                kernels.frac_delay_add(out[c], burst, arr[c], g0 * dist.min() / dist[c])
            clutter.append(float(t))

    sync = None
    if spec.sync_chirp:
        chirp = linear_chirp(fs)
        arr, dist = _arrivals(geo, origin, spec.sync_time)
        for c in range(chans):
            kernels.frac_delay_add(out[c], chirp, arr[c],
                                   spec.sync_level * dist.min() / dist[c])
        sync = float(spec.sync_time)

    entries.sort(key=lambda e: e.time)
    meta = {"distance_cm": round(float(spec.device_position.range_r) * 100, 3),
            "rng_seed": int(spec.rng_seed)}
    rec = MultichannelRecording(out, fs, meta)
    return rec, GroundTruth(tuple(entries), sync, tuple(clutter))


def scene_for_layout(layout: KeyLayout, schedule, *, geometry=None, range_m=0.15,
                     azimuth=-math.pi / 2, separation=DEFAULT_SEPARATION, device_seed=0,
                     **kwargs) -> SceneSpec:
    """Convenience constructor placing ``layout``'s screen at ``(azimuth, range_m)``."""
    geometry = geometry or ArrayGeometry.hexagon()
    pos = PolarDirection(azimuth, math.pi / 2, range_m)
    return SceneSpec(geometry=geometry, device_position=pos,
                     key_layout=key_offsets(layout, pos.azimuth_theta),
                     tap_schedule=tuple((float(t), k) for t, k in schedule),
                     fingerprints=plate_fingerprints(layout, separation, device_seed),
                     **kwargs)


def random_schedule(keys, rng, start=0.4, gap=(0.25, 0.6)):
    """Tap times for typing ``keys`` with uniformly random inter-tap gaps."""
    t = start
    out = []
    for k in keys:
        out.append((round(t, 6), k))
        t += rng.uniform(*gap)
    return out


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, rng_seed=int(seed))
