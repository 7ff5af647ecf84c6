"""Multichannel recordings, WAV I/O and microphone-array geometry."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, IoError, SpecError, UnsupportedEncoding

SPEED_OF_SOUND = 343.0
DEFAULT_RATE = 48000
HEXAGON_RADIUS = 0.0463
MAX_CHANNELS = 8


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Microphone positions (metres, shape ``(M, 3)``) plus rate and sound speed."""

    mic_positions: np.ndarray
    sample_rate: float = DEFAULT_RATE
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.array(self.mic_positions, dtype=float).reshape(-1, 3)
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise SpecError("sample_rate and speed_of_sound must be positive")
        if len(pos) == 0:
            raise SpecError("geometry needs at least one microphone")

    @classmethod
    def hexagon(cls, radius=HEXAGON_RADIUS, sample_rate=DEFAULT_RATE,
                speed_of_sound=SPEED_OF_SOUND) -> "ArrayGeometry":
        # mic 0 and mic 3 sit on the x-axis
        ang = np.arange(6) * (np.pi / 3)
        pos = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(6)], axis=1)
        return cls(pos, sample_rate, speed_of_sound)

    @property
    def n_mics(self) -> int:
        return len(self.mic_positions)

    def subset(self, mics) -> "ArrayGeometry":
        return ArrayGeometry(self.mic_positions[list(mics)], self.sample_rate,
                             self.speed_of_sound)

    def pair_bound(self, a: int, b: int) -> float:
        """Largest possible |delay| in samples between mics ``a`` and ``b``."""
        d = np.linalg.norm(self.mic_positions[a] - self.mic_positions[b])
        return d / self.speed_of_sound * self.sample_rate


@dataclass(frozen=True)
class PolarDirection:
    """Azimuth from +x, elevation from +z, optional range (metres)."""

    azimuth_theta: float
    elevation_phi: float = math.pi / 2
    range_r: float | None = None

    def __post_init__(self):
        # wrap azimuth into [-pi, pi)
        theta = (self.azimuth_theta + math.pi) % (2 * math.pi) - math.pi
        object.__setattr__(self, "azimuth_theta", theta)
        if not 0.0 <= self.elevation_phi <= math.pi:
            raise SpecError(f"elevation {self.elevation_phi} outside [0, pi]")
        if self.range_r is not None and self.range_r < 0:
            raise SpecError("range must be non-negative")

    def unit_vector(self) -> np.ndarray:
        s = math.sin(self.elevation_phi)
        return np.array([s * math.cos(self.azimuth_theta),
                         s * math.sin(self.azimuth_theta),
                         math.cos(self.elevation_phi)])

    def cartesian(self) -> np.ndarray:
        if self.range_r is None:
            raise SpecError("far-field direction has no position")
        return self.range_r * self.unit_vector()

    @classmethod
    def from_cartesian(cls, xyz) -> "PolarDirection":
        x, y, z = (float(v) for v in xyz)
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0:
            return cls(0.0, 0.0, 0.0)
        return cls(math.atan2(y, x), math.acos(max(-1.0, min(1.0, z / r))), r)


@dataclass(frozen=True, eq=False)
class MultichannelRecording:
    """Channel-major samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: float = DEFAULT_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise SpecError("samples must be a channels x frames matrix")
        x = np.clip(x.astype(np.float64, copy=True), -1.0, 1.0)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        if self.sample_rate <= 0:
            raise SpecError("sample_rate must be positive")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def select(self, channels) -> "MultichannelRecording":
        return MultichannelRecording(self.samples[list(channels)], self.sample_rate,
                                     dict(self.meta))


def _sidecar(path) -> str:
    return os.fspath(path) + ".json"


def _header_channels(path) -> int:
    """Channel count from the fmt chunk (scipy drops it for zero-frame files)."""
    with open(path, "rb") as fh:
        head = fh.read(4096)
    i = head.find(b"fmt ")
    if i < 0 or len(head) < i + 12:
        raise FormatError("missing fmt chunk")
    return int.from_bytes(head[i + 10:i + 12], "little")


def load_wav(path) -> MultichannelRecording:
    """Read a PCM16 or float32 RIFF WAVE file with 1-8 channels.

    Metadata is taken from ``<path>.json`` (key ``"meta"``) when that file exists.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        if "Unknown wave file format" in str(exc) or "Unsupported bit depth" in str(exc):
            raise UnsupportedEncoding(str(exc)) from exc
        raise FormatError(str(exc)) from exc
    except (EOFError, OSError) as exc:
        raise FormatError(str(exc)) from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"sample type {data.dtype} not supported")
    if x.size == 0:
        x = np.zeros((_header_channels(path), 0))
    else:
        x = x.reshape(len(x), -1).T
    if not 1 <= x.shape[0] <= MAX_CHANNELS:
        raise UnsupportedEncoding(f"{x.shape[0]} channels not supported")

    meta = {}
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            meta = json.load(fh).get("meta", {})
    return MultichannelRecording(x, float(rate), meta)


def save_wav(rec: MultichannelRecording, path, encoding: str = "float32") -> None:
    """Write ``rec`` as float32 (lossless) or pcm16; metadata goes to a sidecar."""
    if encoding == "float32":
        data = rec.samples.T.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(rec.samples.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise UnsupportedEncoding(encoding)
    if rec.sample_rate != int(rec.sample_rate):
        raise UnsupportedEncoding("WAV needs an integer sample rate")
    try:
        wavfile.write(path, int(rec.sample_rate), np.ascontiguousarray(data))
        if rec.meta:
            with open(_sidecar(path), "w") as fh:
                json.dump({"meta": rec.meta}, fh, sort_keys=True, indent=1)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def expected_pair_delay(geometry: ArrayGeometry, direction: PolarDirection,
                        mic_a: int, mic_b: int) -> float:
    """Far-field arrival delay at ``mic_b`` relative to ``mic_a``, in samples.

    Positive means the wavefront reaches ``mic_a`` first.
    """
    if direction.range_r is not None:
        raise SpecError("expected_pair_delay needs a far-field direction")
    n = geometry.n_mics
    for m in (mic_a, mic_b):
        if not -n <= m < n:
            raise IndexError(f"microphone index {m} out of range")
    pos = geometry.mic_positions
    proj = float(np.dot(pos[mic_a] - pos[mic_b], direction.unit_vector()))
    return proj / geometry.speed_of_sound * geometry.sample_rate


def pair_delays(geometry: ArrayGeometry, azimuths, elevation=math.pi / 2, pairs=()):
    """Vectorised far-field delays, shape ``(len(azimuths), len(pairs))``."""
    az = np.atleast_1d(np.asarray(azimuths, dtype=float))
    s = math.sin(elevation)
    u = np.stack([s * np.cos(az), s * np.sin(az), np.full_like(az, math.cos(elevation))], axis=1)
    pos = geometry.mic_positions
    diff = np.array([pos[a] - pos[b] for a, b in pairs]).reshape(-1, 3)
    return u @ diff.T / geometry.speed_of_sound * geometry.sample_rate


class Window(NamedTuple):
    samples: np.ndarray
    padded: bool


def slice_window(rec: MultichannelRecording, channel: int, center_frame: int,
                 length: int) -> Window:
    """``length`` samples starting at ``center_frame - length // 2``, zero-padded."""
    if length <= 0:
        raise SpecError("window length must be positive")
    start = int(center_frame) - length // 2
    stop = start + length
    x = rec.samples[channel]
    lo, hi = max(start, 0), min(stop, len(x))
    out = np.zeros(length)
    if hi > lo:
        out[lo - start:hi - start] = x[lo:hi]
    return Window(out, start < 0 or stop > len(x))
