"""On-screen key layouts for numeric pads and QWERTY keyboards."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# screen sizes (mm, long x short side) of the evaluated victim devices
SCREENS_MM = {
    "nexus9": (181.0, 136.0),
    "nokia5.1": (124.0, 62.0),
    "mate20pro": (147.0, 68.0),
}

PIN_KEYS = tuple("1234567890")
QWERTY_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")
LETTER_KEYS = tuple(sorted("".join(QWERTY_ROWS)))


@dataclass(frozen=True, eq=False)
class KeyLayout:
    """Key centres in mm, x from the left edge, y from the top edge of the screen."""

    kind: str
    keys: tuple
    positions_mm: np.ndarray
    screen_mm: tuple
    orientation: str = "portrait"

    def __post_init__(self):
        pos = np.asarray(self.positions_mm, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "positions_mm", pos)
        object.__setattr__(self, "keys", tuple(self.keys))
        if len(set(self.keys)) != len(self.keys):
            raise ConfigError("duplicate keys in layout")
        if len(pos) != len(self.keys):
            raise ConfigError("one position per key required")
        w, h = self.screen_mm
        if (pos < 0).any() or (pos[:, 0] > w).any() or (pos[:, 1] > h).any():
            raise ConfigError("key outside screen bounds")

    def index(self, key) -> int:
        return self.keys.index(key)

    def position(self, key) -> np.ndarray:
        return self.positions_mm[self.index(key)]

    def distance_mm(self, a, b) -> float:
        return float(np.linalg.norm(self.position(a) - self.position(b)))


def _screen(device: str, orientation: str):
    try:
        long_side, short_side = SCREENS_MM[device]
    except KeyError:
        raise ConfigError(f"unknown device {device!r}; known: {sorted(SCREENS_MM)}") from None
    if orientation == "portrait":
        return short_side, long_side
    if orientation == "landscape":
        return long_side, short_side
    raise ConfigError(f"orientation must be portrait or landscape, not {orientation!r}")


def pin_pad(device="nokia5.1", orientation="portrait") -> KeyLayout:
    w, h = _screen(device, orientation)
    pitch_x = min(w / 3.4, 22.0)
    pitch_y = min(h / 8.0, 14.0)
    x0 = w / 2 - pitch_x
    y0 = h - 4.6 * pitch_y
    pos = []
    for i, k in enumerate(PIN_KEYS):
        row, col = (3, 1) if k == "0" else divmod(i, 3)
        pos.append((x0 + col * pitch_x, y0 + row * pitch_y))
    return KeyLayout("pin-pad", PIN_KEYS, pos, (w, h), orientation)


def qwerty(device="nokia5.1", orientation="landscape") -> KeyLayout:
    w, h = _screen(device, orientation)
    pitch = w / 10.0
    row_h = min(h / 5.0, pitch * 1.3)
    top = h - 3.6 * row_h
    where = {}
    for r, row in enumerate(QWERTY_ROWS):
        shift = (0.5, 1.0, 2.0)[r]
        for c, ch in enumerate(row):
            where[ch] = ((c + shift - 0.5) * pitch + pitch / 2, top + r * row_h)
    pos = [where[k] for k in LETTER_KEYS]
    return KeyLayout("qwerty", LETTER_KEYS, pos, (w, h), orientation)


def single_key(key="5") -> KeyLayout:
    return KeyLayout("pin-pad", (key,), [(10.0, 10.0)], (20.0, 20.0))


def layout_by_name(kind: str, device="nokia5.1", orientation=None) -> KeyLayout:
    if kind in ("pin", "pin-pad"):
        return pin_pad(device, orientation or "portrait")
    if kind in ("word", "qwerty"):
        return qwerty(device, orientation or "landscape")
    raise ConfigError(f"unknown layout kind {kind!r}")


def key_offsets(layout: KeyLayout, device_azimuth: float) -> dict:
    """3-D offsets (m) of each key from the screen centre.

    The screen lies in the array plane with its top edge facing the array,
    which sits in direction ``device_azimuth + pi`` from the device.
    """
    up = np.array([-math.cos(device_azimuth), -math.sin(device_azimuth), 0.0])
    right = np.array([up[1], -up[0], 0.0])
    w, h = layout.screen_mm
    out = {}
    for key, (x, y) in zip(layout.keys, layout.positions_mm):
        out[key] = (right * (x - w / 2) + up * (h / 2 - y)) / 1000.0
    return out
