"""Line-delimited dataset manifests and flat key=value configuration files.

A manifest holds one JSON object per line with the fields, in order::

    wav, device, distance_cm, orientation, holding, entry_kind, taps, label_source

``taps`` is a list of ``[offset_samples, key]`` pairs (channel-0 frames).
Relative ``wav`` paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

from .errors import ConfigError, FormatError, IoError
from .layouts import LETTER_KEYS, PIN_KEYS

FIELD_ORDER = ("wav", "device", "distance_cm", "orientation", "holding", "entry_kind", "taps",
               "label_source")
ENTRY_KINDS = {"pin": set(PIN_KEYS), "word": set(LETTER_KEYS)}
LABEL_SOURCES = ("auto", "internal", "ground-truth")


@dataclass(frozen=True)
class ManifestEntry:
    wav: str
    device: str = "nokia5.1"
    distance_cm: float = 15.0
    orientation: str = "portrait"
    holding: str = "table"
    entry_kind: str = "pin"
    taps: tuple = ()
    label_source: str = "ground-truth"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        taps = tuple((int(f), str(k)) for f, k in self.taps)
        object.__setattr__(self, "taps", taps)
        if self.entry_kind not in ENTRY_KINDS:
            raise ConfigError(f"entry_kind must be one of {sorted(ENTRY_KINDS)}")
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"label_source must be one of {LABEL_SOURCES}")
        bad = [k for _, k in taps if k not in ENTRY_KINDS[self.entry_kind]]
        if bad:
            raise ConfigError(f"keys {bad} invalid for {self.entry_kind} entries")
        if any(f < 0 for f, _ in taps):
            raise ConfigError("tap offsets must be non-negative")

    def to_json(self) -> str:
        d = asdict(self)
        extra = d.pop("extra")
        d["taps"] = [[f, k] for f, k in self.taps]
        ordered = {k: d[k] for k in FIELD_ORDER}
        if extra:
            ordered["extra"] = extra
        return json.dumps(ordered, separators=(", ", ": "))

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        try:
            d = json.loads(line)
        except ValueError as exc:
            raise FormatError(f"bad manifest line: {exc}") from exc
        unknown = set(d) - set(FIELD_ORDER) - {"extra"}
        if unknown:
            raise FormatError(f"unknown manifest fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    root: str = "."

    def resolve(self, entry: ManifestEntry) -> str:
        return entry.wav if os.path.isabs(entry.wav) else os.path.join(self.root, entry.wav)

    def dumps(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    @classmethod
    def loads(cls, text: str, root=".") -> "DatasetManifest":
        entries = [ManifestEntry.from_json(line) for line in text.splitlines() if line.strip()]
        return cls(entries, root)

    def write(self, path) -> None:
        try:
            with open(path, "w") as fh:
                fh.write(self.dumps())
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @classmethod
    def read(cls, path, check_paths=True) -> "DatasetManifest":
        with open(path) as fh:
            m = cls.loads(fh.read(), os.path.dirname(os.path.abspath(path)))
        if check_paths:
            missing = [e.wav for e in m.entries if not os.path.exists(m.resolve(e))]
            if missing:
                raise ConfigError(f"manifest references missing files {missing}")
        return m

    def usable(self) -> list:
        """Entries with labels (recordings that failed labelling carry no taps)."""
        return [e for e in self.entries if e.taps]


def _parse_value(raw: str):
    v = raw.strip()
    low = v.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def read_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
