"""Automatic labelling of array recordings from victim touch timestamps.

The victim device logs each touch on its own clock, whose zero is the
moment it starts playing the near-ultrasonic sync chirp.  Finding that
chirp in the array recording gives the clock offset; each touch is then
matched to an energy candidate near its mapped time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio import MultichannelRecording
from .detection import MATCH_TOLERANCE, band_filter, energy_candidates, match_events
from .errors import FormatError, MissingSync, SizeError
from .synth import CHIRP_BAND, linear_chirp

SYNC_FLOOR = 0.3
MIN_MATCHED = 0.5
MAX_GAP_SHIFT = 1.0  # largest clock jump (s) considered when looking for a gap
GAP_RECOVERY = 0.9  # fraction of events a gap explanation must account for


class LabelFailure(enum.Enum):
    BufferGap = "buffer-gap"
    MissingSync = "missing-sync"
    TooNoisy = "too-noisy"


@dataclass(frozen=True)
class AlignmentResult:
    offset: float  # array-recording time (s) of victim-clock zero
    confidence: float


@dataclass(frozen=True)
class TapLabel:
    frame: int  # channel-0 frame of the matched candidate
    key: object
    event_time: float  # victim clock


@dataclass(frozen=True)
class LabelingOutcome:
    labels: tuple
    failure: LabelFailure | None
    matched_fraction: float
    gap_index: int | None = None  # first event after a detected gap
    gap_shift: float | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def detect_sync(rec: MultichannelRecording, chirp_template=None, channel=0) -> AlignmentResult:
    """Normalized matched filter for the sync chirp in the 18-22 kHz band."""
    fs = rec.sample_rate
    template = linear_chirp(fs) if chirp_template is None else np.asarray(chirp_template, float)
    m = len(template)
    if rec.frames < m:
        raise MissingSync("recording shorter than the sync template")
    lo, hi = CHIRP_BAND
    hi = min(hi * 1.02, 0.49 * fs)
    x = band_filter(rec.samples[channel], (lo * 0.98, hi), fs)
    num = fftconvolve(x, template[::-1], mode="valid")
    c = np.concatenate([[0.0], np.cumsum(x * x)])
    energy = c[m:] - c[:-m]
    tnorm = math.sqrt(float(template @ template))
    ncc = num / (np.sqrt(np.maximum(energy, 1e-300)) * tnorm)
    # ignore windows with essentially no signal, where the ratio is unstable
    ncc[energy < 1e-12 * max(energy.max(), 1e-300)] = 0.0
    i = int(np.argmax(ncc))
    conf = float(np.clip(ncc[i], 0.0, 1.0))
    if conf < SYNC_FLOOR:
        raise MissingSync(f"sync confidence {conf:.3f} below {SYNC_FLOOR}")
    return AlignmentResult(i / fs, conf)


def _match(event_times, cand_times, offset, tolerance):
    mapped = [t + offset for t in event_times]
    return match_events(cand_times, mapped, tolerance)  # event -> candidate


def _find_gap(event_times, cand_times, offset, tolerance, base):
    """Best ``(split, shift, matched)`` explaining misses as a clock jump."""
    n = len(event_times)
    ev = np.asarray(event_times) + offset
    cands = np.asarray(cand_times)
    shifts = set()
    for t in ev:
        near = cands[np.abs(cands - t) <= MAX_GAP_SHIFT] - t
        shifts.update(np.round(near, 4).tolist())
    best = None
    for s in sorted(shifts):
        if abs(s) <= tolerance:
            continue
        moved = _match(event_times, cand_times, offset + s, tolerance)
        hit_s = np.array([i in moved for i in range(n)])
        for k in range(1, n - 1):
            matched = int(base[:k].sum() + hit_s[k:].sum())
            if base[k:].sum() > 0 and hit_s[k:].sum() <= base[k:].sum():
                continue
            if best is None or matched > best[2]:
                best = (k, s, matched)
    return best


def auto_label(array_rec: MultichannelRecording, touch_events, alignment: AlignmentResult,
               tolerance=MATCH_TOLERANCE, candidates=None) -> LabelingOutcome:
    """Match each touch ``(time, key)`` to an energy candidate near its mapped time.

    Outcomes, checked in order: every event matched (success); the misses
    are explained by a consistent clock jump part-way through (BufferGap);
    fewer than half matched (TooNoisy); otherwise the matched subset is
    returned as a partial success.
    """
    if alignment is None:
        return LabelingOutcome((), LabelFailure.MissingSync, 0.0)
    events = sorted(((float(t), k) for t, k in touch_events), key=lambda e: e[0])
    if not events:
        return LabelingOutcome((), None, 1.0)
    fs = array_rec.sample_rate
    if candidates is None:
        candidates = energy_candidates(array_rec)
    cand_times = [c.center_frame / fs for c in candidates]
    times = [t for t, _ in events]
    hits = _match(times, cand_times, alignment.offset, tolerance)
    base = np.array([i in hits for i in range(len(events))])
    frac = float(base.mean())
    labels = tuple(TapLabel(int(candidates[hits[i]].center_frame), events[i][1], events[i][0])
                   for i in range(len(events)) if i in hits)
    if base.all():
        return LabelingOutcome(labels, None, 1.0)
    if len(events) >= 3:
        gap = _find_gap(times, cand_times, alignment.offset, tolerance, base)
        if gap is not None and gap[2] >= GAP_RECOVERY * len(events) and len(events) - gap[0] >= 2:
            return LabelingOutcome(labels, LabelFailure.BufferGap, frac, gap[0], gap[1])
    if frac < MIN_MATCHED:
        return LabelingOutcome(labels, LabelFailure.TooNoisy, frac)
    return LabelingOutcome(labels, None, frac)


def label_recording(rec: MultichannelRecording, touch_events, tolerance=MATCH_TOLERANCE,
                    candidates=None) -> LabelingOutcome:
    """Sync detection followed by :func:`auto_label`; MissingSync becomes a failure."""
    try:
        alignment = detect_sync(rec)
    except MissingSync:
        return LabelingOutcome((), LabelFailure.MissingSync, 0.0)
    return auto_label(rec, touch_events, alignment, tolerance, candidates)


def verify_against_internal(array_labels, internal_labels, tolerance=MATCH_TOLERANCE,
                            sample_rate=48000.0) -> float | None:
    """Fraction of internal (trusted) labels reproduced by the array labels.

    Both inputs are ``(time_s, key)`` pairs or TapLabels (frame-based).  A
    label agrees when it lies within ``tolerance`` and carries the same key.
    """
    def norm(seq):
        out = []
        for lab in seq:
            if isinstance(lab, TapLabel):
                out.append((lab.frame / sample_rate, lab.key))
            else:
                out.append((float(lab[0]), lab[1]))
        return out

    a, trusted = norm(array_labels), norm(internal_labels)
    if not trusted:
        return None
    pairs = match_events([t for t, _ in a], [t for t, _ in trusted], tolerance)
    agree = sum(1 for j, i in pairs.items() if a[i][1] == trusted[j][1])
    return agree / len(trusted)


def parse_touch_events(text: str) -> list:
    """Parse ``timestamp key`` lines (tab, comma or space separated; ``#`` comments)."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").replace("\t", " ").split()
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'timestamp key', got {raw!r}")
        try:
            t = float(parts[0])
        except ValueError:
            raise FormatError(f"line {lineno}: bad timestamp {parts[0]!r}") from None
        out.append((t, parts[1]))
    if any(b[0] < a[0] for a, b in zip(out, out[1:])):
        raise FormatError("touch timestamps must be non-decreasing")
    return out


def format_touch_events(events) -> str:
    return "".join(f"{t:.6f}\t{k}\n" for t, k in events)


def read_touch_events(path) -> list:
    with open(path) as fh:
        return parse_touch_events(fh.read())


def splice_gap(rec: MultichannelRecording, start_s: float, length_s: float) -> MultichannelRecording:
    """Drop ``length_s`` seconds of samples at ``start_s`` (simulated buffer loss)."""
    a = int(round(start_s * rec.sample_rate))
    b = a + int(round(length_s * rec.sample_rate))
    if not 0 <= a < b <= rec.frames:
        raise SizeError("gap outside the recording")
    x = np.concatenate([rec.samples[:, :a], rec.samples[:, b:]], axis=1)
    return MultichannelRecording(x, rec.sample_rate, dict(rec.meta))


def victim_events(ground_truth, sync_time=None) -> list:
    """Touch log a victim device would record for a rendered scene."""
    zero = ground_truth.sync_offset if sync_time is None else sync_time
    zero = 0.0 if zero is None else zero
    return [(t.time - zero, t.key) for t in ground_truth.true_taps]
