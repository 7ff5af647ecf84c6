import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.fft import rfft, rfftfreq

from asca.audio import ArrayGeometry, PolarDirection, expected_pair_delay
from asca.errors import SpecError
from asca.features import SEGMENT, band_buckets, extract_segments, mean_bucket_power
from asca.layouts import pin_pad, qwerty
from asca.synth import (MAX_TAP_SAMPLES, SPIKE_ONSET, SceneSpec, TapFingerprint, linear_chirp,
                        plate_fingerprints, render_scene, synth_spike, synth_tap)

from conftest import make_scene

FS = 48000.0


def _band_fraction(x, lo, hi):
    p = np.abs(rfft(x)) ** 2
    f = rfftfreq(len(x), 1 / FS)
    return p[(f >= lo) & (f <= hi)].sum() / p.sum()


def test_default_fingerprint_spike_in_band(rng):
    fp = TapFingerprint("5")
    assert fp.spike_band == (1000.0, 5500.0)
    assert 0.001 <= fp.spike_duration <= 0.002 and fp.tail_freq == 500.0
    for _ in range(5):
        assert _band_fraction(synth_spike(fp, rng), 1000.0, 5500.0) >= 0.9


def test_tail_free_tap_above_1k(rng):
    x = synth_tap(TapFingerprint("5", tail_duration=0.0), rng)
    assert _band_fraction(x, 1000.0, FS / 2) >= 0.999


def test_tap_shape_and_determinism():
    fp = TapFingerprint("3", mode_seed=7)
    a = synth_tap(fp, np.random.default_rng(1))
    b = synth_tap(fp, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert len(a) <= MAX_TAP_SAMPLES
    assert np.max(np.abs(a)) == pytest.approx(1.0)
    # band-limiting leaks a little pre-echo ahead of the onset
    assert (a[:SPIKE_ONSET] ** 2).sum() < 0.1 * (a ** 2).sum()
    # the tail carries the energy near 500 Hz
    assert _band_fraction(a, 300.0, 700.0) > 0.05


def test_fingerprint_validation():
    with pytest.raises(SpecError):
        TapFingerprint("1", spike_band=(5000.0, 1000.0))
    with pytest.raises(SpecError):
        TapFingerprint("1", spike_duration=0.01)


def test_zero_separation_makes_keys_identical():
    fps = plate_fingerprints(pin_pad(), separation=0.0)
    modes = {fp.modes for fp in fps.values()}
    assert len(modes) == 1
    fps = plate_fingerprints(pin_pad())
    assert len({fp.modes for fp in fps.values()}) == 10


def test_neighbouring_keys_have_similar_fingerprints():
    layout = qwerty()
    fps = plate_fingerprints(layout, separation=1.0)
    w = {k: np.array([m[1] for m in fp.modes]) for k, fp in fps.items()}
    keys = list(layout.keys)
    near, far = [], []
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            d = np.linalg.norm(w[a] - w[b])
            (near if layout.distance_mm(a, b) < 15 else far).append(d)
    assert np.mean(near) < np.mean(far)


def test_measured_tap_snr_near_target():
    spec, (rec, gt) = make_scene("12345", seed=5, snr_db=20.0)
    assert len(gt.true_taps) == 5 and not gt.decoys
    fs = rec.sample_rate
    sel = band_buckets()
    frames = [int(round(a)) for t in gt.true_taps for a in t.arrivals[:1]]
    regions = [(0, frames[0] - 3000)] + [(a + 3000, b - 3000) for a, b in zip(frames, frames[1:])]
    starts = [s for lo, hi in regions for s in range(lo, hi - SEGMENT, SEGMENT)]
    noise = np.mean([mean_bucket_power(rec.samples[:, s:s + SEGMENT])[:, sel].sum(-1)
                     for s in starts], axis=0)
    for tap in gt.true_taps:
        dist = np.linalg.norm(spec.geometry.mic_positions
                              - (spec.device_position.cartesian()
                                 + spec.key_layout[tap.key]), axis=1)
        near = int(np.argmin(dist))
        centers = [int(round(a)) + SEGMENT // 2 - SPIKE_ONSET for a in tap.arrivals]
        seg = extract_segments(rec, centers, SEGMENT)
        tap_pow = mean_bucket_power(seg)[near, sel].sum()
        snr = 10 * math.log10(tap_pow / noise[near])
        assert snr == pytest.approx(20.0, abs=1.5)
    assert fs == 48000


def test_arrivals_follow_path_length():
    spec, (rec, gt) = make_scene("159", seed=1)
    geo = spec.geometry
    for tap in gt.true_taps:
        src = spec.device_position.cartesian() + spec.key_layout[tap.key]
        for c in range(6):
            d = math.dist(src, geo.mic_positions[c])
            assert tap.arrivals[c] == pytest.approx((tap.time + d / 343.0) * FS, abs=1e-6)


def test_on_axis_arrival_difference_equals_far_field_delay():
    geo = ArrayGeometry.hexagon()
    axis = geo.mic_positions[0] - geo.mic_positions[1]
    u = axis / np.linalg.norm(axis)
    src = geo.mic_positions[0] + 0.8 * u  # on the line through mics 1 and 0
    device = PolarDirection.from_cartesian(src)
    spec = SceneSpec(geo, device, {"x": np.zeros(3)}, ((0.2, "x"),), snr_db=30.0)
    _, gt = render_scene(spec)
    a = gt.true_taps[0].arrivals
    far = expected_pair_delay(geo, PolarDirection(math.atan2(u[1], u[0])), 0, 1)
    assert a[1] - a[0] == pytest.approx(far, abs=0.1)


def test_inverse_range_amplitude():
    layout = pin_pad()

    def taps_only(range_m):
        spec, _ = make_scene("5", seed=2, snr_db=20.0, range_m=range_m, snr_ref_range=0.15,
                             clutter_rate=0.0)
        spec = replace(spec, duration=1.0)
        with_tap, gt = render_scene(spec)
        empty, _ = render_scene(replace(spec, tap_schedule=()))
        return with_tap.samples - empty.samples, spec

    x1, s1 = taps_only(0.2)
    x2, s2 = taps_only(0.4)
    for c in (0, 3):
        d1 = math.dist(s1.device_position.cartesian() + s1.key_layout["5"],
                       s1.geometry.mic_positions[c])
        d2 = math.dist(s2.device_position.cartesian() + s2.key_layout["5"],
                       s2.geometry.mic_positions[c])
        ratio = math.sqrt((x1[c] ** 2).sum() / (x2[c] ** 2).sum())
        assert ratio == pytest.approx(d2 / d1, rel=0.01)
        assert d2 / d1 == pytest.approx(2.0, rel=0.15)
    assert layout.keys


def test_decoys():
    _, (_, gt) = make_scene("12345", seed=4, decoy_rate=0.0)
    assert gt.decoys == ()
    _, (_, gt) = make_scene("12345", seed=4, decoy_rate=3.0)
    assert len(gt.decoys) >= 1
    assert len(gt.taps) == 5 + len(gt.decoys)
    assert all(t.key is None for t in gt.decoys)
    times = sorted(t.time for t in gt.taps)
    assert all(b - a >= 0.05 - 1e-9 for a, b in zip(times, times[1:]))


def test_render_is_pure():
    spec, (a, ga) = make_scene("2468", seed=9, clutter_rate=2.0, decoy_rate=1.0)
    b, gb = render_scene(spec)
    assert np.array_equal(a.samples, b.samples)
    assert ga == gb
    c, _ = render_scene(replace(spec, rng_seed=10))
    assert not np.array_equal(a.samples, c.samples)


def test_schedule_validation():
    spec, _ = make_scene("12", seed=0)
    with pytest.raises(SpecError):
        render_scene(replace(spec, tap_schedule=((0.5, "1"), (0.52, "2"))))
    with pytest.raises(SpecError):
        render_scene(replace(spec, device_position=PolarDirection(0.0, math.pi / 2, 1.5)))
    with pytest.raises(SpecError):
        render_scene(replace(spec, tap_schedule=((0.5, "x"),)))
    with pytest.raises(SpecError):
        render_scene(replace(spec, noise_kind="babble"))


def test_sync_chirp_and_noise_kinds():
    _, (rec, gt) = make_scene("12", seed=0, sync_chirp=True, sync_time=0.3)
    assert gt.sync_offset == 0.3
    _, (_, gt) = make_scene("12", seed=0)
    assert gt.sync_offset is None
    _, (rec, _) = make_scene("12", seed=0, noise_kind="white")
    assert rec.channel_count == 6
    c = linear_chirp()
    assert len(c) == 4800 and _band_fraction(c, 17500.0, 22500.0) > 0.99


def test_babble_noise_from_file(tmp_path):
    from asca.audio import MultichannelRecording, save_wav
    src = np.random.default_rng(0).standard_normal(20000) * 0.1
    save_wav(MultichannelRecording(src), tmp_path / "babble.wav")
    _, (rec, _) = make_scene("1", seed=0, noise_kind="babble",
                             noise_file=str(tmp_path / "babble.wav"))
    assert np.all(np.isfinite(rec.samples))
