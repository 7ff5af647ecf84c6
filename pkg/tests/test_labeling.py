import numpy as np
import pytest

from asca.audio import MultichannelRecording
from asca.errors import FormatError, MissingSync, SizeError
from asca.labeling import (AlignmentResult, LabelFailure, TapLabel, auto_label, detect_sync,
                           format_touch_events, label_recording, parse_touch_events,
                           splice_gap, verify_against_internal, victim_events)
from asca.synth import linear_chirp

from conftest import make_scene

KEYS = "1234567890"


@pytest.fixture(scope="module")
def synced():
    return make_scene(KEYS, seed=4, snr_db=20.0, sync_chirp=True, sync_time=1.0)


def test_sync_offset_recovered(synced):
    _, (rec, gt) = synced
    al = detect_sync(rec)
    assert al.offset == pytest.approx(1.0, abs=0.001)
    assert al.confidence >= 0.8 and gt.sync_offset == 1.0


def test_missing_chirp():
    _, (rec, gt) = make_scene(KEYS, seed=4)
    with pytest.raises(MissingSync):
        detect_sync(rec)
    out = label_recording(rec, victim_events(gt, sync_time=0.25))
    assert out.failure is LabelFailure.MissingSync and not out.ok
    with pytest.raises(MissingSync):
        detect_sync(MultichannelRecording(np.zeros((1, 100))))


def test_quiet_chirp_under_louder_noise():
    rng = np.random.default_rng(0)
    fs = 48000
    chirp = 0.01 * linear_chirp(fs)
    x = rng.standard_normal(3 * fs) * np.sqrt(10) * np.sqrt(np.mean(chirp ** 2))
    x[fs:fs + len(chirp)] += chirp
    al = detect_sync(MultichannelRecording(x))
    assert al.offset == pytest.approx(1.0, abs=0.001)


def test_clean_scene_fully_labelled(synced):
    _, (rec, gt) = synced
    out = label_recording(rec, victim_events(gt))
    assert out.ok and out.matched_fraction == 1.0
    assert [lab.key for lab in out.labels] == [t.key for t in gt.true_taps]
    for lab, tap in zip(out.labels, gt.true_taps):
        assert abs(lab.frame - tap.arrivals[0]) <= 0.01 * rec.sample_rate


def test_spliced_gap_is_buffer_gap(synced):
    _, (rec, gt) = synced
    mid = (gt.true_taps[4].time + gt.true_taps[5].time) / 2
    out = label_recording(splice_gap(rec, mid, 0.2), victim_events(gt))
    assert out.failure is LabelFailure.BufferGap
    assert out.gap_index == 5
    assert out.gap_shift == pytest.approx(-0.2, abs=0.01)


def test_zero_db_is_too_noisy():
    _, (rec, gt) = make_scene(KEYS, seed=4, snr_db=0.0, sync_chirp=True, sync_time=1.0)
    out = label_recording(rec, victim_events(gt))
    assert out.failure is LabelFailure.TooNoisy
    assert out.matched_fraction < 0.5


def test_no_alignment_and_no_events(synced):
    _, (rec, _) = synced
    assert auto_label(rec, [(0.1, "1")], None).failure is LabelFailure.MissingSync
    out = auto_label(rec, [], AlignmentResult(1.0, 1.0))
    assert out.ok and out.labels == ()


def test_verify_against_internal(synced):
    _, (rec, gt) = synced
    labels = [(1.0, "1"), (2.0, "2"), (3.0, "3")]
    assert verify_against_internal(labels, labels) == 1.0
    assert verify_against_internal([(5.0, "1")], labels) == 0.0
    assert verify_against_internal([(1.0, "9"), (2.0, "2")], labels) == pytest.approx(1 / 3)
    assert verify_against_internal(labels, []) is None
    # internal labels come from the victim's own microphone at the true tap times
    internal = [(t.arrivals[0] / rec.sample_rate, t.key) for t in gt.true_taps]
    out = label_recording(rec, victim_events(gt))
    assert verify_against_internal(out.labels, internal, sample_rate=rec.sample_rate) >= 0.95
    assert isinstance(out.labels[0], TapLabel)


def test_splice_gap_bounds():
    rec = MultichannelRecording(np.zeros((2, 1000)), 1000.0)
    assert splice_gap(rec, 0.2, 0.3).frames == 700
    with pytest.raises(SizeError):
        splice_gap(rec, 0.9, 0.5)


def test_touch_event_parsing():
    text = "# victim log\n0.5\t1\n0.75, 2\n1.0 3  # trailing\n\n"
    ev = parse_touch_events(text)
    assert ev == [(0.5, "1"), (0.75, "2"), (1.0, "3")]
    assert parse_touch_events(format_touch_events(ev)) == ev
    with pytest.raises(FormatError):
        parse_touch_events("0.5\n")
    with pytest.raises(FormatError):
        parse_touch_events("abc 1\n")
    with pytest.raises(FormatError):
        parse_touch_events("1.0 1\n0.5 2\n")


def test_sync_within_1ms_at_0db_chirp_snr():
    fs = 48000
    chirp = linear_chirp(fs)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(2 * fs) * np.sqrt(np.mean(chirp ** 2))  # 0 dB
        start = int(rng.integers(1000, fs))
        noise[start:start + len(chirp)] += chirp
        al = detect_sync(MultichannelRecording(noise))
        assert abs(al.offset - start / fs) <= 0.001


def test_labels_come_from_events(synced):
    _, (rec, gt) = synced
    events = victim_events(gt)
    renamed = [(t, f"k{i}") for i, (t, _) in enumerate(events)]
    out = label_recording(rec, renamed[:6])
    assert len(out.labels) <= 6
    assert [lab.key for lab in out.labels] == [k for _, k in renamed[:6]]


def test_failure_is_deterministic(synced):
    _, (rec, gt) = synced
    mid = (gt.true_taps[4].time + gt.true_taps[5].time) / 2
    cut = splice_gap(rec, mid, 0.2)
    a = label_recording(cut, victim_events(gt))
    b = label_recording(cut, victim_events(gt))
    assert a == b and isinstance(a.failure, LabelFailure)
