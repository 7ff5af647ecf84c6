import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asca.audio import (ArrayGeometry, MultichannelRecording, PolarDirection, expected_pair_delay,
                        load_wav, pair_delays, save_wav, slice_window)
from asca.errors import FormatError, IoError, SpecError, UnsupportedEncoding

# 0.0463 m / 343 m/s * 48 kHz, computed by hand
ADJACENT_DELAY = 6.479300291545189


def test_hexagon_symmetric():
    geo = ArrayGeometry.hexagon()
    assert geo.n_mics == 6
    np.testing.assert_allclose(geo.mic_positions.sum(axis=0), 0.0, atol=1e-15)
    d = np.linalg.norm(geo.mic_positions[0] - geo.mic_positions[1])
    assert d == pytest.approx(0.0463, rel=1e-12)


def test_adjacent_delay_along_axis():
    geo = ArrayGeometry.hexagon()
    axis = geo.mic_positions[0] - geo.mic_positions[1]
    direction = PolarDirection(math.atan2(axis[1], axis[0]))
    d = expected_pair_delay(geo, direction, 0, 1)
    assert d == pytest.approx(ADJACENT_DELAY, abs=1e-9)
    # roughly six samples between neighbouring mics
    assert abs(d - 6.48) <= 0.5


def test_zenith_source_gives_zero_delay():
    geo = ArrayGeometry.hexagon()
    up = PolarDirection(0.0, 0.0)
    for a in range(6):
        for b in range(6):
            assert expected_pair_delay(geo, up, a, b) == pytest.approx(0.0, abs=1e-12)


def test_delay_index_error():
    with pytest.raises(IndexError):
        expected_pair_delay(ArrayGeometry.hexagon(), PolarDirection(0.0), 0, 6)


def test_near_field_direction_rejected():
    with pytest.raises(SpecError):
        expected_pair_delay(ArrayGeometry.hexagon(), PolarDirection(0.0, math.pi / 2, 0.2), 0, 1)


@given(st.floats(-math.pi, math.pi), st.floats(0.0, math.pi),
       st.integers(0, 5), st.integers(0, 5))
def test_delay_antisymmetric_and_bounded(az, el, a, b):
    geo = ArrayGeometry.hexagon()
    d = PolarDirection(az, el)
    ab = expected_pair_delay(geo, d, a, b)
    assert ab == pytest.approx(-expected_pair_delay(geo, d, b, a), abs=1e-12)
    assert abs(ab) <= geo.pair_bound(a, b) + 1e-9


def test_pair_delays_matches_scalar():
    geo = ArrayGeometry.hexagon()
    az = np.linspace(-3, 3, 7)
    pairs = [(0, 1), (2, 5), (4, 3)]
    M = pair_delays(geo, az, pairs=pairs)
    for i, a in enumerate(az):
        for j, (p, q) in enumerate(pairs):
            assert M[i, j] == pytest.approx(expected_pair_delay(geo, PolarDirection(a), p, q))


@given(st.floats(-20, 20))
def test_azimuth_wrapped(theta):
    a = PolarDirection(theta).azimuth_theta
    assert -math.pi <= a < math.pi
    assert math.cos(a) == pytest.approx(math.cos(theta), abs=1e-9)


def test_elevation_bounds():
    with pytest.raises(SpecError):
        PolarDirection(0.0, 3.5)


def test_cartesian_round_trip():
    p = PolarDirection(0.7, 1.2, 0.4)
    q = PolarDirection.from_cartesian(p.cartesian())
    assert q.azimuth_theta == pytest.approx(0.7)
    assert q.elevation_phi == pytest.approx(1.2)
    assert q.range_r == pytest.approx(0.4)


@settings(max_examples=16, deadline=None)
@given(st.integers(1, 8), st.integers(0, 300))
def test_float32_round_trip_bit_exact(tmp_path_factory, channels, frames):
    x = np.random.default_rng(channels * 1000 + frames).uniform(-1, 1, (channels, frames))
    x = x.astype(np.float32).astype(np.float64)
    path = tmp_path_factory.mktemp("wav") / "a.wav"
    save_wav(MultichannelRecording(x, 48000), path)
    back = load_wav(path)
    assert back.channel_count == channels and back.frames == frames
    assert np.array_equal(back.samples, x)


def test_pcm16_round_trip_quantization(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, (6, 4800))
    save_wav(MultichannelRecording(x, 48000), tmp_path / "p.wav", encoding="pcm16")
    back = load_wav(tmp_path / "p.wav")
    assert back.channel_count == 6 and back.frames == 4800
    assert np.max(np.abs(back.samples - x)) <= 2 ** -15


def test_mono_and_sidecar(tmp_path):
    rec = MultichannelRecording(np.zeros(100), 48000, {"distance_cm": 15})
    save_wav(rec, tmp_path / "m.wav")
    back = load_wav(tmp_path / "m.wav")
    assert back.channel_count == 1
    assert back.meta == {"distance_cm": 15}


def test_zero_frame_round_trip(tmp_path):
    save_wav(MultichannelRecording(np.zeros((2, 0)), 48000), tmp_path / "z.wav")
    back = load_wav(tmp_path / "z.wav")
    assert back.frames == 0 and back.channel_count == 2


def test_truncated_header(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFF\x10\x00\x00\x00WAVEfm")
    with pytest.raises(FormatError):
        load_wav(p)


def test_unsupported_encoding(tmp_path):
    # 8-bit unsigned PCM, mono
    data = bytes(range(100))
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 100) + data
    p = tmp_path / "u8.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedEncoding):
        load_wav(p)


def test_unwritable_path(tmp_path):
    with pytest.raises(IoError):
        save_wav(MultichannelRecording(np.zeros(10)), tmp_path / "missing" / "x.wav")


def test_amplitude_clipped_to_unit_range():
    rec = MultichannelRecording(np.array([[2.0, -3.0, 0.5]]))
    assert rec.samples.tolist() == [[1.0, -1.0, 0.5]]


def test_slice_window_cases():
    rec = MultichannelRecording(np.arange(2000, dtype=float)[None, :] / 2000)
    w = slice_window(rec, 0, 1000, 512)
    assert len(w.samples) == 512 and not w.padded
    assert w.samples[0] == rec.samples[0, 1000 - 256]
    w = slice_window(rec, 0, 0, 512)
    assert w.padded and np.all(w.samples[:256] == 0) and w.samples[256] == 0.0
    assert w.samples[257] == rec.samples[0, 1]
    w = slice_window(rec, 0, 5, 1)
    assert w.samples.tolist() == [rec.samples[0, 5]]
    with pytest.raises(SpecError):
        slice_window(rec, 0, 5, 0)
