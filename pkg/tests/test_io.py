import hashlib
import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sonopipe.errors import FormatError, LayoutMismatchError
from sonopipe.frames import BModeImage, RawChannelFrame
from sonopipe.io import read_header, read_mhd, read_raw, read_raw_header, write_mhd, write_raw
from sonopipe.io.rawfile import HEADER_SIZE, RawFrameWriter, iter_raw

HASH_A = hashlib.sha256(b"a").hexdigest()
HASH_B = hashlib.sha256(b"b").hexdigest()


def _image(data, spacing=0.0225, origin=None, mask=None, ts=0):
    origin = origin if origin is not None else tuple(float(i) for i in range(data.ndim))
    return BModeImage(data, spacing, origin, mask=mask, timestamp=ts)


def test_header_lines_2d(tmp_path):
    img = _image(np.zeros((768, 512), np.float32), origin=(-5.7, 0.0), ts=123)
    write_mhd(img, tmp_path / "a.mhd")
    text = (tmp_path / "a.mhd").read_text()
    assert "NDims = 2\n" in text
    assert "ElementSpacing = 0.0225 0.0225\n" in text
    assert "DimSize = 512 768\n" in text
    assert "ElementType = MET_FLOAT\n" in text
    assert "ElementDataFile = a.raw\n" in text
    h = read_header(tmp_path / "a.mhd")
    for key in ("ObjectType", "NDims", "DimSize", "ElementSpacing", "Offset", "ElementType", "ElementDataFile"):
        assert key in h
    assert h["Timestamp"] == "123"
    assert (tmp_path / "a.raw").stat().st_size == 512 * 768 * 4


def test_one_pixel_round_trip(tmp_path):
    img = _image(np.array([[7]], np.uint8), spacing=1.0)
    back = read_mhd(write_mhd(img, tmp_path / "p.mhd"))
    np.testing.assert_array_equal(back.intensities, [[7]])


def test_volume_header(tmp_path):
    img = _image(np.zeros((4, 3, 2), np.uint8), spacing=0.175)
    write_mhd(img, tmp_path / "v.mhd")
    h = read_header(tmp_path / "v.mhd")
    assert h["NDims"] == "3" and h["DimSize"] == "2 3 4"


def test_mask_sidecar(tmp_path):
    m = np.ones((3, 4), bool)
    m[0, 0] = False
    img = _image(np.ones((3, 4), np.float32), mask=m)
    p = write_mhd(img, tmp_path / "m.mhd")
    assert (tmp_path / "m_mask.mhd").exists()
    np.testing.assert_array_equal(read_mhd(p).mask, m)
    # rewriting without a mask removes the stale sidecar
    write_mhd(_image(np.ones((3, 4), np.float32)), p)
    assert not (tmp_path / "m_mask.mhd").exists()
    assert read_mhd(p).mask.all()


dtypes = st.sampled_from([np.uint8, np.int16, np.uint16, np.int32, np.float32, np.float64])


@st.composite
def images(draw):
    ndim = draw(st.sampled_from([2, 3]))
    shape = draw(hnp.array_shapes(min_dims=ndim, max_dims=ndim, min_side=1, max_side=9))
    dt = draw(dtypes)
    elements = None if np.dtype(dt).kind != "f" else st.floats(-1e6, 1e6, width=np.dtype(dt).itemsize * 8)
    data = draw(hnp.arrays(dt, shape, elements=elements))
    mask = draw(hnp.arrays(np.bool_, shape))
    spacing = draw(st.floats(1e-4, 10.0))
    origin = tuple(draw(st.floats(-100, 100)) for _ in range(ndim))
    return BModeImage(data, spacing, origin, mask=mask, timestamp=draw(st.integers(0, 2**62)))


@given(images())
@settings(max_examples=120, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_mhd_round_trip_bitwise(img):
    with tempfile.TemporaryDirectory() as d:
        back = read_mhd(write_mhd(img, Path(d) / "x.mhd"))
    assert back.intensities.dtype == img.intensities.dtype
    assert back.intensities.tobytes() == img.intensities.tobytes()
    np.testing.assert_array_equal(back.mask, img.mask)
    assert back.spacing == img.spacing and back.origin == img.origin and back.timestamp == img.timestamp


@st.composite
def raw_frames(draw):
    shape = draw(hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6))
    n = draw(st.integers(1, 4))
    fs = draw(st.floats(1e5, 1e9))
    frames = []
    for i in range(n):
        data = draw(hnp.arrays(np.int16, shape))
        frames.append(RawChannelFrame(data, fs, HASH_A, timestamp=draw(st.integers(-(2**63), 2**63 - 1))))
    return frames


@given(raw_frames())
@settings(max_examples=120, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_raw_round_trip_bitwise(frames):
    with tempfile.TemporaryDirectory() as d:
        p = write_raw(Path(d) / "f.sraw", frames)
        back = read_raw(p, HASH_A)
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.timestamp == b.timestamp and a.sample_frequency == b.sample_frequency
        assert b.layout_ref == HASH_A


def test_writers_deterministic(tmp_path):
    img = _image(np.arange(12, dtype=np.float32).reshape(3, 4))
    write_mhd(img, tmp_path / "a.mhd")
    write_mhd(img, tmp_path / "b.mhd")
    a = (tmp_path / "a.mhd").read_text().replace("a.raw", "X")
    b = (tmp_path / "b.mhd").read_text().replace("b.raw", "X")
    assert a == b and (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()
    fr = [RawChannelFrame(np.ones((2, 2, 3), np.int16), 40e6, HASH_A, 5)]
    assert write_raw(tmp_path / "1.sraw", fr).read_bytes() == write_raw(tmp_path / "2.sraw", fr).read_bytes()


def test_streaming_writer_patches_count(tmp_path):
    frames = [RawChannelFrame(np.full((1, 2, 3), i, np.int16), 40e6, HASH_A, i) for i in range(5)]
    with RawFrameWriter(tmp_path / "s.sraw") as w:
        for f in frames:
            w.write(f)
    assert read_raw_header(tmp_path / "s.sraw").frame_count == 5
    assert [f.timestamp for f in read_raw(tmp_path / "s.sraw")] == list(range(5))


def _one_raw(tmp_path):
    return write_raw(tmp_path / "r.sraw", [RawChannelFrame(np.ones((2, 3, 4), np.int16), 40e6, HASH_A)] * 2)


def test_raw_bad_magic(tmp_path):
    p = _one_raw(tmp_path)
    b = bytearray(p.read_bytes())
    b[:4] = b"XXXX"
    p.write_bytes(bytes(b))
    with pytest.raises(FormatError, match="magic") as ei:
        read_raw(p)
    assert ei.value.offset == 0


def test_raw_unknown_version(tmp_path):
    p = _one_raw(tmp_path)
    b = bytearray(p.read_bytes())
    b[4:6] = struct.pack("<H", 9)
    p.write_bytes(bytes(b))
    with pytest.raises(FormatError, match="version") as ei:
        read_raw(p)
    assert ei.value.offset == 4


def test_raw_truncated_payload(tmp_path):
    p = _one_raw(tmp_path)
    full = p.read_bytes()
    p.write_bytes(full[:-10])
    with pytest.raises(FormatError, match=f"expected {len(full)} bytes, found {len(full) - 10}"):
        read_raw(p)


def test_raw_truncated_header(tmp_path):
    p = tmp_path / "h.sraw"
    p.write_bytes(b"SUPR\x01\x00")
    with pytest.raises(FormatError, match=f"expected {HEADER_SIZE} bytes"):
        read_raw_header(p)


def test_layout_mismatch_before_any_frame(tmp_path):
    p = _one_raw(tmp_path)
    # raised when the reader is opened, not when the first frame is pulled
    with pytest.raises(LayoutMismatchError):
        iter_raw(p, HASH_B)


def test_mixed_frames_rejected(tmp_path):
    a = RawChannelFrame(np.ones((1, 2, 3), np.int16), 40e6, HASH_A)
    b = RawChannelFrame(np.ones((1, 2, 4), np.int16), 40e6, HASH_A)
    with pytest.raises(FormatError):
        write_raw(tmp_path / "x.sraw", [a, b])


def test_mhd_malformed_header_offset(tmp_path):
    p = write_mhd(_image(np.zeros((2, 2), np.float32)), tmp_path / "c.mhd")
    lines = p.read_text().splitlines(keepends=True)
    lines.insert(3, "garbage line\n")
    p.write_text("".join(lines))
    with pytest.raises(FormatError) as ei:
        read_mhd(p)
    assert ei.value.offset == sum(len(s) for s in lines[:3])


def test_mhd_payload_size_mismatch(tmp_path):
    p = write_mhd(_image(np.zeros((2, 2), np.float32)), tmp_path / "d.mhd")
    (tmp_path / "d.raw").write_bytes(b"\0" * 10)
    with pytest.raises(FormatError, match="10 bytes, expected 16"):
        read_mhd(p)


def test_mhd_missing_key(tmp_path):
    p = write_mhd(_image(np.zeros((2, 2), np.float32)), tmp_path / "e.mhd")
    p.write_text("".join(l for l in p.read_text().splitlines(True) if not l.startswith("ElementType")))
    with pytest.raises(FormatError, match="ElementType"):
        read_mhd(p)


def test_mhd_unwritable_path_has_context(tmp_path):
    with pytest.raises(OSError, match="cannot write MetaImage"):
        write_mhd(_image(np.zeros((2, 2), np.float32)), tmp_path / "missing" / "f.mhd")
