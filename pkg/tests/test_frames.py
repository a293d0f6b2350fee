"""Tests for PPM frame I/O, padding and distortion metrics."""

import math

import numpy as np
import pytest

from slimvc.errors import FormatError, ShapeError, StorageError
from slimvc.frames import (
    crop_frame,
    decode_ppm,
    encode_ppm,
    frame_paths,
    mse,
    pad_frame,
    padded_size,
    psnr,
    read_frames,
    write_frames,
)


def test_ppm_round_trip_is_byte_exact(rng):
    pixels = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float32) / 255
    data = encode_ppm(pixels)
    assert data.startswith(b"P6\n7 5\n255\n")
    decoded = decode_ppm(data)
    assert decoded.shape == (3, 5, 7) and decoded.dtype == np.float32
    assert encode_ppm(decoded) == data


def test_ppm_header_may_carry_comments():
    raster = bytes(range(12))
    frame = decode_ppm(b"P6\n# made by hand\n2 2\n255\n" + raster)
    assert frame[0, 0, 0] == 0 and frame[2, 1, 1] == pytest.approx(11 / 255)


def test_ppm_rejects_unsupported_inputs():
    with pytest.raises(FormatError, match="magic"):
        decode_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError, match="maxval"):
        decode_ppm(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError, match="raster"):
        decode_ppm(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError):
        decode_ppm(b"P6\n2")


def test_quantization_rounds_half_up():
    frame = np.full((3, 1, 1), 0.5 / 255 + 1e-9)
    assert encode_ppm(frame)[-3:] == b"\x01\x01\x01"
    assert encode_ppm(np.full((3, 1, 1), 2.0))[-1] == 255
    with pytest.raises(ShapeError):
        encode_ppm(np.zeros((1, 2, 2)))


def test_directory_round_trip_keeps_frame_order(tmp_path, rng):
    frames = [rng.integers(0, 256, size=(3, 4, 4)).astype(np.float32) / 255 for _ in range(12)]
    paths = write_frames(tmp_path / "seq", frames)
    assert [p.name for p in paths][:2] == ["frame_000000.ppm", "frame_000001.ppm"]
    (tmp_path / "seq" / "notes.txt").write_text("ignored")
    assert frame_paths(tmp_path / "seq") == paths
    for original, loaded in zip(frames, read_frames(tmp_path / "seq")):
        np.testing.assert_array_equal(original, loaded)


def test_directory_errors(tmp_path):
    with pytest.raises(StorageError):
        read_frames(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(StorageError, match="no frame"):
        read_frames(tmp_path / "empty")
    write_frames(tmp_path / "mixed", [np.zeros((3, 2, 2)), np.zeros((3, 2, 3))])
    with pytest.raises(ShapeError):
        read_frames(tmp_path / "mixed")


def test_padding_reflects_to_the_grid_and_crops_back(rng):
    frame = rng.random((3, 50, 40)).astype(np.float32)
    padded = pad_frame(frame)
    assert padded.shape == (3, 96, 48)
    assert padded_size(50) == 96 and padded_size(48) == 48
    np.testing.assert_array_equal(crop_frame(padded, 50, 40), frame)
    np.testing.assert_array_equal(padded[:, 50, :40], frame[:, 48])
    assert pad_frame(padded) is padded

    tiny = rng.random((3, 4, 4)).astype(np.float32)
    assert pad_frame(tiny).shape == (3, 48, 48)


def test_mse_and_psnr():
    a = np.zeros((3, 2, 2), dtype=np.float32)
    b = np.full((3, 2, 2), 0.01, dtype=np.float32)
    assert mse(a, b) == pytest.approx(1e-4, rel=1e-6)
    assert psnr(1e-4) == pytest.approx(40.0)
    assert math.isinf(psnr(0.0))
    with pytest.raises(ShapeError):
        mse(a, np.zeros((3, 2, 3)))
