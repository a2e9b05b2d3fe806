import numpy as np
import pytest

from blobseg.errors import DimensionError, FormatError
from blobseg.tensorio import (
    read_checkpoint,
    read_int_tensor,
    read_pgm,
    read_tensor,
    tensor_to_bytes,
    write_checkpoint,
    write_int_tensor,
    write_pgm,
    write_tensor,
)


def test_roundtrip_identity(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(4,), (3, 5), (2, 3, 4), (1, 2, 3, 4)]:
        t = rng.standard_normal(shape)
        path = tmp_path / "t.bin"
        write_tensor(t, path)
        back = read_tensor(path)
        assert back.shape == t.shape
        assert np.array_equal(back, t)  # bit-identical


def test_header_layout():
    blob = tensor_to_bytes(np.array([[1.0, 2.0]]))
    assert blob[:4] == b"CSEG"
    assert blob[4] == 1  # version
    assert blob[5] == 2  # rank
    assert int.from_bytes(blob[6:10], "little") == 1
    assert int.from_bytes(blob[10:14], "little") == 2
    assert np.frombuffer(blob[14:], dtype="<f8").tolist() == [1.0, 2.0]


def test_empty_dims_rejected(tmp_path):
    with pytest.raises(DimensionError):
        write_tensor(np.float64(3.0), tmp_path / "x.bin")
    with pytest.raises(DimensionError):
        write_tensor(np.zeros((0, 3)), tmp_path / "x.bin")


def test_non_finite_rejected(tmp_path):
    with pytest.raises(DimensionError):
        write_tensor(np.array([np.inf]), tmp_path / "x.bin")


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    blob = tensor_to_bytes(np.arange(6, dtype=float).reshape(2, 3))
    path = tmp_path / "trunc.bin"
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        read_tensor(path)


def test_trailing_garbage(tmp_path):
    blob = tensor_to_bytes(np.arange(4, dtype=float))
    path = tmp_path / "trail.bin"
    path.write_bytes(blob + b"xx")
    with pytest.raises(FormatError):
        read_tensor(path)


def test_int_tensor_roundtrip(tmp_path):
    m = np.arange(12).reshape(3, 4)
    path = tmp_path / "ints.bin"
    write_int_tensor(m, path)
    assert np.array_equal(read_int_tensor(path), m)


def test_pgm_roundtrip(tmp_path):
    mask = (np.arange(20).reshape(4, 5) % 2).astype(np.uint8)
    path = tmp_path / "m.pgm"
    write_pgm(mask, path, scale_binary=True)
    assert np.array_equal(read_pgm(path, binarize=True), mask)
    labels = np.array([[0, 1, 2], [2, 1, 0]])
    write_pgm(labels, tmp_path / "l.pgm")
    assert np.array_equal(read_pgm(tmp_path / "l.pgm"), labels)


def test_pgm_header_errors(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n2 2\n255\n")
    with pytest.raises(FormatError):
        read_pgm(path)
    path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(FormatError):
        read_pgm(path)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    entries = [("a.weight", rng.standard_normal((2, 3))), ("a.bias", rng.standard_normal(3))]
    path = tmp_path / "c.ckpt"
    write_checkpoint("conv 3 3 1 1 3 2 0\n", entries, path)
    desc, back = read_checkpoint(path)
    assert desc == "conv 3 3 1 1 3 2 0\n"
    assert [n for n, _ in back] == ["a.weight", "a.bias"]
    for (_, original), (_, loaded) in zip(entries, back):
        assert np.array_equal(original, loaded)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"JUNKJUNK")
    with pytest.raises(FormatError):
        read_checkpoint(path)
