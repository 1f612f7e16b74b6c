import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pilotwave.checkpoint import FORMAT_VERSION, MAGIC, CheckpointError, checkpoint, decode, encode, restore
from pilotwave.state import LabeledWavefunction, make_grid


@given(seed=st.integers(0, 2**32 - 1), labels=st.integers(1, 3), t=st.floats(-1e3, 1e3),
       boundary=st.sampled_from(["periodic", "reflecting"]))
def test_wavefunction_roundtrip_is_bit_exact(tmp_path_factory, seed, labels, t, boundary):
    g = make_grid([(-1.5, 2.0, 12), (0.0, 1.0, 9)], boundary=boundary)
    rng = np.random.default_rng(seed)
    psi = LabeledWavefunction(g, rng.normal(size=(labels,) + g.shape) + 1j * rng.normal(size=(labels,) + g.shape), t)
    path = tmp_path_factory.mktemp("ck") / "psi.pwsim"
    checkpoint(psi, path)
    back = restore(path)
    assert back.grid == psi.grid
    assert back.time == psi.time
    assert np.array_equal(back.amplitudes, psi.amplitudes)


def test_mixed_sections_roundtrip():
    sections = {
        "meta": {"a": [1, 2], "b": "x"},
        "ints": np.arange(6, dtype=np.int64).reshape(2, 3),
        "mask": np.array([1, 0, 1], dtype=np.uint8),
        "z": np.array([1 + 2j]),
        "empty": np.zeros((0, 3)),
    }
    out = decode(encode(sections))
    assert out["meta"] == sections["meta"]
    for k in ("ints", "mask", "z", "empty"):
        assert np.array_equal(out[k], sections[k]) and out[k].dtype == sections[k].dtype


def _file(tmp_path):
    g = make_grid([(0.0, 1.0, 16)])
    path = tmp_path / "s.pwsim"
    checkpoint(LabeledWavefunction(g, np.ones(16)), path)
    return path


def test_truncated_file_rejected(tmp_path):
    path = _file(tmp_path)
    data = path.read_bytes()
    for cut in (3, 20, len(data) - 1):
        path.write_bytes(data[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            restore(path)


def test_corrupted_byte_rejected(tmp_path):
    path = _file(tmp_path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        restore(path)


def test_version_and_magic_checked(tmp_path):
    path = tmp_path / "v.pwsim"
    path.write_bytes(encode({"type": "wavefunction"}, version=FORMAT_VERSION + 1))
    with pytest.raises(CheckpointError, match=f"version {FORMAT_VERSION + 1}"):
        restore(path)
    path.write_bytes(b"NOTACK" + struct.pack("<II", 1, 0) + b"\0" * 4)
    with pytest.raises(CheckpointError, match="magic"):
        restore(path)
    assert MAGIC == b"PWSIM1"


def test_write_is_atomic(tmp_path):
    path = _file(tmp_path)
    assert not list(tmp_path.glob("*.tmp"))
    with pytest.raises(CheckpointError):
        restore(tmp_path / "missing.pwsim")
    assert path.exists()
