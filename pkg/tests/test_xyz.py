import numpy as np
import pytest

from blendqc.lattice import FLAG_BLEND, FLAG_CORE
from blendqc.xyz import read_extended_xyz, write_extended_xyz


@pytest.fixture
def frame(tmp_path):
    rng = np.random.default_rng(0)
    pos = rng.standard_normal((7, 3))
    disp = 0.01 * rng.standard_normal((7, 3))
    beta = rng.uniform(0, 1, 7)
    flags = np.array([FLAG_CORE] * 3 + [FLAG_BLEND] * 4)
    path = tmp_path / "frame.xyz"
    write_extended_xyz(path, pos, disp, beta, flags, comment="test frame")
    return path, pos, disp, beta


def test_roundtrip(frame):
    path, pos, disp, beta = frame
    rp, rd, rb, rf = read_extended_xyz(path)
    assert np.abs(rp - pos).max() < 1e-10
    assert np.abs(rd - disp).max() < 1e-10
    assert np.abs(rb - beta).max() < 1e-10
    assert rf == ["core"] * 3 + ["blend"] * 4


def test_header_format(frame):
    path, pos, _, _ = frame
    lines = path.read_text().splitlines()
    assert lines[0] == "7"
    assert "Properties=species:S:1:pos:R:3:disp:R:3:beta:R:1:flag:S:1" in lines[1]
    assert len(lines) == 2 + 7
    assert all(len(l.split()) == 9 for l in lines[2:])


def test_defaults_fill_columns(tmp_path):
    path = tmp_path / "min.xyz"
    write_extended_xyz(path, np.zeros((2, 3)))
    _, disp, beta, flags = read_extended_xyz(path)
    assert np.all(disp == 0) and np.all(beta == 0)
    assert flags == ["unset", "unset"]


def test_length_mismatch(tmp_path):
    with pytest.raises(ValueError, match="lengths"):
        write_extended_xyz(tmp_path / "x.xyz", np.zeros((2, 3)),
                           displacements=np.zeros((3, 3)))
