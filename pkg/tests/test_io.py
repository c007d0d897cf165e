import numpy as np
import pytest

from diffscm.graph import named_graph
from diffscm.io import atomic_write, noise_column_names, read_dataset, read_noise, write_dataset, write_noise


def test_dataset_round_trip_is_exact(tmp_path):
    g = named_graph("chain", node_dims=[2, 1, 1])
    vals = np.random.default_rng(0).normal(size=(50, 4)) * 1e3
    write_dataset(tmp_path / "d.csv", vals, g)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x1.1,x1.2,x2.1,x3.1"
    np.testing.assert_array_equal(read_dataset(tmp_path / "d.csv", g), vals)
    write_noise(tmp_path / "n.csv", vals, g)
    assert noise_column_names(g) == ["u1.1", "u1.2", "u2.1", "u3.1"]
    np.testing.assert_array_equal(read_noise(tmp_path / "n.csv", g), vals)


def test_header_mismatch_and_bad_values(tmp_path):
    g = named_graph("chain")
    p = tmp_path / "d.csv"
    p.write_text("x1.1,x2.1,x9.1\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        read_dataset(p, g)
    p.write_text("x1.1,x2.1,x3.1\n1,2,nan\n")
    with pytest.raises(ValueError, match="non-finite"):
        read_dataset(p, g)
    p.write_text("x1.1,x2.1,x3.1\n1,2,abc\n")
    with pytest.raises(ValueError, match="d.csv"):
        read_dataset(p, g)
    with pytest.raises(OSError):
        read_dataset(tmp_path / "missing.csv", g)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "a.txt", "hello")
    atomic_write(tmp_path / "sub" / "a.txt", b"bye")
    assert (tmp_path / "sub" / "a.txt").read_text() == "bye"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]
