"""Unit tests for the atomic file writers"""
import os
import sys
import numpy as np
from stress_basis.files import atomic_savez, atomic_write_text

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)


def test_atomic_write_text(tmp_path):
    path = tmp_path.joinpath("nested", "report.json")
    atomic_write_text(path, "first\n")
    atomic_write_text(path, "second\n")
    assert path.read_text(encoding="utf-8") == "second\n"
    assert sorted(p.name for p in path.parent.iterdir()) == ["report.json"]


def test_atomic_savez(tmp_path):
    path = tmp_path.joinpath("cache", "basis.npz")
    atomic_savez(path, eigenvalues=np.array([1.0, 2.5]), header=np.array("SBBASIS 1"))
    assert sorted(p.name for p in path.parent.iterdir()) == ["basis.npz"]
    with np.load(path, allow_pickle=False) as archive:
        assert str(archive["header"]) == "SBBASIS 1"
        np.testing.assert_array_equal(archive["eigenvalues"], [1.0, 2.5])
