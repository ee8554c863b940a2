"""
Tests for the write-once result store and CSV exports.
"""

import numpy as np
import pytest

from falling_sphere.baseflow import continue_branch
from falling_sphere.config import Resolution, RunConfig, StepPolicy
from falling_sphere.exceptions import FingerprintMismatchError, StoreError
from falling_sphere.geometry import build_basis
from falling_sphere.store import (
    ResultStore,
    branch_from_dict,
    branch_rows,
    branch_to_dict,
    read_csv,
    write_csv,
)


@pytest.fixture
def store(small_config, tmp_path):
    return ResultStore(tmp_path / "out", small_config)


@pytest.fixture(scope="module")
def small_branch(solver):
    return continue_branch(solver, 0.0, 0.01, StepPolicy(points=3))


class TestResultStore:
    """Test cases for content-addressed records."""

    def test_put_and_get(self, store):
        """Test that a stored payload is returned unchanged."""
        digest = store.put("verify", {"passed": True, "checks": [1, 2]})
        assert len(digest) == 64
        assert store.has("verify")
        assert store.get("verify") == {"passed": True, "checks": [1, 2]}
        record = store.record("verify")
        assert record["fingerprint"] == store.fingerprint
        assert record["kind"] == "verify"

    def test_keys(self, store):
        """Test keyed records of one kind."""
        store.put("report", {"m": 1}, key="m1")
        store.put("report", {"m": 2}, key="m2")
        assert store.keys("report") == ["m1", "m2"]
        assert store.get("report", "m2") == {"m": 2}
        assert not store.has("report", "m3")

    def test_records_are_write_once(self, store):
        """Test that identical payloads share one file and new ones add a file."""
        first = store.put("scan", {"rows": [1]})
        assert store.put("scan", {"rows": [1]}) == first
        second = store.put("scan", {"rows": [2]})
        assert second != first
        files = sorted(p.stem for p in (store.root / "records" / "scan").glob("*.json"))
        assert files == sorted([first, second])
        assert store.get("scan") == {"rows": [2]}

    def test_unknown_kind(self, store):
        """Test that unknown record kinds are rejected."""
        with pytest.raises(StoreError, match="Unknown record kind"):
            store.put("notes", {})

    def test_missing_record(self, store):
        """Test loading a record that was never written."""
        with pytest.raises(StoreError, match="No stored branch record"):
            store.get("branch")

    def test_tampered_record(self, store):
        """Test that an altered record is detected by its hash."""
        digest = store.put("verify", {"passed": True})
        path = store.root / "records" / "verify" / f"{digest}.json"
        path.write_text(path.read_text(encoding="utf-8").replace("true", "false"), encoding="utf-8")
        with pytest.raises(StoreError, match="content hash"):
            store.get("verify")

    def test_corrupted_index(self, store):
        """Test that a broken index is reported."""
        store.put("verify", {"passed": True})
        store.index_path.write_text("{", encoding="utf-8")
        with pytest.raises(StoreError, match="corrupted"):
            store.get("verify")

    def test_fingerprint_mismatch(self, store, small_config):
        """Test that records from other numerics are refused with a diff."""
        store.put("verify", {"passed": True})
        other = ResultStore(store.root, small_config.replace(resolution=Resolution(3, 4)))
        with pytest.raises(FingerprintMismatchError, match="another configuration") as info:
            other.get("verify")
        assert "resolution.L: 2 != 3" in info.value.differences

    def test_output_dir_does_not_matter(self, store, small_config, tmp_path):
        """Test that bookkeeping keys keep records readable."""
        store.put("verify", {"passed": True})
        moved = ResultStore(store.root, small_config.replace(output_dir=str(tmp_path / "elsewhere")))
        assert moved.get("verify") == {"passed": True}


class TestBranchRecords:
    """Test cases for persisting base branches."""

    def test_round_trip(self, small_branch, basis0, store):
        """Test that a stored branch is rebuilt on the same basis."""
        store.put("branch", branch_to_dict(small_branch))
        loaded = branch_from_dict(store.get("branch"), basis0)
        assert len(loaded) == len(small_branch)
        np.testing.assert_array_equal(loaded.lambdas, small_branch.lambdas)
        np.testing.assert_array_equal(loaded.xi0s, small_branch.xi0s)
        for a, b in zip(loaded.points, small_branch.points):
            np.testing.assert_array_equal(a.coeffs, b.coeffs)
            assert a.iterations == b.iterations

    def test_other_basis_rejected(self, small_branch):
        """Test that a branch cannot be loaded onto another basis."""
        other = build_basis(0, 3, 4, sector="even")
        with pytest.raises(FingerprintMismatchError, match="another basis"):
            branch_from_dict(branch_to_dict(small_branch), other)

    def test_branch_rows(self, small_branch):
        """Test the exported branch columns."""
        rows = branch_rows(small_branch)
        assert rows.shape == (3, 4)
        np.testing.assert_array_equal(rows[:, 0], small_branch.lambdas)
        np.testing.assert_allclose(rows[1:, 2], rows[1:, 0] * rows[1:, 1], rtol=1e-6)


class TestCsv:
    """Test cases for fingerprinted CSV files."""

    def test_write_and_read(self, tmp_path):
        """Test that values survive with full precision."""
        rows = np.array([[0.1, 1.0 / 3.0], [np.pi, -2.5e-17]])
        path = write_csv(tmp_path / "a" / "data.csv", ["lam", "mu"], rows, "abc123", comment="plane x3=0")
        data = read_csv(path)
        assert data["fingerprint"] == "abc123"
        assert data["columns"] == ["lam", "mu"]
        np.testing.assert_array_equal(data["rows"], rows)

    def test_missing_fingerprint(self, tmp_path):
        """Test that files without the fingerprint line are rejected."""
        path = tmp_path / "plain.csv"
        path.write_text("1,2\n3,4\n", encoding="utf-8")
        with pytest.raises(StoreError, match="no fingerprint header"):
            read_csv(path)

    def test_config_fingerprint_header(self, tmp_path):
        """Test that the configuration fingerprint heads the file."""
        fingerprint = RunConfig().fingerprint()
        path = write_csv(tmp_path / "b.csv", ["x"], [[1.0]], fingerprint)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first == f"# fingerprint={fingerprint}"
