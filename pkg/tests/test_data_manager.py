"""
Tests for dataset, checkpoint, table and report persistence.
"""

import json

import numpy as np
import pytest

from core.data_manager import DataManager, encode_json
from core.errors import DatasetError


@pytest.fixture
def manager():
    return DataManager()


class TestJsonl:
    """Test JSON Lines datasets."""

    def test_round_trip(self, tmp_path, manager):
        """Arrays become lists and floats keep 17 significant digits."""
        path = str(tmp_path / "data" / "set.jsonl")
        records = [{"x": np.array([0.1, 1.0 / 3.0]), "label": "broken", "ok": True}, {"n": 3}]
        assert manager.save_dataset(path, records) == 2
        loaded = manager.load_dataset(path)
        assert loaded[0]["x"] == [0.1, 1.0 / 3.0]
        assert loaded[0]["ok"] is True and loaded[1]["n"] == 3

    def test_key_order_preserved(self):
        """Keys are written in insertion order."""
        assert encode_json({"b": 1, "a": [1.5, None]}) == '{"b": 1, "a": [1.5, null]}'

    def test_non_finite_rejected(self):
        """NaN cannot be serialized."""
        with pytest.raises(DatasetError):
            encode_json({"x": float("nan")})

    def test_missing_empty_and_malformed(self, tmp_path, manager):
        """Read failures are DatasetErrors."""
        with pytest.raises(DatasetError):
            manager.load_dataset(str(tmp_path / "none.jsonl"))
        empty = tmp_path / "empty.jsonl"
        empty.write_text("\n")
        with pytest.raises(DatasetError):
            manager.load_dataset(str(empty))
        broken = tmp_path / "broken.jsonl"
        broken.write_text('{"a": 1}\n{oops\n')
        with pytest.raises(DatasetError, match=":2:"):
            manager.load_dataset(str(broken))


class TestCheckpoints:
    """Test npz checkpoints with manifests."""

    def test_round_trip(self, tmp_path, manager):
        """Arrays and metadata survive a save and load."""
        path = str(tmp_path / "model.npz")
        arrays = {"lift": np.arange(6.0).reshape(2, 3), "gamma": np.asarray(0.5)}
        manager.save_checkpoint(path, arrays, {"seed": 9})
        checkpoint = manager.load_checkpoint(path)
        np.testing.assert_array_equal(checkpoint.arrays["lift"], arrays["lift"])
        assert float(checkpoint.arrays["gamma"]) == 0.5
        assert checkpoint.manifest["seed"] == 9
        assert checkpoint.manifest["shapes"]["lift"] == [2, 3]

    def test_missing(self, tmp_path, manager):
        """A checkpoint without its manifest is not found."""
        with pytest.raises(DatasetError):
            manager.load_checkpoint(str(tmp_path / "absent.npz"))

    def test_shape_mismatch(self, tmp_path, manager):
        """The manifest shapes are enforced."""
        path = str(tmp_path / "model.npz")
        manager.save_checkpoint(path, {"w": np.zeros(3)}, {})
        manifest_path = path + ".manifest.json"
        with open(manifest_path) as f:
            manifest = json.load(f)
        manifest["shapes"]["w"] = [4]
        with open(manifest_path, "w") as f:
            json.dump(manifest, f)
        with pytest.raises(DatasetError, match="shape"):
            manager.load_checkpoint(path)

    def test_schema_version(self, tmp_path, manager):
        """Checkpoints from another schema are refused."""
        path = str(tmp_path / "model.npz")
        manager.save_checkpoint(path, {"w": np.zeros(1)}, {"schema_version": "0.1"})
        with pytest.raises(DatasetError, match="schema"):
            manager.load_checkpoint(path)


class TestTablesAndReports:
    """Test CSV tables and JSON reports."""

    def test_table_round_trip(self, tmp_path, manager):
        """The metadata line and rows are read back as strings."""
        path = str(tmp_path / "bench.csv")
        rows = [{"engine": "bitmask", "median_ns": 120.5}, {"engine": "naive", "median_ns": 900}]
        manager.save_table(path, {"seed": 0, "schema_version": "1.0"}, ["engine", "median_ns"], rows)
        with open(path) as f:
            assert f.readline() == "# seed=0, schema_version=1.0\n"
        meta, loaded = manager.load_table(path)
        assert meta == {"seed": "0", "schema_version": "1.0"}
        assert loaded[1] == {"engine": "naive", "median_ns": "900"}

    def test_table_without_metadata(self, tmp_path, manager):
        """Plain CSV files are rejected."""
        path = tmp_path / "plain.csv"
        path.write_text("engine,median_ns\nnaive,1\n")
        with pytest.raises(DatasetError):
            manager.load_table(str(path))

    def test_report_is_deterministic(self, tmp_path, manager):
        """Reports are sorted JSON, byte-identical across writes."""
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        manager.save_report(a, {"z": 1, "a": [1.0, 2.0]})
        manager.save_report(b, {"a": [1.0, 2.0], "z": 1})
        assert manager.file_digest(a) == manager.file_digest(b)
        assert json.loads((tmp_path / "a.json").read_text()) =={"a": [1.0, 2.0], "z": 1}
