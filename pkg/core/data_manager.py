"""
Data Management System
Datasets as JSON Lines, model checkpoints with manifests, and JSON reports.
"""

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import SCHEMA_VERSION
from core.errors import DatasetError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def encode_json(value: Any) -> str:
    """JSON text with insertion-ordered keys and floats at 17 significant digits."""
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {encode_json(v)}" for k, v in value.items()) + "}"
    if isinstance(value, np.ndarray):
        return encode_json(value.tolist())
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(encode_json(v) for v in value) + "]"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(float(value)):
            raise DatasetError(f"Cannot serialize non-finite float {value!r}")
        return FLOAT_FORMAT % float(value)
    return json.dumps(value)


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


class JsonlDataStore:
    """One record per line."""

    def write(self, path: str, records: Iterable[Dict[str, Any]]) -> int:
        _ensure_parent(path)
        count = 0
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in records:
                f.write(encode_json(record))
                f.write("\n")
                count += 1
        logger.info(f"Wrote {count} records to {path}")
        return count

    def read(self, path: str) -> List[Dict[str, Any]]:
        if not os.path.exists(path):
            raise DatasetError(f"Dataset not found: {path}")
        records = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DatasetError(f"{path}:{lineno}: {e}") from e
        if not records:
            raise DatasetError(f"Dataset is empty: {path}")
        return records


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    manifest: Dict[str, Any]


class CheckpointStore:
    """Named arrays in a .npz file plus a JSON manifest alongside."""

    @staticmethod
    def manifest_path(path: str) -> str:
        return path + ".manifest.json"

    def save(self, path: str, arrays: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None):
        _ensure_parent(path)
        names = sorted(arrays)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "names": names,
            "shapes": {name: list(np.shape(arrays[name])) for name in names},
        }
        manifest.update(metadata or {})
        with open(path, "wb") as f:
            np.savez(f, **{name: np.asarray(arrays[name]) for name in names})
        with open(self.manifest_path(path), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        logger.info(f"Saved checkpoint with {len(names)} arrays to {path}")

    def load(self, path: str) -> Checkpoint:
        manifest_path = self.manifest_path(path)
        if not os.path.exists(path) or not os.path.exists(manifest_path):
            raise DatasetError(f"Checkpoint not found: {path}")
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"Checkpoint schema {manifest.get('schema_version')} != {SCHEMA_VERSION}")
        with np.load(path) as data:
            arrays = {name: data[name].copy() for name in data.files}
        for name in manifest["names"]:
            if name not in arrays:
                raise DatasetError(f"Checkpoint is missing array '{name}'")
            if list(arrays[name].shape) != manifest["shapes"][name]:
                raise DatasetError(f"Array '{name}' has shape {arrays[name].shape}, "
                                   f"manifest says {manifest['shapes'][name]}")
        return Checkpoint(arrays=arrays, manifest=manifest)


class CsvTableStore:
    """CSV with a leading `# key=value, ...` metadata comment and a header row."""

    def write(self, path: str, meta: Dict[str, Any], columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
        _ensure_parent(path)
        count = 0
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
                count += 1
        logger.info(f"Wrote {count} rows to {path}")
        return count

    def read(self, path: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
        if not os.path.exists(path):
            raise DatasetError(f"CSV not found: {path}")
        with open(path, "r", encoding="utf-8", newline="") as f:
            first = f.readline()
            if not first.startswith("# "):
                raise DatasetError(f"{path}: missing metadata comment line")
            meta = {}
            for item in first[2:].strip().split(", "):
                key, sep, value = item.partition("=")
                if not sep:
                    raise DatasetError(f"{path}: malformed metadata item {item!r}")
                meta[key] = value
            rows = list(csv.DictReader(f))
        return meta, rows


class DataManager:
    """Main data manager coordinating datasets, checkpoints and reports."""

    def __init__(self):
        self.jsonl = JsonlDataStore()
        self.checkpoints = CheckpointStore()
        self.tables = CsvTableStore()

    def save_dataset(self, path: str, records: Iterable[Dict[str, Any]]) -> int:
        return self.jsonl.write(path, records)

    def load_dataset(self, path: str) -> List[Dict[str, Any]]:
        return self.jsonl.read(path)

    def save_checkpoint(self, path: str, arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]):
        self.checkpoints.save(path, arrays, metadata)

    def load_checkpoint(self, path: str) -> Checkpoint:
        return self.checkpoints.load(path)

    def save_table(self, path: str, meta: Dict[str, Any], columns: Sequence[str],
                   rows: Iterable[Dict[str, Any]]) -> int:
        return self.tables.write(path, meta, columns, rows)

    def load_table(self, path: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
        return self.tables.read(path)

    def save_report(self, path: str, report: Dict[str, Any]):
        """Deterministic JSON (sorted keys, no timestamps)."""
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Wrote report to {path}")

    def file_digest(self, path: str) -> str:
        digest = hashlib.sha256()
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 16), b""):
                digest.update(chunk)
        return digest.hexdigest()


# Global data manager instance
data_manager = DataManager()
