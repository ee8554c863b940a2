"""
Write-once result store and tabular exports.

Records live under ``<out>/records/<kind>/<sha256>.json``; the name is the
hash of the record text, so a record never changes once written. The
index ``<out>/index.json`` maps ``kind`` and key to the latest record and is
replaced atomically.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .baseflow import BaseFlow, Branch
from .config import RunConfig, diff_numerics
from .exceptions import FingerprintMismatchError, StoreError
from .geometry import ModalBasis


logger = logging.getLogger(__name__)

RECORD_KINDS = ("branch", "scan", "report", "symmetry", "verify")
INDEX_FILE = "index.json"
FLOAT_FORMAT = "%.17g"


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with tmp_path.open("w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp_path, path)


class ResultStore:
    """
    Content-addressed records tagged with the configuration fingerprint.

    Args:
        root: Output directory
        config: Configuration of the running command; records written by
            another numerical configuration are refused on reload
    """

    def __init__(self, root: Union[str, Path], config: RunConfig):
        self.root = Path(root)
        self.config = config
        self.fingerprint = config.fingerprint()
        self.logger = logging.getLogger(__name__)

    @property
    def index_path(self) -> Path:
        return self.root / INDEX_FILE

    def _load_index(self) -> Dict[str, Dict[str, str]]:
        if not self.index_path.exists():
            return {}
        try:
            with self.index_path.open("r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise StoreError(f"Store index {self.index_path} is corrupted: {e}") from e

    def _path(self, kind: str, digest: str) -> Path:
        return self.root / "records" / kind / f"{digest}.json"

    def put(self, kind: str, payload: Dict[str, Any], key: str = "latest") -> str:
        """
        Write a record and point the index entry ``kind/key`` at it.

        Returns:
            The SHA-256 of the record text
        """
        if kind not in RECORD_KINDS:
            raise StoreError(f"Unknown record kind '{kind}', expected one of {RECORD_KINDS}")
        record = {
            "kind": kind,
            "fingerprint": self.fingerprint,
            "numerics": self.config.numerics_dict(),
            "payload": payload,
        }
        text = _dumps(record)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        path = self._path(kind, digest)
        if not path.exists():
            _atomic_write(path, text)
            self.logger.debug(f"Stored {kind} record {digest[:12]}")
        index = self._load_index()
        index.setdefault(kind, {})[key] = digest
        _atomic_write(self.index_path, _dumps(index))
        return digest

    def has(self, kind: str, key: str = "latest") -> bool:
        return key in self._load_index().get(kind, {})

    def keys(self, kind: str) -> List[str]:
        return sorted(self._load_index().get(kind, {}))

    def record(self, kind: str, key: str = "latest") -> Dict[str, Any]:
        """
        Load the full record ``kind/key``, verifying its content hash.

        Raises:
            StoreError: If the record is missing or its content was altered
        """
        digest = self._load_index().get(kind, {}).get(key)
        if digest is None:
            raise StoreError(f"No stored {kind} record for '{key}' in {self.root}")
        path = self._path(kind, digest)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise StoreError(f"Stored {kind} record {path} is missing") from e
        if hashlib.sha256(text.encode("utf-8")).hexdigest() != digest:
            raise StoreError(f"Stored {kind} record {path} does not match its content hash")
        return json.loads(text)

    def get(self, kind: str, key: str = "latest") -> Dict[str, Any]:
        """
        Load the payload of ``kind/key``.

        Raises:
            StoreError: If the record is missing or corrupted
            FingerprintMismatchError: If it was computed with other numerics
        """
        record = self.record(kind, key)
        if record["fingerprint"] != self.fingerprint:
            differences = diff_numerics(record.get("numerics", {}), self.config.numerics_dict())
            raise FingerprintMismatchError(
                f"Stored {kind} record was computed with another configuration: "
                + "; ".join(differences or ["fingerprint differs"]),
                differences,
            )
        return record["payload"]


# ---------------------------------------------------------------------------
# Branch records
# ---------------------------------------------------------------------------


def branch_to_dict(branch: Branch) -> Dict[str, Any]:
    return {
        "points": [
            {
                "lam": p.lam,
                "coeffs": [float(c) for c in np.real(p.coeffs)],
                "residual_norm": p.residual_norm,
                "fingerprint": p.fingerprint,
                "energy": p.energy,
                "iterations": p.iterations,
                "residual_history": list(p.residual_history),
                "convergence_rate": p.convergence_rate,
            }
            for p in branch.points
        ],
        "diagnostics": list(branch.diagnostics),
        "truncated": branch.truncated,
    }


def branch_from_dict(data: Dict[str, Any], basis: ModalBasis) -> Branch:
    """
    Rebuild a stored branch on ``basis``.

    Raises:
        FingerprintMismatchError: If the points were computed on another basis
    """
    branch = Branch(diagnostics=list(data.get("diagnostics", [])), truncated=bool(data.get("truncated", False)))
    for point in data["points"]:
        if point["fingerprint"] != basis.fingerprint:
            raise FingerprintMismatchError(
                "Stored branch was computed on another basis",
                [f"basis: {point['fingerprint']} != {basis.fingerprint}"],
            )
        branch.append(
            BaseFlow(
                lam=float(point["lam"]),
                field=basis.field(np.array(point["coeffs"], dtype=float)),
                residual_norm=float(point["residual_norm"]),
                fingerprint=point["fingerprint"],
                energy=float(point["energy"]),
                iterations=int(point["iterations"]),
                residual_history=tuple(point["residual_history"]),
                convergence_rate=point["convergence_rate"],
            )
        )
    return branch


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_csv(
    path: Union[str, Path],
    columns: Sequence[str],
    rows: Union[np.ndarray, Sequence[Sequence[float]]],
    fingerprint: str,
    comment: Optional[str] = None,
) -> Path:
    """
    Write numeric rows with 17 significant digits.

    The first line is ``# fingerprint=<sha>``, the second the column names.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    header = [f"fingerprint={fingerprint}"]
    if comment:
        header.append(comment)
    header.append(",".join(columns))
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=",", header="\n".join(header), comments="# ")
    logger.info(f"Wrote {data.shape[0]} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a file written by :func:`write_csv` back into its fingerprint, columns and rows."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header = [line[2:].rstrip("\n") for line in f if line.startswith("# ")]
    if not header or not header[0].startswith("fingerprint="):
        raise StoreError(f"{path} carries no fingerprint header")
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return {
        "fingerprint": header[0].split("=", 1)[1],
        "columns": header[-1].split(","),
        "rows": rows,
    }


def branch_rows(branch: Branch) -> np.ndarray:
    """``(lam, xi0, ||D(v0)||², residual)`` per branch point."""
    return np.array(
        [(p.lam, p.xi0, p.energy, p.residual_norm) for p in branch.points], dtype=float
    ).reshape(-1, 4)
