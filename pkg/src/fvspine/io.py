"""File formats: CSV tables, JSONL event logs and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .genealogy import GenealogyLog

MANIFEST_NAME = "manifest.json"


def fmt(v) -> str:
    """Round-trip exact text for one CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_events(path, log: GenealogyLog) -> Path:
    """One JSON object per event: time, dying, target, landing coordinates."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for k in range(len(log)):
            rec = {"time": float(log.times[k]), "dying": int(log.dying[k]),
                   "target": int(log.target[k]),
                   "landing": [float(v) for v in log.landing[k]]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def read_events(path, n: int, horizon: float) -> GenealogyLog:
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    d = len(recs[0]["landing"]) if recs else 1
    return GenealogyLog.from_events(
        n, horizon, [(r["time"], r["dying"], r["target"]) for r in recs], d=d)


def file_hash(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    seed: int
    code_version: str
    stream_ids: list
    outputs: dict
    gates: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    root: str = ""

    @property
    def passed(self) -> bool:
        return all(g["passed"] for g in self.gates)

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        data = asdict(self)
        data.pop("root")
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"no manifest at {path}")
        data = json.loads(path.read_text())
        return cls(root=str(path.parent), **data)
