"""Per-epoch metrics as CSV plus a JSON-lines mirror.

Column order is frozen; bump ``METRICS_VERSION`` when it changes. Floats
are written with ``repr`` so reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

METRICS_VERSION = 1
HEADER_COMMENT = f"# autosparse-metrics v{METRICS_VERSION}"
COLUMNS = [
    "epoch",
    "train_loss",
    "eval_accuracy",
    "alpha",
    "lr",
    "global_sparsity",
    "model_sparsity",
    "train_flops_fraction",
    "infer_flops_fraction",
    "per_layer_sparsity",
]


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(record):
    d = record if isinstance(record, dict) else vars(record)
    return {c: d[c] for c in COLUMNS}


class MetricsWriter:
    """Append-as-you-go writer; each epoch row is flushed immediately."""

    def __init__(self, csv_path, jsonl_path=None):
        self.csv_path = Path(csv_path)
        self.jsonl_path = Path(jsonl_path) if jsonl_path else self.csv_path.with_suffix(".jsonl")
        self.csv_path.parent.mkdir(parents=True, exist_ok=True)
        self._csv = open(self.csv_path, "w", encoding="utf-8", newline="")
        self._jsonl = open(self.jsonl_path, "w", encoding="utf-8")
        self._csv.write(HEADER_COMMENT + "\n")
        self._writer = csv.writer(self._csv, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        self._csv.flush()

    def write(self, record):
        row = _row(record)
        self._writer.writerow([_fmt(row[c]) for c in COLUMNS])
        self._jsonl.write(json.dumps(row) + "\n")
        self._csv.flush()
        self._jsonl.flush()

    def close(self):
        self._csv.close()
        self._jsonl.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Parse a metrics CSV back into dicts; checks the version comment."""
    with open(path, encoding="utf-8", newline="") as f:
        first = f.readline().rstrip("\n")
        if first != HEADER_COMMENT:
            raise ValueError(f"{path}: expected {HEADER_COMMENT!r}, found {first!r}")
        reader = csv.DictReader(f)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for r in reader:
            out = {"epoch": int(r["epoch"])}
            for c in COLUMNS[1:-1]:
                out[c] = float(r[c])
            pls = r["per_layer_sparsity"]
            out["per_layer_sparsity"] = [float(x) for x in pls.split(";")] if pls else []
            rows.append(out)
    return rows


def csv_body(path):
    """Bytes of the CSV after the version comment and header row."""
    data = Path(path).read_bytes()
    return b"".join(io.BytesIO(data).readlines()[2:])
