"""Append-only JSONL metrics with a fixed schema and field order.

The first line is a header row; every later line is one training step. All
metric fields are always present (0.0 when a quantity does not apply), so
runs of different algorithms diff cleanly line against line.
"""

import json

import numpy as np

from .errors import ContractError

SCHEMA = 1

METRIC_FIELDS = (
    "step",
    "reward_mean",
    "accuracy_reward_mean",
    "format_reward_mean",
    "reward_mean_noisy",
    "uv_mean",
    "entropy_mean",
    "p_noi",
    "noisy_fraction",
    "bv_mean",
    "be_mean",
    "clip_fraction",
    "objective",
    "mean_ratio",
)


def format_row(record):
    """Serialize one step record to its canonical JSON line."""
    missing = [f for f in METRIC_FIELDS if f not in record]
    if missing:
        raise ContractError(f"metrics record is missing fields {missing}")
    out = {"step": int(record["step"])}
    for key in METRIC_FIELDS[1:]:
        out[key] = float(record[key])
    if "eval" in record and record["eval"] is not None:
        out["eval"] = record["eval"]
    return json.dumps(out, separators=(",", ":"))


class MetricsWriter:
    def __init__(self, path, flush_every=1):
        self.path = path
        self.flush_every = max(1, int(flush_every))
        self._pending = 0
        self._fh = open(path, "w")
        self._fh.write(json.dumps({"kind": "metrics", "schema": SCHEMA}, separators=(",", ":")) + "\n")
        self._fh.flush()

    def write_step(self, record):
        self._fh.write(format_row(record) + "\n")
        self._pending += 1
        if self._pending >= self.flush_every:
            self._fh.flush()
            self._pending = 0

    def close(self):
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path):
    """Read a metrics file back into a list of per-step dicts."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    rows = [json.loads(line) for line in lines if line.strip()]
    if not rows or rows[0].get("kind") != "metrics":
        raise ContractError(f"{path} does not start with a metrics header row")
    if rows[0].get("schema") != SCHEMA:
        raise ContractError(f"{path} has schema {rows[0].get('schema')!r}, expected {SCHEMA}")
    return rows[1:]


def rows_to_columns(rows, keys):
    """Extract named columns as float arrays; unknown keys list what exists."""
    if not rows:
        raise ContractError("no metric rows to extract columns from")
    available = sorted(rows[0])
    out = {}
    for key in keys:
        if key not in rows[0]:
            raise ContractError(f"metric key {key!r} not present; available: {available}")
        out[key] = np.asarray([float(r[key]) for r in rows])
    return out
