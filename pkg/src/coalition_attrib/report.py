"""Report assembly and deterministic serialization.

A report document is {"body": ..., "metadata": ...}.  Everything that
depends only on the inputs and the seed lives in the body; timestamps,
package version, worker count and other run circumstances live in the
metadata.  Two runs with the same inputs and seed produce byte-identical
bodies (and byte-identical CSV files, which carry no metadata at all).

JSON is canonical: sorted keys, two-space indent, NaN rejected.  Files
are written atomically (temp file in the target directory, then rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np


def _clean(value):
    """Make a value JSON-safe: numpy scalars to Python, NaN to None."""
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if value != value else value
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return int(value)
    return value


@dataclass(frozen=True)
class AttributionReport:
    """Per-feature Shapley attributions for one observation."""

    feature_names: Tuple[str, ...]
    instance_values: np.ndarray
    mode: str  # marginal | conditional | causal | asymmetric
    estimator: Dict[str, object]
    base: float
    phi: np.ndarray
    model_output: float
    standard_errors: Optional[np.ndarray] = None
    base_standard_error: Optional[float] = None

    def efficiency_residual(self) -> float:
        """model_output - (base + sum phi); zero up to estimator noise."""
        return float(self.model_output - (self.base + float(np.sum(self.phi))))

    def to_body(self) -> dict:
        features = []
        for i, name in enumerate(self.feature_names):
            entry = {"name": name, "phi": _clean(self.phi[i])}
            if self.standard_errors is not None:
                entry["standard_error"] = _clean(self.standard_errors[i])
            features.append(entry)
        body = {
            "kind": "attribution",
            "mode": self.mode,
            "estimator": {k: _clean(v) for k, v in self.estimator.items()},
            "base": _clean(self.base),
            "model_output": _clean(self.model_output),
            "efficiency_residual": _clean(self.efficiency_residual()),
            "instance": {name: _clean(self.instance_values[i])
                         for i, name in enumerate(self.feature_names)},
            "features": features,
        }
        if self.base_standard_error is not None:
            body["base_standard_error"] = _clean(self.base_standard_error)
        return body


@dataclass(frozen=True)
class DeltaEntry:
    """One coalition's contribution delta for the examined feature."""

    members: Tuple[str, ...]
    weight: float
    delta: float


@dataclass(frozen=True)
class DeltaReport:
    """All coalition deltas of one feature, with the cancellation flag."""

    feature: str
    mode: str
    entries: Tuple[DeltaEntry, ...]
    phi: float
    tau: float
    max_abs_delta: float
    cancellation: bool
    base: float
    model_output: float

    def to_body(self) -> dict:
        return {
            "kind": "coalition-deltas",
            "feature": self.feature,
            "mode": self.mode,
            "base": _clean(self.base),
            "model_output": _clean(self.model_output),
            "phi": _clean(self.phi),
            "tau": _clean(self.tau),
            "max_abs_delta": _clean(self.max_abs_delta),
            "cancellation": bool(self.cancellation),
            "coalitions": [
                {"members": list(e.members), "size": len(e.members),
                 "weight": _clean(e.weight), "delta": _clean(e.delta)}
                for e in self.entries
            ],
        }


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)


def _csv_rows(body: dict):
    kind = body.get("kind")
    if kind == "attribution":
        has_se = any("standard_error" in f for f in body["features"])
        header = ["feature", "phi"] + (["standard_error"] if has_se else [])
        yield header
        for f in body["features"]:
            row = [f["name"], f["phi"]]
            if has_se:
                row.append(f.get("standard_error"))
            yield row
        yield ["_base", body["base"]] + (
            [body.get("base_standard_error")] if has_se else [])
        yield ["_model_output", body["model_output"]] + ([""] if has_se
                                                         else [])
    elif kind == "coalition-deltas":
        yield ["members", "size", "weight", "delta"]
        for c in body["coalitions"]:
            yield ["+".join(c["members"]), c["size"], c["weight"],
                   c["delta"]]
        yield ["_phi", "", "", body["phi"]]
        yield ["_tau", "", "", body["tau"]]
        yield ["_max_abs_delta", "", "", body["max_abs_delta"]]
        yield ["_cancellation", "", "", body["cancellation"]]
    elif kind == "fairness-screen":
        yield ["row", "phi"]
        for entry in body["rows"]:
            yield [entry["row"], entry["phi"]]
        yield ["_verdict", body["verdict"]]
        yield ["_max_abs_phi", body["max_abs_phi"]]
        yield ["_caveat", body["caveat"]]
    elif kind == "mode-comparison":
        yield ["feature", "max_gap", "flagged"]
        for f in body["features"]:
            yield [f["name"], f["max_gap"], f["flagged"]]
        yield ["_max_gap", body["max_gap"], ""]
    elif kind == "validation":
        yield ["property", "status", "worst_error", "detail"]
        for p in body["properties"]:
            yield [p["property"], p["status"], p.get("worst_error", ""),
                   p.get("detail", "")]
    else:
        raise ValueError(f"no CSV rendering for report kind {kind!r}")


def render_csv(body: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in _csv_rows(body):
        writer.writerow(["" if cell is None else cell for cell in row])
    return buf.getvalue()


def render_document(body: dict, fmt: str = "json",
                    metadata: Optional[dict] = None) -> str:
    """Full report text.  CSV intentionally drops the metadata."""
    if fmt == "json":
        return canonical_json({"body": body,
                               "metadata": metadata or {}}) + "\n"
    if fmt == "csv":
        return render_csv(body)
    raise ValueError(f"unknown report format {fmt!r}")


def write_report(body: dict, path: Optional[str] = None, fmt: str = "json",
                 metadata: Optional[dict] = None) -> None:
    """Serialize and write a report, atomically when a path is given.

    path None writes to stdout.  The temp-then-rename dance means a
    crashed run never leaves a truncated report behind.
    """
    text = render_document(body, fmt, metadata)
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp",
                               prefix=".report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
