"""File formats: expression CSV, ground-truth JSON, and score CSVs.

All writers emit UTF-8 with LF endings and full-precision floats (Python
repr), so a write/read round trip reproduces matrices exactly and reruns
with the same seed are byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .basis import standardize_times
from .model import ExpressionMatrix
from .synth import GroundTruth


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset_csv(path, data: ExpressionMatrix) -> None:
    """One probe per row under a header of t=<hours> columns."""
    lines = ["probe_id," + ",".join(f"t={g:g}" for g in data.grid.times_hours)]
    for pid, row in zip(data.probe_ids, data.values):
        lines.append(pid + "," + ",".join(_fmt(v) for v in row))
    write_text(path, "\n".join(lines) + "\n")


def read_dataset_csv(path) -> ExpressionMatrix:
    """Parse the dataset CSV back into an expression matrix."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "probe_id" or len(header) < 3:
        raise ValueError(f"{path}: expected header 'probe_id,t=<hours>,...'")
    times = []
    for cell in header[1:]:
        if not cell.startswith("t="):
            raise ValueError(f"{path}: malformed time column {cell!r}")
        times.append(float(cell[2:]))
    probe_ids = []
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}: row with {len(cells)} cells, expected {len(header)}")
        probe_ids.append(cells[0])
        rows.append([float(c) for c in cells[1:]])
    values = np.asarray(rows, dtype=float)
    return ExpressionMatrix(values=values, probe_ids=probe_ids,
                            grid=standardize_times(times))


def write_truth_json(path, truth: GroundTruth, seed: int, probe_ids=None,
                     extra: dict | None = None) -> None:
    payload = {
        "seed": seed,
        "probe_ids": list(probe_ids) if probe_ids is not None else None,
        "periods_hours": truth.periods_hours.tolist(),
        "n_circadian": truth.n_circadian,
        "n_simple_periodic": truth.n_simple_periodic,
        "circadian": truth.circadian.astype(int).tolist(),
        "simple_periodic": truth.simple_periodic.astype(int).tolist(),
        "theta": truth.theta.tolist(),
        "theta_mask": truth.theta_mask.astype(int).tolist(),
        "gamma": truth.gamma.tolist(),
        "gamma_mask": truth.gamma_mask.astype(int).tolist(),
        "Lambda": truth.Lambda.tolist(),
        "eta": truth.eta.tolist(),
        "sigma2": truth.sigma2.tolist(),
    }
    if extra:
        payload["config"] = extra
    write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def read_truth_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_scores_csv(path, probe_ids, scores, direction: str = "higher") -> None:
    """Score file consumed by the evaluation harness.

    direction says whether larger ("higher") or smaller ("lower") scores
    mean stronger evidence of periodicity, so external p-value-based
    methods can plug in without preprocessing.
    """
    if direction not in ("higher", "lower"):
        raise ValueError("direction must be 'higher' or 'lower'")
    lines = ["probe_id,score,direction"]
    for pid, s in zip(probe_ids, scores):
        lines.append(f"{pid},{_fmt(s)},{direction}")
    write_text(path, "\n".join(lines) + "\n")


def read_scores_csv(path) -> tuple[list[str], np.ndarray]:
    """Returns probe ids and scores oriented so higher = more periodic."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0].split(",") != ["probe_id", "score", "direction"]:
        raise ValueError(f"{path}: expected header 'probe_id,score,direction'")
    ids, scores = [], []
    for ln in lines[1:]:
        pid, score, direction = ln.split(",")
        if direction not in ("higher", "lower"):
            raise ValueError(f"{path}: bad direction {direction!r}")
        val = float(score)
        ids.append(pid)
        scores.append(val if direction == "higher" else -val)
    return ids, np.asarray(scores)


def write_csv(path, header: list[str], rows) -> None:
    """Small deterministic CSV writer used by the summary outputs."""
    lines = [",".join(header)]
    for row in rows:
        cells = [_fmt(c) if isinstance(c, float) else str(c) for c in row]
        lines.append(",".join(cells))
    write_text(path, "\n".join(lines) + "\n")


def write_text(path, text: str) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
