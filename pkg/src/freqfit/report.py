"""Report documents and their byte-stable serialization.

Floats are written with 17 significant digits (enough to round-trip any
double), keys in a fixed order, non-finite values as the strings ``"inf"``,
``"-inf"`` and ``"nan"``. CSV tables are derived from the JSON documents
alone.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .diagnostics import ellipsoid, reliability, scaled_jacobian


def fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        s = fmt(v)
        return s if math.isfinite(float(v)) else json.dumps(s)
    return json.dumps(str(v), ensure_ascii=False)


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with 17-digit floats; lists of scalars stay on one line."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    return _scalar(obj)


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc) + "\n")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# -- global updating ----------------------------------------------------------


def minimum_entry(problem, record, small_thr: float = 0.1, large_thr: float = 0.5) -> dict:
    labels = list(problem.box.labels)
    sj = scaled_jacobian(problem, record)
    rel = reliability(sj, labels, small_thr, large_thr)
    ell = ellipsoid(problem, record)
    return {
        "x_star": record.x_star,
        "phi": record.phi,
        "freqs": record.freqs,
        "converged": record.converged,
        "reason": record.reason,
        "iterations": record.iterations,
        "evaluations": record.evaluations,
        "projected_gradient": record.pg_norm,
        "active_bounds": [{"index": int(j), "side": side, "face": kind} for j, side, kind in record.active_bounds],
        "jacobian_method": sj.method,
        "scaled_jacobian": sj.Js,
        "weighted_jacobian": sj.weighted,
        "reliability": [
            {
                "parameter": q.label,
                "zeta": q.zeta,
                "eta": q.eta,
                "inv_zeta": q.inv_zeta,
                "inv_eta": q.inv_eta,
                "class": q.cls,
                "eta_path": q.eta_path,
                "eta_degraded": q.degraded,
            }
            for q in rel.params
        ],
        "svd": {"singular_values": rel.singular_values, "right_vectors": rel.right_vectors},
        "ellipsoid": {"sigma": ell.sigma, "U": ell.U, "scale": ell.scale, "epsilon": ell.epsilon},
    }


def minima_document(problem, registry, small_thr: float = 0.1, large_thr: float = 0.5) -> dict:
    return {
        "parameters": list(problem.box.labels),
        "box": {"lower": problem.box.lower, "upper": problem.box.upper},
        "targets": problem.targets,
        "weights": problem.weights,
        "epsilon": registry.epsilon,
        "global_index": registry.global_index,
        "local_solves": registry.local_solves,
        "evaluations": registry.evaluations,
        "boundary_rejects": registry.boundary_rejects,
        "duplicates": registry.duplicates,
        "escapes": registry.escapes,
        "max_depth_reached": registry.max_depth_reached,
        "budget_exhausted": registry.budget_exhausted,
        "failures": [{"box": f["box"], "depth": f["depth"], "error": f["error"]} for f in registry.failures],
        "minima": [minimum_entry(problem, r, small_thr, large_thr) for r in registry.records],
    }


def summary_table(doc: dict) -> tuple[list[str], list[list]]:
    """One row per minimum, every value copied from the minima document."""
    labels = doc["parameters"]
    q = len(doc["targets"])
    header = (
        ["index", "global"]
        + labels
        + ["phi"]
        + [f"f{i + 1}" for i in range(q)]
        + ["converged", "iterations", "evaluations", "active_bounds"]
        + [f"zeta_{s}" for s in labels]
        + [f"eta_{s}" for s in labels]
        + [f"class_{s}" for s in labels]
    )
    rows = []
    for k, m in enumerate(doc["minima"]):
        bounds = ";".join(f"{labels[b['index']]}:{b['side']}:{b['face']}" for b in m["active_bounds"])
        rows.append(
            [k, int(k == doc["global_index"])]
            + [float(v) for v in m["x_star"]]
            + [float(m["phi"])]
            + [float(v) for v in m["freqs"]]
            + [int(m["converged"]), m["iterations"], m["evaluations"], bounds]
            + [float(r["zeta"]) for r in m["reliability"]]
            + [float(r["eta"]) for r in m["reliability"]]
            + [r["class"] for r in m["reliability"]]
        )
    return header, rows


# -- sensitivity ----------------------------------------------------------------


def eet_document(report, design, outputs) -> dict:
    return {
        "parameters": list(report.labels),
        "outputs": list(outputs),
        "r": design.r,
        "levels": design.levels,
        "delta": design.step,
        "seed": design.seed,
        "evaluations": report.evaluations,
        "dropped": report.dropped,
        "mu_star": report.mu_star,
        "sigma": report.sigma,
    }


def eet_tables(doc: dict):
    """Wide table (one row per output) and long table (one row per output x parameter)."""
    labels = doc["parameters"]
    wide_header = ["output"] + [f"mu_star_{s}" for s in labels] + [f"sigma_{s}" for s in labels]
    wide = [[o] + [float(v) for v in doc["mu_star"][i]] + [float(v) for v in doc["sigma"][i]] for i, o in enumerate(doc["outputs"])]
    long_header = ["output", "parameter", "mu_star", "sigma"]
    long = [
        [o, s, float(doc["mu_star"][i][j]), float(doc["sigma"][i][j])]
        for i, o in enumerate(doc["outputs"])
        for j, s in enumerate(labels)
    ]
    return (wide_header, wide), (long_header, long)
