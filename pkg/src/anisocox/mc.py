"""Monte Carlo study: repeated simulation and fitting from a known model."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import ModelSpec
from .palmfit import FitConfig, fit_pipeline
from .simulate import SimConfig, simulate_lgcp

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2
RAW_NAME = "raw.csv"
SUMMARY_NAME = "summary.json"
HIST_NAME = "histograms.json"


def _label(p, q):
    return f"{p + 1}{q + 1}"


def estimate_columns(P):
    cols = []
    for p in range(P):
        for q in range(p, P):
            cols += [f"{k}_{_label(p, q)}" for k in ("theta", "zeta", "alpha", "nu", "sigma")]
    cols += [f"mu_{p + 1}" for p in range(P)]
    cols += [f"sigma_at_bound_{_label(p, q)}" for p in range(P) for q in range(p + 1, P)]
    return cols


def _columns(P):
    return ["rep", "R", "error"] + [f"n_{p + 1}" for p in range(P)] + estimate_columns(P)


def _one_replicate(args):
    model, cfg, sim_cfg, rep = args
    row = {"rep": rep, "R": "", "error": ""}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pattern, _ = simulate_lgcp(model, sim_cfg, rep)
            for p, c in enumerate(pattern.components):
                row[f"n_{p + 1}"] = c.n
            fit = fit_pipeline(pattern, cfg)
    except Exception as exc:  # recorded, not fatal
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    s = fit.spec
    row["R"] = fit.R
    for p in range(s.P):
        for q in range(p, s.P):
            m, d, lab = s.matern[p][q], s.deform[p][q], _label(p, q)
            row[f"theta_{lab}"] = math.degrees(d.theta)
            row[f"zeta_{lab}"] = d.zeta
            row[f"alpha_{lab}"] = m.alpha
            row[f"nu_{lab}"] = m.nu
            row[f"sigma_{lab}"] = m.sigma
            if p != q:
                row[f"sigma_at_bound_{lab}"] = int(fit.flags["sigma_at_bound"].get(f"{p + 1},{q + 1}", False))
        row[f"mu_{p + 1}"] = s.mu[p]
    return row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _read_raw(path):
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _parse(rows, cols):
    out = []
    for r in rows:
        d = {}
        for c in cols:
            v = r.get(c, "")
            if c == "error":
                d[c] = v
            elif v == "":
                d[c] = math.nan
            else:
                d[c] = float(v)
        out.append(d)
    return out


def _mode(values):
    vals, counts = np.unique(np.round(values, 10), return_counts=True)
    return float(vals[np.argmax(counts)]) if len(vals) else math.nan


def _sd(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else math.nan


def summarize(raw, P):
    """Per-parameter Monte Carlo summaries following the usual table conventions."""
    # fixed order so floating-point sums do not depend on completion order
    ok = sorted((r for r in raw if not r["error"]), key=lambda r: r["rep"])
    summary = {"n_ok": len(ok), "n_failed": len(raw) - len(ok)}
    for col in estimate_columns(P):
        x = np.array([r[col] for r in ok], dtype=float)
        x = x[np.isfinite(x)]
        kind = col.split("_")[0]
        s = {"n": int(len(x))}
        if len(x) == 0:
            summary[col] = s
            continue
        if col.startswith("sigma_at_bound"):
            s["fraction"] = float(x.mean())
        elif kind == "nu":
            s["mode"] = _mode(x)
            s["mean"] = float(x.mean())
        elif kind == "zeta":
            s["median"] = float(np.median(x))
            s["sd"] = _sd(x)
        else:
            s["mean"] = float(x.mean())
            s["median"] = float(np.median(x))
            s["sd"] = _sd(x)
            if kind == "theta":
                z = np.mean(np.exp(2j * np.radians(x)))
                s["axial_mean"] = float(np.degrees(np.angle(z) / 2) % 180.0)
        summary[col] = s
    for p in range(P):
        for q in range(p + 1, P):
            lab = _label(p, q)
            free = [r[f"sigma_{lab}"] for r in ok if r.get(f"sigma_at_bound_{lab}") == 0]
            summary[f"sigma_{lab}_not_at_bound"] = {
                "n": len(free),
                "mean": float(np.mean(free)) if free else math.nan,
                "sd": _sd(np.array(free)),
            }
    return summary


def histograms(raw, P, bins=20):
    ok = [r for r in raw if not r["error"]]
    out = {}
    for col in estimate_columns(P):
        x = np.array([r[col] for r in ok], dtype=float)
        x = x[np.isfinite(x)]
        if len(x) == 0:
            continue
        counts, edges = np.histogram(x, bins=bins)
        out[col] = {"edges": edges.tolist(), "counts": counts.tolist()}
    return out


@dataclass
class MCStudy:
    model: ModelSpec
    n_reps: int
    seed: int
    raw: list
    summary: dict
    hist: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.raw if not r["error"]], dtype=float)


def run_mc(
    model: ModelSpec,
    n_reps: int,
    cfg: FitConfig | None = None,
    seed: int = 0,
    sim_cfg: SimConfig | None = None,
    out_dir=None,
    workers: int = 1,
) -> MCStudy:
    """Simulate and fit ``n_reps`` replicates; resumes from ``out_dir`` if present."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    cfg = FitConfig() if cfg is None else cfg
    sim_cfg = SimConfig(seed=seed) if sim_cfg is None else sim_cfg
    if sim_cfg.seed != seed:
        raise ValueError("sim_cfg.seed must equal the study seed")
    P = model.P
    cols = _columns(P)
    raw_path = Path(out_dir) / RAW_NAME if out_dir is not None else None
    done = {}
    if raw_path is not None:
        raw_path.parent.mkdir(parents=True, exist_ok=True)
        existing = _read_raw(raw_path)
        if existing and list(existing[0].keys()) != cols:
            raise ValueError(f"{raw_path} has a different column layout; use a fresh directory")
        for r in existing:
            done[int(r["rep"])] = r
        if not raw_path.exists():
            with open(raw_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(cols)
    todo = [r for r in range(n_reps) if r not in done]
    tasks = [(model, cfg, sim_cfg, r) for r in todo]
    failures = sum(1 for r in done.values() if r.get("error"))
    limit = MAX_FAILURE_RATE * n_reps

    def consume(results):
        nonlocal failures
        for row in results:
            if raw_path is not None:
                with open(raw_path, "a", newline="") as fh:
                    csv.writer(fh, lineterminator="\n").writerow([_fmt(row.get(c, "")) for c in cols])
            done[row["rep"]] = {c: _fmt(row.get(c, "")) for c in cols}
            if row["error"]:
                failures += 1
                log.warning("replicate %d failed: %s", row["rep"], row["error"])
                if failures > limit:
                    raise RuntimeError(f"{failures} of {n_reps} replicates failed; aborting study")

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            consume(ex.map(_one_replicate, tasks))
    else:
        consume(map(_one_replicate, tasks))
    raw = _parse([done[r] for r in range(n_reps)], cols)
    study = MCStudy(model, n_reps, seed, raw, summarize(raw, P), histograms(raw, P))
    if out_dir is not None:
        out = Path(out_dir)
        (out / SUMMARY_NAME).write_text(json.dumps(study.summary, indent=2, sort_keys=True) + "\n")
        (out / HIST_NAME).write_text(json.dumps(study.hist, indent=2, sort_keys=True) + "\n")
        (out / "model.json").write_text(model.to_json())
    return study


def default_workers():
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
