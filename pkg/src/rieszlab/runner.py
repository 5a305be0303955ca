"""Batch driver: run pipelines over refinement levels and persist the results.

Every pipeline maps ``(graph, config, rng)`` to a list of flat rows.  All
randomness is drawn from ``numpy.random.default_rng([seed, level, pipeline])``
so results do not depend on execution order or on ``--parallel``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import PIPELINES, ExperimentConfig
from .covering import admissible_cover, gradient_leibniz_bound, verify_covering
from .cz import cz_decompose, verify_cz
from .geometry import GraphError, ball, estimate_volume_growth
from .inequalities import (
    TestDictionary,
    hardy_constant,
    hardy_sum_bound,
    measure_diagonal,
    measure_weak_type,
    reverse_riesz_constant,
    riesz_constant,
)
from .instances import BallField, cz_instance, lattice_bump_fields, random_remote_ball, smooth_bump
from .spectral import DENSE_CAP, check_gaussian_bounds, lp_norm, split_TU


@dataclass
class RunReport:
    config: dict
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    run_hash: str = ""

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "errors": self.errors,
                "timing": self.timing, "versions": self.versions, "run_hash": self.run_hash}


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def run_hash(config: dict, rows: list, errors: list) -> str:
    payload = json.dumps(_clean({"config": config, "rows": rows, "errors": errors}),
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def _dictionary(cfg: ExperimentConfig) -> TestDictionary:
    return TestDictionary(seed=cfg.seed, **cfg.dictionary)


# ----------------------------------------------------------------------
# pipelines


def _volume_growth(g, cfg, rng):
    centers = rng.choice(g.n, size=min(g.n, 8), replace=False)
    rmax = float(g.r.max()) + float(g.lengths.max())
    h = float(g.lengths.min())
    radii = np.geomspace(2 * h, max(4 * h, rmax / 2), 5)
    sample = [(int(x), float(r), float(2 * r)) for x in centers for r in radii]
    rep = estimate_volume_growth(g, sample)
    return [{"tag": "VolumeGrowth", "constant": rep.doubling_constant, "method": "measured",
             "doubling_exponent": rep.doubling_exponent, "reverse_exponent": rep.reverse_exponent,
             "samples_used": rep.used}]


def _heat_bounds(g, cfg, rng):
    if g.n > DENSE_CAP:
        raise GraphError(f"heat-bounds needs the dense eigenbasis (n = {g.n} > {DENSE_CAP})")
    xs = rng.choice(g.n, size=min(g.n, 4), replace=False)
    ys = rng.choice(g.n, size=min(g.n, 4), replace=False)
    scale = float(g.r.max()) ** 2 + 1.0
    times = np.geomspace(1.0, scale, 6) * float(g.lengths.min())
    grid = [(int(x), int(y), float(t)) for x in xs for y in ys for t in times]
    rep = check_gaussian_bounds(g, grid)
    return [{"tag": "HeatUE", "constant": rep.constant, "method": "measured",
             "gaussian_c": rep.gaussian_c, "dUE": rep.derivative_constant,
             "dUE2": rep.derivative_constant_y, "samples_used": len(rep.samples),
             "samples_skipped": len(rep.skipped)}]


def _cz(g, cfg, rng):
    rows = []
    for k in range(cfg.instances):
        inst = cz_instance(g, rng, q=cfg.q)
        c2 = []
        for lam in inst.lambdas:
            dec = cz_decompose(g, inst.u, inst.ball, inst.q, float(lam), maximal=inst.maximal)
            rep = verify_cz(dec)
            c2.append(rep.c2)
            rows.append({"tag": "CZ", "instance": k, "q": inst.q, "lambda": float(lam),
                         "constant": rep.c2, "method": "measured", "all_passed": rep.all_passed,
                         "c_grad_g": rep.c_grad_g, "c3a": rep.c3a, "c3b": rep.c3b, "c4": rep.c4,
                         "N": rep.N, "n_balls": len(dec.balls),
                         "sum_identity_error": rep.sum_identity_error,
                         "edge_identity_error": rep.edge_identity_error,
                         "center": inst.ball.center, "radius": inst.ball.radius})
        c2 = np.array(c2)
        spread = float(c2.max() / c2.min()) if c2.min() > 0 else math.inf
        for row in rows[-len(c2):]:
            row["c2_spread"] = spread
    return rows


def _covering(g, cfg, rng):
    cov = admissible_cover(g, cfg.r0)
    rep = verify_covering(cov)
    rows = [{"tag": "Covering", "constant": rep.gradient_constant, "method": "measured",
             "all_passed": rep.all_passed, "overlap_N": rep.overlap_N,
             "max_meeting": rep.max_meeting, "partition_error": rep.partition_error,
             "n_balls": len(cov.balls), "r0": cov.r0, "enlargements": cov.enlargements}]
    f = rng.standard_normal(g.n)
    for p in cfg.p:
        lb = gradient_leibniz_bound(cov, f, p)
        rows.append({"tag": "Leibniz", "p": p, "constant": lb.max_constant, "method": "measured",
                     "aggregate_lp": lb.aggregate_lp, "aggregate_sum": lb.aggregate_sum,
                     "overlap_bound": lb.overlap_bound, "edgewise_ok": lb.edgewise_ok})
    return rows


def _estimate_row(est):
    row = {"tag": est.tag, "p": est.p, "constant": est.constant, "method": est.method}
    if est.dictionary_bound is not None:
        row["dictionary_bound"] = est.dictionary_bound
    return row


def _hardy(g, cfg, rng):
    d = _dictionary(cfg)
    return [_estimate_row(hardy_constant(g, p, d)) for p in cfg.p]


def _riesz(g, cfg, rng):
    d = _dictionary(cfg)
    return [_estimate_row(riesz_constant(g, p, d)) for p in cfg.p]


def _reverse_riesz(g, cfg, rng):
    d = _dictionary(cfg)
    return [_estimate_row(reverse_riesz_constant(g, p, d)) for p in cfg.p]


def _bump_fields(g, cfg, rng):
    try:
        return lattice_bump_fields(g, cfg.instances)
    except GraphError:
        balls = [random_remote_ball(g, rng) for _ in range(cfg.instances)]
        return [BallField(b, smooth_bump(g, b.center, b.radius), "random") for b in balls]


def _weak_type(g, cfg, rng):
    rows = []
    for k, inst in enumerate(_bump_fields(g, cfg, rng)):
        try:
            est = measure_weak_type(g, inst.field, inst.ball, cfg.q)
        except GraphError as exc:
            # the ball is too coarse for this spacing; keep the instance visible
            rows.append({"tag": "WeakType", "instance": k, "q": cfg.q, "constant": math.nan,
                         "method": "skipped", "reason": str(exc), "center": inst.ball.center,
                         "radius": inst.ball.radius})
            continue
        T, U = split_TU(g, inst.field, inst.ball.radius, cfg.quadrature)
        outside = np.ones(g.n, bool)
        outside[ball(g, inst.ball.center, 4 * inst.ball.radius).members] = False
        row = {"tag": "WeakType", "instance": k, "q": cfg.q, "constant": est.constant,
               "method": est.method, "argmax": est.context["argmax"],
               "grid_size": est.context["grid_size"], "center": inst.ball.center,
               "radius": inst.ball.radius}
        r = inst.ball.radius
        for s in (1.5, 2.0, 3.0):
            fn = lp_norm(g, inst.field, s)
            row[f"U_s{s:g}"] = r * lp_norm(g, U, s) / fn
            row[f"T_off_s{s:g}"] = r * lp_norm(g, T, s, where=outside) / fn
        rows.append(row)
    return rows


def _assembly(g, cfg, rng):
    cov = admissible_cover(g, cfg.r0)
    f = rng.standard_normal(g.n)
    rows = []
    for p in cfg.p:
        diag = measure_diagonal(g, cov, f, p)
        rows.append(_estimate_row(diag))
        est = hardy_sum_bound(g, cov, f, p, cfg.quadrature)
        row = _estimate_row(est)
        row.update(est.context["terms"])
        rows.append(row)
    return rows


PIPELINE_FUNCS = {
    "volume-growth": _volume_growth,
    "heat-bounds": _heat_bounds,
    "cz": _cz,
    "covering": _covering,
    "hardy": _hardy,
    "riesz": _riesz,
    "reverse-riesz": _reverse_riesz,
    "weak-type": _weak_type,
    "assembly": _assembly,
}
assert set(PIPELINE_FUNCS) == set(PIPELINES)


# ----------------------------------------------------------------------
# driver


def _run_level(cfg: ExperimentConfig, li: int):
    level = cfg.model.levels[li]
    rows, errors, timing = [], [], {}
    t0 = time.perf_counter()
    try:
        g = cfg.model.build(level)
    except Exception as exc:  # noqa: BLE001 - recorded, run continues
        errors.append({"pipeline": "build", "level": level, "error": f"{type(exc).__name__}: {exc}"})
        return rows, errors, timing
    timing[f"build/{level}"] = time.perf_counter() - t0
    for name in cfg.pipelines:
        rng = np.random.default_rng([cfg.seed, li, PIPELINES.index(name)])
        t0 = time.perf_counter()
        try:
            out = PIPELINE_FUNCS[name](g, cfg, rng)
        except Exception as exc:  # noqa: BLE001 - crash isolation
            errors.append({"pipeline": name, "level": level,
                           "error": f"{type(exc).__name__}: {exc}",
                           "traceback": traceback.format_exc(limit=3)})
            out = []
        timing[f"{name}/{level}"] = time.perf_counter() - t0
        for row in out:
            rows.append({"pipeline": name, "level": level, "n_vertices": g.n, **row})
    return rows, errors, timing


def run(cfg: ExperimentConfig, parallel: bool = False) -> RunReport:
    """Run every pipeline at every refinement level; failures are recorded, not raised."""
    report = RunReport(config=_clean(cfg.to_dict()))
    report.versions = {"rieszlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                       "python": platform.python_version()}
    if not cfg.pipelines:
        report.run_hash = run_hash(report.config, [], [])
        return report
    idx = range(len(cfg.model.levels))
    if parallel and len(idx) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_level, [cfg] * len(idx), idx))
    else:
        results = [_run_level(cfg, i) for i in idx]
    # order rows by declared pipeline order, then by level
    for name in cfg.pipelines:
        for rows, _, _ in results:
            report.rows.extend(_clean([r for r in rows if r["pipeline"] == name]))
    for _, errors, timing in results:
        report.errors.extend(_clean(errors))
        report.timing.update(timing)
    report.run_hash = run_hash(report.config, report.rows, report.errors)
    return report


def _write_csv(path: Path, rows: list):
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _plot_series(rows: list) -> dict:
    """``constant`` vs level (per tag and p) and vs p (per tag, last level)."""
    series = {}
    keyed = {}
    for r in rows:
        if "instance" in r or not isinstance(r.get("constant"), float):
            continue
        keyed.setdefault((r["pipeline"], r["tag"], r.get("p")), []).append(r)
    for (pipe, tag, p), rs in keyed.items():
        suffix = "" if p is None else f"_p{p:g}"
        series[f"{pipe}_{tag}{suffix}_vs_level"] = [(r["level"], r["constant"]) for r in rs]
    by_tag = {}
    for (pipe, tag, p), rs in keyed.items():
        if p is not None:
            by_tag.setdefault((pipe, tag), []).append((p, rs[-1]["constant"]))
    for (pipe, tag), pts in by_tag.items():
        if len(pts) > 1:
            series[f"{pipe}_{tag}_vs_p"] = sorted(pts)
    return series


def write_report(report: RunReport, out: Path) -> Path:
    out = Path(out)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(_clean(report.to_dict()), fh, indent=2, sort_keys=True)
    for name in report.config.get("pipelines", []):
        rows = [r for r in report.rows if r["pipeline"] == name]
        if rows:
            _write_csv(out / "tables" / f"{name}.csv", rows)
    for name, pts in _plot_series(report.rows).items():
        with open(out / "plots" / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            w.writerows(pts)
    return out / "report.json"
