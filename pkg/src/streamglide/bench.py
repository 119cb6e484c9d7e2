"""Experiment harness: single runs, control-count sweeps, density analysis, exports."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import GliderModel
from .errors import InvalidInputError, ScenarioError
from .flowfield import LayeredField, averaged_layer
from .planner import (Plan, PlanResult, RoadmapContext, Scenario, load_scenario, plan,
                      prepare_roadmap, resolve_workers, scenario_from_dict)
from .steering import METHODS, ControlPlane, control_plane, line_circle, lowest_plane_speed

METRIC_FIELDS = ["method", "n_controls", "seed", "n_nodes", "pairs_considered", "equal_depth_skips",
                 "degenerate_skips", "edges_attempted", "infeasible_skips", "edges_connected",
                 "integrations", "solved", "n_legs", "total_travel_time_s", "error"]
TIMING_FIELDS = ["method", "n_controls", "seed", "sampling_time_s", "steering_time_s", "search_time_s"]
SUMMARY_FIELDS = ["method", "n_controls", "runs", "solved_runs",
                  "edges_connected_mean", "edges_connected_lo", "edges_connected_hi",
                  "travel_time_mean", "travel_time_lo", "travel_time_hi",
                  "steering_time_mean"]
CI_SIGMAS = 3.0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return "" if not math.isfinite(x) else repr(x)
    return str(x)


def metrics_row(method: str, n_controls: int, seed, metrics: Optional[dict], n_legs: int = 0,
                error: str = "") -> dict:
    m = metrics or {}
    row = {k: m.get(k) for k in METRIC_FIELDS}
    row.update(method=method, n_controls=n_controls, seed="" if seed is None else seed,
               solved=bool(m.get("solved", False)), n_legs=n_legs, error=error)
    t = m.get("total_travel_time_s")
    row["total_travel_time_s"] = t if (t is not None and math.isfinite(t)) else None
    return row


def timing_row(method: str, n_controls: int, seed, metrics: Optional[dict]) -> dict:
    m = metrics or {}
    return {"method": method, "n_controls": n_controls, "seed": "" if seed is None else seed,
            "sampling_time_s": m.get("sampling_time_s"), "steering_time_s": m.get("steering_time_s"),
            "search_time_s": m.get("search_time_s")}


def write_csv(path: Path, fields: Sequence[str], rows: Sequence[dict]):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    Path(path).write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------

def plan_document(result: PlanResult) -> dict:
    doc = {"solved": result.solved, "metrics": {k: v for k, v in result.metrics.items()
                                                if not (isinstance(v, float) and not math.isfinite(v))}}
    if result.plan is not None:
        doc.update(result.plan.to_dict())
        doc["legs"] = [{"from": int(result.roadmap.src[e]), "to": int(result.roadmap.dst[e]),
                        "travel_time_s": leg.travel_time, "miss_distance_m": leg.miss_distance,
                        "trim": leg.trim.to_dict(), "control": list(leg.control)}
                       for e, leg in zip(result.plan.edge_ids, result.plan.legs)]
    return doc


def trajectory_document(p: Plan) -> dict:
    legs = []
    for leg in p.legs:
        t, pos = clip_leg(leg.trajectory.t, leg.trajectory.positions, leg.travel_time)
        legs.append({"control": list(leg.control), "travel_time_s": leg.travel_time,
                     "t": t.tolist(), "positions": pos.tolist()})
    return {"total_time_s": p.total_time, "legs": legs}


def clip_leg(t: np.ndarray, pos: np.ndarray, t_end: float):
    """Samples strictly before t_end plus the linearly interpolated point at t_end."""
    keep = t < t_end
    j = int(keep.sum())
    if j == 0 or j >= t.size:
        return t[keep], pos[keep]
    s = (t_end - t[j - 1]) / (t[j] - t[j - 1])
    end = pos[j - 1] + s * (pos[j] - pos[j - 1])
    return np.append(t[keep], t_end), np.vstack([pos[keep], end])


def export_depth_profile(p: Plan, field: LayeredField) -> list[dict]:
    """Rows of elapsed time, depth and the current component along the ground track."""
    rows = []
    offset = 0.0
    for leg in p.legs:
        t, pos = clip_leg(leg.trajectory.t, leg.trajectory.positions, leg.travel_time)
        u, v = field.velocity(pos[:, 0], pos[:, 1], pos[:, 2])
        gu = u + leg.control[0]
        gv = v + leg.control[1]
        norm = np.hypot(gu, gv)
        with np.errstate(invalid="ignore", divide="ignore"):
            along = np.where(norm > 0, (u * gu + v * gv) / norm, 0.0)
        for k in range(t.size):
            if rows and k == 0:
                continue  # leg start repeats the previous leg's end
            rows.append({"t_s": offset + float(t[k]), "depth_m": 0.0 - float(pos[k, 2]),
                         "current_along_mps": float(along[k]), "current_speed_mps": float(math.hypot(u[k], v[k]))})
        offset += leg.travel_time
    return rows


def write_depth_profile(path: Path, rows: list[dict]):
    write_csv(path, ["t_s", "depth_m", "current_along_mps", "current_speed_mps"], rows)


def run_plan(scenario: Scenario, out_dir, method: Optional[str] = None, n_controls: Optional[int] = None,
             seed="keep", workers: Optional[int] = None) -> PlanResult:
    """Plan once and write plan.json, trajectory.json, depth_profile.csv, metrics.csv and timings.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = method or scenario.method
    n = n_controls or scenario.n_controls
    result = plan(scenario, method=method, n_controls=n, control_seed=seed, workers=workers)
    seed_val = scenario.steering.control_seed if seed == "keep" else seed
    (out / "plan.json").write_text(json.dumps(plan_document(result), indent=2))
    if result.plan is not None:
        (out / "trajectory.json").write_text(json.dumps(trajectory_document(result.plan)))
        write_depth_profile(out / "depth_profile.csv", export_depth_profile(result.plan, scenario.resolved_field()))
    n_legs = len(result.plan.edge_ids) if result.plan is not None else 0
    write_csv(out / "metrics.csv", METRIC_FIELDS, [metrics_row(method, n, seed_val, result.metrics, n_legs)])
    write_csv(out / "timings.csv", TIMING_FIELDS, [timing_row(method, n, seed_val, result.metrics)])
    return result


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    scenario: Scenario
    counts: tuple
    seeds: tuple
    methods: tuple = METHODS

    def __post_init__(self):
        if not self.counts or any(int(c) < 1 for c in self.counts):
            raise ScenarioError(f"control counts must be >= 1, got {self.counts!r}")
        if not self.seeds:
            raise ScenarioError("a sweep needs at least one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ScenarioError(f"unknown methods {bad!r}")

    def cells(self) -> list[tuple]:
        return [(m, int(c), s) for m in self.methods for c in self.counts for s in self.seeds]


def sweep_from_dict(doc: dict, base: Optional[Path] = None) -> SweepSpec:
    ref = doc.get("scenario")
    if ref is None:
        raise ScenarioError("sweep spec needs a 'scenario'")
    if isinstance(ref, dict):
        scen = scenario_from_dict(ref, base)
    else:
        path = Path(ref)
        if not path.is_absolute() and base is not None and (base / path).is_file():
            path = base / path
        scen = load_scenario(path if path.is_file() else ref)
    if "seeds" in doc:
        seeds = tuple(int(s) for s in doc["seeds"])
    else:
        reps = int(doc.get("repetitions", 1))
        if reps < 1:
            raise ScenarioError(f"repetitions must be >= 1, got {reps}")
        first = int(doc.get("base_seed", 0))
        seeds = tuple(range(first, first + reps))
    counts = tuple(int(c) for c in doc.get("counts", [scen.n_controls]))
    methods = tuple(doc.get("methods", METHODS))
    return SweepSpec(scen, counts, seeds, methods)


def load_sweep(source) -> SweepSpec:
    if isinstance(source, dict):
        return sweep_from_dict(source)
    path = Path(source)
    if not path.is_file():
        bundled = resources.files("streamglide.data").joinpath("scenarios", str(source))
        if bundled.is_file():
            return sweep_from_dict(json.loads(bundled.read_text()))
        raise ScenarioError(f"cannot read sweep spec {source!r}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return sweep_from_dict(doc, path.parent)


def run_sweep(spec: SweepSpec, out_dir=None, workers: Optional[int] = None,
              context: Optional[RoadmapContext] = None) -> list[dict]:
    """Run every (method, count, seed) cell; rows come back in that order.

    Sweep seeds reseed only the control draws; positions stay fixed, so one
    roadmap context (neighbour pairs, control planes) serves every cell.
    """
    scen = spec.scenario
    fld = scen.resolved_field()
    model = scen.resolved_model()
    ctx = context or prepare_roadmap(scen, fld)
    n_workers = resolve_workers(workers)

    def cell(args):
        method, count, seed = args
        try:
            r = plan(scen, fld, model, method, count, seed, context=ctx, workers=1, realise=False)
            n_legs = len(r.plan.edge_ids) if r.plan is not None else 0
            return metrics_row(method, count, seed, r.metrics, n_legs), timing_row(method, count, seed, r.metrics)
        except Exception as exc:  # recorded per row; the sweep continues
            return metrics_row(method, count, seed, None, 0, f"{type(exc).__name__}: {exc}"), \
                timing_row(method, count, seed, None)

    cells = spec.cells()
    if n_workers == 1:
        results = [cell(c) for c in cells]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(cell, cells))
    rows = [r for r, _ in results]
    timings = [t for _, t in results]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "metrics.csv", METRIC_FIELDS, rows)
        write_csv(out / "timings.csv", TIMING_FIELDS, timings)
        write_csv(out / "summary.csv", SUMMARY_FIELDS, summarize(rows, timings))
    return rows


def _interval(values: list[float]):
    if not values:
        return None, None, None
    a = np.asarray(values, dtype=float)
    mean = float(a.mean())
    if a.size < 2:
        return mean, mean, mean
    half = CI_SIGMAS * float(a.std(ddof=1)) / math.sqrt(a.size)
    return mean, mean - half, mean + half


def _num(x):
    if x is None or x == "":
        return None
    return float(x)


def summarize(rows: Sequence[dict], timings: Optional[Sequence[dict]] = None) -> list[dict]:
    """Per (method, count): mean and mean +/- 3 standard errors of edges and travel time.

    Travel-time statistics use only the runs that found a path.  Accepts rows
    either as produced by :func:`run_sweep` or as read back from metrics.csv.
    """
    groups: dict = {}
    for i, r in enumerate(rows):
        key = (str(r["method"]), int(r["n_controls"]))
        groups.setdefault(key, []).append(i)
    out = []
    for (method, count), idx in groups.items():
        edges = [_num(rows[i]["edges_connected"]) for i in idx if _num(rows[i]["edges_connected"]) is not None]
        times = [_num(rows[i]["total_travel_time_s"]) for i in idx
                 if _num(rows[i]["total_travel_time_s"]) is not None]
        em, elo, ehi = _interval(edges)
        tm, tlo, thi = _interval(times)
        steer = [_num(timings[i]["steering_time_s"]) for i in idx] if timings else []
        steer = [s for s in steer if s is not None]
        out.append({"method": method, "n_controls": count, "runs": len(idx), "solved_runs": len(times),
                    "edges_connected_mean": em, "edges_connected_lo": elo, "edges_connected_hi": ehi,
                    "travel_time_mean": tm, "travel_time_lo": tlo, "travel_time_hi": thi,
                    "steering_time_mean": float(np.mean(steer)) if steer else None})
    return out


# ---------------------------------------------------------------------------
# density analysis
# ---------------------------------------------------------------------------

def surface_area(model: GliderModel) -> float:
    """Upper bound on the control-surface area: two sphere zones of radius max V_G."""
    r = model.max_speed
    return 2.0 * 2.0 * math.pi * r * r * (math.sin(model.gamma_max) - math.sin(model.gamma_min))


def line_length(plane: ControlPlane, model: GliderModel, sign: int, nodes: int = 4097) -> float:
    """Length of the control-surface / control-plane intersection, both branches, one climb/dive sign."""
    ok, lo, hi = model.feasible_interval(lowest_plane_speed(plane), sign)
    if not ok[0]:
        return 0.0
    lo, hi = float(lo[0]), float(hi[0])
    # Chebyshev clustering resolves the square-root behaviour at both ends
    theta = np.linspace(math.pi, 0.0, nodes)
    gabs = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(theta)
    gamma = sign * gabs
    speed = model.speed(gamma)
    up, vp, um, vm, root = line_circle(plane.A, plane.B, plane.C, speed * np.cos(gamma))
    w = speed * np.sin(gamma)
    total = 0.0
    for u, v in ((up, vp), (um, vm)):
        pts = np.stack([u, v, w], axis=-1)
        total += float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return total


def density_report(model: GliderModel, plane: ControlPlane, c: int, sign: int = -1) -> dict:
    """Sample densities of ``c`` controls on the control surface and on the control line.

    ``rho_line`` is None when the plane fails the lowest-speed test.
    """
    if c < 1:
        raise InvalidInputError(f"c must be >= 1, got {c}")
    area = surface_area(model)
    v_min = lowest_plane_speed(plane)
    length = line_length(plane, model, 1 if sign > 0 else -1)
    rho_s = c / area
    rho_l = c / length if length > 0 else None
    return {"c": c, "v_min": v_min, "v_star": model.max_horizontal_speed()[0],
            "surface_area": area, "line_length": length,
            "rho_surface": rho_s, "rho_line": rho_l,
            "ratio": (rho_l / rho_s) if rho_l is not None else None}


def pair_density_report(field: LayeredField, model: GliderModel, p_k, p_k1, c: int) -> dict:
    plane = control_plane(averaged_layer(field, p_k[2], p_k1[2]), p_k, p_k1)
    return density_report(model, plane, c, 1 if p_k1[2] > p_k[2] else -1)


def scenario_density(scenario: Scenario, c: int, context: Optional[RoadmapContext] = None) -> dict:
    """Density statistics over all neighbour pairs of a scenario's roadmap."""
    fld = scenario.resolved_field()
    model = scenario.resolved_model()
    ctx = context or prepare_roadmap(scenario, fld)
    A, B, C = ctx.planes
    ratios = []
    infeasible = 0
    for i in range(ctx.src.size):
        sign = 1 if ctx.nodes[ctx.dst[i], 2] > ctx.nodes[ctx.src[i], 2] else -1
        plane = ControlPlane(float(A[i]), float(B[i]), float(C[i]), tuple(ctx.nodes[ctx.src[i]]),
                             tuple(ctx.nodes[ctx.dst[i]]))
        rep = density_report(model, plane, c, sign)
        if rep["ratio"] is None:
            infeasible += 1
        else:
            ratios.append(rep["ratio"])
    r = np.asarray(ratios)
    return {"c": c, "pairs": int(ctx.src.size), "infeasible_pairs": infeasible,
            "rho_surface": c / surface_area(model),
            "ratio_min": float(r.min()) if r.size else None,
            "ratio_median": float(np.median(r)) if r.size else None,
            "ratio_max": float(r.max()) if r.size else None}
