"""Roadmap planning over sampled positions with steered, travel-time weighted edges."""
from __future__ import annotations

import heapq
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import GliderModel, TrimState, default_model, load_model
from .errors import ScenarioError
from .flowfield import LayeredField, load_field
from .steering import (METHODS, STREAMLINE, SteerParams, SteerResult,
                       integrate_to, pair_planes, steer_pairs)

WORKERS_ENV = "STREAMGLIDE_WORKERS"
CHUNK = 512
DEFAULT_K = 27


@dataclass(frozen=True)
class Scenario:
    bounds: tuple                 # ((xmin, xmax), (ymin, ymax), (zmin, zmax))
    start: tuple
    goal: tuple
    n_positions: int = 1024
    n_controls: int = 16
    k_neighbors: int = DEFAULT_K
    sampling_mode: str = "lattice"
    sampling_seed: int = 0
    lattice_shape: Optional[tuple] = None
    steering: SteerParams = SteerParams()
    method: str = STREAMLINE
    field: Optional[LayeredField] = dc_field(default=None, compare=False, repr=False)
    model: Optional[GliderModel] = dc_field(default=None, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (3, 2) or not np.isfinite(b).all() or (b[:, 1] <= b[:, 0]).any():
            raise ScenarioError(f"bounds must be [[xmin,xmax],[ymin,ymax],[zmin,zmax]], got {self.bounds!r}")
        for label, p in (("start", self.start), ("goal", self.goal)):
            q = np.asarray(p, dtype=float)
            if q.shape != (3,) or not np.isfinite(q).all():
                raise ScenarioError(f"{label} must be a finite [x, y, z], got {p!r}")
            if ((q < b[:, 0]) | (q > b[:, 1])).any():
                raise ScenarioError(f"{label} {tuple(q)} lies outside the bounds")
        if self.n_positions < 2:
            raise ScenarioError(f"n_positions must be >= 2, got {self.n_positions}")
        if self.k_neighbors < 1:
            raise ScenarioError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.n_controls < 1:
            raise ScenarioError(f"n_controls must be >= 1, got {self.n_controls}")
        if self.sampling_mode not in ("lattice", "random"):
            raise ScenarioError(f"sampling mode must be 'lattice' or 'random', got {self.sampling_mode!r}")
        if self.method not in METHODS:
            raise ScenarioError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lattice_shape is not None and math.prod(self.lattice_shape) != self.n_positions:
            raise ScenarioError(f"lattice shape {self.lattice_shape} does not hold {self.n_positions} positions")

    @property
    def box(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)

    @property
    def flat_bounds(self) -> tuple:
        return tuple(self.box.ravel())

    def steer_params(self, n_controls: Optional[int] = None, control_seed="keep") -> SteerParams:
        p = replace(self.steering, n_controls=n_controls or self.n_controls, bounds=self.flat_bounds)
        if control_seed != "keep":
            p = replace(p, control_seed=control_seed)
        return p.validate()

    def resolved_field(self) -> LayeredField:
        if self.field is None:
            raise ScenarioError("scenario has no field")
        return self.field

    def resolved_model(self) -> GliderModel:
        return self.model if self.model is not None else default_model()


def _resolve(ref, base: Optional[Path], loader):
    if isinstance(ref, dict):
        return loader(ref)
    path = Path(ref)
    candidates = [path] if path.is_absolute() else ([base / path] if base else []) + [path]
    for c in candidates:
        if c.is_file():
            return loader(c)
    bundled = resources.files("streamglide.data").joinpath(str(ref))
    if bundled.is_file():
        return loader(json.loads(bundled.read_text()))
    raise ScenarioError(f"cannot find {ref!r}")


def scenario_from_dict(doc: dict, base: Optional[Path] = None) -> Scenario:
    try:
        sampling = doc.get("sampling", {})
        steering = doc.get("steering", {})
        params = SteerParams(n_controls=int(doc.get("n_controls", 16)),
                             dt=float(steering.get("dt_s", 5.0)),
                             steps=int(steering.get("steps", 125)),
                             tol=float(steering.get("tol_m", 5.0)),
                             control_seed=steering.get("control_seed"))
        model_ref = doc.get("model", "default")
        model = default_model() if model_ref == "default" else _resolve(model_ref, base, load_model)
        if "field" not in doc:
            raise ScenarioError("scenario needs a 'field'")
        fld = _resolve(doc["field"], base, load_field)
        shape = sampling.get("shape")
        return Scenario(
            bounds=tuple(tuple(float(v) for v in row) for row in doc["bounds"]),
            start=tuple(float(v) for v in doc["start"]),
            goal=tuple(float(v) for v in doc["goal"]),
            n_positions=int(doc.get("n_positions", 1024)),
            n_controls=params.n_controls,
            k_neighbors=int(doc.get("k_neighbors", DEFAULT_K)),
            sampling_mode=str(sampling.get("mode", "lattice")),
            sampling_seed=int(sampling.get("seed", 0)),
            lattice_shape=tuple(int(s) for s in shape) if shape is not None else None,
            steering=params.validate(),
            method=str(doc.get("method", STREAMLINE)),
            field=fld,
            model=model,
            name=str(doc.get("name", "")),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario ({exc})") from None


def load_scenario(source) -> Scenario:
    if isinstance(source, dict):
        return scenario_from_dict(source)
    path = Path(source)
    if not path.is_file():
        bundled = resources.files("streamglide.data").joinpath("scenarios", str(source))
        if bundled.is_file():
            return scenario_from_dict(json.loads(bundled.read_text()))
        raise ScenarioError(f"cannot read scenario {source!r}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(doc, path.parent)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def lattice_shape(n: int, extents) -> tuple:
    """Factor n into per-axis counts whose spacings are as equal as possible."""
    ext = np.asarray(extents, dtype=float)
    best, best_score = None, math.inf
    for nx in range(1, n + 1):
        if n % nx:
            continue
        for ny in range(1, n // nx + 1):
            if (n // nx) % ny:
                continue
            nz = n // (nx * ny)
            spacing = np.log(ext / np.array([nx, ny, nz]))
            score = float(np.ptp(spacing))
            if score < best_score - 1e-12:
                best, best_score = (nx, ny, nz), score
    return best


def sample_positions(scenario: Scenario) -> np.ndarray:
    """Sampled positions with the start and goal appended as the last two rows."""
    box = scenario.box
    n = scenario.n_positions
    if scenario.sampling_mode == "lattice":
        shape = scenario.lattice_shape or lattice_shape(n, box[:, 1] - box[:, 0])
        axes = [lo + (hi - lo) * (np.arange(k) + 0.5) / k for (lo, hi), k in zip(box, shape)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    else:
        rng = np.random.default_rng(scenario.sampling_seed)
        grid = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n, 3))
    return np.vstack([grid, np.asarray(scenario.start, dtype=float), np.asarray(scenario.goal, dtype=float)])


# ---------------------------------------------------------------------------
# roadmap
# ---------------------------------------------------------------------------

@dataclass
class RoadmapContext:
    """Everything about a roadmap that does not depend on the control sampling.

    Reusing one context across methods and control counts avoids recomputing
    neighbour lists and control planes.
    """

    nodes: np.ndarray
    src: np.ndarray            # directed pairs that reach the steering function
    dst: np.ndarray
    pairs_considered: int
    equal_depth_skips: int
    degenerate_skips: int
    planes: tuple = None
    sampling_time: float = 0.0


def neighbour_pairs(nodes: np.ndarray, k: int) -> np.ndarray:
    """Directed pairs (i, j) and (j, i) for every j among the k nearest of i, sorted."""
    k_eff = min(k, nodes.shape[0] - 1)
    _, idx = cKDTree(nodes).query(nodes, k=k_eff + 1)
    idx = np.asarray(idx).reshape(nodes.shape[0], -1)
    rows = np.repeat(np.arange(nodes.shape[0]), idx.shape[1])
    cols = idx.ravel()
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    pairs = np.concatenate([np.stack([rows, cols], 1), np.stack([cols, rows], 1)])
    return np.unique(pairs, axis=0)


def prepare_roadmap(scenario: Scenario, field: LayeredField, nodes: Optional[np.ndarray] = None) -> RoadmapContext:
    t0 = time.perf_counter()
    if nodes is None:
        nodes = sample_positions(scenario)
    pairs = neighbour_pairs(nodes, scenario.k_neighbors)
    a, b = nodes[pairs[:, 0]], nodes[pairs[:, 1]]
    equal_depth = a[:, 2] == b[:, 2]
    degenerate = ~equal_depth & (((a[:, 0] == b[:, 0]) & (a[:, 1] == b[:, 1]))
                                 | (np.linalg.norm(b - a, axis=1) <= scenario.steering.tol))
    ok = ~(equal_depth | degenerate)
    src, dst = pairs[ok, 0], pairs[ok, 1]
    planes = pair_planes(field, nodes[src], nodes[dst])
    return RoadmapContext(nodes, src, dst, int(pairs.shape[0]), int(equal_depth.sum()),
                          int(degenerate.sum()), planes, time.perf_counter() - t0)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    travel_time: float
    gamma: float
    control: tuple
    miss: float


@dataclass
class Roadmap:
    nodes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    travel_time: np.ndarray
    gamma: np.ndarray
    controls: np.ndarray
    miss: np.ndarray
    metrics: dict = dc_field(default_factory=dict)

    @classmethod
    def from_edges(cls, nodes, edges) -> "Roadmap":
        """Roadmap from explicit ``(src, dst, travel_time)`` triples, e.g. for testing the search."""
        e = list(edges)
        m = len(e)
        return cls(np.asarray(nodes, dtype=float),
                   np.array([x[0] for x in e], dtype=int), np.array([x[1] for x in e], dtype=int),
                   np.array([x[2] for x in e], dtype=float), np.full(m, np.nan),
                   np.full((m, 3), np.nan), np.zeros(m))

    def __len__(self):
        return self.src.size

    def edge(self, i: int) -> Edge:
        return Edge(int(self.src[i]), int(self.dst[i]), float(self.travel_time[i]), float(self.gamma[i]),
                    tuple(float(c) for c in self.controls[i]), float(self.miss[i]))

    @property
    def edges(self) -> list[Edge]:
        return [self.edge(i) for i in range(len(self))]

    def node_index(self, p) -> int:
        d = np.linalg.norm(self.nodes - np.asarray(p, dtype=float), axis=1)
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise ScenarioError(f"{tuple(p)} is not a roadmap node")
        return i


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def build_roadmap(scenario: Scenario, field: Optional[LayeredField] = None, model: Optional[GliderModel] = None,
                  method: Optional[str] = None, n_controls: Optional[int] = None, control_seed="keep",
                  context: Optional[RoadmapContext] = None, workers: Optional[int] = None) -> Roadmap:
    """Steer every neighbour pair and keep the pairs that connect as directed edges."""
    field = field or scenario.resolved_field()
    model = model or scenario.resolved_model()
    method = method or scenario.method
    params = scenario.steer_params(n_controls, control_seed)
    ctx = context or prepare_roadmap(scenario, field)
    t0 = time.perf_counter()
    m = ctx.src.size
    chunks = [slice(s, min(s + CHUNK, m)) for s in range(0, m, CHUNK)]
    A, B, C = ctx.planes

    def run(sl):
        return steer_pairs(field, model, ctx.nodes[ctx.src[sl]], ctx.nodes[ctx.dst[sl]], params, method,
                           planes=(A[sl], B[sl], C[sl]))

    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(chunks) <= 1:
        results = [run(sl) for sl in chunks]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(run, chunks))

    def cat(name, empty):
        parts = [getattr(r, name) for r in results]
        return np.concatenate(parts) if parts else empty

    connected = cat("connected", np.zeros(0, dtype=bool))
    infeasible = cat("infeasible", np.zeros(0, dtype=bool))
    sel = np.flatnonzero(connected)
    rm = Roadmap(ctx.nodes, ctx.src[sel], ctx.dst[sel], cat("travel_time", np.zeros(0))[sel],
                 cat("gamma", np.zeros(0))[sel], cat("controls", np.zeros((0, 3)))[sel],
                 cat("miss", np.zeros(0))[sel])
    rm.metrics = {
        "method": method,
        "n_controls": params.n_controls,
        "n_nodes": int(ctx.nodes.shape[0]),
        "pairs_considered": ctx.pairs_considered,
        "equal_depth_skips": ctx.equal_depth_skips,
        "degenerate_skips": ctx.degenerate_skips,
        "edges_attempted": int(m),
        "infeasible_skips": int(infeasible.sum()),
        "edges_connected": int(sel.size),
        "integrations": int(sum(r.integrations for r in results)),
        "sampling_time_s": ctx.sampling_time,
        "steering_time_s": time.perf_counter() - t0,
    }
    return rm


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

@dataclass
class Plan:
    positions: np.ndarray
    node_ids: list
    edge_ids: list
    leg_times: list
    trims: list = dc_field(default_factory=list)
    legs: list = dc_field(default_factory=list)     # SteerResult per leg
    metrics: dict = dc_field(default_factory=dict)

    @property
    def total_time(self) -> float:
        return float(sum(self.leg_times))

    def to_dict(self) -> dict:
        return {"total_time_s": self.total_time,
                "positions": self.positions.tolist(),
                "node_ids": list(self.node_ids),
                "leg_times_s": list(self.leg_times),
                "trims": [t.to_dict() for t in self.trims],
                "metrics": dict(self.metrics)}


@dataclass
class PlanResult:
    """Outcome of :func:`plan`; ``plan`` is None when the goal is unreachable."""

    plan: Optional[Plan]
    roadmap: Roadmap
    metrics: dict

    @property
    def solved(self) -> bool:
        return self.plan is not None


def dijkstra(n_nodes: int, src, dst, weight, start: int, goal: int):
    """Node and edge index sequences of a shortest start->goal path, or None."""
    order = np.lexsort((dst, src))
    adj = [[] for _ in range(n_nodes)]
    for e in order:
        adj[src[e]].append((dst[e], weight[e], e))
    dist = [math.inf] * n_nodes
    prev = [-1] * n_nodes
    via = [-1] * n_nodes
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == goal:
            break
        for v, w, e in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v], prev[v], via[v] = nd, u, e
                heapq.heappush(heap, (nd, v))
    if not math.isfinite(dist[goal]):
        return None
    nodes, edges = [goal], []
    while nodes[-1] != start:
        edges.append(via[nodes[-1]])
        nodes.append(prev[nodes[-1]])
    return [int(n) for n in nodes[::-1]], [int(e) for e in edges[::-1]]


def shortest_path(roadmap: Roadmap, p_init, p_goal) -> Optional[Plan]:
    start, goal = roadmap.node_index(p_init), roadmap.node_index(p_goal)
    found = dijkstra(roadmap.nodes.shape[0], roadmap.src, roadmap.dst, roadmap.travel_time, start, goal)
    if found is None:
        return None
    node_ids, edge_ids = found
    return Plan(roadmap.nodes[node_ids], node_ids, edge_ids,
                [float(roadmap.travel_time[e]) for e in edge_ids])


def realise_legs(plan: Plan, roadmap: Roadmap, field: LayeredField, model: GliderModel,
                 params: SteerParams) -> Plan:
    """Re-integrate every leg from its stored trim and attach trims and trajectories."""
    trims, legs = [], []
    for e in plan.edge_ids:
        a, b = roadmap.nodes[roadmap.src[e]], roadmap.nodes[roadmap.dst[e]]
        ctrl = roadmap.controls[e]
        traj, entry, miss = integrate_to(field, a, ctrl, b, params)
        g = float(roadmap.gamma[e])
        trim = TrimState(float(model.speed(g)), g, math.atan2(ctrl[1], ctrl[0]), model.ballast_for(g))
        trims.append(trim)
        legs.append(SteerResult(trim, traj, entry, miss))
    plan.trims, plan.legs = trims, legs
    return plan


def plan(scenario: Scenario, field: Optional[LayeredField] = None, model: Optional[GliderModel] = None,
         method: Optional[str] = None, n_controls: Optional[int] = None, control_seed="keep",
         context: Optional[RoadmapContext] = None, workers: Optional[int] = None,
         realise: bool = True) -> PlanResult:
    field = field or scenario.resolved_field()
    model = model or scenario.resolved_model()
    rm = build_roadmap(scenario, field, model, method, n_controls, control_seed, context, workers)
    t0 = time.perf_counter()
    found = shortest_path(rm, scenario.start, scenario.goal)
    metrics = dict(rm.metrics)
    metrics["search_time_s"] = time.perf_counter() - t0
    metrics["solved"] = found is not None
    metrics["total_travel_time_s"] = found.total_time if found is not None else math.inf
    if found is not None:
        if realise:
            realise_legs(found, rm, field, model, scenario.steer_params(n_controls, control_seed))
        found.metrics = metrics
    return PlanResult(found, rm, metrics)
