"""Steering functions: one constant trim control connecting two positions.

The streamline steerer works on the horizontal flow averaged between the two
end depths.  A constant control ``(u, v)`` can only carry the glider from
``p_k`` to ``p_k1`` if the combined stream value of current and control is zero
between them, which is the plane ``A u + B v + C = 0`` in control space with
``A = dy``, ``B = -dx`` and ``C`` the current's stream value.  Intersecting that
plane with the glider's control surface leaves a curve parameterised by the
glide angle; candidates along it are forward-integrated through the full
field and the earliest arrival wins.

The baseline steerer skips the plane and integrates samples drawn from the
whole control surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .dynamics import ControlVector, GliderModel, TrimState
from .errors import DegeneratePairError, IntegrationError, InvalidInputError
from .flowfield import LayeredField, PlanarFlow, averaged_layer, averaged_stream_values

STREAMLINE = "streamline"
BASELINE = "baseline"
METHODS = (STREAMLINE, BASELINE)

PLANE_EPS = 1e-9
# feasible glide-angle intervals narrower than this collapse to one angle
GAMMA_EPS = 1e-8


@dataclass(frozen=True)
class SteerParams:
    """Per-edge search settings.

    ``control_seed=None`` uses the deterministic glide-angle / surface grids;
    an integer switches to seeded uniform draws (the same draw for every edge).
    """

    n_controls: int = 16
    dt: float = 5.0
    steps: int = 125
    tol: float = 5.0
    bounds: Optional[tuple] = None
    control_seed: Optional[int] = None

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    def validate(self):
        if self.n_controls < 1:
            raise InvalidInputError(f"n_controls must be >= 1, got {self.n_controls}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        return self


@dataclass(frozen=True)
class ControlPlane:
    A: float
    B: float
    C: float
    p_k: tuple
    p_k1: tuple

    def residual(self, u, v):
        return self.A * np.asarray(u) + self.B * np.asarray(v) + self.C


@dataclass(frozen=True)
class ControlCandidate:
    gamma: float
    branch: int          # +1 / -1; 0 marks a tangent (single) solution
    heading: float
    control: ControlVector


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    positions: np.ndarray
    control: ControlVector
    reached: bool = False
    exited: bool = False

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    def to_dict(self) -> dict:
        return {"control": list(self.control), "reached": self.reached, "exited": self.exited,
                "t": self.t.tolist(), "positions": self.positions.tolist()}


@dataclass(frozen=True, eq=False)
class SteerResult:
    trim: TrimState
    trajectory: Trajectory
    travel_time: float
    miss_distance: float

    @property
    def control(self) -> ControlVector:
        return self.trajectory.control

    def to_dict(self) -> dict:
        return {"trim": self.trim.to_dict(), "travel_time": self.travel_time,
                "miss_distance": self.miss_distance, "trajectory": self.trajectory.to_dict()}


# ---------------------------------------------------------------------------
# control plane and candidates
# ---------------------------------------------------------------------------

def _check_pair(p_k, p_k1):
    a = np.asarray(p_k, dtype=float)
    b = np.asarray(p_k1, dtype=float)
    if a.shape != (3,) or b.shape != (3,) or not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidInputError(f"positions must be finite 3-vectors, got {p_k!r}, {p_k1!r}")
    if a[0] == b[0] and a[1] == b[1]:
        raise DegeneratePairError(f"positions {tuple(a)} and {tuple(b)} share a horizontal location")
    if a[2] == b[2]:
        raise DegeneratePairError(f"positions {tuple(a)} and {tuple(b)} are at the same depth")
    return a, b


def control_plane(flow: PlanarFlow, p_k, p_k1) -> ControlPlane:
    a, b = _check_pair(p_k, p_k1)
    C = flow.stream_value(a[:2], b[:2])
    return ControlPlane(float(b[1] - a[1]), float(-(b[0] - a[0])), C, tuple(a), tuple(b))


def lowest_plane_speed(plane: ControlPlane) -> float:
    """Smallest horizontal speed on the plane: distance of the line from the origin."""
    return abs(plane.C) / math.hypot(plane.A, plane.B)


def feasible(plane: ControlPlane, model: GliderModel) -> bool:
    return lowest_plane_speed(plane) <= model.max_horizontal_speed()[0]


def line_circle(A, B, C, radius):
    """Both intersections of ``A u + B v + C = 0`` with ``u^2 + v^2 = radius^2``.

    Implements the parametric control-line formulas with the two square-root
    terms carrying opposite signs, which is what keeps both points on the line.
    Returns ``(u_plus, v_plus, u_minus, v_minus, root)``; ``root`` is NaN where
    the line misses the circle.  A discriminant within rounding of zero, on
    either side, is treated as tangency.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    radius = np.asarray(radius, dtype=float)
    N = A * A + B * B
    disc = N * radius * radius - C * C
    disc = np.where(np.abs(disc) <= 1e-12 * N * radius * radius, 0.0, disc)
    with np.errstate(invalid="ignore"):
        root = np.sqrt(disc)
    u0 = -A * C / N
    v0 = -B * C / N
    return u0 + B * root / N, v0 - A * root / N, u0 - B * root / N, v0 + A * root / N, root


def unit_fractions(n: int, seed: Optional[int]) -> np.ndarray:
    """Positions in [0, 1] of the n glide angles along a feasible interval.

    The grid includes both ends, so grids nest whenever (n - 1) divides (m - 1).
    Seeded draws take a prefix of one stream, so smaller counts nest too.
    """
    if seed is not None:
        return np.random.default_rng(seed).random(n)
    if n == 1:
        return np.zeros(1)
    return np.arange(n) / (n - 1)


@dataclass
class CandidateSet:
    pair: np.ndarray      # index of the owning pair
    gamma: np.ndarray
    branch: np.ndarray    # +1 / -1 / 0, baseline uses 0
    controls: np.ndarray  # (n, 3)

    def __len__(self):
        return self.pair.size


def _streamline_candidates(A, B, C, sign, model: GliderModel, n: int, seed) -> CandidateSet:
    m = A.size
    N = A * A + B * B
    v_min = np.abs(C) / np.sqrt(N)
    lo = np.zeros(m)
    hi = np.zeros(m)
    ok = np.zeros(m, dtype=bool)
    for s in (1, -1):
        sel = sign == s
        if sel.any():
            o, l, h = model.feasible_interval(v_min[sel], s)
            ok[sel], lo[sel], hi[sel] = o, l, h
    frac = unit_fractions(n, seed)
    idx = np.flatnonzero(ok)
    gabs = lo[idx, None] + (hi[idx] - lo[idx])[:, None] * frac[None, :]
    keep = np.ones(gabs.shape, dtype=bool)
    keep[hi[idx] - lo[idx] <= GAMMA_EPS, 1:] = False
    pair = np.broadcast_to(idx[:, None], gabs.shape)[keep]
    gamma = sign[pair] * gabs[keep]
    speed = model.speed(gamma)
    w = speed * np.sin(gamma)
    up, vp, um, vm, root = line_circle(A[pair], B[pair], C[pair], speed * np.cos(gamma))
    good = np.isfinite(root)
    single = good & (root == 0)
    pair_all = np.concatenate([pair[good], pair[good & ~single]])
    gamma_all = np.concatenate([gamma[good], gamma[good & ~single]])
    branch = np.concatenate([np.where(single[good], 0, 1), -np.ones(int((good & ~single).sum()), dtype=int)])
    u = np.concatenate([up[good], um[good & ~single]])
    v = np.concatenate([vp[good], vm[good & ~single]])
    ww = np.concatenate([w[good], w[good & ~single]])
    return CandidateSet(pair_all, gamma_all, branch, np.stack([u, v, ww], axis=-1))


def parameterized_controls(plane: ControlPlane, model: GliderModel, dz_sign: int, n: int,
                           seed: Optional[int] = None) -> list[ControlCandidate]:
    """Controls on both the control surface and the control plane, up to two per glide angle."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    cs = _streamline_candidates(np.array([plane.A]), np.array([plane.B]), np.array([plane.C]),
                                np.array([1 if dz_sign > 0 else -1]), model, n, seed)
    out = []
    for g, br, c in zip(cs.gamma, cs.branch, cs.controls):
        out.append(ControlCandidate(float(g), int(br), math.atan2(c[1], c[0]),
                                    ControlVector(float(c[0]), float(c[1]), float(c[2]))))
    return out


def _baseline_candidates(sign, model: GliderModel, n: int, seed) -> CandidateSet:
    if seed is None:
        gam, _, ctrl = model.sample_control_surface(n)
    else:
        gam, _, ctrl = model.random_control_surface(n, np.random.default_rng(seed))
    pairs, picks = [], []
    for s in (1, -1):
        rows = np.flatnonzero(sign == s)
        cols = np.flatnonzero(np.sign(gam) == s)
        if rows.size and cols.size:
            pairs.append(np.repeat(rows, cols.size))
            picks.append(np.tile(cols, rows.size))
    if not pairs:
        return CandidateSet(np.zeros(0, dtype=int), np.zeros(0), np.zeros(0, dtype=int), np.zeros((0, 3)))
    pair = np.concatenate(pairs)
    pick = np.concatenate(picks)
    order = np.lexsort((pick, pair))
    pair, pick = pair[order], pick[order]
    return CandidateSet(pair, gam[pick], np.zeros(pair.size, dtype=int), ctrl[pick])


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _bounds_array(bounds):
    if bounds is None:
        return np.zeros(6), False
    b = np.asarray(bounds, dtype=float).ravel()
    if b.size != 6:
        raise InvalidInputError(f"bounds must be (xmin, xmax, ymin, ymax, zmin, zmax), got {bounds!r}")
    return b, True


def integrate(field: LayeredField, p0, control, dt: float, steps: int, bounds=None) -> Trajectory:
    """Fixed-step RK4 of ``dp/dt = control + current(p)`` with the control held constant."""
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    p0 = np.asarray(p0, dtype=float)
    ctrl = np.asarray(control, dtype=float)
    if not (np.isfinite(p0).all() and np.isfinite(ctrl).all()):
        raise IntegrationError("non-finite initial state or control")
    b, use = _bounds_array(bounds)
    out, k, exited, _, _ = K.trajectory(field.pack, p0, ctrl, float(dt), int(steps), b, use,
                                        np.zeros(3), 0.0, False)
    if k < 0:
        raise IntegrationError("integration produced a non-finite state")
    return Trajectory(dt * np.arange(k), out[:k].copy(), ControlVector(*map(float, ctrl)), False, bool(exited))


def integrate_to(field: LayeredField, p0, control, target, params: SteerParams):
    """Integrate toward a target and stop after the step entering the tolerance ball.

    Returns ``(trajectory, entry_time, miss_distance)``; entry_time is inf when
    the target is never reached.
    """
    p0 = np.asarray(p0, dtype=float)
    ctrl = np.asarray(control, dtype=float)
    b, use = _bounds_array(params.bounds)
    out, k, exited, entry, miss = K.trajectory(field.pack, p0, ctrl, float(params.dt), int(params.steps),
                                               b, use, np.asarray(target, dtype=float),
                                               float(params.tol), True)
    if k < 0:
        raise IntegrationError("integration produced a non-finite state")
    traj = Trajectory(params.dt * np.arange(k), out[:k].copy(), ControlVector(*map(float, ctrl)),
                      bool(math.isfinite(entry)), bool(exited))
    return traj, float(entry), float(miss)


# ---------------------------------------------------------------------------
# batched steering over many pairs
# ---------------------------------------------------------------------------

@dataclass
class PairOutcome:
    """Per-pair result arrays of one batched steering call."""

    connected: np.ndarray
    infeasible: np.ndarray
    travel_time: np.ndarray
    miss: np.ndarray
    gamma: np.ndarray
    branch: np.ndarray
    controls: np.ndarray
    integrations: int = 0


def pair_planes(field: LayeredField, starts: np.ndarray, goals: np.ndarray):
    """Control-plane coefficients (A, B, C) for many pairs at once."""
    A = goals[:, 1] - starts[:, 1]
    B = -(goals[:, 0] - starts[:, 0])
    C = averaged_stream_values(field, starts, goals)
    return A, B, C


def steer_pairs(field: LayeredField, model: GliderModel, starts: np.ndarray, goals: np.ndarray,
                params: SteerParams, method: str = STREAMLINE, planes=None) -> PairOutcome:
    """Steer every pair ``starts[i] -> goals[i]``; pairs must already be non-degenerate."""
    starts = np.ascontiguousarray(starts, dtype=float)
    goals = np.ascontiguousarray(goals, dtype=float)
    m = starts.shape[0]
    sign = np.where(goals[:, 2] > starts[:, 2], 1, -1)
    infeasible = np.zeros(m, dtype=bool)
    if method == STREAMLINE:
        A, B, C = planes if planes is not None else pair_planes(field, starts, goals)
        v_min = np.abs(C) / np.hypot(A, B)
        infeasible = v_min > model.max_horizontal_speed()[0]
        live = np.flatnonzero(~infeasible)
        cs = _streamline_candidates(A[live], B[live], C[live], sign[live], model,
                                    params.n_controls, params.control_seed)
        cs.pair = live[cs.pair]
    elif method == BASELINE:
        cs = _baseline_candidates(sign, model, params.n_controls, params.control_seed)
    else:
        raise InvalidInputError(f"unknown steering method {method!r}")

    out = PairOutcome(np.zeros(m, dtype=bool), infeasible, np.full(m, np.inf), np.full(m, np.inf),
                      np.full(m, np.nan), np.zeros(m, dtype=int), np.full((m, 3), np.nan), len(cs))
    if len(cs) == 0:
        return out
    b, use = _bounds_array(params.bounds)
    status, times, miss = K.reach_batch(field.pack, starts[cs.pair], np.ascontiguousarray(cs.controls),
                                        goals[cs.pair], float(params.dt), int(params.steps),
                                        float(params.tol), b, use, float(field.speed_bound))
    hit = np.flatnonzero(status == K.REACHED)
    if hit.size == 0:
        return out
    # earliest arrival, then the gentler glide, then the + branch
    branch_rank = np.where(cs.branch[hit] < 0, 1, 0)
    order = np.lexsort((branch_rank, np.abs(cs.gamma[hit]), times[hit], cs.pair[hit]))
    ranked = hit[order]
    first = np.ones(ranked.size, dtype=bool)
    first[1:] = cs.pair[ranked[1:]] != cs.pair[ranked[:-1]]
    win = ranked[first]
    p = cs.pair[win]
    out.connected[p] = True
    out.travel_time[p] = times[win]
    out.miss[p] = miss[win]
    out.gamma[p] = cs.gamma[win]
    out.branch[p] = cs.branch[win]
    out.controls[p] = cs.controls[win]
    return out


def _pair_result(field, model, p_k, p_k1, params, outcome) -> Optional[SteerResult]:
    if not outcome.connected[0]:
        return None
    ctrl = outcome.controls[0]
    traj, entry, miss = integrate_to(field, p_k, ctrl, p_k1, params)
    gamma = float(outcome.gamma[0])
    trim = TrimState(float(model.speed(gamma)), gamma, math.atan2(ctrl[1], ctrl[0]), model.ballast_for(gamma))
    return SteerResult(trim, traj, entry, miss)


def steer(field: LayeredField, model: GliderModel, p_k, p_k1, params: SteerParams = SteerParams(),
          stats: Optional[dict] = None) -> Optional[SteerResult]:
    """Streamline steering for one pair; None when no candidate reaches p_k1.

    ``stats`` (optional dict) receives ``integrations`` and ``feasible``.
    """
    params.validate()
    a, b = _check_pair(p_k, p_k1)
    if np.linalg.norm(b - a) <= params.tol:
        raise DegeneratePairError("positions are closer than the goal tolerance")
    flow = averaged_layer(field, a[2], b[2])
    plane = control_plane(flow, a, b)
    outcome = steer_pairs(field, model, a[None], b[None], params, STREAMLINE,
                          planes=(np.array([plane.A]), np.array([plane.B]), np.array([plane.C])))
    if stats is not None:
        stats["integrations"] = outcome.integrations
        stats["feasible"] = not bool(outcome.infeasible[0])
    return _pair_result(field, model, a, b, params, outcome)


def steer_baseline(field: LayeredField, model: GliderModel, p_k, p_k1, params: SteerParams = SteerParams(),
                   stats: Optional[dict] = None) -> Optional[SteerResult]:
    """Brute-force steering over control-surface samples matching the climb/dive direction."""
    params.validate()
    a, b = _check_pair(p_k, p_k1)
    if np.linalg.norm(b - a) <= params.tol:
        raise DegeneratePairError("positions are closer than the goal tolerance")
    outcome = steer_pairs(field, model, a[None], b[None], params, BASELINE)
    if stats is not None:
        stats["integrations"] = outcome.integrations
    return _pair_result(field, model, a, b, params, outcome)


def control_stream_value(control, a, b) -> float:
    """Stream value of a constant velocity between horizontal points a and b."""
    return (b[1] - a[1]) * control[0] - (b[0] - a[0]) * control[1]
