"""Trim-state glider model.

In a trim state the glider holds a constant glide angle ``gamma`` (positive
climbing), heading ``delta`` and ballast, and moves through the water at the
steady speed ``V_G(gamma)``.  Its velocity relative to the water, the control
vector, is ``V_G (cos g cos d, cos g sin d, sin g)``.  Admissible glide angles
are ``[gmin, gmax]`` on the climbing branch and ``[-gmax, -gmin]`` diving.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import GlideAngleError, InvalidInputError, ModelConfigError

SCAN_POINTS = 4097


class ControlVector(NamedTuple):
    u: float
    v: float
    w: float


@dataclass(frozen=True)
class TrimState:
    speed: float      # V_G, m/s
    gamma: float      # glide angle, rad
    heading: float    # delta, rad
    ballast: float    # kg; 0 is the buoyant state

    def to_dict(self) -> dict:
        return {"speed": self.speed, "gamma_deg": math.degrees(self.gamma),
                "heading_deg": math.degrees(self.heading), "ballast_kg": self.ballast}


@dataclass(frozen=True)
class HydroSpeedLaw:
    """Steady glide speed from the net buoyant mass and lift/drag laws.

    ``V_G^2 = m0 g / (-D(gamma) sin(gamma) + L(gamma) cos(gamma))``.  Both
    polynomials are given as ascending coefficients in ``|gamma|`` (radians);
    the drag polynomial is the drag magnitude and the lift polynomial the lift
    magnitude, whose sign opposes the glide direction (negative lift when
    climbing).  ``m0`` is negative in the buoyant state and positive when heavy.
    """

    m0_buoyant: float
    m0_heavy: float
    lift_poly: tuple[float, ...]
    drag_poly: tuple[float, ...]
    g: float = 9.81

    def denominator(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        a = np.abs(gamma)
        lift = -np.sign(gamma) * np.polynomial.polynomial.polyval(a, self.lift_poly)
        drag = np.polynomial.polynomial.polyval(a, self.drag_poly)
        return -drag * np.sin(gamma) + lift * np.cos(gamma)

    def numerator(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return np.where(gamma > 0, self.m0_buoyant, self.m0_heavy) * self.g

    def speed(self, gamma):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(self.numerator(gamma) / self.denominator(gamma))

    def to_dict(self) -> dict:
        return {"hydro": {"m0_buoyant_kg": self.m0_buoyant, "m0_heavy_kg": self.m0_heavy,
                          "g": self.g, "lift_poly": list(self.lift_poly),
                          "drag_poly": list(self.drag_poly)}}


@dataclass(frozen=True, eq=False)
class TabulatedSpeedLaw:
    """Speed curve through sampled ``(gamma, V_G)`` pairs, PCHIP-interpolated.

    If every sampled angle is non-negative the curve is used for both branches.
    """

    gamma: np.ndarray
    speed_samples: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        s = np.asarray(self.speed_samples, dtype=float)
        order = np.argsort(g)
        g, s = g[order], s[order]
        if g.size < 2 or np.any(np.diff(g) <= 0):
            raise ModelConfigError("speed table needs at least two distinct glide angles")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ModelConfigError("speed table entries must be finite and positive")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "speed_samples", s)

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.gamma, self.speed_samples, extrapolate=True)

    @property
    def symmetric(self) -> bool:
        return bool(self.gamma[0] >= 0)

    def speed(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        arg = np.abs(gamma) if self.symmetric else gamma
        return self._interp(arg)

    def to_dict(self) -> dict:
        return {"table": [[math.degrees(g), s] for g, s in zip(self.gamma, self.speed_samples)]}


class GliderModel:
    """Immutable glider model: glide-angle bounds, ballast states and a speed law."""

    def __init__(self, gamma_min: float, gamma_max: float, law, ballast_max: float = 1.0):
        if not (0 < gamma_min < gamma_max < math.pi / 2):
            raise ModelConfigError(
                f"need 0 < gamma_min < gamma_max < pi/2, got {gamma_min}, {gamma_max}")
        if ballast_max <= 0:
            raise ModelConfigError(f"ballast_max must be positive, got {ballast_max}")
        self.gamma_min = float(gamma_min)
        self.gamma_max = float(gamma_max)
        self.ballast_max = float(ballast_max)
        self.law = law
        self._tables = {+1: self._branch_table(+1), -1: self._branch_table(-1)}

    def _branch_table(self, sign: int):
        a = np.linspace(self.gamma_min, self.gamma_max, SCAN_POINTS)
        gam = sign * a
        if isinstance(self.law, HydroSpeedLaw):
            num = self.law.numerator(gam)
            den = self.law.denominator(gam)
            if np.any(num == 0) or np.any(np.sign(den) != np.sign(num)):
                raise ModelConfigError(
                    f"{'climb' if sign > 0 else 'dive'} branch: lift/drag denominator "
                    "does not share the sign of the buoyancy term over the glide-angle range")
        speed = self.law.speed(gam)
        if not np.all(np.isfinite(speed)) or np.any(speed <= 0):
            raise ModelConfigError("glide speed must be finite and positive over the glide-angle range")
        w = speed * np.cos(a)
        peak = int(np.argmax(w))
        # refine the peak of V_G cos(gamma) between its neighbouring scan points
        lo = a[max(peak - 1, 0)]
        hi = a[min(peak + 1, a.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda t: -float(self._horizontal(sign * t)), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-13})
            if -res.fun > w[peak]:
                a = np.insert(a, np.searchsorted(a, res.x), res.x)
                w = self.law.speed(sign * a) * np.cos(a)
                peak = int(np.argmax(w))
        rising, falling = w[:peak + 1], w[peak:]
        slack = 1e-12 * w[peak]
        if np.any(np.diff(rising) < -slack) or np.any(np.diff(falling) > slack):
            raise ModelConfigError("horizontal glide speed must be unimodal in |gamma| on each branch")
        return a, w, peak

    def _horizontal(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return self.law.speed(gamma) * np.cos(gamma)

    # -- domain ------------------------------------------------------------

    def in_domain(self, gamma) -> np.ndarray:
        a = np.abs(np.asarray(gamma, dtype=float))
        return (a >= self.gamma_min) & (a <= self.gamma_max)

    def _check_gamma(self, gamma: float):
        if not math.isfinite(gamma):
            raise InvalidInputError(f"non-finite glide angle {gamma!r}")
        if not self.in_domain(gamma):
            raise GlideAngleError(
                f"glide angle {math.degrees(gamma):.4g} deg outside "
                f"+-[{math.degrees(self.gamma_min):.4g}, {math.degrees(self.gamma_max):.4g}] deg")

    def ballast_for(self, gamma: float) -> float:
        """Ballast mass matching the glide direction: empty to climb, full to dive."""
        return 0.0 if gamma > 0 else self.ballast_max

    # -- speed -------------------------------------------------------------

    def speed(self, gamma):
        """Vectorised V_G for glide angles already known to be admissible."""
        return self.law.speed(gamma)

    def glider_speed(self, gamma: float, ballast: float | None = None) -> float:
        self._check_gamma(gamma)
        if ballast is not None and ballast != self.ballast_for(gamma):
            raise GlideAngleError(
                f"ballast {ballast} kg cannot hold glide angle {math.degrees(gamma):.4g} deg")
        return float(self.law.speed(gamma))

    def horizontal_speed(self, gamma):
        return self._horizontal(gamma)

    @cached_property
    def _max_horizontal(self) -> tuple[float, float]:
        best = None
        for sign, (a, w, peak) in self._tables.items():
            cand = (float(w[peak]), sign * float(a[peak]))
            # prefer the climbing branch on exact ties
            if best is None or cand[0] > best[0]:
                best = cand
        return best

    def max_horizontal_speed(self) -> tuple[float, float]:
        """(V*, gamma*): the largest horizontal glide speed and the angle achieving it."""
        return self._max_horizontal

    def branch_max_horizontal_speed(self, sign: int) -> float:
        a, w, peak = self._tables[1 if sign > 0 else -1]
        return float(w[peak])

    @cached_property
    def max_speed(self) -> float:
        """Largest through-water speed over all admissible glide angles."""
        return max(float(np.max(self.law.speed(s * a))) for s, (a, _, _) in self._tables.items())

    # -- controls ----------------------------------------------------------

    def control_vector(self, gamma: float, delta: float) -> ControlVector:
        self._check_gamma(gamma)
        if not math.isfinite(delta):
            raise InvalidInputError(f"non-finite heading {delta!r}")
        v = float(self.law.speed(gamma))
        return ControlVector(v * math.cos(gamma) * math.cos(delta),
                             v * math.cos(gamma) * math.sin(delta),
                             v * math.sin(gamma))

    def control_vectors(self, gamma, delta) -> np.ndarray:
        """Vectorised control vectors, shape (n, 3)."""
        gamma = np.asarray(gamma, dtype=float)
        delta = np.asarray(delta, dtype=float)
        v = self.law.speed(gamma)
        h = v * np.cos(gamma)
        return np.stack([h * np.cos(delta), h * np.sin(delta), v * np.sin(gamma)], axis=-1)

    def trim(self, gamma: float, delta: float) -> TrimState:
        self._check_gamma(gamma)
        return TrimState(float(self.law.speed(gamma)), float(gamma), float(delta),
                         self.ballast_for(gamma))

    def feasible_interval(self, v_min, sign: int):
        """|gamma| interval on one branch where V_G cos(gamma) >= v_min.

        Returns ``(ok, lo, hi)`` arrays; ``lo``/``hi`` are only meaningful where
        ``ok``.  Endpoints are bisected to machine precision and always lie on the
        feasible side.
        """
        a, w, peak = self._tables[1 if sign > 0 else -1]
        sgn = 1.0 if sign > 0 else -1.0
        v_min = np.atleast_1d(np.asarray(v_min, dtype=float))
        ok = v_min <= w[peak]
        lo = np.full(v_min.shape, a[0])
        hi = np.full(v_min.shape, a[-1])

        def bisect(feas, infeas):
            for _ in range(60):
                mid = 0.5 * (feas + infeas)
                good = self._horizontal(sgn * mid) >= v_min_sub
                feas = np.where(good, mid, feas)
                infeas = np.where(good, infeas, mid)
            return feas

        need = ok & (w[0] < v_min)
        if need.any():
            v_min_sub = v_min[need]
            k = np.searchsorted(w[:peak + 1], v_min_sub, side="left")
            lo[need] = bisect(a[k], a[k - 1])
        need = ok & (w[-1] < v_min)
        if need.any():
            v_min_sub = v_min[need]
            # falling part reversed is non-decreasing
            rev = w[peak:][::-1]
            k = np.searchsorted(rev, v_min_sub, side="left")
            idx = a.size - 1 - k  # feasible node on the falling side
            hi[need] = bisect(a[idx], a[idx + 1])
        return ok, lo, hi

    # -- control-surface sampling ------------------------------------------

    def surface_grid_shape(self, n: int) -> tuple[int, int]:
        """(rows, cols) with rows * cols = n, aspect closest to the parameter extents."""
        target = (2 * math.pi) / (2 * (self.gamma_max - self.gamma_min))
        best = None
        for rows in range(1, n + 1):
            if n % rows:
                continue
            cols = n // rows
            score = abs(math.log((cols / rows) / target))
            if best is None or score < best[0] - 1e-12:
                best = (score, rows, cols)
        return best[1], best[2]

    def gamma_from_unit(self, s):
        """Map s in [0, 1) over the concatenated climb-then-dive angle set."""
        s = np.asarray(s, dtype=float)
        span = self.gamma_max - self.gamma_min
        t = 2.0 * s * span
        climb = t < span
        return np.where(climb, self.gamma_min + t, -(self.gamma_min + (t - span)))

    def sample_control_surface(self, n: int):
        """Deterministic near-uniform grid over (gamma, delta).

        Returns ``(gamma, delta, controls)`` with ``controls`` of shape (n, 3).
        """
        if n < 1:
            raise InvalidInputError(f"need at least one control sample, got {n}")
        rows, cols = self.surface_grid_shape(n)
        gam = self.gamma_from_unit(np.arange(rows) / rows)
        dlt = 2 * math.pi * np.arange(cols) / cols
        gg, dd = np.meshgrid(gam, dlt, indexing="ij")
        gg, dd = gg.ravel(), dd.ravel()
        return gg, dd, self.control_vectors(gg, dd)

    def random_control_surface(self, n: int, rng: np.random.Generator):
        """Uniform random (gamma, delta) draws; a prefix of a longer draw for the same seed."""
        if n < 1:
            raise InvalidInputError(f"need at least one control sample, got {n}")
        u = rng.random((n, 2))
        gg = self.gamma_from_unit(u[:, 0])
        dd = 2 * math.pi * u[:, 1]
        return gg, dd, self.control_vectors(gg, dd)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {"gamma_min_deg": math.degrees(self.gamma_min),
             "gamma_max_deg": math.degrees(self.gamma_max),
             "ballast_max_kg": self.ballast_max}
        d.update(self.law.to_dict())
        return d

    def __repr__(self):
        v, g = self.max_horizontal_speed()
        return (f"GliderModel(gamma=[{math.degrees(self.gamma_min):.3g}, "
                f"{math.degrees(self.gamma_max):.3g}] deg, V*={v:.4g} m/s at {math.degrees(g):.3g} deg)")


def model_from_dict(doc: dict) -> GliderModel:
    try:
        gmin = math.radians(float(doc.get("gamma_min_deg", 15.0)))
        gmax = math.radians(float(doc.get("gamma_max_deg", 45.0)))
        ballast = float(doc.get("ballast_max_kg", 1.0))
    except (TypeError, ValueError) as exc:
        raise ModelConfigError(f"bad model bounds ({exc})") from None
    if ("table" in doc) == ("hydro" in doc):
        raise ModelConfigError("model needs exactly one of 'table' or 'hydro'")
    if "table" in doc:
        try:
            tab = np.asarray(doc["table"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelConfigError(f"bad speed table ({exc})") from None
        if tab.ndim != 2 or tab.shape[1] != 2:
            raise ModelConfigError("speed table must be a list of [gamma_deg, speed_mps] pairs")
        law = TabulatedSpeedLaw(np.radians(tab[:, 0]), tab[:, 1])
    else:
        h = doc["hydro"]
        try:
            law = HydroSpeedLaw(float(h["m0_buoyant_kg"]), float(h["m0_heavy_kg"]),
                                tuple(float(c) for c in h["lift_poly"]),
                                tuple(float(c) for c in h["drag_poly"]),
                                float(h.get("g", 9.81)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelConfigError(f"bad hydro block ({exc})") from None
    return GliderModel(gmin, gmax, law, ballast)


def load_model(source) -> GliderModel:
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelConfigError(f"{source}: {exc}") from None
        return model_from_dict(doc)
    return model_from_dict(source)


def default_model() -> GliderModel:
    """Bundled glider calibrated to a peak horizontal speed near 0.9 m/s."""
    text = resources.files("streamglide.data").joinpath("default_glider.json").read_text()
    return model_from_dict(json.loads(text))


def constant_speed_model(speed: float = 1.0, gamma_min: float = math.radians(15),
                         gamma_max: float = math.radians(45)) -> GliderModel:
    """Model whose through-water speed is the same at every glide angle."""
    law = TabulatedSpeedLaw(np.array([0.0, math.pi / 2]), np.array([speed, speed]))
    return GliderModel(gamma_min, gamma_max, law)
