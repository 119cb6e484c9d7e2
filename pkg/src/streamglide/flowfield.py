"""Depth-layered horizontal current fields.

A field is a stack of horizontal layers at fixed heights ``z`` (positive up,
so the sea surface is ``z = 0`` and deeper layers have negative ``z``).  Each
layer is either a superposition of analytic incompressible flows with a
closed-form stream function, or a regular grid of ``(u, v)`` samples.  The
vertical current is always zero.  Between two layers the velocity varies
linearly with ``z``; outside the layer span it is clamped to the nearest
layer.  Grids are bilinear horizontally and clamp to their boundary values.

Stream values follow the convention ``u = dpsi/dy``, ``v = -dpsi/dx`` so that
``psi(a, b) = integral_a^b (u dy - v dx)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels as K
from .errors import DegeneratePairError, FieldLoadError, InvalidInputError

GAUSS_ORDER = 32
ANALYTIC_DIVERGENCE_TOL = 1e-6
GRID_DIVERGENCE_TOL = 1e-3
DEFAULT_EXTENT = (-1000.0, 1000.0, -1000.0, 1000.0)


# ---------------------------------------------------------------------------
# analytic planar components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    """Constant current ``(u, v)`` in m/s."""

    u: float
    v: float

    def _pack(self):
        return K.UNIFORM, (self.u, self.v)

    def speed_bound(self) -> float:
        return math.hypot(self.u, self.v)


@dataclass(frozen=True)
class Vortex:
    """Smooth vortex with an algebraic core.

    Tangential speed ``strength * r / (2 pi (r^2 + radius^2))``, peaking at
    ``r = radius``.  ``strength`` is the far-field circulation in m^2/s;
    positive values turn counter-clockwise.
    """

    centre: tuple[float, float]
    strength: float
    radius: float

    def _pack(self):
        return K.VORTEX, (self.centre[0], self.centre[1], self.strength, self.radius)

    def speed_bound(self) -> float:
        return abs(self.strength) / (4.0 * math.pi * self.radius)


@dataclass(frozen=True)
class Rankine:
    """Rankine vortex: solid-body rotation inside ``radius``, potential vortex outside."""

    centre: tuple[float, float]
    strength: float
    radius: float

    def _pack(self):
        return K.RANKINE, (self.centre[0], self.centre[1], self.strength, self.radius)

    def speed_bound(self) -> float:
        return abs(self.strength) / (2.0 * math.pi * self.radius)


@dataclass(frozen=True)
class Gyre:
    """Cellular gyre ``psi = A sin(pi X / Lx) sin(pi Y / Ly)`` about ``centre``.

    ``speed`` is the peak of ``|u|``.
    """

    centre: tuple[float, float]
    size: tuple[float, float]
    speed: float

    @property
    def wavenumbers(self) -> tuple[float, float]:
        return math.pi / self.size[0], math.pi / self.size[1]

    @property
    def amplitude(self) -> float:
        return self.speed / self.wavenumbers[1]

    def _pack(self):
        kx, ky = self.wavenumbers
        return K.GYRE, (self.centre[0], self.centre[1], self.amplitude, kx, ky)

    def speed_bound(self) -> float:
        return abs(self.amplitude) * math.hypot(*self.wavenumbers)


@dataclass(frozen=True)
class Jet:
    """Straight jet with a sech^2 cross-stream profile.

    ``heading`` (radians, from +x) is the flow direction through ``centre``;
    ``width`` is the e-folding half width of the profile.
    """

    centre: tuple[float, float]
    speed: float
    width: float
    heading: float

    def _pack(self):
        return K.JET, (self.centre[0], self.centre[1], self.speed, self.width,
                       math.cos(self.heading), math.sin(self.heading))

    def speed_bound(self) -> float:
        return abs(self.speed)


Component = Union[Uniform, Vortex, Rankine, Gyre, Jet]


@dataclass(frozen=True, eq=False)
class GridFlow:
    """Regular grid of velocity samples; ``u[i, j]`` sits at ``origin + (i dx, j dy)``."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=float)
        v = np.ascontiguousarray(self.v, dtype=float)
        if u.ndim != 2 or u.shape != v.shape:
            raise FieldLoadError(f"grid u/v must be 2-D with equal shapes, got {u.shape} and {v.shape}")
        if min(u.shape) < 2:
            raise FieldLoadError(f"grid needs at least 2 samples per axis, got shape {u.shape}")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise FieldLoadError(f"grid spacing must be positive, got {self.spacing}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise FieldLoadError("grid contains non-finite samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        nx, ny = self.shape
        x0, y0 = self.origin
        return (x0, x0 + (nx - 1) * self.spacing[0], y0, y0 + (ny - 1) * self.spacing[1])

    def speed_bound(self) -> float:
        # bilinear weights are convex, so node magnitudes bound the interpolant
        return float(np.sqrt(self.u ** 2 + self.v ** 2).max())

    def cell_divergence(self) -> np.ndarray:
        """Divergence of the bilinear interpolant at every cell centre."""
        dx, dy = self.spacing
        u, v = self.u, self.v
        dudx = ((u[1:, :-1] - u[:-1, :-1]) + (u[1:, 1:] - u[:-1, 1:])) / (2 * dx)
        dvdy = ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / (2 * dy)
        return dudx + dvdy

    @classmethod
    def sample(cls, flow, origin, spacing, shape) -> "GridFlow":
        """Sample an analytic planar flow (or a sequence of components) onto a grid."""
        probe = LayeredField([Layer(0.0, flow)])
        nx, ny = shape
        xs = origin[0] + spacing[0] * np.arange(nx)
        ys = origin[1] + spacing[1] * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        u, v = probe.velocity(gx.ravel(), gy.ravel(), np.zeros(gx.size))
        return cls(tuple(origin), tuple(spacing), u.reshape(shape), v.reshape(shape))


def superposition(components: Iterable) -> tuple:
    """Sum of analytic components; nested superpositions are flattened."""
    out = []
    for c in components:
        if isinstance(c, (tuple, list)):
            out.extend(superposition(c))
        elif isinstance(c, GridFlow):
            raise FieldLoadError("grid layers cannot be superposed with analytic components")
        else:
            out.append(c)
    return tuple(out)


def uniform(u: float, v: float) -> Uniform:
    return Uniform(float(u), float(v))


def vortex(centre, strength: float, radius: float) -> Vortex:
    if radius <= 0:
        raise FieldLoadError(f"vortex radius must be positive, got {radius}")
    return Vortex((float(centre[0]), float(centre[1])), float(strength), float(radius))


def rankine(centre, strength: float, radius: float) -> Rankine:
    if radius <= 0:
        raise FieldLoadError(f"rankine radius must be positive, got {radius}")
    return Rankine((float(centre[0]), float(centre[1])), float(strength), float(radius))


def gyre(centre, size, speed: float) -> Gyre:
    if size[0] <= 0 or size[1] <= 0:
        raise FieldLoadError(f"gyre size must be positive, got {size}")
    return Gyre((float(centre[0]), float(centre[1])), (float(size[0]), float(size[1])), float(speed))


def jet(centre, speed: float, width: float, heading: float) -> Jet:
    if width <= 0:
        raise FieldLoadError(f"jet width must be positive, got {width}")
    return Jet((float(centre[0]), float(centre[1])), float(speed), float(width), float(heading))


# ---------------------------------------------------------------------------
# layered field
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Layer:
    z: float
    flow: object  # a component, a tuple of components, or a GridFlow

    @property
    def is_grid(self) -> bool:
        return isinstance(self.flow, GridFlow)

    @property
    def components(self) -> tuple:
        if self.is_grid:
            return ()
        if isinstance(self.flow, (tuple, list)):
            return superposition(self.flow)
        return (self.flow,)

    def speed_bound(self) -> float:
        if self.is_grid:
            return self.flow.speed_bound()
        return sum(c.speed_bound() for c in self.components)


class LayeredField:
    """Immutable horizontal current field over a stack of depth layers."""

    def __init__(self, layers: Sequence[Layer], extent=None, check=True):
        if not layers:
            raise FieldLoadError("a field needs at least one layer")
        zs = [float(layer.z) for layer in layers]
        if not all(math.isfinite(z) for z in zs):
            raise FieldLoadError("layer depths must be finite")
        order = np.argsort(zs, kind="stable")
        ordered = [layers[i] for i in order]
        for lo, hi in zip(ordered, ordered[1:]):
            if lo.z == hi.z:
                raise FieldLoadError(f"duplicate layer depth z={lo.z}")
        self.layers: tuple[Layer, ...] = tuple(ordered)
        if extent is None:
            grids = [l.flow.extent for l in self.layers if l.is_grid]
            if grids:
                g = np.array(grids)
                extent = (g[:, 0].min(), g[:, 1].max(), g[:, 2].min(), g[:, 3].max())
            else:
                extent = DEFAULT_EXTENT
        self.extent = tuple(float(e) for e in extent)
        self.pack = self._build_pack()
        if check:
            for i, layer in enumerate(self.layers):
                if layer.is_grid:
                    div = np.abs(layer.flow.cell_divergence())
                    worst = np.unravel_index(np.argmax(div), div.shape)
                    if div[worst] > GRID_DIVERGENCE_TOL:
                        raise FieldLoadError(
                            f"layer z={layer.z}: divergence {div[worst]:.3g} 1/s at cell {tuple(int(w) for w in worst)} "
                            f"exceeds {GRID_DIVERGENCE_TOL:g}")

    def _build_pack(self) -> K.FieldPack:
        L = len(self.layers)
        kinds = np.zeros(L, dtype=np.int64)
        starts = [0]
        comp_kind, comp_par = [], []
        geom = np.zeros((L, 4))
        shape = np.zeros((L, 2), dtype=np.int64)
        offs = np.zeros(L, dtype=np.int64)
        gu, gv = [], []
        total = 0
        for i, layer in enumerate(self.layers):
            if layer.is_grid:
                g = layer.flow
                kinds[i] = K.LAYER_GRID
                geom[i] = (g.origin[0], g.origin[1], g.spacing[0], g.spacing[1])
                shape[i] = g.shape
                offs[i] = total
                gu.append(g.u.ravel())
                gv.append(g.v.ravel())
                total += g.u.size
            else:
                for c in layer.components:
                    kind, par = c._pack()
                    row = np.zeros(K.N_PARAMS)
                    row[:len(par)] = par
                    comp_kind.append(kind)
                    comp_par.append(row)
            starts.append(len(comp_kind))
        nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
        return K.FieldPack(
            layer_z=np.array([l.z for l in self.layers], dtype=float),
            layer_kind=kinds,
            comp_start=np.array(starts, dtype=np.int64),
            comp_kind=np.array(comp_kind, dtype=np.int64),
            comp_par=np.array(comp_par, dtype=float).reshape(-1, K.N_PARAMS),
            grid_geom=geom,
            grid_shape=shape,
            grid_off=offs,
            grid_u=np.concatenate(gu) if gu else np.zeros(1),
            grid_v=np.concatenate(gv) if gv else np.zeros(1),
            gl_nodes=nodes,
            gl_weights=weights,
        )

    def __getstate__(self):
        return {"layers": self.layers, "extent": self.extent}

    def __setstate__(self, state):
        self.__init__(state["layers"], state["extent"], check=False)

    @property
    def depths(self) -> np.ndarray:
        return self.pack.layer_z

    @property
    def is_analytic(self) -> bool:
        return not any(l.is_grid for l in self.layers)

    @property
    def is_depth_uniform(self) -> bool:
        return len(self.layers) == 1

    @cached_property
    def speed_bound(self) -> float:
        """Upper bound on the current speed anywhere (m/s)."""
        return max(l.speed_bound() for l in self.layers)

    def velocity(self, x, y, z):
        """Vectorised current ``(u, v)`` at points ``(x, y, z)``."""
        x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
        shp = x.shape
        u, v = K.velocity_many(self.pack, x.ravel().copy(), y.ravel().copy(), z.ravel().copy())
        return u.reshape(shp), v.reshape(shp)

    def stream_value(self, a, b, z: float) -> float:
        """Stream value between horizontal points a and b on the slice at height z."""
        return float(K.stream_value_at(self.pack, float(a[0]), float(a[1]),
                                       float(b[0]), float(b[1]), float(z)))

    def __repr__(self):
        return f"LayeredField(z={list(self.depths)}, analytic={self.is_analytic})"


def layered(layers: Iterable, extent=None) -> LayeredField:
    """Build a field from ``(z, flow)`` pairs."""
    return LayeredField([Layer(float(z), f) for z, f in layers], extent=extent)


def _finite_point(p, n) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (n,) or not np.isfinite(arr).all():
        raise InvalidInputError(f"expected {n} finite coordinates, got {p!r}")
    return arr


def eval_flow(field: LayeredField, p) -> tuple[float, float]:
    """Current ``(u_c, v_c)`` at a 3-D position; the vertical component is zero."""
    x, y, z = _finite_point(p, 3)
    u, v = K.velocity(field.pack, x, y, z)
    return float(u), float(v)


# ---------------------------------------------------------------------------
# planar (depth-averaged) flows
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlanarFlow:
    """Horizontal flow obtained by averaging the field at two heights."""

    field: LayeredField
    z_a: float
    z_b: float

    def velocity(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        shp = x.shape
        u, v = K.averaged_velocity_many(self.field.pack, x.ravel().copy(), y.ravel().copy(),
                                        float(self.z_a), float(self.z_b))
        return u.reshape(shp), v.reshape(shp)

    def stream_value(self, a, b) -> float:
        a = _finite_point(a, 2)
        b = _finite_point(b, 2)
        return float(self.stream_values(a[None], b[None])[0])

    def stream_values(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Vectorised stream values for segment arrays of shape (n, 2)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        n = a.shape[0]
        return K.averaged_stream_many(self.field.pack, a[:, 0].copy(), a[:, 1].copy(),
                                      b[:, 0].copy(), b[:, 1].copy(),
                                      np.full(n, float(self.z_a)), np.full(n, float(self.z_b)))


def averaged_layer(field: LayeredField, z_a: float, z_b: float) -> PlanarFlow:
    """Average of the two horizontal slices at heights z_a and z_b."""
    if not (math.isfinite(z_a) and math.isfinite(z_b)):
        raise InvalidInputError(f"non-finite depths {z_a!r}, {z_b!r}")
    if z_a == z_b:
        raise DegeneratePairError(f"averaging needs two distinct heights, got z={z_a} twice")
    return PlanarFlow(field, float(z_a), float(z_b))


def depth_slice(field: LayeredField, z: float) -> PlanarFlow:
    """The horizontal flow at a single height."""
    return PlanarFlow(field, float(z), float(z))


def stream_value(flow: PlanarFlow, a, b) -> float:
    return flow.stream_value(a, b)


def averaged_stream_values(field: LayeredField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stream values of the per-pair averaged flow between 3-D points a[i] and b[i].

    Each pair uses the average of the slices at its own two heights.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return K.averaged_stream_many(field.pack, a[:, 0].copy(), a[:, 1].copy(),
                                  b[:, 0].copy(), b[:, 1].copy(),
                                  a[:, 2].copy(), b[:, 2].copy())


def divergence_report(field: LayeredField, probes: int, seed: int = 0, h: float | None = None,
                      extent=None) -> np.ndarray:
    """Maximum |du/dx + dv/dy| per layer from central differences at random probes.

    Layers are returned in ascending-z order, matching ``field.layers``.
    """
    if probes < 1:
        raise InvalidInputError(f"probes must be >= 1, got {probes}")
    x0, x1, y0, y1 = extent or field.extent
    rng = np.random.default_rng(seed)
    px = rng.uniform(x0, x1, probes)
    py = rng.uniform(y0, y1, probes)
    if h is None:
        grids = [min(l.flow.spacing) for l in field.layers if l.is_grid]
        h = 1e-3 * min(grids) if grids else 1e-2
    out = np.empty(len(field.layers))
    for i, layer in enumerate(field.layers):
        z = np.full(probes, layer.z)
        up, _ = field.velocity(px + h, py, z)
        um, _ = field.velocity(px - h, py, z)
        _, vp = field.velocity(px, py + h, z)
        _, vm = field.velocity(px, py - h, z)
        div = (up - um) / (2 * h) + (vp - vm) / (2 * h)
        out[i] = np.abs(div).max()
    return out


# ---------------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------------

_COMPONENT_KEYS = {
    "uniform": ("u", "v"),
    "vortex": ("centre", "strength", "radius"),
    "rankine": ("centre", "strength", "radius"),
    "gyre": ("centre", "size", "speed"),
    "jet": ("centre", "speed", "width", "heading_deg"),
}


def _component_from_dict(d: dict, where: str):
    if not isinstance(d, dict):
        raise FieldLoadError(f"{where}: expected an object, got {type(d).__name__}")
    kind = d.get("kind")
    if kind == "superposition":
        parts = d.get("components")
        if not isinstance(parts, list) or not parts:
            raise FieldLoadError(f"{where}: superposition needs a non-empty 'components' list")
        return superposition(_component_from_dict(c, f"{where}.components[{i}]")
                             for i, c in enumerate(parts))
    if kind not in _COMPONENT_KEYS:
        raise FieldLoadError(f"{where}: unknown kind {kind!r}")
    missing = [k for k in _COMPONENT_KEYS[kind] if k not in d]
    if missing:
        raise FieldLoadError(f"{where}: {kind} is missing {missing}")
    try:
        if kind == "uniform":
            return uniform(d["u"], d["v"])
        if kind == "vortex":
            return vortex(d["centre"], d["strength"], d["radius"])
        if kind == "rankine":
            return rankine(d["centre"], d["strength"], d["radius"])
        if kind == "gyre":
            return gyre(d["centre"], d["size"], d["speed"])
        return jet(d["centre"], d["speed"], d["width"], math.radians(d["heading_deg"]))
    except FieldLoadError as exc:
        raise FieldLoadError(f"{where}: {exc}") from None
    except (TypeError, IndexError, ValueError) as exc:
        raise FieldLoadError(f"{where}: bad {kind} parameters ({exc})") from None


def _grid_from_dict(d: dict, where: str) -> GridFlow:
    for key in ("origin", "spacing", "shape", "u", "v"):
        if key not in d:
            raise FieldLoadError(f"{where}: grid layer is missing {key!r}")
    try:
        nx, ny = (int(s) for s in d["shape"])
        u = np.asarray(d["u"], dtype=float)
        v = np.asarray(d["v"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FieldLoadError(f"{where}: bad grid data ({exc})") from None
    if u.size != nx * ny or v.size != nx * ny:
        raise FieldLoadError(f"{where}: shape {[nx, ny]} needs {nx * ny} samples, got u={u.size}, v={v.size}")
    try:
        return GridFlow(tuple(map(float, d["origin"])), tuple(map(float, d["spacing"])),
                        u.reshape(nx, ny), v.reshape(nx, ny))
    except FieldLoadError as exc:
        raise FieldLoadError(f"{where}: {exc}") from None


def field_from_dict(doc: dict) -> LayeredField:
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list) or not doc["layers"]:
        raise FieldLoadError("field document needs a non-empty 'layers' list")
    layers = []
    prev = None
    for i, entry in enumerate(doc["layers"]):
        where = f"layers[{i}]"
        if not isinstance(entry, dict) or "depth" not in entry:
            raise FieldLoadError(f"{where}: missing 'depth'")
        z = entry["depth"]
        if not isinstance(z, (int, float)) or not math.isfinite(z):
            raise FieldLoadError(f"{where}: depth must be a finite number")
        if prev is not None and not z < prev:
            raise FieldLoadError(f"{where}: depth {z} must be strictly below the previous layer ({prev})")
        prev = z
        if entry.get("kind", "grid") == "grid" and "u" in entry:
            flow = _grid_from_dict(entry, where)
        else:
            flow = _component_from_dict(entry, where)
        layers.append(Layer(float(z), flow))
    extent = doc.get("extent")
    if extent is not None:
        try:
            (x0, x1), (y0, y1) = extent
            extent = (x0, x1, y0, y1)
        except (TypeError, ValueError):
            raise FieldLoadError("extent must be [[xmin, xmax], [ymin, ymax]]") from None
    try:
        return LayeredField(layers, extent=extent)
    except FieldLoadError as exc:
        raise FieldLoadError(f"{exc}") from None


def load_field(source) -> LayeredField:
    """Load a layered field from a JSON path or an already-parsed document."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FieldLoadError(f"{path}: {exc}") from None
        try:
            return field_from_dict(doc)
        except FieldLoadError as exc:
            raise FieldLoadError(f"{path}: {exc}") from None
    return field_from_dict(source)
