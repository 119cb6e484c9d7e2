"""Compiled inner loops: layered-field evaluation and RK4 forward integration.

Fields are flattened into a ``FieldPack`` of plain arrays so that numba can
evaluate them without Python objects.  Every public evaluator in the package
goes through these functions, which keeps the batched roadmap integration and
single-trajectory re-integration arithmetically identical.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

UNIFORM = 0
VORTEX = 1
RANKINE = 2
GYRE = 3
JET = 4

LAYER_ANALYTIC = 0
LAYER_GRID = 1

N_PARAMS = 6

# status codes returned by reach_batch
REACHED = 0
MISSED = 1
EXITED = 2
PRUNED = 3

TWO_PI = 2.0 * math.pi


class FieldPack(NamedTuple):
    layer_z: np.ndarray       # (L,) ascending
    layer_kind: np.ndarray    # (L,) int64
    comp_start: np.ndarray    # (L+1,) int64, component slice per layer
    comp_kind: np.ndarray     # (M,) int64
    comp_par: np.ndarray      # (M, N_PARAMS)
    grid_geom: np.ndarray     # (L, 4) x0, y0, dx, dy
    grid_shape: np.ndarray    # (L, 2) int64 nx, ny
    grid_off: np.ndarray      # (L,) int64 offset into grid_u / grid_v
    grid_u: np.ndarray
    grid_v: np.ndarray
    gl_nodes: np.ndarray      # Gauss-Legendre nodes on [-1, 1]
    gl_weights: np.ndarray


@njit(cache=True, nogil=True, inline="always")
def _component_velocity(kind, P, c, x, y):
    if kind == UNIFORM:
        return P[c, 0], P[c, 1]
    dx = x - P[c, 0]
    dy = y - P[c, 1]
    if kind == VORTEX:
        rc = P[c, 3]
        k = P[c, 2] / (TWO_PI * (dx * dx + dy * dy + rc * rc))
        return -k * dy, k * dx
    if kind == RANKINE:
        r2 = dx * dx + dy * dy
        big_r2 = P[c, 3] * P[c, 3]
        k = P[c, 2] / (TWO_PI * max(r2, big_r2))
        return -k * dy, k * dx
    if kind == GYRE:
        kx = P[c, 3]
        ky = P[c, 4]
        sx = math.sin(kx * dx)
        cx = math.cos(kx * dx)
        sy = math.sin(ky * dy)
        cy = math.cos(ky * dy)
        return P[c, 2] * ky * sx * cy, -P[c, 2] * kx * cx * sy
    # JET: along-jet unit vector (cos, sin), cross-jet coordinate n; sech^2 via one exp
    ca = P[c, 4]
    sa = P[c, 5]
    e = math.exp(-2.0 * abs(-sa * dx + ca * dy) / P[c, 3])
    s = P[c, 2] * 4.0 * e / ((1.0 + e) * (1.0 + e))
    return s * ca, s * sa


@njit(cache=True, nogil=True)
def _component_stream(kind, p, x, y):
    if kind == UNIFORM:
        return p[0] * y - p[1] * x
    dx = x - p[0]
    dy = y - p[1]
    if kind == VORTEX:
        return -p[2] / (2.0 * TWO_PI) * math.log(dx * dx + dy * dy + p[3] * p[3])
    if kind == RANKINE:
        r2 = dx * dx + dy * dy
        big_r2 = p[3] * p[3]
        if r2 < big_r2:
            return -p[2] * r2 / (2.0 * TWO_PI * big_r2)
        return -p[2] / (2.0 * TWO_PI) * (math.log(r2 / big_r2) + 1.0)
    if kind == GYRE:
        return p[2] * math.sin(p[3] * dx) * math.sin(p[4] * dy)
    n = -p[5] * dx + p[4] * dy
    return p[2] * p[3] * math.tanh(n / p[3])


@njit(cache=True, nogil=True, inline="always")
def _grid_at(gg, gs, go, gu, gv, li, x, y):
    nx = gs[li, 0]
    ny = gs[li, 1]
    fx = (x - gg[li, 0]) / gg[li, 2]
    fy = (y - gg[li, 1]) / gg[li, 3]
    # clamp to the grid: boundary values extend outward
    fx = min(max(fx, 0.0), nx - 1.0)
    fy = min(max(fy, 0.0), ny - 1.0)
    i = min(int(math.floor(fx)), nx - 2)
    j = min(int(math.floor(fy)), ny - 2)
    tx = fx - i
    ty = fy - j
    a = go[li] + i * ny + j
    b = a + ny
    w00 = (1.0 - tx) * (1.0 - ty)
    w01 = (1.0 - tx) * ty
    w10 = tx * (1.0 - ty)
    w11 = tx * ty
    u = w00 * gu[a] + w01 * gu[a + 1] + w10 * gu[b] + w11 * gu[b + 1]
    v = w00 * gv[a] + w01 * gv[a + 1] + w10 * gv[b] + w11 * gv[b + 1]
    return u, v


@njit(cache=True, nogil=True, inline="always")
def _layer_at(lk, cs, ck, cp, gg, gs, go, gu, gv, li, x, y):
    if lk[li] == LAYER_GRID:
        return _grid_at(gg, gs, go, gu, gv, li, x, y)
    u = 0.0
    v = 0.0
    for c in range(cs[li], cs[li + 1]):
        cu, cv = _component_velocity(ck[c], cp, c, x, y)
        u += cu
        v += cv
    return u, v


@njit(cache=True, nogil=True, inline="always")
def _velocity_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x, y, z):
    n = lz.shape[0]
    if n == 1:
        return _layer_at(lk, cs, ck, cp, gg, gs, go, gu, gv, 0, x, y)
    if z <= lz[0]:
        i = 0
        t = 0.0
    elif z >= lz[n - 1]:
        i = n - 2
        t = 1.0
    else:
        i = 0
        while lz[i + 1] < z:
            i += 1
        t = (z - lz[i]) / (lz[i + 1] - lz[i])
    u0, v0 = _layer_at(lk, cs, ck, cp, gg, gs, go, gu, gv, i, x, y)
    u1, v1 = _layer_at(lk, cs, ck, cp, gg, gs, go, gu, gv, i + 1, x, y)
    return (1.0 - t) * u0 + t * u1, (1.0 - t) * v0 + t * v1


@njit(cache=True, nogil=True, inline="always")
def _grid_velocity(pk, li, x, y):
    return _grid_at(pk.grid_geom, pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v, li, x, y)


@njit(cache=True, nogil=True, inline="always")
def layer_velocity(pk, li, x, y):
    return _layer_at(pk.layer_kind, pk.comp_start, pk.comp_kind, pk.comp_par, pk.grid_geom,
                     pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v, li, x, y)


@njit(cache=True, nogil=True)
def layer_stream_value(pk, li, ax, ay, bx, by):
    if pk.layer_kind[li] == LAYER_GRID:
        ddx = bx - ax
        ddy = by - ay
        mx = 0.5 * (ax + bx)
        my = 0.5 * (ay + by)
        acc = 0.0
        for q in range(pk.gl_nodes.shape[0]):
            s = 0.5 * pk.gl_nodes[q]
            u, v = _grid_velocity(pk, li, mx + s * ddx, my + s * ddy)
            acc += pk.gl_weights[q] * (u * ddy - v * ddx)
        return 0.5 * acc
    psi = 0.0
    for c in range(pk.comp_start[li], pk.comp_start[li + 1]):
        k = pk.comp_kind[c]
        p = pk.comp_par[c]
        psi += _component_stream(k, p, bx, by) - _component_stream(k, p, ax, ay)
    return psi


@njit(cache=True, nogil=True, inline="always")
def depth_bracket(pk, z):
    """Return (lower layer index, upper weight) for linear depth interpolation."""
    zs = pk.layer_z
    n = zs.shape[0]
    if n == 1 or z <= zs[0]:
        return 0, 0.0
    if z >= zs[n - 1]:
        return n - 2, 1.0
    i = 0
    while zs[i + 1] < z:
        i += 1
    return i, (z - zs[i]) / (zs[i + 1] - zs[i])


@njit(cache=True, nogil=True, inline="always")
def velocity(pk, x, y, z):
    return _velocity_at(pk.layer_z, pk.layer_kind, pk.comp_start, pk.comp_kind, pk.comp_par,
                        pk.grid_geom, pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v, x, y, z)


@njit(cache=True, nogil=True)
def stream_value_at(pk, ax, ay, bx, by, z):
    i, t = depth_bracket(pk, z)
    if pk.layer_z.shape[0] == 1:
        return layer_stream_value(pk, 0, ax, ay, bx, by)
    s0 = layer_stream_value(pk, i, ax, ay, bx, by)
    s1 = layer_stream_value(pk, i + 1, ax, ay, bx, by)
    return (1.0 - t) * s0 + t * s1


@njit(cache=True, nogil=True)
def velocity_many(pk, x, y, z):
    n = x.shape[0]
    u = np.empty(n)
    v = np.empty(n)
    for k in range(n):
        u[k], v[k] = velocity(pk, x[k], y[k], z[k])
    return u, v


@njit(cache=True, nogil=True)
def averaged_velocity_many(pk, x, y, za, zb):
    n = x.shape[0]
    u = np.empty(n)
    v = np.empty(n)
    for k in range(n):
        ua, va = velocity(pk, x[k], y[k], za)
        ub, vb = velocity(pk, x[k], y[k], zb)
        u[k] = 0.5 * (ua + ub)
        v[k] = 0.5 * (va + vb)
    return u, v


@njit(cache=True, nogil=True)
def averaged_stream_many(pk, ax, ay, bx, by, za, zb):
    """Stream value of the two-depth averaged flow for each segment a->b."""
    n = ax.shape[0]
    out = np.empty(n)
    for k in range(n):
        sa = stream_value_at(pk, ax[k], ay[k], bx[k], by[k], za[k])
        sb = stream_value_at(pk, ax[k], ay[k], bx[k], by[k], zb[k])
        out[k] = 0.5 * (sa + sb)
    return out


@njit(cache=True, nogil=True, inline="always")
def _rk4_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x, y, z, cu, cv, cw, dt):
    h = 0.5 * dt
    k1u, k1v = _velocity_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x, y, z)
    k1u += cu
    k1v += cv
    k2u, k2v = _velocity_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x + h * k1u, y + h * k1v, z + h * cw)
    k2u += cu
    k2v += cv
    k3u, k3v = _velocity_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x + h * k2u, y + h * k2v, z + h * cw)
    k3u += cu
    k3v += cv
    k4u, k4v = _velocity_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x + dt * k3u, y + dt * k3v, z + dt * cw)
    k4u += cu
    k4v += cv
    nx = x + dt * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
    ny = y + dt * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
    return nx, ny, z + dt * cw


@njit(cache=True, nogil=True, inline="always")
def rk4_step(pk, x, y, z, cu, cv, cw, dt):
    return _rk4_at(pk.layer_z, pk.layer_kind, pk.comp_start, pk.comp_kind, pk.comp_par, pk.grid_geom,
                   pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v, x, y, z, cu, cv, cw, dt)


@njit(cache=True, nogil=True, inline="always")
def _outside(bounds, x, y, z):
    return (x < bounds[0] or x > bounds[1] or y < bounds[2] or y > bounds[3]
            or z < bounds[4] or z > bounds[5])


@njit(cache=True, nogil=True, inline="always")
def _segment_probe(px, py, pz, qx, qy, qz, tx, ty, tz, tol):
    """Closest distance of segment p->q to t, and first fraction s where it enters the tol-ball (or -1)."""
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    fx = px - tx
    fy = py - ty
    fz = pz - tz
    a = dx * dx + dy * dy + dz * dz
    b = fx * dx + fy * dy + fz * dz
    c = fx * fx + fy * fy + fz * fz
    if a > 0.0:
        s = min(max(-b / a, 0.0), 1.0)
    else:
        s = 0.0
    cx = fx + s * dx
    cy = fy + s * dy
    cz = fz + s * dz
    dmin = math.sqrt(cx * cx + cy * cy + cz * cz)
    c -= tol * tol
    if c <= 0.0:
        return dmin, 0.0
    if a == 0.0 or b >= 0.0:
        return dmin, -1.0
    disc = b * b - a * c
    if disc < 0.0:
        return dmin, -1.0
    s_in = (-b - math.sqrt(disc)) / a
    if s_in > 1.0:
        return dmin, -1.0
    return dmin, s_in


@njit(cache=True, nogil=True)
def reach_one(pk, p0, ctrl, tgt, dt, steps, tol, bounds, use_bounds, flow_bound):
    """Integrate one control toward a target; stop at first entry of the tol-ball.

    Returns (status, entry_time, miss_distance, steps_taken).  Trajectories are
    cut short once the depth window or a reachability bound rules out entry;
    neither cut can discard a trajectory that would have entered.
    """
    lz, lk, cs, ck, cp = pk.layer_z, pk.layer_kind, pk.comp_start, pk.comp_kind, pk.comp_par
    gg, gs, go, gu, gv = pk.grid_geom, pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v
    x, y, z = p0[0], p0[1], p0[2]
    cu, cv, cw = ctrl[0], ctrl[1], ctrl[2]
    tx, ty, tz = tgt[0], tgt[1], tgt[2]
    n_max = steps
    if cw != 0.0:
        t_lo = (abs(tz - z) - tol) / abs(cw)
        if t_lo > steps * dt:
            return PRUNED, math.inf, math.inf, 0
        t_hi = (abs(tz - z) + tol) / abs(cw)
        n_max = min(steps, int(math.ceil(t_hi / dt)) + 1)
    else:
        t_hi = steps * dt
    ground_bound = math.sqrt(cu * cu + cv * cv) + flow_bound
    best = math.inf
    for j in range(n_max):
        nx, ny, nz = _rk4_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x, y, z, cu, cv, cw, dt)
        if not (math.isfinite(nx) and math.isfinite(ny)):
            return MISSED, math.inf, math.nan, j
        dmin, s_in = _segment_probe(x, y, z, nx, ny, nz, tx, ty, tz, tol)
        if dmin < best:
            best = dmin
        if s_in >= 0.0:
            # the box is convex, so an entry point inside it means the path stayed inside
            if use_bounds and _outside(bounds, x + s_in * (nx - x), y + s_in * (ny - y), z + s_in * (nz - z)):
                return EXITED, math.inf, best, j + 1
            return REACHED, (j + s_in) * dt, best, j + 1
        if use_bounds and _outside(bounds, nx, ny, nz):
            return EXITED, math.inf, best, j + 1
        x, y, z = nx, ny, nz
        hx = x - tx
        hy = y - ty
        remaining = t_hi - (j + 1) * dt
        if math.sqrt(hx * hx + hy * hy) - tol > remaining * ground_bound * (1.0 + 1e-9) + 1e-9:
            return PRUNED, math.inf, best, j + 1
    return MISSED, math.inf, best, n_max


@njit(cache=True, nogil=True)
def reach_batch(pk, p0, ctrl, tgt, dt, steps, tol, bounds, use_bounds, flow_bound):
    n = p0.shape[0]
    status = np.empty(n, dtype=np.int64)
    times = np.empty(n)
    miss = np.empty(n)
    for k in range(n):
        st, t, m, _ = reach_one(pk, p0[k], ctrl[k], tgt[k], dt, steps, tol,
                                bounds, use_bounds, flow_bound)
        status[k] = st
        times[k] = t
        miss[k] = m
    return status, times, miss


@njit(cache=True, nogil=True)
def trajectory(pk, p0, ctrl, dt, steps, bounds, use_bounds, tgt, tol, has_target):
    """Record RK4 samples from p0.

    Stops on bounds exit, or (with a target) after the step that first enters
    the tol-ball.  Returns (samples, n_samples, exited, entry_time, miss).
    """
    lz, lk, cs, ck, cp = pk.layer_z, pk.layer_kind, pk.comp_start, pk.comp_kind, pk.comp_par
    gg, gs, go, gu, gv = pk.grid_geom, pk.grid_shape, pk.grid_off, pk.grid_u, pk.grid_v
    out = np.empty((steps + 1, 3))
    x, y, z = p0[0], p0[1], p0[2]
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = z
    cu, cv, cw = ctrl[0], ctrl[1], ctrl[2]
    best = math.inf
    entry = math.inf
    exited = False
    k = 1
    for j in range(steps):
        nx, ny, nz = _rk4_at(lz, lk, cs, ck, cp, gg, gs, go, gu, gv, x, y, z, cu, cv, cw, dt)
        if not (math.isfinite(nx) and math.isfinite(ny)):
            return out, -1, exited, entry, best
        out[k, 0] = nx
        out[k, 1] = ny
        out[k, 2] = nz
        k += 1
        if has_target:
            dmin, s_in = _segment_probe(x, y, z, nx, ny, nz,
                                        tgt[0], tgt[1], tgt[2], tol)
            if dmin < best:
                best = dmin
            if s_in >= 0.0:
                if use_bounds and _outside(bounds, x + s_in * (nx - x), y + s_in * (ny - y),
                                           z + s_in * (nz - z)):
                    exited = True
                    break
                entry = (j + s_in) * dt
                break
        if use_bounds and _outside(bounds, nx, ny, nz):
            exited = True
            break
        x, y, z = nx, ny, nz
    return out, k, exited, entry, best
