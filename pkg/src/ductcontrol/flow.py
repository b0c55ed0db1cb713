"""Characteristic flows of the extended advecting fields.

The advecting field is the analytic return field ``y*`` plus an optional
gridded perturbation (time-sampled on the controller grid, linear in time,
bicubic in space).  Integration is classical RK4 in compiled loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import FlowBlowupError, FlushViolationError
from .fields import apply_stencil, bicubic_stencil
from .geometry import Box, DomainSpec, GridSpec, ReturnProfile, plateau


@numba.njit(cache=True, inline="always")
def _step01(s):
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    f0 = np.exp(-1.0 / s)
    f1 = np.exp(-1.0 / (1.0 - s))
    return f0 / (f0 + f1)


@numba.njit(cache=True, inline="always")
def _plateau1(x, lo, hi, r):
    return _step01((x - (lo - r)) / r) * _step01(((hi + r) - x) / r)


@numba.njit(cache=True)
def _gamma(t, prm):
    return prm[0] * _step01((t - prm[1]) / (prm[2] - prm[1])) * _step01((prm[4] - t) / (prm[4] - prm[3]))


@numba.njit(cache=True)
def _velocity(px, py, t, prm, pert):
    return _velocity_g(px, py, t, _gamma(t, prm), prm, pert)


@numba.njit(cache=True)
def _velocity_g(px, py, t, g, prm, pert):
    # prm: M, a, b, c, e, lo1, hi1, lo2, hi2, ramp, x0, y0, hx, hy, dt, has_pert,
    #      support box of the perturbation (x1 lo, x1 hi, x2 lo, x2 hi)
    v1 = 0.0
    if g != 0.0:
        v1 = g * _plateau1(px, prm[5], prm[6], prm[9]) * _plateau1(py, prm[7], prm[8], prm[9])
    v2 = 0.0
    if prm[15] > 0.0:
        nt = pert.shape[0] - 1
        s = t / prm[14]
        n = int(np.floor(s))
        if n < 0:
            n = 0
        elif n > nt - 1:
            n = nt - 1
        w = s - n
        if w < 0.0:
            w = 0.0
        elif w > 1.0:
            w = 1.0
        if px < prm[16] or px > prm[17] or py < prm[18] or py > prm[19]:
            return v1, v2
        i0, j0, wx, wy = bicubic_stencil(pert.shape[2], pert.shape[3], prm[10], prm[11],
                                         prm[12], prm[13], px, py)
        a0 = apply_stencil(pert[n, 0], i0, j0, wx, wy)
        a1 = apply_stencil(pert[n + 1, 0], i0, j0, wx, wy)
        b0 = apply_stencil(pert[n, 1], i0, j0, wx, wy)
        b1 = apply_stencil(pert[n + 1, 1], i0, j0, wx, wy)
        v1 += (1.0 - w) * a0 + w * a1
        v2 += (1.0 - w) * b0 + w * b1
    return v1, v2


@numba.njit(cache=True)
def _blend(pert, t, dt, out):
    """Linear-in-time perturbation at time t, written into out (2, ny, nx)."""
    nt = pert.shape[0] - 1
    s = t / dt
    n = int(np.floor(s))
    if n < 0:
        n = 0
    elif n > nt - 1:
        n = nt - 1
    w = s - n
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    for c in range(2):
        for j in range(pert.shape[2]):
            for i in range(pert.shape[3]):
                out[c, j, i] = (1.0 - w) * pert[n, c, j, i] + w * pert[n + 1, c, j, i]


@numba.njit(cache=True)
def _vel_blended(px, py, g, prm, bl):
    v1 = 0.0
    if g != 0.0:
        v1 = g * _plateau1(px, prm[5], prm[6], prm[9]) * _plateau1(py, prm[7], prm[8], prm[9])
    v2 = 0.0
    if prm[15] > 0.0:
        if px < prm[16] or px > prm[17] or py < prm[18] or py > prm[19]:
            return v1, v2
        i0, j0, wx, wy = bicubic_stencil(bl.shape[1], bl.shape[2], prm[10], prm[11],
                                         prm[12], prm[13], px, py)
        v1 += apply_stencil(bl[0], i0, j0, wx, wy)
        v2 += apply_stencil(bl[1], i0, j0, wx, wy)
    return v1, v2


@numba.njit(cache=True, parallel=True)
def _rk4_step(x, y, hstep, g0, gh, g1, prm, b0, bh, b1, bounds, tol, bad):
    for k in numba.prange(x.shape[0]):
        xk = x[k]
        yk = y[k]
        k1x, k1y = _vel_blended(xk, yk, g0, prm, b0)
        k2x, k2y = _vel_blended(xk + 0.5 * hstep * k1x, yk + 0.5 * hstep * k1y, gh, prm, bh)
        k3x, k3y = _vel_blended(xk + 0.5 * hstep * k2x, yk + 0.5 * hstep * k2y, gh, prm, bh)
        k4x, k4y = _vel_blended(xk + hstep * k3x, yk + hstep * k3y, g1, prm, b1)
        xk = xk + hstep / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        yk = yk + hstep / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        if xk < bounds[0]:
            if bounds[0] - xk > tol:
                bad[k] = 1
            xk = bounds[0]
        elif xk > bounds[1]:
            if xk - bounds[1] > tol:
                bad[k] = 1
            xk = bounds[1]
        if yk < bounds[2]:
            if bounds[2] - yk > tol:
                bad[k] = 1
            yk = bounds[2]
        elif yk > bounds[3]:
            if yk - bounds[3] > tol:
                bad[k] = 1
            yk = bounds[3]
        x[k] = xk
        y[k] = yk


@numba.njit(cache=True)
def _integrate(px, py, t0, t1, nsteps, mid_step, prm, pert, bounds, tol,
               out_x, out_y, mid_x, mid_y):
    """RK4 from t0 to t1 in ``nsteps`` steps; position after ``mid_step`` steps is stored too.

    Returns the number of trajectories that left the bounding box by more than ``tol``.
    """
    n = px.shape[0]
    hstep = (t1 - t0) / nsteps
    bad = np.zeros(n, dtype=np.int64)
    x = px.copy()
    y = py.copy()
    mid_x[:] = px
    mid_y[:] = py
    has = prm[15] > 0.0
    shp = (2, pert.shape[2], pert.shape[3]) if has else (2, 1, 1)
    b0 = np.zeros(shp)
    bh = np.zeros(shp)
    b1 = np.zeros(shp)
    for s in range(nsteps):
        t = t0 + s * hstep
        if has:
            _blend(pert, t, prm[14], b0)
            _blend(pert, t + 0.5 * hstep, prm[14], bh)
            _blend(pert, t + hstep, prm[14], b1)
        _rk4_step(x, y, hstep, _gamma(t, prm), _gamma(t + 0.5 * hstep, prm),
                  _gamma(t + hstep, prm), prm, b0, bh, b1, bounds, tol, bad)
        if s + 1 == mid_step:
            mid_x[:] = x
            mid_y[:] = y
    out_x[:] = x
    out_y[:] = y
    return bad.sum()


def _support_box(pert: np.ndarray, grid: GridSpec) -> tuple[float, float, float, float]:
    """Box outside which the bicubic interpolant of ``pert`` vanishes identically."""
    nz = np.any(pert != 0.0, axis=(0, 1))
    if not nz.any():
        return (1.0, -1.0, 1.0, -1.0)
    rows = np.nonzero(nz.any(axis=1))[0]
    cols = np.nonzero(nz.any(axis=0))[0]
    # a stencil touches nodes up to two cells away
    return (grid.x0 + (cols[0] - 2) * grid.hx, grid.x0 + (cols[-1] + 2) * grid.hx,
            grid.y0 + (rows[0] - 2) * grid.hy, grid.y0 + (rows[-1] + 2) * grid.hy)


@dataclass(frozen=True)
class StepMaps:
    """One-step characteristic maps of every grid node.

    ``back[n]`` is where the node at time ``t_n`` was at ``t_{n-1}`` (n >= 1),
    ``back_mid[n]`` where it was at ``t_{n-1/2}``; ``fwd[n]`` and ``fwd_mid[n]``
    are the arrivals at ``t_{n+1}`` and ``t_{n+1/2}`` (n <= nt-1).  Arrays
    have shape (nt+1, 2, ny+1, nx+1); unused end slices hold the identity.
    """
    back: np.ndarray
    back_mid: np.ndarray
    fwd: np.ndarray
    fwd_mid: np.ndarray


class FlowMap:
    """Flow Z(x, s, t) of y* plus an optional gridded perturbation on Omega_3."""

    def __init__(self, grid: GridSpec, profile: ReturnProfile,
                 perturbation: np.ndarray | None = None, substeps: int = 4):
        self.grid = grid
        self.profile = profile
        self.substeps = int(substeps)
        support = (grid.x0, grid.x0 + grid.nx * grid.hx, grid.y0, grid.y0 + grid.ny * grid.hy)
        if perturbation is None:
            pert = np.zeros((2, 2, 2, 2))
            has = 0.0
        else:
            pert = np.ascontiguousarray(perturbation, dtype=float)
            if pert.shape != (grid.nt + 1, 2) + grid.shape:
                raise ValueError(f"perturbation shape {pert.shape} does not match the grid")
            has = 1.0
            support = _support_box(pert, grid)
        self.perturbation = pert
        a, b, c, e = profile.t_ramp
        lo1, hi1, lo2, hi2, ramp = profile.chi_boxes
        self._prm = np.array([profile.M, a, b, c, e, lo1, hi1, lo2, hi2, ramp,
                              grid.x0, grid.y0, grid.hx, grid.hy, grid.dt, has, *support])
        self._bounds = np.array([grid.x0, grid.x0 + grid.nx * grid.hx,
                                 grid.y0, grid.y0 + grid.ny * grid.hy])
        self._steps: StepMaps | None = None

    @property
    def dt_flow(self) -> float:
        return self.grid.dt / self.substeps

    def velocity(self, points: np.ndarray, t: float) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.array([_velocity(p[0], p[1], float(t), self._prm, self.perturbation) for p in pts])
        return out.reshape(np.shape(points))

    def _run(self, pts: np.ndarray, s: float, t: float, nsteps: int, mid_step: int = 0):
        flat = np.asarray(pts, dtype=float).reshape(-1, 2)
        px = np.ascontiguousarray(flat[:, 0])
        py = np.ascontiguousarray(flat[:, 1])
        ox, oy = np.empty_like(px), np.empty_like(py)
        mx, my = np.empty_like(px), np.empty_like(py)
        if nsteps == 0:
            return flat.copy(), flat.copy()
        nbad = _integrate(px, py, float(s), float(t), int(nsteps), int(mid_step), self._prm,
                          self.perturbation, self._bounds, self.grid.h, ox, oy, mx, my)
        if nbad:
            raise FlowBlowupError(f"{nbad} trajectories left Omega_3 by more than h")
        return np.stack([ox, oy], axis=-1), np.stack([mx, my], axis=-1)

    def integrate(self, points: np.ndarray, s: float, t: float) -> np.ndarray:
        """Z(x, s, t) for an array of points (..., 2)."""
        points = np.asarray(points, dtype=float)
        if s == t:
            return points.copy()
        nsteps = max(1, int(np.ceil(abs(t - s) / self.dt_flow - 1e-9)))
        end, _ = self._run(points, s, t, nsteps)
        return end.reshape(points.shape)

    def step_maps(self) -> StepMaps:
        """One-step departure and arrival points of all grid nodes (cached)."""
        if self._steps is not None:
            return self._steps
        g = self.grid
        X, Y = g.mesh()
        nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
        ident = np.stack([X, Y])
        shape = (g.nt + 1, 2) + g.shape
        back = np.empty(shape)
        back_mid = np.empty(shape)
        fwd = np.empty(shape)
        fwd_mid = np.empty(shape)
        back[0] = back_mid[0] = ident
        fwd[g.nt] = fwd_mid[g.nt] = ident
        sub = self.substeps
        half = sub // 2 if sub % 2 == 0 else 0
        if not half:
            raise ValueError("substeps must be even to resolve half steps")
        times = g.times
        for n in range(1, g.nt + 1):
            end, mid = self._run(nodes, times[n], times[n - 1], sub, half)
            back[n] = end.T.reshape((2,) + g.shape)
            back_mid[n] = mid.T.reshape((2,) + g.shape)
        for n in range(g.nt):
            end, mid = self._run(nodes, times[n], times[n + 1], sub, half)
            fwd[n] = end.T.reshape((2,) + g.shape)
            fwd_mid[n] = mid.T.reshape((2,) + g.shape)
        self._steps = StepMaps(back, back_mid, fwd, fwd_mid)
        return self._steps


def integrate_flow(fmap: FlowMap, x, s: float, t: float) -> np.ndarray:
    return fmap.integrate(np.asarray(x, dtype=float), s, t)


def box_nodes(grid: GridSpec, box: Box) -> np.ndarray:
    sub = grid.subgrid(box)
    X, Y = sub.mesh()
    return np.stack([X.ravel(), Y.ravel()], axis=-1)


def flush_check(fmap: FlowMap, domain: DomainSpec) -> tuple[bool, float]:
    """Do all closed-Omega_2 seeds leave closed Omega_2 by t = 1?

    Returns the verdict and min over seeds of x1(Z(x,0,1)) - (L + l).
    """
    seeds = box_nodes(fmap.grid, domain.omega2)
    end = fmap.integrate(seeds, 0.0, 1.0)
    lo1, hi1, lo2, hi2 = domain.omega2
    eps = 1e-12
    inside = ((end[:, 0] >= lo1 - eps) & (end[:, 0] <= hi1 + eps)
              & (end[:, 1] >= lo2 - eps) & (end[:, 1] <= hi2 + eps))
    margin = float(np.min(end[:, 0]) - hi1)
    return bool(not inside.any()), margin


def _dist_to_box(pts: np.ndarray, box: Box) -> np.ndarray:
    dx = np.maximum(np.maximum(box[0] - pts[:, 0], pts[:, 0] - box[1]), 0.0)
    dy = np.maximum(np.maximum(box[2] - pts[:, 1], pts[:, 1] - box[3]), 0.0)
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class OriginSets:
    """Backward images of Omega_1 and the cutoff that equals one around them.

    ``chi_tilde`` is a tensor plateau: one on ``box`` (the bounding box of
    both origin sets inflated by 2h), zero on Omega_2 and beyond the ramps.
    """
    O_plus: np.ndarray
    O_minus: np.ndarray
    box: Box
    ramp_x: float
    ramp_y: float
    distance: float
    cover_error: float

    def chi_tilde(self, x1, x2):
        b = self.box
        return plateau(x1, b[0], b[1], self.ramp_x) * plateau(x2, b[2], b[3], self.ramp_y)

    def contains(self, pts: np.ndarray) -> bool:
        b = self.box
        return bool(np.all((pts[:, 0] >= b[0]) & (pts[:, 0] <= b[1])
                           & (pts[:, 1] >= b[2]) & (pts[:, 1] <= b[3])))


def origin_sets(map_plus: FlowMap, map_minus: FlowMap, domain: DomainSpec,
                check_cover: bool = True) -> OriginSets:
    grid = map_plus.grid
    seeds = box_nodes(grid, domain.omega1)
    O_p = map_plus.integrate(seeds, 1.0, 0.0)
    O_m = map_minus.integrate(seeds, 1.0, 0.0)
    both = np.concatenate([O_p, O_m])
    d = _dist_to_box(both, domain.omega2)
    if np.any(d <= 0.0):
        raise FlushViolationError("an origin set meets the closure of Omega_2")
    h = grid.h
    box = (float(both[:, 0].min() - 2 * h), float(both[:, 0].max() + 2 * h),
           float(both[:, 1].min() - 2 * h), float(both[:, 1].max() + 2 * h))
    box_dist = float(np.min(_dist_to_box(np.array([[box[0], box[2]], [box[0], box[3]],
                                                   [box[1], box[2]], [box[1], box[3]]]),
                                         domain.omega2)))
    o2 = domain.omega2
    # ramps must end before Omega_2 in every direction where the box is outside it
    gaps = []
    if box[1] < o2[0]:
        gaps.append(o2[0] - box[1])
    if box[0] > o2[1]:
        gaps.append(box[0] - o2[1])
    if box[3] < o2[2]:
        gaps.append(o2[2] - box[3])
    if box[2] > o2[3]:
        gaps.append(box[2] - o2[3])
    if not gaps or max(gaps) <= 0:
        raise FlushViolationError("inflated origin box is not separated from Omega_2")
    ramp = 0.999 * max(gaps)
    cover = 0.0
    if check_cover:
        back_p = map_plus.integrate(O_p, 0.0, 1.0)
        back_m = map_minus.integrate(O_m, 0.0, 1.0)
        cover = float(max(np.max(np.abs(back_p - seeds)), np.max(np.abs(back_m - seeds))))
    return OriginSets(O_p, O_m, box, ramp, ramp, float(np.min(d)), cover)


def jacobian_deviation(fmap: FlowMap, domain: DomainSpec, t: float = 1.0,
                       seeds: np.ndarray | None = None, eps: float | None = None) -> float:
    """max |det DZ(., 0, t) - 1| by centred differences at the seeds."""
    grid = fmap.grid
    if seeds is None:
        seeds = box_nodes(grid, domain.omega)
    eps = grid.h / 4 if eps is None else eps
    offs = np.array([[eps, 0.0], [-eps, 0.0], [0.0, eps], [0.0, -eps]])
    pts = seeds[:, None, :] + offs[None, :, :]
    end = fmap.integrate(pts.reshape(-1, 2), 0.0, t).reshape(pts.shape)
    dZdx = (end[:, 0] - end[:, 1]) / (2 * eps)
    dZdy = (end[:, 2] - end[:, 3]) / (2 * eps)
    det = dZdx[:, 0] * dZdy[:, 1] - dZdx[:, 1] * dZdy[:, 0]
    return float(np.max(np.abs(det - 1.0)))
