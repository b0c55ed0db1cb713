"""Post-hoc checks on stored trajectories: residuals, energy and transport estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elsasser import advect, coupling_g_unstructured, time_derivative, to_elsasser
from .fields import curl_array, d1, d2, holder_norm_array, interpolate_stack
from .flow import FlowMap, box_nodes
from .geometry import GridSpec

RES_FACTOR = 50.0


@dataclass
class CheckRow:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)

    def add(self, name: str, value: float, threshold: float, passed: bool | None = None) -> CheckRow:
        ok = bool(value <= threshold) if passed is None else bool(passed)
        row = CheckRow(name, float(value), float(threshold), ok)
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def table(self) -> str:
        w = max([len(r.name) for r in self.rows] + [5])
        lines = [f"{'check':<{w}}  {'value':>12}  {'threshold':>12}  result"]
        for r in self.rows:
            lines.append(f"{r.name:<{w}}  {r.value:12.4e}  {r.threshold:12.4e}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def res_tol(h: float, dt: float, scale: float, factor: float = RES_FACTOR) -> float:
    return factor * (h**2 + dt**2) * scale


@dataclass
class Residual:
    per_slice: np.ndarray   # (n,) max over both components / equations
    max: float
    scale: float
    tol: float
    edge: float = 0.0       # diagnostic only: the ring left out of ``max``

    @property
    def passed(self) -> bool:
        return self.max <= self.tol


def _inner(a: np.ndarray, k: int = 1) -> np.ndarray:
    return a[..., k:-k, k:-k]


def residual_curled(zp: np.ndarray, zm: np.ndarray, grid: GridSpec, dt: float,
                    factor: float = RES_FACTOR) -> Residual:
    """max |d_t j + (z' . grad) j - g| on the duct interior, j = curl z, for both signs.

    ``zp``, ``zm`` have shape (nt+1, 2, ny, nx) on the duct grid ``grid``.
    The scale is the size of the largest balanced term.  grad j next to a
    wall reads j on the wall, itself a one-sided curl, so the nested stencil
    is central only two nodes in; the first ring is reported as ``edge``.
    """
    hx, hy = grid.hx, grid.hy
    per = np.zeros(zp.shape[0])
    scale = edge = 0.0
    for sign, a, b in ((1, zp, zm), (-1, zm, zp)):
        j = curl_array(a, hx, hy)
        jt = time_derivative(j, dt)
        adv = b[:, 0] * d1(j, hx) + b[:, 1] * d2(j, hy)
        g = coupling_g_unstructured(zp, zm, hx, hy, sign)
        r = np.abs(jt + adv - g)
        per = np.maximum(per, _inner(r, 2).max(axis=(-1, -2)))
        edge = max(edge, float(_inner(r).max()))
        scale = max(scale, *(float(np.abs(_inner(x, 2)).max()) for x in (jt, adv, g)))
    return Residual(per, float(per.max()), scale, res_tol(grid.h, dt, scale, factor), edge)


def residual_mhd_arrays(u: np.ndarray, H: np.ndarray, p: np.ndarray, q: np.ndarray, mu: float,
                        grid: GridSpec, dt: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-slice momentum and induction residuals (with grad q) and the balance scale."""
    hx, hy = grid.hx, grid.hy
    ut, Ht = time_derivative(u, dt), time_derivative(H, dt)
    uu, HH = advect(u, u, hx, hy), advect(H, H, hx, hy)
    uH, Hu = advect(u, H, hx, hy), advect(H, u, hx, hy)
    gp = np.stack([d1(p, hx), d2(p, hy)], axis=1)
    gq = np.stack([d1(q, hx), d2(q, hy)], axis=1)
    mom = ut + uu - mu * HH + gp
    ind = Ht + uH - Hu + gq
    rm = np.linalg.norm(_inner(mom), axis=1).max(axis=(-1, -2))
    ri = np.linalg.norm(_inner(ind), axis=1).max(axis=(-1, -2))
    scale = max(float(np.abs(_inner(x)).max()) for x in (ut, Ht, uu, mu * HH, uH, Hu, gp))
    return rm, ri, scale


def residual_mhd(traj, factor: float = RES_FACTOR) -> dict:
    """Residuals of every segment of a ControlTrajectory on its own time grid.

    The time step entering the tolerance is the segment's step relative to
    its length, which makes the check invariant under the time scaling of
    the legs.  Two-slice padding segments are checked directly for zero.
    """
    g = traj.grid
    out = {}
    for seg in traj.segments:
        if seg.n < 3:
            mx = max(float(np.abs(a).max()) for a in (seg.u, seg.H, seg.p, seg.q))
            out[seg.name] = Residual(np.full(seg.n, mx), mx, 0.0, 0.0)
            continue
        dt = float(seg.times[1] - seg.times[0])
        rm, ri, scale = residual_mhd_arrays(seg.u, seg.H, seg.p, seg.q, traj.mu, g, dt)
        per = np.maximum(rm, ri)
        rel_dt = dt / float(seg.times[-1] - seg.times[0])
        out[seg.name] = Residual(per, float(per.max()), scale, res_tol(g.h, rel_dt, scale, factor))
    return out


# -- energy estimate ----------------------------------------------------------------------

def _l2sq(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    wx = np.full(v.shape[-1], grid.hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(v.shape[-2], grid.hy)
    wy[[0, -1]] *= 0.5
    return np.einsum("...ij,i,j->...", v**2, wy, wx).reshape(v.shape[0], -1).sum(axis=1)


@dataclass
class EnergyReport:
    e: np.ndarray
    envelope: np.ndarray
    c1: float
    min_slack: float
    threshold: float
    roundoff: float
    passed: bool
    trace_mismatch: float = 0.0  # max difference of the runs on the controlled walls


def uniqueness_energy_check(run1: tuple, run2: tuple, grid: GridSpec, dt: float,
                            rel_slack: float = 0.05, ulp_factor: float = 64.0) -> EnergyReport:
    """Discrete Groenwall inequality e(t) <= 2 K int_0^t e + e(0) for the difference of two runs.

    ``run1``, ``run2`` are (z+, z-) trajectory pairs; K is the largest C^1
    sup-norm (value plus first derivatives) of the second run.  Energies
    below the round-off floor (ulp_factor * machine eps * max|z|)^2 |Omega|
    cannot be resolved and are not held against the inequality.

    The inequality presumes both runs share their inflow traces on the
    controlled walls; ``trace_mismatch`` reports how far that holds.
    """
    e = sum(_l2sq(a - b, grid) for a, b in zip(run1, run2))
    c1, zmax = 0.0, 0.0
    for z in run2:
        grads = [np.abs(d1(z, grid.hx)), np.abs(d2(z, grid.hy))]
        zmax = max(zmax, float(np.abs(z).max()))
        c1 = max(c1, float(np.abs(z).max() + max(x.max() for x in grads)))
    area = (grid.x[-1] - grid.x[0]) * (grid.y[-1] - grid.y[0])
    roundoff = (ulp_factor * np.finfo(float).eps * zmax) ** 2 * area
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (e[1:] + e[:-1]))])
    env = 2.0 * c1 * cum + e[0]
    slack = env - e
    thr = -(rel_slack * float(np.max(env)) + roundoff)
    ms = float(slack.min())
    trace = max(float(np.abs(a[..., [0, -1]] - b[..., [0, -1]]).max()) for a, b in zip(run1, run2))
    return EnergyReport(e, env, c1, ms, thr, roundoff, bool(ms >= thr), trace)


# -- transport and composition estimates ----------------------------------------------------

@dataclass
class TransportEstimate:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    groenwall_observed: float
    passed: bool


def grid_velocity(fmap: FlowMap) -> np.ndarray:
    """Advecting field of a flow map sampled on its grid, (nt+1, 2, ny, nx)."""
    g = fmap.grid
    pts = box_nodes(g, (g.x[0], g.x[-1], g.y[0], g.y[-1]))
    return np.stack([fmap.velocity(pts, t).T.reshape((2,) + g.shape) for t in g.times])


def transport_estimate_check(v: np.ndarray, z: np.ndarray, g_src: np.ndarray | None, grid: GridSpec,
                             alpha: float = 0.5, n_samples: int = 8) -> TransportEstimate:
    """||v(t)||_{0,a} <= (int_0^t ||g||_{0,a} + ||v(0)||_{0,a}) exp(a int_0^t ||z||_{1,a}).

    Evaluated at ``n_samples`` equally spaced slices.  The observed Groenwall
    exponent is the smallest constant c with lhs <= (...) exp(c int ||z||).
    """
    hx, hy, dt = grid.hx, grid.hy, grid.dt
    nv = holder_norm_array(v, hx, hy, 0, alpha)
    nz = holder_norm_array(z, hx, hy, 1, alpha, vector=True)
    ng = np.zeros_like(nv) if g_src is None else holder_norm_array(g_src, hx, hy, 0, alpha)

    def cumtrap(f):
        return np.concatenate([[0.0], np.cumsum(0.5 * dt * (f[1:] + f[:-1]))])

    Iz, Ig = cumtrap(nz), cumtrap(ng)
    idx = np.unique(np.linspace(0, v.shape[0] - 1, n_samples).round().astype(int))
    base = Ig[idx] + nv[0]
    lhs = nv[idx]
    rhs = base * np.exp(alpha * Iz[idx])
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where((Iz[idx] > 0) & (base > 0), np.log(np.maximum(lhs, 1e-300) / base) / Iz[idx], 0.0)
    return TransportEstimate(grid.times[idx], lhs, rhs, float(np.max(c)), bool(np.all(lhs <= rhs * (1 + 1e-12))))


@dataclass
class CompositionEstimate:
    sigmas: np.ndarray
    ratio: np.ndarray
    bound: np.ndarray
    passed: bool


def composition_check(G: np.ndarray, fmap: FlowMap, alpha: float = 0.5, n_samples: int = 8,
                      box=None) -> CompositionEstimate:
    """||G(Z(.,0,s), s)||_{0,a} <= (1 + Lip(Z)^a) ||G(., s)||_{0,a} at sampled s.

    The composed field is sampled on the nodes of ``box`` (default: the grid
    box shrunk by a quarter of each side so images stay inside the grid).
    """
    g = fmap.grid
    if box is None:
        ex, ey = 0.25 * (g.x[-1] - g.x[0]), 0.25 * (g.y[-1] - g.y[0])
        box = (g.x[0] + ex, g.x[-1] - ex, g.y[0] + ey, g.y[-1] - ey)
    rows, cols = g.index_box(box)
    sub = g.subgrid(box)
    pts = box_nodes(g, box)
    idx = np.unique(np.linspace(0, g.nt, n_samples).round().astype(int))
    ratios, bounds = [], []
    for n in idx:
        s = g.times[n]
        img = fmap.integrate(pts, 0.0, s) if s > 0 else pts
        comp = interpolate_stack(G[n][None], g, img[:, 0], img[:, 1])[0].reshape(sub.shape)
        X = img[:, 0].reshape(sub.shape)
        Y = img[:, 1].reshape(sub.shape)
        lip = float(np.max(np.sqrt(d1(X, sub.hx)**2 + d1(Y, sub.hx)**2 + d2(X, sub.hy)**2 + d2(Y, sub.hy)**2)))
        lhs = holder_norm_array(comp, sub.hx, sub.hy, 0, alpha)
        rhs = holder_norm_array(G[n], g.hx, g.hy, 0, alpha)
        ratios.append(lhs / rhs if rhs > 0 else 0.0)
        bounds.append(1.0 + lip**alpha)
    ratios, bounds = np.array(ratios), np.array(bounds)
    return CompositionEstimate(g.times[idx], ratios, bounds, bool(np.all(ratios <= bounds)))


# -- stored trajectories ----------------------------------------------------------------------

def verify_trajectory(traj, data: dict | None = None, final_factor: float = 50.0) -> VerificationReport:
    """Pure function of a stored ControlTrajectory (and its boundary data, when present)."""
    from .glue import extract_controls, slice_invariants

    rep = VerificationReport()
    g = traj.grid
    inv = slice_invariants(traj)
    rep.add("div_free", inv["div_ratio"], 1.0)
    rep.add("div_free_controlled_walls", inv["edge_div_ratio"], 1.0)
    rep.add("wall_tangency", inv["wall_normal"], 0.0)
    jumps = traj.joint_jumps()
    rep.add("joint_continuity", max(jumps) if jumps else 0.0, 0.0)
    for name, r in residual_mhd(traj).items():
        rep.add(f"mhd_residual[{name}]", r.max, r.tol)
    ctr = extract_controls(traj)
    rep.add("net_flux_controlled_walls", float(np.abs(ctr.net_flux).max()), ctr.flux_tol)
    if data:
        scale = max(float(np.abs(v).max()) for v in data.values()) if data else 0.0
        dt = float(traj.segments[0].times[1] - traj.segments[0].times[0]) / traj.eps
        ftol = final_factor * (g.h**2 + dt**2) * max(scale, 1e-300)
        if "u0" in data and "H0" in data:
            rep.add("initial_match", float(np.abs(traj.u_initial - data["u0"]).max()
                                           + np.abs(traj.H_initial - data["H0"]).max()), ftol)
        if "uT" in data and "HT" in data:
            rep.add("terminal_match", float(np.abs(traj.u_final - data["uT"]).max()
                                            + np.abs(traj.H_final - data["HT"]).max()), ftol)
    return rep


def elsasser_of(traj) -> list:
    """(z+, z-) per leg segment of a ControlTrajectory."""
    return [to_elsasser(s.u, s.H, traj.mu) for s in traj.segments]
