"""Fixed-point map of the local null-control construction and its Picard iteration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .elsasser import coupling_structured
from .errors import (CancellationError, ConfigurationError, FlushViolationError,
                     NoContractionError)
from .fields import (Extender, curl_array, div_array, div_tol, extension_cutoff,
                     holder_norm_array, interpolate_stack, measure_extension_norm,
                     perp_grad_array)
from .flow import FlowMap, OriginSets, box_nodes, flush_check, origin_sets
from .geometry import DomainSpec, GridSpec, ReturnProfile, weight_eval
from .solvers import characteristic_sweep, div_curl_reconstruct

log = logging.getLogger(__name__)

SIGNS = ("+", "-")
OTHER = {"+": "-", "-": "+"}
# j+ is transported by the z- field and j- by the z+ field
CROSSED = {"+": "-", "-": "+"}


@dataclass
class ControllerConfig:
    domain: DomainSpec
    grid: GridSpec
    profile: ReturnProfile
    mu: float = 1.0
    k: float = 8.0
    alpha: float = 0.5
    m_tilde: int = 3
    tol_X: float = 1e-8
    max_iter: int = 25
    cancel_factor: float = 10.0
    nu: float | None = None
    C_pi: float | None = None

    @property
    def omega_grid(self) -> GridSpec:
        return self.grid.subgrid(self.domain.omega)

    def ybar(self) -> np.ndarray:
        """Return trajectory on the duct, shape (nt+1, 2, ny+1, nx+1)."""
        g = self.omega_grid
        out = np.zeros((self.grid.nt + 1, 2) + g.shape)
        out[:, 0] = self.profile.gamma(self.grid.times)[:, None, None]
        return out

    def cancel_tol(self, scale: float) -> float:
        g = self.grid
        return self.cancel_factor * (g.h**2 + g.dt**2) * max(scale, 1e-300)


# -- data generation ------------------------------------------------------------

@dataclass(frozen=True)
class StreamData:
    """Stream function sum_{m,n} (a cos(n pi x1/L) + b sin(n pi x1/L)) sin(m pi x2/W)."""
    a: np.ndarray  # (K, K+1), mode m = 1..K, n = 0..K
    b: np.ndarray

    def psi(self, X: np.ndarray, Y: np.ndarray, L: float, W: float) -> np.ndarray:
        K = self.a.shape[0]
        out = np.zeros_like(X)
        for mi in range(K):
            sy = np.sin((mi + 1) * np.pi * Y / W)
            for n in range(self.a.shape[1]):
                kx = n * np.pi / L
                out += (self.a[mi, n] * np.cos(kx * X) + self.b[mi, n] * np.sin(kx * X)) * sy
        return out


def random_stream(rng: np.random.Generator, modes: int = 3, decay: float = 2.0) -> StreamData:
    K = modes
    m = np.arange(1, K + 1)[:, None]
    n = np.arange(0, K + 1)[None, :]
    w = 1.0 / (m + n) ** decay
    return StreamData(rng.standard_normal((K, K + 1)) * w, rng.standard_normal((K, K + 1)) * w)


def sample_field(data: StreamData, domain: DomainSpec, grid: GridSpec) -> np.ndarray:
    """Discrete perp-gradient of the sampled stream function on the duct nodes.

    Difference operators along different axes commute, so the discrete
    divergence vanishes to round-off; the stream function vanishes on the
    fixed walls, so the normal component does too.
    """
    og = grid.subgrid(domain.omega)
    X, Y = og.mesh()
    psi = data.psi(X, Y, domain.L, domain.W)
    psi[0, :] = 0.0
    psi[-1, :] = 0.0
    return perp_grad_array(psi, og.hx, og.hy)


def validate_data(z: np.ndarray, grid: GridSpec, name: str = "data") -> None:
    """Reject initial data that is not divergence free or not tangent to the fixed walls."""
    g = grid
    dv = float(np.max(np.abs(div_array(z, g.hx, g.hy))))
    if dv > div_tol(z, g):
        raise ConfigurationError(f"{name}: discrete divergence {dv:.2e} above tolerance")
    wall = max(float(np.max(np.abs(z[1, 0, :]))), float(np.max(np.abs(z[1, -1, :]))))
    if wall > 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        raise ConfigurationError(f"{name}: normal component {wall:.2e} on the fixed walls")


# -- calibration ------------------------------------------------------------------

def calibrate_nu(domain: DomainSpec, grid: GridSpec, profile: ReturnProfile, C_pi: float,
                 steps: int = 8) -> float:
    """Largest bisected nu in (0, M/4] whose worst-case perturbation still flushes.

    The worst case is -nu C_pi rho e1 with rho the extension cutoff: it
    opposes the drift everywhere extended perturbations can live.
    """
    nt = grid.nt
    rho = extension_cutoff(grid, domain)

    def passes(nu: float) -> bool:
        pert = np.zeros((nt + 1, 2) + grid.shape)
        pert[:, 0] = -nu * C_pi * rho
        ok, _ = flush_check(FlowMap(grid, profile, pert), domain)
        return ok

    lo, hi = 0.0, profile.M / 4.0
    if passes(hi):
        return hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise ConfigurationError("nu calibration collapsed to zero; increase M")
    return lo


def random_perturbation(rng: np.random.Generator, grid: GridSpec, domain: DomainSpec,
                        sup_norm: float, modes: int = 3) -> np.ndarray:
    """Smooth random field on Omega_3, linear in time, tangent to the walls x2 = 0, W.

    Multiplied by the extension cutoff, so it lives where extended
    perturbations live, and scaled to the requested sup norm.
    """
    X, Y = grid.mesh()
    Lx = grid.nx * grid.hx
    xs, ys = (X - grid.x0) / Lx, (Y - grid.y0) / (grid.ny * grid.hy)
    rho = extension_cutoff(grid, domain)
    ends = []
    for _ in range(2):
        v = np.zeros((2,) + grid.shape)
        for m in range(1, modes + 1):
            for n in range(0, modes + 1):
                a = rng.standard_normal(3) / (m + n) ** 2
                ph = rng.uniform(0, 2 * np.pi)
                v[0] += a[0] * np.cos(n * np.pi * xs + ph) * np.cos(m * np.pi * ys)
                v[1] += a[1] * np.cos(n * np.pi * xs + ph) * np.sin(m * np.pi * ys)
        v *= rho
        ends.append(v)
    w = grid.times[:, None, None, None]
    out = (1.0 - w) * ends[0] + w * ends[1]
    mx = float(np.max(np.abs(out)))
    return out * (sup_norm / mx if mx > 0 else 0.0)


def flush_under_perturbations(domain: DomainSpec, grid: GridSpec, profile: ReturnProfile,
                              sup_norm: float, n: int = 16, seed: int = 0) -> np.ndarray:
    """Flush margins of y* plus ``n`` random perturbations; a non-positive margin fails."""
    rng = np.random.default_rng(seed)
    margins = np.empty(n)
    for i in range(n):
        pert = random_perturbation(rng, grid, domain, sup_norm)
        ok, m = flush_check(FlowMap(grid, profile, pert), domain)
        margins[i] = m if ok else min(m, 0.0)
    return margins


def smallness_threshold(nu: float, C_pi: float, k: float) -> float:
    return nu / (4.0 * C_pi * 2.0**k)


# -- the map F --------------------------------------------------------------------

@dataclass
class FResult:
    zp: np.ndarray
    zm: np.ndarray
    j_final_max: float
    z_final_max: float
    cancel_tol: float
    flush_margin: float
    wiring: dict
    flows: dict
    G: dict
    P: dict
    sweeps: dict
    origin: OriginSets

    def compact(self) -> "FResult":
        """Copy without the flows, sources and sweeps (about 1 GB at h = 1/32)."""
        return replace(self, flows={}, G={}, P={}, sweeps={})


class NullController:
    """Local null control on [0, 1] for small Elsaesser data."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        d, g = cfg.domain, cfg.grid
        self.ext = Extender(g, d)
        self.rows, self.cols = g.index_box(d.omega)
        self.og = cfg.omega_grid
        self.r1, self.c1 = g.index_box(d.omega1)
        # O~ is fixed once from the return flow, independently of the iterate
        self.base_flow = FlowMap(g, cfg.profile)
        self.origin = origin_sets(self.base_flow, self.base_flow, d)
        self.ybar = cfg.ybar()
        X, Y = g.mesh()
        self.ystar = np.stack([cfg.profile.y_star(X, Y, t) for t in g.times])
        if cfg.C_pi is None:
            cfg.C_pi = measure_extension_norm(g, d, m=0, alpha=cfg.alpha)
        if cfg.nu is None:
            cfg.nu = calibrate_nu(d, g, cfg.profile, cfg.C_pi)

    @property
    def delta(self) -> float:
        return smallness_threshold(self.cfg.nu, self.cfg.C_pi, self.cfg.k)

    def data_norm(self, z0: np.ndarray) -> float:
        og = self.og
        return float(holder_norm_array(z0, og.hx, og.hy, self.cfg.m_tilde, self.cfg.alpha, vector=True))

    def seed(self, z0p: np.ndarray, z0m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lam = self.cfg.profile.lam(self.cfg.grid.times)[:, None, None, None]
        return self.ybar + lam * z0p, self.ybar + lam * z0m

    def transported_j(self, P: np.ndarray, G: np.ndarray, used: FlowMap,
                      crossed: FlowMap) -> tuple[np.ndarray, object]:
        """j on all slices: data j0 = P - chi~ int_0^1 G along ``crossed``, transported by ``used``.

        When both flows coincide the integral is split along the one
        characteristic into past and future parts, so j(., 1) vanishes on
        the origin sets exactly rather than up to interpolation error.
        """
        g = self.cfg.grid
        sweep = characteristic_sweep(used, G)
        out = np.empty((g.nt + 1,) + g.shape)
        if used is crossed:
            for n in range(g.nt + 1):
                foot = sweep.foot[n]
                c = self.origin.chi_tilde(foot[0], foot[1])
                Pf = P if n == 0 else interpolate_stack(P[None], g, foot[0], foot[1])[0]
                out[n] = Pf + (1.0 - c) * sweep.past[n] - c * sweep.future[n]
            return out, sweep
        X, Y = g.mesh()
        whole = characteristic_sweep(crossed, G).future[0]
        j0 = P - self.origin.chi_tilde(X, Y) * whole
        out[0] = j0
        for n in range(1, g.nt + 1):
            foot = sweep.foot[n]
            out[n] = interpolate_stack(j0[None], g, foot[0], foot[1])[0] + sweep.past[n]
        return out, sweep

    def apply_F(self, zbar_p: np.ndarray, zbar_m: np.ndarray, z0p: np.ndarray, z0m: np.ndarray,
                wiring: dict | None = None, check: bool = True) -> FResult:
        cfg, g, d = self.cfg, self.cfg.grid, self.cfg.domain
        wiring = dict(CROSSED if wiring is None else wiring)
        zbar = {"+": zbar_p, "-": zbar_m}
        z0 = {"+": z0p, "-": z0m}
        # Step 1: extended advecting fields and their flows
        w = {s: self.ext(zbar[s] - self.ybar) for s in SIGNS}
        flows = {s: FlowMap(g, cfg.profile, w[s]) for s in SIGNS}
        # Step 2: extended coupling terms on Omega_3
        G = {"+": coupling_structured(w["+"], w["-"], g.hx, g.hy, +1),
             "-": coupling_structured(w["+"], w["-"], g.hx, g.hy, -1)}
        # Step 3: origin sets must stay inside the fixed plateau of chi~
        seeds = box_nodes(g, d.omega1)
        margin = np.inf
        for s in SIGNS:
            ok, m = flush_check(flows[s], d)
            margin = min(margin, m)
            if not ok:
                raise FlushViolationError(f"z{s} flow does not flush Omega_2 (margin {m:.3e})")
            back = flows[s].integrate(seeds, 1.0, 0.0)
            if not self.origin.contains(back):
                raise FlushViolationError(f"origin set of z{s} leaves the plateau of chi~")
        # Steps 3-4: initial data and crossed transport along characteristics
        P, sweeps, j_final = {}, {}, 0.0
        out = {}
        for s in SIGNS:
            ze = self.ext(z0[s])
            P[s] = curl_array(ze, g.hx, g.hy)
            J, sweeps[s] = self.transported_j(P[s], G[s], flows[wiring[s]], flows[CROSSED[s]])
            traj = np.empty((g.nt + 1, 2) + self.og.shape)
            for n, t in enumerate(g.times):
                j = J[n]
                if n == g.nt:
                    j_final = max(j_final, float(np.max(np.abs(j[self.r1, self.c1]))))
                # Step 5: div-curl reconstruction on Omega_1, Step 6: restriction
                zt = div_curl_reconstruct(j, ze, t, cfg.profile, g, P[s])
                traj[n] = zt[:, self.rows.start - self.r1.start:self.rows.stop - self.r1.start,
                             self.cols.start - self.c1.start:self.cols.stop - self.c1.start]
            out[s] = traj
        z_final = max(float(np.max(np.abs(out[s][-1]))) for s in SIGNS)
        scale = max(float(np.max(np.abs(z0p))), float(np.max(np.abs(z0m))))
        ctol = cfg.cancel_tol(scale)
        if check and max(j_final, z_final) > 10.0 * ctol:
            raise CancellationError(f"terminal values not cancelled: j {j_final:.3e}, z {z_final:.3e}")
        return FResult(out["+"], out["-"], j_final, z_final, ctol, float(margin), wiring,
                       flows, G, P, sweeps, self.origin)

    # -- norms ----------------------------------------------------------------

    def x_distance(self, a: tuple, b: tuple) -> float:
        og = self.og
        tot = 0.0
        for s in range(2):
            tot = tot + holder_norm_array(a[s] - b[s], og.hx, og.hy, 1, self.cfg.alpha, vector=True)
        return float(np.max(tot))

    def weighted_norms(self, zp: np.ndarray, zm: np.ndarray) -> np.ndarray:
        """omega_k(t) ||z - ybar||_{m~,alpha} per slice, shape (2, nt+1)."""
        og, cfg = self.og, self.cfg
        wgt = weight_eval(cfg.grid.times, cfg.k)
        return np.stack([wgt * holder_norm_array(z - self.ybar, og.hx, og.hy, cfg.m_tilde,
                                                 cfg.alpha, vector=True) for z in (zp, zm)])

    def membership_check(self, zp: np.ndarray, zm: np.ndarray) -> "MembershipReport":
        og, cfg = self.og, self.cfg
        wn = self.weighted_norms(zp, zm)
        raw = np.stack([holder_norm_array(z, og.hx, og.hy, cfg.m_tilde, cfg.alpha, vector=True)
                        for z in (zp, zm)])
        ybar_max = float(np.max(holder_norm_array(self.ybar, og.hx, og.hy, cfg.m_tilde,
                                                  cfg.alpha, vector=True)))
        return MembershipReport(float(wn.max()), cfg.nu, bool(wn.max() < cfg.nu),
                                float(raw.max()), cfg.nu + ybar_max,
                                bool(raw.max() <= cfg.nu + ybar_max * (1 + 1e-12)))

    # -- iteration --------------------------------------------------------------

    def iterate(self, z0p: np.ndarray, z0m: np.ndarray, tol_X: float | None = None,
                max_iter: int | None = None, log_path: str | Path | None = None,
                require_small: bool = True) -> tuple["FixedPointState", "IterationReport"]:
        cfg = self.cfg
        tol_X = cfg.tol_X if tol_X is None else tol_X
        max_iter = cfg.max_iter if max_iter is None else max_iter
        for s, z in (("+", z0p), ("-", z0m)):
            validate_data(z, self.og, f"z0{s}")
        dn = max(self.data_norm(z0p), self.data_norm(z0m))
        if require_small and dn > self.delta:
            raise ConfigurationError(f"data norm {dn:.3e} exceeds smallness threshold {self.delta:.3e}")
        cur = self.seed(z0p, z0m)
        report = IterationReport(k=cfg.k, nu=cfg.nu, delta=self.delta, data_norm=dn)
        bad = 0
        res = None
        for it in range(1, max_iter + 1):
            res = None  # the previous flows and sweeps are large; free them first
            res = self.apply_F(cur[0], cur[1], z0p, z0m)
            nxt = (res.zp, res.zm)
            dX = self.x_distance(nxt, cur)
            ratio = dX / report.distances[-1] if report.distances and report.distances[-1] > 0 else np.nan
            wmax = float(self.weighted_norms(*nxt).max())
            report.record(dX, ratio, wmax, res.flush_margin, res.j_final_max, res.z_final_max)
            log.info("iter %d d_X=%.3e ratio=%.3e", it, dX, ratio)
            cur = nxt
            if dX < tol_X:
                report.converged = True
                break
            if np.isfinite(ratio) and ratio >= 1.0:
                bad += 1
                if bad >= 3:
                    report.write_csv(log_path)
                    raise NoContractionError(
                        "three consecutive non-contracting iterates: increase k, then shrink the data")
            else:
                bad = 0
        report.write_csv(log_path)
        state = FixedPointState(len(report.distances), cur[0], cur[1],
                                report.weighted_max[-1] if report.weighted_max else 0.0,
                                report.distances[-1] if report.distances else 0.0, res)
        return state, report


@dataclass
class MembershipReport:
    weighted_max: float
    nu: float
    inside: bool
    uniform_max: float
    uniform_bound: float
    uniform_ok: bool


@dataclass
class FixedPointState:
    iterate: int
    zp: np.ndarray
    zm: np.ndarray
    weighted_max: float
    distance: float
    last: FResult | None = None


@dataclass
class IterationReport:
    k: float
    nu: float
    delta: float
    data_norm: float
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    weighted_max: list = field(default_factory=list)
    flush_margins: list = field(default_factory=list)
    j_final: list = field(default_factory=list)
    z_final: list = field(default_factory=list)
    converged: bool = False

    def record(self, dX, ratio, wmax, margin, jf, zf):
        self.distances.append(float(dX))
        self.ratios.append(float(ratio))
        self.weighted_max.append(float(wmax))
        self.flush_margins.append(float(margin))
        self.j_final.append(float(jf))
        self.z_final.append(float(zf))

    def fitted_kappa(self, floor: float = 0.0) -> float:
        """Least-squares slope of log d_i against i over distances above ``floor``."""
        d = np.array([x for x in self.distances if x > floor])
        if len(d) < 2:
            return float("nan")
        i = np.arange(len(d))
        slope = np.polyfit(i, np.log(d), 1)[0]
        return float(np.exp(slope))

    def csv_lines(self) -> list[str]:
        lines = ["iter,d_X,ratio,max_weighted_norm,flush_margin"]
        for i, (d, r, w, m) in enumerate(zip(self.distances, self.ratios, self.weighted_max,
                                             self.flush_margins), start=1):
            lines.append(f"{i},{d:.17g},{r:.17g},{w:.17g},{m:.17g}")
        return lines

    def write_csv(self, path):
        if path is not None:
            Path(path).write_text("\n".join(self.csv_lines()) + "\n")


# -- probes -------------------------------------------------------------------------

def _path_integral(fmap: FlowMap, G: np.ndarray, pts: np.ndarray, forward: bool) -> tuple[np.ndarray, np.ndarray]:
    """Simpson integral over [0,1] of G along trajectories; returns (integral, other endpoint).

    forward: pts are positions at t=0; otherwise positions at t=1.
    """
    g = fmap.grid
    times = g.times
    order = range(g.nt + 1) if forward else range(g.nt, -1, -1)
    vals = np.empty((g.nt + 1, pts.shape[0]))
    cur = pts.copy()
    prev_t = None
    for n in order:
        t = times[n]
        if prev_t is not None:
            cur = fmap.integrate(cur, prev_t, t)
        vals[n] = interpolate_stack(G[n][None], g, cur[:, 0], cur[:, 1])[0]
        prev_t = t
    w = np.ones(g.nt + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (g.dt / 3.0) * (w @ vals), cur


def cancellation_probe(ctrl: NullController, res: FResult, n_probe: int = 10, seed: int = 0) -> dict:
    """Check j0(x) + int_0^1 G(Z(x,0,s),s) ds = 0 at backward images x of random points of Omega_1.

    The backward images and the integral use the crossed flows; j0 is
    evaluated pointwise with the flows recorded by ``apply_F``.
    """
    rng = np.random.default_rng(seed)
    b = ctrl.cfg.domain.omega1
    pts = np.column_stack([rng.uniform(b[0], b[1], n_probe), rng.uniform(b[2], b[3], n_probe)])
    out = {}
    g = ctrl.cfg.grid
    for s in SIGNS:
        correct = res.flows[CROSSED[s]]
        integral_back, x_origin = _path_integral(correct, res.G[s], pts, forward=False)
        used = res.flows[res.wiring[s]]
        integral_fwd, _ = _path_integral(used, res.G[s], x_origin, forward=True)
        P = interpolate_stack(res.P[s][None], g, x_origin[:, 0], x_origin[:, 1])[0]
        chi = res.origin.chi_tilde(x_origin[:, 0], x_origin[:, 1])
        j0 = P - chi * integral_fwd
        defect = np.abs(j0 + integral_back)
        scale = float(np.max(np.abs(integral_back))) + 1e-300
        out[s] = {"max_defect": float(defect.max()), "scale": scale,
                  "relative": float(defect.max() / scale)}
    return out
