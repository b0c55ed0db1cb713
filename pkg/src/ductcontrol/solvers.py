"""Elliptic and transport kernels.

Poisson problems use fast diagonalisation of the five-point Laplacian on
rectangles: sine transforms for homogeneous Dirichlet data, cosine
transforms for the ghost-node Neumann closure.  Transport is solved along
characteristics by one-step semi-Lagrangian recursions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import CompatibilityError, UnsupportedError
from .fields import ScalarField, VectorField, curl_array, interpolate_stack, perp_grad_array
from .flow import FlowMap, StepMaps
from .geometry import Box, GridSpec, ReturnProfile


@dataclass(frozen=True)
class PoissonProblem:
    grid: GridSpec
    rhs: np.ndarray
    kind: str  # "dirichlet" | "neumann"
    bdata: dict | None = None
    tol: float = 1e-10


# -- Dirichlet ----------------------------------------------------------------

def _dirichlet_eigs(n: int, h: float) -> np.ndarray:
    k = np.arange(1, n)
    return (2.0 - 2.0 * np.cos(np.pi * k / n)) / h**2


def poisson_dirichlet_array(rhs: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Solve -Lap_h phi = rhs on a node grid with phi = 0 on its boundary.

    ``rhs`` may carry leading batch axes; boundary values of ``rhs`` are ignored.
    """
    ny, nx = rhs.shape[-2] - 1, rhs.shape[-1] - 1
    inner = rhs[..., 1:-1, 1:-1]
    lam = _dirichlet_eigs(ny, hy)[:, None] + _dirichlet_eigs(nx, hx)[None, :]
    coef = fft.dstn(inner, type=1, axes=(-2, -1))
    sol = fft.idstn(coef / lam, type=1, axes=(-2, -1))
    out = np.zeros(rhs.shape)
    out[..., 1:-1, 1:-1] = sol
    return out


def poisson_dirichlet(rhs: ScalarField, box: Box | None = None) -> ScalarField:
    """Dirichlet-zero Poisson solve on a rectangle (``box`` of ``rhs.grid``, or all of it)."""
    if box is not None:
        if len(box) != 4:
            raise UnsupportedError("only rectangular subdomains are supported")
        rhs = rhs.restrict(box)
    g = rhs.grid
    return ScalarField(g, poisson_dirichlet_array(rhs.values, g.hx, g.hy))


# -- Neumann ------------------------------------------------------------------

def _trap_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


def trapezoid_mean(f: np.ndarray) -> np.ndarray:
    """Trapezoid-weighted mean over the last two axes."""
    wy = _trap_weights(f.shape[-2] - 1)
    wx = _trap_weights(f.shape[-1] - 1)
    w = wy[:, None] * wx[None, :]
    return np.sum(f * w, axis=(-2, -1)) / w.sum()


def neumann_rhs(rhs: np.ndarray, bdata: dict, hx: float, hy: float) -> np.ndarray:
    """Fold outward normal-derivative data into the ghost-node right-hand side."""
    f = np.array(rhs, dtype=float, copy=True)
    f[..., :, 0] -= 2.0 * np.asarray(bdata["left"]) / hx
    f[..., :, -1] -= 2.0 * np.asarray(bdata["right"]) / hx
    f[..., 0, :] -= 2.0 * np.asarray(bdata["bottom"]) / hy
    f[..., -1, :] -= 2.0 * np.asarray(bdata["top"]) / hy
    return f


def neumann_compat_tol(hx: float, hy: float) -> float:
    """Relative compatibility defect accepted as discretisation error."""
    return 10.0 * (hx**2 + hy**2)


def boundary_trapezoid(bdata: dict, hx: float, hy: float) -> np.ndarray:
    """Trapezoid quadrature of the data over the boundary."""
    tot = 0.0
    for key, h in (("left", hy), ("right", hy), ("bottom", hx), ("top", hx)):
        b = np.asarray(bdata[key])
        w = _trap_weights(b.shape[-1] - 1) * h
        tot = tot + np.sum(b * w, axis=-1)
    return tot


def poisson_neumann_array(rhs: np.ndarray, bdata: dict, hx: float, hy: float,
                          check: bool = True) -> tuple[np.ndarray, float]:
    """Solve Lap_h u = rhs with outward derivative data; zero trapezoid mean.

    ``bdata`` maps "left", "right" (length ny+1) and "bottom", "top" (length
    nx+1) to outward normal derivatives.  The boundary data is shifted by a
    constant so that the discrete problem is compatible.  Returns the
    solution and the relative compatibility defect before projection.
    """
    ny, nx = rhs.shape[-2] - 1, rhs.shape[-1] - 1
    area = nx * hx * ny * hy
    perim = 2 * (nx * hx + ny * hy)
    f_int = trapezoid_mean(rhs) * area
    g_int = boundary_trapezoid(bdata, hx, hy)
    scale = np.abs(trapezoid_mean(np.abs(rhs)) * area) + boundary_trapezoid(
        {k: np.abs(v) for k, v in bdata.items()}, hx, hy)
    # relative to the largest slice: slices at round-off level are judged against the batch
    defect = float(np.max(np.abs(f_int - g_int)) / max(float(np.max(scale)), 1e-300))
    if check and np.any(scale > 0) and defect > 10.0 * neumann_compat_tol(hx, hy):
        raise CompatibilityError(f"Neumann data incompatible: relative defect {defect:.3e}")
    shift = np.asarray((f_int - g_int) / perim)[..., None]
    proj = {k: np.asarray(v) + shift for k, v in bdata.items()}
    f = neumann_rhs(rhs, proj, hx, hy)
    kx = np.arange(nx + 1)
    ky = np.arange(ny + 1)
    lam = (-(2.0 - 2.0 * np.cos(np.pi * ky / ny)) / hy**2)[:, None] + \
        (-(2.0 - 2.0 * np.cos(np.pi * kx / nx)) / hx**2)[None, :]
    lam[0, 0] = 1.0
    coef = fft.dctn(f, type=1, axes=(-2, -1))
    coef = coef / lam
    coef[..., 0, 0] = 0.0
    u = fft.idctn(coef, type=1, axes=(-2, -1))
    u = u - trapezoid_mean(u)[..., None, None]
    return u, float(defect)


def poisson_neumann(rhs: ScalarField, bdata: dict) -> ScalarField:
    g = rhs.grid
    u, _ = poisson_neumann_array(rhs.values, bdata, g.hx, g.hy)
    return ScalarField(g, u)


def neumann_residual(u: np.ndarray, rhs: np.ndarray, hx: float, hy: float) -> float:
    """Interior five-point residual max |Lap_h u - rhs|."""
    lap = ((u[..., 1:-1, 2:] - 2 * u[..., 1:-1, 1:-1] + u[..., 1:-1, :-2]) / hx**2
           + (u[..., 2:, 1:-1] - 2 * u[..., 1:-1, 1:-1] + u[..., :-2, 1:-1]) / hy**2)
    return float(np.max(np.abs(lap - rhs[..., 1:-1, 1:-1])))


def outward_derivative(u: np.ndarray, hx: float, hy: float) -> dict:
    """Second-order one-sided outward normal derivatives on the four faces."""
    return {
        "left": -(-3 * u[..., :, 0] + 4 * u[..., :, 1] - u[..., :, 2]) / (2 * hx),
        "right": (3 * u[..., :, -1] - 4 * u[..., :, -2] + u[..., :, -3]) / (2 * hx),
        "bottom": -(-3 * u[..., 0, :] + 4 * u[..., 1, :] - u[..., 2, :]) / (2 * hy),
        "top": (3 * u[..., -1, :] - 4 * u[..., -2, :] + u[..., -3, :]) / (2 * hy),
    }


# -- characteristic transport ---------------------------------------------------

@dataclass
class CharacteristicSweep:
    """Foot points and accumulated sources along the characteristics of one flow.

    ``foot[n]`` is Z(x, t_n, 0); ``past[n]`` the integral of the source from
    0 to t_n and ``future[n]`` from t_n to 1, both along the characteristic
    through (x, t_n).  Shapes (nt+1, [2,] ny+1, nx+1).
    """
    foot: np.ndarray
    past: np.ndarray | None
    future: np.ndarray | None


def _simpson_step(g_a, g_mid, g_b, dt):
    return dt / 6.0 * (g_a + 4.0 * g_mid + g_b)


def characteristic_sweep(fmap: FlowMap, source: np.ndarray | None = None,
                         want_future: bool = True) -> CharacteristicSweep:
    grid = fmap.grid
    steps: StepMaps = fmap.step_maps()
    nt = grid.nt
    dt = grid.dt
    X, Y = grid.mesh()
    ident = np.stack([X, Y])
    foot = np.empty((nt + 1, 2) + grid.shape)
    foot[0] = ident
    past = None
    if source is not None:
        past = np.zeros((nt + 1,) + grid.shape)
    for n in range(1, nt + 1):
        D = steps.back[n]
        Dm = steps.back_mid[n]
        disp = foot[n - 1] - ident
        if source is None:
            vals = interpolate_stack(disp, grid, D[0], D[1])
            foot[n] = D + vals
            continue
        stack = np.concatenate([disp, past[n - 1][None], source[n - 1][None]])
        vals = interpolate_stack(stack, grid, D[0], D[1])
        mids = interpolate_stack(source[n - 1:n + 1], grid, Dm[0], Dm[1])
        foot[n] = D + vals[:2]
        past[n] = vals[2] + _simpson_step(vals[3], 0.5 * (mids[0] + mids[1]), source[n], dt)
    future = None
    if source is not None and want_future:
        future = np.zeros((nt + 1,) + grid.shape)
        for n in range(nt - 1, -1, -1):
            E = steps.fwd[n]
            Em = steps.fwd_mid[n]
            stack = np.stack([future[n + 1], source[n + 1]])
            vals = interpolate_stack(stack, grid, E[0], E[1])
            mids = interpolate_stack(source[n:n + 2], grid, Em[0], Em[1])
            future[n] = vals[0] + _simpson_step(source[n], 0.5 * (mids[0] + mids[1]), vals[1], dt)
    return CharacteristicSweep(foot, past, future)


def transport_solve(j0: np.ndarray, fmap: FlowMap, source: np.ndarray | None = None,
                    sweep: CharacteristicSweep | None = None) -> np.ndarray:
    """Solve d_t j + (v . grad) j = source with j(., 0) = j0 along characteristics.

    j(x, t) = j0(Z(x, t, 0)) + int_0^t source(Z(x, t, s), s) ds.  Returns an
    array (nt+1, ny+1, nx+1); the t = 0 slice is ``j0`` itself.
    """
    grid = fmap.grid
    if sweep is None:
        sweep = characteristic_sweep(fmap, source, want_future=False)
    out = np.empty((grid.nt + 1,) + grid.shape)
    out[0] = j0
    for n in range(1, grid.nt + 1):
        out[n] = interpolate_stack(j0[None], grid, sweep.foot[n, 0], sweep.foot[n, 1])[0]
    if source is not None:
        out[1:] += sweep.past[1:]
    return out


def transport_residual(j: np.ndarray, vel: np.ndarray, source: np.ndarray, grid: GridSpec,
                       box: Box | None = None) -> float:
    """max |d_t j + v . grad j - source| with centred differences, interior slices."""
    from .fields import d1, d2

    dtj = (j[2:] - j[:-2]) / (2 * grid.dt)
    adv = vel[1:-1, 0] * d1(j[1:-1], grid.hx) + vel[1:-1, 1] * d2(j[1:-1], grid.hy)
    res = dtj + adv - source[1:-1]
    if box is not None:
        rows, cols = grid.index_box(box)
        res = res[:, rows, cols]
    return float(np.max(np.abs(res[..., 1:-1, 1:-1])))


# -- div-curl reconstruction ----------------------------------------------------

def div_curl_reconstruct(j: np.ndarray, z0_ext: np.ndarray, t: float, profile: ReturnProfile,
                         grid: GridSpec, curl_z0_ext: np.ndarray | None = None) -> np.ndarray:
    """Field on Omega_1 with curl j, divergence of lambda pi_2 z0 and matching normal trace.

    ``j`` and ``z0_ext`` are on the Omega_3 grid; the result is on the
    Omega_1 subgrid: perp_grad(phi) + y*(., t) + lambda(t) z0_ext with
    -Lap phi = j - lambda(t) curl(z0_ext), phi = 0 on the boundary of Omega_1.
    """
    box = profile.domain.omega1
    rows, cols = grid.index_box(box)
    sub = grid.subgrid(box)
    lam = float(profile.lam(t))
    if curl_z0_ext is None:
        curl_z0_ext = curl_array(z0_ext, grid.hx, grid.hy)
    rhs = j[rows, cols] - lam * curl_z0_ext[rows, cols]
    phi = poisson_dirichlet_array(rhs, sub.hx, sub.hy)
    X, Y = sub.mesh()
    out = perp_grad_array(phi, sub.hx, sub.hy) + profile.y_star(X, Y, t)
    if lam != 0.0:
        out = out + lam * z0_ext[:, rows, cols]
    return out


def div_curl_field(j: ScalarField, z0_ext: VectorField, t: float, profile: ReturnProfile) -> VectorField:
    g = j.grid
    box = profile.domain.omega1
    return VectorField(g.subgrid(box), div_curl_reconstruct(j.values, z0_ext.values, t, profile, g))
