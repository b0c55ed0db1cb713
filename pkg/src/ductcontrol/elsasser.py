"""Elsaesser variables, coupling terms and pressure recovery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .fields import VectorField, d1, d2, div_array
from .geometry import GridSpec
from .solvers import neumann_residual, poisson_neumann_array


@dataclass(frozen=True)
class ElsasserState:
    zp: np.ndarray
    zm: np.ndarray
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidParameterError("mu must be positive")
        if self.zp.shape != self.zm.shape:
            raise ValueError("z+ and z- must have the same shape")


def to_elsasser(u: np.ndarray | VectorField, H: np.ndarray | VectorField, mu: float) -> ElsasserState:
    if not mu > 0:
        raise InvalidParameterError("mu must be positive")
    u = u.values if isinstance(u, VectorField) else np.asarray(u, dtype=float)
    H = H.values if isinstance(H, VectorField) else np.asarray(H, dtype=float)
    s = np.sqrt(mu)
    return ElsasserState(u + s * H, u - s * H, float(mu))


def from_elsasser(state: ElsasserState) -> tuple[np.ndarray, np.ndarray]:
    s = np.sqrt(state.mu)
    return 0.5 * (state.zp + state.zm), (state.zp - state.zm) / (2.0 * s)


def _jac(z: np.ndarray, hx: float, hy: float):
    """(d1 z1, d2 z1, d1 z2, d2 z2) for arrays (..., 2, ny, nx)."""
    z1, z2 = z[..., 0, :, :], z[..., 1, :, :]
    return d1(z1, hx), d2(z1, hy), d1(z2, hx), d2(z2, hy)


def coupling_structured(wp: np.ndarray, wm: np.ndarray, hx: float, hy: float,
                        sign: int = 1) -> np.ndarray:
    """Extended coupling term from perturbations w = (advecting field) - (return field).

    With a = w^sign and b = w^-sign:
    -(d1 b1 - d1 a1)(d1 a2 + d2 a1) - (d1 a2 - d1 b2) d1 a1 - (d2 a1 - d2 b1) d1 a1.
    Only differences of the full fields enter the first factors, so the
    return field drops out of them.
    """
    a, b = (wp, wm) if sign > 0 else (wm, wp)
    a11, a12, a21, _ = _jac(a, hx, hy)
    b11, b12, b21, _ = _jac(b, hx, hy)
    return (-(b11 - a11) * (a21 + a12)
            - (a21 - b21) * a11
            - (a12 - b12) * a11)


def coupling_G(state: ElsasserState, ystar: np.ndarray, grid: GridSpec, sign: int) -> np.ndarray:
    """G^sign for advecting fields ``state`` on the Omega_3 grid and return field ``ystar``."""
    return coupling_structured(state.zp - ystar, state.zm - ystar, grid.hx, grid.hy, sign)


def coupling_g_unstructured(zp: np.ndarray, zm: np.ndarray, hx: float, hy: float,
                            sign: int = 1) -> np.ndarray:
    """d2 b1 d1 a1 + d2 b2 d2 a1 - d1 b1 d1 a2 - d1 b2 d2 a2 with a = z^sign, b = z^-sign."""
    a, b = (zp, zm) if sign > 0 else (zm, zp)
    a11, a12, a21, a22 = _jac(a, hx, hy)
    b11, b12, b21, b22 = _jac(b, hx, hy)
    return b12 * a11 + b22 * a12 - b11 * a21 - b21 * a22


def advect(v: np.ndarray, z: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """(v . grad) z for vector z, arrays (..., 2, ny, nx)."""
    return (v[..., 0:1, :, :] * d1(z, hx) + v[..., 1:2, :, :] * d2(z, hy))


def time_derivative(f: np.ndarray, dt: float) -> np.ndarray:
    """Centred in the interior, second-order one-sided at both ends (axis 0)."""
    return np.gradient(f, dt, axis=0, edge_order=2)


def solver_tolerance(grid: GridSpec, scale: float) -> float:
    """Discretisation-level tolerance used for pressure-type cross checks."""
    return (grid.hx**2 + grid.hy**2 + grid.dt**2) * scale


def third_derivative_scale(a: np.ndarray, hx: float, hy: float) -> float:
    """max over all third difference quotients, two nodes away from the boundary."""
    out = 0.0
    for k in range(4):
        b = a
        for _ in range(k):
            b = d1(b, hx)
        for _ in range(3 - k):
            b = d2(b, hy)
        out = max(out, float(np.max(np.abs(b[..., 3:-3, 3:-3]))))
    return out


def _normal_data(r: np.ndarray) -> dict:
    """Outward normal components of a vector field on the four faces."""
    return {"left": -r[..., 0, :, 0], "right": r[..., 0, :, -1],
            "bottom": -r[..., 1, 0, :], "top": r[..., 1, -1, :]}


def q_corrector(u: np.ndarray, H: np.ndarray, dtH: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Harmonic corrector with induction-defect Neumann data on the controlled walls.

    ``grid`` is the duct grid.  Accepts one slice (2, ny, nx) or a batch.
    """
    hx, hy = grid.hx, grid.hy
    flux = dtH[..., 0, :, :] + u[..., 0, :, :] * d1(H[..., 0, :, :], hx) \
        + u[..., 1, :, :] * d2(H[..., 0, :, :], hy) \
        - H[..., 0, :, :] * d1(u[..., 0, :, :], hx) - H[..., 1, :, :] * d2(u[..., 0, :, :], hy)
    zero_x = np.zeros(flux.shape[:-2] + (flux.shape[-1],))
    # outward normal is -e1 on the left wall, +e1 on the right wall
    bdata = {"left": flux[..., :, 0], "right": -flux[..., :, -1], "bottom": zero_x, "top": zero_x}
    # the data is compatible only up to truncation; it is projected to zero mean
    q, _ = poisson_neumann_array(np.zeros(flux.shape), bdata, hx, hy, check=False)
    return q


@dataclass
class PressureRecovery:
    p_plus: np.ndarray
    p_minus: np.ndarray
    p: np.ndarray
    q: np.ndarray
    q_corr: np.ndarray
    helmholtz_remainder: float
    q_mismatch: float
    q_laplace_residual: float
    compat_defect: float
    tolerance: float


def recover_pressures(zp: np.ndarray, zm: np.ndarray, mu: float, grid: GridSpec,
                      dt: float) -> PressureRecovery:
    """Pressures of an Elsaesser trajectory (nt+1, 2, ny, nx) on the duct grid."""
    hx, hy = grid.hx, grid.hy
    rp = -time_derivative(zp, dt) - advect(zm, zp, hx, hy)
    rm = -time_derivative(zm, dt) - advect(zp, zm, hx, hy)
    pp, dp = poisson_neumann_array(div_array(rp, hx, hy), _normal_data(rp), hx, hy)
    pm, dm = poisson_neumann_array(div_array(rm, hx, hy), _normal_data(rm), hx, hy)
    s = np.sqrt(mu)
    p = 0.5 * (pp + pm)
    q = (pp - pm) / (2.0 * s)
    u, H = 0.5 * (zp + zm), (zp - zm) / (2.0 * s)
    qc = q_corrector(u, H, time_derivative(H, dt), grid)
    rem = 0.0
    for r, pr in ((rp, pp), (rm, pm)):
        gx, gy = d1(pr, hx), d2(pr, hy)
        rem = max(rem, float(np.max(np.hypot(r[:, 0] - gx, r[:, 1] - gy)[:, 1:-1, 1:-1])))
    # second-order truncation is h^2 times third derivatives, not the sup
    scale = max(float(np.max(np.abs(q))), float(np.max(np.abs(qc))),
                third_derivative_scale(qc, hx, hy), 1e-300)
    lap = neumann_residual(qc, np.zeros_like(qc), hx, hy)
    tol = solver_tolerance(GridSpec(0, 0, hx, hy, 1, 1, int(round(1 / dt))), scale)
    return PressureRecovery(pp, pm, p, q, qc, rem, float(np.max(np.abs(q - qc))), lap,
                            max(dp, dm), tol)
