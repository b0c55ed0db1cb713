"""Duct geometry, return profile and time weight.

The physical duct is ``(0, L) x (0, W)``; three nested rectangles extend it
to the left, right, top and bottom.  Everything in this module is a pure
function of its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, DomainError, InvalidParameterError


Box = tuple[float, float, float, float]  # (x1_lo, x1_hi, x2_lo, x2_hi)


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, exp-based in between."""
    s = np.asarray(s, dtype=float)
    a = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f0 = np.where(a > 0.0, np.exp(-1.0 / np.where(a > 0.0, a, 1.0)), 0.0)
        b = 1.0 - a
        f1 = np.where(b > 0.0, np.exp(-1.0 / np.where(b > 0.0, b, 1.0)), 0.0)
        out = f0 / (f0 + f1)
    out = np.where(s <= 0.0, 0.0, out)
    out = np.where(s >= 1.0, 1.0, out)
    return out


def smooth_step_deriv(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    a = np.where(inside, s, 0.5)
    f0 = np.exp(-1.0 / a)
    f1 = np.exp(-1.0 / (1.0 - a))
    df0 = f0 / a**2
    df1 = -f1 / (1.0 - a) ** 2
    d = (df0 * (f0 + f1) - f0 * (df0 + df1)) / (f0 + f1) ** 2
    return np.where(inside, d, 0.0)


def plateau(x, lo, hi, ramp):
    """1 on [lo, hi], 0 outside [lo - ramp, hi + ramp], smooth in between."""
    x = np.asarray(x, dtype=float)
    return smooth_step((x - (lo - ramp)) / ramp) * smooth_step(((hi + ramp) - x) / ramp)


def plateau_deriv(x, lo, hi, ramp):
    x = np.asarray(x, dtype=float)
    a = (x - (lo - ramp)) / ramp
    b = ((hi + ramp) - x) / ramp
    return (smooth_step_deriv(a) * smooth_step(b) - smooth_step(a) * smooth_step_deriv(b)) / ramp


@dataclass(frozen=True)
class DomainSpec:
    L: float
    W: float
    l: float
    omega1_margin: float
    chi_margin: float

    @property
    def omega(self) -> Box:
        return (0.0, self.L, 0.0, self.W)

    @property
    def omega1(self) -> Box:
        m = self.omega1_margin
        return (-m, self.L + m, 0.0, self.W)

    @property
    def omega2(self) -> Box:
        l = self.l
        return (-l, self.L + l, -l, self.W + l)

    @property
    def omega3(self) -> Box:
        l2 = 2.0 * self.l
        return (-l2, self.L + l2, -l2, self.W + l2)

    def box(self, name: str) -> Box:
        return {"omega": self.omega, "omega1": self.omega1,
                "omega2": self.omega2, "omega3": self.omega3}[name]

    @property
    def extension_depth(self) -> float:
        """Distance from the duct beyond which extended fields vanish."""
        return min(0.75 * self.l, 0.5 * min(self.L, self.W))

    def controlled_wall(self, x1, x2, tol=1e-12):
        """Mask of points on Gamma_0 (the two vertical walls, open in x2)."""
        x1 = np.asarray(x1)
        x2 = np.asarray(x2)
        on_x = (np.abs(x1) <= tol) | (np.abs(x1 - self.L) <= tol)
        return on_x & (x2 > tol) & (x2 < self.W - tol)


def build_domains(L: float, W: float, l: float, omega1_margin: float | None = None,
                  chi_margin: float | None = None) -> DomainSpec:
    if not (L > 0 and W > 0 and l > 0):
        raise InvalidParameterError(f"domain dimensions must be positive, got L={L}, W={W}, l={l}")
    m1 = 0.5 * l if omega1_margin is None else omega1_margin
    cm = 0.5 * l if chi_margin is None else chi_margin
    if not 0 <= m1 < l:
        raise InvalidParameterError("omega1_margin must lie in [0, l)")
    if not 0 < cm < l:
        raise InvalidParameterError("chi_margin must lie in (0, l)")
    return DomainSpec(float(L), float(W), float(l), float(m1), float(cm))


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid covering the closure of Omega_3.

    ``nx``/``ny`` count cells; arrays are stored as ``[j, i]`` with ``j``
    indexing x2 (rows) and ``i`` indexing x1 (columns).
    """
    x0: float
    y0: float
    hx: float
    hy: float
    nx: int
    ny: int
    nt: int = 256

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx + 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny + 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nt + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        X, Y = np.meshgrid(self.x, self.y)
        return X, Y

    def index_box(self, box: Box) -> tuple[slice, slice]:
        """Row/column slices of the nodes of a grid-aligned closed box."""
        i0 = self._snap((box[0] - self.x0) / self.hx)
        i1 = self._snap((box[1] - self.x0) / self.hx)
        j0 = self._snap((box[2] - self.y0) / self.hy)
        j1 = self._snap((box[3] - self.y0) / self.hy)
        if i0 < 0 or j0 < 0 or i1 > self.nx or j1 > self.ny:
            raise DomainError(f"box {box} is not inside the grid")
        return slice(j0, j1 + 1), slice(i0, i1 + 1)

    def subgrid(self, box: Box) -> "GridSpec":
        rows, cols = self.index_box(box)
        return GridSpec(self.x0 + cols.start * self.hx, self.y0 + rows.start * self.hy,
                        self.hx, self.hy, cols.stop - cols.start - 1,
                        rows.stop - rows.start - 1, self.nt)

    @staticmethod
    def _snap(v: float) -> int:
        k = int(round(v))
        if abs(v - k) > 1e-9:
            raise ConfigurationError(f"box edge is not on a grid line (offset {v})")
        return k


def build_grid(domain: DomainSpec, nx: int, ny: int, nt: int = 256) -> GridSpec:
    x_lo, x_hi, y_lo, y_hi = domain.omega3
    grid = GridSpec(x_lo, y_lo, (x_hi - x_lo) / nx, (y_hi - y_lo) / ny, int(nx), int(ny), int(nt))
    for name in ("omega", "omega1", "omega2"):
        grid.index_box(domain.box(name))
    # extension operators reflect inside Omega on whole nodes
    grid.index_box((-domain.extension_depth, 0.0, -domain.extension_depth, 0.0))
    return grid


def grid_for_spacing(domain: DomainSpec, h: float, nt: int = 256) -> GridSpec:
    x_lo, x_hi, y_lo, y_hi = domain.omega3
    nx = int(round((x_hi - x_lo) / h))
    ny = int(round((y_hi - y_lo) / h))
    return build_grid(domain, nx, ny, nt)


@dataclass(frozen=True)
class ReturnProfile:
    """Time profile gamma, spatial cutoff chi and the lambda cutoff.

    gamma ramps up on [1/8, 1/4], equals ``M`` on [1/4, 3/4] and ramps down on
    [3/4, 7/8].  chi is a tensor product of plateaus equal to one on the
    closure of Omega_2 and vanishing ``chi_margin`` before the edge of Omega_3.
    """
    M: float
    domain: DomainSpec
    lambda_d: float = 0.1
    t_ramp: tuple[float, float, float, float] = (0.125, 0.25, 0.75, 0.875)
    chi_boxes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.M <= 0:
            raise InvalidParameterError("M must be positive")
        if not 0 < self.lambda_d < 0.5:
            raise InvalidParameterError("lambda cutoff d must lie in (0, 1/2)")
        d = self.domain
        ramp = d.l - d.chi_margin
        b = d.omega2
        object.__setattr__(self, "chi_boxes", (b[0], b[1], b[2], b[3], ramp))

    def gamma(self, t):
        a, b, c, e = self.t_ramp
        t = np.asarray(t, dtype=float)
        return self.M * smooth_step((t - a) / (b - a)) * smooth_step((e - t) / (e - c))

    def dgamma(self, t):
        a, b, c, e = self.t_ramp
        t = np.asarray(t, dtype=float)
        up, dn = (t - a) / (b - a), (e - t) / (e - c)
        return self.M * (smooth_step_deriv(up) / (b - a) * smooth_step(dn)
                         - smooth_step(up) * smooth_step_deriv(dn) / (e - c))

    def gamma_integral(self, t0: float = 0.0, t1: float = 1.0) -> float:
        return integrate.quad(lambda s: float(self.gamma(s)), t0, t1,
                              points=list(self.t_ramp), epsabs=1e-13, limit=200)[0]

    def chi(self, x1, x2):
        a1, b1, a2, b2, r = self.chi_boxes
        return plateau(x1, a1, b1, r) * plateau(x2, a2, b2, r)

    def lam(self, t):
        d = self.lambda_d
        return 1.0 - smooth_step((np.asarray(t, dtype=float) - d) / d)

    def y_star(self, x1, x2, t):
        """Return field gamma(t) chi(x) e1 as an array of shape (2, ...)."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        lo1, hi1, lo2, hi2 = self.domain.omega3
        eps = 1e-12
        if np.any((x1 < lo1 - eps) | (x1 > hi1 + eps) | (x2 < lo2 - eps) | (x2 > hi2 + eps)):
            raise DomainError("y_star evaluated outside the closure of Omega_3")
        v1 = self.gamma(t) * self.chi(x1, x2)
        return np.stack([v1, np.zeros_like(v1)])


def y_star(x, t, profile: ReturnProfile) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.moveaxis(profile.y_star(x[..., 0], x[..., 1], t), 0, -1)


def choose_M(domain: DomainSpec, grid: GridSpec | None = None, lambda_d: float = 0.1,
             max_doublings: int = 8) -> float:
    """Smallest tried speed M = 2.5 (L + 2l) * 2**n whose return flow flushes Omega_2."""
    from .flow import FlowMap, flush_check

    if grid is None:
        grid = grid_for_spacing(domain, domain.l / 16)
    M = 2.5 * (domain.L + 2.0 * domain.l)
    for _ in range(max_doublings + 1):
        profile = ReturnProfile(M, domain, lambda_d)
        ok, _margin = flush_check(FlowMap(grid, profile), domain)
        if ok:
            return M
        M *= 2.0
    raise ConfigurationError("return flow does not flush Omega_2 after 8 doublings of M")


def weight_eval(t, k: float):
    """Time weight (1/2 + t/8)^(-k)."""
    return (0.5 + np.asarray(t, dtype=float) / 8.0) ** (-k)


def weight_trick_bound(k: float, n_samples: int = 257) -> float:
    """sup_t w_k(t) * int_0^1 w_k(s)^-2 ds, checked against 5/(2k+1)."""
    integral, err = integrate.quad(lambda s: weight_eval(s, k) ** -2, 0.0, 1.0,
                                   epsabs=1e-14, epsrel=1e-13)
    if err > 1e-10:
        raise RuntimeError(f"weight quadrature error {err:.2e} above 1e-10")
    t = np.linspace(0.0, 1.0, n_samples)
    bound = float(np.max(weight_eval(t, k)) * integral)
    if bound > 5.0 / (2 * k + 1):
        raise RuntimeError(f"weight bound {bound} exceeds 5/(2k+1) for k={k}")
    return bound


def weight_partial_product(t: float, k: float) -> float:
    """w_k(t) * int_0^t w_k(s)^-1 ds, which tends to zero as k grows."""
    val = integrate.quad(lambda s: 1.0 / weight_eval(s, k), 0.0, t, epsabs=1e-14)[0]
    return float(weight_eval(t, k) * val)
