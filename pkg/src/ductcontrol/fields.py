"""Grid fields, difference operators, Hoelder-norm estimation and extensions."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import UnsupportedError
from .geometry import Box, DomainSpec, GridSpec, plateau


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def restrict(self, box: Box) -> "ScalarField":
        rows, cols = self.grid.index_box(box)
        return ScalarField(self.grid.subgrid(box), self.values[rows, cols].copy())


@dataclass(frozen=True)
class VectorField:
    grid: GridSpec
    values: np.ndarray  # (2, ny+1, nx+1)

    def __post_init__(self):
        if self.values.shape != (2,) + self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != (2,) + {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def v1(self) -> ScalarField:
        return ScalarField(self.grid, self.values[0])

    @property
    def v2(self) -> ScalarField:
        return ScalarField(self.grid, self.values[1])

    def restrict(self, box: Box) -> "VectorField":
        rows, cols = self.grid.index_box(box)
        return VectorField(self.grid.subgrid(box), self.values[:, rows, cols].copy())


# -- difference operators on raw arrays (last two axes are x2, x1) ----------

def d1(a: np.ndarray, hx: float) -> np.ndarray:
    return np.gradient(a, hx, axis=-1, edge_order=2)


def d2(a: np.ndarray, hy: float) -> np.ndarray:
    return np.gradient(a, hy, axis=-2, edge_order=2)


def curl_array(v: np.ndarray, hx: float, hy: float) -> np.ndarray:
    return d1(v[..., 1, :, :], hx) - d2(v[..., 0, :, :], hy)


def div_array(v: np.ndarray, hx: float, hy: float) -> np.ndarray:
    return d1(v[..., 0, :, :], hx) + d2(v[..., 1, :, :], hy)


def perp_grad_array(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    return np.stack([d2(f, hy), -d1(f, hx)], axis=-3)


def grad_array(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    return np.stack([d1(f, hx), d2(f, hy)], axis=-3)


def laplacian_5pt(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Five-point Laplacian on interior nodes; boundary nodes are zero."""
    out = np.zeros_like(f)
    out[..., 1:-1, 1:-1] = (
        (f[..., 1:-1, 2:] - 2 * f[..., 1:-1, 1:-1] + f[..., 1:-1, :-2]) / hx**2
        + (f[..., 2:, 1:-1] - 2 * f[..., 1:-1, 1:-1] + f[..., :-2, 1:-1]) / hy**2)
    return out


def curl2d(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, curl_array(v.values, g.hx, g.hy))


def div2d(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, div_array(v.values, g.hx, g.hy))


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField(g, grad_array(f.values, g.hx, g.hy))


def perp_grad(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField(g, perp_grad_array(f.values, g.hx, g.hy))


def div_tol(v: np.ndarray, grid: GridSpec) -> float:
    """Threshold under which a discrete field counts as divergence free."""
    return 10.0 * grid.h**2 * float(np.max(np.abs(v))) + 1e-13


def wall_normal_trace(v: np.ndarray) -> np.ndarray:
    """v . n on the bottom and top rows of an Omega-grid field (..., 2, ny, nx)."""
    return np.concatenate([-v[..., 1, 0, :], v[..., 1, -1, :]], axis=-1)


# -- Hoelder norms ------------------------------------------------------------

def _derivatives(a: np.ndarray, hx: float, hy: float, order: int) -> list[np.ndarray]:
    """All mixed difference derivatives of exact total ``order``."""
    out = []
    for k1 in range(order, -1, -1):
        d = a
        for _ in range(k1):
            d = d1(d, hx)
        for _ in range(order - k1):
            d = d2(d, hy)
        out.append(d)
    return out


def _pair_offsets(hx: float, hy: float, radius: float) -> list[tuple[int, int, float]]:
    ri = int(np.floor(radius / hx + 1e-9))
    rj = int(np.floor(radius / hy + 1e-9))
    offs = []
    for dj in range(0, rj + 1):
        for di in range(-ri, ri + 1):
            if dj == 0 and di <= 0:
                continue
            dist = np.hypot(di * hx, dj * hy)
            if dist <= radius * (1 + 1e-12):
                offs.append((dj, di, dist))
    return offs


def _magnitude(a: np.ndarray, vector: bool) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=-3)) if vector else np.abs(a)


def holder_norm_array(a: np.ndarray, hx: float, hy: float, m: int, alpha: float,
                      vector: bool = False, radius_cells: float = 4.0) -> np.ndarray:
    """Discrete ||.||_{m,alpha} of ``a`` over its whole grid, batched over leading axes.

    Sup terms use difference derivatives up to order ``m``; the Hoelder term
    compares node pairs at distance at most ``radius_cells * max(hx, hy)``.
    """
    if m > 3:
        raise UnsupportedError(f"Hoelder norms of order {m} > 3 are not supported")
    lead = a.shape[:-3] if vector else a.shape[:-2]
    total = np.zeros(lead)
    for order in range(m + 1):
        for d in _derivatives(a, hx, hy, order):
            total = total + _magnitude(d, vector).max(axis=(-2, -1))
    if alpha > 0:
        radius = radius_cells * max(hx, hy)
        for d in _derivatives(a, hx, hy, m):
            best = np.zeros(lead)
            ny, nx = d.shape[-2:]
            for dj, di, dist in _pair_offsets(hx, hy, radius):
                if di >= 0:
                    p = d[..., dj:, di:]
                    q = d[..., :ny - dj, :nx - di]
                else:
                    p = d[..., dj:, :nx + di]
                    q = d[..., :ny - dj, -di:]
                if p.shape[-1] == 0 or p.shape[-2] == 0:
                    continue
                diff = _magnitude(p - q, vector).max(axis=(-2, -1))
                best = np.maximum(best, diff / dist**alpha)
            total = total + best
    return total


@dataclass(frozen=True)
class HolderEstimate:
    m: int
    alpha: float
    value: float
    subdomain: str = ""


def holder_norm(f: ScalarField | VectorField, m: int, alpha: float,
                subdomain: Box | None = None, name: str = "") -> HolderEstimate:
    if m > 3:
        raise UnsupportedError(f"Hoelder norms of order {m} > 3 are not supported")
    if subdomain is not None:
        f = f.restrict(subdomain)
    g = f.grid
    vector = isinstance(f, VectorField)
    val = holder_norm_array(f.values, g.hx, g.hy, m, alpha, vector)
    return HolderEstimate(m, alpha, float(val), name)


# -- extension operators ------------------------------------------------------

# f(-s) ~ 3 f(s) - 2 f(2s) matches value and first derivative across a face.
_REFLECT = ((1, 3.0), (2, -2.0))


def _reflect_axis(a: np.ndarray, lo: int, hi: int, depth: int, axis: int) -> np.ndarray:
    """Fill ``depth`` nodes beyond [lo, hi] along ``axis`` by reflection."""
    a = np.moveaxis(a, axis, -1)
    for k in range(1, depth + 1):
        a[..., lo - k] = sum(c * a[..., lo + b * k] for b, c in _REFLECT)
        a[..., hi + k] = sum(c * a[..., hi - b * k] for b, c in _REFLECT)
    return np.moveaxis(a, -1, axis)


def extension_cutoff(grid: GridSpec, domain: DomainSpec) -> np.ndarray:
    """Smooth cutoff equal to one on the closed duct, zero beyond the extension depth."""
    X, Y = grid.mesh()
    d = domain.extension_depth
    return plateau(X, 0.0, domain.L, d) * plateau(Y, 0.0, domain.W, d)


class Extender:
    """Linear extension from duct nodes to the Omega_3 grid (pi_1 / pi_2).

    Reflection across each face that preserves first derivatives, then a
    smooth cutoff.  The restriction to the duct is untouched and the result
    vanishes outside Omega_2.
    """

    def __init__(self, grid: GridSpec, domain: DomainSpec):
        self.grid = grid
        self.domain = domain
        self.rows, self.cols = grid.index_box(domain.omega)
        nxo = self.cols.stop - self.cols.start - 1
        nyo = self.rows.stop - self.rows.start - 1
        self.depth_x = int(round(domain.extension_depth / grid.hx))
        self.depth_y = int(round(domain.extension_depth / grid.hy))
        if 2 * self.depth_x > nxo or 2 * self.depth_y > nyo:
            raise UnsupportedError("extension depth exceeds half the duct size")
        self.cutoff = extension_cutoff(grid, domain)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        """Extend an array whose last two axes are the duct nodes."""
        lead = f.shape[:-2]
        out = np.zeros(lead + self.grid.shape)
        out[..., self.rows, self.cols] = f
        i0, i1 = self.cols.start, self.cols.stop - 1
        j0, j1 = self.rows.start, self.rows.stop - 1
        band = out[..., self.rows, :]
        band = _reflect_axis(band, i0, i1, self.depth_x, axis=-1)
        out[..., self.rows, :] = band
        out = _reflect_axis(out, j0, j1, self.depth_y, axis=-2)
        out *= self.cutoff
        out[..., self.rows, self.cols] = f
        return out


def extend_pi(f: ScalarField | VectorField, grid: GridSpec, domain: DomainSpec,
              order: int | None = None) -> ScalarField | VectorField:
    ext = Extender(grid, domain)
    if isinstance(f, VectorField):
        if order not in (None, 2):
            raise ValueError("vector fields use the order-2 extension")
        return VectorField(grid, ext(f.values))
    if order not in (None, 1):
        raise ValueError("scalar fields use the order-1 extension")
    return ScalarField(grid, ext(f.values))


def _probe_basis(grid: GridSpec, domain: DomainSpec) -> list[np.ndarray]:
    sub = grid.subgrid(domain.omega)
    X, Y = sub.mesh()
    xs, ys = X / domain.L, Y / domain.W
    probes = [np.ones_like(X), xs, ys, xs * ys]
    for k in (1, 2):
        probes.append(np.cos(k * np.pi * xs) * np.sin(np.pi * ys))
        probes.append(np.sin(k * np.pi * xs) * np.cos(np.pi * ys))
    return probes


def measure_extension_norm(grid: GridSpec, domain: DomainSpec, m: int = 0,
                           alpha: float = 0.5) -> float:
    """max over a fixed probe basis of ||ext f||_{m,alpha,Omega_3} / ||f||_{m,alpha,Omega}."""
    ext = Extender(grid, domain)
    ratios = []
    for p in _probe_basis(grid, domain):
        num = holder_norm_array(ext(p), grid.hx, grid.hy, m, alpha)
        den = holder_norm_array(p, grid.hx, grid.hy, m, alpha)
        ratios.append(float(num / den))
    return max(ratios)


# -- bicubic interpolation ------------------------------------------------------

@numba.njit(cache=True)
def _keys(t):
    # cubic convolution weights (a = -1/2) for nodes -1, 0, 1, 2
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


@numba.njit(cache=True)
def _locate(n, u):
    i = int(np.floor(u))
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    t = u - i
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return i, t


@numba.njit(cache=True)
def bicubic_stencil(ny, nx, x0, y0, hx, hy, px, py):
    """Base cell indices and cubic-convolution weights of a point."""
    i, tx = _locate(nx, (px - x0) / hx)
    j, ty = _locate(ny, (py - y0) / hy)
    return i, j, _keys(tx), _keys(ty)


@numba.njit(cache=True)
def _clamp(a, n):
    return 0 if a < 0 else (n - 1 if a > n - 1 else a)


@numba.njit(cache=True)
def apply_stencil(a, i, j, wx, wy):
    ny, nx = a.shape
    acc = 0.0
    if i >= 1 and i + 2 <= nx - 1 and j >= 1 and j + 2 <= ny - 1:
        for b in range(4):
            r = j - 1 + b
            acc += wy[b] * (a[r, i - 1] * wx[0] + a[r, i] * wx[1]
                            + a[r, i + 1] * wx[2] + a[r, i + 2] * wx[3])
        return acc
    for b in range(4):
        r = _clamp(j - 1 + b, ny)
        row = 0.0
        for c in range(4):
            row += wx[c] * a[r, _clamp(i - 1 + c, nx)]
        acc += wy[b] * row
    return acc


@numba.njit(cache=True)
def bicubic_point(a, x0, y0, hx, hy, px, py):
    ny, nx = a.shape
    i, j, wx, wy = bicubic_stencil(ny, nx, x0, y0, hx, hy, px, py)
    return apply_stencil(a, i, j, wx, wy)


@numba.njit(cache=True)
def _bicubic_many(a, x0, y0, hx, hy, px, py, out):
    for k in range(px.shape[0]):
        out[k] = bicubic_point(a, x0, y0, hx, hy, px[k], py[k])


@numba.njit(cache=True, parallel=True)
def _bicubic_stack(stack, x0, y0, hx, hy, px, py, out):
    ny, nx = stack.shape[1], stack.shape[2]
    for k in numba.prange(px.shape[0]):
        i0, j0, wx, wy = bicubic_stencil(ny, nx, x0, y0, hx, hy, px[k], py[k])
        for m in range(stack.shape[0]):
            out[m, k] = apply_stencil(stack[m], i0, j0, wx, wy)


def interpolate_stack(stack: np.ndarray, grid: GridSpec, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Sample each array of ``stack`` (m, ny+1, nx+1) at the points; returns (m, *px.shape)."""
    shape = np.shape(px)
    fx = np.ascontiguousarray(np.ravel(px), dtype=float)
    fy = np.ascontiguousarray(np.ravel(py), dtype=float)
    st = np.ascontiguousarray(stack, dtype=float)
    out = np.empty((st.shape[0], fx.shape[0]))
    _bicubic_stack(st, grid.x0, grid.y0, grid.hx, grid.hy, fx, fy, out)
    return out.reshape((st.shape[0],) + shape)


def interpolate(a: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Bicubic (cubic convolution) sampling of a grid array at points (..., 2)."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    out = np.empty(flat.shape[0])
    _bicubic_many(np.ascontiguousarray(a, dtype=float), grid.x0, grid.y0, grid.hx, grid.hy,
                  np.ascontiguousarray(flat[:, 0]), np.ascontiguousarray(flat[:, 1]), out)
    return out.reshape(pts.shape[:-1])


# -- snapshot files -------------------------------------------------------------

def write_snapshot(path: str | Path, values: np.ndarray, grid: GridSpec) -> None:
    """Header ``nx ny hx hy x0 y0`` (node counts), then one line per x2 row."""
    ny, nx = values.shape
    lines = [" ".join(f"{v:.17g}" for v in (nx, ny, grid.hx, grid.hy, grid.x0, grid.y0))]
    for row in values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path: str | Path) -> tuple[np.ndarray, GridSpec]:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 6:
        raise ValueError(f"{path}: malformed snapshot header")
    nx, ny = int(float(head[0])), int(float(head[1]))
    hx, hy, x0, y0 = (float(v) for v in head[2:])
    rows = [r for r in text[1:] if r.strip()]
    if len(rows) != ny:
        raise ValueError(f"{path}: expected {ny} rows, found {len(rows)}")
    values = np.array([[float(v) for v in r.split()] for r in rows])
    if values.shape != (ny, nx):
        raise ValueError(f"{path}: expected {ny}x{nx} values")
    return values, GridSpec(x0, y0, hx, hy, nx - 1, ny - 1)
