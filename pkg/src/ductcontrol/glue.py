"""Global exact control on [0, T] from two local null-control runs.

Each leg is a null-control run on [0, 1] compressed into [0, eps] by the
hyperbolic scaling (x, t) -> (x, t/eps); the second leg is solved from the
negated target and reflected in time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import NullController, validate_data
from .elsasser import ElsasserState, from_elsasser, recover_pressures, to_elsasser
from .errors import (CancellationError, ConfigurationError, DuctControlError,
                     FlushViolationError, InvalidParameterError, NoContractionError)
from .fields import div_array, div_tol, holder_norm_array, read_snapshot, write_snapshot
from .geometry import GridSpec

log = logging.getLogger(__name__)

FIELDS = ("u1", "u2", "H1", "H2", "p", "q")


@dataclass
class Segment:
    """One time segment of the glued trajectory; arrays are indexed by slice first."""
    name: str
    times: np.ndarray
    u: np.ndarray
    H: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def n(self) -> int:
        return len(self.times)

    def elsasser(self, mu: float) -> ElsasserState:
        return to_elsasser(self.u, self.H, mu)


@dataclass
class ControlTrajectory:
    segments: list
    T: float
    eps: float
    mu: float
    grid: GridSpec  # duct grid
    info: dict = field(default_factory=dict)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated (times, u, H, p, q); the first node of each later segment is dropped."""
        parts = [self.segments[0]] + [
            Segment(s.name, s.times[1:], s.u[1:], s.H[1:], s.p[1:], s.q[1:]) for s in self.segments[1:]]
        return (np.concatenate([s.times for s in parts]), np.concatenate([s.u for s in parts]),
                np.concatenate([s.H for s in parts]), np.concatenate([s.p for s in parts]),
                np.concatenate([s.q for s in parts]))

    @property
    def u_initial(self):
        return self.segments[0].u[0]

    @property
    def H_initial(self):
        return self.segments[0].H[0]

    @property
    def u_final(self):
        return self.segments[-1].u[-1]

    @property
    def H_final(self):
        return self.segments[-1].H[-1]

    def joint_jumps(self) -> list[float]:
        """Max jump of (u, H) across each joint between consecutive segments."""
        out = []
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            out.append(max(float(np.max(np.abs(a.u[-1] - b.u[0]))),
                           float(np.max(np.abs(a.H[-1] - b.H[0])))))
        return out


def time_reverse(seg: Segment, T: float | None = None) -> Segment:
    """u(t) -> -u(T - t), H(t) -> -H(T - t); pressures are reflected without sign change.

    ``T`` defaults to the sum of the segment's end points so that the time
    grid maps onto itself; applying the map twice is the identity.
    """
    T = seg.times[0] + seg.times[-1] if T is None else T
    return Segment(seg.name, (T - seg.times)[::-1].copy(), -seg.u[::-1].copy(), -seg.H[::-1].copy(),
                   seg.p[::-1].copy(), seg.q[::-1].copy())


def _zero_segment(name: str, t0: float, t1: float, shape: tuple[int, int]) -> Segment:
    z = np.zeros((2, 2) + shape)
    return Segment(name, np.array([t0, t1]), z, z.copy(), np.zeros((2,) + shape),
                   np.zeros((2,) + shape))


def leg_from_elsasser(name: str, zp: np.ndarray, zm: np.ndarray, mu: float, og: GridSpec,
                      dt: float, eps: float) -> tuple[Segment, object]:
    """Scale a [0, 1] Elsaesser run onto [0, eps]: fields by 1/eps, pressures by 1/eps^2."""
    u, H = from_elsasser(ElsasserState(zp, zm, mu))
    pr = recover_pressures(zp, zm, mu, og, dt)
    times = eps * np.arange(zp.shape[0]) * dt
    times[-1] = eps
    return Segment(name, times, u / eps, H / eps, pr.p / eps**2, pr.q / eps**2), pr


def _pin_first(seg: Segment, u: np.ndarray, H: np.ndarray) -> None:
    """Replace slice 0 by the data it equals up to the rounding of the transform and scaling."""
    scale = max(float(np.max(np.abs(u))), float(np.max(np.abs(H))), 1e-300)
    drift = max(float(np.max(np.abs(seg.u[0] - u))), float(np.max(np.abs(seg.H[0] - H))))
    if drift > 1e-12 * scale:
        raise CancellationError(f"leg does not start at its data (drift {drift:.3e})")
    seg.u[0] = u
    seg.H[0] = H


@dataclass
class LegRun:
    eps: float
    state: object
    report: object
    pressures: object


def _run_leg(ctrl: NullController, u: np.ndarray, H: np.ndarray, eps: float, **kw) -> LegRun:
    mu = ctrl.cfg.mu
    z = to_elsasser(eps * u, eps * H, mu)
    state, report = ctrl.iterate(z.zp, z.zm, **kw)
    if not report.converged:
        raise NoContractionError(f"leg did not converge in {len(report.distances)} iterates")
    state.last = state.last.compact()
    return LegRun(eps, state, report, None)


def assemble_global(u0: np.ndarray, H0: np.ndarray, uT: np.ndarray, HT: np.ndarray, T: float,
                    ctrl: NullController, eps_cap: float = 0.25, max_halvings: int = 10,
                    skip_null_legs: bool = False, **iterate_kw) -> ControlTrajectory:
    """Exact control from (u0, H0) to (uT, HT) on [0, T] on the duct grid.

    Legs whose data vanish are run through the controller too (giving the
    scaled return bump) unless ``skip_null_legs`` is set, in which case the
    zero state is used there.
    """
    if not T > 0:
        raise InvalidParameterError("T must be positive")
    cfg = ctrl.cfg
    og, mu, dt = ctrl.og, cfg.mu, cfg.grid.dt
    for name, v in (("u0", u0), ("H0", H0), ("uT", uT), ("HT", HT)):
        if v.shape != (2,) + og.shape:
            raise ConfigurationError(f"{name} has shape {v.shape}, expected {(2,) + og.shape}")
        validate_data(v, og, name)
    eps = min(T / 4.0, eps_cap)
    failures = []
    legs = None
    for attempt in range(max_halvings + 1):
        try:
            legs = []
            for u, H in ((u0, H0), (-uT, -HT)):
                if skip_null_legs and not np.any(u) and not np.any(H):
                    legs.append(None)
                else:
                    legs.append(_run_leg(ctrl, u, H, eps, **iterate_kw))
            break
        except (NoContractionError, ConfigurationError, FlushViolationError, CancellationError) as exc:
            failures.append((eps, str(exc)))
            log.info("eps=%.4g rejected: %s", eps, exc)
            legs = None
            eps *= 0.5
    if legs is None:
        raise NoContractionError(
            f"no admissible eps after {max_halvings} halvings; last failures: {failures[-2:]}")

    segs = []
    pressures = []
    if legs[0] is None:
        segs.append(_zero_segment("leg_a", 0.0, eps, og.shape))
        pressures.append(None)
    else:
        st = legs[0].state
        seg, pr = leg_from_elsasser("leg_a", st.zp, st.zm, mu, og, dt, eps)
        _pin_first(seg, u0, H0)
        segs.append(seg)
        pressures.append(pr)
    segs.append(_zero_segment("pad_a", eps, T / 2.0, og.shape))
    segs.append(_zero_segment("pad_b", T / 2.0, T - eps, og.shape))
    if legs[1] is None:
        segs.append(_zero_segment("leg_b", T - eps, T, og.shape))
        pressures.append(None)
    else:
        st = legs[1].state
        seg, pr = leg_from_elsasser("leg_b", st.zp, st.zm, mu, og, dt, eps)
        _pin_first(seg, -uT, -HT)
        segs.append(time_reverse(seg, T))
        pressures.append(pr)
    # zero-state joints carry zero pressure; per-slice zero-mean elsewhere
    for arr in (segs[0].p, segs[0].q):
        arr[-1] = 0.0
    for arr in (segs[-1].p, segs[-1].q):
        arr[0] = 0.0
    info = {"eps_failures": failures,
            "reports": [None if l is None else l.report for l in legs],
            "states": [None if l is None else l.state for l in legs],
            "pressures": pressures}
    return ControlTrajectory(segs, float(T), float(eps), float(mu), og, info)


# -- boundary controls ------------------------------------------------------------------

@dataclass
class ControlTraces:
    times: np.ndarray
    normal_plus: np.ndarray   # (n, 2 walls, ny) z+ . n on x1 = 0 and x1 = L
    normal_minus: np.ndarray
    net_flux: np.ndarray      # (n, 2) integral over the controlled walls of z+ . n, z- . n
    flux_tol: float
    flux_ok: bool
    plus_on_minus_inflow: np.ndarray   # (n, 2 walls, 2, ny), NaN off the inflow set
    minus_on_plus_inflow: np.ndarray


def _trapz_rows(v: np.ndarray, hy: float) -> np.ndarray:
    w = np.full(v.shape[-1], hy)
    w[0] = w[-1] = 0.5 * hy
    return v @ w


def extract_controls(traj: ControlTrajectory, flux_const: float = 1.0) -> ControlTraces:
    """Normal traces on the controlled walls and the inflow data that act as controls."""
    times, u, H, _, _ = traj.stacked()
    z = to_elsasser(u, H, traj.mu)
    g = traj.grid
    sign = np.array([-1.0, 1.0])[None, :, None]   # outward normal is -e1 at x1=0, +e1 at x1=L

    def normal(zz):
        return sign * np.stack([zz[:, 0, :, 0], zz[:, 0, :, -1]], axis=1)

    npl, nmi = normal(z.zp), normal(z.zm)
    flux = np.stack([_trapz_rows(npl, g.hy).sum(axis=1), _trapz_rows(nmi, g.hy).sum(axis=1)], axis=1)
    scale = max(float(np.max(np.abs(z.zp))), float(np.max(np.abs(z.zm))), 1e-300)
    tol = flux_const * g.h * scale

    def on_inflow(values, normals):
        walls = np.stack([values[:, :, :, 0], values[:, :, :, -1]], axis=1)  # (n, 2, 2, ny)
        mask = (normals < 0.0)[:, :, None, :]
        return np.where(mask, walls, np.nan)

    return ControlTraces(times, npl, nmi, flux, tol, bool(np.max(np.abs(flux)) <= tol),
                         on_inflow(z.zp, nmi), on_inflow(z.zm, npl))


# -- export -----------------------------------------------------------------------------

def export_trajectory(traj: ControlTrajectory, out_dir: str | Path, data: dict | None = None,
                      stride: int = 1) -> Path:
    """Per-slice field snapshots of (u1, u2, H1, H2, p, q) plus a plain-text manifest.

    Slices are written segment by segment so residual checks can be
    replayed on each segment's own time grid.  ``data`` optionally holds the
    boundary data arrays (u0, H0, uT, HT), written alongside.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = traj.grid
    lines = [f"T {traj.T:.17g}", f"eps {traj.eps:.17g}", f"mu {traj.mu:.17g}",
             f"grid {g.nx + 1} {g.ny + 1} {g.hx:.17g} {g.hy:.17g} {g.x0:.17g} {g.y0:.17g}",
             f"fields {' '.join(FIELDS)}", f"segments {len(traj.segments)}"]
    count = 0
    for si, seg in enumerate(traj.segments):
        idx = list(range(0, seg.n, stride))
        if idx[-1] != seg.n - 1:
            idx.append(seg.n - 1)
        lines.append(f"segment {seg.name} {len(idx)}")
        for n in idx:
            tag = f"s{si}_{n:05d}"
            arrs = (seg.u[n, 0], seg.u[n, 1], seg.H[n, 0], seg.H[n, 1], seg.p[n], seg.q[n])
            for f, a in zip(FIELDS, arrs):
                write_snapshot(out / f"{tag}_{f}.txt", a, g)
            lines.append(f"slice {tag} {seg.times[n]:.17g}")
            count += 1
    if data:
        for k, v in data.items():
            names = [f"data_{k}_{c + 1}.txt" for c in range(2)]
            for name, comp in zip(names, np.asarray(v)):
                write_snapshot(out / name, comp, g)
            lines.append(f"data {k} {' '.join(names)}")
    lines.insert(0, f"slices {count}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


def _read_checked(path: Path, shape: tuple[int, int]) -> np.ndarray:
    a, _ = read_snapshot(path)
    if a.shape != shape:
        raise ValueError(f"{path.name}: shape {a.shape}, expected {shape}")
    return a


def load_trajectory(path: str | Path) -> tuple[ControlTrajectory, dict]:
    """Inverse of ``export_trajectory``; raises DuctControlError on malformed content."""
    root = Path(path)
    man = root / "manifest.txt"
    if not man.is_file():
        raise ConfigurationError(f"no manifest in {root}")
    head, segs, data_files = {}, [], {}
    cur = None
    try:
        for line in man.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            key = parts[0]
            if key == "segment":
                cur = [parts[1], []]
                segs.append(cur)
            elif key == "slice":
                cur[1].append((parts[1], float(parts[2])))
            elif key == "data":
                data_files[parts[1]] = parts[2:4]
            else:
                head[key] = parts[1:]
        nxn, nyn = int(head["grid"][0]), int(head["grid"][1])
        hx, hy, x0, y0 = (float(v) for v in head["grid"][2:])
        grid = GridSpec(x0, y0, hx, hy, nxn - 1, nyn - 1)
        shape = (nyn, nxn)
        data = {k: np.stack([_read_checked(root / f, shape) for f in files])
                for k, files in data_files.items()}
        out = []
        for name, slices in segs:
            arr = np.stack([np.stack([_read_checked(root / f"{tag}_{f}.txt", shape) for f in FIELDS])
                            for tag, _ in slices])
            out.append(Segment(name, np.array([t for _, t in slices]), arr[:, 0:2], arr[:, 2:4],
                               arr[:, 4], arr[:, 5]))
        traj = ControlTrajectory(out, float(head["T"][0]), float(head["eps"][0]),
                                 float(head["mu"][0]), grid)
    except DuctControlError:
        raise
    except (KeyError, IndexError, ValueError, TypeError, OSError) as exc:
        raise DuctControlError(f"corrupted trajectory in {root}: {exc}") from exc
    return traj, data


def slice_invariants(traj: ControlTrajectory, alpha: float = 0.5) -> dict:
    """Divergence and fixed-wall tangency of every slice.

    The legs are restrictions of fields built on a wider box, where the
    controlled-wall columns are interior nodes differenced centrally.  On
    the duct grid those columns get one-sided stencils, which no longer
    commute with the construction; there the defect is a truncation error
    and is held to 10 h^2 times the slice's C^{3,alpha} norm.  Everywhere else
    the discrete divergence must be at div_tol.
    """
    g = traj.grid
    worst_div, worst_edge, worst_wall = 0.0, 0.0, 0.0
    for seg in traj.segments:
        for f in (seg.u, seg.H):
            dv = np.abs(div_array(f, g.hx, g.hy))
            for n in range(f.shape[0]):
                worst_div = max(worst_div, float(dv[n][:, 1:-1].max()) / div_tol(f[n], g))
            if np.any(dv[..., [0, -1]]):
                c3 = holder_norm_array(f, g.hx, g.hy, 3, alpha, vector=True)
                edge = dv[..., [0, -1]].max(axis=(-1, -2))
                worst_edge = max(worst_edge, float(np.max(edge / (10.0 * g.h**2 * c3 + 1e-300))))
            worst_wall = max(worst_wall, float(np.max(np.abs(f[:, 1, 0, :]))),
                             float(np.max(np.abs(f[:, 1, -1, :]))))
    return {"div_ratio": worst_div, "edge_div_ratio": worst_edge, "wall_normal": worst_wall}
