"""Command-line entry point: ``ductcontrol --mode MODE --config FILE --out-dir DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy import integrate

from . import plotting
from .controller import (ControllerConfig, NullController, StreamData, calibrate_nu,
                         cancellation_probe, flush_under_perturbations, random_stream,
                         sample_field)
from .elsasser import ElsasserState, from_elsasser
from .errors import ConfigurationError, DuctControlError, VerificationError
from .fields import measure_extension_norm, write_snapshot
from .flow import FlowMap, box_nodes, flush_check, origin_sets
from .geometry import (ReturnProfile, build_domains, build_grid, choose_M, grid_for_spacing,
                       weight_eval, weight_trick_bound)
from .glue import assemble_global, export_trajectory, extract_controls, load_trajectory
from .solvers import transport_solve
from .verify import (VerificationReport, grid_velocity, residual_curled, transport_estimate_check,
                     verify_trajectory)

log = logging.getLogger("ductcontrol")

MODES = ("demo-return", "null-control", "global-control", "verify", "lemma-checks")

DEFAULTS = {
    "domain": {"L": 2.0, "W": 1.0, "l": 0.5},
    "grid": {"h": 1.0 / 32, "nt": 256, "nx": None, "ny": None},
    "profile": {"M": None, "lambda_d": 0.1},
    "controller": {"mu": 1.0, "k": 8.0, "alpha": 0.5, "m_tilde": 3, "tol_X": 1e-8,
                   "max_iter": 25, "require_small": True},
    "data": {},
    "global": {"T": 1.0, "eps_cap": 0.25, "max_halvings": 10},
    "lemma": {"k_values": [4, 8, 16, 32], "perturbations": 16},
    "export": {"stride": 1, "snapshot_times": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "verify": {"trajectory": None},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        if k not in base:
            raise ConfigurationError(f"unknown config key '{path}{k}'")
        if isinstance(base[k], dict) and base[k] and not isinstance(v, dict):
            raise ConfigurationError(f"config key '{path}{k}' must be a mapping")
        if isinstance(base[k], dict) and base[k]:
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return _merge(DEFAULTS, {})
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} not found")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed config {p}: {str(exc).splitlines()[0]}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {p} must be a mapping at top level")
    return _merge(DEFAULTS, raw)


@dataclass
class Setup:
    cfg: dict
    domain: object
    grid: object
    profile: object
    seed: int


def build_setup(cfg: dict, seed: int, resolution_scale: float) -> Setup:
    try:
        d = cfg["domain"]
        domain = build_domains(float(d["L"]), float(d["W"]), float(d["l"]))
        gc = cfg["grid"]
        nt = int(round(int(gc["nt"]) * resolution_scale))
        if gc["nx"] is not None or gc["ny"] is not None:
            # explicit node counts over Omega_3 take precedence over h
            grid = build_grid(domain, int(round(int(gc["nx"]) * resolution_scale)),
                              int(round(int(gc["ny"]) * resolution_scale)), nt)
        else:
            grid = grid_for_spacing(domain, float(gc["h"]) / resolution_scale, nt)
        M = cfg["profile"]["M"]
        lam_d = float(cfg["profile"]["lambda_d"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"bad domain/grid/profile settings: {exc}") from exc
    if M is None:
        M = choose_M(domain, grid, lam_d)
    return Setup(cfg, domain, grid, ReturnProfile(float(M), domain, lam_d), seed)


def _stream_from_spec(spec, rng: np.random.Generator) -> StreamData | None:
    """None for a zero field; otherwise explicit coefficients or a seeded random draw."""
    if spec is None or spec == "zero" or spec == 0:
        return None
    if not isinstance(spec, dict):
        raise ConfigurationError(f"data entry must be a mapping, 'zero' or omitted, got {spec!r}")
    if "a" in spec or "b" in spec:
        a = np.atleast_2d(np.asarray(spec.get("a", [[0.0]]), dtype=float))
        b = np.atleast_2d(np.asarray(spec.get("b", np.zeros_like(a)), dtype=float))
        if a.shape != b.shape or a.shape[1] != a.shape[0] + 1:
            raise ConfigurationError("stream coefficients a, b must both have shape (K, K+1)")
        return StreamData(a, b)
    return random_stream(rng, int(spec.get("modes", 3)), float(spec.get("decay", 2.0)))


def make_field(spec, setup: Setup, rng: np.random.Generator) -> np.ndarray:
    g = setup.grid.subgrid(setup.domain.omega)
    sd = _stream_from_spec(spec, rng)
    if sd is None:
        return np.zeros((2,) + g.shape)
    z = sample_field(sd, setup.domain, setup.grid)
    amp = spec.get("amplitude") if isinstance(spec, dict) else None
    if amp is not None:
        mx = float(np.max(np.abs(z)))
        z = z * (float(amp) / mx if mx > 0 else 0.0)
    return z


def make_controller(setup: Setup) -> NullController:
    c = setup.cfg["controller"]
    try:
        cfg = ControllerConfig(setup.domain, setup.grid, setup.profile, mu=float(c["mu"]),
                               k=float(c["k"]), alpha=float(c["alpha"]),
                               m_tilde=int(c["m_tilde"]), tol_X=float(c["tol_X"]),
                               max_iter=int(c["max_iter"]))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad controller settings: {exc}") from exc
    return NullController(cfg)


def _snapshot_indices(times: np.ndarray, wanted) -> list[int]:
    return sorted({int(np.argmin(np.abs(times - float(t)))) for t in wanted})


# -- modes --------------------------------------------------------------------------------

def run_demo_return(setup: Setup, out: Path) -> int:
    g, d, prof = setup.grid, setup.domain, setup.profile
    fmap = FlowMap(g, prof)
    ok, margin = flush_check(fmap, d)
    orig = origin_sets(fmap, fmap, d)
    X, Y = g.mesh()
    for n in _snapshot_indices(g.times, setup.cfg["export"]["snapshot_times"]):
        t = g.times[n]
        ys = prof.y_star(X, Y, t)
        write_snapshot(out / f"ystar1_t{t:.4f}.txt", ys[0], g)
        write_snapshot(out / f"ystar2_t{t:.4f}.txt", ys[1], g)
    plotting.field_slice(out / "ystar_t0.5.png", prof.y_star(X, Y, 0.5), g, "return field, t = 0.5", d)
    ts = np.linspace(0, 1, 257)
    plotting.write_csv(out / "gamma.csv", ["t", "gamma", "lambda"], zip(ts, prof.gamma(ts), prof.lam(ts)))
    plotting.series(out / "gamma.png", ts, {"gamma": prof.gamma(ts)}, "t", "gamma")
    seeds = box_nodes(g.subgrid(d.omega2), d.omega2)[::37]
    paths = [seeds]
    for a, b in zip(np.linspace(0, 1, 65)[:-1], np.linspace(0, 1, 65)[1:]):
        paths.append(fmap.integrate(paths[-1], a, b))
    plotting.trajectories(out / "particle_paths.png", np.array(paths), d, "return-flow particle paths")
    lines = [f"M {prof.M:.17g}", f"flushes {ok}", f"flush_margin {margin:.17g}",
             f"origin_box {' '.join(f'{v:.17g}' for v in orig.box)}",
             f"origin_distance_to_omega2 {orig.distance:.17g}",
             f"origin_cover_error {orig.cover_error:.17g}",
             f"gamma_integral {prof.gamma_integral():.17g}"]
    (out / "flush_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not ok:
        raise VerificationError(f"return flow does not flush (margin {margin:.3e})")
    return 0


def _null_data(setup: Setup, ctrl: NullController, rng: np.random.Generator):
    data = setup.cfg["data"]
    zp = make_field(data.get("z0_plus", {"modes": 3}), setup, rng)
    zm = make_field(data.get("z0_minus", {"modes": 3}), setup, rng)
    frac = data.get("delta_fraction")
    if frac is not None:
        n = max(ctrl.data_norm(zp), ctrl.data_norm(zm))
        if n > 0:
            s = float(frac) * ctrl.delta / n
            zp, zm = zp * s, zm * s
    return zp, zm


def run_null_control(setup: Setup, out: Path) -> int:
    rng = np.random.default_rng(setup.seed)
    ctrl = make_controller(setup)
    zp, zm = _null_data(setup, ctrl, rng)
    c = setup.cfg["controller"]
    state, rep = ctrl.iterate(zp, zm, log_path=out / "iterations.csv",
                              require_small=bool(c["require_small"]))
    g, og = setup.grid, ctrl.og
    probe = cancellation_probe(ctrl, state.last)
    res = residual_curled(state.zp, state.zm, og, g.dt)
    for n in _snapshot_indices(g.times, setup.cfg["export"]["snapshot_times"]):
        for name, z in (("zplus", state.zp), ("zminus", state.zm)):
            for comp in range(2):
                write_snapshot(out / f"{name}{comp + 1}_t{g.times[n]:.4f}.txt", z[n, comp], og)
    plotting.field_slice(out / "zplus_t0.5.png", state.zp[g.nt // 2], og, "z+ at t = 0.5")
    plotting.field_slice(out / "zplus_t0.png", state.zp[0], og, "z+ at t = 0")
    if len(rep.distances) > 1:
        plotting.series(out / "contraction.png", np.arange(1, len(rep.distances) + 1),
                        {"d_X": np.maximum(rep.distances, 1e-300)}, "iterate", "X distance", logy=True)
    u, H = from_elsasser(ElsasserState(state.zp, state.zm, ctrl.cfg.mu))
    plotting.cross_section(out / "u_midrow_t0.5.csv", u[g.nt // 2], og)
    lines = [f"k {rep.k:.17g}", f"nu {rep.nu:.17g}", f"C_pi {ctrl.cfg.C_pi:.17g}",
             f"delta {rep.delta:.17g}", f"data_norm {rep.data_norm:.17g}",
             f"converged {rep.converged}", f"iterates {len(rep.distances)}",
             f"fitted_kappa {rep.fitted_kappa():.6g}",
             f"j_final_max {rep.j_final[-1]:.6g}", f"z_final_max {rep.z_final[-1]:.6g}",
             f"cancel_tol {state.last.cancel_tol:.6g}",
             f"probe_relative_defect {max(v['relative'] for v in probe.values()):.6g}",
             f"curled_residual {res.max:.6g}", f"curled_res_tol {res.tol:.6g}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not rep.converged:
        raise DuctControlError(f"no convergence in {len(rep.distances)} iterates")
    return 0


def run_global_control(setup: Setup, out: Path) -> int:
    rng = np.random.default_rng(setup.seed)
    ctrl = make_controller(setup)
    data = setup.cfg["data"]
    fields = {k: make_field(data.get(k), setup, rng) for k in ("u0", "H0", "uT", "HT")}
    gl = setup.cfg["global"]
    c = setup.cfg["controller"]
    traj = assemble_global(fields["u0"], fields["H0"], fields["uT"], fields["HT"], float(gl["T"]),
                           ctrl, eps_cap=float(gl["eps_cap"]), max_halvings=int(gl["max_halvings"]),
                           require_small=bool(c["require_small"]))
    export_trajectory(traj, out / "trajectory", fields, stride=int(setup.cfg["export"]["stride"]))
    ctr = extract_controls(traj)
    plotting.write_csv(out / "controls_net_flux.csv", ["t", "flux_plus", "flux_minus"],
                       zip(ctr.times, ctr.net_flux[:, 0], ctr.net_flux[:, 1]))
    times, u, H, _, _ = traj.stacked()
    og = traj.grid
    mid = len(traj.segments[0].times) // 2
    plotting.field_slice(out / "u_leg_a_mid.png", traj.segments[0].u[mid], og, "u, first leg midpoint")
    plotting.field_slice(out / "u_final.png", traj.u_final, og, "u at t = T")
    report = verify_trajectory(traj, fields)
    (out / "verification.txt").write_text(report.table() + "\n")
    print(f"eps {traj.eps:.6g}")
    print(report.table())
    if not report.passed:
        raise VerificationError("assembled trajectory failed verification")
    return 0


def run_verify(setup: Setup, out: Path) -> int:
    path = setup.cfg["verify"]["trajectory"]
    path = Path(path) if path else out / "trajectory"
    if not path.is_dir():
        raise ConfigurationError(f"snapshot directory {path} not found")
    traj, data = load_trajectory(path)
    report = verify_trajectory(traj, data)
    (out / "verification.txt").write_text(report.table() + "\n")
    print(report.table())
    if not report.passed:
        failed = ", ".join(r.name for r in report.rows if not r.passed)
        raise VerificationError(f"verification failed: {failed}")
    return 0


def run_lemma_checks(setup: Setup, out: Path) -> int:
    g, d, prof = setup.grid, setup.domain, setup.profile
    rep = VerificationReport()
    rows = []
    for k in setup.cfg["lemma"]["k_values"]:
        k = float(k)
        try:
            b = weight_trick_bound(k)
            passed = True
        except RuntimeError:
            t = np.linspace(0, 1, 257)
            b = float(np.max(weight_eval(t, k)) * integrate.quad(lambda s: weight_eval(s, k) ** -2, 0, 1)[0])
            passed = False
        rows.append((k, b, 5.0 / (2 * k + 1)))
        rep.add(f"weight_bound[k={k:g}]", b, 5.0 / (2 * k + 1), passed)
    plotting.write_csv(out / "weight_table.csv", ["k", "bound", "limit"], rows)
    ok, margin = flush_check(FlowMap(g, prof), d)
    rep.add("flush_margin_negated", -margin, 0.0, ok and margin > 0)
    C_pi = measure_extension_norm(g, d, m=0, alpha=setup.cfg["controller"]["alpha"])
    rep.add("extension_constant", C_pi, float("inf"), np.isfinite(C_pi))
    nu = calibrate_nu(d, g, prof, C_pi)
    n_pert = int(setup.cfg["lemma"]["perturbations"])
    margins = flush_under_perturbations(d, g, prof, nu * C_pi, n_pert, setup.seed)
    rep.add(f"perturbed_flush_min_margin_negated[n={n_pert}]", -float(margins.min()), 0.0,
            bool(margins.min() > 0))
    X, Y = g.mesh()
    j0 = np.exp(-((X - d.L / 2) ** 2 + (Y - d.W / 2) ** 2) / 0.05)
    fmap = FlowMap(g, prof)
    v = transport_solve(j0, fmap)
    te = transport_estimate_check(v, grid_velocity(fmap), None, g, setup.cfg["controller"]["alpha"])
    rep.add("transport_estimate_max_ratio", float(np.max(te.lhs / te.rhs)), 1.0, te.passed)
    (out / "lemma_checks.txt").write_text(
        rep.table() + f"\nnu_est {nu:.17g}\nC_pi {C_pi:.17g}\nobserved_groenwall {te.groenwall_observed:.6g}\n")
    print(rep.table())
    if not rep.passed:
        raise VerificationError("lemma checks failed")
    return 0


RUNNERS = {"demo-return": run_demo_return, "null-control": run_null_control,
           "global-control": run_global_control, "verify": run_verify,
           "lemma-checks": run_lemma_checks}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ductcontrol",
                                description="Return-method boundary control of 2D ideal MHD in a duct.")
    p.add_argument("--mode", required=True, help="one of: " + ", ".join(MODES))
    p.add_argument("--config", default=None, help="YAML configuration file")
    p.add_argument("--out-dir", default="ductcontrol_out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized data and oracles")
    p.add_argument("--resolution-scale", type=float, default=1.0,
                   help="divide h and multiply nt by this factor")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.mode not in MODES:
            raise ConfigurationError(f"unknown mode '{args.mode}' (choose from {', '.join(MODES)})")
        if not args.resolution_scale > 0:
            raise ConfigurationError("--resolution-scale must be positive")
        cfg = load_config(args.config)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        setup = build_setup(cfg, args.seed, args.resolution_scale)
        code = RUNNERS[args.mode](setup, out)
        log.info("%s finished in %.1f s", args.mode, time.time() - t0)
        return code
    except DuctControlError as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"ductcontrol: error: {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
