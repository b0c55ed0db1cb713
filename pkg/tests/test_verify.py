import copy

import numpy as np
import pytest

from ductcontrol.flow import FlowMap
from ductcontrol.verify import (VerificationReport, composition_check, grid_velocity, res_tol,
                                residual_curled, residual_mhd, transport_estimate_check,
                                uniqueness_energy_check, verify_trajectory)


def test_report_table_and_pass():
    rep = VerificationReport()
    rep.add("a", 1.0, 2.0)
    rep.add("b", 3.0, 2.0)
    assert not rep.passed
    lines = rep.table().splitlines()
    assert any("a" in ln and "PASS" in ln for ln in lines)
    assert any("b" in ln and "FAIL" in ln for ln in lines)


def test_res_tol_formula():
    assert res_tol(0.1, 0.2, 3.0, 50) == pytest.approx(50 * 0.05 * 3.0)


def test_curled_residual_passes_on_fixed_point(coarse_run, coarse_ctrl):
    st, _ = coarse_run
    r = residual_curled(st.zp, st.zm, coarse_ctrl.og, coarse_ctrl.cfg.grid.dt)
    assert r.passed and r.per_slice.shape == (coarse_ctrl.cfg.grid.nt + 1,)


def test_curled_residual_fault_injection(coarse_run, coarse_ctrl):
    st, _ = coarse_run
    zp = st.zp.copy()
    og = coarse_ctrl.og
    X, Y = og.mesh()
    n = coarse_ctrl.cfg.grid.nt // 4
    zp[n, 0] += 0.5 * np.sin(np.pi * Y) * np.exp(-((X - 1) ** 2) / 0.05)
    r = residual_curled(zp, st.zm, og, coarse_ctrl.cfg.grid.dt)
    assert not r.passed


def test_verify_global_trajectory(coarse_global, global_data):
    rep = verify_trajectory(coarse_global, global_data)
    assert rep.passed, rep.table()
    names = {r.name for r in rep.rows}
    assert {"div_free", "joint_continuity", "initial_match", "terminal_match"} <= names


def test_verify_detects_corrupted_slice(coarse_global):
    bad = copy.deepcopy(coarse_global)
    seg = bad.segments[0]
    X, Y = bad.grid.mesh()
    seg.u[seg.n // 3, 0] += 0.5 * np.abs(seg.u).max() * np.sin(np.pi * Y) * np.exp(-((X - 1) ** 2) / 0.05)
    assert not residual_mhd(bad)["leg_a"].passed
    assert not verify_trajectory(bad).passed


def test_padding_must_be_zero(coarse_global):
    bad = copy.deepcopy(coarse_global)
    bad.segments[1].p[0] += 1e-3
    assert not residual_mhd(bad)["pad_a"].passed


def test_uniqueness_energy_two_converged_runs(coarse_run, coarse_ctrl, coarse_data):
    st1, _ = coarse_run
    st2, _ = coarse_ctrl.iterate(*coarse_data, tol_X=1e-9, require_small=False)
    rep = uniqueness_energy_check((st2.zp, st2.zm), (st1.zp, st1.zm), coarse_ctrl.og,
                                  coarse_ctrl.cfg.grid.dt)
    assert rep.e[0] == 0.0
    assert rep.passed


def test_energy_report_exposes_trace_mismatch(coarse_run, coarse_ctrl, coarse_data):
    # an early-stopped iterate has different controls: the inequality's premise is off
    st1, _ = coarse_run
    st2, _ = coarse_ctrl.iterate(*coarse_data, tol_X=1e-3, require_small=False)
    rep = uniqueness_energy_check((st2.zp, st2.zm), (st1.zp, st1.zm), coarse_ctrl.og,
                                  coarse_ctrl.cfg.grid.dt)
    assert rep.trace_mismatch > 0.0
    same = uniqueness_energy_check((st1.zp, st1.zm), (st1.zp, st1.zm), coarse_ctrl.og,
                                   coarse_ctrl.cfg.grid.dt)
    assert same.trace_mismatch == 0.0 and not np.any(same.e) and same.passed


def test_energy_check_flags_growth(coarse_ctrl):
    # a difference that appears from nothing violates the inequality with e(0) = 0
    og = coarse_ctrl.og
    nt = 16
    z = np.zeros((nt + 1, 2) + og.shape)
    w = z.copy()
    w[nt // 2:, 0] = 1.0
    rep = uniqueness_energy_check((z, z), (w, z), og, 1.0 / nt)
    assert not rep.passed


def test_transport_estimate_on_return_flow(coarse_grid, profile):
    g = coarse_grid
    fm = FlowMap(g, profile)
    from ductcontrol.solvers import transport_solve
    X, Y = g.mesh()
    j = transport_solve(np.exp(-((X - 1) ** 2 + (Y - 0.5) ** 2) / 0.1), fm)
    v = grid_velocity(fm)
    est = transport_estimate_check(j, v, None, g)
    assert est.passed


def test_composition_estimate(coarse_grid, profile):
    g = coarse_grid
    X, Y = g.mesh()
    G = np.broadcast_to(np.sin(2 * X) * np.cos(3 * Y), (g.nt + 1,) + g.shape).copy()
    est = composition_check(G, FlowMap(g, profile))
    assert est.passed and np.all(est.bound >= 2.0 - 1e-12)
