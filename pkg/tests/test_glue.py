import numpy as np
import pytest

from ductcontrol.errors import ConfigurationError, DuctControlError, NoContractionError
from ductcontrol.fields import write_snapshot
from ductcontrol.glue import (ControlTrajectory, Segment, assemble_global, export_trajectory,
                              extract_controls, leg_from_elsasser, load_trajectory,
                              slice_invariants, time_reverse)
from ductcontrol.verify import res_tol, residual_mhd_arrays


def _random_segment(shape=(5, 9), n=7, seed=0):
    rng = np.random.default_rng(seed)
    return Segment("s", np.linspace(0.2, 0.8, n), rng.standard_normal((n, 2) + shape),
                   rng.standard_normal((n, 2) + shape), rng.standard_normal((n,) + shape),
                   rng.standard_normal((n,) + shape))


def test_time_reverse_involution():
    s = _random_segment()
    r = time_reverse(time_reverse(s))
    # reflecting the time grid rounds; the field arrays are only reordered and negated
    assert np.allclose(r.times, s.times, rtol=0, atol=1e-15)
    for f in ("u", "H", "p", "q"):
        assert np.array_equal(getattr(r, f), getattr(s, f))
    once = time_reverse(s, 1.0)
    assert np.allclose(once.times, 1.0 - s.times[::-1])
    assert np.array_equal(once.u[0], -s.u[-1]) and np.array_equal(once.p[0], s.p[-1])


def test_reversed_return_trajectory_solves_euler(coarse_ctrl, profile):
    # u = gamma(t) e1 with p = -x1 gamma'(t); reversed: u = -gamma(1 - t) e1, p = -x1 gamma'(1 - t)
    og = coarse_ctrl.og
    g = coarse_ctrl.cfg.grid
    z = coarse_ctrl.ybar
    seg, _ = leg_from_elsasser("leg", z, z, 1.0, og, g.dt, 1.0)
    rev = time_reverse(seg, 1.0)
    X, _ = og.mesh()
    t = rev.times
    exact_p = -X[None] * profile.dgamma(1.0 - t)[:, None, None]
    assert np.allclose(rev.u[:, 0], -profile.gamma(1.0 - t)[:, None, None])
    rm, ri, scale = residual_mhd_arrays(rev.u, rev.H, exact_p, rev.q, 1.0, og, g.dt)
    # only the time differencing of gamma is inexact
    assert rm.max() <= res_tol(og.h, g.dt, scale) and ri.max() == 0.0


def test_leg_scaling(coarse_ctrl):
    og = coarse_ctrl.og
    g = coarse_ctrl.cfg.grid
    z = coarse_ctrl.ybar
    seg1, _ = leg_from_elsasser("a", z, z, 1.0, og, g.dt, 1.0)
    seg2, _ = leg_from_elsasser("b", z, z, 1.0, og, g.dt, 0.25)
    assert seg2.times[-1] == 0.25
    assert np.allclose(seg2.u, 4 * seg1.u) and np.allclose(seg2.p, 16 * seg1.p)


def test_zero_data_skip_null_legs(coarse_ctrl):
    z = np.zeros((2,) + coarse_ctrl.og.shape)
    traj = assemble_global(z, z, z, z, 1.0, coarse_ctrl, skip_null_legs=True)
    _, u, H, p, q = traj.stacked()
    assert not np.any(u) and not np.any(H) and not np.any(p) and not np.any(q)
    assert [s.name for s in traj.segments] == ["leg_a", "pad_a", "pad_b", "leg_b"]


def test_zero_data_gives_return_bumps(coarse_ctrl, profile):
    z = np.zeros((2,) + coarse_ctrl.og.shape)
    traj = assemble_global(z, z, z, z, 1.0, coarse_ctrl, skip_null_legs=False)
    a = traj.segments[0]
    mid = a.n // 2
    assert traj.eps == 0.25
    assert np.allclose(a.u[mid, 0], profile.M / traj.eps)
    assert not np.any(traj.u_initial) and not np.any(traj.u_final)
    assert max(traj.joint_jumps()) == 0.0


def test_invalid_inputs(coarse_ctrl):
    z = np.zeros((2,) + coarse_ctrl.og.shape)
    with pytest.raises(ConfigurationError):
        assemble_global(z, z, z, z, 0.0, coarse_ctrl)
    with pytest.raises(ConfigurationError):
        assemble_global(z[:, :3], z, z, z, 1.0, coarse_ctrl)


def test_eps_halving_exhausted(coarse_ctrl, global_data):
    d = global_data
    # with the smallness gate on, every eps is rejected before any iteration
    with pytest.raises(NoContractionError):
        assemble_global(d["u0"], d["H0"], d["uT"], d["HT"], 1.0, coarse_ctrl, max_halvings=2,
                        require_small=True)


def test_controls_of_return_trajectory(coarse_ctrl, profile):
    og = coarse_ctrl.og
    g = coarse_ctrl.cfg.grid
    seg, _ = leg_from_elsasser("leg", coarse_ctrl.ybar, coarse_ctrl.ybar, 1.0, og, g.dt, 1.0)
    tr = extract_controls(ControlTrajectory([seg], 1.0, 1.0, 1.0, og))
    n = g.nt // 2
    assert np.allclose(tr.normal_plus[n, 0], -profile.M) and np.allclose(tr.normal_plus[n, 1], profile.M)
    assert tr.flux_ok
    # inflow is the left wall only: traces there, NaN on the outflow wall
    assert np.all(np.isfinite(tr.minus_on_plus_inflow[n, 0])) and np.all(np.isnan(tr.minus_on_plus_inflow[n, 1]))


def test_global_run_matches_data(coarse_global, global_data):
    d = global_data
    tr = coarse_global
    assert np.array_equal(tr.u_initial, d["u0"]) and np.array_equal(tr.H_initial, d["H0"])
    scale = max(np.abs(v).max() for v in d.values())
    g = tr.grid
    err = np.abs(tr.u_final - d["uT"]).max() + np.abs(tr.H_final - d["HT"]).max()
    dt = tr.eps / (tr.segments[0].n - 1)
    assert err <= 50 * (g.h**2 + dt**2) * scale
    assert max(tr.joint_jumps()) == 0.0


def test_global_run_invariants(coarse_global):
    inv = slice_invariants(coarse_global)
    assert inv["div_ratio"] <= 1.0 and inv["edge_div_ratio"] <= 1.0
    assert inv["wall_normal"] < 1e-12
    assert extract_controls(coarse_global).flux_ok


def test_export_load_bit_exact(tmp_path, coarse_global, global_data):
    export_trajectory(coarse_global, tmp_path / "tr", data=global_data)
    back, data = load_trajectory(tmp_path / "tr")
    assert back.T == coarse_global.T and back.eps == coarse_global.eps
    for a, b in zip(coarse_global.segments, back.segments):
        assert a.name == b.name
        for f in ("times", "u", "H", "p", "q"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
    for k, v in global_data.items():
        assert np.array_equal(data[k], v)


def test_load_failures(tmp_path, coarse_global):
    with pytest.raises(ConfigurationError):
        load_trajectory(tmp_path)
    out = export_trajectory(coarse_global, tmp_path / "tr", stride=64)
    victim = sorted(out.glob("s0_*_u1.txt"))[0]
    write_snapshot(victim, np.zeros((3, 3)), coarse_global.grid)
    with pytest.raises(DuctControlError):
        load_trajectory(out)
    victim.write_bytes(b"garbage")
    with pytest.raises(DuctControlError):
        load_trajectory(out)
