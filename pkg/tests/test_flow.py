import numpy as np
import pytest

from ductcontrol.errors import FlowBlowupError
from ductcontrol.flow import (FlowMap, box_nodes, flush_check, integrate_flow, jacobian_deviation,
                              origin_sets)
from ductcontrol.geometry import ReturnProfile


def test_no_motion_before_ramp(coarse_grid, profile):
    f = FlowMap(coarse_grid, profile)
    pts = np.array([[0.3, 0.2], [1.7, 0.9]])
    assert np.array_equal(f.integrate(pts, 0.0, 0.125), pts)


def test_plateau_displacement_oracle(coarse_grid, profile):
    # inside the chi plateau the velocity is gamma(t) e1, so x1 moves by int_0^t gamma = M/16 at t=1/4
    f = FlowMap(coarse_grid, profile)
    end = integrate_flow(f, np.array([[0.0, 0.5]]), 0.0, 0.25)
    assert end[0, 0] == pytest.approx(profile.M / 16, abs=1e-8)
    assert end[0, 1] == 0.5


def test_forward_backward_round_trip(coarse_grid, profile):
    f = FlowMap(coarse_grid, profile)
    pts = box_nodes(coarse_grid, (0.0, 1.0, 0.0, 1.0))
    there = f.integrate(pts, 0.0, 0.6)
    back = f.integrate(there, 0.6, 0.0)
    assert np.abs(back - pts).max() < 1e-6


def test_flush_default_M(domain, coarse_grid, profile):
    ok, margin = flush_check(FlowMap(coarse_grid, profile), domain)
    assert ok and margin > 0.1


def test_flush_fails_for_slow_return(domain, coarse_grid):
    # displacement 0.625 M = 1.5625 < width of Omega_2 (3): cannot flush
    ok, margin = flush_check(FlowMap(coarse_grid, ReturnProfile(2.5, domain)), domain)
    assert not ok and margin < 0


def test_origin_sets_avoid_omega2(domain, coarse_grid, profile):
    f = FlowMap(coarse_grid, profile)
    o = origin_sets(f, f, domain)
    assert o.distance > 0
    assert o.cover_error < 1e-6
    assert o.box[1] < domain.omega2[0]
    assert o.chi_tilde(np.array([1.0]), np.array([0.5]))[0] == 0.0
    assert np.all(o.chi_tilde(o.O_plus[:, 0], o.O_plus[:, 1]) == 1.0)


def test_measure_preserving_on_duct(domain, coarse_grid, profile):
    f = FlowMap(coarse_grid, profile)
    seeds = box_nodes(coarse_grid, domain.omega)[::7]
    assert jacobian_deviation(f, domain, t=0.25, seeds=seeds) < 1e-8


def test_blowup_detected(coarse_grid, profile):
    pert = np.zeros((coarse_grid.nt + 1, 2) + coarse_grid.shape)
    pert[:, 1] = 50.0
    f = FlowMap(coarse_grid, profile, pert)
    with pytest.raises(FlowBlowupError):
        f.integrate(np.array([[1.0, 1.5]]), 0.0, 1.0)


def test_perturbation_shape_checked(coarse_grid, profile):
    with pytest.raises(ValueError):
        FlowMap(coarse_grid, profile, np.zeros((3, 2, 4, 4)))


def test_step_maps_are_one_step_inverses(coarse_grid, profile):
    f = FlowMap(coarse_grid, profile)
    sm = f.step_maps()
    g = coarse_grid
    X, Y = g.mesh()
    n = g.nt // 2
    # departure at t_{n-1} of the node at t_n, pushed forward one step, returns to the node
    dep = np.stack([sm.back[n][0].ravel(), sm.back[n][1].ravel()], axis=-1)
    ret = f.integrate(dep, g.times[n - 1], g.times[n])
    # RK4 steps are inverse up to their local truncation error
    assert np.abs(ret[:, 0] - X.ravel()).max() < 1e-6
    assert np.array_equal(sm.back[0][0], X)


def test_constant_perturbation_translates(coarse_grid, profile):
    # before the ramp only the perturbation moves particles
    g = coarse_grid
    pert = np.zeros((g.nt + 1, 2) + g.shape)
    pert[:, 1] = 0.4
    f = FlowMap(g, profile, pert)
    end = f.integrate(np.array([[1.0, 0.2]]), 0.0, 0.125)
    assert end[0, 1] == pytest.approx(0.2 + 0.05, abs=1e-12)
    assert end[0, 0] == pytest.approx(1.0, abs=1e-12)
