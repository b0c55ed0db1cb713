import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ductcontrol.elsasser import from_elsasser, to_elsasser
from ductcontrol.fields import div_array, perp_grad_array, read_snapshot, write_snapshot
from ductcontrol.geometry import GridSpec, plateau, smooth_step, weight_eval, weight_trick_bound
from ductcontrol.glue import Segment, time_reverse

finite = st.floats(-1e3, 1e3, allow_nan=False)
fields = arrays(np.float64, (2, 2, 5, 7), elements=finite)


@given(fields, st.floats(0.05, 20.0))
def test_elsasser_round_trip(uh, mu):
    u, H = uh
    bu, bH = from_elsasser(to_elsasser(u, H, mu))
    scale = 1.0 + np.abs(uh).max() * max(mu, 1 / mu)
    assert np.allclose(bu, u, atol=1e-13 * scale) and np.allclose(bH, H, atol=1e-13 * scale)


@given(st.floats(0.5, 64.0))
def test_weight_bound_any_k(k):
    assert weight_trick_bound(k) <= 5.0 / (2 * k + 1)


@given(st.floats(0.0, 1.0), st.floats(0.5, 32.0))
def test_weight_monotone_in_t(t, k):
    assert weight_eval(t, k) <= weight_eval(0.0, k) == 2.0**k
    assert weight_eval(t, k) >= weight_eval(1.0, k)


@given(arrays(np.float64, (9, 11), elements=finite), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_perp_grad_is_discretely_div_free(f, hx, hy):
    d = div_array(perp_grad_array(f, hx, hy), hx, hy)
    assert np.abs(d).max() <= 1e-10 * (1.0 + np.abs(f).max()) / (hx * hy)


@given(st.floats(-2.0, 3.0))
def test_smooth_step_symmetry_and_range(s):
    a = float(smooth_step(s))
    assert 0.0 <= a <= 1.0
    assert abs(a + float(smooth_step(1.0 - s)) - 1.0) < 1e-14


@given(st.floats(-3.0, 5.0), st.floats(0.01, 1.0))
def test_plateau_range(x, ramp):
    v = float(plateau(x, 0.0, 2.0, ramp))
    assert 0.0 <= v <= 1.0
    if 0.0 <= x <= 2.0:
        assert v == 1.0


@given(arrays(np.float64, (4, 2, 3, 5), elements=finite), st.floats(0.0, 2.0), st.floats(0.1, 3.0))
def test_time_reverse_involution(u, t0, length):
    times = t0 + np.linspace(0.0, length, 4)
    p = u[:, 0]
    seg = Segment("s", times, u, 2 * u, p, -p)
    back = time_reverse(time_reverse(seg))
    assert np.array_equal(back.u, u) and np.array_equal(back.H, 2 * u)
    assert np.array_equal(back.p, p) and np.array_equal(back.q, -p)
    assert np.allclose(back.times, times, atol=1e-14 * (1 + times[-1]))
    r = time_reverse(seg)
    assert np.array_equal(r.u[0], -u[-1])


@settings(max_examples=25)
@given(values=arrays(np.float64, (3, 4), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_snapshot_round_trip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("snap") / "a.txt"
    g = GridSpec(-0.5, 0.25, 0.1, 0.2, 3, 2)
    write_snapshot(path, values, g)
    back, g2 = read_snapshot(path)
    assert np.array_equal(back, values)
    assert (g2.nx, g2.ny, g2.hx, g2.hy, g2.x0, g2.y0) == (3, 2, 0.1, 0.2, -0.5, 0.25)
