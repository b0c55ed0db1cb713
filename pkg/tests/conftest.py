import numpy as np
import pytest

from ductcontrol.controller import ControllerConfig, NullController, random_stream, sample_field
from ductcontrol.geometry import ReturnProfile, build_domains, grid_for_spacing

M_DEFAULT = 7.5


@pytest.fixture(scope="session")
def domain():
    return build_domains(2.0, 1.0, 0.5)


@pytest.fixture(scope="session")
def profile(domain):
    return ReturnProfile(M_DEFAULT, domain)


@pytest.fixture(scope="session")
def coarse_grid(domain):
    return grid_for_spacing(domain, 1.0 / 16, 128)


@pytest.fixture(scope="session")
def coarse_ctrl(domain, coarse_grid, profile):
    return NullController(ControllerConfig(domain, coarse_grid, profile))


def stream_pair(domain, grid, seed, amplitude):
    """Two random discrete-perp-gradient fields scaled to the given sup norm."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        z = sample_field(random_stream(rng), domain, grid)
        out.append(z * (amplitude / np.abs(z).max()))
    return out


@pytest.fixture(scope="session")
def coarse_data(domain, coarse_grid):
    return stream_pair(domain, coarse_grid, 1, 0.08)


@pytest.fixture(scope="session")
def coarse_run(coarse_ctrl, coarse_data):
    zp, zm = coarse_data
    return coarse_ctrl.iterate(zp, zm, tol_X=1e-11, require_small=False)


@pytest.fixture(scope="session")
def global_data(domain, coarse_grid):
    u0, H0 = stream_pair(domain, coarse_grid, 11, 0.1)
    uT, HT = stream_pair(domain, coarse_grid, 12, 0.1)
    return {"u0": u0, "H0": H0, "uT": uT, "HT": HT}


@pytest.fixture(scope="session")
def coarse_global(coarse_ctrl, global_data):
    from ductcontrol.glue import assemble_global
    d = global_data
    return assemble_global(d["u0"], d["H0"], d["uT"], d["HT"], 1.0, coarse_ctrl,
                           tol_X=1e-10, require_small=False)
