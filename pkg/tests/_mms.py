"""Manufactured-solution drivers shared by the solver tests and the acceptance suite."""
import numpy as np

from ductcontrol.flow import FlowMap
from ductcontrol.geometry import ReturnProfile, build_domains, grid_for_spacing
from ductcontrol.solvers import (poisson_dirichlet_array,
                                 poisson_neumann_array, transport_residual, transport_solve)


def observed_orders(hs, errs):
    hs, errs = np.asarray(hs), np.asarray(errs)
    return np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])


def dirichlet_errors(ns=(16, 32, 64)):
    """phi = sin(pi x1 / Lx) sin(pi x2 / Ly) with zero boundary values; max-norm error per h."""
    errs, hs = [], []
    Lx, Ly = 2.5, 1.0
    for n in ns:
        x = np.linspace(0, Lx, n + 1)
        y = np.linspace(0, Ly, n + 1)
        X, Y = np.meshgrid(x, y)
        phi = np.sin(np.pi * X / Lx) * np.sin(np.pi * Y / Ly)
        rhs = (np.pi**2 / Lx**2 + np.pi**2 / Ly**2) * phi
        got = poisson_dirichlet_array(rhs, Lx / n, Ly / n)
        errs.append(np.abs(got - phi).max())
        hs.append(Lx / n)
    return np.array(hs), np.array(errs)


def neumann_errors(ns=(16, 32, 64), L=2.0, W=1.0):
    """Mean-free comparison against an exact solution with exact outward normal derivatives."""
    errs, hs = [], []
    for n in ns:
        x = np.linspace(0, L, 2 * n + 1)
        y = np.linspace(0, W, n + 1)
        hx, hy = L / (2 * n), W / n
        X, Y = np.meshgrid(x, y)
        q = np.cos(np.pi * X / L) + 0.5 * np.cos(np.pi * Y / W) * np.sin(np.pi * X / L)
        lap = (-(np.pi / L) ** 2 * np.cos(np.pi * X / L)
               - 0.5 * ((np.pi / W) ** 2 + (np.pi / L) ** 2) * np.cos(np.pi * Y / W) * np.sin(np.pi * X / L))
        dqdx = -(np.pi / L) * np.sin(np.pi * X / L) + 0.5 * (np.pi / L) * np.cos(np.pi * Y / W) * np.cos(np.pi * X / L)
        dqdy = -0.5 * (np.pi / W) * np.sin(np.pi * Y / W) * np.sin(np.pi * X / L)
        bdata = {"left": -dqdx[:, 0], "right": dqdx[:, -1], "bottom": -dqdy[0, :], "top": dqdy[-1, :]}
        u, _ = poisson_neumann_array(lap, bdata, hx, hy)
        w = np.ones_like(q)
        w[[0, -1], :] *= 0.5
        w[:, [0, -1]] *= 0.5
        qz = q - np.sum(q * w) / np.sum(w)
        errs.append(np.abs(u - qz).max())
        hs.append(hx)
    return np.array(hs), np.array(errs)


def transport_residuals(hs=(1 / 8, 1 / 16, 1 / 32), M=7.5):
    """Solve along the return flow with the source of a manufactured j; PDE residual per h."""
    d = build_domains(2.0, 1.0, 0.5)
    prof = ReturnProfile(M, d)
    res = []
    for h in hs:
        g = grid_for_spacing(d, h, int(round(8 / h)))
        X, Y = g.mesh()
        t = g.times[:, None, None]

        def jm(t):
            return np.exp(-((X - 1.0) ** 2 + (Y - 0.5) ** 2) / 0.3) * (1.0 + np.sin(2 * np.pi * t))

        def djdt(t):
            return np.exp(-((X - 1.0) ** 2 + (Y - 0.5) ** 2) / 0.3) * 2 * np.pi * np.cos(2 * np.pi * t)

        def dj1(t):
            return jm(t) * (-2 * (X - 1.0) / 0.3)

        vel1 = prof.gamma(t) * prof.chi(X, Y)[None]
        G = djdt(t) + vel1 * dj1(t)
        j = transport_solve(jm(0.0), FlowMap(g, prof), G)
        vel = np.stack([vel1, np.zeros_like(vel1)], axis=1)
        res.append(transport_residual(j, vel, G, g, box=d.omega))
    return np.array(hs), np.array(res)

