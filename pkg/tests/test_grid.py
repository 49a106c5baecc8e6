from __future__ import annotations

import numpy as np
import pytest

from hjsys.errors import CflViolated, DegenerateGrid
from hjsys.grid import (DiscreteSystem, TorusGrid, cfl_max_dt, gradient_pair, lf_hamiltonian, monotone_step_probe)
from hjsys.model import ModelProblem, eikonal, quadratic

from conftest import well


class TestTorusGrid:
    @pytest.mark.parametrize("kwargs", [{"dim": 1, "n": 4}, {"dim": 3, "n": 16}, {"dim": 1, "n": 16, "period": 0}])
    def test_degenerate(self, kwargs):
        with pytest.raises(DegenerateGrid):
            TorusGrid(**kwargs)

    def test_cells_roundtrip(self):
        g = TorusGrid(2, 16, 2.0)
        for cell in (0, 17, 255):
            assert g.cell_of(g.point_of(cell)) == cell
        assert g.cell_of([2.0, 2.0]) == 0


class TestGradients:
    def test_constant(self):
        pm, pp = gradient_pair(np.full((1, 32), 3.0), 1 / 32, 1)
        assert not pm.any() and not pp.any()

    def test_sine_slope(self):
        n = 512
        x = np.arange(n) / n
        pm, pp = gradient_pair(np.sin(2 * np.pi * x)[None], 1 / n, 1)
        dx = 1 / n
        assert abs(pm[0, 0, 0] - 2 * np.pi) <= 4 * np.pi**2 * dx
        assert abs(pp[0, 0, 0] - 2 * np.pi) <= 4 * np.pi**2 * dx

    def test_seam(self):
        n = 16
        dx = 1 / n
        u = (np.arange(n) * dx)[None]
        pm, pp = gradient_pair(u, dx, 1)
        assert pm[0, 0, 0] - pp[0, 0, 0] == pytest.approx(-(n - 1) * dx / dx - 1)
        assert (pp[0, 0, -1] - pm[0, 0, -1]) * dx == pytest.approx(-n * dx)


class TestLaxFriedrichs:
    def test_consistency(self):
        p = ModelProblem((quadratic(f=well, sigma=1.5),), [[0.0]])
        for q in (-2.0, 0.0, 0.7):
            exact = 0.5 * 1.5 * q * q - well(0.3)
            assert lf_hamiltonian(p, 0, 0.3, q, q, 5.0) == pytest.approx(exact, abs=1e-14)

    def test_value(self):
        p = ModelProblem((eikonal(),), [[0.0]])
        assert lf_hamiltonian(p, 0, 0.0, -1.0, 1.0, 1.0) == -1.0

    def test_monotone_in_arguments(self):
        p = ModelProblem((eikonal(f=well, sigma=1.0),), [[0.0]])
        rng = np.random.default_rng(0)
        for _ in range(200):
            x, a, b = rng.uniform(0, 1), rng.normal(scale=3), rng.normal(scale=3)
            d = rng.uniform(1e-6, 1.0)
            base = lf_hamiltonian(p, 0, x, a, b, 1.0)
            assert lf_hamiltonian(p, 0, x, a, b + d, 1.0) <= base + 1e-14
            assert lf_hamiltonian(p, 0, x, a - d, b, 1.0) <= base + 1e-14


class TestCfl:
    def test_formula(self):
        p = ModelProblem((eikonal(), eikonal()), [[2, -2], [-1, 1]])
        assert cfl_max_dt(p, TorusGrid(1, 100), 1.0, 0.9) == pytest.approx(0.9 / 102)

    def test_scalar(self):
        p = ModelProblem((eikonal(),), [[0.0]])
        assert cfl_max_dt(p, TorusGrid(1, 64), 2.0, 0.5) == pytest.approx(0.5 / (2.0 * 64))

    def test_halving(self):
        p = ModelProblem((eikonal(),), [[0.0]])
        a = cfl_max_dt(p, TorusGrid(1, 64), 1.0)
        b = cfl_max_dt(p, TorusGrid(1, 128), 1.0)
        assert b == pytest.approx(a / 2)

    def test_violation_raised(self, two_well, grid64):
        s = DiscreteSystem(two_well, grid64)
        with pytest.raises(CflViolated):
            s.check_cfl(1.5 * s.max_dt() / s.cfl_safety)


class TestDiscreteSystem:
    def test_step_is_monotone(self, two_well):
        g = TorusGrid(1, 128)
        rng = np.random.default_rng(1)
        u = rng.normal(size=(2, 128)).cumsum(axis=1) * 0.05
        s = DiscreteSystem(two_well, g, u_ref=u)
        assert s.theta_ok(u)
        assert monotone_step_probe(s, u, s.max_dt(), n_probes=50) >= -1e-15

    def test_periodic_shift_equivariance(self):
        p = ModelProblem((eikonal(f=0.0), eikonal(f=0.0)), [[1, -1], [-1, 1]])
        g = TorusGrid(1, 64)
        s = DiscreteSystem(p, g)
        u = np.random.default_rng(2).normal(size=(2, 64))
        np.testing.assert_allclose(s.operator(np.roll(u, 5, axis=1)), np.roll(s.operator(u), 5, axis=1), atol=1e-13)

    def test_two_dimensional_operator_constant(self):
        p = ModelProblem((eikonal(sigma=lambda x, y: 1 + 0.5 * np.sin(2 * np.pi * y)),), [[0.0]], dim=2)
        s = DiscreteSystem(p, TorusGrid(2, 16))
        assert not s.operator(np.full((1, 16, 16), 4.0)).any()

    def test_jacobian_matches_finite_difference(self, two_well):
        g = TorusGrid(1, 32)
        u = np.random.default_rng(3).normal(size=(2, 32))
        s = DiscreteSystem(two_well, g, u_ref=u)
        J = s.jacobian(u, extra_diag=0.3).toarray()
        h = 1e-7
        for col in (0, 5, 40):
            e = np.zeros(64)
            e[col] = h
            fd = ((s.operator(u + e.reshape(2, 32)) + 0.3 * (u + e.reshape(2, 32)))
                  - (s.operator(u) + 0.3 * u)).ravel() / h
            np.testing.assert_allclose(J[:, col], fd, atol=1e-5)
