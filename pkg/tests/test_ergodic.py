from __future__ import annotations

import numpy as np
import pytest

from hjsys.cli import scalar_well_reference
from hjsys.errors import BoundViolated, ExtrapolationUnstable, NotConverged, PreconditionFailed
from hjsys.ergodic import (default_schedule, ergodic_bounds, extrapolate_to_zero, solve_discounted, stationary_residual,
                           vanishing_discount)
from hjsys.grid import DiscreteSystem, TorusGrid
from hjsys.model import ModelProblem, eikonal, shifted_eikonal

from conftest import well


def _ex49_oracle(a, b, lam):
    # constant ansatz: (lam + D) v = f with D = [[1,-1],[-1,1]]
    return np.linalg.solve(np.array([[lam + 1, -1], [-1, lam + 1]]), [a, b])


class TestDiscounted:
    @pytest.mark.parametrize("method", ["newton", "march"])
    def test_constant_costs_closed_form(self, ex49, grid64, method):
        sol = solve_discounted(DiscreteSystem(ex49, grid64), 0.1, tol=1e-9, method=method, max_iters=10**6)
        want = _ex49_oracle(1, 3, 0.1)
        np.testing.assert_allclose(want, [19.5238095, 20.4761905], atol=1e-6)
        np.testing.assert_allclose(sol.field.values, want[:, None].repeat(64, 1), atol=1e-6)

    def test_zero_costs(self, grid64):
        p = ModelProblem((eikonal(f=0.0),) * 3, [[2, -1, -1], [0, 1, -1], [-3, 0, 4]])
        sol = solve_discounted(DiscreteSystem(p, grid64), 0.01)
        assert not sol.field.values.any()

    @pytest.mark.parametrize("lam", [1.0, 0.1, 0.01])
    def test_coupling_bound_and_positivity(self, two_well, lam):
        g = TorusGrid(1, 128)
        s = DiscreteSystem(two_well, g)
        v = solve_discounted(s, lam).field.values
        M = 2.0
        Dv = np.einsum("ij,j...->i...", np.array([[1, -1], [-1, 1]]), v)
        assert np.max(np.abs(Dv)) <= M + 1e-8
        assert v.min() >= -1e-9
        assert v.max() <= M / lam + 1e-8

    def test_methods_agree(self, two_well):
        s = DiscreteSystem(two_well, TorusGrid(1, 64))
        a = solve_discounted(s, 0.3, method="newton").field.values
        b = solve_discounted(s, 0.3, method="march", max_iters=10**6).field.values
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_not_converged(self, two_well, grid64):
        with pytest.raises(NotConverged):
            solve_discounted(DiscreteSystem(two_well, grid64), 0.01, method="march", max_iters=10)

    def test_box_is_sharp(self):
        # F(x, 0) = 2 and f = -5 give v = -7 / lam, on the boundary of the box M / lam
        p = ModelProblem((shifted_eikonal(2.0, f=-5.0),), [[0.0]])
        sol = solve_discounted(DiscreteSystem(p, TorusGrid(1, 32)), 0.5)
        np.testing.assert_allclose(sol.field.values, -14.0, atol=1e-9)

    def test_box_violation_raised(self, two_well, grid64, monkeypatch):
        import hjsys.ergodic as erg

        monkeypatch.setattr(erg, "_newton", lambda s, lam, v, tol, it: (v - 1.0, 1, 0.0))
        with pytest.raises(BoundViolated):
            solve_discounted(DiscreteSystem(two_well, grid64), 0.5)

    def test_invalid_lambda(self, two_well, grid64):
        with pytest.raises(ValueError):
            solve_discounted(DiscreteSystem(two_well, grid64), 0.0)


class TestVanishingDiscount:
    def test_constant_costs(self, ex49, grid64):
        res = vanishing_discount(DiscreteSystem(ex49, grid64))
        np.testing.assert_allclose(res.c_estimate, [-2, -2], atol=1e-3)
        corr = res.corrector.values
        assert np.max(np.abs(corr[0] - corr[1] + 1)) <= 1e-3
        assert len(res.trace) == 13 and res.trace[-1].lam == pytest.approx(0.5 * 2.0**-12)

    def test_scalar_well(self):
        p = ModelProblem((eikonal(f=well),), [[0.0]])
        g = TorusGrid(1, 512)
        s = DiscreteSystem(p, g)
        res = vanishing_discount(s)
        assert abs(res.c_estimate[0]) <= 1e-3
        assert res.anchor == 0
        assert np.max(np.abs(res.corrector.values[0] - scalar_well_reference(g.axis()))) <= 5e-2
        assert all(c.passed for c in res.checks)
        assert np.max(stationary_residual(s, res.corrector, res.c_estimate)) <= 5e-2

    def test_two_wells_vanish_on_F(self, two_well):
        res = vanishing_discount(DiscreteSystem(two_well, TorusGrid(1, 128)))
        names = {c.name: c for c in res.checks}
        assert names["c_zero_when_F_nonempty"].passed and names["corrector_zero_on_F"].passed
        np.testing.assert_allclose(res.c_estimate, [0, 0], atol=1e-3)

    def test_constant_independent_of_anchor(self, ex49, grid64):
        s = DiscreteSystem(ex49, grid64)
        a = vanishing_discount(s, x_star=0).c_estimate
        b = vanishing_discount(s, x_star=37).c_estimate
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_schedule_validated(self, ex49, grid64):
        with pytest.raises(ValueError):
            vanishing_discount(DiscreteSystem(ex49, grid64), lambdas=[0.1, 0.2])

    def test_non_cauchy_trace(self, ex49, grid64, monkeypatch):
        import hjsys.ergodic as erg

        real = erg.solve_discounted
        state = {"k": 0}

        def jittery(system, lam, **kw):
            sol = real(system, lam, **kw)
            state["k"] += 1
            sol.field.values[:] += (-1) ** state["k"] * 0.5 / lam
            return sol

        monkeypatch.setattr(erg, "solve_discounted", jittery)
        with pytest.raises(ExtrapolationUnstable):
            vanishing_discount(DiscreteSystem(ex49, grid64), warm_start=False)

    def test_report_serializes(self, ex49, grid64):
        import json

        res = vanishing_discount(DiscreteSystem(ex49, grid64), lambdas=default_schedule(0.5, 4))
        json.dumps(res.to_json())
        assert len(res.trace_rows()) == 5


class TestExtrapolation:
    def test_exact_for_quadratics(self):
        lams = np.array([0.4, 0.2, 0.1])
        vals = 3.0 - 2 * lams + 5 * lams**2
        assert extrapolate_to_zero(lams, vals) == pytest.approx(3.0, abs=1e-12)

    def test_vector_values(self):
        lams = np.array([0.2, 0.1])
        vals = np.array([[1.0 + 0.2, -1.0], [1.0 + 0.1, -1.0]])
        np.testing.assert_allclose(extrapolate_to_zero(lams, vals), [1.0, -1.0], atol=1e-12)


class TestBounds:
    def test_constant_costs(self, ex49, grid64):
        assert ergodic_bounds(DiscreteSystem(ex49, grid64)) == pytest.approx((2.0, 2.0))

    def test_opposite_wells(self, grid64):
        p = ModelProblem((eikonal(f=well), eikonal(f=lambda x: 1 + np.cos(2 * np.pi * x))), [[1, -1], [-1, 1]])
        lo, up = ergodic_bounds(DiscreteSystem(p, grid64))
        assert lo == pytest.approx(0.0, abs=1e-12) and up == pytest.approx(1.0, abs=1e-12)

    def test_zero_costs(self, grid64):
        p = ModelProblem((eikonal(f=0.0),) * 2, [[1, -1], [-3, 3]])
        assert ergodic_bounds(DiscreteSystem(p, grid64)) == (0.0, 0.0)

    @pytest.mark.parametrize("D", [[[1, -1], [0, 0]], [[2, -1], [-1, 1]]])
    def test_preconditions(self, grid64, D):
        p = ModelProblem((eikonal(f=1.0),) * 2, D)
        with pytest.raises(PreconditionFailed):
            ergodic_bounds(DiscreteSystem(p, grid64))

    def test_x_dependent_coupling_rejected(self, grid64):
        D = lambda x: np.broadcast_to(np.array([[1.0, -1.0], [-1.0, 1.0]]), x.shape + (2, 2))  # noqa: E731
        p = ModelProblem((eikonal(f=1.0),) * 2, D)
        with pytest.raises(PreconditionFailed):
            ergodic_bounds(DiscreteSystem(p, grid64))


class TestStationaryResidual:
    @pytest.mark.parametrize("k", [0.0, 3.7, -12.0])
    def test_exact_pair(self, ex49, grid64, k):
        v = np.stack([np.full(64, k - 0.5), np.full(64, k + 0.5)])
        assert np.max(stationary_residual(DiscreteSystem(ex49, grid64), v, [-2, -2])) <= 1e-12

    def test_wrong_constant(self, ex49, grid64):
        v = np.stack([np.full(64, -0.5), np.full(64, 0.5)])
        assert np.min(stationary_residual(DiscreteSystem(ex49, grid64), v, [-1, -1])) >= 1 - 1e-12
