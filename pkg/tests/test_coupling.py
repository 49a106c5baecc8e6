from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjsys import coupling as cpl
from hjsys.errors import MonotonicityViolated, NotIrreducible, NotNonnegative, RowSumsNonzero

CYCLIC = np.array([[1, -1, 0], [0, 1, -1], [-1, 0, 1]], dtype=float)
NONIRRED_4 = np.array([[1, -1, 0, 0], [-1, 1, 0, 0], [0, 0, 1, -1], [0, 0, -1, 1]], dtype=float)
NONIRRED_2 = np.array([[0, 0], [-1, 1]], dtype=float)
ASYM = np.array([[1, -1], [-2, 2]], dtype=float)


@st.composite
def monotone_matrices(draw, max_m=6, zero_rows=False, dense=False):
    m = draw(st.integers(2, max_m))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    off = rng.uniform(0.1 if dense else 0.0, 2.0, size=(m, m))
    if not dense:
        off *= rng.random((m, m)) < 0.6
    np.fill_diagonal(off, 0.0)
    slack = np.zeros(m) if zero_rows else rng.uniform(0, 1, size=m)
    return np.diag(off.sum(axis=1) + slack) - off


class TestMonotonicity:
    def test_two_by_two_example_holds(self):
        assert cpl.check_monotone_coupling([[1, -1], [-2, 2]]).holds

    def test_positive_offdiagonal_flagged(self):
        rep = cpl.check_monotone_coupling([[1, 1], [0, 1]])
        assert not rep.holds
        kinds = {(v.i, v.j, v.kind) for v in rep.violations}
        assert (0, 1, cpl.ViolationKind.OFFDIAG_SIGN) in kinds

    def test_negative_row_sum_reports_value(self):
        rep = cpl.check_monotone_coupling([[1, -2], [0, 1]])
        rows = [v for v in rep.violations if v.kind is cpl.ViolationKind.ROW_SUM]
        assert len(rows) == 1 and rows[0].i == 0
        assert rows[0].value == pytest.approx(-1.0)

    def test_negative_diagonal_flagged(self):
        rep = cpl.check_monotone_coupling([[-1, 0], [0, 1]])
        assert any(v.kind is cpl.ViolationKind.DIAG_SIGN for v in rep.violations)

    def test_holds_iff_no_violations(self):
        for D in (CYCLIC, [[1, 1], [0, 1]]):
            rep = cpl.check_monotone_coupling(D)
            assert rep.holds == (not rep.violations)

    def test_field_reports_cells(self):
        mats = np.stack([np.eye(2), [[1, 1], [0, 1]]])
        rep = cpl.check_monotone_coupling(cpl.CouplingField(mats))
        assert {v.cell for v in rep.violations} == {1}


class TestIrreducibility:
    def test_cyclic_is_irreducible_with_valid_chains(self):
        w = cpl.is_irreducible(CYCLIC)
        assert w.irreducible and w.separating_set is None
        for (i, j), chain in w.chains.items():
            assert chain[0] == i and chain[-1] == j
            for a, b in zip(chain, chain[1:]):
                assert CYCLIC[a, b] != 0

    def test_block_diagonal_reducible(self):
        w = cpl.is_irreducible(NONIRRED_4)
        assert not w.irreducible and w.chains is None
        assert w.separating_set == frozenset({0, 1})

    def test_lower_triangular_reducible(self):
        w = cpl.is_irreducible(NONIRRED_2)
        assert not w.irreducible
        assert w.separating_set == frozenset({0})

    def test_separating_set_is_closed(self):
        w = cpl.is_irreducible(NONIRRED_4)
        inside = sorted(w.separating_set)
        outside = [j for j in range(4) if j not in w.separating_set]
        assert np.all(NONIRRED_4[np.ix_(inside, outside)] == 0)

    @settings(max_examples=60, deadline=None)
    @given(monotone_matrices(max_m=8))
    def test_agrees_with_bruteforce(self, D):
        assert cpl.is_irreducible(D).irreducible == cpl.is_irreducible_bruteforce(D)


class TestSpectralRadiusAndDecomposition:
    @pytest.mark.parametrize("B, rho", [([[1, 1], [2, 0]], 2.0), (np.zeros((3, 3)), 0.0), ([[0, 1], [1, 0]], 1.0)])
    def test_values(self, B, rho):
        assert cpl.spectral_radius(B) == pytest.approx(rho, abs=1e-10)

    def test_negative_entries_rejected(self):
        with pytest.raises(NotNonnegative):
            cpl.spectral_radius([[0, -1], [1, 0]])

    def test_decompose_example(self):
        dec = cpl.m_decompose(ASYM)
        assert dec.s == 2.0
        np.testing.assert_array_equal(dec.B, [[1, 1], [2, 0]])
        assert dec.rho == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.parametrize("D, s", [(np.zeros((2, 2)), 0.0), (np.eye(2), 1.0)])
    def test_decompose_trivial(self, D, s):
        dec = cpl.m_decompose(D)
        assert dec.s == s and dec.rho == pytest.approx(0.0, abs=1e-12)
        assert not dec.B.any()

    def test_decompose_requires_monotone(self):
        with pytest.raises(MonotonicityViolated):
            cpl.m_decompose([[1, 1], [0, 1]])

    @settings(max_examples=60, deadline=None)
    @given(monotone_matrices())
    def test_decompose_reconstructs(self, D):
        dec = cpl.m_decompose(D)
        # exact up to one rounding of s - d_kk on the diagonal
        np.testing.assert_allclose(dec.s * np.eye(len(D)) - dec.B, D, rtol=0, atol=4 * np.finfo(float).eps * max(1, dec.s))
        assert np.all(dec.B >= 0)
        assert dec.s >= dec.rho - 1e-9


class TestPerron:
    def test_asymmetric_example(self):
        pd = cpl.perron_left_null_vector(ASYM)
        np.testing.assert_allclose(pd.lambda_vec, [2 / 3, 1 / 3], atol=1e-14)
        assert pd.kernel_dim == 1

    def test_cyclic_uniform(self):
        np.testing.assert_allclose(cpl.perron_left_null_vector(CYCLIC).lambda_vec, [1 / 3] * 3, atol=1e-14)

    def test_symmetric(self):
        np.testing.assert_allclose(cpl.perron_left_null_vector([[1, -1], [-1, 1]]).lambda_vec, [0.5, 0.5])

    def test_matches_null_space_oracle(self):
        for D in (ASYM, CYCLIC):
            oracle = cpl.null_space_left(D)[:, 0]
            oracle = oracle / oracle.sum()
            np.testing.assert_allclose(cpl.perron_left_null_vector(D).lambda_vec, oracle, atol=1e-12)

    def test_reducible_rejected(self):
        with pytest.raises(NotIrreducible):
            cpl.perron_left_null_vector(NONIRRED_4)

    def test_degenerate_mode_needs_zero_rows(self):
        with pytest.raises(RowSumsNonzero):
            cpl.perron_left_null_vector([[2, -1], [-1, 1]], cpl.PerronMode.DEGENERATE)

    def test_general_mode_subinvariant(self):
        D = np.array([[2, -1], [-1, 1.5]])
        pd = cpl.perron_left_null_vector(D, cpl.PerronMode.GENERAL)
        assert np.all(pd.lambda_vec > 0)
        assert np.all(D.T @ pd.lambda_vec >= -1e-12)

    @settings(max_examples=60, deadline=None)
    @given(monotone_matrices(zero_rows=True, dense=True))
    def test_kernel_property(self, D):
        pd = cpl.perron_left_null_vector(D)
        assert np.all(pd.lambda_vec > 0)
        assert pd.lambda_vec.sum() == pytest.approx(1.0)
        assert np.max(np.abs(D.T @ pd.lambda_vec)) <= 1e-10
        assert pd.kernel_dim == 1

    @settings(max_examples=40, deadline=None)
    @given(monotone_matrices(zero_rows=True, dense=True), st.floats(0.1, 10.0))
    def test_scaling_invariance(self, D, gamma):
        a = cpl.perron_left_null_vector(D).lambda_vec
        b = cpl.perron_left_null_vector(gamma * D).lambda_vec
        np.testing.assert_allclose(a, b, atol=1e-10)
        _, r = cpl.nonzero_spectrum_check(D)
        _, rg = cpl.nonzero_spectrum_check(gamma * D)
        assert rg == pytest.approx(gamma * r, abs=1e-10 * max(1, gamma * r))


class TestSpectrumAndExponential:
    def test_cyclic_gap(self):
        ok, r = cpl.nonzero_spectrum_check(CYCLIC)
        assert ok and r == pytest.approx(1.5, abs=1e-9)

    def test_asym_gap(self):
        ok, r = cpl.nonzero_spectrum_check(ASYM)
        assert ok and r == pytest.approx(3.0, abs=1e-9)

    def test_zero_matrix_has_no_gap(self):
        assert cpl.nonzero_spectrum_check(np.zeros((2, 2))) == (True, None)

    def test_exponential_of_zero(self):
        np.testing.assert_array_equal(cpl.matrix_exponential(np.zeros((3, 3)), 4.0), np.eye(3))

    def test_exponential_limit(self):
        E = cpl.matrix_exponential(ASYM, 20.0)
        np.testing.assert_allclose(E, np.array([[2, 1], [2, 1]]) / 3, atol=1e-8)

    def test_exponential_against_eigendecomposition(self):
        w, V = np.linalg.eig(ASYM)
        oracle = (V @ np.diag(np.exp(-0.7 * w)) @ np.linalg.inv(V)).real
        np.testing.assert_allclose(cpl.matrix_exponential(ASYM, 0.7), oracle, atol=1e-12)

    def test_rows_sum_to_one(self):
        E = cpl.matrix_exponential(CYCLIC, 1.3)
        np.testing.assert_allclose(E @ np.ones(3), np.ones(3), atol=1e-13)

    @pytest.mark.parametrize("D, A, r", [
        (ASYM, np.array([[2, 1], [2, 1]]) / 3, 3.0),
        (np.array([[1, -1], [-1, 1]]), np.full((2, 2), 0.5), 2.0),
        (CYCLIC, np.full((3, 3), 1 / 3), 1.5),
    ])
    def test_projector(self, D, A, r):
        P, gap = cpl.exp_limit_projector(D)
        np.testing.assert_allclose(P, A, atol=1e-12)
        assert gap == pytest.approx(r, abs=1e-9)
        np.testing.assert_allclose(P @ D, 0, atol=1e-12)
        np.testing.assert_allclose(D @ P, 0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(monotone_matrices(), st.floats(0, 5), st.floats(0, 5))
    def test_semigroup(self, D, t, s):
        lhs = cpl.matrix_exponential(D, t + s)
        rhs = cpl.matrix_exponential(D, t) @ cpl.matrix_exponential(D, s)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestCouplingField:
    def test_constant_broadcast_and_rows(self):
        fld = cpl.CouplingField.constant_matrix(ASYM)
        assert fld.constant and fld.m == 2
        assert fld.broadcast(5).shape == (5, 2, 2)
        np.testing.assert_allclose(fld.row_sums(), [[0, 0]])

    def test_lambda_continuity_reports_jump(self):
        mats = np.stack([ASYM, [[1, -1], [-1, 1]]])
        fld = cpl.CouplingField(mats, constant=False)
        assert fld.lambda_continuity([0, 1]) == pytest.approx(2 / 3 - 1 / 2)
