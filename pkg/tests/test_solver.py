import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from svirest.basis import BasisSpec, subband_weights
from svirest.kernel import RadialKernelSpec, build_table
from svirest.solver import (ChannelFactorization, FactorizationError, GramSystem, assemble_gram,
                            cpd_solve, group_channels, monomial_exponents, polynomial_matrix,
                            solve_all_channels, solve_channel)

from oracles import rho_closed_1d

SPEC = RadialKernelSpec(1, 1, 0.5, 2.0)


def closed_kernel(r):
    return rho_closed_1d(r, 0.5, 1.0)


def kernel_for(alpha=0.5, d=1, s=1):
    return lambda w: build_table(RadialKernelSpec(d, s, alpha, w))


class TestAssemble:
    def test_single_point(self):
        g = assemble_gram(closed_kernel, np.array([[0.3]]), mu=0.1)
        assert g.matrix.shape == (1, 1)
        assert g.matrix[0, 0] == pytest.approx(np.sqrt(np.pi))
        assert g.ridge == pytest.approx(0.1)

    def test_off_diagonal(self):
        g = assemble_gram(build_table(SPEC), np.array([[0.0], [1.0]]), mu=0.0)
        assert g.matrix[0, 1] == pytest.approx(np.sqrt(np.pi) * np.exp(-np.sqrt(2)), rel=1e-8)

    def test_symmetric_bit_exact(self, rng):
        g = assemble_gram(build_table(SPEC), rng.uniform(size=(30, 2)) * 3, mu=1e-3)
        assert np.array_equal(g.matrix, g.matrix.T)

    def test_nonfinite_names_pair(self):
        def bad(r):
            out = closed_kernel(r)
            return np.where(np.isclose(r, 0.5), np.nan, out)
        with pytest.raises(FloatingPointError, match=r"\(0, 2\)|\(2, 0\)"):
            assemble_gram(bad, np.array([[0.0], [0.2], [0.5]]), mu=0.1)


class TestSolveChannel:
    def test_scalar(self):
        g = GramSystem(np.array([[np.sqrt(np.pi)]]), 1.0)
        assert solve_channel(g, np.array([1.0]))[0] == pytest.approx(1 / (1 + np.sqrt(np.pi)))

    def test_zero_rhs(self, rng):
        g = assemble_gram(closed_kernel, rng.uniform(size=(8, 1)), mu=1e-2)
        assert np.all(solve_channel(g, np.zeros(8)) == 0)

    def test_against_inverse(self, rng):
        A = rng.standard_normal((20, 20))
        M = A @ A.T + 20 * np.eye(20)
        g = GramSystem(M, 0.5)
        z = rng.standard_normal(20)
        c = solve_channel(g, z)
        oracle = np.linalg.inv(M + 0.5 * np.eye(20)) @ z
        assert_allclose(c, oracle, rtol=1e-8)
        assert np.linalg.norm(g.regularized() @ c - z) <= 1e-10 * np.linalg.norm(z)

    def test_factorization_residual(self, rng):
        g = assemble_gram(build_table(SPEC), rng.uniform(size=(40, 1)) * 5, mu=1e-3)
        f = ChannelFactorization(g)
        assert f.residual() <= 1e-10

    def test_jitter_then_error(self):
        M = np.array([[1.0, 2.0], [2.0, 1.0]])   # indefinite
        with pytest.raises(FactorizationError) as info:
            ChannelFactorization(GramSystem(M, 0.0))
        assert "min_eigenvalue" in info.value.diagnostics

    def test_jitter_rescues_semidefinite(self):
        M = np.ones((3, 3))
        f = ChannelFactorization(GramSystem(M, 0.0))
        assert f.jitter > 0


class TestSolveAll:
    def _data(self, rng, n=12, N=8):
        Y = np.sort(rng.uniform(0, 4, size=(n, 1)), axis=0)
        return Y, rng.standard_normal((n, N))

    def test_grouped_equals_naive(self, rng):
        Y, F = self._data(rng)
        w = np.array([1, 4, 4, 16, 16, 16, 16, 1.0])
        sol = solve_all_channels(Y, F, w, 1e-2, kernel_for())
        for k in range(8):
            g = assemble_gram(kernel_for()(w[k]), Y, 1e-2)
            naive = np.linalg.solve(g.regularized(), F[:, k])
            assert np.max(np.abs(sol.coefficients[k] - naive)) <= 1e-12
        assert sol.factorization_count == 3
        assert sol.solve_count == 8

    def test_factorization_count_haar(self, rng):
        basis = BasisSpec("haar", 64, 6)
        w = subband_weights(basis, 1.0).weights
        Y, F = self._data(rng, n=10, N=64)
        sol = solve_all_channels(Y, F, w, 1e-2, kernel_for())
        assert sol.factorization_count == 7
        assert sum(f.reuse_count for f in sol.factorizations.values()) == 64

    def test_zero_observations(self, rng):
        Y, F = self._data(rng)
        sol = solve_all_channels(Y, np.zeros_like(F), np.ones(8), 1e-2, kernel_for())
        assert np.all(sol.coefficients == 0)

    def test_order_invariance(self, rng):
        Y, F = self._data(rng)
        w = np.array([1, 4, 4, 16, 16, 16, 16, 1.0])
        perm = rng.permutation(8)
        a = solve_all_channels(Y, F, w, 1e-2, kernel_for())
        b = solve_all_channels(Y, F[:, perm], w[perm], 1e-2, kernel_for())
        assert np.array_equal(a.coefficients[perm], b.coefficients)

    def test_weight_count_mismatch(self, rng):
        Y, F = self._data(rng)
        with pytest.raises(ValueError):
            solve_all_channels(Y, F, np.ones(7), 1e-2, kernel_for())

    def test_group_channels(self):
        assert group_channels([2, 1, 2]) == {2.0: [0, 2], 1.0: [1]}

    def test_interpolation_limit(self, rng):
        Y, F = self._data(rng, n=10, N=1)
        table = build_table(SPEC)
        residuals = []
        for mu in (1e-2, 1e-4, 1e-6):
            g = assemble_gram(table, Y, mu)
            c = solve_channel(g, F[:, 0])
            residuals.append(np.max(np.abs(g.matrix @ c - F[:, 0])))
        assert residuals[0] > residuals[1] > residuals[2]


class TestCpd:
    def test_constant_reproduction(self, rng):
        Y = rng.uniform(size=(7, 1))
        c, beta = cpd_solve(Y, np.full(7, 5.0), s=1, d=1, mu=1e-3)
        assert_allclose(c, 0, atol=1e-12)
        assert_allclose(beta, [5.0])

    def test_linear_2d(self, rng):
        Y = rng.uniform(size=(15, 2))
        z = 1.5 - 2.0 * Y[:, 0] + 0.25 * Y[:, 1]
        c, beta = cpd_solve(Y, z, s=2, d=2, mu=1e-4)
        assert np.max(np.abs(c)) <= 1e-8
        exps = monomial_exponents(1, 2)
        coef = dict(zip(exps, beta))
        assert coef[(0, 0)] == pytest.approx(1.5)
        assert coef[(1, 0)] == pytest.approx(-2.0)
        assert coef[(0, 1)] == pytest.approx(0.25)

    def test_minimal_set_is_polynomial(self):
        Y = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        z = np.array([1.0, 3.0, -2.0])
        c, beta = cpd_solve(Y, z, s=2, mu=0.0)
        assert_allclose(c, 0, atol=1e-12)
        assert_allclose(polynomial_matrix(Y, 1) @ beta, z)

    def test_not_unisolvent(self):
        Y = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(FactorizationError, match="locations not unisolvent"):
            cpd_solve(Y, np.zeros(3), s=2)

    def test_interpolates_at_zero_mu(self, rng):
        from svirest.kernel import cpd_kernel
        Y = rng.uniform(size=(20, 2))
        z = np.sin(3 * Y[:, 0]) * Y[:, 1]
        c, beta = cpd_solve(Y, z, s=2)
        D = np.linalg.norm(Y[:, None] - Y[None], axis=2)
        fit = cpd_kernel(2, 2)(D) @ c + polynomial_matrix(Y, 1) @ beta
        assert_allclose(fit, z, atol=1e-9)

    @given(st.integers(1, 3), st.integers(1, 3))
    def test_monomial_count(self, degree, dim):
        from math import comb
        assert len(monomial_exponents(degree, dim)) == comb(degree + dim, dim)
