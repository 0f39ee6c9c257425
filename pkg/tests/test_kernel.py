import numpy as np
import pytest
from numpy.testing import assert_allclose

from svirest.kernel import (KernelQuadratureError, KernelTable, RadialKernelSpec, build_table,
                            cpd_kernel, evaluate, polyharmonic, spectral_profile)
from svirest.solver import polynomial_matrix

from oracles import rho_closed_1d, rho_partial_fractions, rho_quad_1d, rho_zero_quad

SPEC_1D = RadialKernelSpec(1, 1, 0.5, 2.0)   # a = 0.5, b = 1


@pytest.fixture(scope="module")
def table_1d():
    return build_table(SPEC_1D)


class TestSpec:
    def test_derived(self):
        assert SPEC_1D.a == 0.5 and SPEC_1D.b == 1.0
        assert SPEC_1D.is_positive_definite

    def test_integrability(self):
        with pytest.raises(ValueError):
            RadialKernelSpec(2, 1, 0.5, 1.0)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            RadialKernelSpec(1, 1, 1.0, 1.0)

    def test_cpd_when_b_zero(self):
        assert not RadialKernelSpec(1, 1, 0.0, 5.0).is_positive_definite


class TestSpectralProfile:
    def test_origin(self):
        for s in (1, 2, 3):
            assert spectral_profile(RadialKernelSpec(1, s, 0.5, 2.0), 0.0) == pytest.approx(1.0)

    def test_pure_power(self):
        assert spectral_profile(RadialKernelSpec(1, 1, 0.0, 0.0), 2.0) == pytest.approx(0.25)

    def test_substitution(self):
        assert spectral_profile(SPEC_1D, 1.0) == pytest.approx(2 / 3)

    def test_singular(self):
        with pytest.raises(ValueError, match="singular at origin"):
            spectral_profile(RadialKernelSpec(1, 1, 0.0, 0.0), 0.0)


class TestClosedFormOracle:
    """The closed form itself against adaptive quadrature."""

    @pytest.mark.parametrize("r", [0.0, 0.3, 1.0, 2.5])
    def test_closed_form_vs_quadrature(self, r):
        assert rho_closed_1d(r, 0.5, 1.0) == pytest.approx(rho_quad_1d(r, 0.5, 1.0), rel=1e-9)


class TestEvaluate:
    def test_rho_zero(self, table_1d):
        assert evaluate(SPEC_1D, table_1d, 0.0) == pytest.approx(np.sqrt(np.pi), abs=1e-10)

    def test_rho_one(self, table_1d):
        assert evaluate(SPEC_1D, table_1d, 1.0) == pytest.approx(np.sqrt(np.pi) * np.exp(-np.sqrt(2)),
                                                                  rel=1e-8)

    def test_all_nodes(self, table_1d):
        ref = rho_closed_1d(table_1d.radii, 0.5, 1.0)
        live = ref >= 1e-8 * table_1d.rho_zero
        assert_allclose(table_1d.values[live], ref[live], rtol=1e-6)
        # deep tail: cancellation limits accuracy to an absolute floor
        kept = table_1d.radii <= table_1d.tail_cutoff
        assert np.max(np.abs(table_1d.values - ref)[kept]) <= 1e-13 * table_1d.rho_zero
        assert np.all(table_1d.values[~kept] == 0)
        assert np.all(ref[~kept] <= 1e-10 * table_1d.rho_zero)

    def test_off_node(self, table_1d, rng):
        r = rng.uniform(0.001, 8.0, 200)
        assert_allclose(evaluate(SPEC_1D, table_1d, r), rho_closed_1d(r, 0.5, 1.0), rtol=1e-6)

    def test_tail(self, table_1d):
        assert abs(evaluate(SPEC_1D, table_1d, table_1d.r_max)) <= 1e-8 * table_1d.rho_zero
        assert evaluate(SPEC_1D, table_1d, 10 * table_1d.r_max) == 0.0

    def test_positive_decreasing_s1(self, table_1d):
        live = table_1d.values[table_1d.radii <= table_1d.tail_cutoff]
        assert np.all(live > 0) and np.all(np.diff(live) <= 0)
        assert live[0] <= table_1d.rho_zero

    def test_cpd_spec_rejected(self, table_1d):
        with pytest.raises(ValueError):
            evaluate(RadialKernelSpec(1, 1, 0.0, 1.0), table_1d, 0.5)

    def test_negative_radius(self, table_1d):
        with pytest.raises(ValueError):
            evaluate(SPEC_1D, table_1d, -1.0)


@pytest.mark.parametrize("d,s,alpha,w", [(2, 2, 0.5, 2.0), (1, 2, 0.3, 3.0), (3, 2, 0.5, 1.0),
                                         (3, 2, 0.2, 16.0), (2, 3, 0.2, 100.0)])
def test_higher_order_against_bessel_oracle(d, s, alpha, w, rng):
    spec = RadialKernelSpec(d, s, alpha, w)
    table = build_table(spec)
    assert table.rho_zero == pytest.approx(rho_zero_quad(d, s, spec.a, spec.b), rel=1e-10)
    r = np.sort(rng.uniform(1e-3, 0.9 * table.tail_cutoff, 200))
    ref = rho_partial_fractions(r, d, s, spec.a, spec.b)
    assert np.max(np.abs(table(r) - ref)) <= 1e-6 * table.rho_zero


def test_rho_zero_2d():
    # a = b = 1/2: rho(0) = int t / (t^4/2 + 1/2) dt = pi / 2
    spec = RadialKernelSpec(2, 2, 0.5, 1.0)
    assert build_table(spec).rho_zero == pytest.approx(np.pi / 2, rel=1e-10)


def test_node_doubling_self_consistent(rng):
    spec = RadialKernelSpec(2, 2, 0.4, 4.0)
    t1, t2 = build_table(spec, nodes=1024), build_table(spec, nodes=2048)
    r = rng.uniform(1e-3, 0.9 * t1.tail_cutoff, 100)
    assert np.max(np.abs(t1(r) - t2(r))) <= 1e-7 * t2.rho_zero


def test_scaling_law():
    base = build_table(RadialKernelSpec(1, 1, 0.5, 2.0))
    beta = 3.0
    scaled = build_table(RadialKernelSpec(1, 1, 0.5, 2.0 * beta ** 2))
    # b -> beta^2 b: rho(r) -> rho(beta r) / beta
    r = np.linspace(0.01, 3.0, 50)
    assert_allclose(scaled(r), base(beta * r) / beta, rtol=1e-6)


def test_deterministic_and_serializable():
    spec = RadialKernelSpec(1, 2, 0.5, 1.0)
    a = build_table.__wrapped__(spec)
    b = build_table.__wrapped__(spec)
    assert a.to_bytes() == b.to_bytes()
    back = KernelTable.from_bytes(a.to_bytes())
    assert back.spec == spec
    assert np.array_equal(back.values, a.values) and back.rho_zero == a.rho_zero


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_table(SPEC_1D, nodes=32)
    with pytest.raises(ValueError):
        build_table(SPEC_1D, quad_tolerance=1e-3)
    with pytest.raises(ValueError):
        build_table(RadialKernelSpec(1, 1, 0.0, 1.0))


def test_quadrature_failure_reports_node():
    with pytest.raises(KernelQuadratureError) as info:
        build_table(RadialKernelSpec(1, 1, 0.5, 2.0), quad_tolerance=1e-17)
    assert info.value.radius > 0


class TestPolyharmonic:
    def test_examples(self):
        assert polyharmonic(2, 2, 1.0) == 0.0
        assert polyharmonic(1, 1, 0.5) == 0.5
        assert polyharmonic(2, 2, np.e) == pytest.approx(np.e ** 2)
        assert polyharmonic(2, 2, 0.0) == 0.0

    def test_1d_limit_of_pd_kernel(self):
        # rho_b(r) - rho_b(0) -> CPD kernel as b -> 0 (d=1, s=1)
        b = 1e-10
        r = np.linspace(0.1, 2, 20)
        diff = rho_closed_1d(r, 0.5, b) - rho_closed_1d(0.0, 0.5, b)
        assert_allclose(cpd_kernel(1, 1, 0.5)(r), diff, rtol=1e-4)

    @pytest.mark.parametrize("d,s", [(2, 2), (3, 2), (1, 2), (2, 3)])
    def test_quadratic_form_matches_small_b_limit(self, d, s, rng):
        # On vectors annihilating polynomials of degree < s the CPD quadratic
        # form is the limit of the positive definite ones.
        pts = rng.uniform(size=(12, d))
        P = polynomial_matrix(pts, s - 1)
        q, _ = np.linalg.qr(P, mode="complete")
        c = q[:, P.shape[1]:] @ rng.standard_normal(12 - P.shape[1])
        D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        off = ~np.eye(12, dtype=bool)
        a = 0.7
        Phi = cpd_kernel(s, d, a)(D)
        K = np.zeros_like(D)
        K[off] = rho_partial_fractions(D[off], d, s, a, 1e-9)
        K[~off] = rho_zero_quad(d, s, a, 1e-9)
        lhs = c @ Phi @ c
        rhs = c @ K @ c
        assert lhs > 0
        assert lhs == pytest.approx(rhs, rel=1e-3)
