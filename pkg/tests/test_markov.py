import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from multrigid.errors import UnrealizedWordError
from multrigid.geometry import nonlinearity
from multrigid.markov import (
    DensityGrid,
    GradingCoordinate,
    affine_full_branch_map,
    cauchy_decay,
    cell_edges,
    cylinder,
    cylinder_measure,
    density_via_branches,
    doubling_map,
    invariant_density,
    markov_from_record,
    pf_apply,
    unimodal_two_branch,
    validate,
    word_tree,
)
from multrigid.rigidity import branch_fixed_point
from multrigid.unimodal import UnimodalMap

D = doubling_map()


def arcsine(x):
    return 1.0 / (np.pi * np.sqrt(1.0 - x * x))


class TestStructure:
    def test_doubling_basics(self):
        assert D.coverage == 1.0
        np.testing.assert_allclose(D(np.array([-1.0, -0.5, 0.25])), [-1.0, 0.0, -0.5])
        assert D.locate(np.array([-0.5, 0.5])).tolist() == [0, 1]

    def test_record_roundtrip(self):
        F = affine_full_branch_map((0.2,))
        G = markov_from_record(F.record())
        x = np.linspace(-0.99, 0.99, 31)
        np.testing.assert_allclose(G(x), F(x))

    def test_record_errors(self):
        with pytest.raises(ValueError, match="branch 0"):
            markov_from_record({"branches": [{"domain": [-1, 0]}]})

    def test_validate(self):
        assert validate(D).valid
        rep = validate(unimodal_two_branch(UnimodalMap(1.0)))
        assert rep.monotone and rep.disjoint and rep.onto_residual < 1e-12
        assert rep.K_measured == float("inf")  # critical endpoints: no Koebe space


class TestCylinders:
    def test_doubling_cylinder(self):
        C = cylinder(D, (0, 0))
        assert C.interval.as_tuple() == (-1.0, -0.5)
        assert C.length == pytest.approx(0.5, abs=1e-15)

    def test_cylinder_order(self):
        # refining prepends: I_{(0, 1)} = F_1^-1(I_0) sits in the right half
        assert cylinder(D, (0, 1)).interval.as_tuple() == (0.0, 0.5)

    def test_affine_products(self):
        F = affine_full_branch_map((0.2,))
        s = {0: 1.2 / 2, 1: 0.8 / 2}  # inverse-branch slopes
        for w in [(0,), (1, 0), (0, 1, 1), (1, 1, 0, 1)]:
            assert cylinder(F, w).length == pytest.approx(2 * np.prod([s[i] for i in w]), rel=1e-13)

    def test_unrealized(self):
        with pytest.raises(UnrealizedWordError):
            cylinder(D, (0, 2))

    def test_branch_fixed_point_doubling(self):
        p, d = branch_fixed_point(D, (0,))
        assert (p, d) == (-1.0, 2.0)
        p, d = branch_fixed_point(D, (0, 1))
        assert p == pytest.approx(1 / 3, abs=1e-14) and d == pytest.approx(4.0)
        I = cylinder(D, (0, 1)).interval
        assert (2 / I.length) / abs(d) == pytest.approx(1.0, abs=1e-14)

    def test_word_tree_affine(self):
        F = affine_full_branch_map((0.2,))
        levels = word_tree(F, 6)
        for lev in levels:
            assert lev.enumerated_all and len(lev) == 2**lev.depth
            assert np.sum(lev.length) == pytest.approx(2.0, rel=1e-13)
            np.testing.assert_allclose(lev.distortion, 1.0)

    def test_word_tree_budget_is_seeded(self, induced_q1):
        a = word_tree(induced_q1.F, 4, max_words=300, seed=3)
        b = word_tree(induced_q1.F, 4, max_words=300, seed=3)
        assert a[-1].words == b[-1].words and len(a[-1]) == 300
        assert not a[-1].enumerated_all


class TestTransfer:
    def test_doubling_uniform_is_fixed(self):
        u = DensityGrid.uniform(256)
        np.testing.assert_allclose(pf_apply(D, u).values, u.values, atol=1e-14)

    def test_pushforward_against_quadrature(self):
        F = affine_full_branch_map((0.2,))
        N = 64
        e = cell_edges(N)
        rho_fn = lambda x: (1 + 0.5 * x) / 2
        cells = np.array([integrate.quad(rho_fn, a, b)[0] for a, b in zip(e[:-1], e[1:])]) / np.diff(e)
        out = pf_apply(F, DensityGrid(cells))

        def pushed(y):
            total = 0.0
            for b in F.branches:
                x = float(b.inverse()(y))
                total += rho_fn(x) / abs(float(b.deriv(x)))
            return total

        exact = np.array([integrate.quad(pushed, a, b)[0] for a, b in zip(e[:-1], e[1:])]) / np.diff(e)
        np.testing.assert_allclose(out.values, exact, atol=1e-10)

    def test_grading_coordinate(self):
        for kind in ("uniform", "chebyshev"):
            e = cell_edges(40, kind)
            s = GradingCoordinate(e)
            np.testing.assert_allclose(s(e), np.arange(41), atol=1e-11)
            np.testing.assert_allclose(s.inverse()(s(e)), e, atol=1e-14)
        e = np.sort(np.concatenate([[-1.0, 1.0], np.random.default_rng(0).uniform(-1, 1, 9)]))
        np.testing.assert_allclose(GradingCoordinate(e)(e), np.arange(e.size))


@pytest.fixture(scope="module")
def cheb():
    return invariant_density(unimodal_two_branch(UnimodalMap(1.0)), 2048)


class TestDensity:
    def test_chebyshev_closed_form(self, cheb):
        rho = cheb.density
        x = rho.nodes
        m = np.abs(x) <= 0.95
        l1 = np.sum(np.abs(rho.values - arcsine(x))[m] * rho.widths[m])
        assert cheb.converged and cheb.iterations <= 200
        assert l1 <= 1e-2

    def test_chebyshev_cdf(self, cheb):
        e = cheb.density.edges
        cum = cheb.density.cumulative()
        np.testing.assert_allclose(cum, 0.5 + np.arcsin(e) / np.pi, atol=1e-9)

    def test_orbit_histogram(self, cheb):
        """10^7 orbit points of q_1 binned on [-0.95, 0.95] against the computed density."""
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, 10_000)
        for _ in range(100):
            x = 1 - 2 * x * x
        bins = np.linspace(-0.95, 0.95, 39)
        counts = np.zeros(bins.size - 1)
        for _ in range(1000):
            x = 1 - 2 * x * x
            counts += np.histogram(x, bins)[0]
        hist = counts / 1e7
        model = np.diff(cheb.density.cdf(bins))
        assert np.sum(np.abs(hist - model)) <= 1e-2
        assert np.max(np.abs(hist - model)) <= 1e-3

    def test_doubling_density_uniform(self):
        d = invariant_density(D, 512)
        np.testing.assert_allclose(d.values, 0.5, atol=1e-12)

    def test_grid_mass_is_cell_sum(self):
        fn = lambda x: 0.75 * (1 - x * x)
        rho = DensityGrid.from_function(fn, 400)
        h = 2 / 400
        mid = -1 + h * (np.arange(400) + 0.5)
        assert rho.integral() == pytest.approx(np.sum(fn(mid)) * h, rel=1e-14)
        assert rho.mass(-1.0, 0.0) == pytest.approx(rho.integral() / 2, rel=1e-13)

    def test_unconverged_is_reported(self, induced_q1):
        d = invariant_density(induced_q1.F, 256, max_iters=3, tol=1e-15)
        assert not d.converged and d.iterations == 3
        assert d.method in ("iteration", "cesaro") and np.isfinite(d.residual)


class TestMeasure:
    @pytest.mark.parametrize("n", range(1, 7))
    def test_doubling_nu_exact(self, n):
        u = DensityGrid.uniform(512)
        for k in range(2**n):
            w = tuple((k >> j) & 1 for j in range(n))
            assert cylinder_measure(D, u, w) == pytest.approx(2.0**-n, abs=1e-15)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=8), st.floats(-0.6, 0.6))
    @settings(max_examples=50, deadline=None)
    def test_additivity_full_branch(self, w, brk):
        F = affine_full_branch_map((brk,))
        rho = DensityGrid.uniform(64)
        w = tuple(w)
        kids = sum(cylinder_measure(F, rho, w + (i,)) for i in range(2))
        # mass of F^-1(I_w) for Lebesgue equals |I_w| when both slopes sum to one in reciprocal
        assert kids == pytest.approx(cylinder(F, w).length / 2, rel=1e-10)

    def test_empty_word(self):
        assert cylinder_measure(D, DensityGrid.uniform(16), ()) == pytest.approx(1.0)


class TestCauchy:
    def test_affine_zero(self):
        c = cauchy_decay(affine_full_branch_map((0.2,)), (0, 1, 1, 0))
        assert np.all(c.differences == 0)

    def test_matches_rescaled_nonlinearity(self, induced_q1):
        """Differences from the recursion equal sup|eta(psi_{n+1}) - eta(psi_n)| computed from full jets."""
        F = induced_q1.F
        w = (3, 7, 1, 10)
        c = cauchy_decay(F, w)
        x = np.linspace(-1, 1, 257)
        prev = np.zeros_like(x)
        for n in range(len(w)):
            cur = nonlinearity(cylinder(F, w[: n + 1]).psi)(x)
            assert np.max(np.abs(cur - prev)) == pytest.approx(c.differences[n], rel=1e-6)
            prev = cur

    def test_random_words_decay(self, induced_q1, rng):
        F = induced_q1.F
        for _ in range(5):
            w = tuple(rng.integers(0, len(F.branches), 10))
            c = cauchy_decay(F, w)
            assert c.delta < 1


class TestBranchFormula:
    def test_doubling_uniform(self):
        bd = density_via_branches(D, DensityGrid.uniform(256), 4)
        np.testing.assert_allclose(bd.density.values, 0.5, atol=1e-12)
