import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multrigid.errors import CriticalPointError, NotADiffeoError, SingularBranchError
from multrigid.geometry import (
    UNIT,
    Affine,
    Bump,
    Chain,
    Identity,
    Interval,
    compose,
    compose_jets,
    cr_norm,
    inverse_jet,
    map_from_record,
    measure_distortion,
    nonlinearity,
    nonlinearity_compose,
    rescale,
    schwarzian,
)
from multrigid.unimodal import UnimodalMap

bumps = st.floats(min_value=-0.45, max_value=0.45)


def fd_jet(fn, x, h=1e-4):
    """Central differences, used only as an independent check on the analytic jets."""
    f = lambda t: np.asarray(fn(t), dtype=float)
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h) - 2 * f(x) + f(x - h)) / h**2
    d3 = (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h**3)
    return d1, d2, d3


class TestInterval:
    def test_basic(self):
        I = Interval(-0.5, 1.5)
        assert I.length == 2.0 and I.mid == 0.5
        assert I.contains(0.0) and not I.contains(2.0)
        assert I.to_unit(I.from_unit(0.3)) == pytest.approx(0.3)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Interval(1.0, 1.0)

    def test_intersect_and_hull(self):
        a, b = Interval(-1, 0.5), Interval(0, 1)
        assert a.intersect(b) == Interval(0, 0.5)
        assert Interval.hull(0.5, -0.25) == Interval(-0.25, 0.5)


class TestJets:
    def test_bump_jet_matches_differences(self):
        x = np.linspace(-0.9, 0.9, 7)
        _, d1, d2, d3 = Bump(0.2).jet(x)
        e1, e2, e3 = fd_jet(Bump(0.2), x)
        np.testing.assert_allclose(d1, e1, atol=1e-7)
        np.testing.assert_allclose(d2, e2, atol=1e-5)
        np.testing.assert_allclose(d3, e3, atol=1e-3)

    def test_inverse_jet_against_differences(self):
        inv = Bump(-0.3).inverse()
        y = np.linspace(-0.8, 0.8, 9)
        _, d1, d2, d3 = inv.jet(y)
        e1 = fd_jet(inv, y, h=1e-5)[0]
        _, e2, e3 = fd_jet(inv, y, h=1e-3)
        np.testing.assert_allclose(d1, e1, rtol=1e-8)
        np.testing.assert_allclose(d2, e2, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(d3, e3, rtol=1e-3, atol=1e-5)

    @given(bumps, bumps)
    @settings(max_examples=40, deadline=None)
    def test_chain_rule(self, a, b):
        f, g = Bump(a), Bump(b)
        x = np.linspace(-1, 1, 11)
        j = compose(f, g).jet(x)
        e = fd_jet(lambda t: f(g(t)), x, h=1e-3)
        np.testing.assert_allclose(j[1], e[0], atol=1e-6)
        np.testing.assert_allclose(j[2], e[1], atol=1e-4)

    @given(bumps, st.floats(min_value=-1, max_value=1))
    @settings(max_examples=60, deadline=None)
    def test_bump_inverse_roundtrip(self, c, y):
        assert float(Bump(c)(Bump(c).inverse()(y))) == pytest.approx(y, abs=1e-14)

    def test_inverse_jet_of_inverse_is_identity(self):
        x = np.linspace(-1, 1, 5)
        j = Bump(0.3).jet(x)
        k = inverse_jet(j[0], inverse_jet(x, j))
        for a, b in zip(j, k):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestRecords:
    def test_roundtrip(self):
        m = Chain([Bump(0.1), Affine(1.0, 0.0), Bump(-0.2).inverse()])
        back = map_from_record(m.to_record())
        x = np.linspace(-1, 1, 13)
        np.testing.assert_allclose(back(x), m(x), atol=1e-15)

    @pytest.mark.parametrize("rec, field", [
        ({"kind": "bump"}, "c"),
        ({"kind": "affine", "p": "two"}, "p"),
        ({"kind": "spline"}, "kind"),
    ])
    def test_errors_name_field(self, rec, field):
        with pytest.raises(ValueError, match=field):
            map_from_record(rec)

    def test_bump_range(self):
        with pytest.raises(ValueError):
            Bump(0.5)


class TestRescale:
    def test_affine_is_identity(self):
        R = rescale(Affine(3.0, -1.0), Interval(0.2, 0.7))
        u = np.linspace(-1, 1, 9)
        np.testing.assert_allclose(R(u), u, atol=1e-15)

    def test_decreasing_affine_is_identity_after_flip(self):
        R = rescale(Affine(-2.0, 0.5), Interval(-0.3, 0.4))
        u = np.linspace(-1, 1, 9)
        assert R.flipped
        np.testing.assert_allclose(R(u), u, atol=1e-15)

    def test_q1_left_lap(self):
        R = rescale(UnimodalMap(1.0), Interval(-1.0, 0.0))
        u = np.linspace(-1, 1, 21)
        np.testing.assert_allclose(R(u), 1 - (u - 1) ** 2 / 2, atol=1e-15)

    def test_idempotent(self):
        R = rescale(UnimodalMap(1.0), Interval(-0.9, -0.2))
        RR = rescale(R, UNIT)
        u = np.linspace(-1, 1, 101)
        assert np.max(np.abs(RR(u) - R(u))) <= 1e-12

    def test_singular(self):
        with pytest.raises(SingularBranchError):
            rescale(UnimodalMap(1.0), Interval(-0.5, 0.5))


class TestNonlinearity:
    def test_identity(self):
        assert np.all(nonlinearity(Identity())(np.linspace(-1, 1, 5)) == 0)

    def test_bump_formula(self):
        x = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(nonlinearity(Bump(0.1))(x), -0.2 / (1 - 0.2 * x), rtol=1e-14)
        assert float(nonlinearity(Bump(0.1))(0.0)) == pytest.approx(-0.2)

    def test_rescaled_lap(self):
        R = rescale(UnimodalMap(1.0), Interval(-1.0, 0.0))
        u = np.linspace(-1, 0.9, 17)
        np.testing.assert_allclose(nonlinearity(R)(u), -1 / (1 - u), rtol=1e-12)

    def test_not_diffeo(self):
        with pytest.raises(NotADiffeoError):
            nonlinearity(Affine(-1.0))(np.array([0.0]))

    @given(bumps, bumps)
    @settings(max_examples=40, deadline=None)
    def test_cocycle(self, a, b):
        phi, psi = Bump(a), Bump(b)
        x = np.linspace(-1, 1, 25)
        direct = nonlinearity(compose(phi, psi))(x)
        np.testing.assert_allclose(nonlinearity_compose(phi, psi)(x), direct, atol=1e-8)

    def test_cr_norm(self):
        assert cr_norm(Identity(), 2) == 0.0
        # sup |eta| of phi_0.1 sits at x = 1: 0.2 / 0.8
        assert cr_norm(Bump(0.1), 2) == pytest.approx(0.25, rel=1e-12)
        assert cr_norm(Bump(0.1), 3) > cr_norm(Bump(0.1), 2)


class TestSchwarzian:
    def test_q1_value(self):
        assert float(schwarzian(UnimodalMap(1.0), np.array(0.5))) == -6.0

    def test_q1_closed_form(self):
        x = np.array([-0.7, -0.2, 0.3, 0.9])
        np.testing.assert_allclose(schwarzian(UnimodalMap(1.0), x), -1.5 / x**2, rtol=1e-14)

    def test_critical_point(self):
        with pytest.raises(CriticalPointError):
            schwarzian(UnimodalMap(1.0), np.array([0.0]))

    def test_composition_law(self):
        f = compose(UnimodalMap(1.0), Bump(0.05))
        x = np.linspace(-1, 1, 400)
        x = x[np.abs(Bump(0.05)(x)) > 1e-6]
        assert np.all(schwarzian(f, x) < 0)


class TestDistortion:
    def test_affine(self):
        assert measure_distortion(Affine(2.0, 1.0), Interval(-1, 0)).ratio_max == 1.0

    def test_q1_endpoint_ratio(self):
        r = measure_distortion(UnimodalMap(1.0), Interval(-0.6, -0.4))
        assert r.ratio_max == pytest.approx(1.5, rel=1e-12)

    def test_nested_monotone(self):
        f = UnimodalMap(1.0)
        lattice = np.linspace(-0.9, -0.1, 401)
        outer = measure_distortion(f, Interval(-0.9, -0.1), points=lattice)
        inner = measure_distortion(f, Interval(-0.6, -0.4), points=lattice)
        assert inner.ratio_max <= outer.ratio_max

    def test_koebe_space(self):
        r = measure_distortion(Affine(1.0), Interval(0, 1), L=Interval(-1, 0), R=Interval(1, 3))
        assert r.koebe_space == 1.0
