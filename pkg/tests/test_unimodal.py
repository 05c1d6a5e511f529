import numpy as np
import pytest

from multrigid.errors import CriticalPointError, DegenerateAttractorError
from multrigid.geometry import Bump, Chain
from multrigid.unimodal import (
    Fold,
    UnimodalMap,
    attractor_interval,
    conjugate_map,
    eval_deriv,
    itinerary,
    iterate_jet,
    map_from_spec,
    membership_check,
)


def test_fold_values():
    f = Fold(0.8)
    x = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(f(x), -1.6 * x**2 + 0.6, rtol=0, atol=1e-15)


def test_general_alpha_values():
    f = Fold(1.0, 3.0)
    x = np.array([-0.5, 0.25])
    np.testing.assert_allclose(f(x), -2 * np.abs(x) ** 3 + 1)


@pytest.mark.parametrize("t, alpha", [(0.0, 2.0), (1.5, 2.0), (0.5, 1.0)])
def test_fold_rejects_parameters(t, alpha):
    with pytest.raises(ValueError):
        Fold(t, alpha)


def test_critical_data(q1):
    assert q1.critical_point == 0.0
    assert q1.critical_value == 1.0
    assert eval_deriv(q1, 0.0, 1) == 0.0


def test_eval_deriv():
    f = UnimodalMap(1.0)
    assert eval_deriv(f, 0.5, 1) == -2.0
    assert eval_deriv(f, 0.3, 2) == -4.0
    assert eval_deriv(f, 0.3, 3) == 0.0


def test_critical_derivatives_alpha():
    # alpha = 2.5: second derivative blows up at 0, third as well
    f = UnimodalMap(1.0, 2.5)
    assert eval_deriv(f, 0.0, 1) == 0.0
    assert eval_deriv(f, 0.0, 2) == 0.0
    with pytest.raises(CriticalPointError):
        eval_deriv(f, 0.0, 3)
    g = UnimodalMap(1.0, 1.5)
    with pytest.raises(CriticalPointError):
        eval_deriv(g, 0.0, 2)
    # away from the critical point everything is defined
    assert np.isfinite(eval_deriv(g, 0.1, 3))


def test_jet_matches_differences():
    f = conjugate_map(UnimodalMap(0.9, 3.0), Bump(0.15))
    x = np.array([-0.8, -0.3, 0.4, 0.7])
    h = 1e-5
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    np.testing.assert_allclose(f.jet(x)[1], d1, rtol=1e-8)


@pytest.mark.parametrize("t", [0.6, 0.9, 1.0])
def test_attractor_interval(t):
    A = attractor_interval(UnimodalMap(t))
    c1 = 2 * t - 1
    c2 = -2 * t * c1**2 + 2 * t - 1
    assert A.hi == pytest.approx(c1, abs=1e-15) and A.lo == pytest.approx(c2, abs=1e-15)


def test_degenerate_attractor():
    with pytest.raises(DegenerateAttractorError):
        attractor_interval(UnimodalMap(0.5))


def test_itinerary(q1):
    assert itinerary(q1, 0.0, 4) == "CRLL"
    assert itinerary(q1, 0.5, 3) == "RRR"


def test_conjugate_map_matches_composition(q1):
    phi = Bump(0.1)
    g = conjugate_map(q1, phi)
    x = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(g(x), phi(q1(phi.inverse()(x))), atol=1e-15)
    assert g.critical_point == pytest.approx(float(phi(0.0)))
    assert g.critical_value == pytest.approx(1.0)


def test_lap_inverse(q1):
    y = np.linspace(-1, 1, 11)
    for side in (0, 1):
        x = q1.lap_inverse(y, side)
        np.testing.assert_allclose(q1(x), y, atol=1e-15)
        assert np.all((x <= 0) if side == 0 else (x >= 0))


def test_iterate_jet(q1):
    x = np.array([0.3])
    j = iterate_jet(q1, x, 3)
    e = q1(q1(q1(x)))
    assert j[0] == pytest.approx(e)
    h = 1e-6
    assert j[1] == pytest.approx((q1(q1(q1(x + h))) - q1(q1(q1(x - h)))) / (2 * h), rel=1e-6)


class TestMembership:
    def test_q1(self, q1):
        r = membership_check(q1)
        assert r.passed and r.schwarzian_negative and not r.attracting_cycle

    def test_conjugate_passes_even_with_positive_factor(self, g_bump):
        r = membership_check(g_bump)
        assert r.passed
        assert r.factor_schwarzian["inner"] > 0

    def test_attracting_cycle(self):
        r = membership_check(UnimodalMap(0.6))
        # fixed point of -1.2 x^2 + 0.2 from the quadratic formula: (-1 + sqrt(1 + 0.96)) / 2.4
        p = (-1 + np.sqrt(1.96)) / 2.4
        assert r.attracting_cycle and not r.passed
        assert r.critical_cycle["period"] == 1
        assert r.critical_cycle["points"][0] == pytest.approx(p, abs=1e-9)
        assert r.critical_cycle["multiplier"] == pytest.approx(-2.4 * p, abs=1e-8)


class TestSpec:
    def test_roundtrip(self):
        spec = {"t": 0.95, "alpha": 2, "phi": [{"kind": "bump", "c": 0.05}]}
        f = map_from_spec(spec)
        g = map_from_spec(f.to_record())
        x = np.linspace(-1, 1, 17)
        np.testing.assert_allclose(f(x), g(x), atol=1e-15)

    def test_conjugate_by(self, g_bump):
        f = map_from_spec({"t": 1, "alpha": 2, "phi": [], "conjugate_by": [{"kind": "bump", "c": 0.1}]})
        x = np.linspace(-1, 1, 17)
        np.testing.assert_allclose(f(x), g_bump(x), atol=1e-15)

    @pytest.mark.parametrize("spec, field", [
        ({"alpha": 2}, "'t'"),
        ({"t": 1, "alpha": "2"}, "'alpha'"),
        ({"t": 1, "alpha": 2, "phi": {"kind": "bump"}}, "'phi'"),
        ({"t": 1, "alpha": 2, "phi": [{"kind": "bump", "c": 0.7}]}, r"phi\[0\]"),
        ({"t": 1.4, "alpha": 2}, "'t'"),
    ])
    def test_errors_name_field(self, spec, field):
        with pytest.raises(ValueError, match=field):
            map_from_spec(spec)
