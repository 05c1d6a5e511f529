"""Intervals, smooth maps with exact 3-jets, rescaling, nonlinearity and distortion.

Every map carries its value and first three derivatives through the chain
rule, so multipliers, Schwarzian derivatives and nonlinearities are computed
from closed forms instead of finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CriticalPointError, MultRigidError, NotADiffeoError, SingularBranchError

DEFAULT_SAMPLES = 1024


# ---------------------------------------------------------------- intervals

@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    reversed: bool = False

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ValueError(f"degenerate interval [{lo!r}, {hi!r}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def hull(cls, a, b, reversed=False):
        a, b = float(a), float(b)
        return cls(min(a, b), max(a, b), reversed)

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return (x >= self.lo - tol) & (x <= self.hi + tol)

    def contains_interval(self, other, tol=0.0):
        return other.lo >= self.lo - tol and other.hi <= self.hi + tol

    def interior_contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return (x > self.lo + tol) & (x < self.hi - tol)

    def from_unit(self, u):
        """Affine map [-1, 1] -> self (increasing)."""
        return self.mid + 0.5 * self.length * np.asarray(u, dtype=float)

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.mid) / (0.5 * self.length)

    def intersect(self, other):
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo < hi else None

    def as_tuple(self):
        return (self.lo, self.hi)

    def __iter__(self):
        yield self.lo
        yield self.hi


UNIT = Interval(-1.0, 1.0)


# ---------------------------------------------------------------- jets

def compose_jets(outer, inner):
    """3-jet of g∘f from the jet of g at f(x) and the jet of f at x."""
    g0, g1, g2, g3 = outer
    _, f1, f2, f3 = inner
    return (g0, g1 * f1, g2 * f1 * f1 + g1 * f2, g3 * f1 ** 3 + 3.0 * g2 * f1 * f2 + g1 * f3)


def inverse_jet(x, jet):
    """3-jet of f^-1 at y = f(x), given x and the jet of f at x."""
    _, f1, f2, f3 = jet
    g1 = 1.0 / f1
    g2 = -f2 * g1 ** 3
    g3 = (3.0 * f2 * f2 - f1 * f3) * g1 ** 5
    return (np.asarray(x, dtype=float), g1, g2, g3)


def identity_jet(x):
    x = np.asarray(x, dtype=float)
    return (x, np.ones_like(x), np.zeros_like(x), np.zeros_like(x))


def affine_jet(x, slope, offset):
    x = np.asarray(x, dtype=float)
    return (slope * x + offset, np.full_like(x, slope), np.zeros_like(x), np.zeros_like(x))


# ---------------------------------------------------------------- maps

class Map1D:
    """Scalar C^3 map with exact derivatives up to order three.

    Subclasses implement ``jet``; evaluation is vectorized over numpy arrays.
    """

    def jet(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(x)[0]

    def deriv(self, x, k=1):
        return self.jet(x)[k]

    def inverse(self):
        return NumericInverse(self)

    def to_record(self):
        raise MultRigidError(f"{type(self).__name__} is not serializable")

    def then(self, other):
        """The map x -> other(self(x))."""
        return Chain([self, other])


class Identity(Map1D):
    def jet(self, x):
        return identity_jet(x)

    def __call__(self, x):
        return np.asarray(x, dtype=float)

    def deriv(self, x, k=1):
        return np.full_like(np.asarray(x, dtype=float), 1.0 if k == 1 else 0.0)

    def inverse(self):
        return self

    def to_record(self):
        return {"kind": "identity"}


class Affine(Map1D):
    """x -> p*x + q."""

    def __init__(self, p, q=0.0):
        if p == 0:
            raise SingularBranchError("affine map with zero slope")
        self.p, self.q = float(p), float(q)

    @classmethod
    def between(cls, src: Interval, dst: Interval, flip=False):
        """Increasing (or, with flip, decreasing) affine bijection src -> dst."""
        p = dst.length / src.length
        if flip:
            return cls(-p, dst.hi + p * src.lo)
        return cls(p, dst.lo - p * src.lo)

    def jet(self, x):
        return affine_jet(x, self.p, self.q)

    def __call__(self, x):
        return self.p * np.asarray(x, dtype=float) + self.q

    def inverse(self):
        return Affine(1.0 / self.p, -self.q / self.p)

    def to_record(self):
        return {"kind": "affine", "p": self.p, "q": self.q}


class Bump(Map1D):
    """phi_c(x) = x + c(1 - x^2), a diffeomorphism of [-1, 1] fixing the endpoints for |c| < 1/2."""

    def __init__(self, c):
        c = float(c)
        if not abs(c) < 0.5:
            raise ValueError(f"bump parameter must satisfy |c| < 0.5, got {c}")
        self.c = c

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        c = self.c
        return (x + c * (1.0 - x * x), 1.0 - 2.0 * c * x, np.full_like(x, -2.0 * c), np.zeros_like(x))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.c * (1.0 - x * x)

    def deriv(self, x, k=1):
        if k != 1:
            return self.jet(x)[k]
        return 1.0 - 2.0 * self.c * np.asarray(x, dtype=float)

    def inverse(self):
        return BumpInverse(self.c)

    def to_record(self):
        return {"kind": "bump", "c": self.c}


class BumpInverse(Map1D):
    def __init__(self, c):
        self.bump = Bump(c)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        c = self.bump.c
        # rationalized root of c x^2 - x + (y - c) = 0; no cancellation and fine at c = 0
        s = np.sqrt(np.maximum(1.0 - 4.0 * c * (y - c), 0.0))
        return 2.0 * (y - c) / (1.0 + s)

    def deriv(self, y, k=1):
        if k != 1:
            return self.jet(y)[k]
        return 1.0 / self.bump.deriv(self(y))

    def jet(self, y):
        x = self(y)
        return inverse_jet(x, self.bump.jet(x))

    def inverse(self):
        return self.bump

    def to_record(self):
        return {"kind": "inverse", "map": self.bump.to_record()}


class Chain(Map1D):
    """Composition applied left to right: Chain([a, b])(x) = b(a(x))."""

    def __init__(self, maps):
        flat = []
        for m in maps:
            if isinstance(m, Chain):
                flat.extend(m.maps)
            elif not isinstance(m, Identity):
                flat.append(m)
        self.maps = tuple(flat)

    def jet(self, x):
        j = identity_jet(x)
        for m in self.maps:
            j = compose_jets(m.jet(j[0]), j)
        return j

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        for m in self.maps:
            x = m(x)
        return x

    def deriv(self, x, k=1):
        if k != 1:
            return self.jet(x)[k]
        x = np.asarray(x, dtype=float)
        d = np.ones_like(x)
        for m in self.maps:
            d = d * m.deriv(x)
            x = m(x)
        return d

    def inverse(self):
        return Chain([m.inverse() for m in reversed(self.maps)])

    def to_record(self):
        return {"kind": "compose", "maps": [m.to_record() for m in self.maps]}


def compose(phi, psi):
    """phi ∘ psi."""
    return Chain([psi, phi])


def simplify(m):
    if isinstance(m, Chain):
        if not m.maps:
            return Identity()
        if len(m.maps) == 1:
            return m.maps[0]
    return m


def invert_monotone(fn, y, lo, hi, tol=1e-13, newton_jet=None, iters=64):
    """Solve fn(x) = y for x in [lo, hi], fn monotone; vectorized bisection then Newton polish.

    Values of y outside the image are clamped to the nearer endpoint.
    """
    y = np.asarray(y, dtype=float)
    a = np.full(y.shape, float(lo))
    b = np.full(y.shape, float(hi))
    increasing = float(fn(np.asarray(hi))) >= float(fn(np.asarray(lo)))
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = fn(m)
        go_right = (fm < y) if increasing else (fm > y)
        a = np.where(go_right, m, a)
        b = np.where(go_right, b, m)
        if np.all(b - a <= 4e-16 * np.maximum(1.0, np.abs(a))):
            break
    x = 0.5 * (a + b)
    if newton_jet is not None:
        for _ in range(2):
            j = newton_jet(x)
            d = j[1]
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d != 0, (j[0] - y) / d, 0.0)
            xn = x - step
            ok = np.isfinite(xn) & (xn >= a - tol) & (xn <= b + tol)
            x = np.where(ok, xn, x)
    return x


class NumericInverse(Map1D):
    """Inverse of a monotone map on [lo, hi] by bisection + Newton."""

    def __init__(self, f, lo=-1.0, hi=1.0):
        self.f, self.lo, self.hi = f, float(lo), float(hi)

    def __call__(self, y):
        return invert_monotone(self.f, y, self.lo, self.hi, newton_jet=self.f.jet)

    def jet(self, y):
        x = self(y)
        return inverse_jet(x, self.f.jet(x))

    def inverse(self):
        return self.f

    def to_record(self):
        return {"kind": "inverse", "map": self.f.to_record()}


def map_from_record(rec):
    """Rebuild a map from its generator record (see ``Map1D.to_record``)."""
    if not isinstance(rec, dict) or "kind" not in rec:
        raise ValueError(f"map record must be an object with a 'kind' field: {rec!r}")
    kind = rec["kind"]
    if kind == "identity":
        return Identity()
    if kind == "affine":
        return Affine(_num(rec, "p"), _num(rec, "q", 0.0))
    if kind == "bump":
        return Bump(_num(rec, "c"))
    if kind == "compose":
        maps = rec.get("maps")
        if not isinstance(maps, list):
            raise ValueError("field 'maps' of a compose record must be a list")
        return simplify(Chain([map_from_record(m) for m in maps]))
    if kind == "inverse":
        if "map" not in rec:
            raise ValueError("field 'map' missing from inverse record")
        return map_from_record(rec["map"]).inverse()
    raise ValueError(f"unknown map kind {kind!r}")


def _num(rec, key, default=None):
    if key not in rec:
        if default is None:
            raise ValueError(f"field '{key}' missing from {rec.get('kind')} record")
        return default
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"field '{key}' must be a number, got {v!r}")
    return float(v)


# ---------------------------------------------------------------- rescaling

class Rescaled(Map1D):
    """[f|T]: f on T conjugated by affine maps so that it fixes -1 and 1.

    A decreasing f is followed by the flip x -> -x (``flipped`` is set).
    """

    def __init__(self, f, T: Interval):
        self.f, self.T = f, T
        a, b = float(f(np.asarray(T.lo))), float(f(np.asarray(T.hi)))
        if a == b:
            raise SingularBranchError("map is constant on the interval")
        self.flipped = b < a
        self.image = Interval.hull(a, b)
        self._dom = Affine.between(UNIT, T)
        self._rng = Affine.between(self.image, UNIT, flip=self.flipped)

    def jet(self, u):
        j = self._dom.jet(u)
        j = compose_jets(self.f.jet(j[0]), j)
        return compose_jets(self._rng.jet(j[0]), j)

    def __call__(self, u):
        return self._rng(self.f(self._dom(u)))


def rescale(f, T: Interval, samples=DEFAULT_SAMPLES):
    """Affinely rescaled version of the monotone map f on T; an element of Diff_+([-1, 1])."""
    u = np.linspace(-1.0, 1.0, samples + 2)[1:-1]
    d = f.jet(T.from_unit(u))[1]
    if not (np.all(d > 0) or np.all(d < 0)):
        raise SingularBranchError(f"derivative vanishes or changes sign on [{T.lo}, {T.hi}]")
    return Rescaled(f, T)


# ---------------------------------------------------------------- nonlinearity

def nonlinearity(phi):
    """x -> D^2 phi / D phi, the derivative of log D phi."""

    def eta(x):
        _, d1, d2, _ = phi.jet(x)
        if np.any(d1 <= 0):
            raise NotADiffeoError("derivative is not positive at a sample point")
        return d2 / d1

    return eta


def nonlinearity_derivative(phi):
    def deta(x):
        _, d1, d2, d3 = phi.jet(x)
        if np.any(d1 <= 0):
            raise NotADiffeoError("derivative is not positive at a sample point")
        return (d3 * d1 - d2 * d2) / (d1 * d1)

    return deta


def cr_norm(phi, r, samples=DEFAULT_SAMPLES):
    """Sampled |phi|_r: sup|eta| (+ sup|D eta| when r = 3) on a uniform grid with endpoints."""
    if r not in (2, 3):
        raise ValueError(f"r must be 2 or 3, got {r}")
    x = np.linspace(-1.0, 1.0, samples)
    total = float(np.max(np.abs(nonlinearity(phi)(x))))
    if r == 3:
        total += float(np.max(np.abs(nonlinearity_derivative(phi)(x))))
    return total


def nonlinearity_compose(phi, psi):
    """Nonlinearity of phi∘psi through the cocycle eta_phi(psi) * D psi + eta_psi."""
    eta_phi, eta_psi = nonlinearity(phi), nonlinearity(psi)

    def eta(x):
        v, d1, _, _ = psi.jet(x)
        return eta_phi(v) * d1 + eta_psi(x)

    return eta


def schwarzian(f, x):
    """D^3f/Df - 1.5 (D^2f/Df)^2 from the exact jet."""
    _, d1, d2, d3 = f.jet(x)
    if np.any(d1 == 0):
        raise CriticalPointError("Schwarzian requested at a critical point")
    r = d2 / d1
    return d3 / d1 - 1.5 * r * r


# ---------------------------------------------------------------- distortion

@dataclass(frozen=True)
class DistortionReport:
    ratio_max: float
    koebe_space: float | None
    samples: int


def measure_distortion(branch, I: Interval, sample_count=DEFAULT_SAMPLES, L=None, R=None, points=None):
    """Sampled distortion max|Df(x)|/|Df(y)| over x, y in I.

    ``points`` overrides the uniform lattice (it is restricted to I).  When the
    extension intervals L and R (left and right of I) are given, the Koebe
    space min(|f(L)|, |f(R)|)/|f(I)| is reported too.
    """
    if points is None:
        x = np.linspace(I.lo, I.hi, sample_count)
    else:
        x = np.asarray(points, dtype=float)
        x = x[I.contains(x)]
    d = np.abs(branch.jet(x)[1])
    if np.any(d == 0):
        raise CriticalPointError("branch derivative vanishes on the sample set")
    ratio = float(d.max() / d.min())
    tau = None
    if L is not None and R is not None:
        size = lambda J: abs(float(branch(np.asarray(J.hi)) - branch(np.asarray(J.lo))))
        tau = min(size(L), size(R)) / size(I)
    return DistortionReport(max(ratio, 1.0), tau, int(x.size))
