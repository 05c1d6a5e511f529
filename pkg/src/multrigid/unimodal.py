"""S-unimodal maps outer ∘ q_t ∘ inner and their basic combinatorics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CriticalPointError, DegenerateAttractorError
from .geometry import (
    Chain,
    Identity,
    Interval,
    Map1D,
    compose_jets,
    identity_jet,
    inverse_jet,
    map_from_record,
    schwarzian,
    simplify,
)

CRITICAL_BAND = 1e-12
LEFT, RIGHT = 0, 1
SYMBOLS = "LR"


def _is_even_integer(a):
    return float(a).is_integer() and int(a) % 2 == 0


class Fold(Map1D):
    """Canonical folding map q_t(x) = -2t|x|^alpha + 2t - 1."""

    def __init__(self, t, alpha=2.0):
        t, alpha = float(t), float(alpha)
        if not 0 < t <= 1:
            raise ValueError(f"t must lie in (0, 1], got {t}")
        if not alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {alpha}")
        self.t, self.alpha = t, alpha
        self._even = _is_even_integer(alpha)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ax = x * x if self.alpha == 2.0 else np.abs(x) ** self.alpha
        return -2.0 * self.t * ax + 2.0 * self.t - 1.0

    def deriv(self, x, k=1):
        if k != 1:
            return self.jet(x)[k]
        x = np.asarray(x, dtype=float)
        if self.alpha == 2.0:
            return -4.0 * self.t * x
        return self.jet(x)[1]

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        t, a = self.t, self.alpha
        c1, c2, c3 = -2 * t * a, -2 * t * a * (a - 1), -2 * t * a * (a - 1) * (a - 2)
        if a == 2.0:
            return (self(x), c1 * x, np.full_like(x, c2), np.zeros_like(x))
        if self._even:
            p = lambda e: np.power(x, e) if e >= 0 else np.zeros_like(x)
            return (self(x), c1 * p(a - 1), c2 * p(a - 2), c3 * p(a - 3) if c3 else np.zeros_like(x))
        ax, s = np.abs(x), np.sign(x)
        zero = ax == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = c1 * ax ** (a - 1) * s
            d2 = c2 * ax ** (a - 2)
            d3 = c3 * ax ** (a - 3) * s
        # at the critical point the k-th derivative exists (and is 0) only for alpha > k
        d1, d2, d3 = (np.where(zero, 0.0 if a > k else np.nan, d) for k, d in ((1, d1), (2, d2), (3, d3)))
        return (self(x), d1, d2, d3)

    def lap_inverse(self, z, side):
        """Preimage of z on the left (side 0) or right (side 1) lap."""
        z = np.asarray(z, dtype=float)
        u = np.maximum((2.0 * self.t - 1.0 - z) / (2.0 * self.t), 0.0) ** (1.0 / self.alpha)
        return np.where(np.asarray(side) == RIGHT, u, -u)


class UnimodalMap(Map1D):
    """f = outer ∘ q_t ∘ inner on [-1, 1]; outer and inner are increasing diffeomorphisms."""

    def __init__(self, t, alpha=2.0, outer=None, inner=None):
        self.fold = Fold(t, alpha)
        self.outer = simplify(outer) if outer is not None else Identity()
        self.inner = simplify(inner) if inner is not None else Identity()
        self._outer_inv = self.outer.inverse()
        self._inner_inv = self.inner.inverse()
        self.critical_point = float(self._inner_inv(np.asarray(0.0)))
        self.critical_value = float(self.outer(np.asarray(2.0 * self.fold.t - 1.0)))
        lo_l = float(self(np.asarray(-1.0)))
        lo_r = float(self(np.asarray(1.0)))
        self._lap_lo = np.array([lo_l, lo_r])

    @property
    def t(self):
        return self.fold.t

    @property
    def alpha(self):
        return self.fold.alpha

    @property
    def phi(self):
        return self.outer

    def __call__(self, x):
        return self.outer(self.fold(self.inner(x)))

    def jet(self, x):
        j = self.inner.jet(x)
        j = compose_jets(self.fold.jet(j[0]), j)
        return compose_jets(self.outer.jet(j[0]), j)

    def deriv(self, x, k=1):
        if k != 1:
            return self.jet(x)[k]
        x = np.asarray(x, dtype=float)
        u = self.inner(x)
        z = self.fold(u)
        return self.outer.deriv(z) * self.fold.deriv(u) * self.inner.deriv(x)

    def lap_image(self, side):
        return (float(self._lap_lo[side]), self.critical_value)

    def lap_inverse(self, y, side):
        """Preimage of y in the left (0) or right (1) monotone lap; y is clipped to the lap image."""
        y = np.asarray(y, dtype=float)
        z = self._outer_inv(np.minimum(y, self.critical_value))
        return self._inner_inv(self.fold.lap_inverse(z, side))

    def symbol(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.critical_point, LEFT, RIGHT)

    def to_record(self):
        rec = {"t": self.t, "alpha": self.alpha, "phi": _chain_records(self.outer)}
        if not isinstance(self.inner, Identity):
            rec["inner"] = _chain_records(self.inner)
        return rec


def _chain_records(m):
    if isinstance(m, Identity):
        return []
    if isinstance(m, Chain):
        return [x.to_record() for x in m.maps]
    return [m.to_record()]


def map_from_spec(spec):
    """Build a UnimodalMap from a parsed map specification (see the CLI documentation)."""
    if not isinstance(spec, dict):
        raise ValueError("map specification must be an object")
    for key in ("t", "alpha"):
        if key not in spec:
            raise ValueError(f"field '{key}' missing from map specification")
        if isinstance(spec[key], bool) or not isinstance(spec[key], (int, float)):
            raise ValueError(f"field '{key}' must be a number, got {spec[key]!r}")

    def chain(key):
        recs = spec.get(key, [])
        if not isinstance(recs, list):
            raise ValueError(f"field '{key}' must be a list of generator records")
        maps = []
        for i, r in enumerate(recs):
            try:
                maps.append(map_from_record(r))
            except ValueError as exc:
                raise ValueError(f"field '{key}[{i}]': {exc}") from None
        return simplify(Chain(maps))

    try:
        f = UnimodalMap(spec["t"], spec["alpha"], outer=chain("phi"), inner=chain("inner"))
    except ValueError as exc:
        if str(exc).startswith("field"):
            raise
        raise ValueError(f"field 't'/'alpha': {exc}") from None
    if "conjugate_by" in spec:
        f = conjugate_map(f, chain("conjugate_by"))
    return f


def eval_deriv(f, x, k=0):
    """k-th derivative of f at the point x (k = 0..3)."""
    if k not in (0, 1, 2, 3):
        raise ValueError("k must be 0, 1, 2 or 3")
    v = float(f.jet(np.asarray(float(x)))[k])
    if not np.isfinite(v):
        raise CriticalPointError(f"derivative of order {k} undefined at x={x} for alpha={f.alpha}")
    return v


def attractor_interval(f):
    c = f.critical_point
    hi = float(f(np.asarray(c)))
    lo = float(f(np.asarray(hi)))
    if not lo < hi:
        raise DegenerateAttractorError(f"f^2(c)={lo} is not below f(c)={hi}")
    return Interval(lo, hi)


def itinerary(f, x, n):
    """Symbols L, C, R of x, f(x), ..., f^{n-1}(x) relative to the critical point."""
    out = []
    c = f.critical_point
    x = float(x)
    for _ in range(n):
        out.append("C" if abs(x - c) <= CRITICAL_BAND else ("L" if x < c else "R"))
        x = float(f(np.asarray(x)))
    return "".join(out)


def conjugate_map(f, phi):
    """phi ∘ f ∘ phi^-1, stored with the same fold and extended outer/inner chains."""
    if isinstance(simplify(phi), Identity):
        return f
    return UnimodalMap(
        f.t, f.alpha,
        outer=Chain([f.outer, phi]),
        inner=Chain([phi.inverse(), f.inner]),
    )


def iterate_jet(f, x, n):
    j = identity_jet(x)
    for _ in range(n):
        j = compose_jets(f.jet(j[0]), j)
    return j


@dataclass
class MembershipReport:
    schwarzian_negative: bool
    schwarzian_max: float
    schwarzian_samples: int
    maps_into_interval: bool
    image: tuple
    critical_cycle: dict | None
    attracting_cycle: bool
    factor_schwarzian: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.schwarzian_negative and self.maps_into_interval and not self.attracting_cycle

    def as_dict(self):
        return {
            "passed": self.passed,
            "schwarzian_negative": self.schwarzian_negative,
            "schwarzian_max": self.schwarzian_max,
            "schwarzian_samples": self.schwarzian_samples,
            "maps_into_interval": self.maps_into_interval,
            "image": list(self.image),
            "critical_cycle": self.critical_cycle,
            "attracting_cycle": self.attracting_cycle,
            "factor_schwarzian_max": self.factor_schwarzian,
        }


def membership_check(f, samples=1024, horizon=10_000, max_cycle=64, cycle_tol=1e-9):
    """Heuristic sanity checks for the S-unimodal class; a report, never a certificate."""
    c = f.critical_point
    x = np.linspace(-1.0, 1.0, samples)
    x = x[np.abs(x - c) > 1e-9]
    S = schwarzian(f, x)
    img = f(np.linspace(-1.0, 1.0, 4 * samples + 1))
    lo, hi = float(img.min()), float(img.max())

    factors = {}
    for name, m in (("outer", f.outer), ("inner", f.inner)):
        if not isinstance(m, Identity):
            factors[name] = float(np.max(schwarzian(m, np.linspace(-1.0, 1.0, samples))))

    orbit = np.empty(horizon)
    y = float(f(np.asarray(c)))
    for i in range(horizon):
        orbit[i] = y
        # clamp: round-off can push conjugated maps a few ulps outside [-1, 1]
        y = min(max(float(f(np.asarray(y))), -1.0), 1.0)
    cycle = None
    tail = orbit[-2 * max_cycle:]
    for p in range(1, max_cycle + 1):
        if np.max(np.abs(tail[p:] - tail[:-p])) < cycle_tol:
            pts = orbit[-p:]
            mult = float(np.prod(f.jet(pts)[1]))
            cycle = {"period": p, "multiplier": mult, "points": [float(v) for v in pts]}
            break
    attracting = cycle is not None and abs(cycle["multiplier"]) < 1.0
    return MembershipReport(
        schwarzian_negative=bool(np.all(S < 0)),
        schwarzian_max=float(np.max(S)),
        schwarzian_samples=int(S.size),
        maps_into_interval=lo >= -1.0 - 1e-12 and hi <= 1.0 + 1e-12,
        image=(lo, hi),
        critical_cycle=cycle,
        attracting_cycle=attracting,
        factor_schwarzian=factors,
    )
