"""Windows with periodic endpoints, good intervals, and the induced Markov map."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, SearchExhaustedError, WindowNotFoundError
from .geometry import Interval, Map1D, inverse_jet
from .markov import Branch, MarkovMap, validate
from .periodic import find_periodic, parse_word, periodic_point
from .unimodal import LEFT, RIGHT, SYMBOLS, attractor_interval, iterate_jet

log = logging.getLogger(__name__)

CONTAIN_TOL = 1e-10
SNAP_TOL = 1e-9
MIN_PIECE = 1e-15


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class Window:
    U: Interval
    V: Interval
    a_orbit: tuple
    b_orbit: tuple
    a_word: str  # itinerary of a itself, one period long
    b_word: str

    @property
    def orbit_points(self):
        return tuple(sorted(set(self.a_orbit) | set(self.b_orbit)))

    def as_dict(self):
        return {
            "U": list(self.U), "V": list(self.V),
            "a_word": self.a_word, "b_word": self.b_word,
            "a_orbit": list(self.a_orbit), "b_orbit": list(self.b_orbit),
        }


def _window_from(A, a_orbit, a_word, b_orbit, b_word):
    a, b = a_orbit[0], b_orbit[0]
    pts = np.array(sorted(set(a_orbit) | set(b_orbit)))
    left = pts[pts < a - 1e-12]
    right = pts[pts > b + 1e-12]
    V = Interval(float(left.max()) if left.size else A.lo, float(right.min()) if right.size else A.hi)
    return Window(Interval(a, b), V, tuple(a_orbit), tuple(b_orbit), a_word, b_word)


def _rotations(orbit):
    """(point, rotated orbit points, itinerary word from that point) for each orbit point."""
    n = orbit.period
    for k in range(n):
        pts = orbit.points[k:] + orbit.points[:k]
        yield orbit.points[k], pts, orbit.word[k:] + orbit.word[:k]


def window_candidates(f, center, max_period=4, min_margin=0.1):
    A = attractor_interval(f)
    cands = []
    for n in range(1, max_period + 1):
        for orb in find_periodic(f, n):
            for p, pts, w in _rotations(orb):
                if A.interior_contains(p, 1e-12):
                    cands.append((p, pts, w, n))
    left = [c for c in cands if c[0] < center]
    right = [c for c in cands if c[0] > center]
    out = []
    for a, a_pts, a_w, na in left:
        for b, b_pts, b_w, nb in right:
            pts = np.array(a_pts + b_pts)
            if np.any((pts > a + 1e-12) & (pts < b - 1e-12)):
                continue
            W = _window_from(A, a_pts, a_w, b_pts, b_w)
            margin = min(W.U.lo - W.V.lo, W.V.hi - W.U.hi) / W.U.length
            if margin < min_margin:
                continue
            out.append(((max(na, nb), -W.U.length, a, b), W, margin))
    out.sort(key=lambda t: t[0])
    return out


def default_center(f):
    A = attractor_interval(f)
    return A.lo + 0.7 * A.length


def find_window(f, center=None, max_period=4, min_margin=0.1):
    """Window [a, b] around ``center`` with periodic endpoints whose orbits avoid (a, b).

    Among pairs with Koebe margin at least ``min_margin`` * |U| on both sides,
    the smallest maximal period wins, then the widest window.
    """
    A = attractor_interval(f)
    if center is None:
        center = default_center(f)
    if not A.interior_contains(center):
        raise ValueError(f"center {center} is not inside the attractor interval ({A.lo}, {A.hi})")
    cands = window_candidates(f, center, max_period, min_margin)
    if not cands:
        raise WindowNotFoundError(
            f"no window around {center} from periodic orbits of period <= {max_period} "
            "(repeated failure may indicate a renormalizable map)"
        )
    return cands[0][1]


def match_window(g, W):
    """Window of g with endpoints on the periodic points carrying the same itineraries as W's."""
    A = attractor_interval(g)
    orbits = []
    for word in (W.a_word, W.b_word):
        p = periodic_point(g, word)
        if p is None:
            raise WindowNotFoundError(f"g has no periodic point with itinerary {word}")
        pts = [p]
        for _ in range(len(word) - 1):
            pts.append(float(g(np.asarray(pts[-1]))))
        orbits.append(tuple(pts))
    return _window_from(A, orbits[0], W.a_word, orbits[1], W.b_word)


# ---------------------------------------------------------------- pullbacks

def pull_back(f, codes, lo, hi):
    """Pull the interval [lo, hi] back along lap symbols (forward order), last symbol first."""
    for s in reversed(codes):
        x = f.lap_inverse(np.array([lo, hi]), s)
        lo, hi = float(x.min()), float(x.max())
    return lo, hi


def _orientation(codes):
    return -1 if sum(1 for s in codes if s == RIGHT) % 2 else 1


@dataclass(frozen=True)
class GoodInterval:
    I: Interval
    n: int
    word: str
    T: Interval
    E: Interval
    orientation: int

    def as_dict(self):
        return {"I": list(self.I), "n": self.n, "word": self.word, "T": list(self.T), "E": list(self.E),
                "orientation": self.orientation}


@dataclass
class FirstGeneration:
    window: Window
    goods: list
    coverage: float
    max_time: int
    complete: bool
    history: list = field(default_factory=list)  # (time, coverage)
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {
            "coverage": self.coverage, "max_time": self.max_time, "complete": self.complete,
            "branches": len(self.goods), "warnings": self.warnings,
            "history": [list(h) for h in self.history],
        }


class _Snapper:
    """Replace computed endpoints by exact orbit points when they agree to SNAP_TOL."""

    def __init__(self, points):
        self.points = np.array(sorted(points))

    def __call__(self, x):
        if self.points.size:
            k = int(np.argmin(np.abs(self.points - x)))
            if abs(self.points[k] - x) <= SNAP_TOL:
                return float(self.points[k])
        return float(x)


def _advance(f, K, LI, snap):
    """Split (K, LI) at the critical point and map both halves forward; yields (symbol, K', LI')."""
    c = f.critical_point
    for side in (LEFT, RIGHT):
        lo, hi = (K[0], min(K[1], c)) if side == LEFT else (max(K[0], c), K[1])
        if hi - lo <= 0:
            continue
        llo, lhi = (LI[0], min(LI[1], c)) if side == LEFT else (max(LI[0], c), LI[1])
        y = f(np.array([lo, hi, llo, lhi]))
        k = (snap(min(y[0], y[1])), snap(max(y[0], y[1])))
        li = (snap(min(y[2], y[3])), snap(max(y[2], y[3])))
        yield side, k, li


def first_generation(f, W, max_time=25, coverage_target=0.99, max_pieces=100_000):
    """First-generation good intervals of the window, found breadth-first in the return time.

    A piece is a subinterval J of U not yet covered, stored through its lap word,
    its image K = f^n(J) and the image LI of the maximal monotone lap of f^n
    containing it.  When K covers U and LI covers A_f, the pullback of U is good;
    the two remainders of K keep being iterated.
    """
    A = attractor_interval(f)
    U, V = W.U, W.V
    snap = _Snapper(list(W.orbit_points) + [A.lo, A.hi, f.critical_value])
    pieces = [((), (U.lo, U.hi), (A.lo, A.hi))]
    goods, history, warnings = [], [], []
    covered = 0.0
    t_used = 0
    for n in range(1, max_time + 1):
        t_used = n
        nxt = []
        for codes, K, LI in pieces:
            for side, k, li in _advance(f, K, LI, snap):
                cw = codes + (side,)
                if k[0] <= U.lo + CONTAIN_TOL and k[1] >= U.hi - CONTAIN_TOL and \
                        li[0] <= A.lo + CONTAIN_TOL and li[1] >= A.hi - CONTAIN_TOL:
                    g = _make_good(f, cw, U, V, A)
                    goods.append(g)
                    covered += g.I.length
                    rest = [(k[0], U.lo), (U.hi, k[1])]
                else:
                    rest = [k]
                for r in rest:
                    if r[1] - r[0] <= 0:
                        continue
                    jl, jh = pull_back(f, cw, *r)
                    if jh - jl > MIN_PIECE:
                        nxt.append((cw, r, li))
        pieces = nxt
        cov = covered / U.length
        history.append((n, cov))
        if cov >= coverage_target or not pieces:
            break
        if len(pieces) > max_pieces:
            warnings.append(f"piece budget {max_pieces} exceeded at time {n}")
            break
    coverage = covered / U.length
    complete = coverage >= coverage_target
    if not complete:
        msg = f"partial coverage {coverage:.6f} < {coverage_target} after time {t_used}"
        warnings.append(msg)
        log.warning(msg)
    goods.sort(key=lambda g: g.I.lo)
    _check_first_generation(goods, W)
    return FirstGeneration(W, goods, coverage, t_used, complete, history, warnings)


def _make_good(f, codes, U, V, A):
    lo, hi = pull_back(f, codes, U.lo, U.hi)
    elo, ehi = pull_back(f, codes, V.lo, V.hi)
    tlo, thi = pull_back(f, codes, A.lo, A.hi)
    return GoodInterval(
        Interval(lo, hi), len(codes), "".join(SYMBOLS[s] for s in codes),
        Interval(tlo, thi), Interval(elo, ehi), _orientation(codes),
    )


def _check_first_generation(goods, W):
    for g1, g2 in zip(goods, goods[1:]):
        if g1.I.hi > g2.I.lo + 1e-10:
            raise ConstructionError(f"good intervals {g1.word} and {g2.word} overlap")
    for g in goods:
        if g.I.interior_contains(W.U.lo, 1e-12) or g.I.interior_contains(W.U.hi, 1e-12):
            raise ConstructionError(f"good interval {g.word} contains a window endpoint")


def matched_goods(g, W, words):
    """Good intervals of g obtained by pulling its window back along given lap words."""
    A = attractor_interval(g)
    return [_make_good(g, tuple(parse_word(w)), W.U, W.V, A) for w in words]


def monotone_onto(f, T, max_time=12):
    """Leftmost M ⊆ T and smallest m >= 1 with f^m mapping M monotonically onto A_f."""
    A = attractor_interval(f)
    snap = _Snapper([A.lo, A.hi, f.critical_value])
    pieces = [((), (T.lo, T.hi), (T.lo, T.hi))]
    for m in range(1, max_time + 1):
        found, nxt = [], []
        for codes, K, _ in pieces:
            for side, k, _ in _advance(f, K, K, snap):
                cw = codes + (side,)
                if k[0] <= A.lo + CONTAIN_TOL and k[1] >= A.hi - CONTAIN_TOL:
                    found.append(pull_back(f, cw, A.lo, A.hi))
                nxt.append((cw, k, k))
        if found:
            lo, hi = min(found)
            return Interval(lo, hi), m
        pieces = nxt
    raise SearchExhaustedError(f"no monotone onto branch within time {max_time}")


# ---------------------------------------------------------------- induced map

class _InducedInverse(Map1D):
    def __init__(self, branch):
        self.b = branch

    def __call__(self, y):
        b = self.b
        Y = b.U.from_unit(y)
        for s in b.codes[::-1]:
            Y = b.f.lap_inverse(Y, s)
        return b.U.to_unit(Y)

    def jet(self, y):
        x = self(y)
        return inverse_jet(x, self.b.jet(x))

    def inverse(self):
        return self.b


class InducedBranch(Branch):
    """f^n on a good interval, in window coordinates (U identified with [-1, 1])."""

    def __init__(self, f, W, good):
        self.f, self.U, self.good = f, W.U, good
        self.codes = tuple(int(s) for s in parse_word(good.word))
        self.n = good.n
        self.domain = Interval(float(W.U.to_unit(good.I.lo)), float(W.U.to_unit(good.I.hi)))
        self.orientation = good.orientation
        self.extension = Interval(float(W.U.to_unit(good.E.lo)), float(W.U.to_unit(good.E.hi)))
        self.extension_image = Interval(float(W.U.to_unit(W.V.lo)), float(W.U.to_unit(W.V.hi)))
        self._inv = _InducedInverse(self)
        self._s = 0.5 * W.U.length

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        X = self.U.from_unit(x)
        j = iterate_jet(self.f, X, self.n)
        s = self._s
        return (self.U.to_unit(j[0]), j[1], j[2] * s, j[3] * s * s)

    def __call__(self, x):
        X = self.U.from_unit(x)
        for _ in range(self.n):
            X = self.f(X)
        return self.U.to_unit(X)

    def deriv(self, x, k=1):
        if k != 1:
            return self.jet(x)[k]
        X = self.U.from_unit(np.asarray(x, dtype=float))
        d = np.ones_like(X)
        for _ in range(self.n):
            d = d * self.f.deriv(X)
            X = self.f(X)
        return d

    def inverse_with_deriv(self, y):
        Y = self.U.from_unit(np.asarray(y, dtype=float))
        d = np.ones_like(Y)
        for s in self.codes[::-1]:
            Y = self.f.lap_inverse(Y, s)
            d = d / self.f.deriv(Y)
        return self.U.to_unit(Y), d

    def inverse(self):
        return self._inv

    def record(self):
        rec = super().record()
        rec.update({"word": self.good.word, "return_time": self.n})
        return rec


@dataclass
class InducedMap:
    F: MarkovMap
    window: Window
    generation: FirstGeneration
    validation: object

    def as_dict(self):
        return {
            "window": self.window.as_dict(),
            "coverage": self.F.coverage,
            "extension_margin": self.F.extension_margin,
            "K_measured": self.validation.K_measured,
            "extensions_outside_window": self.F.meta.get("extensions_outside_window", []),
            "validation": self.validation.as_dict(),
            "generation": self.generation.as_dict(),
            "branches": [
                {**g.as_dict(), "norm": nrm}
                for g, nrm in zip(self.generation.goods, self.validation.norms)
            ],
        }


def build_induced(f, W, goods, generation=None):
    """Induced Markov map of the window: branch i is f^{n_i} on I_i rescaled by U -> [-1, 1]."""
    if isinstance(goods, FirstGeneration):
        generation, goods = goods, goods.goods
    for g in goods:
        if not g.E.contains_interval(g.I, 1e-12):
            raise ConstructionError(f"extension of good interval {g.word} does not contain it", g)
    branches = [InducedBranch(f, W, g) for g in goods]
    margin = min(W.U.lo - W.V.lo, W.V.hi - W.U.hi) * 2.0 / W.U.length
    # boundary intervals whose endpoint returns to a or b have E sticking out of U;
    # f^n is still monotone on E, which is all the Koebe estimate needs
    outside = [g.word for g in goods if not W.U.contains_interval(g.E, 1e-12)]
    F = MarkovMap(branches, extension_margin=margin, smoothness=3,
                  meta={"window": W.as_dict(), "words": [g.word for g in goods],
                        "extensions_outside_window": outside})
    rep = validate(F)
    if not rep.valid:
        bad = next((p for p in rep.problems), "unknown")
        raise ConstructionError(f"induced map failed validation: {bad}")
    F.regularity_bound = max(rep.K_measured, 1e-300)
    if generation is None:
        cov = sum(g.I.length for g in goods) / W.U.length
        generation = FirstGeneration(W, list(goods), cov, max((g.n for g in goods), default=0), True)
    return InducedMap(F, W, generation, rep)


def induce(f, center=None, max_period=4, max_time=25, coverage_target=0.99, min_margin=0.1):
    W = find_window(f, center, max_period, min_margin)
    gen = first_generation(f, W, max_time, coverage_target)
    return build_induced(f, W, gen)


def induce_matched(g, induced_f):
    """Induced map of g built on the itinerary-matched window and the same lap words."""
    W = match_window(g, induced_f.window)
    words = [b.good.word for b in induced_f.F.branches]
    goods = matched_goods(g, W, words)
    return build_induced(g, W, goods)
