"""Periodic orbits located per symbolic word, multipliers, and spectrum comparison."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, CriticalPointError, NotEquivalentError
from .unimodal import LEFT, RIGHT, SYMBOLS

log = logging.getLogger(__name__)

CLOSURE_TOL = 1e-10
CRITICAL_EXCLUSION = 1e-9


@dataclass(frozen=True)
class PeriodicOrbit:
    points: tuple
    period: int
    word: str
    multiplier: float

    @property
    def itinerary(self):
        return self.word


def all_words(n):
    """Every word of length n over {0, 1} as an int array of shape (2**n, n), lexicographic."""
    codes = np.arange(2 ** n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.int8)


def parse_word(word):
    return np.array([SYMBOLS.index(s) for s in word], dtype=np.int8)


def word_str(codes):
    return "".join(SYMBOLS[int(s)] for s in codes)


def primitive_period(codes):
    n = len(codes)
    for d in range(1, n + 1):
        if n % d == 0 and all(codes[i] == codes[i % d] for i in range(n)):
            return d
    return n


def pullback_intervals(f, words):
    """Intervals I_w = {x : f^k(x) in lap w_k, k < n}, obtained by pulling [-1, 1] back along the word.

    Returns (lo, hi, realized) arrays; unrealized words have hi <= lo.
    """
    W, n = words.shape
    lo = np.full(W, -1.0)
    hi = np.full(W, 1.0)
    lap_lo = np.array([f.lap_image(LEFT)[0], f.lap_image(RIGHT)[0]])
    cv = f.critical_value
    for k in range(n - 1, -1, -1):
        s = words[:, k]
        lo = np.maximum(lo, lap_lo[s])
        hi = np.minimum(hi, cv)
        ok = hi > lo
        a = f.lap_inverse(np.where(ok, lo, cv), s)
        b = f.lap_inverse(np.where(ok, hi, cv), s)
        lo = np.where(ok, np.minimum(a, b), 1.0)
        hi = np.where(ok, np.maximum(a, b), -1.0)
    return lo, hi, hi > lo


def _iterate(f, x, n):
    for _ in range(n):
        x = f(x)
    return x


def _word_roots(f, words):
    """Fixed point of f^n on I_w for each word (nan where none exists)."""
    W, n = words.shape
    lo, hi, ok = pullback_intervals(f, words)
    lo, hi = np.where(ok, lo, 0.0), np.where(ok, hi, 0.0)
    dl = _iterate(f, lo, n) - lo
    dh = _iterate(f, hi, n) - hi
    has_root = ok & ((np.sign(dl) * np.sign(dh)) <= 0)
    a, b, da = lo.copy(), hi.copy(), dl.copy()
    for _ in range(80):
        m = 0.5 * (a + b)
        dm = _iterate(f, m, n) - m
        same = np.sign(dm) == np.sign(da)
        a = np.where(same, m, a)
        da = np.where(same, dm, da)
        b = np.where(same, b, m)
        if np.all(b - a <= 2e-16 * np.maximum(1.0, np.abs(a))):
            break
    x = 0.5 * (a + b)
    # an endpoint that is itself a root (e.g. the boundary fixed point -1)
    x = np.where(dl == 0, lo, np.where(dh == 0, hi, x))
    return np.where(has_root, x, np.nan)


def _orbits_of_least_period(f, n):
    words = all_words(n)
    prim = np.array([primitive_period(w) == n for w in words])
    words = words[prim]
    if words.size == 0:
        return []
    roots = _word_roots(f, words)
    by_word = {word_str(w): float(r) for w, r in zip(words, roots) if np.isfinite(r)}
    c = f.critical_point
    seen, orbits = set(), []
    for w in sorted(by_word):
        if w in seen:
            continue
        rots = [w[k:] + w[:k] for k in range(n)]
        seen.update(rots)
        pts = []
        for k, r in enumerate(rots):
            if r in by_word:
                pts.append(by_word[r])
            else:  # fall back to forward iteration from the previous point
                pts.append(float(f(np.asarray(pts[-1]))) if pts else np.nan)
        pts = np.array(pts)
        if not np.all(np.isfinite(pts)):
            continue
        if np.any(np.abs(pts - c) <= CRITICAL_EXCLUSION):
            log.warning("discarding orbit %s: it passes within %g of the critical point", w, CRITICAL_EXCLUSION)
            continue
        # itinerary check: each point must sit in the lap its word prescribes
        syms = f.symbol(pts)
        if word_str(syms) != "".join(r[0] for r in rots):
            continue
        start = int(np.argmax(pts))
        pts = np.roll(pts, -start)
        closure = np.abs(f(pts) - np.roll(pts, -1))
        if closure.max() > CLOSURE_TOL:
            raise ConvergenceError(f"orbit {w}: closure residual {closure.max():.3e} exceeds {CLOSURE_TOL}")
        mult = float(np.prod(f.jet(pts)[1]))
        orbits.append(PeriodicOrbit(tuple(float(p) for p in pts), n, rots[start], mult))
    orbits.sort(key=lambda o: o.word)
    return orbits


def find_periodic(f, n, include_divisors=False):
    """Periodic orbits of least period n (or of every period dividing n when flagged), sorted by word."""
    if n < 1:
        raise ValueError("period must be positive")
    periods = [d for d in range(1, n + 1) if n % d == 0] if include_divisors else [n]
    out = []
    for d in periods:
        out.extend(_orbits_of_least_period(f, d))
    return out


def periodic_point(f, word):
    """The fixed point of f^n on the pullback interval of one word, or None if the word has none."""
    codes = parse_word(word)[None, :]
    x = _word_roots(f, codes)[0]
    return float(x) if np.isfinite(x) else None


def multiplier(f, orbit):
    pts = np.asarray(orbit.points if isinstance(orbit, PeriodicOrbit) else orbit, dtype=float)
    if np.any(np.abs(pts - f.critical_point) <= CRITICAL_EXCLUSION):
        raise CriticalPointError("orbit passes through the critical point")
    return float(np.prod(f.jet(pts)[1]))


def orbit_table(f, max_period):
    rows = []
    for n in range(1, max_period + 1):
        rows.extend(find_periodic(f, n))
    return rows


@dataclass
class MultiplierComparison:
    rows: list  # (word, period, multiplier_f, multiplier_g, relative difference)
    max_rel_diff: float
    only_f: list = field(default_factory=list)
    only_g: list = field(default_factory=list)

    def as_dict(self):
        return {
            "max_rel_diff": self.max_rel_diff,
            "orbits_compared": len(self.rows),
            "only_f": self.only_f,
            "only_g": self.only_g,
            "rows": [
                {"word": w, "period": p, "multiplier_f": a, "multiplier_g": b, "rel_diff": d}
                for w, p, a, b, d in self.rows
            ],
        }


def compare_multipliers(f, g, max_period, threads=1):
    """Match periodic orbits of f and g by itinerary and compare multipliers up to max_period."""
    with ThreadPoolExecutor(max_workers=max(1, min(threads, 2))) as pool:
        tf = pool.submit(orbit_table, f, max_period)
        tg = pool.submit(orbit_table, g, max_period)
        of, og = tf.result(), tg.result()
    mf = {o.word: o for o in of}
    mg = {o.word: o for o in og}
    rows = []
    for w in sorted(set(mf) & set(mg), key=lambda s: (len(s), s)):
        a, b = mf[w].multiplier, mg[w].multiplier
        d = abs(a - b) / max(abs(a), abs(b), 1e-300)
        rows.append((w, len(w), a, b, d))
    report = MultiplierComparison(
        rows=rows,
        max_rel_diff=max((r[4] for r in rows), default=0.0),
        only_f=sorted(set(mf) - set(mg), key=lambda s: (len(s), s)),
        only_g=sorted(set(mg) - set(mf), key=lambda s: (len(s), s)),
    )
    if report.only_f or report.only_g:
        raise NotEquivalentError(
            f"realized word sets differ ({len(report.only_f)} only in f, {len(report.only_g)} only in g)",
            report,
        )
    return report
