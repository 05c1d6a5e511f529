"""Lipschitz estimates, measure normalization, conjugacies and the rigidity pipeline."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    MultRigidError,
    NotEquivalentError,
    NotInvariantError,
    StageError,
    StructuralMismatchError,
)
from .geometry import Interval, Map1D, inverse_jet, compose_jets
from .inducing import (
    build_induced,
    find_window,
    first_generation,
    match_window,
    matched_goods,
)
from .markov import (
    Branch,
    DensityGrid,
    GradingCoordinate,
    MarkovMap,
    PullbackMap,
    cell_edges,
    invariant_density,
    pf_apply,
    word_tree,
)
from .periodic import compare_multipliers

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- fixed points

def _pullback_points(F, words, x):
    """G_w(x_k) for each word w (equal lengths) and its own point x_k; returns (G, DG)."""
    words = np.asarray(words, dtype=np.int64)
    x = np.asarray(x, dtype=float).copy()
    d = np.ones_like(x)
    for k in range(words.shape[1]):
        col = words[:, k]
        for i in np.unique(col):
            sel = col == i
            y, g1 = F.branches[int(i)].inverse_with_deriv(x[sel])
            d[sel] = d[sel] * g1
            x[sel] = y
    return x, d


def branch_fixed_points(F, words, max_iter=200):
    """Fixed points p_w of the branches F^n on I_w and the multipliers DF^n(p_w).

    G_w is a contraction of [-1, 1], so p_w is the limit of y -> G_w(y).
    """
    words = np.asarray(words, dtype=np.int64)
    if words.ndim == 1:
        words = words[None, :]
    p = np.zeros(words.shape[0])
    for _ in range(max_iter):
        q, dg = _pullback_points(F, words, p)
        done = np.all(np.abs(q - p) <= 1e-15)
        p = q
        if done:
            break
    for _ in range(2):  # Newton polish on G_w(y) - y
        q, dg = _pullback_points(F, words, p)
        p = p - (q - p) / (dg - 1.0)
    gp, dg = _pullback_points(F, words, p)
    resid = np.abs(gp - p)
    if np.any(resid > 1e-10):
        raise MultRigidError(f"branch fixed point residual {resid.max():.3e} exceeds 1e-10")
    return p, 1.0 / dg


def branch_fixed_point(F, w):
    p, d = branch_fixed_points(F, [tuple(w)])
    return float(p[0]), float(d[0])


# ---------------------------------------------------------------- Lipschitz bands

@dataclass
class LipschitzReport:
    depths: list
    ratio_min: list
    ratio_max: list
    words_per_depth: list
    enumerated_all: list
    prop_min: list = field(default_factory=list)  # (2/|I_w|)/|DF^n(p_w)| extremes for F
    prop_max: list = field(default_factory=list)

    @property
    def spread(self):
        return [hi / lo for lo, hi in zip(self.ratio_min, self.ratio_max)]

    def as_dict(self):
        d = asdict(self)
        d["spread"] = self.spread
        return d


def _matched_levels(F, G, depth, max_words, seed):
    if len(F.branches) != len(G.branches):
        raise StructuralMismatchError(f"{len(F.branches)} branches against {len(G.branches)}")
    lf = word_tree(F, depth, max_words=max_words, seed=seed)
    lg = word_tree(G, depth, words=[w for lev in lf for w in lev.words])
    # word_tree with explicit words keeps every prefix, so levels align word by word
    out = []
    for a, b in zip(lf, lg):
        idx = {w: k for k, w in enumerate(b.words)}
        try:
            k = np.array([idx[w] for w in a.words])
        except KeyError as exc:
            raise StructuralMismatchError(f"word {exc} realized by one map only") from None
        out.append((a, b, k))
    return out


def lipschitz_ratios(F, G, depth, max_words=2048, seed=0, fixed_point_words=128):
    """Extremes of |I_w(G)| / |I_w(F)| per depth over matched words."""
    rep = LipschitzReport([], [], [], [], [])
    for a, b, k in _matched_levels(F, G, depth, max_words, seed):
        r = b.length[k] / a.length
        rep.depths.append(a.depth)
        rep.ratio_min.append(float(r.min()))
        rep.ratio_max.append(float(r.max()))
        rep.words_per_depth.append(len(a.words))
        rep.enumerated_all.append(bool(a.enumerated_all))
        sel = np.argsort(-a.length, kind="stable")[:fixed_point_words]
        _, dfn = branch_fixed_points(F, [a.words[j] for j in sel])
        q = (2.0 / a.length[sel]) / np.abs(dfn)
        rep.prop_min.append(float(q.min()))
        rep.prop_max.append(float(q.max()))
    return rep


# ---------------------------------------------------------------- conjugacies

@dataclass(frozen=True)
class ConjugacySample:
    """Monotone anchors (x, H(x)) with piecewise-linear interpolation."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not (np.all(np.diff(self.x) > 0) and np.all(np.diff(self.y) > 0)):
            raise StructuralMismatchError("conjugacy anchors are not strictly increasing")

    def __call__(self, t):
        return np.interp(t, self.x, self.y)

    def __len__(self):
        return self.x.size


def _anchor_pairs(levels, tol=1e-13):
    xs, ys = [np.array([-1.0, 1.0])], [np.array([-1.0, 1.0])]
    for a, b, k in levels:
        xs += [a.lo, a.hi]
        ys += [b.lo[k], b.hi[k]]
    x, y = np.concatenate(xs), np.concatenate(ys)
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    # neighbouring cylinders share endpoints computed along different words; keep one per cluster
    keep = np.concatenate([[True], np.diff(x) > tol])
    x, y = x[keep], y[keep]
    mono = np.concatenate([[True], np.diff(y) > 0])
    if not np.all(mono):
        log.warning("dropping %d anchors that break monotonicity at round-off level", int(np.sum(~mono)))
    return x[mono], y[mono]


def build_conjugacy(F, G, depth, max_words=2048, seed=0):
    """Anchors: each cylinder endpoint of F up to ``depth`` paired with the same-word endpoint of G."""
    x, y = _anchor_pairs(_matched_levels(F, G, depth, max_words, seed))
    return ConjugacySample(x, y)


def equivariance_residual(F, G, H, tol_edge=1e-12):
    """max |H(F(x)) - G(H(x))| over anchors lying inside branch domains."""
    x = H.x
    k = F.locate(x)
    worst = 0.0
    for i in np.unique(k[k >= 0]):
        b = F.branches[int(i)]
        sel = (k == i) & (x > b.domain.lo + tol_edge) & (x < b.domain.hi - tol_edge)
        if not np.any(sel):
            continue
        lhs = H(b(x[sel]))
        rhs = G.branches[int(i)](H(x[sel]))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def conjugacy_at(F, G, x, depth=40, return_depth=False):
    """H(x) for the conjugacy that matches cylinders of equal words.

    x is pushed forward by F recording branch indices; the final point is
    transported to G's side (identically, or affinely across a truncation gap)
    and pulled back through G's inverse branches along the same indices.
    Orbits that stay in the branch domains for ``depth`` steps are exact up to
    round-off; a gap hit after k steps leaves an error of order |gap|^2 times
    the contraction of the k pull-backs.  With ``return_depth`` the number of
    steps taken before a gap is returned too.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel().copy()
    trail = np.full((depth, flat.size), -1, dtype=np.int64)
    alive = np.ones(flat.size, dtype=bool)
    reached = np.full(flat.size, depth)
    gaps = _gap_pairs(F, G)
    y = flat.copy()
    for n in range(depth):
        k = F.locate(flat)
        stop = alive & (k < 0)
        if np.any(stop):
            y[stop] = _across_gap(gaps, flat[stop])
            reached[stop] = n
        alive &= k >= 0
        if not np.any(alive):
            break
        trail[n, alive] = k[alive]
        for i in np.unique(k[alive]):
            sel = alive & (k == i)
            flat[sel] = F.branches[int(i)](flat[sel])
        flat = np.clip(flat, -1.0, 1.0)
    y[alive] = flat[alive]
    for n in range(depth - 1, -1, -1):
        col = trail[n]
        for i in np.unique(col[col >= 0]):
            sel = col == i
            y[sel] = G.branches[int(i)].inverse()(y[sel])
    if return_depth:
        return y.reshape(x.shape), reached.reshape(x.shape)
    return y.reshape(x.shape)


def _gap_pairs(F, G):
    ef = np.concatenate([[-1.0], np.ravel(np.column_stack([F._los, F._his])), [1.0]])
    eg = np.concatenate([[-1.0], np.ravel(np.column_stack([G._los, G._his])), [1.0]])
    return ef, eg


def _across_gap(gaps, x):
    ef, eg = gaps
    return np.interp(x, ef, eg)


# ---------------------------------------------------------------- normalization

class DistributionMap(Map1D):
    """x -> -1 + 2 mu([-1, x]).

    A monotone C^1 cubic (PCHIP) through the masses at the cell boundaries,
    taken in the cell-index coordinate of the grid so that graded cells keep
    their endpoint behaviour.
    """

    def __init__(self, rho: DensityGrid):
        cum = rho.cumulative()
        self.knots = rho.edges if rho.edges is not None else np.linspace(-1.0, 1.0, rho.N + 1)
        self.values = -1.0 + 2.0 * cum / cum[-1]
        self.values[0], self.values[-1] = -1.0, 1.0
        self.coord = GradingCoordinate(self.knots)
        self._s = np.arange(self.knots.size, dtype=float)
        self._p = PchipInterpolator(self._s, self.values, extrapolate=True)
        self._d = [self._p.derivative(k) for k in (1, 2, 3)]
        self.is_identity = bool(np.allclose(self.values, self.knots, rtol=0, atol=1e-14))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_identity:
            return x.copy()
        return self._p(self.coord(x))

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_identity:
            return (x.copy(), np.ones_like(x), np.zeros_like(x), np.zeros_like(x))
        js = self.coord.jet(x)
        return compose_jets((self._p(js[0]), *(d(js[0]) for d in self._d)), js)

    def inverse(self):
        return _DistributionInverse(self)


class _DistributionInverse(Map1D):
    def __init__(self, H):
        self.H = H

    def _solve_s(self, y):
        H = self.H
        N = H._s.size - 1
        k = np.clip(np.searchsorted(H.values, y, side="right") - 1, 0, N - 1)
        a, b = k.astype(float), k + 1.0
        ya, yb = H.values[k], H.values[k + 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(yb > ya, a + (y - ya) / (yb - ya), a)
        # safeguarded Newton inside the bracketing cell, where the cubic is monotone
        for _ in range(30):
            v, d = H._p(s), H._d[0](s)
            low = v < y
            a = np.where(low, np.maximum(a, s), a)
            b = np.where(low, b, np.minimum(b, s))
            with np.errstate(invalid="ignore", divide="ignore"):
                sn = s - (v - y) / d
            bad = ~np.isfinite(sn) | (sn < a) | (sn > b)
            sn = np.where(bad, 0.5 * (a + b), sn)
            done = np.all(np.abs(sn - s) <= 1e-11)
            s = sn
            if done:
                break
        return s

    def __call__(self, y):
        H = self.H
        y = np.asarray(y, dtype=float)
        if H.is_identity:
            return y.copy()
        return H.coord.inverse()(self._solve_s(y))

    def jet(self, y):
        x = self(y)
        return inverse_jet(x, self.H.jet(x))

    def inverse(self):
        return self.H


class ConjugatedBranch(Branch):
    """H ∘ F_i ∘ H^-1 on H(M_i)."""

    def __init__(self, branch, H):
        self.base, self.H = branch, H
        self._Hinv = H.inverse()
        self.domain = Interval(float(H(np.asarray(branch.domain.lo))), float(H(np.asarray(branch.domain.hi))))
        self.orientation = branch.orientation
        self._inv = _ConjugatedInverse(self)

    def jet(self, y):
        j = self._Hinv.jet(y)
        j = compose_jets(self.base.jet(j[0]), j)
        return compose_jets(self.H.jet(j[0]), j)

    def __call__(self, y):
        return self.H(self.base(self._Hinv(y)))

    def inverse(self):
        return self._inv


class _ConjugatedInverse(Map1D):
    def __init__(self, cb):
        self.cb = cb

    def __call__(self, z):
        cb = self.cb
        return cb.H(cb.base.inverse()(cb._Hinv(z)))

    def jet(self, z):
        x = self(z)
        return inverse_jet(x, self.cb.jet(x))


@dataclass
class Normalization:
    F0: MarkovMap
    H: DistributionMap
    input_residual: float
    uniform_residual: float

    @property
    def samples(self):
        return ConjugacySample(self.H.knots, self.H.values)


def normalize(F, rho, tol=1e-6, check_nodes=2048):
    """Conjugate F by the distribution function of rho so that Lebesgue measure is invariant.

    H(x) = -1 + 2 mu([-1, x]) and F0 = H ∘ F ∘ H^-1; with this direction
    F0 pushes the uniform density to itself exactly when rho is F-invariant.
    """
    res = float(np.max(np.abs(pf_apply(F, rho).values - rho.values)))
    if res > tol * max(1.0, float(np.max(rho.values))):
        raise NotInvariantError(f"density is not a fixed point (residual {res:.3e} > {tol:.1e})")
    H = DistributionMap(rho)
    F0 = MarkovMap([ConjugatedBranch(b, H) for b in F.branches], F.extension_margin,
                   None, F.smoothness, meta={**F.meta, "singular_endpoints": False, "normalized": True})
    u = DensityGrid.uniform(check_nodes)
    ures = float(np.max(np.abs(pf_apply(F0, u).values - u.values)))
    return Normalization(F0, H, res, ures)


def normalized_difference(F0, G0, samples=64):
    """sup |F0 - G0| on matched branch domains, plus the mismatch of the domains themselves."""
    if len(F0.branches) != len(G0.branches):
        raise StructuralMismatchError("normalized maps have different branch counts")
    worst_map, worst_dom = 0.0, 0.0
    u = np.linspace(-1.0, 1.0, samples)
    for bf, bg in zip(F0.branches, G0.branches):
        worst_dom = max(worst_dom, abs(bf.domain.lo - bg.domain.lo), abs(bf.domain.hi - bg.domain.hi))
        lo, hi = max(bf.domain.lo, bg.domain.lo), min(bf.domain.hi, bg.domain.hi)
        if hi <= lo:
            continue
        y = lo + (hi - lo) * (u + 1.0) / 2.0
        worst_map = max(worst_map, float(np.max(np.abs(bf(y) - bg(y)))))
    return {"sup_map": worst_map, "sup_domain": worst_dom, "sup": max(worst_map, worst_dom)}


# ---------------------------------------------------------------- pipeline

@dataclass
class RunConfig:
    grid_nodes: int = 2048
    max_period: int = 10
    max_induce_time: int = 25
    coverage_target: float = 0.99
    pf_tol: float = 1e-9
    verdict_tol: float = 1e-3
    multiplier_tol: float = 1e-6
    seed: int = 0
    window_center: float | None = None
    window_max_period: int = 4
    window_min_margin: float = 0.1
    depth: int = 8
    tree_depth: int = 6
    max_words: int = 2048
    threads: int = 1

    def __post_init__(self):
        for k in ("grid_nodes", "max_period", "max_induce_time", "depth", "max_words", "threads"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        for k in ("coverage_target", "pf_tol", "verdict_tol", "multiplier_tol"):
            v = getattr(self, k)
            if not 0 < v < 1:
                raise ValueError(f"{k} must lie in (0, 1)")


EXIT_POSITIVE, EXIT_NEGATIVE, EXIT_MULTIPLIERS, EXIT_INCOMPLETE = 0, 1, 2, 3


@dataclass
class VerdictReport:
    verdict: str
    exit_code: int
    stages: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None
    artifacts: dict = field(default_factory=dict, repr=False)

    def as_dict(self):
        return {"verdict": self.verdict, "exit_code": self.exit_code, "failed_stage": self.failed_stage,
                "error": self.error, "stages": self.stages}


def difference_quotients(h, x, scales):
    """First and second central difference quotients of h at x for each scale (rows)."""
    x = np.asarray(x, dtype=float)
    d1, d2 = [], []
    for s in scales:
        p, m, c = h(x + s), h(x - s), h(x)
        d1.append((p - m) / (2 * s))
        d2.append((p - 2 * c + m) / (s * s))
    return np.array(d1), np.array(d2)


def _stability(q, floor):
    spread = (q.max(axis=0) - q.min(axis=0)) / np.maximum(np.abs(q).max(axis=0), floor)
    return spread


def smoothness_diagnostic(h, anchors, scales=(1e-2, 5e-3, 2.5e-3), tol=0.05):
    d1, d2 = difference_quotients(h, anchors, scales)
    s1 = _stability(d1, 1e-12)
    s2 = _stability(d2, 1.0)
    return {
        "anchors": list(map(float, anchors)),
        "scales": list(scales),
        "first_quotients": d1.T.tolist(),
        "second_quotients": d2.T.tolist(),
        "first_spread": s1.tolist(),
        "second_spread": s2.tolist(),
        "c1_consistent": bool(np.all(s1 <= tol) and np.all(s2 <= tol)),
    }


class UnimodalConjugacy:
    """h on [-1, 1]: the window conjugacy, extended by pulling back along matched laps."""

    def __init__(self, f, g, ind_f, ind_g, depth=40, max_steps=200):
        self.f, self.g = f, g
        self.Uf, self.Ug = ind_f.window.U, ind_g.window.U
        self.F, self.G = ind_f.F, ind_g.F
        self.depth, self.max_steps = depth, max_steps

    def in_window(self, x):
        return self.Ug.from_unit(conjugacy_at(self.F, self.G, self.Uf.to_unit(x), self.depth))

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        out = np.full(x.shape, np.nan)
        syms = []
        cur = x.copy()
        todo = np.ones(x.shape, dtype=bool)
        inside = self.Uf.interior_contains(cur)
        steps = np.zeros(x.shape, dtype=int)
        for _ in range(self.max_steps):
            todo &= ~inside
            if not np.any(todo):
                break
            s = self.f.symbol(cur)
            syms.append(np.where(todo, s, -1))
            cur = np.where(todo, self.f(cur), cur)
            steps += todo
            inside = self.Uf.interior_contains(cur)
        ok = self.Uf.interior_contains(cur)
        y = np.where(ok, self.in_window(np.where(ok, cur, self.Uf.mid)), np.nan)
        for s in reversed(syms):
            act = s >= 0
            if np.any(act):
                y[act] = self.g.lap_inverse(y[act], s[act])
        out[ok] = y[ok]
        return out


def rigidity_test(f, g, config=None):
    """Numerical rigidity verdict for two maps; stage failures are labelled, never raised."""
    cfg = config or RunConfig()
    rep = VerdictReport("incomplete", EXIT_INCOMPLETE)
    art = rep.artifacts
    stage = "multipliers"
    try:
        try:
            mc = compare_multipliers(f, g, cfg.max_period, threads=cfg.threads)
        except NotEquivalentError as exc:
            rep.stages[stage] = {**exc.report.as_dict(), "equivalent": False}
            rep.verdict, rep.exit_code = "multipliers-differ", EXIT_MULTIPLIERS
            rep.failed_stage, rep.error = stage, str(exc)
            return rep
        rep.stages[stage] = {**mc.as_dict(), "equivalent": True}
        if mc.max_rel_diff > cfg.multiplier_tol:
            rep.verdict, rep.exit_code = "multipliers-differ", EXIT_MULTIPLIERS
            rep.failed_stage = stage
            rep.error = f"max relative multiplier difference {mc.max_rel_diff:.3e} > {cfg.multiplier_tol:.1e}"
            return rep

        stage = "windows"
        Wf = find_window(f, cfg.window_center, cfg.window_max_period, cfg.window_min_margin)
        Wg = match_window(g, Wf)
        rep.stages[stage] = {"f": Wf.as_dict(), "g": Wg.as_dict()}

        stage = "induce"
        gen_f = first_generation(f, Wf, cfg.max_induce_time, cfg.coverage_target)
        ind_f = build_induced(f, Wf, gen_f)
        words = [b.good.word for b in ind_f.F.branches]
        ind_g = build_induced(g, Wg, matched_goods(g, Wg, words))
        gen_g = first_generation(g, Wg, cfg.max_induce_time, cfg.coverage_target)
        rep.stages[stage] = {
            "f": ind_f.as_dict(), "g": ind_g.as_dict(),
            "independent_search_agrees": sorted(words) == sorted(x.word for x in gen_g.goods),
        }
        art.update(ind_f=ind_f, ind_g=ind_g)

        stage = "densities"
        df = invariant_density(ind_f.F, cfg.grid_nodes, tol=cfg.pf_tol)
        dg = invariant_density(ind_g.F, cfg.grid_nodes, tol=cfg.pf_tol)
        rep.stages[stage] = {
            k: {"residual": d.residual, "iterations": d.iterations, "converged": d.converged,
                "leak": d.leak, "method": d.method}
            for k, d in (("f", df), ("g", dg))
        }
        art.update(rho_f=df.density, rho_g=dg.density)

        stage = "normalize"
        tol = max(10 * cfg.pf_tol, 1e-8)
        nf = normalize(ind_f.F, df.density, tol=tol, check_nodes=cfg.grid_nodes)
        ng = normalize(ind_g.F, dg.density, tol=tol, check_nodes=cfg.grid_nodes)
        rep.stages[stage] = {
            "f_uniform_residual": nf.uniform_residual, "g_uniform_residual": ng.uniform_residual,
        }
        art.update(norm_f=nf, norm_g=ng)

        stage = "compare"
        diff = normalized_difference(nf.F0, ng.F0)
        td = min(cfg.tree_depth, 6)
        lv = _matched_levels(nf.F0, ng.F0, td, min(cfg.max_words, 256), cfg.seed)
        tree = max(max(float(np.max(np.abs(a.lo - b.lo[k]))), float(np.max(np.abs(a.hi - b.hi[k]))))
                   for a, b, k in lv)
        positive = diff["sup"] <= cfg.verdict_tol
        rep.stages[stage] = {**diff, "cylinder_tree_depth": td, "cylinder_tree_sup": tree,
                             "verdict_tol": cfg.verdict_tol, "equal": positive}

        stage = "diagnostics"
        lip = lipschitz_ratios(ind_f.F, ind_g.F, cfg.depth, cfg.max_words, cfg.seed)
        H = build_conjugacy(ind_f.F, ind_g.F, cfg.depth, cfg.max_words, cfg.seed)
        eq = equivariance_residual(ind_f.F, ind_g.F, H)
        hh = UnimodalConjugacy(f, g, ind_f, ind_g)
        anchors = Wf.U.from_unit(np.linspace(-0.8, 0.8, 9))
        c1 = f.critical_value
        c2 = float(f(np.asarray(c1)))
        endpoint = {
            "f(c)": smoothness_diagnostic(hh, np.array([c1 - 0.05])),
            "f2(c)": smoothness_diagnostic(hh, np.array([c2 + 0.05])),
        }
        rep.stages[stage] = {
            "lipschitz": lip.as_dict(),
            "anchors": len(H),
            "equivariance_residual": eq,
            "window_smoothness": smoothness_diagnostic(hh, anchors),
            "endpoint_pullback": endpoint,
        }
        art.update(H=H, h=hh)
    except MultRigidError as exc:
        rep.failed_stage, rep.error = stage, str(StageError(stage, exc))
        rep.verdict, rep.exit_code = "incomplete", EXIT_INCOMPLETE
        return rep
    rep.verdict = "smoothly-conjugate" if positive else "not-conjugate"
    rep.exit_code = EXIT_POSITIVE if positive else EXIT_NEGATIVE
    return rep
