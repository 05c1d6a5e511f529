"""Full-branch Markov maps: validation, cylinders, transfer operator, invariant densities.

Words are tuples of branch indices in pull-back order: the cylinder of
``w + (i,)`` is ``F_i^-1(I_w)``, and ``F`` maps ``I_{w+(i,)}`` onto ``I_w``.
The forward itinerary of a cylinder is therefore the reversed word.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnrealizedWordError
from .geometry import (
    UNIT,
    Affine,
    Chain,
    Interval,
    Map1D,
    NumericInverse,
    Rescaled,
    compose_jets,
    identity_jet,
    inverse_jet,
    map_from_record,
    schwarzian,
)

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------- branches

class Branch(Map1D):
    """One branch F_i : domain -> [-1, 1], monotone and onto."""

    domain: Interval
    orientation: int
    extension: Interval | None = None
    extension_image: Interval | None = None

    def inverse(self):
        raise NotImplementedError

    def inverse_jet(self, y):
        x = self.inverse()(y)
        return inverse_jet(x, self.jet(x))

    def inverse_with_deriv(self, y):
        """Preimage of y in the domain together with the derivative of the inverse branch there."""
        x = self.inverse()(y)
        return x, 1.0 / self.deriv(x)

    def record(self):
        rec = {"domain": list(self.domain), "orientation": self.orientation}
        if self.extension is not None:
            rec["extension"] = list(self.extension)
            rec["extension_image"] = list(self.extension_image)
        return rec


class MapBranch(Branch):
    """Branch given by a closed-form map; its inverse is closed-form when supplied, else numeric."""

    def __init__(self, forward, domain, inverse=None, extension=None, extension_image=None):
        self.forward = forward
        self.domain = domain
        a, b = float(forward(np.asarray(domain.lo))), float(forward(np.asarray(domain.hi)))
        self.orientation = 1 if b > a else -1
        self.extension = extension
        self.extension_image = extension_image
        if inverse is None:
            lo, hi = (extension or domain).as_tuple()
            inverse = NumericInverse(forward, lo, hi)
        self._inverse = inverse

    def jet(self, x):
        return self.forward.jet(x)

    def __call__(self, x):
        return self.forward(x)

    def inverse(self):
        return self._inverse

    def record(self):
        rec = super().record()
        try:
            rec["map"] = self.forward.to_record()
        except Exception:
            pass
        return rec


def affine_branch(domain, orientation=1):
    fwd = Affine.between(domain, UNIT, flip=orientation < 0)
    return MapBranch(fwd, domain, inverse=fwd.inverse())


class LapInverse(Map1D):
    """Inverse of one monotone lap of a unimodal map."""

    def __init__(self, f, side):
        self.f, self.side = f, side

    def __call__(self, y):
        return self.f.lap_inverse(y, self.side)

    def jet(self, y):
        x = self(y)
        return inverse_jet(x, self.f.jet(x))


# ---------------------------------------------------------------- Markov maps

class MarkovMap:
    """A finite truncation of a full-branch Markov map of [-1, 1]."""

    def __init__(self, branches, extension_margin=0.0, regularity_bound=None, smoothness=3, meta=None):
        self.branches = tuple(sorted(branches, key=lambda b: b.domain.lo))
        if not self.branches:
            raise ValueError("a Markov map needs at least one branch")
        self.extension_margin = float(extension_margin)
        if regularity_bound is not None and not regularity_bound > 0:
            raise ValueError("regularity bound must be positive")
        self.regularity_bound = regularity_bound
        self.smoothness = int(smoothness)
        self.meta = dict(meta or {})
        self._los = np.array([b.domain.lo for b in self.branches])
        self._his = np.array([b.domain.hi for b in self.branches])
        self._pf_cache = {}

    def __len__(self):
        return len(self.branches)

    @property
    def coverage(self):
        return float(np.sum(self._his - self._los) / 2.0)

    def locate(self, x):
        """Index of the branch whose domain contains x, or -1 in a gap."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self._los, x, side="right") - 1
        kc = np.clip(k, 0, len(self.branches) - 1)
        inside = (k >= 0) & (x <= self._his[kc])
        return np.where(inside, kc, -1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.locate(x)
        out = np.full(x.shape, np.nan)
        for i in np.unique(k[k >= 0]):
            sel = k == i
            out[sel] = self.branches[i](x[sel])
        return out

    def record(self):
        return {
            "extension_margin": self.extension_margin,
            "regularity_bound": self.regularity_bound,
            "smoothness": self.smoothness,
            "coverage": self.coverage,
            "branches": [b.record() for b in self.branches],
            **({"meta": self.meta} if self.meta else {}),
        }


def markov_from_record(rec):
    """Rebuild a Markov map whose branches carry closed-form generator chains."""
    branches = []
    for i, b in enumerate(rec["branches"]):
        if "map" not in b:
            raise ValueError(f"branch {i} carries no closed-form map record")
        fwd = map_from_record(b["map"])
        ext = Interval(*b["extension"]) if "extension" in b else None
        img = Interval(*b["extension_image"]) if "extension_image" in b else None
        branches.append(MapBranch(fwd, Interval(*b["domain"]), extension=ext, extension_image=img))
    return MarkovMap(branches, rec.get("extension_margin", 0.0), rec.get("regularity_bound"), rec.get("smoothness", 3))


def doubling_map():
    return MarkovMap([affine_branch(Interval(-1.0, 0.0)), affine_branch(Interval(0.0, 1.0))])


def affine_full_branch_map(breaks=(0.0,), orientations=None):
    """Piecewise-affine full-branch map with the given interior break points."""
    edges = [-1.0, *map(float, breaks), 1.0]
    orientations = orientations or [1] * (len(edges) - 1)
    return MarkovMap([affine_branch(Interval(a, b), s) for a, b, s in zip(edges[:-1], edges[1:], orientations)])


def unimodal_two_branch(f):
    """The two laps of a full unimodal map (f(c) = 1) as a two-branch Markov map without Koebe space."""
    if abs(f.critical_value - 1.0) > 1e-12:
        raise ValueError("two-branch presentation requires a full map with f(c) = 1")
    c = f.critical_point
    return MarkovMap(
        [MapBranch(f, Interval(-1.0, c), inverse=LapInverse(f, 0)),
         MapBranch(f, Interval(c, 1.0), inverse=LapInverse(f, 1))],
        meta={"presentation": "two-branch", "singular_endpoints": True},
    )


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    valid: bool
    onto_residual: float
    monotone: bool
    disjoint: bool
    schwarzian_max: float | None
    norms: list
    K_measured: float
    K_bound: float | None
    coverage: float
    problems: list = field(default_factory=list)

    def as_dict(self):
        return {
            "valid": self.valid,
            "onto_residual": self.onto_residual,
            "monotone": self.monotone,
            "disjoint": self.disjoint,
            "schwarzian_max": self.schwarzian_max,
            "K_measured": self.K_measured,
            "K_bound": self.K_bound,
            "coverage": self.coverage,
            "problems": self.problems,
        }


def inverse_branch_norm(branch, r=2, samples=257):
    """Sampled |[(F|M_i)^-1]|_r; the rescaling on [-1, 1] leaves the nonlinearity unchanged."""
    y = np.linspace(-1.0, 1.0, samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        # a branch with a critical endpoint has an unbounded inverse nonlinearity: report inf
        _, g1, g2, g3 = branch.inverse_jet(y)
        eta = g2 / g1
        total = float(np.max(np.abs(eta)))
        if r >= 3:
            total += float(np.max(np.abs((g3 * g1 - g2 * g2) / (g1 * g1))))
    return total if np.isfinite(total) else float("inf")


def validate(F, r=2, samples=257, onto_tol=1e-9):
    """Check the Markov conditions on a truncated branch system and report measured constants.

    The onto-ness residual at an endpoint is |F_i(e) - target| / max(1, |DF_i(e)|),
    a first-order backward error that stays meaningful for strongly expanding branches.
    """
    problems = []
    onto = 0.0
    monotone = True
    smax = None
    norms = []
    u = np.linspace(-1.0, 1.0, samples + 2)[1:-1]
    for i, b in enumerate(F.branches):
        ends = np.array([b.domain.lo, b.domain.hi])
        v, d1 = b.jet(ends)[:2]
        target = np.array([-1.0, 1.0]) * b.orientation
        res = float(np.max(np.abs(v - target) / np.maximum(1.0, np.abs(d1))))
        onto = max(onto, res)
        if res > onto_tol:
            problems.append(f"branch {i}: not onto [-1, 1] (residual {res:.3e})")
        d = b.jet(b.domain.from_unit(u))[1] * b.orientation
        if not np.all(d > 0):
            monotone = False
            problems.append(f"branch {i}: not monotone with orientation {b.orientation}")
        if b.extension is not None:
            xs = b.extension.from_unit(u)
            S = schwarzian(b, xs)
            smax = float(np.max(S)) if smax is None else max(smax, float(np.max(S)))
        norms.append(inverse_branch_norm(b, r))
    disjoint = bool(np.all(F._los[1:] >= F._his[:-1] - 1e-12))
    if not disjoint:
        problems.append("branch domains overlap")
    if smax is not None and smax > 1e-9:
        problems.append(f"positive Schwarzian on an extension (max {smax:.3e})")
    K = max(norms) if norms else 0.0
    if F.regularity_bound is not None and K > F.regularity_bound:
        problems.append(f"measured norm {K:.4g} exceeds the bound {F.regularity_bound:.4g}")
    valid = onto <= onto_tol and monotone and disjoint and (smax is None or smax <= 1e-9)
    if F.regularity_bound is not None:
        valid = valid and K <= F.regularity_bound
    return ValidationReport(valid, onto, monotone, disjoint, smax, norms, K, F.regularity_bound, F.coverage, problems)


# ---------------------------------------------------------------- cylinders

def _check_word(F, w):
    w = tuple(int(i) for i in w)
    if any(i < 0 or i >= len(F.branches) for i in w):
        raise UnrealizedWordError(f"word {w} uses an index outside 0..{len(F.branches) - 1}")
    return w


class PullbackMap(Map1D):
    """G_w = F_{w_n}^-1 ∘ ... ∘ F_{w_1}^-1 : [-1, 1] -> I_w."""

    def __init__(self, F, word):
        self.F, self.word = F, _check_word(F, word)

    def jet(self, x):
        j = identity_jet(x)
        for i in self.word:
            j = compose_jets(self.F.branches[i].inverse_jet(j[0]), j)
        return j

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        for i in self.word:
            x = self.F.branches[i].inverse()(x)
        return x

    def inverse(self):
        return Chain([self.F.branches[i] for i in reversed(self.word)])


@dataclass(frozen=True)
class BranchComposition:
    word: tuple
    interval: Interval
    length: float
    orientation: int
    psi: Map1D
    pullback: PullbackMap

    def step(self, F, i):
        """phi_{w,n}: the rescaled F_i^-1 on I_w, so that psi_{w+(i,)} = phi ∘ psi_w."""
        child = cylinder(F, self.word + (int(i),))
        return Chain([
            Affine(float(self.orientation)),
            Affine.between(UNIT, self.interval),
            F.branches[int(i)].inverse(),
            Affine.between(child.interval, UNIT, flip=child.orientation < 0),
        ])


def cylinder(F, w):
    """The cylinder I_w and the rescaled inverse psi_w of the branch of F^n on it."""
    w = _check_word(F, w)
    G = PullbackMap(F, w)
    ends = G(np.array([-1.0, 1.0]))
    if not np.all(np.isfinite(ends)) or ends[0] == ends[1]:
        raise UnrealizedWordError(f"word {w} has an empty cylinder")
    d = G.jet(GL_NODES)[1]
    length = float(np.dot(GL_WEIGHTS, np.abs(d)))
    orientation = 1 if ends[1] > ends[0] else -1
    I = Interval.hull(*ends, reversed=orientation < 0)
    return BranchComposition(w, I, length, orientation, Rescaled(G, UNIT), G)


@dataclass
class CauchyDecay:
    word: tuple
    differences: np.ndarray
    phi_norms: np.ndarray
    ratios: np.ndarray
    delta: float
    C: float


def _geometric_fit(seq):
    seq = np.asarray(seq, dtype=float)
    n = np.arange(seq.size)
    ok = seq > 1e-300
    if ok.sum() < 2:
        return 0.0, float(seq.max(initial=0.0))
    slope, icpt = np.polyfit(n[ok], np.log(seq[ok]), 1)
    return float(np.exp(slope)), float(np.exp(icpt))


def cauchy_decay(F, w, depth=None, samples=257):
    """|psi_{w,n+1} - psi_{w,n}|_2 for n < depth together with |phi_{w,n}|_2.

    The difference is sup|eta_{phi}(psi_n) D psi_n|, which reduces to
    sup|eta_{F_i^-1}(G_w(x)) DG_w(x)|; the affine rescalings cancel.
    """
    w = _check_word(F, w)
    depth = len(w) if depth is None else int(depth)
    if depth > len(w):
        raise ValueError("depth exceeds the word length")
    x = np.concatenate([np.linspace(-1.0, 1.0, samples), GL_NODES])
    gl = slice(samples, None)
    pos, d1 = x.copy(), np.ones_like(x)
    diffs, norms = [], []
    for n in range(depth):
        b = F.branches[w[n]]
        _, g1, g2, _ = b.inverse_jet(pos)
        eta = g2 / g1
        length = float(np.dot(GL_WEIGHTS, np.abs(d1[gl])))
        diffs.append(float(np.max(np.abs(eta * d1))))
        norms.append(0.5 * length * float(np.max(np.abs(eta))))
        pos, d1 = b.inverse()(pos), g1 * d1
    diffs, norms = np.array(diffs), np.array(norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norms > 0, diffs / norms, 0.0)
    delta, C = _geometric_fit(diffs)
    return CauchyDecay(w, diffs, norms, ratios, delta, C)


# ---------------------------------------------------------------- word trees

@dataclass
class CylinderLevel:
    depth: int
    words: list
    lo: np.ndarray
    hi: np.ndarray
    length: np.ndarray
    distortion: np.ndarray
    enumerated_all: bool

    def __len__(self):
        return len(self.words)


_TREE_X = np.concatenate([GL_NODES, np.linspace(-1.0, 1.0, 33)])
_TREE_GL = slice(0, GL_NODES.size)
_TREE_ENDS = [GL_NODES.size, GL_NODES.size + 32]


def _extend(F, pos, d1, i):
    x, g1 = F.branches[i].inverse_with_deriv(pos)
    return x, g1 * d1


def word_tree(F, depth, max_words=2048, words=None, seed=0):
    """Cylinder statistics level by level up to ``depth``.

    Level n+1 extends every retained word of level n by every branch.  When a
    level exceeds ``max_words``, the larger half of the budget keeps the longest
    cylinders and the rest is a seeded random sample of the remainder.  With
    ``words`` given, exactly those words (and their prefixes) are evaluated.
    """
    rng = np.random.default_rng(seed)
    nb = len(F.branches)
    levels = []
    cur_words = [()]
    pos = _TREE_X[None, :].copy()
    d1 = np.ones_like(pos)
    wanted = None
    if words is not None:
        wanted = [set(tuple(w[:k]) for w in words if len(w) >= k) for k in range(depth + 1)]
    for n in range(1, depth + 1):
        new_words, P, D = [], [], []
        for i in range(nb):
            x, d = _extend(F, pos, d1, i)
            new_words.extend(w + (i,) for w in cur_words)
            P.append(x)
            D.append(d)
        P, D = np.concatenate(P), np.concatenate(D)
        full = True
        if wanted is not None:
            keep = np.array([w in wanted[n] for w in new_words], dtype=bool)
            idx = np.flatnonzero(keep)
            if idx.size < len(wanted[n]):
                raise UnrealizedWordError("requested words are not all realized")
        else:
            idx = np.arange(len(new_words))
            if len(new_words) > max_words:
                full = False
                lengths = np.abs(D[:, _TREE_GL]) @ GL_WEIGHTS
                order = np.argsort(-lengths, kind="stable")
                top = order[: max_words // 2]
                rest = rng.choice(order[max_words // 2:], size=max_words - top.size, replace=False)
                idx = np.sort(np.concatenate([top, rest]))
        cur_words = [new_words[k] for k in idx]
        pos, d1 = P[idx], D[idx]
        ad = np.abs(d1)
        ends = pos[:, _TREE_ENDS]
        levels.append(CylinderLevel(
            n, cur_words, ends.min(axis=1), ends.max(axis=1),
            ad[:, _TREE_GL] @ GL_WEIGHTS, ad.max(axis=1) / ad.min(axis=1),
            full and (not levels or levels[-1].enumerated_all),
        ))
    return levels


# ---------------------------------------------------------------- densities

def cell_edges(N, grading="uniform"):
    """Cell boundaries on [-1, 1]; "chebyshev" grading clusters cells at both ends."""
    if grading == "uniform":
        return np.linspace(-1.0, 1.0, N + 1)
    if grading == "chebyshev":
        e = -np.cos(np.pi * np.arange(N + 1) / N)
        e[0], e[-1] = -1.0, 1.0
        return e
    raise ValueError(f"unknown grading {grading!r}")


@dataclass(frozen=True)
class DensityGrid:
    """Density on [-1, 1] stored as cell averages; nodes are the cell centres.

    Cells are uniform unless explicit ``edges`` are given.
    """

    values: np.ndarray
    mass_defect: float = 0.0
    edges: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        e = cell_edges(v.size) if self.edges is None else np.array(self.edges, dtype=float)
        if e.size != v.size + 1 or not np.all(np.diff(e) > 0):
            raise ValueError("edges must be increasing with one more entry than values")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def uniform(cls, N=2048, edges=None):
        return cls(np.full(N, 0.5), edges=edges)

    @classmethod
    def from_function(cls, fn, N=2048, edges=None):
        e = cell_edges(N) if edges is None else edges
        return cls(fn(0.5 * (e[1:] + e[:-1])), edges=e)

    @property
    def N(self):
        return self.values.size

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def h(self):
        return 2.0 / self.N

    @property
    def nodes(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def is_uniform(self):
        return np.allclose(self.widths, self.h, rtol=1e-12, atol=0)

    def integral(self):
        return float(np.dot(self.widths, self.values))

    def normalized(self):
        return DensityGrid(self.values / self.integral(), self.mass_defect, self.edges)

    def __call__(self, x):
        """Piecewise-linear interpolation through the node values."""
        return np.interp(x, self.nodes, self.values)

    def cumulative(self):
        """Mass to the left of each cell boundary."""
        return np.concatenate([[0.0], np.cumsum(self.values * self.widths)])

    def cdf(self, x):
        return np.interp(x, self.edges, self.cumulative())

    def mass(self, lo, hi, length=None):
        """Integral over [lo, hi]; ``length`` (if known more accurately than hi - lo) is used
        when both ends fall into the same cell."""
        lo = np.clip(np.asarray(lo, dtype=float), -1.0, 1.0)
        hi = np.clip(np.asarray(hi, dtype=float), -1.0, 1.0)
        if length is None:
            length = hi - lo
        e, v, N = self.edges, self.values, self.N
        kl = np.clip(np.searchsorted(e, lo, side="right") - 1, 0, N - 1)
        kh = np.clip(np.searchsorted(e, hi, side="right") - 1, 0, N - 1)
        S = self.cumulative()
        split = (e[kl + 1] - lo) * v[kl] + (S[kh] - S[kl + 1]) + (hi - e[kh]) * v[kh]
        return np.where(kl == kh, v[kl] * np.asarray(length), split)

    def resample(self, edges):
        """Cell averages on other cells, from the piecewise-linear distribution function."""
        edges = np.asarray(edges, dtype=float)
        return DensityGrid(np.diff(self.cdf(edges)) / np.diff(edges), self.mass_defect, edges)


class GradingCoordinate(Map1D):
    """The fractional cell index s(x) for a set of cell edges (s(edges[k]) = k).

    Exact for uniform and Chebyshev gradings; piecewise linear for arbitrary edges.
    """

    def __init__(self, edges):
        self.edges = np.asarray(edges, dtype=float)
        self.N = self.edges.size - 1
        self.kind = "piecewise"
        for grading in ("uniform", "chebyshev"):
            if np.array_equal(self.edges, cell_edges(self.N, grading)):
                self.kind = grading

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        N, e = self.N, self.edges
        if self.kind == "uniform":
            return (x + 1.0) * N / 2.0
        if self.kind == "chebyshev":
            return np.arccos(np.clip(-x, -1.0, 1.0)) * N / np.pi
        m = np.clip(np.searchsorted(e, x, side="right") - 1, 0, N - 1)
        return m + (x - e[m]) / (e[m + 1] - e[m])

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        N = self.N
        if self.kind == "uniform":
            c = np.full_like(x, N / 2.0)
            return (self(x), c, np.zeros_like(x), np.zeros_like(x))
        if self.kind == "chebyshev":
            k = N / np.pi
            with np.errstate(divide="ignore", invalid="ignore"):
                u = 1.0 - x * x
                d1 = k / np.sqrt(u)
                return (self(x), d1, k * x / u ** 1.5, k * (1.0 + 2.0 * x * x) / u ** 2.5)
        e = self.edges
        m = np.clip(np.searchsorted(e, x, side="right") - 1, 0, N - 1)
        z = np.zeros_like(x)
        return (self(x), 1.0 / (e[m + 1] - e[m]), z, z)

    def inverse(self):
        return _GradingInverse(self)


class _GradingInverse(Map1D):
    def __init__(self, g):
        self.g = g

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        g = self.g
        if g.kind == "uniform":
            return 2.0 * s / g.N - 1.0
        if g.kind == "chebyshev":
            return -np.cos(np.pi * s / g.N)
        m = np.clip(np.floor(s).astype(np.int64), 0, g.N - 1)
        return g.edges[m] + (s - m) * (g.edges[m + 1] - g.edges[m])

    def jet(self, s):
        x = self(s)
        return inverse_jet(x, self.g.jet(x))

    def inverse(self):
        return self.g


def _cdf_stencil(edges, q):
    """Cubic Lagrange weights, in the cell-index coordinate, reproducing the distribution function at q."""
    N = edges.size - 1
    s = GradingCoordinate(edges)(q)
    m = np.clip(np.floor(s).astype(np.int64), 0, N - 1)
    if N < 3:  # too few boundaries for a cubic; fall back to linear
        return np.stack([m, m + 1], axis=1), np.stack([m + 1 - s, s - m], axis=1)
    base = np.clip(m - 1, 0, N - 3)
    t = s - base
    L = np.stack([
        -(t - 1) * (t - 2) * (t - 3) / 6.0,
        t * (t - 2) * (t - 3) / 2.0,
        -t * (t - 1) * (t - 3) / 2.0,
        t * (t - 1) * (t - 2) / 6.0,
    ], axis=1)
    return base[:, None] + np.arange(4)[None, :], L


def _pf_matrix(F, edges):
    """Transfer matrix on cell averages.

    The mass landing in cell j is the difference of the distribution function
    at branch preimages of the cell boundaries.  The distribution function is
    interpolated by cubics in the cell-index coordinate, so the scheme is exact
    whenever it is a cubic in that coordinate (e.g. the arcsine law on
    Chebyshev-graded cells).
    """
    N = edges.size - 1
    w = np.diff(edges)
    rows, cols, wts = [], [], []
    j = np.arange(N)
    for br in F.branches:
        q = np.clip(br.inverse()(edges), -1.0, 1.0)
        idx, L = _cdf_stencil(edges, q)
        for sign, sl in ((br.orientation, slice(1, None)), (-br.orientation, slice(None, -1))):
            k = idx[sl]
            rows.append(np.repeat(j, k.shape[1]))
            cols.append(k.ravel())
            wts.append(-sign * L[sl].ravel())
    rows, cols, wts = np.concatenate(rows), np.concatenate(cols), np.concatenate(wts)
    # weights sit on distribution-function nodes; a running sum turns them into cell-mass weights
    D = np.bincount(rows * (N + 1) + cols, weights=wts, minlength=N * (N + 1)).reshape(N, N + 1)
    P = np.cumsum(D, axis=1)[:, :N]
    P *= w[None, :]
    P /= w[:, None]
    return P


def pf_matrix(F, edges):
    key = (edges.size, float(edges[1] - edges[0]), float(edges[edges.size // 2]))
    if key not in F._pf_cache:
        F._pf_cache[key] = _pf_matrix(F, edges)
    return F._pf_cache[key]


def pf_apply(F, rho):
    """Push a density forward; the result is renormalized and carries the mass lost to gaps."""
    out = np.maximum(pf_matrix(F, rho.edges) @ rho.values, 0.0)
    mass = float(np.dot(rho.widths, out))
    return DensityGrid(out / mass, 1.0 - mass / rho.integral(), rho.edges)


def default_grading(F):
    return "chebyshev" if F.meta.get("singular_endpoints") else "uniform"


@dataclass
class InvariantDensity:
    density: DensityGrid
    residual: float
    iterations: int
    converged: bool
    leak: float
    method: str

    @property
    def values(self):
        return self.density.values


def invariant_density(F, N=2048, max_iters=200, tol=1e-9, grading=None):
    """Fixed point of the transfer operator by plain iteration, with Cesàro averaging as fallback.

    ``grading`` defaults to uniform cells, or Chebyshev-graded cells for
    presentations flagged with inverse-square-root singularities at the ends.
    """
    edges = cell_edges(N, grading or default_grading(F))
    w = np.diff(edges)
    P = pf_matrix(F, edges)
    rho = np.full(N, 0.5)
    running = np.zeros(N)
    residual = np.inf
    it = 0

    def step(v):
        out = np.maximum(P @ v, 0.0)
        return out / np.dot(w, out)

    for it in range(1, max_iters + 1):
        new = step(rho)
        residual = float(np.max(np.abs(new - rho)))
        running += new
        rho = new
        if residual <= tol:
            break
    method = "iteration"
    if residual > tol:
        avg = running / it
        avg /= np.dot(w, avg)
        r_avg = float(np.max(np.abs(step(avg) - avg)))
        if r_avg < residual:
            rho, residual, method = avg, r_avg, "cesaro"
    leak = 1.0 - float(np.dot(w, P @ rho))
    return InvariantDensity(DensityGrid(rho, leak, edges), residual, it, residual <= tol, leak, method)


def cylinder_measure(F, rho, w):
    """nu(w) = mu(I_w) for the density rho."""
    try:
        C = cylinder(F, w)
    except UnrealizedWordError:
        return 0.0
    if not C.word:
        return float(rho.integral())
    return float(rho.mass(C.interval.lo, C.interval.hi, C.length))


@dataclass
class BranchDensity:
    density: DensityGrid
    words_used: int
    mass_at_full_depth: float


def density_via_branches(F, rho, depth, mass_floor=1e-5, max_words=400_000, coarse=257):
    """Invariant density from the branch formula sum_w |D psi_w(x)| nu(w), normalized to mass one.

    Words whose measure falls below ``mass_floor`` stop refining and contribute at
    their current depth.  The sum is formed on ``coarse`` uniform points and
    interpolated to the nodes of ``rho``.
    """
    xs = np.concatenate([np.linspace(-1.0, 1.0, coarse), GL_NODES])
    pt = slice(0, coarse)
    gl = slice(coarse, None)
    pos = xs[None, :].copy()
    d1 = np.ones_like(pos)
    total = np.zeros(coarse)
    words = 0
    full_mass = 0.0
    for n in range(1, depth + 1):
        P, D = [], []
        for i in range(len(F.branches)):
            x, d = _extend(F, pos, d1, i)
            P.append(x)
            D.append(d)
        P, D = np.concatenate(P), np.abs(np.concatenate(D))
        L = D[:, gl] @ GL_WEIGHTS
        a, b = P[:, 0], P[:, coarse - 1]
        nu = rho.mass(np.minimum(a, b), np.maximum(a, b), L)
        words += nu.size
        if words > max_words:
            raise ValueError(f"depth {depth} exceeds the enumeration budget of {max_words} words")
        leaf = (nu < mass_floor) if n < depth else np.ones(nu.size, dtype=bool)
        total += (nu[leaf] * 2.0 / L[leaf]) @ D[leaf][:, pt]
        if n == depth:
            full_mass = float(nu.sum())
        pos, d1 = P[~leaf], D[~leaf]
        if pos.shape[0] == 0:
            break
    values = np.interp(rho.nodes, xs[pt], total)
    dens = DensityGrid(values).normalized()
    return BranchDensity(dens, words, full_mass)
