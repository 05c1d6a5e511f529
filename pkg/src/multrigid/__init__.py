"""Numerical toolkit for multiplier rigidity of S-unimodal maps."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import Affine, Bump, Chain, Identity, Interval, compose, nonlinearity, rescale, schwarzian
from .unimodal import UnimodalMap, attractor_interval, conjugate_map, map_from_spec, membership_check
from .periodic import compare_multipliers, find_periodic, orbit_table, periodic_point
from .markov import (
    MarkovMap,
    affine_full_branch_map,
    cylinder,
    doubling_map,
    invariant_density,
    unimodal_two_branch,
    validate,
    word_tree,
)
from .inducing import build_induced, find_window, first_generation, induce, induce_matched
from .rigidity import RunConfig, build_conjugacy, lipschitz_ratios, normalize, rigidity_test
