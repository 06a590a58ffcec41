"""Convex desk-scale instances shared by the oracle and acceptance tests."""

import numpy as np

from gexp.applications import solve_fundraising, solve_noncash, solve_partial_hedge
from gexp.generators import (exponential_utility, linear_decreasing, linear_utility, make_affine_quadratic,
                             make_entropic, neg_utility_exp)
from gexp.pathspace import build_tree


def convex_instances(n_steps=5):
    """(name, kind, thunk) triples; each thunk returns a SolveReport whose
    ``diagnostics["problem"]`` is the problem actually solved."""
    tree = build_tree(n_steps, 1.0)
    w = tree.w_terminal
    ind = (w > 0).astype(float)
    call = np.clip(w, 0.0, 1.0)
    return [
        ("hedge_indicator", "hedge", lambda: solve_partial_hedge(tree, ind, 0.2, make_entropic(1.0), 0.0)),
        ("hedge_drift", "hedge", lambda: solve_partial_hedge(tree, ind, 0.3, make_entropic(0.5), 0.3)),
        ("hedge_call", "hedge", lambda: solve_partial_hedge(tree, call, 0.15, make_entropic(1.0), -0.2)),
        ("hedge_affine_f", "hedge",
         lambda: solve_partial_hedge(tree, call, 0.2, make_affine_quadratic(0.0, 0.7), 0.2)),
        ("fund_exp", "fund",
         lambda: solve_fundraising(tree, 1.0, 0.4, make_entropic(1.0), exponential_utility(1.0), 0.2)),
        ("fund_linear", "fund",
         lambda: solve_fundraising(tree, 1.0, 0.6, make_entropic(1.0), linear_utility(), 0.3)),
        ("fund_cap2", "fund",
         lambda: solve_fundraising(tree, 2.0, 0.5, make_entropic(0.5), exponential_utility(0.5), -0.2)),
        ("noncash_linear", "noncash",
         lambda: solve_noncash(tree, 0.3, 0.5, -0.2, 0.4, linear_decreasing(), 0.4, 0.0, 1.0)),
        ("noncash_exp", "noncash",
         lambda: solve_noncash(tree, -0.5, 1.0, 0.2, 0.3, neg_utility_exp(1.0), 0.3, 0.0, 1.0)),
        ("noncash_bounds", "noncash",
         lambda: solve_noncash(tree, 0.1, 0.2, 0.4, 0.8, neg_utility_exp(0.5), 0.2, -0.5, 0.5 + 0.5 * ind)),
    ]


def solved(rep, kind):
    """``(problem, xi)`` in the variable of the solved problem (fundraising is stored flipped)."""
    problem = rep.diagnostics["problem"]
    xi = -rep.xi_star if kind == "fund" else rep.xi_star
    return problem, xi
