"""Invariants checked over randomly drawn trees, drivers and terminals."""

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from gexp.adjoint import (duality_gap, frozen_coefficients, linear_solve, positivity_margin, solve_adjoint, solve_system,
                          solve_variational)
from gexp.applications import flip_problem, fundraising_problem
from gexp.bsde import conditional_g_expectation, g_expectation, solve_bsde
from gexp.generators import (exponential_utility, make_affine_quadratic, make_entropic, make_linear_drift,
                             neg_utility_exp)
from gexp.pathspace import build_tree

depths = st.integers(2, 7)
coef = st.floats(-1.0, 1.0)
seeds = st.integers(0, 2**32 - 1)


@st.composite
def zero_a_generator(draw):
    kind = draw(st.sampled_from(["entropic", "linear", "quadratic"]))
    if kind == "entropic":
        return make_entropic(draw(st.floats(0.05, 2.0)))
    if kind == "linear":
        return make_linear_drift(draw(coef))
    return make_affine_quadratic(0.0, draw(st.floats(0.0, 1.5)))


def terminal(tree, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    amp, om, ph = rng.uniform(0.1, 1.0), rng.uniform(0.3, 2.0), rng.uniform(0, 2 * np.pi)
    return scale * amp * np.sin(om * tree.w_terminal + ph)


@given(depths, zero_a_generator(), seeds, st.floats(0.0, 0.5))
def test_comparison(n, gen, seed, shift):
    tree = build_tree(n, 1.0)
    xi = terminal(tree, seed)
    bump = np.random.default_rng(seed + 1).uniform(0, shift, tree.n_leaves)
    lo, hi = solve_bsde(tree, gen, xi), solve_bsde(tree, gen, xi + bump)
    # the discrete scheme is monotone only while both branch weights 1 +- B sqrt(dt) stay nonnegative
    assume(all(positivity_margin(tree, *frozen_coefficients(s))[0] <= 1.0 for s in (lo, hi)))
    assert np.all(hi.y.values >= lo.y.values - 1e-12)


@given(depths, zero_a_generator(), seeds, st.floats(-2.0, 2.0))
def test_cash_additivity(n, gen, seed, c):
    tree = build_tree(n, 1.0)
    xi = terminal(tree, seed)
    assert g_expectation(tree, gen, xi + c) == pytest.approx(g_expectation(tree, gen, xi) + c, abs=1e-12)


@given(depths, st.floats(0.05, 2.0), seeds, st.floats(0.0, 1.0))
def test_convexity_and_jensen(n, gamma, seed, lam):
    tree = build_tree(n, 1.0)
    gen = make_entropic(gamma)
    a, b = terminal(tree, seed), terminal(tree, seed + 7)
    mix = g_expectation(tree, gen, lam * a + (1 - lam) * b)
    assert mix <= lam * g_expectation(tree, gen, a) + (1 - lam) * g_expectation(tree, gen, b) + 1e-12
    assert g_expectation(tree, gen, a) >= np.mean(a) - 1e-12


@given(st.integers(3, 7), zero_a_generator(), seeds, st.data())
def test_flow_property(n, gen, seed, data):
    tree = build_tree(n, 1.0)
    level = data.draw(st.integers(1, n))
    xi = terminal(tree, seed)
    inner = conditional_g_expectation(tree, gen, xi, level)
    head = tree.truncate(level)
    assert g_expectation(head, gen, inner.values[-head.n_leaves:]) == pytest.approx(
        g_expectation(tree, gen, xi), abs=1e-12)


@given(depths, st.floats(-0.5, 0.5), st.floats(0.0, 0.8), seeds)
def test_duality(n, a, b, seed):
    tree = build_tree(n, 1.0)
    gen = make_affine_quadratic(a, b)
    sol = solve_bsde(tree, gen, 0.5 * np.tanh(terminal(tree, seed)))
    adj = solve_adjoint(tree, gen, sol, check_positivity=False)
    A, B = frozen_coefficients(sol)
    d = np.random.default_rng(seed).uniform(-1, 1, tree.n_leaves)
    assert duality_gap(adj, d, linear_solve(tree, A, B, d)[0]) <= 1e-11


@given(st.integers(2, 5), seeds, st.floats(-3.0, 3.0))
def test_variational_linearity(n, seed, c):
    tree = build_tree(n, 1.0)
    f, g, h = make_entropic(1.0), make_entropic(0.5), neg_utility_exp(1.0)
    xi = 0.5 + 0.3 * np.tanh(tree.w_terminal)
    sys_ = solve_system(tree, f, g, h, xi, 0.2)
    d = np.random.default_rng(seed).uniform(-1, 1, tree.n_leaves)
    one = solve_variational(tree, f, g, h, sys_.sol1, sys_.sol2, d, 0.2)
    many = solve_variational(tree, f, g, h, sys_.sol1, sys_.sol2, c * d, 0.2)
    assert np.allclose(many.y1.values, c * one.y1.values, atol=1e-11)
    assert np.allclose(many.y2.values, c * one.y2.values, atol=1e-11)


@given(st.integers(3, 7), st.floats(0.1, 1.0), seeds)
def test_nonzero_a_breaks_cash_additivity(n, a, seed):
    tree = build_tree(n, 1.0)
    gen = make_affine_quadratic(a, 0.3)
    xi = terminal(tree, seed)
    shift = g_expectation(tree, gen, xi + 1.0) - g_expectation(tree, gen, xi)
    # the constant part grows like (1 - a dt)^-N
    assert shift == pytest.approx((1 - a * tree.dt) ** (-n), abs=1e-12)


@given(st.integers(2, 5), st.floats(0.1, 2.0), st.floats(0.05, 0.9), seeds)
def test_flip_involution(n, cap, frac, seed):
    tree = build_tree(n, 1.0)
    p = fundraising_problem(tree, cap, frac * cap, make_entropic(1.0), exponential_utility(1.0), 0.1)
    back = flip_problem(flip_problem(p))
    x = np.random.default_rng(seed).uniform(-cap, 0, tree.n_leaves)
    assert back.objective(x) == pytest.approx(p.objective(x), abs=1e-14)
    assert back.constraint(x) == pytest.approx(p.constraint(x), abs=1e-14)
