import numpy as np
import pytest

from gexp.bsde import (check_contraction, conditional_g_expectation, entropic_closed_form, g_expectation,
                       girsanov_density, girsanov_expectation, solve_bsde, sup_bound, sweep, terminal_from_config)
from gexp.errors import (ContractionViolated, FixedPointDiverged, LevelOutOfRange, OverflowGuard, StepTooCoarse,
                         ValidationError)
from gexp.generators import Generator, make_affine_quadratic, make_entropic, make_linear_drift
from gexp.pathspace import TerminalField, build_tree


def path_recursion(n_steps, horizon, terminal, a=0.0, b=0.0, mu=0.0):
    """Scalar recursion over explicit paths: an implementation independent of the heap sweeps."""
    dt = horizon / n_steps
    s = np.sqrt(dt)

    def node(k, w):
        if k == n_steps:
            return terminal(w)
        u, d = node(k + 1, w + s), node(k + 1, w - s)
        z = (u - d) / (2 * s)
        return ((u + d) / 2 + (b * z * z + mu * z) * dt) / (1 - a * dt)

    return node(0, 0.0)


# values from a 40-digit evaluation of the same recursion
FROZEN = [
    (3, lambda w: np.greater(w, 0) * 1.0, dict(b=1.0), 0.73828125),
    (4, lambda w: np.greater(w, 0) * 1.0, dict(b=1.0), 0.574129820801317691802978515625),
    (4, np.sin, dict(a=0.3, b=0.5), 0.3361363626435490941320501719351655032844),
    (5, lambda w: np.cos(2 * w), dict(b=0.5), 0.3077734785014414727934038066913703821993),
]


@pytest.mark.parametrize("n, fn, coef, expected", FROZEN)
def test_frozen_values(n, fn, coef, expected):
    tree = build_tree(n, 1.0)
    gen = make_affine_quadratic(coef.get("a", 0.0), coef["b"])
    assert g_expectation(tree, gen, fn(tree.w_terminal)) == pytest.approx(expected, abs=1e-14)
    assert path_recursion(n, 1.0, fn, **coef) == pytest.approx(expected, abs=1e-14)


def test_matches_path_recursion_random():
    rng = np.random.default_rng(0)
    for _ in range(5):
        n, a, b, mu = int(rng.integers(1, 7)), rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(-1, 1)
        tree = build_tree(n, 1.0)
        gen = Generator("mixed", a=a, b=b, mu=mu, lipschitz_y=abs(a))
        fn = lambda w: np.tanh(w)  # noqa: E731
        assert g_expectation(tree, gen, fn(tree.w_terminal)) == pytest.approx(
            path_recursion(n, 1.0, fn, a=a, b=b, mu=mu), abs=1e-13)


def test_constant_terminal_is_fixed_point():
    tree = build_tree(6, 1.0)
    for gen in (make_entropic(1.0), make_linear_drift(0.3), make_affine_quadratic(0.0, 2.0)):
        sol = solve_bsde(tree, gen, 0.7)
        assert np.allclose(sol.y.values, 0.7, atol=1e-15)
        assert np.allclose(sol.z.values[: tree.n_interior], 0.0)


def test_indicator_closed_form_odd_depth():
    closed = 0.5 * np.log((np.e**2 + 1) / 2)
    for n in (1, 3, 9):
        tree = build_tree(n, 1.0)
        assert entropic_closed_form(tree, 1.0, (tree.w_terminal > 0).astype(float)) == pytest.approx(closed, abs=1e-15)
    # even depth: the atom at W_T = 0 sits in the complement
    tree = build_tree(4, 1.0)
    assert entropic_closed_form(tree, 1.0, (tree.w_terminal > 0).astype(float)) < closed - 0.05


def test_entropic_scheme_within_first_order_bound():
    tree = build_tree(10, 1.0)
    xi = (tree.w_terminal > 0).astype(float)
    err = abs(g_expectation(tree, make_entropic(0.5), xi) - entropic_closed_form(tree, 0.5, xi))
    assert err <= 5 * tree.dt * 4
    assert err > 1e-6


def test_entropic_closed_form_properties():
    tree = build_tree(5, 1.0)
    assert entropic_closed_form(tree, 2.0, np.full(32, 0.4)) == pytest.approx(0.4)
    xi = np.sin(3 * tree.w_terminal)
    assert entropic_closed_form(tree, 0.7, xi) >= np.mean(xi)
    with pytest.raises(OverflowGuard):
        entropic_closed_form(tree, 1.0, np.full(32, 400.0))
    with pytest.raises(ValidationError):
        entropic_closed_form(tree, 0.0, xi)


def test_girsanov_sign_and_density():
    tree = build_tree(10, 1.0)
    # the driver mu*z adds +mu*T to E[W_T]
    assert girsanov_expectation(tree, 0.2, tree.w_terminal) == pytest.approx(0.2, abs=1e-14)
    assert g_expectation(tree, make_linear_drift(0.2), tree.w_terminal) == pytest.approx(0.2, abs=1e-14)
    d = girsanov_density(tree, -0.5)
    assert np.mean(d) == pytest.approx(1.0, abs=1e-15) and np.all(d > 0)
    assert girsanov_expectation(tree, 0.0, tree.w_terminal**2) == pytest.approx(1.0)
    with pytest.raises(StepTooCoarse):
        girsanov_density(build_tree(1, 1.0), 1.0)


def test_invariant_errors_small():
    tree = build_tree(8, 1.0)
    sol = solve_bsde(tree, make_affine_quadratic(0.5, 0.7), np.cos(tree.w_terminal))
    errs = sol.invariant_errors()
    assert errs["terminal"] == 0.0
    assert errs["recursion"] < 1e-12 and errs["z_formula"] < 1e-12


def test_contraction_guard():
    tree = build_tree(2, 1.0)
    with pytest.raises(ContractionViolated):
        check_contraction(tree, make_affine_quadratic(1.0, 0.0))
    with pytest.raises(ContractionViolated):
        solve_bsde(tree, make_affine_quadratic(1.0, 0.0), np.zeros(4))
    check_contraction(build_tree(3, 1.0), make_affine_quadratic(1.0, 0.0))


def test_generic_sweep_matches_family():
    tree = build_tree(6, 1.0)
    fam = make_affine_quadratic(0.4, 0.6)
    custom = Generator.from_functions(lambda t, y, z: 0.4 * y + 0.6 * z * z, lambda t, y, z: 0.4 + 0 * y,
                                      lambda t, y, z: 1.2 * z, growth_constant=1.2, lipschitz_y=0.4)
    xi = np.sin(tree.w_terminal)
    assert g_expectation(tree, custom, xi) == pytest.approx(g_expectation(tree, fam, xi), abs=1e-13)


def test_generic_sweep_nonlinear_in_y():
    tree = build_tree(5, 1.0)
    gen = Generator.from_functions(lambda t, y, z: np.sin(y) + z * z, lambda t, y, z: np.cos(y),
                                   lambda t, y, z: 2 * z, growth_constant=2.0, lipschitz_y=1.0)
    sol = solve_bsde(tree, gen, np.tanh(tree.w_terminal))
    assert sol.invariant_errors()["recursion"] < 1e-12
    with pytest.raises(FixedPointDiverged):
        sweep(tree, gen, np.tanh(tree.w_terminal)[None, :], max_iter=1)


def test_conditional_levels():
    tree = build_tree(5, 1.0)
    gen = make_entropic(1.0)
    xi = np.sin(tree.w_terminal)
    assert conditional_g_expectation(tree, gen, xi, 0).root == pytest.approx(g_expectation(tree, gen, xi))
    assert np.allclose(conditional_g_expectation(tree, gen, xi, 5).terminal, xi)
    with pytest.raises(LevelOutOfRange):
        conditional_g_expectation(tree, gen, xi, 6)


def test_sup_bound_holds():
    tree = build_tree(8, 1.0)
    gen = make_affine_quadratic(0.3, 1.0)
    xi = np.sin(2 * tree.w_terminal)
    sol = solve_bsde(tree, gen, xi)
    assert np.max(np.abs(sol.y.values)) <= sup_bound(gen, xi, 1.0)


def test_terminal_from_config():
    tree = build_tree(3, 1.0)
    assert np.all(terminal_from_config(tree, 2).values == 2.0)
    ind = terminal_from_config(tree, {"kind": "indicator_wt_positive"})
    assert ind.bounds == (0.0, 1.0) and ind.values.sum() == 4
    call = terminal_from_config(tree, {"kind": "call", "strike": 0.0, "cap": 1.0})
    assert call.values.max() == 1.0 and call.values.min() == 0.0
    arr = terminal_from_config(tree, {"kind": "leaf_array", "values": list(range(8))})
    assert arr.values[-1] == 7
    with pytest.raises(ValidationError):
        terminal_from_config(tree, {"kind": "digital"})


def test_solve_accepts_terminal_field():
    tree = build_tree(2, 1.0)
    term = TerminalField(np.array([1.0, 0.0, 0.0, 0.0]))
    sol = solve_bsde(tree, make_linear_drift(0.0), term)
    assert sol.terminal is term and sol.y0 == 0.25
