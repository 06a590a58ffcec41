import numpy as np
import pytest

from gexp.errors import NonPositiveParameter, UnboundedDrift, ValidationError
from gexp.generators import (Generator, claim_minus_x, exponential_utility, generator_from_config, linear_decreasing,
                             linear_utility, make_affine_quadratic, make_entropic, make_linear_drift, negate,
                             neg_utility_exp, validate_assumptions, validate_terminal_function)
from gexp.pathspace import build_tree


def test_entropic_algebra():
    g = make_entropic(1.0)
    assert g.eval(0.3, 5.0, 0.0) == 0.0
    assert g.eval(0.0, 1.0, 2.0) == 4.0
    assert g.dz(0.0, 1.0, 2.0) == 4.0
    assert g.dy(0.0, 1.0, 2.0) == 0.0
    assert g.growth_constant == 2.0
    assert {"zero_at_zero_z", "convex", "entropic"} <= g.tags


def test_entropic_rejects_nonpositive_gamma():
    with pytest.raises(NonPositiveParameter):
        make_entropic(0.0)


def test_linear_drift_constant_and_node_field():
    assert make_linear_drift(0.2).eval(0.0, 1.0, 3.0) == pytest.approx(0.6)
    tree = build_tree(3, 1.0)
    g = make_linear_drift(np.sign(tree.w))
    node = int(np.flatnonzero(tree.w < 0)[0])
    assert g.eval(0.0, 0.0, 1.0, node=node) == -1.0
    with pytest.raises(ValueError):
        g.eval(0.0, 0.0, 1.0)


def test_linear_drift_bounded():
    with pytest.raises(UnboundedDrift):
        make_linear_drift(np.array([0.0, np.inf, 1.0]))
    with pytest.raises(UnboundedDrift):
        make_linear_drift(1e7)


def test_affine_quadratic_normalization_exemption():
    g = make_affine_quadratic(0.1, 0.5)
    assert np.all(g.dy(0.0, np.linspace(-1, 1, 5), 0.3) == 0.1)
    assert g.eval(0.0, 2.0, 0.0) == pytest.approx(0.2)
    assert "normalization_exempt" in g.tags and "zero_at_zero_z" not in g.tags
    rep = validate_assumptions(g)
    assert rep.failed() == ["zero_at_zero_z"]
    assert "zero_at_zero_z" in make_affine_quadratic(0.0, 0.5).tags
    assert "convex" not in make_affine_quadratic(0.0, -0.5).tags


def test_entropic_validates_with_constant_two():
    rep = validate_assumptions(make_entropic(1.0))
    assert rep.passed and rep.constant == 2.0


def test_validator_catches_small_constant():
    rep = validate_assumptions(make_entropic(1.0), constant=0.5)
    assert not rep.passed
    assert "quadratic_growth" in rep.failed()
    assert rep.clauses["quadratic_growth"].worst_ratio > 1


def test_validator_on_node_coefficients():
    tree = build_tree(4, 1.0)
    rep = validate_assumptions(make_linear_drift(np.sin(tree.w)))
    assert rep.passed


def test_validator_needs_samples():
    with pytest.raises(ValueError):
        validate_assumptions(make_entropic(1.0), sample_count=10)


def test_from_functions_matches_family():
    fam = make_affine_quadratic(0.2, 0.4)
    custom = Generator.from_functions(lambda t, y, z: 0.2 * y + 0.4 * z * z, lambda t, y, z: 0.2 + 0 * y,
                                      lambda t, y, z: 0.8 * z, growth_constant=0.8, lipschitz_y=0.2)
    y, z = np.linspace(-2, 2, 7), np.linspace(1, -1, 7)
    assert np.allclose(custom.eval(0, y, z), fam.eval(0, y, z))
    assert not custom.is_family
    with pytest.raises(ValueError):
        custom.coefficients(build_tree(2, 1.0))


def test_generator_from_config():
    assert generator_from_config({"kind": "entropic", "gamma": 2}).params["gamma"] == 2.0
    assert generator_from_config({"kind": "linear_drift", "mu": -0.1}).mu == -0.1
    assert generator_from_config({"kind": "affine_quadratic", "a": 0.1, "b": 0.2}).a == 0.1
    with pytest.raises(ValidationError):
        generator_from_config({"kind": "cubic"})


@pytest.mark.parametrize("h", [linear_decreasing(), claim_minus_x(np.linspace(0, 1, 8)), neg_utility_exp(0.5),
                               negate(exponential_utility(0.5)), negate(linear_utility())])
def test_shipped_terminal_functions_validate(h):
    rep = validate_terminal_function(h, 8, x_range=(-2.0, 2.0))
    assert rep.passed, rep.failed()
    assert h.strictly_decreasing and h.convex


def test_terminal_function_leaf_indexing():
    h = claim_minus_x(np.array([1.0, 2.0, 3.0]))
    assert h.eval(np.array([0.5]), np.array([2]))[0] == 2.5
    assert np.all(h.dx(np.zeros(3)) == -1.0)


def test_negate_flips_sign():
    u = exponential_utility(1.0)
    h = negate(u)
    x = np.linspace(-1, 1, 5)
    assert np.allclose(h.eval(x), -u.eval(x))
    assert np.allclose(h.dx(x), -u.dx(x))


def test_terminal_validator_flags_wrong_derivative():
    from gexp.generators import TerminalFunction
    bad = TerminalFunction("bad", lambda x, leaf: -x, lambda x, leaf: np.ones_like(x), 1.0,
                           monotone="strictly_decreasing")
    rep = validate_terminal_function(bad, 4)
    assert {"derivatives", "strictly_decreasing"} <= set(rep.failed())
