"""Worked problems: partial hedging, fundraising, randomized tests, non-cash-additive drivers."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .adjoint import solve_adjoint
from .bsde import girsanov_expectation, solve_bsde
from .errors import CError, InteriorityViolated, NonPositiveParameter, PreconditionError, ValidationError
from .generators import (Generator, TerminalFunction, claim_minus_x, make_affine_quadratic, make_entropic,
                         make_linear_drift, negate)
from .optimizer import ConstrainedProblem, SolveReport, solve_constrained, tie_band
from .pathspace import PathTree, leaf_values

# -- partial hedging ----------------------------------------------------------


def _form_violations(xi, phi, on_negative, on_positive):
    band = tie_band(phi)
    bad = (phi < -band) & (np.abs(xi - on_negative) > 1e-9)
    bad |= (phi > band) & (np.abs(xi - on_positive) > 1e-9)
    return int(bad.sum())


def solve_partial_hedge(tree: PathTree, claim, pi0: float, f: Generator, mu: float) -> SolveReport:
    """``min E_f[X_c - xi]`` over ``0 <= xi <= X_c`` with hedging price ``E^Q[xi] <= pi0``."""
    xc = np.array(leaf_values(tree, claim), dtype=float)
    if np.any(xc < 0):
        raise ValidationError("claim must be non-negative")
    price = girsanov_expectation(tree, mu, xc)
    if not 0 < pi0 < price:
        raise InteriorityViolated(f"need 0 < pi0 < E^Q[X_c] = {price:.6g}")
    problem = ConstrainedProblem(tree, f, make_linear_drift(mu), claim_minus_x(xc), 0.0, pi0, np.zeros_like(xc), xc)
    rep = solve_constrained(problem)
    phi = rep.switch_field
    rep.diagnostics.update(
        form_violations=_form_violations(rep.xi_star, phi, xc, 0.0),
        price=girsanov_expectation(tree, mu, rep.xi_star),
        problem=problem,
    )
    return rep


# -- fundraising --------------------------------------------------------------


def flip_problem(problem: ConstrainedProblem) -> ConstrainedProblem:
    return problem.flipped()


def flip_report(rep: SolveReport) -> SolveReport:
    """Express a report in the variable ``-xi`` (bounds swap, labels swap)."""
    swap = {"X": "Y", "Y": "X", "tie": "tie"}
    return replace(
        rep,
        xi_star=-rep.xi_star,
        tie_value=None if rep.tie_value is None else -rep.tie_value,
        tie_values=-rep.tie_values,
        constraint_value=-rep.constraint_value,
        switch_field=-rep.switch_field,
        classification=np.array([swap[c] for c in rep.classification]),
        diagnostics=dict(rep.diagnostics),
    )


def fundraising_problem(tree: PathTree, cap: float, alpha_target: float, f: Generator,
                        u: TerminalFunction, mu: float) -> ConstrainedProblem:
    """Transformed problem in ``xt = -xi``: ``min E_f[-u(xt)]``, ``E_g[xt] <= -alpha``, ``-K <= xt <= 0``."""
    if not cap > 0:
        raise NonPositiveParameter("cap must be positive")
    if not 0 < alpha_target < cap:
        raise InteriorityViolated(f"need 0 < alpha < E^Q[K] = {cap}")
    n = tree.n_leaves
    return ConstrainedProblem(tree, f, make_linear_drift(mu), negate(u), 0.0, -float(alpha_target),
                              np.full(n, -float(cap)), np.zeros(n))


def solve_fundraising(tree: PathTree, cap: float, alpha_target: float, f: Generator, u: TerminalFunction,
                      mu: float) -> SolveReport:
    """Issue ``0 <= xi <= K`` raising ``E^Q[xi] >= alpha`` at least risk ``E_f[-u(-xi)]``.

    The returned switch field is ``v m_N - u_x(-xi) n_N``; ``xi = K`` where it is positive.
    """
    problem = fundraising_problem(tree, cap, alpha_target, f, u, mu)
    inner = solve_constrained(problem)
    rep = flip_report(inner)
    phi = -rep.switch_field
    rep.switch_field = phi
    rep.diagnostics.update(
        form_violations=_form_violations(rep.xi_star, phi, 0.0, float(cap)),
        raised=girsanov_expectation(tree, mu, rep.xi_star),
        problem=problem,
    )
    return rep


# -- Neyman-Pearson -----------------------------------------------------------


@dataclass(frozen=True)
class NpTestSpec:
    gamma: float
    eta: float
    pi0: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.eta > 0):
            raise NonPositiveParameter("gamma and eta must be positive")
        if not 0 < self.pi0 < 1:
            raise ValidationError("pi0 must lie in (0, 1)")

    @property
    def v_bounds(self):
        r = self.gamma / self.eta
        return r * np.exp(-2 * self.eta), r * np.exp(2 * self.gamma)


@dataclass
class NpTestResult:
    c: float
    v: float
    set_probability: float
    xi_star: np.ndarray
    type2_value: float
    v_lagrange: float
    pA_paper: float
    pA_binding: float
    binding_residual: float
    report: Optional[SolveReport] = None

    def as_dict(self) -> dict:
        return {"c": self.c, "v": self.v, "set_probability": self.set_probability,
                "type2_value": self.type2_value, "v_lagrange": self.v_lagrange,
                "pA_paper": self.pA_paper, "pA_binding": self.pA_binding,
                "binding_residual": self.binding_residual, "xi_star": [float(x) for x in self.xi_star]}


def level_from_multiplier(spec: NpTestSpec, v: float) -> float:
    g, e = spec.gamma, spec.eta
    return (2 * g - np.log(e * v / g)) / (2 * (g + e))


def multiplier_from_level(spec: NpTestSpec, c: float) -> float:
    g, e = spec.gamma, spec.eta
    return (g / e) * np.exp(2 * g - 2 * (g + e) * c)


def np_closed_form(spec: NpTestSpec, v: float):
    """``(c, pA_paper, pA_binding)`` for the transformed-problem multiplier ``v``."""
    lo, hi = spec.v_bounds
    if not lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12):
        raise CError(f"v = {v:.6g} outside [{lo:.6g}, {hi:.6g}]; c would leave [0, 1]")
    c = float(np.clip(level_from_multiplier(spec, v), 0.0, 1.0))
    e = spec.eta
    pa_paper = float(np.exp(2 * e * (spec.pi0 - c)))
    denom = np.expm1(2 * e * c)
    pa_binding = float(np.expm1(2 * e * spec.pi0) / denom) if denom > 0 else float("inf")
    return c, pa_paper, pa_binding


def np_problem(spec: NpTestSpec, tree: PathTree) -> ConstrainedProblem:
    n = tree.n_leaves
    return ConstrainedProblem(tree, make_entropic(spec.gamma), make_entropic(spec.eta), claim_minus_x(np.ones(n)),
                              0.0, spec.pi0, np.zeros(n), np.ones(n))


def np_solve(spec: NpTestSpec, tree: PathTree) -> NpTestResult:
    """Optimal randomized test ``xi* = c 1_A`` and its closed-form reconciliation."""
    if tree.n_steps < 3:
        raise PreconditionError("need a tree of depth at least 3")
    problem = np_problem(spec, tree)
    rep = solve_constrained(problem)
    xi = rep.xi_star
    on = xi > 1e-12
    if not on.any():
        raise PreconditionError("solver returned the trivial test")
    c = float(np.mean(xi[on]))
    if np.max(np.abs(xi[on] - c)) > 1e-8:
        raise PreconditionError("optimal test is not of the form c 1_A")
    v = float(multiplier_from_level(spec, c))
    _, pa_paper, pa_binding = np_closed_form(spec, v)
    pa = float(np.mean(on))
    resid = float(np.mean(np.exp(2 * spec.eta * xi)) - np.exp(2 * spec.eta * spec.pi0))
    return NpTestResult(c, v, pa, xi, rep.objective, rep.v, pa_paper, pa_binding, resid, rep)


def np_indicator_scan(spec: NpTestSpec, v: float, tree: PathTree):
    """Best test of the form ``c 1_A`` for the level ``c`` fixed by ``v``.

    Leaves are equally likely, so both transformed-problem expectations depend
    on ``A`` only through ``P(A)``. Scanning ``|A|`` is an exhaustive search.
    Returns ``(P(A), closer)`` with ``closer`` in ``{"binding", "displayed"}``.
    """
    c, pa_paper, pa_binding = np_closed_form(spec, v)
    L = tree.n_leaves
    p = np.arange(L + 1) / L
    lhs = 1 + p * np.expm1(2 * spec.eta * c)
    feasible = lhs <= np.exp(2 * spec.eta * spec.pi0) * (1 + 1e-14)
    cost = np.exp(2 * spec.gamma) * (1 - p) + p * np.exp(2 * spec.gamma * (1 - c))
    best = float(p[np.flatnonzero(feasible)[np.argmin(cost[feasible])]])
    closer = "binding" if abs(best - pa_binding) < abs(best - pa_paper) else "displayed"
    return best, closer


# -- non-cash-additive drivers ------------------------------------------------


def solve_noncash(tree: PathTree, a1: float, b1: float, a2: float, b2: float, h: TerminalFunction,
                  pi0: float, X, Y) -> SolveReport:
    if b1 < 0 or b2 < 0:
        raise PreconditionError("convexity needs b1, b2 >= 0")
    f, g = make_affine_quadratic(a1, b1), make_affine_quadratic(a2, b2)
    problem = ConstrainedProblem(tree, f, g, h, 0.0, pi0, X, Y)
    rep = solve_constrained(problem)
    xi = rep.xi_star
    sol2 = solve_bsde(tree, g, xi)
    sol1 = solve_bsde(tree, f, h.eval(xi))
    err = 0.0
    for gen, sol, a, b in ((f, sol1, a1, b1), (g, sol2, a2, b2)):
        adj = solve_adjoint(tree, gen, sol, check_positivity=False)
        z = sol.z.values[: tree.n_interior]
        err = max(err, float(np.max(np.abs(adj.A - a))), float(np.max(np.abs(adj.B - 2 * b * z))))
    rep.diagnostics.update(adjoint_specialization_error=err, problem=problem)
    return rep
