"""Constrained problem ``min E_f[h(xi) + alpha E_g[xi]]`` s.t. ``E_g[xi] <= pi0``, ``X <= xi <= Y``.

The solver works with the Lagrangian ``L_w(xi) = E_f[h(xi)] + w E_g[xi]``.
Its leaf gradient is ``P * Phi`` with the switch field

    Phi = w m_N + h_x(xi) n_N

where ``n`` and ``m`` are the adjoints of the f- and g-equations. A minimizer
of ``L_w`` takes ``Y`` where ``Phi < 0``, ``X`` where ``Phi > 0`` and any
value on the tie set ``Phi = 0``. The outer loop bisects on ``w`` until the
constraint binds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import brentq, minimize, root

from .adjoint import solve_system, solve_variational, value_and_adjoint
from .bsde import terminal_from_config
from .errors import (BracketExpansionFailed, CycleDetected, InteriorityViolated, NotBracketed,
                     OuterNoConvergence, PreconditionError, ShapeMismatch, ValidationError)
from .generators import (Generator, TerminalFunction, claim_minus_x, generator_from_config,
                         linear_decreasing, neg_utility_exp)
from .pathspace import PathTree, build_tree, leaf_values

TIE_TOL = 1e-9
FIXED_POINT_ITER = 50
MAX_DOUBLINGS = 60
CONSTRAINT_TOL = 1e-8


def tie_band(phi: np.ndarray, tol: float = TIE_TOL) -> float:
    return tol * (1.0 + float(np.max(np.abs(phi))))


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    tree: PathTree
    f: Generator
    g: Generator
    h: TerminalFunction
    alpha: float
    pi0: float
    X: np.ndarray
    Y: np.ndarray
    check_interiority: bool = True

    def __post_init__(self):
        X = np.array(leaf_values(self.tree, self.X), dtype=float)
        Y = np.array(leaf_values(self.tree, self.Y), dtype=float)
        if X.shape != Y.shape:
            raise ShapeMismatch("X and Y must have the same shape")
        if np.any(X > Y):
            raise ValidationError("X <= Y must hold leafwise")
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "pi0", float(self.pi0))
        if self.check_interiority:
            lo, hi = self.constraint(X), self.constraint(Y)
            if not lo < self.pi0 < hi:
                raise InteriorityViolated(
                    f"need E_g[X] < pi0 < E_g[Y]; got {lo:.6g}, {self.pi0:.6g}, {hi:.6g}")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.X + self.Y)

    def clip(self, xi):
        return np.minimum(np.maximum(xi, self.X), self.Y)

    def constraint(self, xi) -> float:
        y0, _ = value_and_adjoint(self.tree, self.g, leaf_values(self.tree, xi))
        return float(y0[0])

    def constraints(self, xis: np.ndarray) -> np.ndarray:
        y0, _ = value_and_adjoint(self.tree, self.g, xis)
        return y0

    def evaluate(self, xi) -> dict:
        """Objective, constraint, their leaf gradients and the adjoint terminals."""
        xi = leaf_values(self.tree, xi)
        p = self.tree.leaf_prob
        y2, m = value_and_adjoint(self.tree, self.g, xi)
        y1, n = value_and_adjoint(self.tree, self.f, self.h.eval(xi) + self.alpha * y2[0])
        n, m = n[0], m[0]
        hx = self.h.dx(xi)
        return {
            "objective": float(y1[0]), "constraint": float(y2[0]), "n": n, "m": m, "hx": hx,
            "grad_objective": p * (hx * n + self.alpha * float(np.mean(n)) * m),
            "grad_constraint": p * m,
        }

    def objective(self, xi) -> float:
        return self.evaluate(xi)["objective"]

    def lagrangian(self, xi, w: float):
        """``E_f[h(xi)] + w E_g[xi]`` and its gradient (the alpha term is left out)."""
        xi = leaf_values(self.tree, xi)
        y2, m = value_and_adjoint(self.tree, self.g, xi)
        y1, n = value_and_adjoint(self.tree, self.f, self.h.eval(xi))
        phi = w * m[0] + self.h.dx(xi) * n[0]
        return float(y1[0] + w * y2[0]), self.tree.leaf_prob * phi, phi, n[0], m[0]

    def flipped(self) -> "ConstrainedProblem":
        """``xi -> -xi``; valid for drivers that are odd in ``(y, z)`` (linear drift)."""
        if "linear_in_z" not in self.g.tags:
            raise PreconditionError("sign flip needs a linear constraint generator")
        h = self.h
        hf = TerminalFunction(f"flip_{h.name}", lambda x, leaf: h.fn(-x, leaf), lambda x, leaf: -h.fn_x(-x, leaf),
                              h.lipschitz_constant, "none", h.convex, dict(h.params))
        return ConstrainedProblem(self.tree, self.f, self.g, hf, self.alpha, -self.pi0, -self.Y, -self.X,
                                  check_interiority=False)

    def describe(self) -> dict:
        return {"n_steps": self.tree.n_steps, "horizon": self.tree.horizon, "f": self.f.name,
                "g": self.g.name, "h": self.h.name, "alpha": self.alpha, "pi0": self.pi0}


# -- candidates for a fixed multiplier ------------------------------------------


def _check_convex(problem: ConstrainedProblem):
    if not (problem.f.convex and problem.g.convex and problem.h.convex):
        raise PreconditionError("f, g and h must be tagged convex")


def _sign_loop(problem, w, start, max_iter, strict):
    xi = np.array(start, dtype=float)
    seen: Dict[bytes, int] = {}
    states: List[np.ndarray] = []
    status = "max_iter"
    for it in range(max_iter):
        _, _, phi, _, _ = problem.lagrangian(xi, w)
        band = tie_band(phi)
        sign = np.where(phi < -band, 1, np.where(phi > band, -1, 0)).astype(np.int8)
        new = np.where(sign > 0, problem.Y, np.where(sign < 0, problem.X, xi))
        if np.array_equal(new, xi):
            status = "fixed_point"
            break
        key = sign.tobytes()
        if key in seen:
            status = "cycle"
            if strict:
                raise CycleDetected(f"sign assignment repeats after {it - seen[key]} iterations",
                                    states=[states[seen[key]], sign])
            break
        seen[key] = it
        states.append(sign)
        xi = new
    return xi, status, it + 1


def _polish(problem, w, start, maxiter=15000, newton=True):
    bounds = list(zip(problem.X, problem.Y))
    fixed = problem.X == problem.Y

    def fun(x):
        val, grad, *_ = problem.lagrangian(x, w)
        return val, np.where(fixed, 0.0, grad)

    res = minimize(fun, problem.clip(start), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-14, "maxiter": maxiter, "maxcor": 30})
    xi = problem.clip(res.x)
    return (_newton(problem, w, xi) if newton else xi), int(res.nit)


def _newton(problem, w, xi, rounds=5):
    """Solve ``Phi = 0`` on interior leaves.

    Quasi-Newton stops on function decrease, which leaves ``Phi`` near
    ``sqrt(eps)``; this step uses gradients only.
    """
    val = problem.lagrangian(xi, w)[0]
    for _ in range(rounds):
        phi = problem.lagrangian(xi, w)[2]
        band = tie_band(phi)
        free = (xi > problem.X + 1e-12) & (xi < problem.Y - 1e-12) & (np.abs(phi) > 0.01 * band)
        if not free.any():
            break

        def resid(u):
            x = xi.copy()
            x[free] = u
            return problem.lagrangian(x, w)[2][free]

        sol = root(resid, xi[free], method="hybr", options={"xtol": 1e-15})
        new = xi.copy()
        new[free] = sol.x
        new = problem.clip(new)
        new_val = problem.lagrangian(new, w)[0]
        if not np.all(np.isfinite(new)) or new_val > val + 1e-14 * (1 + abs(val)):
            break
        xi, val = new, new_val
    return xi


def candidate_from_multiplier(problem: ConstrainedProblem, v: float, *, shift: float = 0.0,
                              strict: bool = False, refine: bool = True, start=None,
                              max_iter: int = FIXED_POINT_ITER, newton: bool = True):
    """Minimizer of ``L_{v + shift}`` over ``[X, Y]``.

    The sign loop sets leaves to ``Y``/``X`` by the sign of ``Phi`` until the
    assignment stops changing. Ties keep their current value, so leaves whose
    optimum is interior are then finished by a bounded quasi-Newton polish.
    With ``strict=True`` a repeating assignment raises ``CycleDetected``.
    """
    if v < 0:
        raise ValidationError("multiplier must be non-negative")
    w = float(v) + float(shift)
    x0 = problem.midpoint if start is None else problem.clip(leaf_values(problem.tree, start))
    xi, status, loops = _sign_loop(problem, w, x0, max_iter, strict)
    polish_iter = 0
    if refine:
        xi, polish_iter = _polish(problem, w, xi, newton=newton)
    _, _, phi, _, _ = problem.lagrangian(xi, w)
    band = tie_band(phi)
    diag = {"loop_status": status, "loop_iterations": loops, "polish_iterations": polish_iter,
            "tie_set": np.flatnonzero(np.abs(phi) <= band), "phi": phi}
    return xi, diag


def calibrate_tie_value(problem: ConstrainedProblem, v: float, candidate, tie_set) -> float:
    """Scalar ``b`` on ``tie_set`` so that the constraint binds."""
    tie = np.asarray(tie_set, dtype=int)
    if tie.size == 0:
        raise PreconditionError("tie set is empty")
    base = np.array(leaf_values(problem.tree, candidate), dtype=float)
    lo, hi = float(np.max(problem.X[tie])), float(np.min(problem.Y[tie]))

    def resid(b):
        x = base.copy()
        x[tie] = b
        return problem.constraint(x) - problem.pi0

    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo == 0:
        return lo
    if r_hi == 0:
        return hi
    if r_lo > 0 or r_hi < 0:
        raise NotBracketed(f"constraint at b={lo:.6g} is {r_lo:+.3g}, at b={hi:.6g} is {r_hi:+.3g}")
    return float(brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


# -- reports ------------------------------------------------------------------


@dataclass
class SolveReport:
    xi_star: np.ndarray
    v: float
    h_pair: tuple
    tie_value: Optional[float]
    tie_values: np.ndarray
    tie_set: np.ndarray
    objective: float
    constraint_value: float
    switch_field: np.ndarray
    classification: np.ndarray
    binding: bool
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "xi_star": [float(x) for x in self.xi_star],
            "v": float(self.v),
            "h_pair": [float(x) for x in self.h_pair],
            "tie_value": None if self.tie_value is None else float(self.tie_value),
            "tie_set": [int(i) for i in self.tie_set],
            "objective": float(self.objective),
            "constraint_value": float(self.constraint_value),
            "switch_field": [float(x) for x in self.switch_field],
            "classification": [str(c) for c in self.classification],
            "binding": bool(self.binding),
        }


def classify(problem: ConstrainedProblem, xi, phi, tol: float = TIE_TOL):
    band = tie_band(phi, tol)
    labels = np.where(phi < -band, "Y", np.where(phi > band, "X", "tie"))
    want = np.where(labels == "Y", problem.Y, np.where(labels == "X", problem.X, xi))
    return labels, int(np.sum(np.abs(want - xi) > 1e-9 * (1 + np.abs(want)))), band


def _report(problem, xi, v, shift, diagnostics, binding=None) -> SolveReport:
    ev = problem.evaluate(xi)
    w = v + shift
    phi = w * ev["m"] + ev["hx"] * ev["n"]
    labels, mismatches, band = classify(problem, xi, phi)
    tie = np.flatnonzero(labels == "tie")
    tv = xi[tie]
    tie_value = float(tv[0]) if tie.size and np.ptp(tv) <= 1e-9 * (1 + abs(tv[0])) else None
    norm = float(np.hypot(1.0, v))
    if binding is None:
        binding = abs(ev["constraint"] - problem.pi0) <= CONSTRAINT_TOL
    diagnostics = dict(diagnostics, structure_mismatches=mismatches, tie_band=band)
    return SolveReport(np.array(xi), float(v), (1.0 / norm, v / norm), tie_value, tv, tie,
                       ev["objective"], ev["constraint"], phi, labels, bool(binding), diagnostics)


def _kkt_polish(problem, shift, xi, v):
    """Joint Newton on ``Phi = 0`` (unresolved interior leaves) and ``E_g[xi] = pi0``.

    Returns the improved ``(xi, v)`` or ``None`` when the system is singular
    or the result is not an improvement.
    """
    phi = problem.lagrangian(xi, v + shift)[2]
    band = tie_band(phi)
    free = (xi > problem.X + 1e-12) & (xi < problem.Y - 1e-12) & (np.abs(phi) > 0.01 * band)
    if not free.any():
        return None

    def resid(u):
        x = xi.copy()
        x[free] = u[:-1]
        ph = problem.lagrangian(x, u[-1] + shift)[2]
        return np.append(ph[free], problem.constraint(x) - problem.pi0)

    sol = root(resid, np.append(xi[free], v), method="hybr", options={"xtol": 1e-15})
    x = xi.copy()
    x[free] = sol.x[:-1]
    v_new = float(sol.x[-1])
    if not np.all(np.isfinite(sol.x)) or v_new < 0 or np.any(x < problem.X) or np.any(x > problem.Y):
        return None
    phi_new = problem.lagrangian(x, v_new + shift)[2]
    if (abs(problem.constraint(x) - problem.pi0) > 1e-12
            or np.max(np.abs(phi_new[free])) > 0.01 * tie_band(phi_new)):
        return None
    return x, v_new


def _solve_weighted(problem: ConstrainedProblem, shift: float, start=None):
    """Bisection on ``v >= 0`` for the Lagrangian with weight ``v + shift`` on ``E_g``."""
    pi0 = problem.pi0
    evals = 0

    def cand(v, start):
        nonlocal evals
        evals += 1
        xi, _ = candidate_from_multiplier(problem, v, shift=shift, start=start, newton=False)
        return xi, problem.constraint(xi)

    xi_lo, c_lo = cand(0.0, start)
    if c_lo <= pi0 + 1e-12:
        xi_lo = _newton(problem, shift, xi_lo)
        return xi_lo, 0.0, {"bisection_steps": 0, "candidates": evals, "calibration": "none"}, False
    v_lo, v_hi = 0.0, 1.0
    xi_hi, c_hi = cand(v_hi, xi_lo)
    doublings = 0
    while c_hi > pi0:
        if doublings >= MAX_DOUBLINGS:
            raise BracketExpansionFailed(f"E_g[xi(v)] > pi0 up to v = {v_hi:.3g}")
        v_lo, xi_lo, c_lo = v_hi, xi_hi, c_hi
        v_hi *= 2.0
        xi_hi, c_hi = cand(v_hi, xi_hi)
        doublings += 1
    steps = 0
    while v_hi - v_lo > 1e-13 * (1.0 + v_hi) and steps < 200:
        v_mid = 0.5 * (v_lo + v_hi)
        xi_mid, c_mid = cand(v_mid, 0.5 * (xi_lo + xi_hi))
        steps += 1
        if abs(c_mid - pi0) <= 1e-13:
            xi_lo = xi_hi = xi_mid
            v_lo = v_hi = v_mid
            c_lo = c_hi = c_mid
            break
        if c_mid > pi0:
            v_lo, xi_lo, c_lo = v_mid, xi_mid, c_mid
        else:
            v_hi, xi_hi, c_hi = v_mid, xi_mid, c_mid
    v = 0.5 * (v_lo + v_hi)
    diag = {"bisection_steps": steps, "doublings": doublings, "candidates": evals,
            "bracket": [v_lo, v_hi]}
    if np.array_equal(xi_lo, xi_hi):
        diag["calibration"] = "none"
        polished = _kkt_polish(problem, shift, xi_lo, v)
        diag["kkt_polish"] = polished is not None
        return (polished if polished is not None else (xi_lo, v)) + (diag, True)
    flip = np.flatnonzero(xi_lo != xi_hi)
    pure = (np.all((xi_lo[flip] == problem.Y[flip]) & (xi_hi[flip] == problem.X[flip]))
            and np.ptp(problem.X[flip]) == 0 and np.ptp(problem.Y[flip]) == 0)
    if pure:
        b = calibrate_tie_value(problem, v, xi_lo, flip)
        xi = xi_lo.copy()
        xi[flip] = b
        diag["calibration"] = "scalar_b"
        return xi, v, diag, True

    def resid(theta):
        return problem.constraint((1 - theta) * xi_lo + theta * xi_hi) - pi0

    theta = brentq(resid, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    diag["calibration"] = "interpolation"
    diag["theta"] = float(theta)
    xi = problem.clip((1 - theta) * xi_lo + theta * xi_hi)
    polished = _kkt_polish(problem, shift, xi, v)
    diag["kkt_polish"] = polished is not None
    if polished is not None:
        xi, v = polished
    return xi, v, diag, True


def solve_constrained(problem: ConstrainedProblem) -> SolveReport:
    if problem.alpha != 0.0:
        raise PreconditionError("solve_constrained needs alpha = 0; use solve_general_alpha")
    _check_convex(problem)
    if not problem.h.strictly_decreasing:
        raise PreconditionError("h must be strictly decreasing")
    xi, v, diag, binding = _solve_weighted(problem, 0.0)
    return _report(problem, xi, v, 0.0, diag, binding)


def solve_general_alpha(problem: ConstrainedProblem, tol: float = 1e-8, max_outer: int = 30) -> SolveReport:
    """Outer fixed point on ``s = E[n_N]``: the alpha term acts as an extra weight ``alpha s`` on ``E_g``."""
    _check_convex(problem)
    s = 1.0
    history = []
    xi = None
    for it in range(max_outer):
        xi, v, diag, binding = _solve_weighted(problem, problem.alpha * s, start=xi)
        s_new = float(np.mean(problem.evaluate(xi)["n"]))
        history.append(s_new)
        if abs(s_new - s) <= tol:
            s = s_new
            break
        s = s_new
    else:
        raise OuterNoConvergence(f"E[n_N] did not settle in {max_outer} iterations", iterates=history[-2:])
    diag = dict(diag, outer_iterations=it + 1, s=s)
    rep = _report(problem, xi, v, problem.alpha * s, diag, binding)
    chk = check_necessary_condition(problem, xi, tol=1e-6, v_hint=v)
    rep.diagnostics["necessary_condition"] = chk.as_dict()
    return rep


# -- necessary-condition checker ----------------------------------------------


@dataclass
class CheckReport:
    verdict: str
    score: float
    h1: float
    h2: float
    score_at_hint: Optional[float]
    inequality_min: float
    inequality_ok: bool
    infeasibility: float
    misclassified: int

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "score": self.score, "h1": self.h1, "h2": self.h2,
                "score_at_hint": self.score_at_hint, "inequality_min": self.inequality_min,
                "inequality_ok": self.inequality_ok, "infeasibility": self.infeasibility,
                "misclassified": self.misclassified}


def _scores(problem, xi, base, m, thetas, tol):
    """Violation score for each angle: mass times distance to the prescribed bound."""
    c, s = np.cos(thetas)[:, None], np.sin(thetas)[:, None]
    phi = c * base[None, :] + s * m[None, :]
    band = tol * (1.0 + np.max(np.abs(phi), axis=1, keepdims=True))
    p = problem.tree.leaf_prob
    dy = np.abs(problem.Y - xi)[None, :]
    dx = np.abs(xi - problem.X)[None, :]
    bad = np.where(phi < -band, dy, 0.0) + np.where(phi > band, dx, 0.0)
    return p * np.sum(bad, axis=1), np.sum(bad > 1e-12, axis=1)


def check_necessary_condition(problem: ConstrainedProblem, xi_star, tol: float = 1e-6, *,
                              v_hint: Optional[float] = None, n_angles: int = 10_000,
                              n_directions: int = 20, seed: int = 0) -> CheckReport:
    """Search ``(h1, h2)`` on the half circle for which ``xi_star`` has the bang-bang form."""
    xi = np.array(leaf_values(problem.tree, xi_star), dtype=float)
    if np.any(xi < problem.X - 1e-12) or np.any(xi > problem.Y + 1e-12):
        raise ValidationError("xi_star must lie in [X, Y]")
    ev = problem.evaluate(xi)
    n, m = ev["n"], ev["m"]
    base = ev["hx"] * n + problem.alpha * float(np.mean(n)) * m
    excess = max(0.0, ev["constraint"] - problem.pi0)
    slack = ev["constraint"] < problem.pi0 - tol

    if slack:
        thetas = np.array([0.0])
    else:
        thetas = np.linspace(-np.pi / 2, np.pi / 2, n_angles)
        interior = (xi > problem.X + 1e-9) & (xi < problem.Y - 1e-9)
        if np.any(interior):
            bi, mi = base[interior], m[interior]
            M = np.array([[bi @ bi, bi @ mi], [bi @ mi, mi @ mi]])
            vec = np.linalg.eigh(M)[1][:, 0]
            if vec[0] < 0:
                vec = -vec
            thetas = np.append(thetas, np.arctan2(vec[1], vec[0]))
        if v_hint is not None:
            thetas = np.append(thetas, np.arctan(v_hint))
    scores, bad = _scores(problem, xi, base, m, thetas, tol)
    scores = scores + excess
    i = int(np.argmin(scores))
    h1, h2 = float(np.cos(thetas[i])), float(np.sin(thetas[i]))
    hint_score = float(scores[-1]) if (v_hint is not None and not slack) else None

    rng = np.random.default_rng(seed)
    sys_ = solve_system(problem.tree, problem.f, problem.g, problem.h, xi, problem.alpha)
    worst = np.inf
    for _ in range(n_directions):
        d = problem.X + rng.random(xi.size) * (problem.Y - problem.X) - xi
        var = solve_variational(problem.tree, problem.f, problem.g, problem.h, sys_.sol1, sys_.sol2,
                                d, problem.alpha)
        worst = min(worst, h1 * var.y1.root + h2 * var.y2.root)
    ineq_ok = bool(worst >= -tol)

    score = float(scores[i])
    if score <= tol and ineq_ok:
        verdict = "pass"
    elif score <= 10 * tol:
        verdict = "indeterminate"
    else:
        verdict = "fail"
    return CheckReport(verdict, score, h1, h2, hint_score, float(worst), ineq_ok, float(excess), int(bad[i]))


# -- config -------------------------------------------------------------------


def h_from_config(tree: PathTree, cfg: dict) -> TerminalFunction:
    kind = cfg.get("kind")
    if kind == "linear_decreasing":
        return linear_decreasing()
    if kind == "claim_minus_x":
        return claim_minus_x(terminal_from_config(tree, cfg["claim"]).values)
    if kind == "neg_utility_exp":
        return neg_utility_exp(cfg["risk_aversion"])
    raise ValidationError(f"unknown h kind {kind!r}")


def problem_from_config(cfg: dict) -> ConstrainedProblem:
    tree = build_tree(cfg.get("n_steps", 5), cfg.get("horizon", 1.0))
    return ConstrainedProblem(
        tree, generator_from_config(cfg["f"]), generator_from_config(cfg["g"]), h_from_config(tree, cfg["h"]),
        float(cfg.get("alpha", 0.0)), float(cfg["pi0"]),
        terminal_from_config(tree, cfg["X"]).values, terminal_from_config(tree, cfg["Y"]).values,
    )
