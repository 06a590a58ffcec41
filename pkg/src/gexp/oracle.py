"""Brute-force solvers for small trees, independent of the Lagrange bisection.

``brute_force_solve`` runs an augmented Lagrangian on the leaf vector with a
spectral projected gradient inner solver; gradients come from the adjoint
representation and are checked against finite differences.
``exhaustive_bangbang`` enumerates every X / Y / tie assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .adjoint import value_and_adjoint
from .errors import NonConvexDetected, PreconditionError
from .optimizer import ConstrainedProblem

MAX_ORACLE_STEPS = 6
MAX_EXHAUSTIVE_STEPS = 3
PENALTIES = (10.0, 1e2, 1e3, 1e4)
FLOOR_GTOL = 1e-7


@dataclass
class OracleResult:
    xi: np.ndarray
    objective: float
    constraint_value: float
    method: str
    gradient_check_error: float = 0.0
    multiplier: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"xi": [float(x) for x in self.xi], "objective": self.objective,
                "constraint_value": self.constraint_value, "method": self.method,
                "gradient_check_error": self.gradient_check_error, "multiplier": self.multiplier}


def _objective_batch(problem: ConstrainedProblem, xis: np.ndarray):
    c, _ = value_and_adjoint(problem.tree, problem.g, xis)
    term = problem.h.eval(xis) + problem.alpha * c[:, None]
    y, _ = value_and_adjoint(problem.tree, problem.f, term)
    return y, c


def _spg(fun, x0, lo, hi, scale, max_iter, gtol, memory=10):
    """Nonmonotone spectral projected gradient with a diagonal metric ``scale``."""
    x = np.clip(x0, lo, hi)
    fx, gx = fun(x)
    recent = [fx]
    step = 1.0
    fails = 0
    best, since = np.inf, 0
    for it in range(1, max_iter + 1):
        pg = np.clip(x - gx / scale, lo, hi) - x
        gmap = float(np.max(np.abs(pg)))
        if gmap <= gtol:
            return x, fx, gx, it, gmap
        if gmap < 0.5 * best:
            best, since = gmap, 0
        else:
            since += 1
        if gmap <= FLOOR_GTOL and since >= 50:
            return x, fx, gx, it, gmap
        d = np.clip(x - step * gx / scale, lo, hi) - x
        slope = float(gx @ d)
        ref = max(recent)
        t = 1.0
        for _ in range(60):
            xn = x + t * d
            fn, gn = fun(xn)
            # second test: still descending at xn, so f decreased on a convex segment
            if fn <= ref + 1e-4 * t * slope or float(gn @ d) <= 0.0:
                break
            t *= 0.5
        else:
            # decrease below rounding: accept the precision floor
            if gmap <= FLOOR_GTOL:
                return x, fx, gx, it, gmap
            fails += 1
            if fails >= 50:
                raise NonConvexDetected("line search failed for 50 consecutive iterations")
            step = 1.0
            continue
        fails = 0
        s, yv = xn - x, (gn - gx) / scale
        sy = float(s @ (yv * scale))
        step = float(np.clip(s @ (s * scale) / sy, 1e-12, 1e12)) if sy > 0 else 1e12
        x, fx, gx = xn, fn, gn
        recent = (recent + [fx])[-memory:]
    pg = np.clip(x - gx / scale, lo, hi) - x
    return x, fx, gx, max_iter, float(np.max(np.abs(pg)))


def brute_force_solve(problem: ConstrainedProblem, *, gtol: float = 1e-9, max_iter: int = 100_000,
                      seed: int = 0, feas_tol: float = 1e-10) -> OracleResult:
    if problem.tree.n_steps > MAX_ORACLE_STEPS:
        raise PreconditionError(f"oracle limited to depth {MAX_ORACLE_STEPS}")
    if not (problem.f.convex and problem.g.convex and problem.h.convex):
        raise PreconditionError("f, g and h must be tagged convex")
    rng = np.random.default_rng(seed)
    lo, hi = problem.X, problem.Y
    scale = np.full(lo.size, problem.tree.leaf_prob)
    x = problem.clip(problem.midpoint + 0.1 * (hi - lo) * rng.uniform(-1, 1, lo.size))
    mult = 0.0
    total = 0
    gmap = np.inf
    for lam in PENALTIES:
        for _ in range(50):
            def fun(xi, lam=lam, mult=mult):
                ev = problem.evaluate(xi)
                r = mult + lam * (ev["constraint"] - problem.pi0)
                act = max(0.0, r)
                val = ev["objective"] + (act * act - mult * mult) / (2 * lam)
                return val, ev["grad_objective"] + act * ev["grad_constraint"]

            x, _, _, it, gmap = _spg(fun, x, lo, hi, scale, max_iter, gtol)
            total += it
            c = problem.constraint(x)
            new_mult = max(0.0, mult + lam * (c - problem.pi0))
            done = c - problem.pi0 <= feas_tol and abs(new_mult - mult) <= 1e-9 * (1 + mult)
            mult = new_mult
            if done:
                break
    ev = problem.evaluate(x)
    if gmap > FLOOR_GTOL:
        raise NonConvexDetected(f"projected gradient stalled at {gmap:.3g}")

    k = min(10, x.size)
    coords = rng.choice(x.size, size=k, replace=False)
    err = 0.0
    for j in coords:
        e = np.zeros_like(x)
        e[j] = 1e-6
        fd = (problem.objective(x + e) - problem.objective(x - e)) / 2e-6
        err = max(err, abs(fd - ev["grad_objective"][j]))
    return OracleResult(x, ev["objective"], ev["constraint"], "projected_gradient", float(err), float(mult),
                        {"iterations": total, "gradient_map": gmap})


def exhaustive_bangbang(problem: ConstrainedProblem, *, max_free: int = 2**MAX_EXHAUSTIVE_STEPS,
                        bisection_steps: int = 80) -> OracleResult:
    """Best feasible assignment of ``X``, ``Y`` or a common calibrated ``b`` over free leaves."""
    free = np.flatnonzero(problem.X < problem.Y)
    if free.size > max_free:
        raise PreconditionError(f"{free.size} free leaves exceed the limit {max_free}")
    codes = np.array(list(itertools.product((0, 1, 2), repeat=free.size)), dtype=np.int8).reshape(-1, free.size)
    base = np.tile(problem.X, (codes.shape[0], 1))
    Xf, Yf = problem.X[free], problem.Y[free]
    base[:, free] = np.where(codes == 1, Yf, Xf)
    tie = codes == 2
    has_tie = tie.any(axis=1)

    b_lo = np.where(tie, Xf, -np.inf).max(axis=1)
    b_hi = np.where(tie, Yf, np.inf).min(axis=1)
    cand = base.copy()
    ok = np.ones(codes.shape[0], bool)
    if has_tie.any():
        rows = np.flatnonzero(has_tie & (b_lo <= b_hi))
        ok[has_tie] = False
        T = tie[rows]
        lo_b, hi_b = b_lo[rows].copy(), b_hi[rows].copy()

        def fill(b):
            out = base[rows].copy()
            sub = out[:, free]
            sub[T] = np.broadcast_to(b[:, None], T.shape)[T]
            out[:, free] = sub
            return out

        c_lo = problem.constraints(fill(lo_b)) - problem.pi0
        c_hi = problem.constraints(fill(hi_b)) - problem.pi0
        good = (c_lo <= 0) & (c_hi >= 0)
        for _ in range(bisection_steps):
            mid = 0.5 * (lo_b + hi_b)
            cm = problem.constraints(fill(mid)) - problem.pi0
            lo_b = np.where(cm <= 0, mid, lo_b)
            hi_b = np.where(cm <= 0, hi_b, mid)
        cand[rows] = fill(lo_b)
        ok[rows[good]] = True
    y, c = _objective_batch(problem, cand)
    feasible = ok & (c <= problem.pi0 + 1e-12)
    if not feasible.any():
        raise PreconditionError("no feasible assignment")
    idx = np.flatnonzero(feasible)
    best = idx[int(np.argmin(y[idx]))]
    return OracleResult(cand[best], float(y[best]), float(c[best]), "exhaustive_bangbang", 0.0, 0.0,
                        {"assignments": int(codes.shape[0]), "feasible": int(feasible.sum()),
                         "code": [int(v) for v in codes[best]]})


def golden_section_single(problem: ConstrainedProblem, tol: float = 1e-12):
    """Scalar oracle for a problem with exactly one free leaf."""
    free = np.flatnonzero(problem.X < problem.Y)
    if free.size != 1:
        raise PreconditionError("need exactly one free leaf")
    j = int(free[0])

    def at(b):
        x = problem.X.copy()
        x[j] = b
        return x

    lo, hi = float(problem.X[j]), float(problem.Y[j])
    if problem.constraint(at(hi)) > problem.pi0:
        hi = brentq(lambda b: problem.constraint(at(b)) - problem.pi0, lo, hi, xtol=1e-15)
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = problem.objective(at(c)), problem.objective(at(d))
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = problem.objective(at(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = problem.objective(at(d))
    cands = [a, b, lo, hi]
    vals = [problem.objective(at(x)) for x in cands]
    k = int(np.argmin(vals))
    return cands[k], vals[k]
