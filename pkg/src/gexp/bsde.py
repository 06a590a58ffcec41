"""Backward induction for quadratic BSDEs on the path tree.

One step of the scheme, at a node with children ``u`` (up) and ``d`` (down)::

    z = (u - d) / (2 sqrt(dt))
    y = (u + d) / 2 + g(t, y, z) dt        # solved for y

The y-equation is a contraction whenever ``|g_y| dt < 1``; the solver insists
on ``|g_y| dt < 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import (ContractionViolated, FixedPointDiverged, LevelOutOfRange, OverflowGuard,
                     StepTooCoarse, ValidationError)
from .generators import Generator
from .pathspace import AdaptedField, PathTree, TerminalField, leaf_values, level_slice

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 100
CONTRACTION_MARGIN = 0.5
EXP_GUARD = 700.0


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    tree: PathTree
    generator: Generator
    terminal: TerminalField
    y: AdaptedField
    z: AdaptedField
    residual_max: float

    @property
    def y0(self) -> float:
        return self.y.root

    def invariant_errors(self) -> dict:
        """Largest violation of each defining relation of the scheme."""
        tree, gen = self.tree, self.generator
        yv, zv = self.y.values, self.z.values
        sq, dt = tree.sqrt_dt, tree.dt
        rec = zer = 0.0
        for k in range(tree.n_steps):
            child = yv[level_slice(k + 1)]
            up, dn = child[0::2], child[1::2]
            yk, zk = yv[level_slice(k)], zv[level_slice(k)]
            nodes = np.arange(2**k - 1, 2 ** (k + 1) - 1)
            g = gen.eval(tree.time(k), yk, zk, node=nodes if gen.is_family else None)
            rec = max(rec, float(np.max(np.abs(yk - 0.5 * (up + dn) - g * dt))))
            zer = max(zer, float(np.max(np.abs(zk - (up - dn) / (2 * sq)))))
        term = float(np.max(np.abs(self.y.terminal - self.terminal.values)))
        return {"terminal": term, "recursion": rec, "z_formula": zer}


def check_contraction(tree: PathTree, gen: Generator) -> None:
    if gen.lipschitz_y * tree.dt >= CONTRACTION_MARGIN:
        raise ContractionViolated(
            f"|g_y| dt = {gen.lipschitz_y * tree.dt:.3g} >= {CONTRACTION_MARGIN}; increase n_steps"
        )


def _generic_sweep(tree, gen, leaves, tol, max_iter):
    batch = leaves.shape[0]
    y = np.empty((batch, tree.n_nodes))
    z = np.empty((batch, tree.n_interior))
    y[:, level_slice(tree.n_steps)] = leaves
    sq, dt = tree.sqrt_dt, tree.dt
    res_max = 0.0
    for k in range(tree.n_steps - 1, -1, -1):
        t = tree.time(k)
        child = y[:, level_slice(k + 1)]
        up, dn = child[:, 0::2], child[:, 1::2]
        zk = (up - dn) / (2 * sq)
        ybar = 0.5 * (up + dn)
        yk = ybar.copy()
        for _ in range(max_iter):
            resid = yk - ybar - gen.eval(t, yk, zk) * dt
            if np.max(np.abs(resid)) <= tol:
                break
            yk = yk - resid / (1.0 - gen.dy(t, yk, zk) * dt)
        else:
            raise FixedPointDiverged(f"fixed point at level {k} not reached in {max_iter} iterations")
        res_max = max(res_max, float(np.max(np.abs(resid))))
        y[:, level_slice(k)] = yk
        z[:, level_slice(k)] = zk
    return y, z, res_max


def sweep(tree: PathTree, gen: Generator, leaves: np.ndarray, tol=FIXED_POINT_TOL,
          max_iter=FIXED_POINT_MAX_ITER):
    """Batched solve. ``leaves`` is (batch, n_leaves); returns heap arrays ``y``, ``z``."""
    leaves = np.atleast_2d(np.asarray(leaves, dtype=float))
    if gen.is_family:
        a, b, mu = gen.coefficients(tree)
        y, z, res, it = kernels.backward_affine(leaves, tree.n_steps, tree.dt, a, b, mu, tol, max_iter)
        if it < 0:
            raise FixedPointDiverged(f"fixed point not reached in {max_iter} iterations")
        return y, z, res
    return _generic_sweep(tree, gen, leaves, tol, max_iter)


def solve_bsde(tree: PathTree, gen: Generator, terminal) -> BsdeSolution:
    check_contraction(tree, gen)
    xi = leaf_values(tree, terminal)
    if not np.all(np.isfinite(xi)):
        raise ValidationError("terminal must be finite")
    y, z, res = sweep(tree, gen, xi[None, :])
    term = terminal if isinstance(terminal, TerminalField) else TerminalField(xi)
    return BsdeSolution(
        tree, gen, term,
        AdaptedField(tree, y[0]),
        AdaptedField(tree, np.concatenate([z[0], np.full(tree.n_leaves, np.nan)]), 0, tree.n_steps),
        res,
    )


def g_expectation(tree: PathTree, gen: Generator, terminal) -> float:
    return solve_bsde(tree, gen, terminal).y0


def conditional_g_expectation(tree: PathTree, gen: Generator, terminal, level: int) -> AdaptedField:
    """The y process on levels ``0..level``; its last level is the conditional value at that time."""
    if not 0 <= level <= tree.n_steps:
        raise LevelOutOfRange(f"level {level} outside [0, {tree.n_steps}]")
    sol = solve_bsde(tree, gen, terminal)
    return AdaptedField(tree, sol.y.values[: 2 ** (level + 1) - 1], 0, level)


def entropic_closed_form(tree: PathTree, gamma: float, terminal) -> float:
    """``(1 / 2 gamma) ln E[exp(2 gamma xi)]`` computed directly on the leaves."""
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    xi = leaf_values(tree, terminal)
    if 2 * gamma * np.max(np.abs(xi)) > EXP_GUARD:
        raise OverflowGuard(f"2 gamma max|xi| = {2 * gamma * np.max(np.abs(xi)):.1f} > {EXP_GUARD}")
    return float((logsumexp(2 * gamma * xi) - np.log(xi.size)) / (2 * gamma))


def girsanov_density(tree: PathTree, mu: float) -> np.ndarray:
    """Leaf density ``prod_k (1 + mu sqrt(dt) s_k)``, normalized to mean one."""
    if abs(mu) * tree.sqrt_dt >= 1:
        raise StepTooCoarse(f"|mu| sqrt(dt) = {abs(mu) * tree.sqrt_dt:.3g} >= 1")
    d = np.prod(1.0 + mu * tree.sqrt_dt * tree.leaf_signs, axis=1)
    return d / np.mean(d)


def girsanov_expectation(tree: PathTree, mu: float, terminal) -> float:
    xi = leaf_values(tree, terminal)
    return float(np.mean(girsanov_density(tree, float(mu)) * xi))


def sup_bound(gen: Generator, terminal, horizon: float) -> float:
    """A-priori bound ``(|xi|_inf + C T) exp(C T)`` on the y process."""
    c = gen.growth_constant
    return float((np.max(np.abs(np.asarray(getattr(terminal, "values", terminal)))) + c * horizon)
                 * np.exp(c * horizon))


def terminal_from_config(tree: PathTree, cfg) -> TerminalField:
    if isinstance(cfg, (int, float)):
        return TerminalField(np.full(tree.n_leaves, float(cfg)))
    kind = cfg.get("kind")
    w = tree.w_terminal
    if kind == "indicator_wt_positive":
        return TerminalField((w > 0).astype(float), (0.0, 1.0))
    if kind == "call":
        cap = float(cfg.get("cap", np.inf))
        return TerminalField(np.minimum(np.maximum(w - float(cfg["strike"]), 0.0), cap))
    if kind == "constant":
        return TerminalField(np.full(tree.n_leaves, float(cfg["value"])))
    if kind == "leaf_array":
        return TerminalField(tree.check_leaves(np.asarray(cfg["values"], dtype=float)))
    raise ValidationError(f"unknown terminal kind {kind!r}")
