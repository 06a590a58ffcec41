"""Adjoint processes, variational BSDEs and the duality identity.

Differentiating one implicit backward step gives

    yhat_k (1 - A dt) = E[yhat_{k+1} (1 + B dW) | node]

with ``A = g_y`` and ``B = g_z`` frozen at the solution. The forward process
``m_{k+1} = m_k (1 + B dW) / (1 - A dt)`` therefore satisfies
``E[m_N yhat_N] = yhat_0`` exactly, and ``P(leaf) m_N(leaf)`` is the gradient
of ``E_g`` with respect to the terminal value at that leaf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .bsde import BsdeSolution, solve_bsde, sweep
from .errors import BoundViolation, DenominatorNearZero, PositivityViolated, ShapeMismatch
from .generators import Generator, TerminalFunction, linearized
from .pathspace import AdaptedField, PathTree, TerminalField, leaf_values, level_slice

POSITIVITY_LIMIT = 0.9
DENOMINATOR_FLOOR = 0.1


def frozen_coefficients(sol: BsdeSolution):
    """``(A, B)`` = ``(g_y, g_z)`` at every interior node, heap order."""
    tree, gen = sol.tree, sol.generator
    A = np.empty(tree.n_interior)
    B = np.empty(tree.n_interior)
    for k in range(tree.n_steps):
        sl = level_slice(k)
        yk, zk = sol.y.values[sl], sol.z.values[sl]
        nodes = np.arange(sl.start, sl.stop) if gen.is_family else None
        A[sl] = gen.dy(tree.time(k), yk, zk, node=nodes)
        B[sl] = gen.dz(tree.time(k), yk, zk, node=nodes)
    return A, B


def positivity_margin(tree: PathTree, A: np.ndarray, B: np.ndarray):
    """``(max |B| sqrt(dt), min |1 - A dt|)``."""
    return float(np.max(np.abs(B))) * tree.sqrt_dt, float(np.min(np.abs(1.0 - A * tree.dt)))


@dataclass(frozen=True, eq=False)
class AdjointProcess:
    values: AdaptedField
    generator: Generator
    solution: BsdeSolution
    positivity_ok: bool
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    scheme: str = "matched"

    @property
    def terminal(self) -> np.ndarray:
        return self.values.terminal


def solve_adjoint(tree: PathTree, gen: Generator, sol: BsdeSolution, *, euler: bool = False,
                  check_positivity: bool = True) -> AdjointProcess:
    A, B = frozen_coefficients(sol)
    bmax, den = positivity_margin(tree, A, B)
    ok = bmax <= POSITIVITY_LIMIT and den >= DENOMINATOR_FLOOR
    if check_positivity:
        if den < DENOMINATOR_FLOOR:
            raise DenominatorNearZero(f"min |1 - A dt| = {den:.3g} < {DENOMINATOR_FLOOR}")
        if bmax > POSITIVITY_LIMIT:
            raise PositivityViolated(f"max |B| sqrt(dt) = {bmax:.3g} > {POSITIVITY_LIMIT}; refine the grid")
    m = kernels.forward_adjoint(A[None, :], B[None, :], tree.n_steps, tree.dt, euler)[0]
    return AdjointProcess(AdaptedField(tree, m), gen, sol, ok, A, B, "euler" if euler else "matched")


def value_and_adjoint(tree: PathTree, gen: Generator, leaves: np.ndarray):
    """Batched ``(y0, m_N)`` for terminals ``leaves`` of shape (batch, n_leaves).

    No positivity check; ``P * m_N`` is the exact gradient of ``y0``.
    """
    leaves = np.atleast_2d(np.asarray(leaves, dtype=float))
    y, z, _ = sweep(tree, gen, leaves)
    if gen.is_family:
        a, b, mu = gen.coefficients(tree)
        A, B = a, 2.0 * b * z + mu
    else:
        A, B = np.empty_like(z), np.empty_like(z)
        for k in range(tree.n_steps):
            sl = level_slice(k)
            A[:, sl] = gen.dy(tree.time(k), y[:, sl], z[:, sl])
            B[:, sl] = gen.dz(tree.time(k), y[:, sl], z[:, sl])
    m = kernels.forward_adjoint(A, B, tree.n_steps, tree.dt)
    return y[:, 0], m[:, tree.n_interior:]


def duality_gap(adj: AdjointProcess, var_terminal, var_root: float) -> float:
    mN = adj.terminal
    d = np.asarray(getattr(var_terminal, "values", var_terminal), dtype=float)
    if d.shape != mN.shape:
        raise ShapeMismatch(f"direction shape {d.shape} does not match {mN.shape}")
    return float(abs(np.mean(mN * d) - var_root))


def linear_solve(tree: PathTree, A: np.ndarray, B: np.ndarray, terminal) -> np.ndarray:
    """Heap ``y`` of the linear BSDE with driver ``A y + B z`` (same implicit scheme)."""
    gen = linearized(A, B)
    y, _, _ = sweep(tree, gen, leaf_values(tree, terminal)[None, :])
    return y[0]


@dataclass(frozen=True, eq=False)
class SystemSolution:
    """Coupled pair: ``y2`` solves (g, xi); ``y1`` solves (f, h(xi) + alpha y2(0))."""

    xi: np.ndarray
    sol1: BsdeSolution
    sol2: BsdeSolution
    alpha: float

    @property
    def objective(self) -> float:
        return self.sol1.y0

    @property
    def constraint(self) -> float:
        return self.sol2.y0


def solve_system(tree: PathTree, f: Generator, g: Generator, h: TerminalFunction, xi,
                 alpha: float = 0.0) -> SystemSolution:
    xi = leaf_values(tree, xi)
    sol2 = solve_bsde(tree, g, TerminalField(xi))
    sol1 = solve_bsde(tree, f, TerminalField(h.eval(xi) + alpha * sol2.y0))
    return SystemSolution(xi, sol1, sol2, float(alpha))


def objective_gradient(tree: PathTree, system: SystemSolution, h: TerminalFunction,
                       check_positivity: bool = False):
    """Leaf gradients of the objective and the constraint, plus ``(n_N, m_N)``."""
    n = solve_adjoint(tree, system.sol1.generator, system.sol1, check_positivity=check_positivity).terminal
    m = solve_adjoint(tree, system.sol2.generator, system.sol2, check_positivity=check_positivity).terminal
    p = tree.leaf_prob
    grad_j = p * (h.dx(system.xi) * n + system.alpha * float(np.mean(n)) * m)
    return grad_j, p * m, n, m


@dataclass(frozen=True, eq=False)
class VariationalSolution:
    y1: AdaptedField
    z1: AdaptedField
    y2: AdaptedField
    z2: AdaptedField
    direction: TerminalField
    alpha: float


def _z_field(tree, y):
    z = np.full(tree.n_nodes, np.nan)
    for k in range(tree.n_steps):
        child = y[level_slice(k + 1)]
        z[level_slice(k)] = (child[0::2] - child[1::2]) / (2 * tree.sqrt_dt)
    return AdaptedField(tree, z, 0, tree.n_steps)


def solve_variational(tree: PathTree, f: Generator, g: Generator, h: TerminalFunction,
                      sol1: BsdeSolution, sol2: BsdeSolution, direction, alpha: float) -> VariationalSolution:
    d = leaf_values(tree, direction)
    A2, B2 = frozen_coefficients(sol2)
    y2 = linear_solve(tree, A2, B2, d)
    A1, B1 = frozen_coefficients(sol1)
    xi = sol2.terminal.values
    y1 = linear_solve(tree, A1, B1, h.dx(xi) * d + alpha * y2[0])
    return VariationalSolution(AdaptedField(tree, y1), _z_field(tree, y1), AdaptedField(tree, y2),
                               _z_field(tree, y2), TerminalField(d), float(alpha))


@dataclass
class ConvergenceReport:
    rhos: List[float]
    delta1: List[float]
    delta2: List[float]
    order1: float
    order2: float
    derivative1: float
    derivative2: float

    @property
    def decreasing2(self) -> bool:
        return all(b < a for a, b in zip(self.delta2, self.delta2[1:]))

    def as_dict(self):
        return {k: getattr(self, k) for k in ("rhos", "delta1", "delta2", "order1", "order2",
                                               "derivative1", "derivative2")}


def _slope(rhos, deltas, floor=1e-14):
    r = np.asarray(rhos)
    d = np.abs(np.asarray(deltas))
    keep = d > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(r[keep]), np.log(d[keep]), 1)[0])


def gateaux_check(tree: PathTree, f: Generator, g: Generator, h: TerminalFunction, xi_star, direction,
                  alpha: float, rhos: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                  bounds: Optional[tuple] = None) -> ConvergenceReport:
    """Difference quotients of ``E_g`` and of the composite objective against ``yhat(0)``."""
    xi = leaf_values(tree, xi_star)
    d = leaf_values(tree, direction)
    base = solve_system(tree, f, g, h, xi, alpha)
    var = solve_variational(tree, f, g, h, base.sol1, base.sol2, d, alpha)
    d1, d2 = var.y1.root, var.y2.root
    delta1, delta2 = [], []
    for rho in rhos:
        pert = xi + rho * d
        if bounds is not None:
            lo, hi = (leaf_values(tree, b) for b in bounds)
            if np.any(pert < lo - 1e-15) or np.any(pert > hi + 1e-15):
                raise BoundViolation(f"xi* + {rho} * direction leaves [X, Y]")
        s = solve_system(tree, f, g, h, pert, alpha)
        delta1.append(float((s.objective - base.objective) / rho - d1))
        delta2.append(float((s.constraint - base.constraint) / rho - d2))
    return ConvergenceReport([float(r) for r in rhos], delta1, delta2, _slope(rhos, delta1),
                             _slope(rhos, delta2), float(d1), float(d2))
