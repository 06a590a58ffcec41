"""BSDE drivers and terminal cost functions.

The named driver families are all of the form ``a*y + b*z**2 + mu*z`` with
``a`` and ``mu`` allowed to vary per tree node; the sweeps in ``gexp.kernels``
work directly on those coefficients. ``Generator.from_functions`` wraps
arbitrary vectorized callables for tests and diagnostics; such generators go
through a slower generic sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import NonPositiveParameter, ShapeMismatch, UnboundedDrift, ValidationError
from .pathspace import AdaptedField, PathTree

MAX_DRIFT = 1e6


def _coef(value):
    if isinstance(value, AdaptedField):
        value = value.values
    if np.isscalar(value):
        return float(value)
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ShapeMismatch("node coefficients must be a heap-ordered 1-d array")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Generator:
    name: str
    a: object = 0.0
    b: float = 0.0
    mu: object = 0.0
    growth_constant: float = 1.0
    lipschitz_y: float = 0.0
    tags: frozenset = frozenset()
    params: Dict[str, float] = field(default_factory=dict)
    fn: Optional[Callable] = None
    fn_y: Optional[Callable] = None
    fn_z: Optional[Callable] = None

    @property
    def is_family(self) -> bool:
        return self.fn is None

    @property
    def zero_at_zero_z(self) -> bool:
        return "zero_at_zero_z" in self.tags

    @property
    def convex(self) -> bool:
        return "convex" in self.tags

    def _at(self, coef, node):
        if np.isscalar(coef):
            return coef
        if node is None:
            raise ValueError(f"generator {self.name!r} has node-dependent coefficients; pass node=")
        return coef[node]

    def eval(self, t, y, z, node=None):
        if self.fn is not None:
            return self.fn(t, y, z)
        return self._at(self.a, node) * y + self.b * z * z + self._at(self.mu, node) * z

    def dy(self, t, y, z, node=None):
        if self.fn is not None:
            return self.fn_y(t, y, z)
        return self._at(self.a, node) + 0.0 * np.asarray(y + z, dtype=float)

    def dz(self, t, y, z, node=None):
        if self.fn is not None:
            return self.fn_z(t, y, z)
        return 2.0 * self.b * z + self._at(self.mu, node) + 0.0 * np.asarray(y, dtype=float)

    def coefficients(self, tree: PathTree) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(1, n_interior) rows of ``a``, ``b``, ``mu`` for the interior nodes of ``tree``."""
        if not self.is_family:
            raise ValueError(f"generator {self.name!r} is not an affine-quadratic family")
        n = tree.n_interior

        def row(c):
            if np.isscalar(c):
                return np.full((1, n), c)
            if c.shape[0] < n:
                raise ShapeMismatch(f"{self.name}: coefficient field covers {c.shape[0]} nodes, tree needs {n}")
            return c[None, :n]

        return row(self.a), row(self.b), row(self.mu)

    def sup_abs(self, coef) -> float:
        return float(np.max(np.abs(coef))) if not np.isscalar(coef) else abs(coef)

    @classmethod
    def from_functions(cls, fn, fn_y, fn_z, growth_constant, name="custom", tags=(), lipschitz_y=None):
        """Hand-built driver from vectorized callables ``(t, y, z) -> array``."""
        if growth_constant <= 0:
            raise NonPositiveParameter("growth constant must be positive")
        ly = growth_constant if lipschitz_y is None else lipschitz_y
        return cls(name=name, growth_constant=float(growth_constant), lipschitz_y=float(ly),
                   tags=frozenset(tags), fn=fn, fn_y=fn_y, fn_z=fn_z)


def make_entropic(gamma: float) -> Generator:
    if not gamma > 0:
        raise NonPositiveParameter(f"gamma must be positive, got {gamma}")
    gamma = float(gamma)
    return Generator(
        name="entropic", b=gamma, growth_constant=max(gamma, 2.0 * gamma), lipschitz_y=0.0,
        tags=frozenset({"zero_at_zero_z", "convex", "entropic"}), params={"gamma": gamma},
    )


def make_linear_drift(mu) -> Generator:
    """``g = mu_t * z`` with ``mu`` a constant or a node field (heap order / AdaptedField)."""
    mu = _coef(mu)
    sup = Generator.sup_abs(None, mu)
    if not np.isfinite(sup) or sup > MAX_DRIFT:
        raise UnboundedDrift(f"drift magnitude {sup} exceeds {MAX_DRIFT}")
    params = {"mu": mu} if np.isscalar(mu) else {"mu_sup": sup}
    return Generator(
        name="linear_drift", mu=mu, growth_constant=sup if sup > 0 else 1.0, lipschitz_y=0.0,
        tags=frozenset({"zero_at_zero_z", "convex", "linear_in_z", "linear_drift"}), params=params,
    )


def make_affine_quadratic(a: float, b: float) -> Generator:
    """``g = a*y + b*z**2``; violates the zero-at-zero-z normalization when ``a != 0``."""
    a, b = float(a), float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("coefficients must be finite")
    tags = {"affine_quadratic"}
    if a == 0.0:
        tags.add("zero_at_zero_z")
    else:
        tags.add("normalization_exempt")
    if b >= 0.0:
        tags.add("convex")
    c = max(abs(a), 2.0 * abs(b))
    return Generator(
        name="affine_quadratic", a=a, b=b, growth_constant=c if c > 0 else 1.0,
        lipschitz_y=abs(a), tags=frozenset(tags), params={"a": a, "b": b},
    )


def linearized(gen_a, gen_mu, name="linearized") -> Generator:
    """Linear driver ``A*y + B*z`` with node coefficients (variational equations)."""
    a, mu = _coef(gen_a), _coef(gen_mu)
    sa, smu = Generator.sup_abs(None, a), Generator.sup_abs(None, mu)
    return Generator(name=name, a=a, mu=mu, growth_constant=max(sa, smu, 1e-300),
                     lipschitz_y=sa, tags=frozenset({"linear_in_z"}))


def generator_from_config(cfg: dict) -> Generator:
    kind = cfg.get("kind")
    if kind == "entropic":
        return make_entropic(cfg["gamma"])
    if kind == "linear_drift":
        return make_linear_drift(cfg["mu"])
    if kind == "affine_quadratic":
        return make_affine_quadratic(cfg["a"], cfg["b"])
    raise ValidationError(f"unknown generator kind {kind!r}")


# -- terminal cost functions h(leaf, x) ---------------------------------------


@dataclass(frozen=True, eq=False)
class TerminalFunction:
    """``h(leaf, x)`` evaluated on leaf arrays (last axis indexes leaves)."""

    name: str
    fn: Callable
    fn_x: Callable
    lipschitz_constant: float
    monotone: str = "none"
    convex: bool = False
    params: Dict[str, object] = field(default_factory=dict)

    def eval(self, x, leaf=None):
        return self.fn(np.asarray(x, dtype=float), leaf)

    def dx(self, x, leaf=None):
        return self.fn_x(np.asarray(x, dtype=float), leaf)

    @property
    def strictly_decreasing(self) -> bool:
        return self.monotone == "strictly_decreasing"


def _pick(arr, leaf):
    return arr if leaf is None else arr[leaf]


def linear_decreasing() -> TerminalFunction:
    return TerminalFunction(
        "linear_decreasing", lambda x, leaf: -x, lambda x, leaf: -np.ones_like(x),
        lipschitz_constant=1.0, monotone="strictly_decreasing", convex=True,
    )


def claim_minus_x(claim) -> TerminalFunction:
    claim = np.array(getattr(claim, "values", claim), dtype=float)
    claim.flags.writeable = False
    c = max(1.0, float(np.max(np.abs(claim))))
    return TerminalFunction(
        "claim_minus_x", lambda x, leaf: _pick(claim, leaf) - x, lambda x, leaf: -np.ones_like(x),
        lipschitz_constant=c, monotone="strictly_decreasing", convex=True, params={"claim": claim},
    )


def neg_utility_exp(risk_aversion: float, domain=(-10.0, 10.0)) -> TerminalFunction:
    """``h(x) = exp(-lam x) / lam``, i.e. minus an exponential utility."""
    lam = float(risk_aversion)
    if not lam > 0:
        raise NonPositiveParameter("risk aversion must be positive")
    c = max(np.exp(-lam * domain[0]) * max(1.0, lam), 1.0 / lam)
    return TerminalFunction(
        "neg_utility_exp", lambda x, leaf: np.exp(-lam * x) / lam, lambda x, leaf: -np.exp(-lam * x),
        lipschitz_constant=float(c), monotone="strictly_decreasing", convex=True,
        params={"risk_aversion": lam, "domain": tuple(domain)},
    )


def linear_utility() -> TerminalFunction:
    return TerminalFunction(
        "linear_utility", lambda x, leaf: x, lambda x, leaf: np.ones_like(x),
        lipschitz_constant=1.0, monotone="none", convex=False,
    )


def exponential_utility(risk_aversion: float) -> TerminalFunction:
    lam = float(risk_aversion)
    if not lam > 0:
        raise NonPositiveParameter("risk aversion must be positive")
    return TerminalFunction(
        "exponential_utility", lambda x, leaf: -np.exp(-lam * x) / lam, lambda x, leaf: np.exp(-lam * x),
        lipschitz_constant=float(np.exp(10.0 * lam) * max(1.0, lam)), monotone="none", convex=False,
        params={"risk_aversion": lam},
    )


def negate(u: TerminalFunction) -> TerminalFunction:
    """``-u`` for a concave increasing utility ``u``: convex and strictly decreasing."""
    return TerminalFunction(
        f"neg_{u.name}", lambda x, leaf: -u.fn(x, leaf), lambda x, leaf: -u.fn_x(x, leaf),
        lipschitz_constant=u.lipschitz_constant, monotone="strictly_decreasing", convex=True,
        params=dict(u.params),
    )


# -- assumption validators ----------------------------------------------------


@dataclass
class Clause:
    passed: bool
    worst_ratio: float
    witness: Tuple[float, ...]

    def as_dict(self):
        return {"passed": bool(self.passed), "worst_ratio": float(self.worst_ratio),
                "witness": [float(w) for w in self.witness]}


@dataclass
class ValidationReport:
    subject: str
    constant: float
    clauses: Dict[str, Clause]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failed(self):
        return sorted(k for k, c in self.clauses.items() if not c.passed)

    def as_dict(self):
        return {"subject": self.subject, "constant": self.constant, "passed": self.passed,
                "clauses": {k: c.as_dict() for k, c in self.clauses.items()}}


def _worst(lhs, rhs, points, slack=1e-12):
    ratio = np.abs(lhs) / np.maximum(rhs, 1e-300)
    i = int(np.argmax(ratio))
    passed = bool(np.all(np.abs(lhs) <= rhs * (1 + slack) + slack))
    return Clause(passed, float(ratio[i]), tuple(float(p) for p in points[i]))


def _sobol(dim, n, lo, hi):
    m = int(np.ceil(np.log2(max(n, 2))))
    pts = qmc.Sobol(d=dim, scramble=False).random_base2(m)[:n]
    return qmc.scale(pts, lo, hi)


def validate_assumptions(gen: Generator, sample_count: int = 1000, horizon: float = 1.0,
                         bound: float = 10.0, constant: Optional[float] = None) -> ValidationReport:
    """Sample the growth, derivative and normalization conditions on a Sobol grid.

    Points cover ``[0, horizon] x [-bound, bound]**2`` in ``(t, y, z)``; node
    dependent coefficients are cycled through their node values.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    C = gen.growth_constant if constant is None else float(constant)
    pts = _sobol(3, sample_count, [0.0, -bound, -bound], [horizon, bound, bound])
    t, y, z = pts.T
    nodes = None
    for coef in (gen.a, gen.mu):
        if not np.isscalar(coef):
            nodes = np.arange(sample_count) % coef.shape[0]

    g = np.asarray(gen.eval(t, y, z, node=nodes), dtype=float)
    gy = np.asarray(gen.dy(t, y, z, node=nodes), dtype=float)
    gz = np.asarray(gen.dz(t, y, z, node=nodes), dtype=float)

    # pairs: neighbours in the sequence (same node only) plus short perturbations
    shift = np.roll(np.arange(sample_count), 1)
    near = pts.copy()
    near[:, 1:] += 1e-3 * _sobol(2, sample_count, [-1, -1], [1, 1])
    near[:, 1:] = np.clip(near[:, 1:], -bound, bound)
    seq_nodes = None if nodes is None else nodes[shift]
    same_seq = np.ones(sample_count, bool) if nodes is None else seq_nodes == nodes
    clauses = {
        "quadratic_growth": _worst(g, C * (1 + np.abs(y) + z * z), pts),
        "dy_bounded": _worst(gy, np.full_like(gy, C), pts),
        "dz_growth": _worst(gz, C * (1 + np.abs(z)), pts),
    }
    for q, qn, same in ((pts[shift], seq_nodes, same_seq), (near, nodes, np.ones(sample_count, bool))):
        qy = np.asarray(gen.dy(q[:, 0], q[:, 1], q[:, 2], node=qn), dtype=float)
        qz = np.asarray(gen.dz(q[:, 0], q[:, 1], q[:, 2], node=qn), dtype=float)
        dist = np.abs(q[:, 1] - y) + np.abs(q[:, 2] - z)
        for name, a0, a1 in (("dy_lipschitz", gy, qy), ("dz_lipschitz", gz, qz)):
            cl = _worst(np.where(same, a1 - a0, 0.0), C * dist, pts)
            prev = clauses.get(name)
            if prev is not None:
                worse = cl if cl.worst_ratio > prev.worst_ratio else prev
                cl = Clause(prev.passed and cl.passed, worse.worst_ratio, worse.witness)
            clauses[name] = cl

    g0 = np.asarray(gen.eval(t, y, 0.0 * z, node=nodes), dtype=float)
    i = int(np.argmax(np.abs(g0)))
    clauses["zero_at_zero_z"] = Clause(bool(np.max(np.abs(g0)) <= 1e-12), float(np.max(np.abs(g0))),
                                       (float(t[i]), float(y[i]), 0.0))

    h = 1e-5
    fd_y = (np.asarray(gen.eval(t, y + h, z, node=nodes)) - np.asarray(gen.eval(t, y - h, z, node=nodes))) / (2 * h)
    fd_z = (np.asarray(gen.eval(t, y, z + h, node=nodes)) - np.asarray(gen.eval(t, y, z - h, node=nodes))) / (2 * h)
    err = np.maximum(np.abs(fd_y - gy) / (1 + np.abs(gy)), np.abs(fd_z - gz) / (1 + np.abs(gz)))
    i = int(np.argmax(err))
    clauses["derivatives"] = Clause(bool(err[i] <= 1e-6), float(err[i]), tuple(float(p) for p in pts[i]))
    return ValidationReport(gen.name, C, clauses)


def validate_terminal_function(h: TerminalFunction, n_leaves: int, sample_count: int = 1000,
                               x_range=(-10.0, 10.0), constant: Optional[float] = None) -> ValidationReport:
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    C = h.lipschitz_constant if constant is None else float(constant)
    u = _sobol(2, sample_count, [0.0, x_range[0]], [1.0, x_range[1]])
    leaf = np.minimum((u[:, 0] * n_leaves).astype(int), n_leaves - 1)
    x = u[:, 1]
    pts = np.column_stack([leaf, x])
    hx = h.dx(x, leaf)
    clauses = {
        "h0_bounded": _worst(h.eval(np.zeros_like(x), leaf), np.full_like(x, C), pts),
        "hx_bounded": _worst(hx, np.full_like(x, C), pts),
    }
    x2 = np.clip(x + 1e-2 * np.sin(np.arange(sample_count)), *x_range)
    clauses["hx_lipschitz"] = _worst(h.dx(x2, leaf) - hx, C * np.abs(x2 - x), pts)
    eps = 1e-6
    fd = (h.eval(x + eps, leaf) - h.eval(x - eps, leaf)) / (2 * eps)
    err = np.abs(fd - hx) / (1 + np.abs(hx))
    i = int(np.argmax(err))
    clauses["derivatives"] = Clause(bool(err[i] <= 1e-6), float(err[i]), tuple(pts[i]))
    if h.strictly_decreasing:
        i = int(np.argmax(hx))
        clauses["strictly_decreasing"] = Clause(bool(hx[i] < 0), float(hx[i]), tuple(pts[i]))
    return ValidationReport(h.name, C, clauses)
