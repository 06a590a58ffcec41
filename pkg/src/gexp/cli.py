"""``gexp`` command line: solvers and diagnostics emitting one JSON report per run."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import duality_gap, frozen_coefficients, gateaux_check, linear_solve, solve_adjoint
from .applications import NpTestSpec, np_closed_form, np_solve, solve_fundraising, solve_partial_hedge
from .bsde import entropic_closed_form, girsanov_expectation, solve_bsde, terminal_from_config
from .errors import GexpError, SolverError, ValidationError
from .generators import exponential_utility, generator_from_config, linear_utility
from .optimizer import (check_necessary_condition, h_from_config, problem_from_config, solve_constrained,
                        solve_general_alpha)
from .oracle import brute_force_solve
from .pathspace import build_tree

EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def _check(name, value, tol, passed=None):
    ok = bool(abs(value) <= tol) if passed is None else bool(passed)
    return {"name": name, "passed": ok, "value": value, "tolerance": tol}


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise ValidationError("--config is required for this subcommand")
        return {}
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if args.steps is not None:
        cfg["n_steps"] = args.steps
    return cfg


def _tree(cfg):
    return build_tree(cfg.get("n_steps", 5), cfg.get("horizon", 1.0))


def _solve_rows(tree, X, Y, rep):
    return [{"leaf": i, "w_T": tree.w_terminal[i], "X": X[i], "Y": Y[i], "xi_star": rep.xi_star[i],
             "phi": rep.switch_field[i], "label": rep.classification[i]} for i in range(tree.n_leaves)]


def _report_checks(rep, pi0, binding_expected=True):
    checks = [_check("constraint_satisfied", max(0.0, rep.constraint_value - pi0), 1e-8)]
    if binding_expected:
        checks.append(_check("constraint_binding", rep.constraint_value - pi0, 1e-8))
    checks.append(_check("bang_bang_structure", rep.diagnostics.get("structure_mismatches", 0), 0))
    return checks


def _strip(diag):
    return {k: v for k, v in diag.items() if k != "problem"}


# -- subcommands --------------------------------------------------------------


def cmd_solve(args):
    cfg = _load_config(args)
    problem = problem_from_config(cfg)
    rep = solve_constrained(problem) if problem.alpha == 0 else solve_general_alpha(problem)
    chk = check_necessary_condition(problem, rep.xi_star, tol=1e-6, v_hint=rep.v, seed=args.seed)
    checks = _report_checks(rep, problem.pi0, problem.alpha == 0) + [
        _check("necessary_condition", chk.score, 1e-6, chk.passed)]
    result = rep.as_dict()
    result["necessary_condition"] = chk.as_dict()
    return cfg, result, _strip(rep.diagnostics), checks, _solve_rows(problem.tree, problem.X, problem.Y, rep)


def cmd_hedge(args):
    cfg = _load_config(args)
    tree = _tree(cfg)
    claim = terminal_from_config(tree, cfg.get("claim", {"kind": "indicator_wt_positive"})).values
    f = generator_from_config(cfg.get("f", {"kind": "entropic", "gamma": 1.0}))
    mu = float(cfg.get("mu", 0.0))
    rep = solve_partial_hedge(tree, claim, float(cfg["pi0"]), f, mu)
    checks = _report_checks(rep, float(cfg["pi0"])) + [
        _check("hedge_form", rep.diagnostics["form_violations"], 0)]
    return cfg, rep.as_dict(), _strip(rep.diagnostics), checks, _solve_rows(tree, np.zeros_like(claim), claim, rep)


def _utility(cfg):
    kind = cfg.get("kind", "linear")
    if kind == "linear":
        return linear_utility()
    if kind == "exponential":
        return exponential_utility(cfg["risk_aversion"])
    raise ValidationError(f"unknown utility kind {kind!r}")


def cmd_fund(args):
    cfg = _load_config(args)
    tree = _tree(cfg)
    cap, alpha = float(cfg["cap"]), float(cfg["alpha"])
    f = generator_from_config(cfg.get("f", {"kind": "entropic", "gamma": 1.0}))
    rep = solve_fundraising(tree, cap, alpha, f, _utility(cfg.get("utility", {})), float(cfg.get("mu", 0.0)))
    checks = [
        _check("raised_equals_target", rep.diagnostics["raised"] - alpha, 1e-8),
        _check("fundraising_form", rep.diagnostics["form_violations"], 0),
    ]
    n = tree.n_leaves
    return cfg, rep.as_dict(), _strip(rep.diagnostics), checks, _solve_rows(tree, np.zeros(n), np.full(n, cap), rep)


def cmd_nptest(args):
    cfg = _load_config(args, required=False)
    for key in ("gamma", "eta", "pi0"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
        if key not in cfg:
            raise ValidationError(f"missing --{key}")
    cfg.setdefault("n_steps", args.steps if args.steps is not None else 8)
    tree = _tree(cfg)
    spec = NpTestSpec(float(cfg["gamma"]), float(cfg["eta"]), float(cfg["pi0"]))
    res = np_solve(spec, tree)
    c_formula, _, _ = np_closed_form(spec, res.v)
    checks = [
        _check("c_formula", res.c - c_formula, 1e-8),
        _check("binding_transformed", res.binding_residual, 1e-8),
        _check("set_probability_binding", res.set_probability - res.pA_binding, 1e-8),
    ]
    rows = [{"leaf": i, "w_T": tree.w_terminal[i], "xi_star": res.xi_star[i]} for i in range(tree.n_leaves)]
    return cfg, res.as_dict(), _strip(res.report.diagnostics), checks, rows


def cmd_bsde(args):
    cfg = _load_config(args)
    tree = _tree(cfg)
    gen = generator_from_config(cfg["generator"])
    term = terminal_from_config(tree, cfg["terminal"])
    sol = solve_bsde(tree, gen, term)
    result = {"y0": sol.y0, "invariant_errors": sol.invariant_errors()}
    checks = [_check("recursion", sol.invariant_errors()["recursion"], 1e-11)]
    if "entropic" in gen.tags:
        cf = entropic_closed_form(tree, gen.params["gamma"], term)
        result["closed_form"] = cf
        xi = term.values
        checks.append(_check("entropic_oracle", sol.y0 - cf, 5 * tree.dt * (1 + np.max(np.abs(xi))) ** 2))
    if "linear_drift" in gen.tags and "mu" in gen.params:
        gq = girsanov_expectation(tree, gen.params["mu"], term)
        result["girsanov"] = gq
        checks.append(_check("girsanov_oracle", sol.y0 - gq, 1e-10))
    rows = [{"node": i, "y": sol.y.values[i]} for i in range(tree.n_nodes)]
    return cfg, result, {"residual_max": sol.residual_max}, checks, rows


def cmd_adjoint_check(args):
    cfg = _load_config(args)
    tree = _tree(cfg)
    gen = generator_from_config(cfg["generator"])
    sol = solve_bsde(tree, gen, terminal_from_config(tree, cfg["terminal"]))
    adj = solve_adjoint(tree, gen, sol)
    A, B = frozen_coefficients(sol)
    rng = np.random.default_rng(args.seed)
    gaps = []
    for _ in range(int(cfg.get("directions", 50))):
        d = rng.uniform(-1, 1, tree.n_leaves)
        gaps.append(duality_gap(adj, d, linear_solve(tree, A, B, d)[0]))
    worst = float(max(gaps))
    result = {"max_duality_gap": worst, "positivity_ok": adj.positivity_ok,
              "mean_m_terminal": float(np.mean(adj.terminal))}
    checks = [_check("duality", worst, 1e-11), _check("positivity", 0.0, 0.0, adj.positivity_ok)]
    rows = [{"leaf": i, "m_T": adj.terminal[i]} for i in range(tree.n_leaves)]
    return cfg, result, {"directions": len(gaps)}, checks, rows


def cmd_gateaux(args):
    cfg = _load_config(args)
    tree = _tree(cfg)
    f = generator_from_config(cfg["f"])
    g = generator_from_config(cfg["g"])
    h = h_from_config(tree, cfg["h"])
    xi = terminal_from_config(tree, cfg["xi"]).values
    rng = np.random.default_rng(args.seed)
    d = (terminal_from_config(tree, cfg["direction"]).values if "direction" in cfg
         else rng.uniform(-1, 1, tree.n_leaves))
    rhos = [float(r) for r in cfg.get("rhos", [1e-1, 1e-2, 1e-3, 1e-4])]
    rep = gateaux_check(tree, f, g, h, xi, d, float(cfg.get("alpha", 0.0)), rhos)
    checks = []
    if "linear_in_z" in g.tags:
        checks.append(_check("linear_exact", max(abs(x) for x in rep.delta2), 1e-10))
    else:
        checks.append(_check("order_one", rep.order2 - 1.0, 0.3))
    return cfg, rep.as_dict(), {}, checks, [{"rho": r, "delta1": a, "delta2": b}
                                            for r, a, b in zip(rep.rhos, rep.delta1, rep.delta2)]


def cmd_oracle(args):
    cfg = _load_config(args)
    if args.depth is not None:
        cfg["n_steps"] = args.depth
    problem = problem_from_config(cfg)
    rep = solve_constrained(problem) if problem.alpha == 0 else solve_general_alpha(problem)
    orc = brute_force_solve(problem, seed=args.seed)
    gap = rep.objective - orc.objective
    agreement = bool(gap <= 1e-6 and rep.constraint_value <= problem.pi0 + 1e-7
                     and orc.constraint_value <= problem.pi0 + 1e-7)
    result = {"agreement": agreement, "solver_objective": rep.objective, "oracle_objective": orc.objective,
              "objective_gap": gap, "solver": rep.as_dict(), "oracle": orc.as_dict()}
    checks = [_check("agreement", gap, 1e-6, agreement),
              _check("gradient_check", orc.gradient_check_error, 1e-5)]
    return cfg, result, {"oracle_iterations": orc.diagnostics["iterations"]}, checks, \
        _solve_rows(problem.tree, problem.X, problem.Y, rep)


COMMANDS = {
    "solve": cmd_solve, "hedge": cmd_hedge, "fund": cmd_fund, "nptest": cmd_nptest, "bsde": cmd_bsde,
    "adjoint-check": cmd_adjoint_check, "gateaux": cmd_gateaux, "oracle": cmd_oracle,
}


def build_parser():
    parser = _Parser(prog="gexp", description="Constrained g-expectation optimization on a path tree.")
    parser.add_argument("--version", action="version", version=f"gexp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="write the JSON report here (default: stdout)")
        p.add_argument("--csv", help="also write a leafwise CSV table here")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--steps", type=int, help="override n_steps")
        if name == "oracle":
            p.add_argument("--depth", type=int, help="tree depth for the oracle run")
        if name == "nptest":
            p.add_argument("--gamma", type=float)
            p.add_argument("--eta", type=float)
            p.add_argument("--pi0", type=float)
    return parser


def _emit(args, cfg, result, diagnostics, checks, rows):
    report = {"config": cfg, "result": result, "diagnostics": diagnostics, "checks": checks,
              "tool": {"name": "gexp", "version": __version__}}
    text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv and rows:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _clean(v) for k, v in row.items()})
    return all(c["passed"] for c in checks)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"gexp: usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, result, diagnostics, checks, rows = COMMANDS[args.command](args)
        cfg = dict(cfg, seed=args.seed)
        ok = _emit(args, cfg, result, diagnostics, checks, rows)
    except ValidationError as exc:
        sys.stderr.write(f"gexp: validation error: {exc}\n")
        return EXIT_VALIDATION
    except (SolverError, GexpError) as exc:
        sys.stderr.write(f"gexp: solver error: {exc}\n")
        return EXIT_SOLVER
    except (KeyError, TypeError) as exc:
        sys.stderr.write(f"gexp: validation error: bad config field {exc}\n")
        return EXIT_VALIDATION
    return EXIT_OK if ok else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
