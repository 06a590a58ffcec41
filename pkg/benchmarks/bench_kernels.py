#!/usr/bin/env python3
"""Time the numba and numpy tree sweeps on the same inputs.

Numba is warmed up once before timing so compile cost is excluded.

    python3 benchmarks/bench_kernels.py --steps 10 14 18 --batch 4
"""

import argparse
import json
import timeit

import numpy as np

from gexp.kernels import get_backend


def inputs(n_steps, batch, seed=0):
    rng = np.random.default_rng(seed)
    dt = 1.0 / n_steps
    n_int = 2**n_steps - 1
    w = np.sqrt(dt) * (n_steps - 2 * np.arange(2**n_steps))
    leaf = np.sin(w)[None, :] * rng.uniform(0.5, 1.0, (batch, 1))
    coef = {"a": np.full((1, n_int), 0.2), "b": np.full((1, n_int), 0.5), "mu": np.full((1, n_int), 0.1)}
    A = np.full((1, n_int), 0.2)
    B = rng.uniform(-0.5, 0.5, (batch, n_int))
    return dt, leaf, coef, A, B


def bench(mod, n_steps, batch, repeat):
    dt, leaf, c, A, B = inputs(n_steps, batch)
    back = lambda: mod.backward_affine(leaf, n_steps, dt, c["a"], c["b"], c["mu"])  # noqa: E731
    fwd = lambda: mod.forward_adjoint(A, B, n_steps, dt)  # noqa: E731
    back(), fwd()
    return (min(timeit.repeat(back, number=1, repeat=repeat)),
            min(timeit.repeat(fwd, number=1, repeat=repeat)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[8, 12, 16, 18])
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args()

    np_mod, nb_mod = get_backend("numpy"), get_backend("numba")
    rows = []
    for n in args.steps:
        tn = bench(np_mod, n, args.batch, args.repeat)
        tb = bench(nb_mod, n, args.batch, args.repeat)
        # same answers before comparing speed
        dt, leaf, c, A, B = inputs(n, args.batch)
        y0 = np_mod.backward_affine(leaf, n, dt, c["a"], c["b"], c["mu"])[0]
        y1 = nb_mod.backward_affine(leaf, n, dt, c["a"], c["b"], c["mu"])[0]
        assert np.allclose(y0, y1, atol=1e-12)
        rows.append({"n_steps": n, "backward_numpy": tn[0], "backward_numba": tb[0],
                     "forward_numpy": tn[1], "forward_numba": tb[1]})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'N':>4} {'backward np':>12} {'numba':>10} {'x':>6} {'forward np':>12} {'numba':>10} {'x':>6}")
    for r in rows:
        print(f"{r['n_steps']:>4} {r['backward_numpy'] * 1e3:>10.3f}ms {r['backward_numba'] * 1e3:>8.3f}ms "
              f"{r['backward_numpy'] / r['backward_numba']:>6.1f} {r['forward_numpy'] * 1e3:>10.3f}ms "
              f"{r['forward_numba'] * 1e3:>8.3f}ms {r['forward_numpy'] / r['forward_numba']:>6.1f}")


if __name__ == "__main__":
    main()
