"""Numba versions of the sweeps in ``_numpy``; same signatures and layout."""

import numpy as np
from numba import njit


@njit(cache=True)
def _backward(leaf, n_steps, dt, a, b, mu, tol, max_iter):
    batch = leaf.shape[0]
    n_leaf = 2**n_steps
    y = np.empty((batch, 2 * n_leaf - 1))
    z = np.empty((batch, n_leaf - 1))
    sq = np.sqrt(dt)
    ra, rb, rm = a.shape[0], b.shape[0], mu.shape[0]
    res_max = 0.0
    it_max = 0
    for i in range(batch):
        for j in range(n_leaf):
            y[i, n_leaf - 1 + j] = leaf[i, j]
        ia, ib, im = min(i, ra - 1), min(i, rb - 1), min(i, rm - 1)
        for k in range(n_steps - 1, -1, -1):
            lo = 2**k - 1
            hi = 2 ** (k + 1) - 1
            for j in range(2**k):
                node = lo + j
                up = y[i, hi + 2 * j]
                dn = y[i, hi + 2 * j + 1]
                zk = (up - dn) / (2.0 * sq)
                ybar = 0.5 * (up + dn)
                ak = a[ia, node]
                rest = (b[ib, node] * zk * zk + mu[im, node] * zk) * dt
                denom = 1.0 - ak * dt
                yk = ybar
                ok = False
                r = 0.0
                it = 0
                for it in range(1, max_iter + 1):
                    resid = yk - ybar - ak * yk * dt - rest
                    yk = yk - resid / denom
                    r = abs(yk - ybar - ak * yk * dt - rest)
                    if r <= tol:
                        ok = True
                        break
                if not ok:
                    it_max = -1
                elif it_max >= 0 and it > it_max:
                    it_max = it
                if r > res_max:
                    res_max = r
                y[i, node] = yk
                z[i, node] = zk
    return y, z, res_max, it_max


@njit(cache=True)
def _forward(A, B, n_steps, dt, euler):
    batch = max(A.shape[0], B.shape[0])
    m = np.empty((batch, 2 ** (n_steps + 1) - 1))
    sq = np.sqrt(dt)
    ra, rb = A.shape[0], B.shape[0]
    for i in range(batch):
        m[i, 0] = 1.0
        ia, ib = min(i, ra - 1), min(i, rb - 1)
        for node in range(2**n_steps - 1):
            mk = m[i, node]
            ak = A[ia, node]
            bk = B[ib, node]
            if euler:
                up = mk * (1.0 + ak * dt + bk * sq)
                dn = mk * (1.0 + ak * dt - bk * sq)
            else:
                d = 1.0 - ak * dt
                up = mk * (1.0 + bk * sq) / d
                dn = mk * (1.0 - bk * sq) / d
            m[i, 2 * node + 1] = up
            m[i, 2 * node + 2] = dn
    return m


def backward_affine(leaf, n_steps, dt, a, b, mu, tol=1e-12, max_iter=100):
    return _backward(
        np.ascontiguousarray(leaf, dtype=np.float64), n_steps, float(dt),
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(mu, dtype=np.float64), float(tol), int(max_iter),
    )


def forward_adjoint(A, B, n_steps, dt, euler=False):
    return _forward(
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(B, dtype=np.float64), n_steps, float(dt), bool(euler),
    )
