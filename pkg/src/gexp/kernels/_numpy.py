"""Pure-numpy sweeps, vectorized per tree level.

Node storage is heap-ordered: level k occupies ``[2**k - 1, 2**(k+1) - 1)`` and
node ``j`` of level k has children ``2j`` (up, +sqrt(dt)) and ``2j + 1`` (down).
All sweeps take a batch axis first. Coefficient arrays have one row shared by
the batch or one row per batch member.
"""

import numpy as np


def backward_affine(leaf, n_steps, dt, a, b, mu, tol=1e-12, max_iter=100):
    """Backward sweep for drivers ``a*y + b*z**2 + mu*z`` with node coefficients.

    Returns ``(y, z, residual_max, iterations_max)``; ``iterations_max`` is -1
    when some node failed to reach ``tol``.
    """
    batch = leaf.shape[0]
    n_nodes = 2 ** (n_steps + 1) - 1
    y = np.empty((batch, n_nodes))
    z = np.empty((batch, 2**n_steps - 1))
    y[:, 2**n_steps - 1:] = leaf
    sq = np.sqrt(dt)
    res_max = 0.0
    it_max = 0
    for k in range(n_steps - 1, -1, -1):
        lo, hi = 2**k - 1, 2 ** (k + 1) - 1
        child = y[:, hi:2 * hi + 1]
        up = child[:, 0::2]
        dn = child[:, 1::2]
        zk = (up - dn) / (2.0 * sq)
        ybar = 0.5 * (up + dn)
        ak, bk, mk = a[:, lo:hi], b[:, lo:hi], mu[:, lo:hi]
        rest = (bk * zk * zk + mk * zk) * dt
        denom = 1.0 - ak * dt
        yk = ybar.copy()
        for it in range(1, max_iter + 1):
            resid = yk - ybar - ak * yk * dt - rest
            yk = yk - resid / denom
            resid = yk - ybar - ak * yk * dt - rest
            r = float(np.max(np.abs(resid))) if resid.size else 0.0
            if r <= tol:
                break
        else:
            it_max = -1
        if it_max >= 0:
            it_max = max(it_max, it)
        res_max = max(res_max, r)
        y[:, lo:hi] = yk
        z[:, lo:hi] = zk
    return y, z, res_max, it_max


def forward_adjoint(A, B, n_steps, dt, euler=False):
    """Forward product ``m_{k+1} = m_k (1 +/- B sqrt(dt)) / (1 - A dt)``.

    With ``euler=True`` the factor is ``1 + A dt +/- B sqrt(dt)`` instead.
    """
    batch = max(A.shape[0], B.shape[0])
    m = np.empty((batch, 2 ** (n_steps + 1) - 1))
    m[:, 0] = 1.0
    sq = np.sqrt(dt)
    for k in range(n_steps):
        lo, hi = 2**k - 1, 2 ** (k + 1) - 1
        mk = m[:, lo:hi]
        ak, bk = A[:, lo:hi], B[:, lo:hi]
        if euler:
            up = mk * (1.0 + ak * dt + bk * sq)
            dn = mk * (1.0 + ak * dt - bk * sq)
        else:
            d = 1.0 - ak * dt
            up = mk * (1.0 + bk * sq) / d
            dn = mk * (1.0 - bk * sq) / d
        child = m[:, hi:2 * hi + 1]
        child[:, 0::2] = up
        child[:, 1::2] = dn
    return m
