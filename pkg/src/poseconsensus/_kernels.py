"""Fused elementwise ADMM step (numba)."""

import numpy as np
from numba import njit

L21, L1, FRO = 0, 1, 2


@njit(cache=True)
def admm_step(D, F, N, U, B, mu, ratio, kind, primal2, dual2, objective):
    """One N/U update in place on ``(m, S, 3)`` arrays.

    ``D = A G - F``. Writes the new ``N``, the rescaled ``U``, the next G-update
    right-hand side ``B = F + N - U`` and per-sample squared primal/dual
    residuals plus the objective at ``D``.
    """
    m, S, _ = D.shape
    inv = 1.0 / mu
    primal2[:] = 0.0
    dual2[:] = 0.0
    objective[:] = 0.0
    for i in range(m):
        for s in range(S):
            r0 = D[i, s, 0] + U[i, s, 0]
            r1 = D[i, s, 1] + U[i, s, 1]
            r2 = D[i, s, 2] + U[i, s, 2]
            if kind == L21:
                nrm = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
                c = 1.0 - inv / nrm if nrm > 0 else 0.0
                if c < 0.0:
                    c = 0.0
                n0, n1, n2 = r0 * c, r1 * c, r2 * c
                d0, d1, d2 = D[i, s, 0], D[i, s, 1], D[i, s, 2]
                objective[s] += np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            elif kind == L1:
                n0 = np.sign(r0) * max(abs(r0) - inv, 0.0)
                n1 = np.sign(r1) * max(abs(r1) - inv, 0.0)
                n2 = np.sign(r2) * max(abs(r2) - inv, 0.0)
                objective[s] += abs(D[i, s, 0]) + abs(D[i, s, 1]) + abs(D[i, s, 2])
            else:
                c = mu / (mu + 2.0)
                n0, n1, n2 = r0 * c, r1 * c, r2 * c
                objective[s] += D[i, s, 0] ** 2 + D[i, s, 1] ** 2 + D[i, s, 2] ** 2
            for j, nj in ((0, n0), (1, n1), (2, n2)):
                rj = D[i, s, j] - nj
                dj = nj - N[i, s, j]
                primal2[s] += rj * rj
                dual2[s] += dj * dj
                u = (U[i, s, j] + rj) * ratio
                U[i, s, j] = u
                N[i, s, j] = nj
                B[i, s, j] = F[i, s, j] + nj - u
