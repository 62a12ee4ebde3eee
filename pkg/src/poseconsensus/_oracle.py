"""Jitted inner loop of the consensus test oracle."""

import numba
import numpy as np


@numba.njit(cache=True)
def _value(A, F, G, l21):
    R = A @ G - F
    if l21:
        s = 0.0
        for i in range(R.shape[0]):
            s += np.sqrt((R[i] ** 2).sum())
        return s
    return np.abs(R).sum()


@numba.njit(cache=True)
def projected_subgradient(A, F, G0, free, l21, iterations, step, stages):
    m = A.shape[0]
    best_G = G0.copy()
    best = _value(A, F, G0, l21)
    per = iterations // stages
    for r in range(stages):
        G = best_G.copy()
        c = step * 0.1 ** r
        for k in range(per):
            R = A @ G - F
            if l21:
                S = np.zeros_like(R)
                val = 0.0
                for i in range(m):
                    nr = np.sqrt((R[i] ** 2).sum())
                    val += nr
                    if nr > 1e-300:
                        S[i] = R[i] / nr
            else:
                S = np.sign(R)
                val = np.abs(R).sum()
            if val < best:
                best = val
                best_G = G.copy()
            g = A.T @ S
            for i in range(g.shape[0]):
                if not free[i]:
                    g[i] = 0.0
            gn = np.sqrt((g ** 2).sum())
            if gn == 0.0:
                break
            G = G - (c / np.sqrt(k + 1.0)) * g / gn
    # the final iterate of the last stage is never compared otherwise
    val = _value(A, F, G, l21)
    if val < best:
        best = val
        best_G = G.copy()
    return best_G, best
