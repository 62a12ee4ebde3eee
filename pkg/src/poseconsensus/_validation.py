"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_poses(X, dims: int | None = None, n_joints: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a pose batch and return it as ``(N, n, d)`` float64.

    Accepts a single ``(n, d)`` pose, a batch ``(N, n, d)``, or joint-major
    flattened rows ``(N, n*d)`` when ``dims`` is given.
    """
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64, input_name=name)
    if X.ndim == 2 and dims is not None and X.shape[1] != dims:
        if X.shape[1] % dims:
            raise ValueError(f"{name}: row length {X.shape[1]} is not a multiple of {dims}")
        X = X.reshape(X.shape[0], -1, dims)
    elif X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name}: expected poses of shape (N, n, d), got {X.shape}")
    if dims is not None and X.shape[2] != dims:
        raise ValueError(f"{name}: expected {dims}-D joints, got {X.shape[2]}")
    if n_joints is not None and X.shape[1] != n_joints:
        raise ValueError(f"{name}: expected {n_joints} joints, got {X.shape[1]}")
    return X


def check_heatmaps(H, name: str = "heatmaps") -> np.ndarray:
    """Validate heatmaps as ``(..., l_y, l_x)`` float64 with finite, nonnegative values."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim < 2:
        raise ValueError(f"{name}: need at least 2 dimensions, got {H.shape}")
    if H.shape[-1] < 1 or H.shape[-2] < 1:
        raise ValueError(f"{name}: empty grid {H.shape}")
    if not np.isfinite(H).all():
        raise ValueError(f"{name}: contains non-finite values")
    return H
