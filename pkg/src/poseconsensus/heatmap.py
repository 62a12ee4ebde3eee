"""Heatmap rendering and the differentiable heatmap-to-coordinate layer.

Grids are stored row-major as ``(..., l_y, l_x)``. Coordinates use 1-based
raster positions: cell ``[q - 1, p - 1]`` sits at ``(x, y) = (p, q)``. Use
:func:`to_zero_based` / :func:`to_one_based` at I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_heatmaps


class DegenerateHeatmapError(ValueError):
    """A heatmap with zero total mass cannot be normalized."""


@dataclass(frozen=True)
class HeatmapConfig:
    l_x: int = 64
    l_y: int = 64
    sigma2: float = 3.0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.l_x < 1 or self.l_y < 1:
            raise ValueError("heatmap size must be at least 1x1")


def to_zero_based(coords):
    return np.asarray(coords, dtype=float) - 1.0


def to_one_based(coords):
    return np.asarray(coords, dtype=float) + 1.0


def _rasters(l_y: int, l_x: int):
    return np.arange(1, l_x + 1, dtype=float), np.arange(1, l_y + 1, dtype=float)


def render_gaussian(pose2d, config: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Isotropic Gaussian density per joint evaluated at the integer grid points.

    ``pose2d`` is ``(..., n, 2)`` in 1-based raster units; returns ``(..., n, l_y, l_x)``.
    """
    pose2d = np.asarray(pose2d, dtype=float)
    if not np.isfinite(pose2d).all():
        raise ValueError("pose contains non-finite coordinates")
    px, qy = _rasters(config.l_y, config.l_x)
    s2 = config.sigma2
    gx = np.exp(-((px - pose2d[..., 0:1]) ** 2) / (2 * s2))
    gy = np.exp(-((qy - pose2d[..., 1:2]) ** 2) / (2 * s2))
    return gy[..., :, None] * gx[..., None, :] / (2 * np.pi * s2)


def normalize(hm) -> np.ndarray:
    """Scale each map to unit sum."""
    hm = np.asarray(hm, dtype=float)
    total = hm.sum(axis=(-2, -1), keepdims=True)
    if (total <= 0).any() or not np.isfinite(total).all():
        raise DegenerateHeatmapError("heatmap has no positive mass")
    return hm / total


def soft_argmax(hm) -> np.ndarray:
    """Expected 1-based raster position under the normalized map; ``(..., 2)`` as (x, y)."""
    h = normalize(hm)
    px, qy = _rasters(*h.shape[-2:])
    x = (h.sum(axis=-2) * px).sum(axis=-1)
    y = (h.sum(axis=-1) * qy).sum(axis=-1)
    return np.stack([x, y], axis=-1)


def soft_argmax_backward(hm, upstream) -> np.ndarray:
    """Gradient of ``gx * x + gy * y`` with respect to the raw (unnormalized) map values.

    Since ``x = sum(h * p) / sum(h)``, ``dx/dh[q, p] = (p - x) / sum(h)``.
    """
    hm = np.asarray(hm, dtype=float)
    up = np.asarray(upstream, dtype=float)
    total = hm.sum(axis=(-2, -1))
    if (total <= 0).any():
        raise DegenerateHeatmapError("heatmap has no positive mass")
    xy = soft_argmax(hm)
    px, qy = _rasters(*hm.shape[-2:])
    gx = (up[..., 0] / total)[..., None, None]
    gy = (up[..., 1] / total)[..., None, None]
    dx = px - xy[..., 0][..., None]
    dy = qy - xy[..., 1][..., None]
    return gx * dx[..., None, :] + gy * dy[..., :, None]


def hard_argmax(hm) -> np.ndarray:
    """1-based (x, y) of the maximum; ties go to the first cell in row-major order."""
    hm = np.asarray(hm)
    l_y, l_x = hm.shape[-2:]
    flat = hm.reshape(hm.shape[:-2] + (l_y * l_x,)).argmax(axis=-1)
    q, p = np.divmod(flat, l_x)
    return np.stack([p + 1, q + 1], axis=-1)


def peak_scale(config: HeatmapConfig = HeatmapConfig()) -> float:
    """Factor turning a rendered density into a map with unit peak."""
    return 2 * np.pi * config.sigma2


def heatmap_loss(predicted, target_pose, config: HeatmapConfig = HeatmapConfig(), grad: bool = False,
                 peak_normalized: bool = False):
    """Squared Frobenius distance between predicted maps and Gaussians rendered at the targets.

    Summed over joints and any leading sample axes. With ``grad=True`` also
    returns the gradient with respect to ``predicted``. ``peak_normalized``
    compares against unit-peak renders instead of densities.
    """
    predicted = np.asarray(predicted, dtype=float)
    target = render_gaussian(target_pose, config)
    if peak_normalized:
        target = target * peak_scale(config)
    if predicted.shape != target.shape:
        raise ValueError(f"predicted maps {predicted.shape} do not match rendered targets {target.shape}")
    diff = predicted - target
    loss = float((diff ** 2).sum())
    if grad:
        return loss, 2.0 * diff
    return loss


@dataclass
class BiasReport:
    biases: list  # per joint: (K, 2) soft - hard
    norms: np.ndarray  # (K, n)
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    quantiles: dict

    def fraction_below(self, threshold: float = 1.0) -> float:
        return float((self.norms < threshold).mean())


def silverman_bandwidth(samples) -> float:
    """Silverman's rule of thumb ``0.9 * min(std, IQR / 1.34) * n^(-1/5)``."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        return 1e-3
    std = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    h = 0.9 * spread * n ** (-0.2)
    return float(h) if h > 0 else 1e-3


def gaussian_kde_1d(samples, grid=None, bandwidth: float | None = None, points: int = 2048):
    """Normal-kernel density estimate; returns ``(grid, density, bandwidth)``.

    The default grid spans 8 bandwidths beyond the sample range so the density
    integrates to one on it.
    """
    x = np.asarray(samples, dtype=float).ravel()
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if grid is None:
        grid = np.linspace(x.min() - 8 * h, x.max() + 8 * h, points)
    grid = np.asarray(grid, dtype=float)
    dens = np.zeros_like(grid)
    # chunked to bound memory on large sample counts
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return grid, dens, h


def bias_analysis(stacks) -> BiasReport:
    """Soft-argmax minus hard-argmax per joint over a list/array of heatmap stacks."""
    H = check_heatmaps(np.asarray(stacks, dtype=float))
    if H.ndim == 3:
        H = H[None]
    if H.shape[0] == 0:
        raise ValueError("bias analysis needs at least one stack")
    b = soft_argmax(H) - hard_argmax(H)
    norms = np.linalg.norm(b, axis=-1)
    grid, dens, h = gaussian_kde_1d(norms)
    qs = {f"q{int(q * 100):02d}": float(np.quantile(norms, q)) for q in (0.5, 0.9, 0.95, 0.99)}
    qs["max"] = float(norms.max())
    return BiasReport([b[:, j] for j in range(b.shape[1])], norms, grid, dens, h, qs)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _shifted(X: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``X`` (zero padded) shifted so output[q, p] = X[q + dy, p + dx]."""
    out = np.zeros_like(X)
    l_y, l_x = X.shape[-2:]
    ys, yd = (slice(dy, None), slice(0, l_y - dy)) if dy >= 0 else (slice(0, l_y + dy), slice(-dy, None))
    xs, xd = (slice(dx, None), slice(0, l_x - dx)) if dx >= 0 else (slice(0, l_x + dx), slice(-dx, None))
    out[..., yd, xd] = X[..., ys, xs]
    return out


class ToyRefiner:
    """Per-joint 3x3 correlation plus bias followed by a sigmoid.

    A minimal learnable map from corrupted heatmaps to heatmaps, used to push
    gradients of the 2D loss and the downstream 3D losses back into a heatmap
    producer. Parameters: ``kernel`` ``(n, 3, 3)`` and ``bias`` ``(n,)``.
    """

    def __init__(self, kernel, bias):
        self.kernel = np.asarray(kernel, dtype=float)
        self.bias = np.asarray(bias, dtype=float)

    @classmethod
    def identity_like(cls, n: int, gain: float = 16.0, offset: float = -12.0) -> "ToyRefiner":
        """Centre-tap kernel: a unit-peak map goes to a sharpened blob on a ~1e-5 floor."""
        k = np.zeros((n, 3, 3))
        k[:, 1, 1] = gain
        return cls(k, np.full(n, offset))

    def params(self) -> dict:
        return {"kernel": self.kernel, "bias": self.bias}

    def forward(self, X):
        """``X``: ``(..., n, l_y, l_x)``; returns ``(output, cache)``."""
        X = np.asarray(X, dtype=float)
        Z = np.zeros_like(X)
        for a in range(3):
            for c in range(3):
                Z += self.kernel[:, a, c][:, None, None] * _shifted(X, a - 1, c - 1)
        Z += self.bias[:, None, None]
        Y = _sigmoid(Z)
        return Y, (X, Y)

    def backward(self, dY, cache):
        """Gradients ``({'kernel', 'bias'}, dX)`` for upstream ``dY``."""
        X, Y = cache
        dZ = dY * Y * (1.0 - Y)
        lead = tuple(range(dZ.ndim - 3))
        gk = np.zeros_like(self.kernel)
        dX = np.zeros_like(X)
        for a in range(3):
            for c in range(3):
                gk[:, a, c] = (dZ * _shifted(X, a - 1, c - 1)).sum(axis=lead + (-2, -1))
                # adjoint of the shift
                dX += self.kernel[:, a, c][:, None, None] * _shifted(dZ, 1 - a, 1 - c)
        gb = dZ.sum(axis=lead + (-2, -1))
        return {"kernel": gk, "bias": gb}, dX


class SoftArgmax(TransformerMixin, BaseEstimator):
    """Stateless transformer: heatmaps ``(N, n, l_y, l_x)`` to coordinates ``(N, n, 2)``.

    ``zero_based=True`` returns 0-based pixel coordinates instead of raster positions.
    """

    def __init__(self, zero_based: bool = False):
        self.zero_based = zero_based

    def fit(self, X, y=None):
        H = check_heatmaps(X)
        self.grid_shape_ = H.shape[-2:]
        return self

    def transform(self, X):
        xy = soft_argmax(check_heatmaps(X))
        return to_zero_based(xy) if self.zero_based else xy


class GaussianRenderer(TransformerMixin, BaseEstimator):
    """Transformer: 2D poses ``(N, n, 2)`` in raster units to Gaussian heatmaps."""

    def __init__(self, size: int = 64, sigma2: float = 3.0):
        self.size = size
        self.sigma2 = sigma2

    def fit(self, X=None, y=None):
        self.config_ = HeatmapConfig(self.size, self.size, self.sigma2)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or HeatmapConfig(self.size, self.size, self.sigma2)
        return render_gaussian(X, cfg)
