"""Synthetic articulated-skeleton motion, camera projection and heatmap corruption.

Motion is forward kinematics over a bounded random walk of per-joint Euler
angles. Angle increments of joints on the same limb share a common component
(weight ``limb_correlation``), so limbs move coherently and independently of
each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .core import Skeleton
from .rng import make_rng

H36M_NAMES = (
    "hip", "rhip", "rknee", "rankle", "lhip", "lknee", "lankle",
    "spine", "thorax", "neck", "head",
    "lshoulder", "lelbow", "lwrist", "rshoulder", "relbow", "rwrist",
)
H36M_EDGES = (
    (0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13), (8, 14), (14, 15), (15, 16),
)
# rest-pose offset of each joint from its parent; y is up, z is depth
H36M_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [-1.3, 0.0, 0.0], [0.0, -4.5, 0.0], [0.0, -4.5, 0.0],
    [1.3, 0.0, 0.0], [0.0, -4.5, 0.0], [0.0, -4.5, 0.0],
    [0.0, 2.3, 0.0], [0.0, 2.5, 0.0], [0.0, 1.0, 0.0], [0.0, 1.2, 0.0],
    [1.6, 0.0, 0.0], [0.0, -2.8, 0.0], [0.0, -2.5, 0.0],
    [-1.6, 0.0, 0.0], [0.0, -2.8, 0.0], [0.0, -2.5, 0.0],
])
# joints whose rotation drives a limb; the root is its own "limb"
H36M_LIMBS = {
    "root": (0,),
    "right_leg": (1, 2, 3),
    "left_leg": (4, 5, 6),
    "torso": (7, 8, 9, 10),
    "left_arm": (11, 12, 13),
    "right_arm": (14, 15, 16),
}


def h36m_skeleton() -> Skeleton:
    return Skeleton(H36M_NAMES, H36M_EDGES, 0)


@dataclass(frozen=True)
class SyntheticConfig:
    frames: int = 2000
    angle_walk_sigma: float = 0.08
    limb_correlation: float = 0.8
    angle_limit: float = 0.9
    seed: int = 0
    # None -> the 17-joint preset
    skeleton: Skeleton | None = None
    offsets: np.ndarray | None = field(default=None, compare=False)
    limbs: dict | None = field(default=None, compare=False)
    bone_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.limb_correlation <= 1.0:
            raise ValueError("limb_correlation must be in [0, 1]")
        if self.angle_walk_sigma < 0:
            raise ValueError("angle_walk_sigma must be >= 0")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.bone_scale <= 0:
            raise ValueError("bone_scale must be positive")

    def resolved(self):
        sk = self.skeleton or h36m_skeleton()
        offsets = H36M_OFFSETS if self.offsets is None else np.asarray(self.offsets, dtype=float)
        limbs = H36M_LIMBS if self.limbs is None else self.limbs
        if offsets.shape != (sk.joint_count, 3):
            raise ValueError("offsets must be (n, 3)")
        lengths = np.linalg.norm(offsets, axis=1)
        if (np.delete(lengths, sk.root_index) <= 0).any():
            raise ValueError("bone lengths must be positive")
        return sk, offsets * self.bone_scale, limbs


@dataclass(frozen=True)
class CameraModel:
    kind: str = "orthographic"
    scale: float = 1.0
    principal_point: tuple[float, float] = (0.0, 0.0)
    # added to z before weak-perspective division (camera distance)
    depth_offset: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        if self.kind not in ("orthographic", "weak-perspective"):
            raise ValueError(f"unknown camera kind {self.kind!r}")


def heatmap_camera(size: int = 64, body_height: float = 17.0, margin: float = 0.75) -> CameraModel:
    """Orthographic camera that fits a root-centred body into a ``size`` x ``size`` raster."""
    c = (size + 1) / 2.0
    return CameraModel("orthographic", margin * size / body_height, (c, c))


def _walk(rng, frames, sigma, limit, rho, limbs, n, free_yaw):
    """Reflected random walk of Euler angles, ``(frames, n, 3)``."""
    angles = np.zeros((frames, n, 3))
    limb_of = np.zeros(n, dtype=int)
    for k, joints in enumerate(limbs.values()):
        limb_of[list(joints)] = k
    n_limbs = len(limbs)
    cur = np.zeros((n, 3))
    for f in range(1, frames):
        shared = rng.standard_normal((n_limbs, 3))
        own = rng.standard_normal((n, 3))
        step = sigma * (np.sqrt(rho) * shared[limb_of] + np.sqrt(1.0 - rho) * own)
        cur = cur + step
        # reflect into [-limit, limit]
        period = 4 * limit
        m = np.mod(cur + limit, period)
        cur = np.where(m <= 2 * limit, m - limit, 3 * limit - m)
        if free_yaw is not None:
            cur[free_yaw, 1] = angles[f - 1, free_yaw, 1] + step[free_yaw, 1]
        angles[f] = cur
    return angles


def forward_kinematics(angles: np.ndarray, skeleton: Skeleton, offsets: np.ndarray) -> np.ndarray:
    """Joint positions ``(..., n, 3)`` from local XYZ Euler angles ``(..., n, 3)``."""
    lead = angles.shape[:-2]
    n = skeleton.joint_count
    local = Rotation.from_euler("xyz", angles.reshape(-1, 3)).as_matrix().reshape(lead + (n, 3, 3))
    glob = np.zeros(lead + (n, 3, 3))
    pos = np.zeros(lead + (n, 3))
    parents = skeleton.parents
    for j in skeleton.topological_order():
        p = parents[j]
        if p < 0:
            glob[..., j, :, :] = local[..., j, :, :]
            continue
        pos[..., j, :] = pos[..., p, :] + np.einsum("...ab,b->...a", glob[..., p, :, :], offsets[j])
        glob[..., j, :, :] = glob[..., p, :, :] @ local[..., j, :, :]
    return pos


def generate_sequence(config: SyntheticConfig = SyntheticConfig()) -> np.ndarray:
    """``(frames, n, 3)`` root-at-origin poses; frame 0 is the rest pose."""
    sk, offsets, limbs = config.resolved()
    rng = make_rng(config.seed)
    root = sk.root_index
    angles = _walk(rng, config.frames, config.angle_walk_sigma, config.angle_limit,
                   config.limb_correlation, limbs, sk.joint_count, free_yaw=root)
    # root pitch/roll stay small so the body remains upright
    angles[:, root, 0] *= 0.3
    angles[:, root, 2] *= 0.3
    return forward_kinematics(angles, sk, offsets)


def generate_dataset(config: SyntheticConfig, sequences: int) -> np.ndarray:
    """Concatenation of ``sequences`` independent walks seeded from ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).generate_state(sequences)
    from dataclasses import replace
    return np.concatenate([generate_sequence(replace(config, seed=int(s))) for s in seeds])


def bone_lengths(poses: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    e = np.array(skeleton.edges)
    return np.linalg.norm(poses[..., e[:, 1], :] - poses[..., e[:, 0], :], axis=-1)


def project(pose, camera: CameraModel = CameraModel()) -> np.ndarray:
    """Project ``(..., n, 3)`` to ``(..., n, 2)``."""
    pose = np.asarray(pose, dtype=float)
    xy = pose[..., :2]
    if camera.kind == "weak-perspective":
        depth = (pose[..., 2] + camera.depth_offset).mean(axis=-1, keepdims=True)
        if (depth <= 0).any():
            raise ValueError("weak-perspective projection needs positive mean depth")
        xy = xy / depth[..., None]
    return xy * camera.scale + np.asarray(camera.principal_point, dtype=float)


def corrupt_heatmaps(stack, noise_sigma: float = 0.0, occlusion_prob: float = 0.0, rng=None) -> np.ndarray:
    """Signal-dependent pixel noise plus random flattening of whole maps.

    Each cell gets Gaussian noise with std ``noise_sigma * sqrt(h * peak)``
    (``peak`` = map maximum), truncated at zero; the background stays clean
    while the blob is distorted. With probability ``occlusion_prob`` a map is
    mixed with a uniform map of equal mass by a factor drawn from U(0, 1).
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    H = np.array(stack, dtype=float)
    if noise_sigma == 0 and occlusion_prob == 0:
        return H
    rng = make_rng(rng if rng is not None else 0)
    if noise_sigma > 0:
        peak = H.max(axis=(-2, -1), keepdims=True)
        std = noise_sigma * np.sqrt(np.clip(H, 0, None) * peak)
        H = np.clip(H + std * rng.standard_normal(H.shape), 0.0, None)
    if occlusion_prob > 0:
        lead = H.shape[:-2]
        hit = rng.random(lead) < occlusion_prob
        f = rng.random(lead) * hit
        mass = H.sum(axis=(-2, -1), keepdims=True)
        uniform = mass / (H.shape[-1] * H.shape[-2])
        H = (1 - f[..., None, None]) * H + f[..., None, None] * uniform
    return H
