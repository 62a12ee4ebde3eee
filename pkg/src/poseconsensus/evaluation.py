"""MPJPE under root alignment (protocol 1) and Procrustes alignment (protocol 2)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_poses
from .core import Skeleton, root_center


class DegeneratePoseError(ValueError):
    pass


@dataclass
class EvalReport:
    per_sample: np.ndarray
    per_joint: np.ndarray
    protocol: int
    alignment: str
    mean: float = field(init=False)

    def __post_init__(self):
        self.per_sample = np.asarray(self.per_sample, dtype=float)
        self.mean = float(self.per_sample.mean()) if self.per_sample.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "alignment": self.alignment,
            "mean_mpjpe": self.mean,
            "samples": int(self.per_sample.size),
            "per_joint": [float(v) for v in self.per_joint],
        }

    def to_csv(self) -> str:
        return "sample,mpjpe\n" + "".join(f"{i},{v:.9g}\n" for i, v in enumerate(self.per_sample))


def _pair(pred, gt):
    pred = check_poses(pred, dims=3, name="pred")
    gt = check_poses(gt, dims=3, name="gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    return pred, gt


def joint_errors_protocol1(pred, gt, skeleton: Skeleton | int = 0) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(root_center(pred, skeleton) - root_center(gt, skeleton), axis=-1)


def mpjpe_protocol1(pred, gt, skeleton: Skeleton | int = 0):
    """Mean joint distance after moving both root joints to the origin.

    Returns a float for a single pose and an ``(N,)`` array for a batch.
    """
    single = np.ndim(pred) == 2
    e = joint_errors_protocol1(pred, gt, skeleton).mean(axis=-1)
    return float(e[0]) if single else e


@dataclass
class Alignment:
    aligned: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    translation: np.ndarray


def procrustes_align(pred, gt, with_scale: bool = True) -> Alignment:
    """Best rotation (det +1), translation and optional scale mapping ``pred`` onto ``gt``.

    Row-vector convention: ``aligned = s * pred @ R + t``.
    """
    single = np.ndim(pred) == 2
    pred, gt = _pair(pred, gt)
    mp = pred.mean(axis=1, keepdims=True)
    mg = gt.mean(axis=1, keepdims=True)
    A = pred - mp
    B = gt - mg
    if (np.linalg.norm(B, axis=(1, 2)) < 1e-12).any():
        raise DegeneratePoseError("ground-truth pose has all joints coincident")
    M = A.transpose(0, 2, 1) @ B
    U, S, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    D = np.ones((len(d), 3))
    D[:, 2] = d
    R = (U * D[:, None, :]) @ Vt
    if with_scale:
        normA = (A ** 2).sum(axis=(1, 2))
        s = np.where(normA > 0, (S * D).sum(axis=1) / np.where(normA > 0, normA, 1.0), 1.0)
    else:
        s = np.ones(len(d))
    t = mg - s[:, None, None] * (mp @ R)
    aligned = s[:, None, None] * (pred @ R) + t
    if single:
        return Alignment(aligned[0], R[0], s[0], t[0, 0])
    return Alignment(aligned, R, s, t[:, 0])


def joint_errors_protocol2(pred, gt, with_scale: bool = True) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    al = procrustes_align(pred, gt, with_scale).aligned
    return np.linalg.norm(al - gt, axis=-1)


def mpjpe_protocol2(pred, gt, with_scale: bool = True):
    single = np.ndim(pred) == 2
    e = joint_errors_protocol2(pred, gt, with_scale).mean(axis=-1)
    return float(e[0]) if single else e


def evaluate(pred, gt, protocol: int = 1, skeleton: Skeleton | int = 0, rigid: bool = False) -> EvalReport:
    if protocol == 1:
        e = joint_errors_protocol1(pred, gt, skeleton)
        kind = "root"
    elif protocol == 2:
        e = joint_errors_protocol2(pred, gt, with_scale=not rigid)
        kind = "rigid" if rigid else "similarity"
    else:
        raise ValueError(f"unknown protocol {protocol}")
    return EvalReport(e.mean(axis=1), e.mean(axis=0), protocol, kind)
