"""Skeleton topology, joint groups and the small pose operators shared by every stage.

Poses are plain numpy arrays of shape ``(n, d)`` (``d`` = 2 or 3) or batches of
shape ``(N, n, d)``. When a pose is flattened the order is joint-major:
``(x_1, y_1, z_1, x_2, ...)``. Joint indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InvalidGroupError(ValueError):
    """A joint group references joints that do not exist or repeats a joint."""


@dataclass(frozen=True)
class Skeleton:
    """Joint names, root and a parent->child edge list forming a tree."""

    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    root_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        n = len(self.joint_names)
        if len(set(self.joint_names)) != n:
            raise ValueError("joint names must be unique")
        if not 0 <= self.root_index < n:
            raise ValueError(f"root_index {self.root_index} out of range for {n} joints")
        if len(self.edges) != n - 1:
            raise ValueError(f"a tree over {n} joints has {n - 1} edges, got {len(self.edges)}")
        parent = {}
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) out of range")
            if b in parent or b == self.root_index:
                raise ValueError(f"joint {b} has more than one parent")
            parent[b] = a
        # every joint must reach the root
        for j in range(n):
            seen = set()
            k = j
            while k != self.root_index:
                if k in seen or k not in parent:
                    raise ValueError(f"joint {j} is not connected to the root")
                seen.add(k)
                k = parent[k]

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def parents(self) -> np.ndarray:
        """Parent index per joint, -1 for the root."""
        p = np.full(self.joint_count, -1, dtype=int)
        for a, b in self.edges:
            p[b] = a
        return p

    def topological_order(self) -> list[int]:
        children: dict[int, list[int]] = {}
        for a, b in self.edges:
            children.setdefault(a, []).append(b)
        order, stack = [], [self.root_index]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(children.get(j, [])))
        return order

    def to_dict(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "names": list(self.joint_names),
            "root_index": self.root_index,
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        sk = cls(tuple(d["names"]), tuple(tuple(e) for e in d["edges"]), int(d.get("root_index", 0)))
        if "joint_count" in d and int(d["joint_count"]) != sk.joint_count:
            raise ValueError("joint_count does not match the number of names")
        return sk


@dataclass(frozen=True)
class JointGroup:
    indices: tuple[int, ...]
    id: int = 0

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise InvalidGroupError("empty joint group")
        if len(set(idx)) != len(idx):
            raise InvalidGroupError(f"repeated joint in group {idx}")
        if min(idx) < 0:
            raise InvalidGroupError(f"negative joint index in group {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def validate(self, n: int) -> None:
        if max(self.indices) >= n:
            raise InvalidGroupError(f"group {self.indices} references a joint >= {n}")


@dataclass(frozen=True)
class GroupSet:
    """Sampled joint groups plus the parameters that produced them."""

    groups: tuple[JointGroup, ...]
    n: int
    n_g: int
    m_g: int = 1
    lambda_: float = 0.0
    seed: int | None = None
    coverage: tuple[int, ...] = field(default=())

    def __post_init__(self):
        groups = tuple(g if isinstance(g, JointGroup) else JointGroup(tuple(g), k)
                       for k, g in enumerate(self.groups))
        for g in groups:
            g.validate(self.n)
            if len(g) != self.n_g:
                raise InvalidGroupError(f"group {g.indices} does not have n_g={self.n_g} joints")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "coverage", tuple(int(c) for c in group_coverage(groups, self.n)))

    @property
    def n_t(self) -> int:
        return len(self.groups)

    @property
    def index_array(self) -> np.ndarray:
        """``(n_t, n_g)`` integer array of group indices."""
        return np.array([g.indices for g in self.groups], dtype=int)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_g": self.n_g,
            "m_g": self.m_g,
            "lambda": self.lambda_,
            "seed": self.seed,
            "groups": [list(g.indices) for g in self.groups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSet":
        groups = tuple(JointGroup(tuple(g), k) for k, g in enumerate(d["groups"]))
        return cls(groups, int(d["n"]), int(d["n_g"]), int(d.get("m_g", 1)),
                   float(d.get("lambda", 0.0)), d.get("seed"))

    @classmethod
    def from_indices(cls, groups: Sequence[Sequence[int]], n: int, **kw) -> "GroupSet":
        groups = [tuple(g) for g in groups]
        return cls(tuple(JointGroup(g, k) for k, g in enumerate(groups)), n, len(groups[0]), **kw)


def group_coverage(groups: Sequence[JointGroup], n: int) -> np.ndarray:
    cov = np.zeros(n, dtype=int)
    for g in groups:
        cov[list(g.indices)] += 1
    return cov


def _indices(group) -> list[int]:
    return list(group.indices) if isinstance(group, JointGroup) else [int(i) for i in group]


def restrict_pose(pose: np.ndarray, group) -> np.ndarray:
    """Rows of ``pose`` (or of each pose in a batch) selected in group order."""
    pose = np.asarray(pose)
    idx = _indices(group)
    n = pose.shape[-2]
    if any(i < 0 or i >= n for i in idx):
        raise InvalidGroupError(f"group {idx} out of range for a {n}-joint pose")
    return pose[..., idx, :]


def selection_matrix(group, n: int) -> np.ndarray:
    """``n x n_g`` matrix whose column k is one-hot at the k-th group index."""
    idx = _indices(group)
    if any(i < 0 or i >= n for i in idx):
        raise InvalidGroupError(f"group {idx} out of range for n={n}")
    E = np.zeros((n, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    return E


def center_group(partial: np.ndarray) -> np.ndarray:
    """Subtract the mean row; works on a single ``(n_g, d)`` block or batches of them."""
    partial = np.asarray(partial, dtype=float)
    return partial - partial.mean(axis=-2, keepdims=True)


def root_center(pose: np.ndarray, skeleton: Skeleton | int = 0) -> np.ndarray:
    root = skeleton.root_index if isinstance(skeleton, Skeleton) else int(skeleton)
    pose = np.asarray(pose, dtype=float)
    return pose - pose[..., root:root + 1, :]


def flatten_pose(pose: np.ndarray) -> np.ndarray:
    """Joint-major flattening of the last two axes."""
    pose = np.asarray(pose)
    return pose.reshape(pose.shape[:-2] + (-1,))


def unflatten_pose(vec: np.ndarray, dims: int) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.shape[-1] % dims:
        raise ValueError(f"vector length {vec.shape[-1]} is not a multiple of {dims}")
    return vec.reshape(vec.shape[:-1] + (vec.shape[-1] // dims, dims))
