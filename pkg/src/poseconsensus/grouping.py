"""Data-driven joint-group selection from trajectory similarity.

Joints whose trajectories stay close to each other over a training sequence
tend to end up in the same group: the first member of a group is drawn
uniformly and every further member is drawn with probability proportional to

    w_i = exp(-lambda / (2 n_g) * sum_{i' in group} s_{ii'})

where ``s_{ii'}`` is the summed squared distance between joints ``i`` and
``i'`` over the sequence. Groups are drawn until every joint has been covered
at least ``m_g`` times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_poses
from .core import GroupSet, JointGroup
from .rng import make_rng


class EmptySequenceError(ValueError):
    pass


class NonTerminationError(RuntimeError):
    """Group sampling hit ``max_groups`` before reaching the coverage target."""


@dataclass(frozen=True)
class GroupingConfig:
    n_g: int
    m_g: int = 10
    lambda_: float = 10.0
    seed: int = 0
    max_groups: int | None = None
    dedup: bool = False
    # hard group count; bypasses the coverage loop (the n_t=1 baseline)
    n_t: int | None = None

    def validate(self, n: int) -> None:
        if not 1 <= self.n_g <= n:
            raise ValueError(f"n_g must be in [1, {n}], got {self.n_g}")
        if self.m_g < 1:
            raise ValueError("m_g must be >= 1")
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if self.max_groups is not None and self.max_groups < math.ceil(self.m_g * n / self.n_g):
            raise ValueError("max_groups is below the coverage lower bound ceil(m_g * n / n_g)")
        if self.n_t is not None and self.n_t < 1:
            raise ValueError("n_t must be >= 1")


def trajectory_similarity(sequence, i: int, i2: int) -> float:
    """Sum over frames of the squared distance between joints ``i`` and ``i2``."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 2:
        seq = seq[None]
    if seq.shape[0] == 0:
        raise EmptySequenceError("similarity needs at least one frame")
    n = seq.shape[1]
    if not (0 <= i < n and 0 <= i2 < n):
        raise IndexError(f"joint index out of range for {n} joints")
    return float(((seq[:, i] - seq[:, i2]) ** 2).sum())


def similarity_matrix(sequence, stride: int = 1, normalize: bool = True) -> np.ndarray:
    """All pairwise trajectory similarities.

    With ``normalize`` the matrix is divided by its mean off-diagonal entry, so
    ``lambda`` acts on a dimensionless scale independent of units and sequence
    length.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 2:
        seq = seq[None]
    if seq.shape[0] == 0:
        raise EmptySequenceError("similarity needs at least one frame")
    seq = seq[::stride]
    diff = seq[:, :, None, :] - seq[:, None, :, :]
    s = (diff ** 2).sum(axis=(0, 3))
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 0.0)
    if normalize:
        n = s.shape[0]
        off = s.sum() / max(n * (n - 1), 1)
        if off > 0:
            s = s / off
    return s


def group_weights(sim: np.ndarray, partial_group, lambda_: float, n_g: int) -> np.ndarray:
    members = list(partial_group.indices if isinstance(partial_group, JointGroup) else partial_group)
    sim = np.asarray(sim, dtype=float)
    w = np.exp(-lambda_ / (2.0 * n_g) * sim[:, members].sum(axis=1))
    w[members] = 0.0
    return w


def sample_group(sim: np.ndarray, config: GroupingConfig, rng, group_id: int = 0) -> JointGroup:
    rng = make_rng(rng)
    n = sim.shape[0]
    members = [int(rng.integers(n))]
    while len(members) < config.n_g:
        w = group_weights(sim, members, config.lambda_, config.n_g)
        total = w.sum()
        if not total > 0:
            # every candidate weight underflowed: fall back to uniform over non-members
            w = np.ones(n)
            w[members] = 0.0
            total = w.sum()
        members.append(int(rng.choice(n, p=w / total)))
    return JointGroup(tuple(members), group_id)


def select_groups(sim: np.ndarray, config: GroupingConfig) -> GroupSet:
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    config.validate(n)
    rng = make_rng(config.seed)
    max_groups = config.max_groups or max(100 * math.ceil(config.m_g * n / config.n_g), 1000)
    groups: list[JointGroup] = []
    seen = set()
    coverage = np.zeros(n, dtype=int)

    def more():
        if config.n_t is not None:
            return len(groups) < config.n_t
        return coverage.min() < config.m_g

    draws = 0
    while more():
        if draws >= max_groups:
            raise NonTerminationError(f"coverage {config.m_g} not reached after {max_groups} draws")
        draws += 1
        g = sample_group(sim, config, rng, len(groups))
        if config.dedup and frozenset(g.indices) in seen:
            continue
        seen.add(frozenset(g.indices))
        groups.append(g)
        coverage[list(g.indices)] += 1
    return GroupSet(tuple(groups), n, config.n_g, config.m_g, config.lambda_, config.seed)


def random_groups(n: int, config: GroupingConfig) -> GroupSet:
    """Uniform-random groups with the same coverage loop (the ablation baseline)."""
    return select_groups(np.zeros((n, n)), GroupingConfig(
        n_g=config.n_g, m_g=config.m_g, lambda_=0.0, seed=config.seed,
        max_groups=config.max_groups, dedup=config.dedup, n_t=config.n_t))


class GroupSelector(BaseEstimator):
    """Fit joint groups on a 3D training sequence ``(N, n, 3)``.

    Attributes after ``fit``: ``similarity_`` and ``groups_`` (a GroupSet).
    ``strategy="random"`` ignores the data apart from its joint count.
    """

    def __init__(self, n_g: int = 10, m_g: int = 10, lambda_: float = 10.0, seed: int = 0,
                 strategy: str = "similarity", stride: int = 1, n_t: int | None = None, dedup: bool = False):
        self.n_g = n_g
        self.m_g = m_g
        self.lambda_ = lambda_
        self.seed = seed
        self.strategy = strategy
        self.stride = stride
        self.n_t = n_t
        self.dedup = dedup

    def fit(self, X, y=None):
        X = check_poses(X, dims=3)
        cfg = GroupingConfig(self.n_g, self.m_g, self.lambda_, self.seed, n_t=self.n_t, dedup=self.dedup)
        if self.strategy == "similarity":
            self.similarity_ = similarity_matrix(X, stride=self.stride)
            self.groups_ = select_groups(self.similarity_, cfg)
        elif self.strategy == "random":
            self.similarity_ = None
            self.groups_ = random_groups(X.shape[1], cfg)
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        return self
