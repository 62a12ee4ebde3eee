"""End-to-end estimator: joint groups -> per-group lifters -> robust consensus."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_poses
from .consensus import ConsensusSystem
from .core import GroupSet
from .evaluation import mpjpe_protocol1
from .grouping import GroupSelector
from .lifter import TrainConfig, consensus_poses, predict_groups, train_lifters


class ConsensusPoseEstimator(BaseEstimator):
    """Lift 2D poses ``(N, n, 2)`` to root-centred 3D poses ``(N, n, 3)``.

    ``fit(X2d, X3d)`` selects joint groups from the 3D training poses (or uses
    ``groups`` when given), trains one lifter per group and keeps the consensus
    solver ready. ``predict`` lifts each group and aggregates the partial
    hypotheses. ``score`` is the negative protocol-1 MPJPE.

    ``similarity_frames`` limits group selection to the first frames of the
    training set (one designated sequence); ``None`` uses everything.
    """

    def __init__(self, n_g: int = 10, m_g: int = 10, lambda_: float = 10.0, grouping: str = "similarity",
                 n_t: int | None = None, groups: GroupSet | None = None, similarity_frames: int | None = None,
                 similarity_stride: int = 1, hidden: int = 64, epochs: int = 30, batch_size: int = 64,
                 learning_rate: float = 1e-3, lr_decay: float = 0.96, rmsprop_rho: float = 0.9,
                 dropout_rate: float = 0.5, leaky_slope: float = 0.01, norm: str = "auto",
                 residual: bool = True, max_norm: float | None = None, shared_lifter: bool = False,
                 shared_budget: str = "per_network", use_aggregation_loss: bool = True,
                 objective: str = "l21", consensus_iters: int = 200,
                 alpha: float = 100.0, rmsprop_eps: float = 1e-8, seed: int = 0):
        self.n_g = n_g
        self.m_g = m_g
        self.lambda_ = lambda_
        self.grouping = grouping
        self.n_t = n_t
        self.groups = groups
        self.similarity_frames = similarity_frames
        self.similarity_stride = similarity_stride
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.rmsprop_rho = rmsprop_rho
        self.dropout_rate = dropout_rate
        self.leaky_slope = leaky_slope
        self.norm = norm
        self.residual = residual
        self.max_norm = max_norm
        self.shared_lifter = shared_lifter
        self.shared_budget = shared_budget
        self.use_aggregation_loss = use_aggregation_loss
        self.objective = objective
        self.consensus_iters = consensus_iters
        self.alpha = alpha
        self.rmsprop_eps = rmsprop_eps
        self.seed = seed

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            hidden=self.hidden, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, lr_decay=self.lr_decay, rmsprop_rho=self.rmsprop_rho,
            dropout_rate=self.dropout_rate, leaky_slope=self.leaky_slope, norm=self.norm,
            residual=self.residual, max_norm=self.max_norm, shared_lifter=self.shared_lifter,
            shared_budget=self.shared_budget,
            use_aggregation_loss=self.use_aggregation_loss, aggregation_objective=self.objective,
            consensus_iters=self.consensus_iters, alpha=self.alpha, rmsprop_eps=self.rmsprop_eps,
            seed=self.seed,
        )

    def _select_groups(self, X3d) -> GroupSet:
        if self.groups is not None:
            return self.groups
        seq = X3d if self.similarity_frames is None else X3d[: self.similarity_frames]
        sel = GroupSelector(n_g=self.n_g, m_g=self.m_g, lambda_=self.lambda_, seed=self.seed,
                            strategy=self.grouping, stride=self.similarity_stride, n_t=self.n_t)
        return sel.fit(seq).groups_

    def fit(self, X, y, validation=None):
        X = check_poses(X, dims=2, name="X")
        y = check_poses(y, dims=3, n_joints=X.shape[1], name="y")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of samples")
        self.groups_ = self._select_groups(y)
        if self.groups_.n != X.shape[1]:
            raise ValueError("groups were built for a different joint count")
        self.n_joints_ = X.shape[1]
        self.bank_, self.train_log_ = train_lifters(X, y, self.groups_, self.train_config(), val=validation)
        self.system_ = ConsensusSystem(self.groups_)
        return self

    def predict_groups(self, X) -> np.ndarray:
        """Partial hypotheses ``(N, n_t, n_g, 3)``."""
        check_is_fitted(self, "bank_")
        X = check_poses(X, dims=2, n_joints=self.n_joints_)
        return predict_groups(self.bank_, X, self.groups_, self.shared_lifter)

    def predict(self, X) -> np.ndarray:
        hyp = self.predict_groups(X)
        return consensus_poses(hyp, self.groups_, self.objective, system=self.system_)

    def score(self, X, y) -> float:
        return -float(np.mean(mpjpe_protocol1(self.predict(X), check_poses(y, dims=3))))
