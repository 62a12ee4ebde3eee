"""Consensus-based 3D human pose estimation from overlapping partial hypotheses.

Joint groups are sampled from motion similarity, one small network lifts each
group's 2D joints to a partial 3D pose, and the partial poses (each known only
up to a translation) are fused by an l2,1 (or l1) ADMM consensus.
"""

from .consensus import ADMMSettings, ConsensusAggregator, aggregate, mean_aggregate, solve, solve_batch
from .core import GroupSet, JointGroup, Skeleton
from .estimator import ConsensusPoseEstimator
from .evaluation import mpjpe_protocol1, mpjpe_protocol2, procrustes_align
from .grouping import GroupingConfig, GroupSelector, select_groups, similarity_matrix
from .heatmap import GaussianRenderer, SoftArgmax, render_gaussian, soft_argmax
from .lifter import TrainConfig, train_lifters
from .synth import SyntheticConfig, generate_dataset, generate_sequence, h36m_skeleton

__version__ = "0.1.0"

__all__ = [
    "ADMMSettings", "ConsensusAggregator", "ConsensusPoseEstimator", "GaussianRenderer", "GroupSelector",
    "GroupSet", "GroupingConfig", "JointGroup", "Skeleton", "SoftArgmax", "SyntheticConfig", "TrainConfig",
    "aggregate", "generate_dataset", "generate_sequence", "h36m_skeleton", "mean_aggregate", "mpjpe_protocol1",
    "mpjpe_protocol2", "procrustes_align", "render_gaussian", "select_groups", "similarity_matrix",
    "soft_argmax", "solve", "solve_batch", "train_lifters",
]
