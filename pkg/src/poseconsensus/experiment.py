"""Desk-scale experiments on synthetic data: ablations and group-size sweeps.

Every variant trains from the same data and seeds with the same epoch budget;
only the component under study changes.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .estimator import ConsensusPoseEstimator
from .evaluation import mpjpe_protocol1, mpjpe_protocol2
from .heatmap import HeatmapConfig, ToyRefiner, peak_scale, render_gaussian
from .lifter import consensus_poses, e2e_forward, finetune_e2e
from .rng import stage_seed
from .synth import H36M_NAMES, SyntheticConfig, corrupt_heatmaps, generate_dataset, generate_sequence, heatmap_camera, project

ABLATION_VARIANTS = ("full", "w/o L_e2e", "w/o l21", "w/o L_aggre", "Random Selection")
ABLATION_COLUMNS = ("variant", "n_t", "mpjpe_p1", "mpjpe_p2", "mpjpe_p2_rigid", "delta_p1")


@dataclass(frozen=True)
class ExperimentConfig:
    frames: int = 1000
    sequences: int = 4
    test_frames: int = 1000
    angle_walk_sigma: float = 0.3
    limb_correlation: float = 0.8
    angle_limit: float = 0.9
    n_g: int = 10
    m_g: int = 3
    lambda_: float = 3.0
    hidden: int = 64
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    dropout_rate: float = 0.1
    objective: str = "l21"
    heatmaps: bool = False
    heatmap_size: int = 64
    sigma2: float = 3.0
    noise_sigma: float = 0.02
    occlusion_prob: float = 0.0
    heatmap_frames: int = 200
    e2e_epochs: int = 1
    seed: int = 0


@dataclass
class Dataset:
    train3d: np.ndarray
    train2d: np.ndarray
    test3d: np.ndarray
    test2d: np.ndarray
    train_heatmaps: np.ndarray | None = None
    test_heatmaps: np.ndarray | None = None

    @property
    def heatmap_test3d(self) -> np.ndarray:
        return self.test3d[: len(self.test_heatmaps)]


def make_dataset(cfg: ExperimentConfig) -> Dataset:
    """Train and held-out sequences from independent seeds, projected to pixel units.

    With ``cfg.heatmaps`` the first ``heatmap_frames`` frames of each split
    also get corrupted unit-peak heatmaps.
    """
    synth = SyntheticConfig(frames=cfg.frames, angle_walk_sigma=cfg.angle_walk_sigma,
                            limb_correlation=cfg.limb_correlation, angle_limit=cfg.angle_limit,
                            seed=stage_seed(cfg.seed, "synth.train"))
    train3d = generate_dataset(synth, cfg.sequences)
    test3d = generate_sequence(replace(synth, frames=cfg.test_frames, seed=stage_seed(cfg.seed, "synth.test")))
    camera = heatmap_camera(cfg.heatmap_size)
    ds = Dataset(train3d, project(train3d, camera), test3d, project(test3d, camera))
    if cfg.heatmaps:
        hm = HeatmapConfig(cfg.heatmap_size, cfg.heatmap_size, cfg.sigma2)
        k = cfg.heatmap_frames

        def maps(pose2d, stage):
            clean = render_gaussian(pose2d[:k], hm)
            noisy = corrupt_heatmaps(clean, cfg.noise_sigma, cfg.occlusion_prob, rng=stage_seed(cfg.seed, stage))
            return noisy * peak_scale(hm)

        ds.train_heatmaps = maps(ds.train2d, "heatmaps.train")
        ds.test_heatmaps = maps(ds.test2d, "heatmaps.test")
    return ds


def make_estimator(cfg: ExperimentConfig, **overrides) -> ConsensusPoseEstimator:
    params = dict(n_g=cfg.n_g, m_g=cfg.m_g, lambda_=cfg.lambda_, hidden=cfg.hidden, epochs=cfg.epochs,
                  batch_size=cfg.batch_size, learning_rate=cfg.learning_rate, dropout_rate=cfg.dropout_rate,
                  objective=cfg.objective, similarity_frames=cfg.frames, seed=cfg.seed)
    if overrides.get("n_g") == len(H36M_NAMES) and "n_t" not in overrides:
        overrides["n_t"] = 1
    params.update(overrides)
    return ConsensusPoseEstimator(**params)


def predict_heatmaps(est: ConsensusPoseEstimator, refiner: ToyRefiner, heatmaps) -> np.ndarray:
    """Full 3D poses from unit-peak heatmaps through refiner, soft-argmax, lifters and consensus."""
    hyp, _ = e2e_forward(refiner, est.bank_, heatmaps, est.groups_, est.shared_lifter)
    g = est.groups_
    hyp = hyp.transpose(1, 0, 2).reshape(len(heatmaps), g.n_t, g.n_g, 3)
    return consensus_poses(hyp, g, est.objective, system=est.system_)


def _scores(pred, gt) -> dict:
    return {
        "mpjpe_p1": float(np.mean(mpjpe_protocol1(pred, gt))),
        "mpjpe_p2": float(np.mean(mpjpe_protocol2(pred, gt, with_scale=True))),
        "mpjpe_p2_rigid": float(np.mean(mpjpe_protocol2(pred, gt, with_scale=False))),
    }


def evaluate_estimator(est, ds: Dataset, refiner: ToyRefiner | None = None) -> dict:
    """Held-out scores; through the heatmap path when the dataset has heatmaps."""
    if ds.test_heatmaps is not None:
        refiner = refiner or ToyRefiner.identity_like(ds.test3d.shape[1])
        return _scores(predict_heatmaps(est, refiner, ds.test_heatmaps), ds.heatmap_test3d)
    return _scores(est.predict(ds.test2d), ds.test3d)


@dataclass
class AblationTable:
    rows: list = field(default_factory=list)  # dicts keyed by ABLATION_COLUMNS

    def to_csv(self) -> str:
        out = [",".join(ABLATION_COLUMNS)]
        for r in self.rows:
            out.append(",".join(r["variant"] if c == "variant" else str(r[c]) if c == "n_t" else f"{r[c]:.9g}"
                                for c in ABLATION_COLUMNS))
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {"columns": list(ABLATION_COLUMNS), "rows": self.rows}

    def delta(self, variant: str) -> float:
        return next(r["delta_p1"] for r in self.rows if r["variant"] == variant)


def ablation_run(cfg: ExperimentConfig, dataset: Dataset | None = None) -> AblationTable:
    """Train the full method and each ablated variant; report MPJPE and deltas to the full method.

    Without heatmaps there is nothing to fine-tune end to end, so "w/o L_e2e"
    coincides with "full" and its delta is exactly 0.
    """
    ds = dataset or make_dataset(cfg)
    fits = {}
    base = make_estimator(cfg).fit(ds.train2d, ds.train3d)
    fits["w/o L_e2e"] = (base, None)
    if ds.train_heatmaps is not None:
        tuned = copy.deepcopy(base)
        refiner = ToyRefiner.identity_like(ds.train3d.shape[1])
        k = len(ds.train_heatmaps)
        finetune_e2e(tuned.bank_, refiner, ds.train_heatmaps, ds.train2d[:k], ds.train3d[:k], tuned.groups_,
                     tuned.train_config(), epochs=cfg.e2e_epochs,
                     hm_config=HeatmapConfig(cfg.heatmap_size, cfg.heatmap_size, cfg.sigma2))
        fits["full"] = (tuned, refiner)
    else:
        fits["full"] = (base, None)
    fits["w/o l21"] = (make_estimator(cfg, objective="l1").fit(ds.train2d, ds.train3d), None)
    fits["w/o L_aggre"] = (make_estimator(cfg, use_aggregation_loss=False).fit(ds.train2d, ds.train3d), None)
    fits["Random Selection"] = (make_estimator(cfg, grouping="random", n_t=base.groups_.n_t)
                                .fit(ds.train2d, ds.train3d), None)

    table = AblationTable()
    scores = {v: evaluate_estimator(est, ds, ref) for v, (est, ref) in fits.items()}
    ref_p1 = scores["full"]["mpjpe_p1"]
    for v in ABLATION_VARIANTS:
        est = fits[v][0]
        table.rows.append({"variant": v, "n_t": int(est.groups_.n_t), **scores[v],
                           "delta_p1": scores[v]["mpjpe_p1"] - ref_p1})
    return table


def ng_sweep(cfg: ExperimentConfig, values, dataset: Dataset | None = None) -> list[dict]:
    """Held-out MPJPE for each group size; ``n_g`` equal to the joint count means one whole-body lifter."""
    ds = dataset or make_dataset(cfg)
    rows = []
    for n_g in values:
        est = make_estimator(cfg, n_g=int(n_g)).fit(ds.train2d, ds.train3d)
        rows.append({"n_g": int(n_g), "n_t": int(est.groups_.n_t), **evaluate_estimator(est, ds)})
    return rows


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
