"""Per-group 2D-to-3D lifting networks, their losses and RMSProp training.

All networks of a group set share one architecture, so their parameters are
stacked on a leading "network" axis and evaluated with batched matmuls:

    input dense (2 n_g -> H)
    2 x residual block: [dense H->H, norm, leaky ReLU, dropout] x 2 + skip
    output dense (H -> 3 n_g)

Inputs are group-centred 2D coordinates and outputs group-centred 3D
coordinates; both are standardised with statistics fitted on the training
set, and the output standardisation is undone inside the network so every
loss is measured in data units.

``norm`` selects the normalisation layer: ``"batch"`` (batch statistics in
training, running averages at eval), ``"frozen"`` (per-feature
standardisation with statistics recomputed from the whole training set once
per epoch and held fixed in between, which keeps tiny batches exact and
differentiable) or ``"none"``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import GroupSet, center_group
from .consensus import ADMMSettings, ConsensusSystem, aggregate
from .evaluation import mpjpe_protocol1
from .heatmap import HeatmapConfig, heatmap_loss, soft_argmax, soft_argmax_backward
from .rng import make_rng

log = logging.getLogger(__name__)

N_BLOCKS = 2
LAYERS_PER_BLOCK = 2
BN_EPS = 1e-5


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_decay: float = 0.96  # multiplicative per epoch, applied continuously per step
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    norm: str = "auto"  # auto | batch | frozen | none
    residual: bool = True
    max_norm: float | None = None
    shared_lifter: bool = False
    # "per_network": a shared lifter gets the same steps x batch as each
    # per-group lifter; "total": it sees every (sample, group) pair per epoch
    shared_budget: str = "per_network"
    use_aggregation_loss: bool = True
    aggregation_objective: str = "l21"
    consensus_iters: int = 200
    alpha: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 < self.rmsprop_rho < 1:
            raise ValueError("rmsprop_rho must be in (0, 1)")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.norm not in ("auto", "batch", "frozen", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.shared_budget not in ("per_network", "total"):
            raise ValueError(f"unknown shared_budget {self.shared_budget!r}")

    @property
    def resolved_norm(self) -> str:
        if self.norm == "auto":
            return "batch" if self.batch_size >= 32 else "frozen"
        return self.norm


def _layer_names():
    for b in range(N_BLOCKS):
        for l in range(LAYERS_PER_BLOCK):
            yield f"b{b}l{l}"


class LifterBank:
    """``P`` lifting networks with identical shapes, parameters stacked on axis 0.

    ``params`` holds trainable arrays; ``buffers`` holds normalisation statistics
    and the fixed input/output standardisation.
    """

    def __init__(self, P: int, d_in: int, d_out: int, hidden: int = 64, norm: str = "batch",
                 dropout_rate: float = 0.5, leaky_slope: float = 0.01, residual: bool = True, seed=0):
        self.P, self.d_in, self.d_out, self.hidden = P, d_in, d_out, hidden
        self.norm = norm
        self.dropout_rate = dropout_rate
        self.leaky_slope = leaky_slope
        self.residual = residual
        rng = make_rng(seed)
        H = hidden

        def dense(fan_in, fan_out):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, (P, fan_in, fan_out)), np.zeros((P, fan_out))

        p = {}
        p["W_in"], p["b_in"] = dense(d_in, H)
        for name in _layer_names():
            p[f"W_{name}"], p[f"b_{name}"] = dense(H, H)
            if norm != "none":
                p[f"gamma_{name}"] = np.ones((P, H))
                p[f"beta_{name}"] = np.zeros((P, H))
        p["W_out"], p["b_out"] = dense(H, d_out)
        self.params = p
        self.buffers = {
            "x_mean": np.zeros((P, d_in)), "x_std": np.ones((P, d_in)),
            "y_mean": np.zeros((P, d_out)), "y_std": np.ones((P, d_out)),
        }
        for name in _layer_names():
            self.buffers[f"mean_{name}"] = np.zeros((P, H))
            self.buffers[f"var_{name}"] = np.ones((P, H))

    # -- forward / backward -------------------------------------------------

    def _leaky(self, z):
        return np.where(z > 0, z, self.leaky_slope * z)

    def forward(self, x, train: bool = False, rng=None, freeze_stats: bool = False):
        """``x``: ``(P, B, d_in)``. Returns ``(y, cache)`` with ``y`` ``(P, B, d_out)``.

        ``freeze_stats`` disables running-average updates of batch-norm.
        """
        p, buf = self.params, self.buffers
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[0] != self.P or x.shape[2] != self.d_in:
            raise ValueError(f"expected input of shape ({self.P}, B, {self.d_in}), got {x.shape}")
        cache = {"x": x}
        xs = (x - buf["x_mean"][:, None]) / buf["x_std"][:, None]
        cache["xs"] = xs
        h = xs @ p["W_in"] + p["b_in"][:, None]
        drop = train and self.dropout_rate > 0
        if drop:
            rng = make_rng(rng if rng is not None else 0)
        for b in range(N_BLOCKS):
            skip = h
            for l in range(LAYERS_PER_BLOCK):
                name = f"b{b}l{l}"
                c = {"h_in": h}
                z = h @ p[f"W_{name}"] + p[f"b_{name}"][:, None]
                if self.norm == "none":
                    a_pre = z
                else:
                    if self.norm == "batch" and train:
                        mu = z.mean(axis=1)
                        var = z.var(axis=1)
                        if not freeze_stats:
                            buf[f"mean_{name}"] = 0.9 * buf[f"mean_{name}"] + 0.1 * mu
                            buf[f"var_{name}"] = 0.9 * buf[f"var_{name}"] + 0.1 * var
                        c["batch_stats"] = True
                    else:
                        mu, var = buf[f"mean_{name}"], buf[f"var_{name}"]
                        c["batch_stats"] = False
                    inv = 1.0 / np.sqrt(var + BN_EPS)
                    zn = (z - mu[:, None]) * inv[:, None]
                    c["zn"], c["inv"] = zn, inv
                    a_pre = zn * p[f"gamma_{name}"][:, None] + p[f"beta_{name}"][:, None]
                c["a_pre"] = a_pre
                a = self._leaky(a_pre)
                if drop:
                    keep = 1.0 - self.dropout_rate
                    mask = (rng.random(a.shape) < keep) / keep
                    a = a * mask
                    c["mask"] = mask
                cache[name] = c
                h = a
            if self.residual:
                h = h + skip
        cache["h_last"] = h
        ys = h @ p["W_out"] + p["b_out"][:, None]
        y = ys * buf["y_std"][:, None] + buf["y_mean"][:, None]
        return y, cache

    def backward(self, dy, cache) -> tuple[dict, np.ndarray]:
        """Gradients of a scalar loss w.r.t. parameters and the raw input, given ``dL/dy``."""
        p, buf = self.params, self.buffers
        g = {}
        dys = dy * buf["y_std"][:, None]
        h = cache["h_last"]
        g["W_out"] = h.transpose(0, 2, 1) @ dys
        g["b_out"] = dys.sum(axis=1)
        dh = dys @ p["W_out"].transpose(0, 2, 1)
        for b in reversed(range(N_BLOCKS)):
            dskip = dh if self.residual else 0.0
            for l in reversed(range(LAYERS_PER_BLOCK)):
                name = f"b{b}l{l}"
                c = cache[name]
                da = dh
                if "mask" in c:
                    da = da * c["mask"]
                da_pre = da * np.where(c["a_pre"] > 0, 1.0, self.leaky_slope)
                if self.norm == "none":
                    dz = da_pre
                else:
                    zn, inv = c["zn"], c["inv"]
                    g[f"gamma_{name}"] = (da_pre * zn).sum(axis=1)
                    g[f"beta_{name}"] = da_pre.sum(axis=1)
                    dzn = da_pre * p[f"gamma_{name}"][:, None]
                    if c["batch_stats"]:
                        dz = inv[:, None] * (dzn - dzn.mean(axis=1, keepdims=True)
                                             - zn * (dzn * zn).mean(axis=1, keepdims=True))
                    else:
                        dz = dzn * inv[:, None]
                h_in = c["h_in"]
                g[f"W_{name}"] = h_in.transpose(0, 2, 1) @ dz
                g[f"b_{name}"] = dz.sum(axis=1)
                dh = dz @ p[f"W_{name}"].transpose(0, 2, 1)
            dh = dh + dskip
        g["W_in"] = cache["xs"].transpose(0, 2, 1) @ dh
        g["b_in"] = dh.sum(axis=1)
        dxs = dh @ p["W_in"].transpose(0, 2, 1)
        dx = dxs / buf["x_std"][:, None]
        return g, dx

    # -- statistics -------------------------------------------------------------

    def fit_standardization(self, x, y):
        """Input/output standardisation from ``(P, N, d)`` training arrays."""
        self.buffers["x_mean"] = x.mean(axis=1)
        self.buffers["x_std"] = np.maximum(x.std(axis=1), 1e-8)
        self.buffers["y_mean"] = y.mean(axis=1)
        self.buffers["y_std"] = np.maximum(y.std(axis=1), 1e-8)

    def refresh_frozen_stats(self, x, chunk: int = 4096):
        """Recompute per-layer statistics over the full training input (norm="frozen")."""
        if self.norm not in ("frozen", "batch"):
            return
        p, buf = self.params, self.buffers
        xs = (x - buf["x_mean"][:, None]) / buf["x_std"][:, None]
        h = xs @ p["W_in"] + p["b_in"][:, None]
        for b in range(N_BLOCKS):
            skip = h
            for l in range(LAYERS_PER_BLOCK):
                name = f"b{b}l{l}"
                z = h @ p[f"W_{name}"] + p[f"b_{name}"][:, None]
                mu, var = z.mean(axis=1), z.var(axis=1)
                buf[f"mean_{name}"], buf[f"var_{name}"] = mu, var
                zn = (z - mu[:, None]) / np.sqrt(var + BN_EPS)[:, None]
                h = self._leaky(zn * p[f"gamma_{name}"][:, None] + p[f"beta_{name}"][:, None])
            if self.residual:
                h = h + skip

    def predict(self, x, chunk: int = 8192) -> np.ndarray:
        out = [self.forward(x[:, s:s + chunk])[0] for s in range(0, x.shape[1], chunk)]
        return np.concatenate(out, axis=1)

    def state_dict(self) -> dict:
        d = {f"param.{k}": v for k, v in self.params.items()}
        d.update({f"buffer.{k}": v for k, v in self.buffers.items()})
        return d

    def load_state_dict(self, d: dict) -> None:
        for k, v in d.items():
            kind, name = k.split(".", 1)
            target = self.params if kind == "param" else self.buffers
            if name in target and target[name].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {target[name].shape}")
            target[name] = np.array(v, dtype=float)


# -- losses -----------------------------------------------------------------------


def lifting_loss(predictions, targets, grad: bool = False):
    """Sum of squared errors over samples and groups."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    r = predictions - targets
    loss = float((r ** 2).sum())
    return (loss, 2.0 * r) if grad else loss


def aggregation_loss(consensus, predictions, groups: GroupSet, grad: bool = False):
    """Disagreement between the group-centred consensus and group-centred predictions.

    ``consensus``: ``(..., n, 3)``; ``predictions``: ``(..., n_t, n_g, 3)`` or
    ``(..., n_t, 3 n_g)``. The consensus is a constant: the gradient is w.r.t.
    the predictions only.
    """
    consensus = np.asarray(consensus, dtype=float)
    preds = np.asarray(predictions, dtype=float)
    flat = preds.shape[-1] != 3
    if flat:
        preds = preds.reshape(preds.shape[:-1] + (groups.n_g, 3))
    idx = groups.index_array
    if idx.max() >= consensus.shape[-2]:
        raise ValueError("group index exceeds the consensus joint count")
    target = center_group(consensus[..., idx, :])
    r = center_group(preds) - target
    loss = float((r ** 2).sum())
    if not grad:
        return loss
    g = 2.0 * r
    return loss, g.reshape(predictions.shape) if flat else g


def combined_loss(heatmap_term: float, lifting_term: float, aggregation_term: float, alpha: float) -> float:
    return alpha * heatmap_term + lifting_term + aggregation_term


# -- optimiser ---------------------------------------------------------------------


@dataclass
class OptimizerState:
    acc: dict = field(default_factory=dict)
    step: int = 0


def exponential_lr(config: TrainConfig, step: int, steps_per_epoch: int) -> float:
    return config.learning_rate * config.lr_decay ** (step / max(steps_per_epoch, 1))


def rmsprop_step(params: dict, grads: dict, state: OptimizerState, config: TrainConfig,
                 lr: float | None = None) -> None:
    """In-place RMSProp update of ``params``; ``lr`` defaults to ``config.learning_rate``."""
    lr = config.learning_rate if lr is None else lr
    rho, eps = config.rmsprop_rho, config.rmsprop_eps
    for k, gk in grads.items():
        acc = state.acc.get(k)
        if acc is None:
            acc = np.zeros_like(gk)
        acc = rho * acc + (1.0 - rho) * gk * gk
        state.acc[k] = acc
        params[k] = params[k] - lr * gk / np.sqrt(acc + eps)
        if config.max_norm is not None and k.startswith("W_"):
            norms = np.linalg.norm(params[k], axis=-2, keepdims=True)
            params[k] = params[k] * np.minimum(1.0, config.max_norm / np.maximum(norms, 1e-12))
    state.step += 1


# -- data plumbing -----------------------------------------------------------------


def group_inputs(pose2d, groups: GroupSet) -> np.ndarray:
    """``(N, n, 2)`` -> ``(n_t, N, 2 n_g)`` group-centred inputs."""
    part = center_group(np.asarray(pose2d, dtype=float)[:, groups.index_array, :])
    return part.reshape(part.shape[0], groups.n_t, -1).transpose(1, 0, 2)


def group_targets(pose3d, groups: GroupSet) -> np.ndarray:
    """``(N, n, 3)`` -> ``(n_t, N, 3 n_g)`` group-centred targets."""
    part = center_group(np.asarray(pose3d, dtype=float)[:, groups.index_array, :])
    return part.reshape(part.shape[0], groups.n_t, -1).transpose(1, 0, 2)


def to_bank_layout(arr: np.ndarray, shared: bool) -> np.ndarray:
    """``(n_t, N, d)`` -> bank input; a shared bank sees all groups as one batch."""
    if shared:
        return arr.reshape(1, -1, arr.shape[-1])
    return arr


def from_bank_layout(arr: np.ndarray, n_t: int, shared: bool) -> np.ndarray:
    if shared:
        return arr.reshape(n_t, -1, arr.shape[-1])
    return arr


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, L_lifting, L_aggre, val_mpjpe)

    def to_csv(self) -> str:
        lines = ["epoch,L_lifting,L_aggre,val_mpjpe"]
        lines += [f"{e},{a:.9g},{b:.9g},{c:.9g}" for e, a, b, c in self.rows]
        return "\n".join(lines) + "\n"


def make_bank(groups: GroupSet, config: TrainConfig, seed=None) -> LifterBank:
    P = 1 if config.shared_lifter else groups.n_t
    return LifterBank(P, 2 * groups.n_g, 3 * groups.n_g, config.hidden, config.resolved_norm,
                      config.dropout_rate, config.leaky_slope, config.residual,
                      seed=config.seed if seed is None else seed)


def predict_groups(bank: LifterBank, pose2d, groups: GroupSet, shared: bool) -> np.ndarray:
    """``(N, n, 2)`` -> ``(N, n_t, n_g, 3)`` partial 3D hypotheses."""
    x = to_bank_layout(group_inputs(pose2d, groups), shared)
    y = from_bank_layout(bank.predict(x), groups.n_t, shared)
    return y.transpose(1, 0, 2).reshape(y.shape[1], groups.n_t, groups.n_g, 3)


def consensus_poses(hyp, groups: GroupSet, objective: str = "l21", max_iter: int = 2000,
                    system: ConsensusSystem | None = None, tol: float = 1e-8) -> np.ndarray:
    settings = ADMMSettings(objective=objective, max_iter=max_iter, tol_primal=tol, tol_dual=tol)
    return aggregate(hyp, groups, settings, system=system)


def train_lifters(pose2d, pose3d, groups: GroupSet, config: TrainConfig = TrainConfig(),
                  val: tuple | None = None, bank: LifterBank | None = None) -> tuple[LifterBank, TrainLog]:
    """Stage-1 training on ``L_lifting + L_aggre`` (the latter optional).

    The consensus pose used by ``L_aggre`` is recomputed from the current
    predictions at the start of every epoch and treated as a constant.
    ``val`` = ``(pose2d, pose3d)`` adds a held-out MPJPE column to the log.
    """
    pose2d = np.asarray(pose2d, dtype=float)
    pose3d = np.asarray(pose3d, dtype=float)
    N = pose2d.shape[0]
    if N == 0:
        raise ValueError("empty training set")
    if pose3d.shape[0] != N:
        raise ValueError("2D and 3D training sets differ in length")
    shared = config.shared_lifter
    rng = make_rng(config.seed)
    if bank is None:
        bank = make_bank(groups, config, seed=rng)
    x_all = group_inputs(pose2d, groups)  # (n_t, N, 2n_g)
    y_all = group_targets(pose3d, groups)
    xb_all = to_bank_layout(x_all, shared)
    bank.fit_standardization(xb_all, to_bank_layout(y_all, shared))
    system = ConsensusSystem(groups)
    state = OptimizerState()
    bs = min(config.batch_size, N)
    steps_per_epoch = int(np.ceil(N / bs))
    log_ = TrainLog()
    n_t = groups.n_t
    # a per-network budget for the shared lifter: bs random (sample, group) pairs per step
    pair_mode = shared and config.shared_budget == "per_network" and n_t > 1
    pairs, cursor = np.zeros(0, dtype=int), 0

    for epoch in range(config.epochs):
        if bank.norm == "frozen" or (bank.norm == "batch" and epoch == 0):
            bank.refresh_frozen_stats(xb_all)
        cons_targets = None
        if config.use_aggregation_loss:
            hyp = predict_groups(bank, pose2d, groups, shared)
            cons = consensus_poses(hyp, groups, config.aggregation_objective,
                                   max_iter=config.consensus_iters, system=system, tol=1e-6)
            cons_targets = group_targets(cons, groups)  # (n_t, N, 3n_g) centred
        tot_lift = tot_aggr = 0.0
        for s in range(steps_per_epoch):
            if pair_mode:
                if cursor + bs > len(pairs):
                    pairs, cursor = rng.permutation(n_t * N), 0
                gi, idx = np.divmod(pairs[cursor:cursor + bs], N)
                cursor += bs
                xb, yt = x_all[gi, idx][None], y_all[gi, idx][None]
                ct = None if cons_targets is None else cons_targets[gi, idx][None]
            else:
                if s == 0:
                    order = rng.permutation(N)
                idx = order[s * bs:(s + 1) * bs]
                xb, yt = to_bank_layout(x_all[:, idx], shared), y_all[:, idx]
                ct = None if cons_targets is None else cons_targets[:, idx]
            yhat, cache = bank.forward(xb, train=True, rng=rng)
            if not pair_mode:
                yhat = from_bank_layout(yhat, n_t, shared)
            B = len(idx)
            l_lift, d = lifting_loss(yhat, yt, grad=True)
            tot_lift += l_lift
            if ct is not None:
                # predictions and targets are group-centred blocks; the centring
                # projection is applied to the prediction inside the loss
                pred_blocks = yhat.reshape(yhat.shape[0], B, groups.n_g, 3)
                r = center_group(pred_blocks) - ct.reshape(pred_blocks.shape)
                tot_aggr += float((r ** 2).sum())
                d = d + center_group(2.0 * r).reshape(d.shape)
            d = d / B
            grads, _ = bank.backward(d if pair_mode else to_bank_layout(d, shared), cache)
            lr = exponential_lr(config, state.step, steps_per_epoch)
            rmsprop_step(bank.params, grads, state, config, lr)
        if not np.isfinite(tot_lift) or not np.isfinite(tot_aggr):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        val_err = np.nan
        if val is not None:
            hyp = predict_groups(bank, val[0], groups, shared)
            val_err = float(np.mean(mpjpe_protocol1(consensus_poses(hyp, groups, system=system), val[1])))
        # per-sample losses summed over groups in both modes
        seen = bs * steps_per_epoch / n_t if pair_mode else N
        log_.rows.append((epoch, tot_lift / seen, tot_aggr / seen, val_err))
        log.debug("epoch %d: L_lifting=%.4g L_aggre=%.4g val=%.4g", epoch, tot_lift / seen, tot_aggr / seen, val_err)
    if bank.norm == "frozen":
        bank.refresh_frozen_stats(xb_all)
    return bank, log_


# -- stage 2: end-to-end fine-tuning ----------------------------------------------


def _coords_grad(dx: np.ndarray, groups: GroupSet, n: int) -> np.ndarray:
    """Pull bank-input gradients ``(n_t, B, 2 n_g)`` back to joint coordinates ``(B, n, 2)``."""
    n_t, B, _ = dx.shape
    blocks = center_group(dx.reshape(n_t, B, groups.n_g, 2))  # centring is self-adjoint
    out = np.zeros((B, n, 2))
    np.add.at(out, (slice(None), groups.index_array.ravel()), blocks.transpose(1, 0, 2, 3).reshape(B, -1, 2))
    return out


def e2e_forward(refiner, bank: LifterBank, heatmaps, groups: GroupSet, shared: bool,
                train: bool = False, rng=None):
    """Corrupted unit-peak heatmaps -> refined maps -> soft-argmax -> partial 3D poses."""
    Y, rcache = refiner.forward(heatmaps)
    coords = soft_argmax(Y)
    xb = to_bank_layout(group_inputs(coords, groups), shared)
    if train:
        yhat, bcache = bank.forward(xb, train=True, rng=rng)
    else:
        yhat, bcache = bank.predict(xb), None
    return from_bank_layout(yhat, groups.n_t, shared), (Y, rcache, coords, bcache)


def e2e_losses(refiner, bank: LifterBank, heatmaps, pose2d, pose3d, groups: GroupSet, config: TrainConfig,
               cons_targets=None, hm_config=None, rng=None):
    """``L_e2e = alpha * L_2d + L_lifting + L_aggre`` summed over the batch, with gradients.

    Returns ``(terms, bank_grads, refiner_grads)`` where ``terms`` is
    ``(L_2d, L_lifting, L_aggre)``. ``cons_targets`` are group-centred
    consensus blocks ``(n_t, B, 3 n_g)`` or ``None`` to drop ``L_aggre``.
    """
    hm_config = hm_config or HeatmapConfig()
    shared = config.shared_lifter
    n = pose2d.shape[1]
    yhat, (Y, rcache, _, bcache) = e2e_forward(refiner, bank, heatmaps, groups, shared, train=True, rng=rng)
    l2d, dY = heatmap_loss(Y, pose2d, hm_config, grad=True, peak_normalized=True)
    l_lift, d = lifting_loss(yhat, group_targets(pose3d, groups), grad=True)
    l_aggr = 0.0
    if cons_targets is not None:
        r = center_group(yhat.reshape(groups.n_t, -1, groups.n_g, 3)) - cons_targets.reshape(
            groups.n_t, -1, groups.n_g, 3)
        l_aggr = float((r ** 2).sum())
        d = d + center_group(2.0 * r).reshape(d.shape)
    bank_grads, dx = bank.backward(to_bank_layout(d, shared), bcache)
    dcoords = _coords_grad(from_bank_layout(dx, groups.n_t, shared), groups, n)
    dY = config.alpha * dY + soft_argmax_backward(Y, dcoords)
    ref_grads, _ = refiner.backward(dY, rcache)
    return (l2d, l_lift, l_aggr), bank_grads, ref_grads


def finetune_e2e(bank: LifterBank, refiner, heatmaps, pose2d, pose3d, groups: GroupSet,
                 config: TrainConfig = TrainConfig(), epochs: int = 1, hm_config=None):
    """Stage-2 fine-tuning of the refiner and all lifters on ``L_e2e``.

    ``heatmaps`` are corrupted unit-peak maps ``(N, n, l_y, l_x)`` whose
    rasters match ``pose2d`` (1-based pixel units). The consensus used by
    ``L_aggre`` is refreshed from the current pipeline once per epoch.
    Returns a list of per-epoch ``(epoch, L_2d, L_lifting, L_aggre)`` means.
    """
    heatmaps = np.asarray(heatmaps, dtype=float)
    pose2d = np.asarray(pose2d, dtype=float)
    pose3d = np.asarray(pose3d, dtype=float)
    N = heatmaps.shape[0]
    if N == 0:
        raise ValueError("empty training set")
    if not (pose2d.shape[0] == pose3d.shape[0] == N):
        raise ValueError("heatmaps, 2D and 3D poses differ in length")
    shared = config.shared_lifter
    rng = make_rng(config.seed + 1)
    system = ConsensusSystem(groups)
    bank_state, ref_state = OptimizerState(), OptimizerState()
    bs = min(config.batch_size, N)
    steps = int(np.ceil(N / bs))
    rows = []
    for epoch in range(epochs):
        cons_targets = None
        if config.use_aggregation_loss:
            hyp, _ = e2e_forward(refiner, bank, heatmaps, groups, shared)
            hyp = hyp.transpose(1, 0, 2).reshape(N, groups.n_t, groups.n_g, 3)
            cons = consensus_poses(hyp, groups, config.aggregation_objective,
                                   max_iter=config.consensus_iters, system=system, tol=1e-6)
            cons_targets = group_targets(cons, groups)
        order = rng.permutation(N)
        tot = np.zeros(3)
        for s in range(steps):
            idx = order[s * bs:(s + 1) * bs]
            ct = None if cons_targets is None else cons_targets[:, idx]
            terms, bg, rg = e2e_losses(refiner, bank, heatmaps[idx], pose2d[idx], pose3d[idx], groups,
                                       config, cons_targets=ct, hm_config=hm_config, rng=rng)
            tot += terms
            B = len(idx)
            lr = exponential_lr(config, bank_state.step, steps)
            rmsprop_step(bank.params, {k: v / B for k, v in bg.items()}, bank_state, config, lr)
            rparams = refiner.params()
            rmsprop_step(rparams, {k: v / B for k, v in rg.items()}, ref_state, replace(config, max_norm=None), lr)
            refiner.kernel, refiner.bias = rparams["kernel"], rparams["bias"]
        if not np.isfinite(tot).all():
            raise TrainingDivergedError(f"non-finite end-to-end loss at epoch {epoch}")
        rows.append((epoch, *(tot / N)))
    if bank.norm == "frozen":
        x = to_bank_layout(group_inputs(e2e_forward(refiner, bank, heatmaps, groups, shared)[1][2], groups), shared)
        bank.refresh_frozen_stats(x)
    return rows
