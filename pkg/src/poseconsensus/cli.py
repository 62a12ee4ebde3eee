"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data error (missing or
malformed input), 3 numerical failure. ``POSECONSENSUS_OUTPUT_DIR`` and
``POSECONSENSUS_THREADS`` override the output directory and thread count;
explicit flags win over both.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, resolve

log = logging.getLogger("poseconsensus")

ENV_OUTPUT = "POSECONSENSUS_OUTPUT_DIR"
ENV_THREADS = "POSECONSENSUS_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code(exc: BaseException) -> int:
    from .grouping import NonTerminationError

    if isinstance(exc, StageError):
        return exit_code(exc.cause)
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError, NonTerminationError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, ValueError, KeyError, json.JSONDecodeError)):
        return EXIT_DATA
    return EXIT_NUMERIC if isinstance(exc, RuntimeError) else EXIT_DATA


# -- helpers ------------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return resolve({"version": 1})
    try:
        doc = io.read_json(path)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return resolve(doc)


def output_dir(flag, cfg: dict | None = None, default: str = "poseconsensus_out") -> Path:
    if flag:
        return Path(flag)
    if os.environ.get(ENV_OUTPUT):
        return Path(os.environ[ENV_OUTPUT])
    if cfg and cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    return Path(default)


def thread_count(flag) -> int:
    if flag is not None:
        n = flag
    else:
        raw = os.environ.get(ENV_THREADS, "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"{ENV_THREADS}={raw!r} is not an integer") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def write_text(path, text: str) -> None:
    with io.atomic_path(path) as tmp:
        Path(tmp).write_text(text)


def experiment_config(cfg: dict):
    from .experiment import ExperimentConfig

    s, g, t, h = cfg["synth"], cfg["grouping"], cfg["train"], cfg["heatmaps"]
    return ExperimentConfig(
        frames=s["frames"], sequences=s["sequences"], test_frames=s["test_frames"],
        angle_walk_sigma=s["angle_walk_sigma"], limb_correlation=s["limb_correlation"],
        angle_limit=s["angle_limit"], n_g=g["n_g"], m_g=g["m_g"], lambda_=g["lambda"], hidden=t["hidden"],
        epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
        dropout_rate=t["dropout_rate"], objective=cfg["admm"]["objective"], heatmaps=h["enabled"],
        heatmap_size=h["size"], sigma2=h["sigma2"], noise_sigma=h["noise_sigma"],
        occlusion_prob=h["occlusion_prob"], heatmap_frames=h["frames"], e2e_epochs=t["e2e_epochs"],
        seed=cfg["seed"],
    )


def estimator_params(cfg: dict) -> dict:
    t, g = cfg["train"], cfg["grouping"]
    return dict(
        n_g=g["n_g"], m_g=g["m_g"], lambda_=g["lambda"], grouping=g["strategy"], n_t=g["n_t"],
        similarity_frames=g["similarity_frames"], hidden=t["hidden"], epochs=t["epochs"],
        batch_size=t["batch_size"], learning_rate=t["learning_rate"], lr_decay=t["lr_decay"],
        rmsprop_rho=t["rmsprop_rho"], rmsprop_eps=t["rmsprop_eps"], dropout_rate=t["dropout_rate"],
        leaky_slope=t["leaky_slope"], norm=t["norm"], residual=t["residual"], max_norm=t["max_norm"],
        shared_lifter=t["shared_lifter"], shared_budget=t["shared_budget"],
        use_aggregation_loss=t["use_aggregation_loss"],
        objective=cfg["admm"]["objective"], consensus_iters=t["consensus_iters"], alpha=t["alpha"],
        seed=cfg["seed"],
    )


def admm_settings(cfg: dict):
    from .consensus import ADMMSettings

    a = cfg["admm"]
    return ADMMSettings(mu0=a["mu0"], mu_growth=a["mu_growth"], mu_max=a["mu_max"], tol_primal=a["tol"],
                        tol_dual=a["tol"], max_iter=a["max_iter"], objective=a["objective"])


def grouping_config(cfg: dict):
    from .grouping import GroupingConfig

    g = cfg["grouping"]
    return GroupingConfig(n_g=g["n_g"], m_g=g["m_g"], lambda_=g["lambda"], seed=cfg["seed"],
                          max_groups=g["max_groups"], dedup=g["dedup"], n_t=g["n_t"])


def select_groups_from(poses3d, cfg: dict):
    from .grouping import random_groups, select_groups, similarity_matrix

    g = cfg["grouping"]
    gc = grouping_config(cfg)
    if g["strategy"] == "random":
        return random_groups(poses3d.shape[1], gc)
    if g["strategy"] != "similarity":
        raise ConfigError(f"grouping.strategy must be 'similarity' or 'random', got {g['strategy']!r}")
    seq = poses3d if g["similarity_frames"] is None else poses3d[: g["similarity_frames"]]
    return select_groups(similarity_matrix(seq), gc)


def save_lifters(out: Path, est) -> None:
    io.write_tensors(out / "lifters.tnsr", est.bank_.state_dict())
    b = est.bank_
    io.write_json(out / "lifters.json", {
        "P": b.P, "d_in": b.d_in, "d_out": b.d_out, "hidden": b.hidden, "norm": b.norm,
        "dropout_rate": b.dropout_rate, "leaky_slope": b.leaky_slope, "residual": b.residual,
        "shared_lifter": bool(est.shared_lifter), "objective": est.objective,
        "groups": est.groups_.to_dict(),
    })


def load_lifters(model_dir: Path):
    from .core import GroupSet
    from .lifter import LifterBank

    meta = io.read_json(model_dir / "lifters.json")
    bank = LifterBank(meta["P"], meta["d_in"], meta["d_out"], meta["hidden"], meta["norm"],
                      meta["dropout_rate"], meta["leaky_slope"], meta["residual"])
    bank.load_state_dict(io.read_tensors(model_dir / "lifters.tnsr"))
    return bank, GroupSet.from_dict(meta["groups"]), meta


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, cfg: dict) -> dict:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".partial"):
            files[p.relative_to(out).as_posix()] = sha256(p)
    cfg_bytes = json.dumps({k: v for k, v in cfg.items() if k != "output_dir"}, sort_keys=True).encode()
    manifest = {"version": 1, "config_sha256": hashlib.sha256(cfg_bytes).hexdigest(), "files": files}
    io.write_json(out / "manifest.json", manifest)
    return manifest


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .heatmap import HeatmapConfig, render_gaussian
    from .synth import SyntheticConfig, corrupt_heatmaps, generate_dataset, h36m_skeleton, heatmap_camera, project

    cfg = load_config(args.config)
    s, h = cfg["synth"], cfg["heatmaps"]
    sc = SyntheticConfig(frames=s["frames"], angle_walk_sigma=s["angle_walk_sigma"],
                         limb_correlation=s["limb_correlation"], angle_limit=s["angle_limit"], seed=cfg["seed"])
    X3 = generate_dataset(sc, s["sequences"])
    x2 = project(X3, heatmap_camera(h["size"]))
    io.write_poses(args.out_3d, X3)
    io.write_poses(args.out_2d, x2)
    if args.skeleton:
        io.write_skeleton(args.skeleton, h36m_skeleton())
    if args.out_heatmaps:
        from .rng import stage_seed

        hm = render_gaussian(x2, HeatmapConfig(h["size"], h["size"], h["sigma2"]))
        hm = corrupt_heatmaps(hm, h["noise_sigma"], h["occlusion_prob"], rng=stage_seed(cfg["seed"], "heatmaps"))
        io.write_heatmaps(args.out_heatmaps, hm)
    return EXIT_OK


def cmd_groups_select(args) -> int:
    cfg = load_config(args.config)
    poses = io.read_poses(args.poses, dims=3)
    io.write_groups(args.out, select_groups_from(poses, cfg))
    return EXIT_OK


def cmd_heatmap_render(args) -> int:
    from .heatmap import HeatmapConfig, render_gaussian
    from .synth import corrupt_heatmaps

    pose2d = io.read_poses(args.poses, dims=2)
    if args.zero_based:
        pose2d = pose2d + 1.0
    hm = render_gaussian(pose2d, HeatmapConfig(args.size, args.size, args.sigma2))
    hm = corrupt_heatmaps(hm, args.noise_sigma, args.occlusion_prob, rng=args.seed)
    io.write_heatmaps(args.out, hm)
    return EXIT_OK


def cmd_heatmap_convert(args) -> int:
    from .heatmap import hard_argmax, soft_argmax

    hm = io.read_heatmaps(args.heatmaps).astype(float)
    xy = hard_argmax(hm).astype(float) if args.hard else soft_argmax(hm)
    io.write_poses(args.out, xy - 1.0 if args.zero_based else xy)
    return EXIT_OK


def write_bias(out: Path, report) -> None:
    write_text(out / "bias_norms.csv", "sample,joint,norm\n" + "".join(
        f"{k},{j},{v:.17g}\n" for k, row in enumerate(report.norms) for j, v in enumerate(row)))
    write_text(out / "bias_density.csv", "bias,density\n" + "".join(
        f"{g:.17g},{d:.17g}\n" for g, d in zip(report.grid, report.density)))
    io.write_json(out / "bias_summary.json", {
        "bandwidth": report.bandwidth, "quantiles": report.quantiles,
        "fraction_below_1px": report.fraction_below(1.0), "samples": int(report.norms.shape[0]),
    })


def cmd_heatmap_bias(args) -> int:
    from .heatmap import bias_analysis

    report = bias_analysis(io.read_heatmaps(args.heatmaps).astype(float))
    out = output_dir(args.out)
    write_bias(out, report)
    print(f"fraction of bias norms below 1 px: {report.fraction_below(1.0):.4f}")
    return EXIT_OK


def cmd_lift_train(args) -> int:
    from .estimator import ConsensusPoseEstimator

    cfg = load_config(args.config)
    groups = io.read_groups(args.groups)
    x2 = io.read_poses(args.poses_2d, dims=2)
    X3 = io.read_poses(args.poses_3d, dims=3)
    est = ConsensusPoseEstimator(**estimator_params(cfg), groups=groups).fit(x2, X3)
    out = output_dir(args.out, cfg)
    save_lifters(out, est)
    write_text(out / "train_log.csv", est.train_log_.to_csv())
    return EXIT_OK


def cmd_lift_eval(args) -> int:
    from .consensus import aggregate
    from .evaluation import evaluate
    from .lifter import predict_groups

    cfg = load_config(args.config)
    bank, groups, meta = load_lifters(Path(args.model))
    if args.groups is not None and io.read_groups(args.groups) != groups:
        raise ValueError("--groups does not match the groups the lifters were trained on")
    x2 = io.read_poses(args.poses_2d, dims=2)
    hyp = predict_groups(bank, x2, groups, meta["shared_lifter"])
    pred = aggregate(hyp, groups, admm_settings(cfg))
    out = output_dir(args.out, cfg)
    io.write_tensors(out / "hypotheses.tnsr", {"hypotheses": hyp})
    io.write_poses(out / "pred_3d.csv", pred)
    if args.poses_3d:
        rep = evaluate(pred, io.read_poses(args.poses_3d, dims=3), protocol=1)
        write_text(out / "eval_p1.csv", rep.to_csv())
        io.write_json(out / "eval_p1.json", rep.to_dict())
        print(f"protocol 1 MPJPE: {rep.mean:.6g}")
    return EXIT_OK


def cmd_consensus_solve(args) -> int:
    from .consensus import ADMMSettings, assemble, solve_batch

    groups = io.read_groups(args.groups)
    tensors = io.read_tensors(args.hypotheses)
    if "hypotheses" not in tensors:
        raise io.FormatError("tensor file has no 'hypotheses' entry")
    hyp = np.asarray(tensors["hypotheses"], dtype=float)
    if hyp.ndim == 3:
        hyp = hyp[None]
    settings = ADMMSettings(objective=args.objective, max_iter=args.max_iter, tol_primal=args.tol,
                            tol_dual=args.tol, fix_translations=args.fix_translations)
    sols = solve_batch(assemble(hyp, groups, fix_translations=args.fix_translations), settings)
    X = np.stack([s.X for s in sols])
    if not np.isfinite(X).all():
        raise FloatingPointError("consensus produced non-finite coordinates")
    io.write_poses(args.out, X)
    out = Path(args.out)
    diag = args.diagnostics or out.with_name(out.stem + "_diagnostics.csv")
    lines = ["sample,iterations,converged,primal,dual,objective"]
    trace = ["sample,iteration,objective,primal,dual"]
    for k, s in enumerate(sols):
        p, d = s.residual_trace[-1] if s.iterations else (np.nan, np.nan)
        lines.append(f"{k},{s.iterations},{int(s.converged)},{p:.9g},{d:.9g},{s.objective:.17g}")
        trace += [f"{k},{i},{o:.17g},{r[0]:.9g},{r[1]:.9g}"
                  for i, (o, r) in enumerate(zip(s.objective_trace, s.residual_trace))]
    write_text(diag, "\n".join(lines) + "\n")
    write_text(Path(diag).with_name(Path(diag).stem + "_trace.csv"), "\n".join(trace) + "\n")
    return EXIT_OK if all(s.converged for s in sols) or not args.strict else EXIT_NUMERIC


def cmd_eval_mpjpe(args) -> int:
    from .evaluation import evaluate

    pred = io.read_poses(args.pred, dims=3)
    gt = io.read_poses(args.gt, dims=3)
    rep = evaluate(pred, gt, protocol=args.protocol, rigid=args.rigid)
    if args.out:
        out = Path(args.out)
        write_text(out / f"eval_p{args.protocol}.csv", rep.to_csv())
        io.write_json(out / f"eval_p{args.protocol}.json", rep.to_dict())
    print(f"protocol {args.protocol} ({rep.alignment}) MPJPE: {rep.mean:.6g}")
    return EXIT_OK


def cmd_eval_ablate(args) -> int:
    from .experiment import ablation_run

    cfg = load_config(args.config)
    table = ablation_run(experiment_config(cfg))
    out = output_dir(args.out, cfg)
    write_text(out / "ablation.csv", table.to_csv())
    io.write_json(out / "ablation.json", table.to_dict())
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def pipeline_run(cfg: dict, out: Path) -> dict:
    """synth -> groups -> (heatmaps) -> train -> consensus -> eval [-> sweep]; returns the manifest."""
    import copy

    from .consensus import aggregate
    from .estimator import ConsensusPoseEstimator
    from .evaluation import evaluate
    from .experiment import make_dataset, ng_sweep, predict_heatmaps
    from .heatmap import HeatmapConfig, ToyRefiner, bias_analysis
    from .lifter import finetune_e2e
    from .synth import h36m_skeleton

    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", {k: v for k, v in cfg.items() if k != "output_dir"})
    ecfg = experiment_config(cfg)

    def stage(name, fn):
        log.info("stage %s", name)
        try:
            return fn()
        except Exception as e:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, e) from e

    def synth():
        ds = make_dataset(ecfg)
        io.write_skeleton(out / "skeleton.json", h36m_skeleton())
        for name in ("train3d", "train2d", "test3d", "test2d"):
            io.write_poses(out / f"{name[:-2]}_{name[-2:]}.csv", getattr(ds, name))
        return ds

    ds = stage("synth", synth)

    def groups():
        gs = select_groups_from(ds.train3d, cfg)
        io.write_groups(out / "groups.json", gs)
        return gs

    gs = stage("groups", groups)

    hm_cfg = HeatmapConfig(ecfg.heatmap_size, ecfg.heatmap_size, ecfg.sigma2)
    if ecfg.heatmaps:
        def heatmaps():
            io.write_heatmaps(out / "train_heatmaps.hmap", ds.train_heatmaps)
            io.write_heatmaps(out / "test_heatmaps.hmap", ds.test_heatmaps)
            write_bias(out, bias_analysis(ds.test_heatmaps))

        stage("heatmaps", heatmaps)

    def train():
        est = ConsensusPoseEstimator(**estimator_params(cfg), groups=gs).fit(ds.train2d, ds.train3d)
        write_text(out / "train_log.csv", est.train_log_.to_csv())
        refiner = None
        if ecfg.heatmaps and cfg["train"]["e2e_epochs"] > 0:
            refiner = ToyRefiner.identity_like(gs.n)
            k = len(ds.train_heatmaps)
            rows = finetune_e2e(est.bank_, refiner, ds.train_heatmaps, ds.train2d[:k], ds.train3d[:k], gs,
                                est.train_config(), epochs=cfg["train"]["e2e_epochs"], hm_config=hm_cfg)
            write_text(out / "e2e_log.csv", "epoch,L_2d,L_lifting,L_aggre\n" + "".join(
                f"{e},{a:.9g},{b:.9g},{c:.9g}\n" for e, a, b, c in rows))
            io.write_tensors(out / "refiner.tnsr", refiner.params())
        save_lifters(out, est)
        return est, refiner

    est, refiner = stage("train", train)

    def consensus():
        if ecfg.heatmaps:
            ref = refiner or ToyRefiner.identity_like(gs.n)
            e = copy.copy(est)
            e.objective = cfg["admm"]["objective"]
            pred, gt = predict_heatmaps(e, ref, ds.test_heatmaps), ds.heatmap_test3d
        else:
            hyp = est.predict_groups(ds.test2d)
            io.write_tensors(out / "hypotheses.tnsr", {"hypotheses": hyp})
            pred, gt = aggregate(hyp, gs, admm_settings(cfg), system=est.system_), ds.test3d
        if not np.isfinite(pred).all():
            raise FloatingPointError("consensus produced non-finite coordinates")
        io.write_poses(out / "pred_3d.csv", pred)
        return pred, gt

    pred, gt = stage("consensus", consensus)

    def evaluation():
        reports = {
            "protocol1": evaluate(pred, gt, protocol=1),
            "protocol2": evaluate(pred, gt, protocol=2, rigid=cfg["eval"]["rigid"]),
        }
        for name, rep in reports.items():
            write_text(out / f"eval_{name}.csv", rep.to_csv())
        io.write_json(out / "report.json", {k: r.to_dict() for k, r in reports.items()} | {"n_t": gs.n_t})
        return reports

    reports = stage("eval", evaluation)

    if cfg["sweep"]["n_g"]:
        def sweep():
            rows = ng_sweep(ecfg, cfg["sweep"]["n_g"], dataset=ds)
            write_text(out / "sweep.csv", "n_g,n_t,mpjpe_p1,mpjpe_p2,mpjpe_p2_rigid\n" + "".join(
                f"{r['n_g']},{r['n_t']},{r['mpjpe_p1']:.9g},{r['mpjpe_p2']:.9g},{r['mpjpe_p2_rigid']:.9g}\n"
                for r in rows))

        stage("sweep", sweep)

    manifest = write_manifest(out, cfg)
    log.info("protocol 1 MPJPE %.6g", reports["protocol1"].mean)
    return manifest


def cmd_pipeline_run(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(args.out, cfg)
    manifest = pipeline_run(cfg, out)
    print(f"wrote {len(manifest['files'])} files and manifest.json to {out}")
    return EXIT_OK


def cmd_plots(args) -> int:
    from .plots import emit_plots

    written = emit_plots(Path(args.results), Path(args.out) if args.out else None)
    for p in written:
        print(p)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poseconsensus", description="Consensus-based 3D pose estimation from partial hypotheses.")
    p.add_argument("--threads", type=int, default=None, help=f"BLAS threads (default 1, or ${ENV_THREADS})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out-3d", required=True)
    s.add_argument("--out-2d", required=True)
    s.add_argument("--out-heatmaps")
    s.add_argument("--skeleton", help="also write the skeleton JSON here")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("groups", help="joint-group selection").add_subparsers(dest="action", required=True,
                                                                               parser_class=_Parser)
    gs = g.add_parser("select")
    gs.add_argument("--poses", required=True, help="3D training poses (CSV)")
    gs.add_argument("--config")
    gs.add_argument("--out", required=True)
    gs.set_defaults(func=cmd_groups_select)

    h = sub.add_parser("heatmap", help="heatmap utilities").add_subparsers(dest="action", required=True,
                                                                            parser_class=_Parser)
    hr = h.add_parser("render")
    hr.add_argument("--poses", required=True, help="2D poses (CSV, 1-based raster units)")
    hr.add_argument("--out", required=True)
    hr.add_argument("--size", type=int, default=64)
    hr.add_argument("--sigma2", type=float, default=3.0)
    hr.add_argument("--noise-sigma", type=float, default=0.0)
    hr.add_argument("--occlusion-prob", type=float, default=0.0)
    hr.add_argument("--seed", type=int, default=0)
    hr.add_argument("--zero-based", action="store_true", help="input coordinates are 0-based")
    hr.set_defaults(func=cmd_heatmap_render)
    hc = h.add_parser("convert")
    hc.add_argument("--heatmaps", required=True)
    hc.add_argument("--out", required=True)
    hc.add_argument("--hard", action="store_true", help="hard argmax instead of soft-argmax")
    hc.add_argument("--zero-based", action="store_true", help="write 0-based coordinates")
    hc.set_defaults(func=cmd_heatmap_convert)
    hb = h.add_parser("bias")
    hb.add_argument("--heatmaps", required=True)
    hb.add_argument("--out")
    hb.set_defaults(func=cmd_heatmap_bias)

    lf = sub.add_parser("lift", help="train or evaluate lifters").add_subparsers(dest="action", required=True,
                                                                                  parser_class=_Parser)
    lt = lf.add_parser("train")
    lt.add_argument("--groups", required=True)
    lt.add_argument("--config")
    lt.add_argument("--poses-2d", required=True)
    lt.add_argument("--poses-3d", required=True)
    lt.add_argument("--out")
    lt.set_defaults(func=cmd_lift_train)
    le = lf.add_parser("eval")
    le.add_argument("--model", required=True, help="directory written by 'lift train'")
    le.add_argument("--groups")
    le.add_argument("--config")
    le.add_argument("--poses-2d", required=True)
    le.add_argument("--poses-3d")
    le.add_argument("--out")
    le.set_defaults(func=cmd_lift_eval)

    c = sub.add_parser("consensus", help="robust aggregation").add_subparsers(dest="action", required=True,
                                                                              parser_class=_Parser)
    cs = c.add_parser("solve")
    cs.add_argument("--groups", required=True)
    cs.add_argument("--hypotheses", required=True, help="tensor file with a 'hypotheses' (N, n_t, n_g, 3) entry")
    cs.add_argument("--out", required=True)
    cs.add_argument("--objective", choices=("l21", "l1", "fro"), default="l21")
    cs.add_argument("--max-iter", type=int, default=2000)
    cs.add_argument("--tol", type=float, default=1e-8)
    cs.add_argument("--fix-translations", action="store_true")
    cs.add_argument("--diagnostics", help="per-sample diagnostics CSV (default: <out>_diagnostics.csv)")
    cs.add_argument("--strict", action="store_true", help="exit 3 if any sample did not converge")
    cs.set_defaults(func=cmd_consensus_solve)

    e = sub.add_parser("eval", help="evaluation").add_subparsers(dest="action", required=True, parser_class=_Parser)
    em = e.add_parser("mpjpe")
    em.add_argument("--pred", required=True)
    em.add_argument("--gt", required=True)
    em.add_argument("--protocol", type=int, choices=(1, 2), default=1)
    em.add_argument("--rigid", action="store_true", help="protocol 2 without scale")
    em.add_argument("--out")
    em.set_defaults(func=cmd_eval_mpjpe)
    ea = e.add_parser("ablate")
    ea.add_argument("--config")
    ea.add_argument("--out")
    ea.set_defaults(func=cmd_eval_ablate)

    pl = sub.add_parser("pipeline", help="end-to-end run").add_subparsers(dest="action", required=True,
                                                                          parser_class=_Parser)
    pr = pl.add_parser("run")
    pr.add_argument("--config")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_pipeline_run)

    pt = sub.add_parser("plots", help="plot data and SVG renderings from a results directory")
    pt.add_argument("--results", required=True)
    pt.add_argument("--out", help="default: <results>/plots")
    pt.set_defaults(func=cmd_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=thread_count(args.threads)):
            return args.func(args)
    except Exception as e:  # noqa: BLE001 - mapped to an exit code
        code = exit_code(e)
        print(f"poseconsensus: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
