"""Command-line entry point: ``mmwinr <subcommand> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
All randomness comes from ``--seed``; outputs do not depend on ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import cube as cube_mod
from . import hypernet, inr, metrics, sim
from .fit import FitConfig, fit_instance

log = logging.getLogger("mmwinr")


def _ints(text: str, n: int | None = None) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
    return vals


def _dims(text: str):
    return _ints(text, 4)


def _factors(text: str):
    return _ints(text, 3)


def _radar_config(path) -> sim.RadarConfig:
    return sim.config_from_dict(sim.load_json(path)) if path else sim.RadarConfig()


def _plan(args) -> inr.SamplePlan:
    if args.mode == "grid":
        return inr.SamplePlan.grid()
    if args.mode == "super":
        return inr.SamplePlan.super_res(*args.factors)
    return inr.SamplePlan.augment(args.radius, args.seed)


# --- subcommands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    scene = sim.scene_from_dict(sim.load_json(args.scene))
    traj = sim.trajectory_from_dict(sim.load_json(args.traj))
    cfg = _radar_config(args.config)
    cube = sim.simulate(scene, traj, cfg, seed=args.seed, threads=args.threads)
    cube_mod.cube_write(cube, args.out)
    log.info("wrote %s dims=%s", args.out, cube.dims)
    return 0


def cmd_activity(args) -> int:
    params = json.loads(args.params) if args.params else {}
    traj = sim.activity_program(args.name, params, args.frames, seed=args.seed)
    sim.save_json(sim.trajectory_to_dict(traj), args.out)
    return 0


def cmd_fit(args) -> int:
    cube = cube_mod.cube_read(args.cube)
    arch = inr.InrArch(args.freqs, args.width, args.depth, cube.dims[0], args.variant)
    cfg = FitConfig(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, w_ssim=args.w_ssim, w_mse=args.w_mse,
        w_perceptual=args.w_perceptual, activity_fraction=args.activity_fraction, seed=args.seed,
    )

    def progress(epoch, terms):
        if epoch % 50 == 0:
            log.info("epoch %d total %.5f", epoch, terms.total)

    params, report = fit_instance(cube, arch, cfg, progress)
    inr.params_write(params, args.out)
    if args.report:
        report.write_csv(args.report)
    print(f"cssim={report.final_cssim:.4f} psnr={report.final_psnr:.2f} mse={report.final_mse:.6g}")
    return 0


def cmd_sample(args) -> int:
    params = inr.params_read(args.params)
    out = inr.sample(params, _plan(args), args.dims, threads=args.threads)
    cube_mod.cube_write(out, args.out)
    log.info("wrote %s dims=%s", args.out, out.dims)
    return 0


def cmd_metrics(args) -> int:
    a, b = cube_mod.cube_read(args.a), cube_mod.cube_read(args.b)
    cfg = _radar_config(args.config) if args.config else None
    rep = metrics.evaluate(a, b, args.pc_threshold, cfg, args.plane)
    row = rep.as_row()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            w.writeheader()
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def _manifest(path):
    doc = sim.load_json(path)
    entries = doc["items"] if isinstance(doc, dict) else doc
    base = Path(path).parent
    items = []
    for entry in entries:
        if isinstance(entry, dict):
            entry = (entry["scene"], entry["trajectory"], entry["cube"])
        scene_p, traj_p, cube_p = (base / p for p in entry)
        items.append(
            (
                sim.scene_from_dict(sim.load_json(scene_p)),
                sim.trajectory_from_dict(sim.load_json(traj_p)),
                cube_mod.cube_read(cube_p),
            )
        )
    return items


def cmd_hyper_train(args) -> int:
    dataset = _manifest(args.dataset)
    if not dataset:
        raise ValueError(f"{args.dataset}: empty manifest")
    arch = inr.InrArch(args.freqs, args.width, args.depth, dataset[0][2].dims[0])
    config = hypernet.HyperConfig(
        arch=arch, latent=args.latent, d_model=args.d_model, head_width=args.head_width,
        n_tracks=dataset[0][1].n_tracks,
    )
    tcfg = hypernet.HyperTrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)

    def progress(epoch, loss):
        if epoch % 50 == 0:
            log.info("epoch %d loss %.5f", epoch, loss)

    net, report = hypernet.hyper_train(dataset, config, tcfg, progress)
    hypernet.weights_write(net, args.out)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(report.epoch_loss):
                w.writerow([i, repr(float(v))])
    print(" ".join(f"item{i}_cssim={v:.4f}" for i, v in enumerate(report.item_cssim)))
    return 0


def cmd_hyper_gen(args) -> int:
    net = hypernet.weights_read(args.weights)
    scene = sim.scene_from_dict(sim.load_json(args.scene))
    traj = sim.trajectory_from_dict(sim.load_json(args.traj))
    out = hypernet.generate_signal(scene, traj, net, _plan(args), dims=args.dims, threads=args.threads)
    cube_mod.cube_write(out, args.out)
    log.info("wrote %s dims=%s", args.out, out.dims)
    return 0


def cmd_export(args) -> int:
    cube = cube_mod.cube_read(args.cube)
    cfg = _radar_config(args.config) if args.config else None
    plane = cube_mod.project_spectrogram(cube, args.plane, args.frame, cfg)
    if str(args.out).lower().endswith(".csv"):
        cube_mod.write_csv(plane, args.out)
    else:
        cube_mod.write_pgm(plane, args.out)
    return 0


def cmd_info(args) -> int:
    if args.params:
        arch = inr.params_read(args.params).arch
    elif args.frames:
        arch = inr.InrArch(n_frames=args.frames)
    else:
        arch = inr.InrArch()
    dims = cube_mod.cube_read(args.cube).dims if args.cube else args.dims
    n_theta, n_mod, total = inr.param_count(arch)
    if dims:
        points, _, ratio = inr.compression_ratio(dims, arch)
        print(f"points={points} params={total} ratio={ratio:.2f}")
    else:
        print(f"params={total} theta={n_theta} modulations={n_mod}")
    return 0


# --- parser ---------------------------------------------------------------------------


def _common(suppress: bool) -> argparse.ArgumentParser:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=default(os.cpu_count() or 1), help="worker cap (default: all cores)")
    p.add_argument("--verbose", "-v", action="store_true", default=default(False))
    return p


def _sample_flags(p):
    p.add_argument("--mode", choices=("grid", "super", "augment"), default="grid")
    p.add_argument("--factors", type=_factors, default=(1, 1, 1), help="super-resolution factors n_r,n_d,n_a")
    p.add_argument("--radius", type=int, default=0, help="augmentation radius r in 0..7 (eighths of a bin)")


def _arch_flags(p):
    p.add_argument("--freqs", type=int, default=8)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--depth", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwinr", description=__doc__.splitlines()[0], parents=[_common(False)])
    sub = parser.add_subparsers(dest="command", metavar="command")
    common = _common(True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "render a cube from scene and trajectory JSON")
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--config", help="radar config JSON (default: built-in radar)")
    p.add_argument("--out", required=True)

    p = add("activity", cmd_activity, "write a scripted trajectory JSON")
    p.add_argument("--name", required=True, choices=sim.ACTIVITIES)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--params", help="JSON object of activity parameters")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit one INR to a cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16384)
    p.add_argument("--w-ssim", type=float, default=0.5)
    p.add_argument("--w-mse", type=float, default=0.3)
    p.add_argument("--w-perceptual", type=float, default=0.2)
    p.add_argument("--activity-fraction", type=float, default=0.5)
    p.add_argument("--variant", choices=inr.VARIANTS, default="modulated")
    _arch_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="per-epoch loss CSV")

    p = add("sample", cmd_sample, "evaluate a fitted INR on a grid")
    p.add_argument("--params", required=True)
    p.add_argument("--dims", type=_dims, required=True, help="base cube dims T,R,D,A")
    _sample_flags(p)
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "compare cube a against reference b")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--pc-threshold", type=float, help="point-cloud threshold in dB below peak")
    p.add_argument("--plane", choices=[k.value for k in cube_mod.PlaneKind], default="rd")
    p.add_argument("--config", help="radar config JSON for antenna layout")
    p.add_argument("--out", help="CSV report")

    p = add("hyper-train", cmd_hyper_train, "train the hypernetwork on a dataset manifest")
    p.add_argument("--dataset", required=True, help="JSON list of [scene, trajectory, cube] paths")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16384)
    p.add_argument("--latent", type=int, default=64)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--head-width", type=int, default=256)
    _arch_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="per-epoch loss CSV")

    p = add("hyper-gen", cmd_hyper_gen, "generate a cube from scene and trajectory")
    p.add_argument("--weights", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--dims", type=_dims, help="base dims T,R,D,A (default: training dims)")
    _sample_flags(p)
    p.add_argument("--out", required=True)

    p = add("export-spectrogram", cmd_export, "write one spectrogram frame as PGM or CSV")
    p.add_argument("--cube", required=True)
    p.add_argument("--plane", choices=[k.value for k in cube_mod.PlaneKind], default="rd")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--config", help="radar config JSON for antenna layout")
    p.add_argument("--out", required=True, help=".pgm or .csv")

    p = add("info", cmd_info, "parameter count and compression ratio")
    p.add_argument("--params", help="params file (default: default architecture)")
    p.add_argument("--frames", type=int, help="frames of the default architecture")
    p.add_argument("--dims", type=_dims, help="cube dims T,R,D,A")
    p.add_argument("--cube", help="take the dims from a cube file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("mmwinr: error: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.threads < 1:
        print("mmwinr: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (OSError, ValueError, IndexError, KeyError, FloatingPointError) as exc:
        print(f"mmwinr {args.command}: error: {exc}", file=sys.stderr)
        return 1
