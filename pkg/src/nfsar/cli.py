"""Command-line interface: simulate, reconstruct, dataset, train, eval, bench.

Every command writes a manifest.json with the resolved configuration and
seed so a run can be reproduced bit-exactly (with --threads 1). Report
commands render matplotlib figures next to their CSV outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import autodiff as ad
from .echo import add_awgn, read_echo_file, simulate_echo, write_echo_file
from .errors import ValidationError
from .figures import (
    save_bench_figure,
    save_compare_figure,
    save_echo_figure,
    save_image_figure,
    save_training_curves,
)
from .geometry import build_aperture, perturb_positions, pose_arrays, write_pose_csv
from .metrics import write_report_csv
from .presets import PRESET_NAMES, get_preset
from .recon import bpa_reconstruct, empm_reconstruct, rma_baseline, write_image_png, write_image_raw
from .scene import ImageGrid, point_cloud, random_scene, write_scene_json
from .srvit import ModelConfig, build_model, load_model, save_model
from .train import (
    DatasetGenConfig,
    EVAL_ALGORITHMS,
    TrainConfig,
    evaluate,
    generate_record,
    generate_dataset,
    loss_log_to_csv,
    read_dataset,
    train_model,
)

_thread_limiter = None


def _apply_thread_limit(threads: int | None):
    global _thread_limiter
    if threads is None or threads <= 0:
        return
    from threadpoolctl import threadpool_limits

    _thread_limiter = threadpool_limits(limits=threads)


def _resolve_threads(args) -> int | None:
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("SAR_NUM_THREADS")
    return int(env) if env else None


def _write_manifest(out_dir: str, command: str, args: argparse.Namespace,
                    config: dict, wall_time_s: float):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "threads": _resolve_threads(args),
        "config": config,
        "wall_time_s": wall_time_s,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _require_file(path: str):
    if not os.path.exists(path):
        raise UsageError(f"input path does not exist: {path}")


class UsageError(Exception):
    pass


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except Exception as exc:
        raise UsageError(f"--size must look like 128x128, got {text!r}") from exc


def _progress(label: str):
    def cb(done, total, *extra):
        if done == total or done % max(1, total // 10) == 0:
            msg = f"  {label}: {done}/{total}"
            if extra:
                msg += f" (loss {extra[-1]:.5f})" if isinstance(extra[-1], float) else ""
            print(msg, file=sys.stderr)
    return cb


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    preset = get_preset(args.preset)
    cfg = preset.gen
    streams = np.random.SeedSequence(entropy=args.seed, spawn_key=(0,)).spawn(5)

    scene = preset.fixed_scene or random_scene(cfg.scene, streams[0])
    true_poses = build_aperture(cfg.aperture, streams[1])
    points = point_cloud(scene, cfg.grid)
    cube = simulate_echo(points, true_poses, cfg.radar, target_z=cfg.grid.z0)

    snr_db = args.snr if args.snr is not None else (
        math.inf if math.isinf(cfg.snr_range[0]) else
        float(np.random.default_rng(streams[2]).uniform(*cfg.snr_range)))
    cube = add_awgn(cube, snr_db, streams[3])

    pos_sigma = args.pos_sigma if args.pos_sigma is not None else cfg.pos_sigma
    if pos_sigma > 0:
        believed = perturb_positions(true_poses, (pos_sigma,) * 3, streams[4])
        cube = cube.with_poses(believed)

    write_echo_file(cube, os.path.join(out, "cube.sare"))
    write_scene_json(scene, os.path.join(out, "scene.json"))
    write_pose_csv(cube.poses, os.path.join(out, "poses.csv"))
    mag = np.abs(cube.data)
    mag_db = 20.0 * np.log10(mag / mag.max() + 1e-12) if mag.max() > 0 else mag
    save_echo_figure(mag_db, os.path.join(out, "echo.png"))
    _write_manifest(out, "simulate", args, {
        "preset": args.preset, "snr_db": None if math.isinf(snr_db) else snr_db,
        "pos_sigma": pos_sigma, "gen": cfg.to_dict(),
    }, time.perf_counter() - t0)
    print(f"wrote {out}/cube.sare ({len(cube.poses)} elements x {cfg.radar.n_freq} tones)")
    return 0


def cmd_reconstruct(args) -> int:
    _require_file(args.input)
    out = _out_dir(args)
    t0 = time.perf_counter()
    cube = read_echo_file(args.input)
    ny, nx = _parse_size(args.size)

    if args.fov is not None:
        ex = ey = args.fov
    else:
        tx, rx = pose_arrays(cube.poses)
        mid = (tx[:, :2] + rx[:, :2]) / 2.0
        span = mid.max(axis=0) - mid.min(axis=0)
        if span[0] <= 0 or span[1] <= 0:
            raise UsageError("aperture is degenerate in x/y; pass --fov explicitly")
        ex, ey = float(span[0]), float(span[1])
    grid = ImageGrid(nx=nx, ny=ny, extent_x=ex, extent_y=ey, z0=args.z0)

    recon_fn = {
        "empm": lambda: empm_reconstruct(cube, grid, ref_z=args.ref_z),
        "bpa": lambda: bpa_reconstruct(cube, grid),
        "rma": lambda: rma_baseline(cube, grid, ref_z=args.ref_z),
    }[args.algo]
    t_rec = time.perf_counter()
    image = recon_fn()
    recon_seconds = time.perf_counter() - t_rec

    stem = os.path.join(out, f"image_{args.algo}")
    write_image_png(image, stem + ".png")
    write_image_raw(image, stem + ".img")
    save_image_figure(image.pixels, (ex, ey), f"{args.algo.upper()} reconstruction",
                      stem + "_figure.png", annotate=f"{recon_seconds:.3f} s")
    _write_manifest(out, "reconstruct", args, {
        "input": args.input, "algo": args.algo, "size": [ny, nx],
        "fov": [ex, ey], "z0": args.z0, "ref_z": args.ref_z,
        "recon_seconds": recon_seconds,
    }, time.perf_counter() - t0)
    print(f"wrote {stem}.png / .img ({args.algo}, {recon_seconds:.3f} s)")
    return 0


def _split_layout(preset, args) -> dict[str, tuple[int, int]]:
    n_train = args.n_train if args.n_train is not None else preset.n_train
    n_val = args.n_val if args.n_val is not None else preset.n_val
    n_test = args.n_test if args.n_test is not None else preset.n_test
    layout = {}
    offset = 0
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n > 0:
            layout[name] = (offset, n)
        offset += n
    return layout


def cmd_dataset(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    preset = get_preset(args.preset)
    layout = _split_layout(preset, args)
    if not layout:
        raise UsageError("all split sizes are zero; nothing to generate")
    for name, (offset, n) in layout.items():
        path = os.path.join(out, f"{name}.sard")
        generate_dataset(path, n, preset.gen, args.seed, offset=offset,
                         progress=_progress(f"{name} records"))
        print(f"wrote {path} ({n} records)")
    doc = {
        "master_seed": args.seed,
        "preset": args.preset,
        "splits": {k: {"offset": v[0], "n": v[1]} for k, v in layout.items()},
        "config": preset.gen.to_dict(),
    }
    with open(os.path.join(out, "gen_config.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    _write_manifest(out, "dataset", args, doc, time.perf_counter() - t0)
    return 0


def cmd_train(args) -> int:
    _require_file(os.path.join(args.data, "train.sard"))
    out = _out_dir(args)
    t0 = time.perf_counter()
    preset = get_preset(args.preset)
    train_records = read_dataset(os.path.join(args.data, "train.sard"))
    val_path = os.path.join(args.data, "val.sard")
    val_records = read_dataset(val_path) if os.path.exists(val_path) else []

    tc = preset.train
    cfg = TrainConfig(
        epochs=args.epochs if args.epochs is not None else tc.epochs,
        batch_size=args.batch_size if args.batch_size is not None else tc.batch_size,
        lr=args.lr if args.lr is not None else tc.lr,
        beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps,
        seed=args.seed,
        max_steps=args.max_steps if args.max_steps is not None else tc.max_steps,
        val_interval=tc.val_interval,
    )
    weights = build_model(preset.model, seed=args.seed)
    print(f"model: {weights.param_count} parameters; "
          f"{len(train_records)} train / {len(val_records)} val records",
          file=sys.stderr)
    result = train_model(weights, train_records, val_records, cfg,
                         progress=lambda e, n, l: print(
                             f"  epoch {e}/{n}: loss {l:.5f}", file=sys.stderr))

    weights.load_arrays(result.best_arrays)
    save_model(weights, os.path.join(out, "checkpoint.srvw"),
               config_path=os.path.join(out, "model_config.json"))
    with open(os.path.join(out, "loss_log.csv"), "w", encoding="utf-8") as fh:
        fh.write(loss_log_to_csv(result.log))
    save_training_curves(result.log, os.path.join(out, "training_curves.png"))
    _write_manifest(out, "train", args, {
        "preset": args.preset, "data": args.data,
        "train_config": vars(cfg), "param_count": weights.param_count,
        "final_loss": result.final_loss, "steps": result.steps,
        "best_val_psnr": None if math.isinf(result.best_val_psnr) else result.best_val_psnr,
    }, time.perf_counter() - t0)
    print(f"final loss {result.final_loss:.5f} after {result.steps} steps; "
          f"wrote {out}/checkpoint.srvw")
    return 0


def _load_weights(checkpoint: str, model_config: str | None):
    cfg_path = model_config or os.path.join(os.path.dirname(checkpoint),
                                            "model_config.json")
    _require_file(checkpoint)
    _require_file(cfg_path)
    with open(cfg_path, "r", encoding="utf-8") as fh:
        config = ModelConfig.from_json(fh.read())
    try:
        return load_model(checkpoint, config)
    except ValidationError as exc:
        raise ValidationError(
            f"checkpoint {checkpoint} does not match config {cfg_path}: {exc}"
        ) from exc


def cmd_eval(args) -> int:
    data_file = args.data if args.data.endswith(".sard") else os.path.join(args.data, "test.sard")
    data_dir = os.path.dirname(data_file)
    _require_file(data_file)
    gen_path = os.path.join(data_dir, "gen_config.json")
    _require_file(gen_path)
    out = _out_dir(args)
    t0 = time.perf_counter()

    with open(gen_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    gen_cfg = DatasetGenConfig.from_dict(doc["config"])
    master_seed = doc["master_seed"]
    records = read_dataset(data_file)
    algorithms = tuple(args.algos.split(","))
    for a in algorithms:
        if a not in EVAL_ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}; choose from {EVAL_ALGORITHMS}")
    weights = _load_weights(args.checkpoint, args.model_config) \
        if "srvit" in algorithms else None

    reports, samples = evaluate(weights, records, gen_cfg, master_seed,
                                algorithms=algorithms,
                                progress=_progress("eval records"))
    write_report_csv(reports, os.path.join(out, "eval_report.csv"))
    with open(os.path.join(out, "per_sample.csv"), "w", encoding="utf-8") as fh:
        fh.write("record,algorithm,psnr_db,rmse,time_s\n")
        for s in samples:
            fh.write(f"{s['record']},{s['algorithm']},{s['psnr_db']:.6g},"
                     f"{s['rmse']:.6g},{s['time_s']:.6g}\n")
    if records:
        panels = [(records[0].lr.astype(float), "compensated input")]
        if weights is not None:
            from .srvit import srvit_forward
            panels.append((srvit_forward(records[0].lr.astype(float), weights),
                           "restored"))
        panels.append((records[0].hr.astype(float), "ground truth"))
        save_compare_figure(panels, os.path.join(out, "eval_panel.png"))
    _write_manifest(out, "eval", args, {
        "data": data_file, "checkpoint": args.checkpoint,
        "algorithms": list(algorithms), "n_records": len(records),
    }, time.perf_counter() - t0)
    for r in reports:
        print(f"{r.algorithm}: PSNR {r.psnr_db:.2f} dB, RMSE {r.rmse:.4f}, "
              f"{r.wall_time_s:.3f} s/sample")
    return 0


def cmd_bench(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    preset = get_preset(args.preset)
    gen = preset.bench_gen or preset.gen
    n = args.n if args.n is not None else (preset.n_bench or 8)
    algorithms = tuple(args.algos.split(","))
    for a in algorithms:
        if a not in EVAL_ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}; choose from {EVAL_ALGORITHMS}")

    weights = None
    if "srvit" in algorithms:
        if args.checkpoint:
            weights = _load_weights(args.checkpoint, args.model_config)
        else:
            # Contract requires the learned row even without a trained model.
            weights = build_model(preset.model, seed=args.seed)

    print(f"benchmark: {n} records at {gen.grid.ny}x{gen.grid.nx}, "
          f"algorithms {','.join(algorithms)}", file=sys.stderr)
    records = []
    for i in range(n):
        records.append(generate_record(gen, args.seed, i))
        _progress("bench records")(i + 1, n)
    reports, samples = evaluate(weights, records, gen, args.seed,
                                algorithms=algorithms,
                                progress=_progress("bench eval"))
    write_report_csv(reports, os.path.join(out, "bench.csv"))
    save_bench_figure(reports, os.path.join(out, "bench_figure.png"))
    _write_manifest(out, "bench", args, {
        "preset": args.preset, "n": n, "algorithms": list(algorithms),
        "checkpoint": args.checkpoint, "gen": gen.to_dict(),
    }, time.perf_counter() - t0)
    for r in reports:
        print(f"{r.algorithm}: PSNR {r.psnr_db:.2f} dB, RMSE {r.rmse:.4f}, "
              f"{r.wall_time_s:.3f} s/sample")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfsar",
        description="Near-field SAR simulation, reconstruction, and learned "
                    "super-resolution toolkit.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset_default=None):
        p.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="thread cap; 1 guarantees bit-reproducible output")
        if preset_default is not None:
            p.add_argument("--preset", default=preset_default, choices=PRESET_NAMES)

    p = sub.add_parser("simulate", help="simulate an echo cube for a preset scene")
    common(p, preset_default="point-center")
    p.add_argument("--snr", type=float, default=None, help="SNR in dB (default: preset)")
    p.add_argument("--pos-sigma", type=float, default=None,
                   help="position-estimate noise std in meters (default: preset)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct an image from a cube file")
    common(p)
    p.add_argument("--input", required=True, help="path to a .sare cube")
    p.add_argument("--algo", required=True, choices=("empm", "bpa", "rma"))
    p.add_argument("--size", default="128x128", help="image size HxW")
    p.add_argument("--fov", type=float, default=None,
                   help="image field of view in meters (default: aperture span)")
    p.add_argument("--z0", type=float, default=0.0, help="target plane z")
    p.add_argument("--ref-z", type=float, default=None,
                   help="reference plane z (default: mean pose z)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("dataset", help="generate train/val/test record files")
    common(p, preset_default="desk")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the super-resolution model")
    common(p, preset_default="desk")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a test split")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory or .sard file")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--model-config", default=None)
    p.add_argument("--algos", default=",".join(EVAL_ALGORITHMS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="benchmark algorithms on fresh records")
    common(p, preset_default="desk")
    p.add_argument("--n", type=int, default=None, help="record count")
    p.add_argument("--algos", default=",".join(EVAL_ALGORITHMS))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--model-config", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_limit(_resolve_threads(args))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
