"""Paired dataset generation and the training/evaluation loops.

Each record simulates an irregular scan of a random scene: the echo is
computed at the true (jittered) positions, while reconstruction only gets
position estimates carrying 1 mm-class error. The low-fidelity compensated
reconstruction is stored next to the rasterized ground truth. Record
substreams are derived from (master seed, record index), so files are
bit-exact reproducible and splits never share a stream.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .echo import EchoCube, RadarConfig, add_awgn, simulate_echo
from .errors import ValidationError
from .geometry import ApertureSpec, build_aperture, perturb_positions
from .metrics import EvalReport, aggregate_psnr, psnr, rmse, time_op
from .recon import bpa_reconstruct, empm_reconstruct, rma_baseline
from .scene import ImageGrid, ReflectivityImage, SceneSpec, point_cloud, random_scene, rasterize
from .srvit import ModelWeights, forward, l1_loss, srvit_forward

DATASET_MAGIC = b"SARD"
DATASET_VERSION = 1

EVAL_ALGORITHMS = ("srvit", "bpa", "empm", "rma")


@dataclass
class DatasetGenConfig:
    """Everything needed to regenerate a record from its seed."""

    grid: ImageGrid
    aperture: ApertureSpec
    radar: RadarConfig
    scene: SceneSpec
    pos_sigma: float = 1e-3
    snr_range: tuple[float, float] = (-10.0, 50.0)

    def to_dict(self) -> dict:
        return {
            "grid": vars(self.grid).copy(),
            "aperture": {**vars(self.aperture),
                         "tx_rx_offset": list(self.aperture.tx_rx_offset)},
            "radar": vars(self.radar).copy(),
            "scene": {**vars(self.scene),
                      "n_points": list(self.scene.n_points),
                      "n_shapes": list(self.scene.n_shapes),
                      "amplitude_range": list(self.scene.amplitude_range),
                      "size_frac": list(self.scene.size_frac),
                      "thickness_frac": list(self.scene.thickness_frac),
                      "kinds": list(self.scene.kinds)},
            "pos_sigma": self.pos_sigma,
            "snr_range": list(self.snr_range),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetGenConfig":
        scene = dict(doc["scene"])
        for key in ("n_points", "n_shapes", "amplitude_range", "size_frac",
                    "thickness_frac", "kinds"):
            scene[key] = tuple(scene[key])
        aperture = dict(doc["aperture"])
        aperture["tx_rx_offset"] = tuple(aperture["tx_rx_offset"])
        return cls(
            grid=ImageGrid(**doc["grid"]),
            aperture=ApertureSpec(**aperture),
            radar=RadarConfig(**doc["radar"]),
            scene=SceneSpec(**scene),
            pos_sigma=doc["pos_sigma"],
            snr_range=tuple(doc["snr_range"]),
        )


@dataclass
class DatasetRecord:
    """One (low-fidelity input, ground truth) pair plus generation metadata."""

    lr: np.ndarray
    hr: np.ndarray
    snr_db: float
    pos_sigma: float
    seed: int

    def __post_init__(self):
        self.lr = np.asarray(self.lr, dtype=np.float32)
        self.hr = np.asarray(self.hr, dtype=np.float32)
        if self.lr.shape != self.hr.shape:
            raise ValidationError(
                f"lr {self.lr.shape} and hr {self.hr.shape} must share dimensions"
            )


def _record_streams(master_seed: int, record_seed: int):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(record_seed,))
    return ss.spawn(5)  # scene, aperture, position error, snr draw, noise


def simulate_record_cube(cfg: DatasetGenConfig, master_seed: int, record_seed: int
                         ) -> tuple[EchoCube, ReflectivityImage, float]:
    """Rebuild the believed echo cube and ground truth for one record seed."""
    s_scene, s_aperture, s_pos, s_snr, s_noise = _record_streams(master_seed, record_seed)
    scene = random_scene(cfg.scene, s_scene)
    hr = rasterize(scene, cfg.grid)
    pts = point_cloud(scene, cfg.grid)
    true_poses = build_aperture(cfg.aperture, s_aperture)
    sigma = (cfg.pos_sigma, cfg.pos_sigma, cfg.pos_sigma)
    believed_poses = perturb_positions(true_poses, sigma, s_pos)
    cube = simulate_echo(pts, true_poses, cfg.radar, target_z=cfg.grid.z0)
    snr_db = float(np.random.default_rng(s_snr).uniform(*cfg.snr_range))
    cube = add_awgn(cube, snr_db, s_noise)
    return cube.with_poses(believed_poses), hr, snr_db


def generate_record(cfg: DatasetGenConfig, master_seed: int, record_seed: int
                    ) -> DatasetRecord:
    believed, hr, snr_db = simulate_record_cube(cfg, master_seed, record_seed)
    lr = empm_reconstruct(believed, cfg.grid)
    return DatasetRecord(lr=lr.pixels, hr=hr.pixels, snr_db=snr_db,
                         pos_sigma=cfg.pos_sigma, seed=record_seed)


def write_dataset(records: list[DatasetRecord], path):
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IQ", DATASET_VERSION, len(records)))
        for rec in records:
            h, w = rec.lr.shape
            fh.write(struct.pack("<II", h, w))
            fh.write(rec.lr.astype("<f4").tobytes(order="C"))
            fh.write(rec.hr.astype("<f4").tobytes(order="C"))
            fh.write(struct.pack("<ffQ", rec.snr_db, rec.pos_sigma, rec.seed))


def generate_dataset(path, n: int, cfg: DatasetGenConfig, master_seed: int,
                     offset: int = 0, progress=None) -> list[DatasetRecord]:
    """Generate and write n records with seeds offset..offset+n-1.

    A failure removes the partial file before re-raising.
    """
    if n < 1:
        raise ValidationError(f"a dataset needs n >= 1 records, got {n}")
    records = []
    try:
        for i in range(n):
            records.append(generate_record(cfg, master_seed, offset + i))
            if progress is not None:
                progress(i + 1, n)
        write_dataset(records, path)
    except BaseException:
        if os.path.exists(path):
            os.remove(path)
        raise
    return records


def read_dataset(path) -> list[DatasetRecord]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise ValidationError(f"{path} is not a dataset file (bad magic)")
    version, count = struct.unpack_from("<IQ", raw, 4)
    if version != DATASET_VERSION:
        raise ValidationError(f"unsupported dataset version {version}")
    offset = 4 + struct.calcsize("<IQ")
    records = []
    for _ in range(count):
        h, w = struct.unpack_from("<II", raw, offset)
        offset += 8
        lr = np.frombuffer(raw[offset:offset + 4 * h * w], dtype="<f4").reshape(h, w)
        offset += 4 * h * w
        hr = np.frombuffer(raw[offset:offset + 4 * h * w], dtype="<f4").reshape(h, w)
        offset += 4 * h * w
        snr_db, pos_sigma, seed = struct.unpack_from("<ffQ", raw, offset)
        offset += struct.calcsize("<ffQ")
        records.append(DatasetRecord(lr=lr.copy(), hr=hr.copy(), snr_db=snr_db,
                                     pos_sigma=pos_sigma, seed=int(seed)))
    return records


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_steps: int | None = None
    val_interval: int = 1  # epochs between validation passes

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be > 0, got {self.lr}")


class AdamState:
    """First/second moment buffers plus the shared timestep."""

    def __init__(self, params: dict[str, ad.Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, ad.Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected update; missing gradients count as zero."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise ValidationError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class LogRow:
    step: int
    epoch: int
    train_l1: float
    val_psnr: float | None = None


LOSS_LOG_HEADER = "step,epoch,train_l1,val_psnr"


def loss_log_to_csv(rows: list[LogRow]) -> str:
    lines = [LOSS_LOG_HEADER]
    for r in rows:
        val = "" if r.val_psnr is None else f"{r.val_psnr:.6f}"
        lines.append(f"{r.step},{r.epoch},{r.train_l1:.8f},{val}")
    return "\n".join(lines) + "\n"


def _batch_arrays(records: list[DatasetRecord], idx) -> tuple[np.ndarray, np.ndarray]:
    lr = np.stack([records[i].lr for i in idx]).astype(np.float32)[:, None, :, :]
    hr = np.stack([records[i].hr for i in idx]).astype(np.float32)[:, None, :, :]
    return lr, hr


def validation_psnr(weights: ModelWeights, records: list[DatasetRecord]) -> float:
    values = []
    for rec in records:
        out = srvit_forward(rec.lr.astype(np.float64), weights)
        values.append(psnr(out, rec.hr.astype(np.float64)))
    mean, _ = aggregate_psnr(values)
    return mean


@dataclass
class TrainResult:
    log: list[LogRow]
    best_arrays: dict[str, np.ndarray]
    best_val_psnr: float
    final_loss: float
    steps: int


def train_model(weights: ModelWeights, train_records: list[DatasetRecord],
                val_records: list[DatasetRecord], cfg: TrainConfig,
                progress=None) -> TrainResult:
    """Adam on mean-L1; logs every step, validates per epoch interval,
    and keeps the best-validation snapshot. Deterministic per seed."""
    if not train_records:
        raise ValidationError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(weights.params)
    rows: list[LogRow] = []
    best_arrays = {**weights.clone_params(),
                   **{k: v.copy() for k, v in weights.buffers.items()}}
    best_val = -math.inf
    step = 0
    last_loss = math.nan
    done = False
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_records))
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x, y = _batch_arrays(train_records, idx)
            out = forward(weights, x, training=True)
            loss = l1_loss(out, ad.Tensor(y))
            last_loss = float(loss.data)
            if not math.isfinite(last_loss):
                raise RuntimeError(
                    f"training diverged: loss became {last_loss} at step {step}"
                )
            for p in weights.params.values():
                p.zero_grad()
            loss.backward()
            adam_step(weights.params, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            step += 1
            rows.append(LogRow(step=step, epoch=epoch, train_l1=last_loss))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if val_records and (epoch % cfg.val_interval == 0 or epoch == cfg.epochs or done):
            val = validation_psnr(weights, val_records)
            rows[-1].val_psnr = val
            if val > best_val:
                best_val = val
                best_arrays = {**weights.clone_params(),
                               **{k: v.copy() for k, v in weights.buffers.items()}}
        if progress is not None:
            progress(epoch, cfg.epochs, last_loss)
        if done:
            break
    if not val_records:
        best_arrays = {**weights.clone_params(),
                       **{k: v.copy() for k, v in weights.buffers.items()}}
    return TrainResult(log=rows, best_arrays=best_arrays, best_val_psnr=best_val,
                       final_loss=last_loss, steps=step)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(weights: ModelWeights | None, records: list[DatasetRecord],
             cfg: DatasetGenConfig, master_seed: int,
             algorithms=EVAL_ALGORITHMS, progress=None
             ) -> tuple[list[EvalReport], list[dict]]:
    """Per-sample and aggregate quality for the learned model, the stored
    compensated input, and the classical baselines recomputed from seeds."""
    algorithms = tuple(algorithms)
    if "srvit" in algorithms and weights is None:
        raise ValidationError("srvit evaluation requires model weights")
    per_algo: dict[str, dict[str, list]] = {
        a: {"psnr": [], "rmse": [], "time": []} for a in algorithms
    }
    samples: list[dict] = []

    for n_done, rec in enumerate(records):
        hr = rec.hr.astype(np.float64)
        lr = rec.lr.astype(np.float64)
        images = {}
        if "empm" in per_algo:
            images["empm"] = (lr, 0.0)
        if "srvit" in per_algo:
            dt, out = time_op(lambda: srvit_forward(lr, weights))
            images["srvit"] = (out, dt)
        if "bpa" in per_algo or "rma" in per_algo or "empm" in per_algo:
            believed, _hr_img, _snr = simulate_record_cube(cfg, master_seed, rec.seed)
            if "empm" in per_algo:
                dt, out = time_op(lambda: empm_reconstruct(believed, cfg.grid))
                images["empm"] = (lr, dt)  # metrics from the stored input
            if "bpa" in per_algo:
                dt, out = time_op(lambda: bpa_reconstruct(believed, cfg.grid))
                images["bpa"] = (out.pixels, dt)
            if "rma" in per_algo:
                dt, out = time_op(lambda: rma_baseline(believed, cfg.grid))
                images["rma"] = (out.pixels, dt)
        for algo in algorithms:
            img, dt = images[algo]
            p = psnr(img, hr)
            r = rmse(img, hr)
            per_algo[algo]["psnr"].append(p)
            per_algo[algo]["rmse"].append(r)
            per_algo[algo]["time"].append(dt)
            samples.append({"record": rec.seed, "algorithm": algo, "psnr_db": p,
                            "rmse": r, "time_s": dt})
        if progress is not None:
            progress(n_done + 1, len(records))

    reports = []
    for algo in algorithms:
        mean_psnr, n_inf = aggregate_psnr(per_algo[algo]["psnr"])
        reports.append(EvalReport(
            algorithm=algo,
            psnr_db=mean_psnr,
            rmse=float(np.mean(per_algo[algo]["rmse"])),
            wall_time_s=float(np.mean(per_algo[algo]["time"])),
            n_samples=len(records),
            n_psnr_inf=n_inf,
        ))
    return reports, samples
