"""Image-quality metrics and the timing harness used by the benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import ReflectivityImage

REPORT_CSV_HEADER = "algorithm,psnr_db,rmse,time_s,n_samples"


@dataclass
class EvalReport:
    """Aggregate quality/timing row for one algorithm."""

    algorithm: str
    psnr_db: float
    rmse: float
    wall_time_s: float
    n_samples: int
    # Count of identical-image pairs excluded from the PSNR average.
    n_psnr_inf: int = 0

    def __post_init__(self):
        if self.rmse < 0 or self.wall_time_s < 0:
            raise ValidationError("rmse and wall_time_s must be >= 0")


def _pixel_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    pa = a.pixels if isinstance(a, ReflectivityImage) else np.asarray(a, dtype=np.float64)
    pb = b.pixels if isinstance(b, ReflectivityImage) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValidationError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    return pa, pb


def rmse(a, b) -> float:
    """Root-mean-square pixel error; symmetric in its arguments."""
    pa, pb = _pixel_pair(a, b)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def psnr(a, b) -> float:
    """Peak SNR in dB with peak fixed at 1.0 (images are max-normalized).

    Identical images return +inf; aggregation excludes the sentinel and
    reports how many were dropped.
    """
    pa, pb = _pixel_pair(a, b)
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def aggregate_psnr(values) -> tuple[float, int]:
    """Mean of finite PSNRs and the number of +inf sentinels excluded."""
    vals = list(values)
    finite = [v for v in vals if math.isfinite(v)]
    n_inf = sum(1 for v in vals if math.isinf(v))
    mean = float(np.mean(finite)) if finite else math.inf
    return mean, n_inf


def time_op(thunk) -> tuple[float, object]:
    """Run a thunk and return (monotonic wall seconds, result)."""
    t0 = time.perf_counter()
    result = thunk()
    return time.perf_counter() - t0, result


def reports_to_csv(reports: list[EvalReport]) -> str:
    lines = [REPORT_CSV_HEADER]
    for r in reports:
        psnr_s = "inf" if math.isinf(r.psnr_db) else f"{r.psnr_db:.6g}"
        lines.append(f"{r.algorithm},{psnr_s},{r.rmse:.6g},{r.wall_time_s:.6g},{r.n_samples}")
    return "\n".join(lines) + "\n"


def write_report_csv(reports: list[EvalReport], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(reports_to_csv(reports))
