"""Frequency-domain multistatic echo simulation and measurement noise.

Each sample is the coherent superposition of point-scatterer returns with
spherical spreading and two-way propagation phase; the transmit spectrum is
taken as unity (dechirped data). Noise is complex circular AWGN at a target
SNR measured over the whole cube.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import SingularityError, ValidationError
from .geometry import AperturePose, pose_arrays, poses_from_csv, poses_to_csv

SPEED_OF_LIGHT = 299792458.0  # m/s

ECHO_MAGIC = b"SARE"
ECHO_VERSION = 1


@dataclass
class RadarConfig:
    """Stepped-frequency sweep: n_freq tones from start_hz to start_hz + bandwidth_hz."""

    start_hz: float = 77e9
    bandwidth_hz: float = 4e9
    n_freq: int = 64

    def __post_init__(self):
        if self.start_hz <= 0:
            raise ValidationError(f"start_hz must be > 0, got {self.start_hz}")
        if self.bandwidth_hz <= 0:
            raise ValidationError(f"bandwidth_hz must be > 0, got {self.bandwidth_hz}")
        if self.n_freq < 2:
            raise ValidationError(f"n_freq must be >= 2, got {self.n_freq}")

    def frequencies(self) -> np.ndarray:
        return np.linspace(self.start_hz, self.start_hz + self.bandwidth_hz, self.n_freq)

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * self.frequencies() / SPEED_OF_LIGHT


@dataclass
class EchoCube:
    """Complex samples indexed by (element, frequency), plus the poses the
    processor believes the samples were taken at."""

    data: np.ndarray
    poses: list[AperturePose]
    config: RadarConfig

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != (len(self.poses), self.config.n_freq):
            raise ValidationError(
                f"data shape {self.data.shape} does not match "
                f"{len(self.poses)} poses x {self.config.n_freq} frequencies"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("echo data must be finite")

    def with_poses(self, poses: list[AperturePose]) -> "EchoCube":
        """Same measurements, different believed positions."""
        return EchoCube(data=self.data, poses=poses, config=self.config)


def simulate_echo(points: np.ndarray, poses: list[AperturePose], config: RadarConfig,
                  target_z: float = 0.0) -> EchoCube:
    """Simulate the echo of (x, y, amplitude) scatterers on the z = target_z plane.

    s[l, k] = sum_p a_p / (R_T R_R) * exp(-j k (R_T + R_R)).
    Exact superposition; frequencies use the uniform sweep of ``config``.
    """
    if not poses:
        raise ValidationError("at least one pose is required")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    for p in poses:
        if p.z == target_z:
            raise SingularityError(
                f"pose {p.index} lies on the target plane z={target_z}; zero standoff"
            )
    k = config.wavenumbers()
    L, K = len(poses), config.n_freq
    if points.shape[0] == 0:
        return EchoCube(data=np.zeros((L, K), dtype=np.complex128), poses=poses, config=config)

    tx, rx = pose_arrays(poses)
    pxyz = np.column_stack([points[:, 0], points[:, 1], np.full(points.shape[0], target_z)])
    r_t = np.linalg.norm(tx[:, None, :] - pxyz[None, :, :], axis=2)  # (L, P)
    r_r = np.linalg.norm(rx[:, None, :] - pxyz[None, :, :], axis=2)
    amp = points[:, 2][None, :] / (r_t * r_r)
    r2 = r_t + r_r

    # Uniform wavenumber steps let each tone reuse the previous phasor.
    dk = k[1] - k[0]
    cur = np.exp(-1j * k[0] * r2)
    step = np.exp(-1j * dk * r2)
    data = np.empty((L, K), dtype=np.complex128)
    for kk in range(K):
        data[:, kk] = np.einsum("lp,lp->l", amp, cur)
        if kk + 1 < K:
            cur *= step
    return EchoCube(data=data, poses=poses, config=config)


def measured_snr_db(signal: np.ndarray, noisy: np.ndarray) -> float:
    """Empirical SNR of noisy = signal + noise, over the whole cube."""
    noise = noisy - signal
    return 10.0 * np.log10(np.mean(np.abs(signal) ** 2) / np.mean(np.abs(noise) ** 2))


def add_awgn(cube: EchoCube, snr_db: float, seed) -> EchoCube:
    """Add complex circular AWGN at the requested cube-level SNR.

    The noise variance is set from the cube's own mean power. An SNR of
    +inf returns the cube unchanged. Deterministic per seed.
    """
    if np.isnan(snr_db):
        raise ValidationError("snr_db must be finite or +inf")
    if np.isposinf(snr_db):
        return EchoCube(data=cube.data.copy(), poses=cube.poses, config=cube.config)
    sig_power = float(np.mean(np.abs(cube.data) ** 2))
    if sig_power == 0.0:
        raise ValidationError("SNR is undefined for an all-zero cube")
    noise_power = sig_power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    scale = np.sqrt(noise_power / 2.0)
    noise = scale * (rng.standard_normal(cube.data.shape)
                     + 1j * rng.standard_normal(cube.data.shape))
    return EchoCube(data=cube.data + noise, poses=cube.poses, config=cube.config)


def write_echo_file(cube: EchoCube, path):
    """Little-endian binary cube: header, complex64 samples, pose CSV block."""
    header = ECHO_MAGIC + struct.pack(
        "<IIIdd", ECHO_VERSION, len(cube.poses), cube.config.n_freq,
        cube.config.start_hz, cube.config.bandwidth_hz,
    )
    body = cube.data.astype(np.complex64).tobytes(order="C")
    csv_block = poses_to_csv(cube.poses).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)
        fh.write(csv_block)


def read_echo_file(path) -> EchoCube:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != ECHO_MAGIC:
        raise ValidationError(f"{path} is not an echo cube file (bad magic)")
    version, L, K, start_hz, bandwidth_hz = struct.unpack_from("<IIIdd", raw, 4)
    if version != ECHO_VERSION:
        raise ValidationError(f"unsupported echo file version {version}")
    offset = 4 + struct.calcsize("<IIIdd")
    n_bytes = L * K * 8
    data = np.frombuffer(raw[offset:offset + n_bytes], dtype="<c8").reshape(L, K)
    poses = poses_from_csv(raw[offset + n_bytes:].decode("utf-8"))
    if len(poses) != L:
        raise ValidationError(f"pose block has {len(poses)} rows, header says {L}")
    config = RadarConfig(start_hz=start_hz, bandwidth_hz=bandwidth_hz, n_freq=K)
    return EchoCube(data=data.astype(np.complex128), poses=poses, config=config)
