"""Synthetic aperture construction and virtual-element geometry.

Apertures are lists of transmit/receive pose pairs. Irregular scans are
modeled as a jittered raster; position-estimation error is applied as a
separate perturbation so simulation and reconstruction can disagree about
where the samples were taken.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularityError, ValidationError

APERTURE_KINDS = ("planar", "irregular")

POSE_CSV_HEADER = "l,tx_x,tx_y,tx_z,rx_x,rx_y,rx_z"


@dataclass
class AperturePose:
    """One Tx/Rx pair of a synthetic aperture.

    ``tx`` and ``rx`` are 3-vectors in meters and share the same z plane
    (the pair travels as one physical unit).
    """

    tx: np.ndarray
    rx: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.tx = np.asarray(self.tx, dtype=np.float64)
        self.rx = np.asarray(self.rx, dtype=np.float64)
        if self.tx.shape != (3,) or self.rx.shape != (3,):
            raise ValidationError("tx and rx must be 3-vectors")
        if not (np.all(np.isfinite(self.tx)) and np.all(np.isfinite(self.rx))):
            raise ValidationError("pose coordinates must be finite")
        if self.tx[2] != self.rx[2]:
            raise ValidationError("tx and rx of one pose must share a z plane")
        if self.index < 0:
            raise ValidationError("index must be non-negative")

    @property
    def z(self) -> float:
        """Common z plane of the pair."""
        return float(self.tx[2])

    @property
    def midpoint(self) -> np.ndarray:
        return (self.tx + self.rx) / 2.0


@dataclass
class VirtualElement:
    """Monostatic stand-in for a Tx/Rx pair, projected onto a reference plane.

    ``displacement`` holds the Tx-Rx baseline in x/y and the pose's offset
    from the reference plane in z. ``range_correction`` is the two-way path
    length (meters) that the projection leaves uncompensated; multiplying a
    sample by ``exp(+1j * k * range_correction)`` removes it.
    """

    pos: np.ndarray
    displacement: np.ndarray
    range_correction: float

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.displacement = np.asarray(self.displacement, dtype=np.float64)
        if not np.isfinite(self.range_correction):
            raise ValidationError("range_correction must be finite")


@dataclass
class ApertureSpec:
    """Raster parameters for a planar or irregular scan."""

    kind: str
    extent_x: float
    extent_y: float
    nx: int
    ny: int
    z_nominal: float
    jitter_xy: float = 0.0
    jitter_z: float = 0.0
    # Optional fixed Tx/Rx baseline; the midpoint stays on the raster.
    tx_rx_offset: tuple[float, float] = (0.0, 0.0)

    def validate(self):
        if self.kind not in APERTURE_KINDS:
            raise ValidationError(f"kind must be one of {APERTURE_KINDS}, got {self.kind!r}")
        if self.nx < 2 or self.ny < 2:
            raise ValidationError(f"nx and ny must be >= 2, got nx={self.nx}, ny={self.ny}")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValidationError(
                f"extents must be > 0, got extent_x={self.extent_x}, extent_y={self.extent_y}"
            )
        if self.jitter_xy < 0:
            raise ValidationError(f"jitter_xy must be >= 0, got {self.jitter_xy}")
        if self.jitter_z < 0:
            raise ValidationError(f"jitter_z must be >= 0, got {self.jitter_z}")


def build_aperture(spec: ApertureSpec, seed) -> list[AperturePose]:
    """Construct aperture poses on a raster, jittered when the kind is irregular.

    Row-major ordering: pose index = iy * nx + ix. Deterministic for a fixed
    seed; the input spec is not modified.
    """
    spec.validate()
    xs = np.linspace(-spec.extent_x / 2.0, spec.extent_x / 2.0, spec.nx)
    ys = np.linspace(-spec.extent_y / 2.0, spec.extent_y / 2.0, spec.ny)
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    mx = gx.ravel()
    my = gy.ravel()
    mz = np.full(mx.shape, float(spec.z_nominal))

    if spec.kind == "irregular":
        rng = np.random.default_rng(seed)
        n = mx.size
        mx = mx + rng.normal(0.0, spec.jitter_xy, n)
        my = my + rng.normal(0.0, spec.jitter_xy, n)
        mz = mz + rng.normal(0.0, spec.jitter_z, n)

    off = np.asarray(spec.tx_rx_offset, dtype=np.float64) / 2.0
    poses = []
    for i in range(mx.size):
        tx = np.array([mx[i] + off[0], my[i] + off[1], mz[i]])
        rx = np.array([mx[i] - off[0], my[i] - off[1], mz[i]])
        poses.append(AperturePose(tx=tx, rx=rx, index=i))
    return poses


def perturb_positions(poses: list[AperturePose], sigma_xyz, seed) -> list[AperturePose]:
    """Apply zero-mean Gaussian position error and return new poses.

    x and y errors are independent per antenna; the z error is drawn once
    per pose and applied to both antennas, which keeps each pair coplanar.
    The input list is left untouched.
    """
    sigma = np.asarray(sigma_xyz, dtype=np.float64)
    if sigma.shape != (3,):
        raise ValidationError("sigma_xyz must be a 3-vector")
    if np.any(sigma < 0):
        raise ValidationError(f"sigmas must be >= 0, got {sigma.tolist()}")
    rng = np.random.default_rng(seed)
    n = len(poses)
    dtx = rng.normal(0.0, 1.0, (n, 2)) * sigma[:2]
    drx = rng.normal(0.0, 1.0, (n, 2)) * sigma[:2]
    dz = rng.normal(0.0, 1.0, n) * sigma[2]

    out = []
    for i, p in enumerate(poses):
        tx = p.tx + np.array([dtx[i, 0], dtx[i, 1], dz[i]])
        rx = p.rx + np.array([drx[i, 0], drx[i, 1], dz[i]])
        out.append(AperturePose(tx=tx, rx=rx, index=p.index))
    return out


def default_reference_plane(poses: list[AperturePose]) -> float:
    """Mean pose z; minimizes the z displacements left to compensate."""
    if not poses:
        raise ValidationError("cannot derive a reference plane from zero poses")
    return float(np.mean([p.z for p in poses]))


def virtual_elements(poses: list[AperturePose], ref_z: float) -> list[VirtualElement]:
    """Project each Tx/Rx pair to a virtual monostatic element on the ref_z plane.

    The element sits at the pair midpoint in x/y. The returned range
    correction is ``2*dz + (dx^2 + dy^2) / (4*ref_z)`` with dx/dy the Tx-Rx
    baseline and dz the pose's offset from the reference plane.
    """
    if not np.isfinite(ref_z):
        raise ValidationError("ref_z must be finite")
    if ref_z == 0.0:
        raise SingularityError("ref_z == 0 makes the baseline correction singular")
    out = []
    for p in poses:
        mid = p.midpoint
        dx = p.tx[0] - p.rx[0]
        dy = p.tx[1] - p.rx[1]
        dz = p.z - ref_z
        correction = 2.0 * dz + (dx * dx + dy * dy) / (4.0 * ref_z)
        out.append(
            VirtualElement(
                pos=np.array([mid[0], mid[1], ref_z]),
                displacement=np.array([dx, dy, dz]),
                range_correction=correction,
            )
        )
    return out


def pose_arrays(poses: list[AperturePose]) -> tuple[np.ndarray, np.ndarray]:
    """Stack poses into (L, 3) tx and rx arrays for vectorized kernels."""
    tx = np.stack([p.tx for p in poses])
    rx = np.stack([p.rx for p in poses])
    return tx, rx


def poses_to_csv(poses: list[AperturePose]) -> str:
    """Serialize poses as CSV text (meters, 9 significant digits)."""
    buf = io.StringIO()
    buf.write(POSE_CSV_HEADER + "\n")
    for p in poses:
        vals = [p.tx[0], p.tx[1], p.tx[2], p.rx[0], p.rx[1], p.rx[2]]
        buf.write(f"{p.index}," + ",".join(f"{v:.9g}" for v in vals) + "\n")
    return buf.getvalue()


def poses_from_csv(text: str) -> list[AperturePose]:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != POSE_CSV_HEADER:
        raise ValidationError("pose CSV must start with the header " + POSE_CSV_HEADER)
    poses = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValidationError(f"pose CSV row has {len(parts)} fields, expected 7")
        idx = int(parts[0])
        vals = [float(v) for v in parts[1:]]
        poses.append(AperturePose(tx=np.array(vals[:3]), rx=np.array(vals[3:]), index=idx))
    return poses


def write_pose_csv(poses: list[AperturePose], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(poses_to_csv(poses))


def read_pose_csv(path) -> list[AperturePose]:
    with open(path, "r", encoding="utf-8") as fh:
        return poses_from_csv(fh.read())
