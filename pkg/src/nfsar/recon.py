"""Image reconstruction: plane-projection compensation + FFT imaging, and
the exact per-pixel matched-filter reference.

The FFT path bins virtual monostatic samples onto the image lattice,
transforms to the spatial-frequency domain, multiplies by the free-space
dispersion phase, sums coherently over the sweep, and inverse transforms.
The matched-filter path (`bpa_reconstruct`) makes no geometry assumptions
and serves as the focus oracle.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .echo import EchoCube
from .errors import SingularityError, ValidationError
from .geometry import (
    VirtualElement,
    default_reference_plane,
    pose_arrays,
    virtual_elements,
)
from .scene import ImageGrid, ReflectivityImage

IMAGE_MAGIC = b"SARI"

# Pixel/element budget per matched-filter block; keeps range matrices ~100 MB.
_BPA_BLOCK_ELEMS = 2 ** 24


@dataclass
class CompensatedSamples:
    """Per-element compensated rows plus the virtual element x/y positions."""

    values: np.ndarray  # (L, K) complex
    xy: np.ndarray      # (L, 2) meters
    ref_z: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.values.shape[0] != self.xy.shape[0]:
            raise ValidationError(
                f"{self.values.shape[0]} sample rows vs {self.xy.shape[0]} positions"
            )


@dataclass
class PlanarEchoGrid:
    """Samples binned to a uniform (y, x, frequency) lattice on the ref_z plane."""

    data: np.ndarray  # (ny, nx, K) complex
    pitch_x: float
    pitch_y: float
    origin: tuple[float, float]  # center of cell (0, 0)
    ref_z: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3 or self.data.shape[0] < 2 or self.data.shape[1] < 2:
            raise ValidationError(f"lattice must be (ny>=2, nx>=2, K), got {self.data.shape}")
        if self.pitch_x <= 0 or self.pitch_y <= 0:
            raise ValidationError("lattice pitch must be > 0")


def empm_compensate(cube: EchoCube, virtuals: list[VirtualElement]) -> CompensatedSamples:
    """Rotate each sample by its virtual element's range correction.

    out[l, k] = s[l, k] * exp(+1j * k * correction_l); magnitudes unchanged.
    """
    if len(virtuals) != cube.data.shape[0]:
        raise ValidationError(
            f"{len(virtuals)} virtual elements for {cube.data.shape[0]} cube rows"
        )
    k = cube.config.wavenumbers()
    corrections = np.array([v.range_correction for v in virtuals])
    values = cube.data * np.exp(1j * corrections[:, None] * k[None, :])
    xy = np.stack([v.pos[:2] for v in virtuals])
    ref_z = float(virtuals[0].pos[2]) if virtuals else 0.0
    return CompensatedSamples(values=values, xy=xy, ref_z=ref_z)


def raw_samples(cube: EchoCube, ref_z: float | None = None) -> CompensatedSamples:
    """Uncompensated samples at their pair midpoints (the no-correction baseline)."""
    if ref_z is None:
        ref_z = default_reference_plane(cube.poses)
    tx, rx = pose_arrays(cube.poses)
    xy = (tx[:, :2] + rx[:, :2]) / 2.0
    return CompensatedSamples(values=cube.data.copy(), xy=xy, ref_z=float(ref_z))


def grid_virtual_samples(samples: CompensatedSamples, grid: ImageGrid | None = None,
                         dims: tuple[int, int] | None = None
                         ) -> tuple[PlanarEchoGrid, np.ndarray]:
    """Bin samples to the nearest lattice cell; multiple hits are averaged.

    The lattice is the image grid when given, otherwise it spans the sample
    bounding box with ``dims`` = (ny, nx) cells. Samples outside the lattice
    are dropped. Returns the gridded data and the per-cell occupancy map.
    """
    if samples.xy.shape[0] < 1:
        raise ValidationError("at least one sample is required")
    if grid is not None:
        nx, ny = grid.nx, grid.ny
        extent_x, extent_y = grid.extent_x, grid.extent_y
        x0, y0 = grid.x_centers()[0], grid.y_centers()[0]
    else:
        if dims is None or dims[0] < 2 or dims[1] < 2:
            raise ValidationError("dims (ny, nx) >= 2 are required without a grid")
        ny, nx = dims
        lo = samples.xy.min(axis=0)
        hi = samples.xy.max(axis=0)
        if hi[0] == lo[0] or hi[1] == lo[1]:
            raise ValidationError("degenerate sample extent; cannot derive a lattice")
        # Stretch so extreme samples fall inside the outermost cells.
        extent_x = (hi[0] - lo[0]) * nx / (nx - 1)
        extent_y = (hi[1] - lo[1]) * ny / (ny - 1)
        x0 = lo[0]
        y0 = lo[1]

    pitch_x = extent_x / nx
    pitch_y = extent_y / ny
    fx = (samples.xy[:, 0] - x0) / pitch_x
    fy = (samples.xy[:, 1] - y0) / pitch_y
    ix = np.round(fx).astype(int)
    iy = np.round(fy).astype(int)
    keep = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)

    K = samples.values.shape[1]
    acc = np.zeros((ny, nx, K), dtype=np.complex128)
    counts = np.zeros((ny, nx), dtype=np.int64)
    np.add.at(acc, (iy[keep], ix[keep]), samples.values[keep])
    np.add.at(counts, (iy[keep], ix[keep]), 1)
    occupied = counts > 0
    acc[occupied] /= counts[occupied][:, None]

    planar = PlanarEchoGrid(data=acc, pitch_x=pitch_x, pitch_y=pitch_y,
                            origin=(float(x0), float(y0)), ref_z=samples.ref_z)
    return planar, counts


def rma_reconstruct(planar: PlanarEchoGrid, z0: float, wavenumbers: np.ndarray | None = None,
                    config=None) -> ReflectivityImage:
    """FFT imaging of a planar lattice down to the target plane z0.

    Spatial FFT per tone, dispersion-phase multiply with evanescent cutoff,
    coherent sum over the sweep, inverse FFT, magnitude, max-normalize.
    """
    if wavenumbers is None:
        if config is None:
            raise ValidationError("either wavenumbers or a RadarConfig is required")
        wavenumbers = config.wavenumbers()
    if planar.ref_z == z0:
        raise SingularityError("reference plane coincides with the target plane")
    ny, nx, K = planar.data.shape
    if len(wavenumbers) != K:
        raise ValidationError(f"{len(wavenumbers)} wavenumbers for {K} frequency bins")

    spectrum = np.fft.fft2(planar.data, axes=(0, 1))
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=planar.pitch_x)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=planar.pitch_y)
    kxy2 = ky[:, None, None] ** 2 + kx[None, :, None] ** 2
    kz_sq = 4.0 * wavenumbers[None, None, :] ** 2 - kxy2
    propagating = kz_sq >= 0.0
    kz = np.sqrt(np.where(propagating, kz_sq, 0.0))
    transfer = np.where(propagating, np.exp(1j * kz * (planar.ref_z - z0)), 0.0)
    image_spectrum = np.sum(spectrum * transfer, axis=2)

    img = np.abs(np.fft.ifft2(image_spectrum))
    peak = img.max()
    if peak > 0:
        img /= peak
    grid = ImageGrid(nx=nx, ny=ny, extent_x=nx * planar.pitch_x,
                     extent_y=ny * planar.pitch_y, z0=z0)
    return ReflectivityImage(pixels=img, grid=grid)


def bpa_reconstruct(cube: EchoCube, grid: ImageGrid) -> ReflectivityImage:
    """Exact per-pixel matched filter over every element and tone.

    o[p] = | sum_l sum_k s[l,k] exp(+1j k (R_T(p,l) + R_R(p,l))) |,
    max-normalized. Uses the cube's poses as-is; no lattice assumptions.
    """
    for p in cube.poses:
        if p.z == grid.z0:
            raise SingularityError(
                f"pose {p.index} lies on the image plane z={grid.z0}; zero standoff"
            )
    k = cube.config.wavenumbers()
    tx, rx = pose_arrays(cube.poses)
    L, K = cube.data.shape
    px, py = np.meshgrid(grid.x_centers(), grid.y_centers())
    pts = np.column_stack([px.ravel(), py.ravel(), np.full(px.size, grid.z0)])
    n_pix = pts.shape[0]

    s64 = cube.data.astype(np.complex64)
    dk = k[1] - k[0] if K > 1 else 0.0
    out = np.zeros(n_pix, dtype=np.complex128)
    block = max(1, _BPA_BLOCK_ELEMS // max(L, 1))
    for start in range(0, n_pix, block):
        stop = min(start + block, n_pix)
        d_t = np.linalg.norm(pts[start:stop, None, :] - tx[None, :, :], axis=2)
        d_r = np.linalg.norm(pts[start:stop, None, :] - rx[None, :, :], axis=2)
        r2 = (d_t + d_r).astype(np.float32)
        cur = np.exp(1j * np.float32(k[0]) * r2).astype(np.complex64)
        step = np.exp(1j * np.float32(dk) * r2).astype(np.complex64)
        acc = np.zeros(stop - start, dtype=np.complex128)
        for kk in range(K):
            acc += cur @ s64[:, kk]
            if kk + 1 < K:
                cur *= step
        out[start:stop] = acc

    img = np.abs(out).reshape(grid.ny, grid.nx)
    peak = img.max()
    if peak > 0:
        img /= peak
    return ReflectivityImage(pixels=img, grid=grid)


def empm_reconstruct(cube: EchoCube, grid: ImageGrid,
                     ref_z: float | None = None) -> ReflectivityImage:
    """Full compensated pipeline: virtual elements on the reference plane,
    phase compensation, lattice binning, FFT imaging.

    ``ref_z`` defaults to the mean pose z.
    """
    if ref_z is None:
        ref_z = default_reference_plane(cube.poses)
    virtuals = virtual_elements(cube.poses, ref_z)
    samples = empm_compensate(cube, virtuals)
    planar, _ = grid_virtual_samples(samples, grid=grid)
    return rma_reconstruct(planar, grid.z0, wavenumbers=cube.config.wavenumbers())


def rma_baseline(cube: EchoCube, grid: ImageGrid,
                 ref_z: float | None = None) -> ReflectivityImage:
    """FFT imaging without the plane-projection compensation.

    Treats every sample as if taken at its midpoint on the reference plane;
    the defocus this leaves in is exactly what `empm_reconstruct` removes.
    """
    samples = raw_samples(cube, ref_z=ref_z)
    planar, _ = grid_virtual_samples(samples, grid=grid)
    return rma_reconstruct(planar, grid.z0, wavenumbers=cube.config.wavenumbers())


def write_image_raw(image: ReflectivityImage, path):
    """Raw sidecar: magic, ny u32, nx u32, f32 row-major pixels."""
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<II", image.grid.ny, image.grid.nx))
        fh.write(image.pixels.astype("<f4").tobytes(order="C"))


def read_image_raw(path) -> tuple[np.ndarray, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != IMAGE_MAGIC:
        raise ValidationError(f"{path} is not a raw image file (bad magic)")
    ny, nx = struct.unpack_from("<II", raw, 4)
    pixels = np.frombuffer(raw[12:12 + ny * nx * 4], dtype="<f4").reshape(ny, nx)
    return pixels.astype(np.float64), ny, nx


def write_image_png(image: ReflectivityImage | np.ndarray, path):
    """8-bit grayscale PNG; values are clipped to [0, 1] then scaled to 0..255."""
    pixels = image.pixels if isinstance(image, ReflectivityImage) else np.asarray(image)
    arr = np.clip(pixels, 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    ny, nx = data.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", nx, ny, 8, 0, 0, 0, 0)  # 8-bit grayscale
    scanlines = b"".join(b"\x00" + data[row].tobytes() for row in range(ny))
    png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
           + chunk(b"IDAT", zlib.compress(scanlines, 9)) + chunk(b"IEND", b""))
    with open(path, "wb") as fh:
        fh.write(png)
