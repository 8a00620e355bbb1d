"""Synthetic target scenes and their rasterized ground-truth images.

Targets live on a single plane z = z0: point scatterers plus solid and
hollow shapes. Shapes are discretized at the image-pixel resolution, so the
rasterized truth and the scatterer cloud used by the echo model agree on
support exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SHAPE_KINDS = ("disk", "ring", "rectangle", "rect_outline")

SCENE_SCHEMA = "nfsar.scene/1"


@dataclass
class ImageGrid:
    """Pixel lattice over a centered field of view at the target plane z0.

    Pixel (iy, ix) is centered at
    ``(-extent/2 + (i + 0.5) * extent / n)`` along each axis; a point maps
    to the cell that contains it.
    """

    nx: int
    ny: int
    extent_x: float
    extent_y: float
    z0: float = 0.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValidationError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValidationError("grid extents must be > 0")

    @property
    def pitch_x(self) -> float:
        return self.extent_x / self.nx

    @property
    def pitch_y(self) -> float:
        return self.extent_y / self.ny

    def x_centers(self) -> np.ndarray:
        return -self.extent_x / 2.0 + (np.arange(self.nx) + 0.5) * self.pitch_x

    def y_centers(self) -> np.ndarray:
        return -self.extent_y / 2.0 + (np.arange(self.ny) + 0.5) * self.pitch_y

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        return (np.abs(x) <= self.extent_x / 2.0) & (np.abs(y) <= self.extent_y / 2.0)

    def cell_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates to (iy, ix); callers check containment first."""
        ix = np.floor((np.asarray(x) + self.extent_x / 2.0) / self.pitch_x).astype(int)
        iy = np.floor((np.asarray(y) + self.extent_y / 2.0) / self.pitch_y).astype(int)
        return np.clip(iy, 0, self.ny - 1), np.clip(ix, 0, self.nx - 1)


@dataclass
class ReflectivityImage:
    """Real non-negative image on an ImageGrid, values in [0, 1]."""

    pixels: np.ndarray
    grid: ImageGrid

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.grid.ny, self.grid.nx):
            raise ValidationError(
                f"pixel array {self.pixels.shape} does not match grid "
                f"({self.grid.ny}, {self.grid.nx})"
            )
        if np.any(self.pixels < 0):
            raise ValidationError("reflectivity values must be >= 0")


@dataclass
class Shape:
    """Solid or hollow target shape.

    ``size`` holds semi-axes for disk, (outer radius, outer radius) for
    ring, and half-extents for rectangles. ``thickness`` applies to the
    hollow kinds only.
    """

    kind: str
    center: tuple[float, float]
    size: tuple[float, float]
    amplitude: float
    thickness: float = 0.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValidationError(f"kind must be one of {SHAPE_KINDS}, got {self.kind!r}")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValidationError("size must be > 0")
        if not (0.0 < self.amplitude <= 1.0):
            raise ValidationError(f"amplitude must be in (0, 1], got {self.amplitude}")
        if self.kind in ("ring", "rect_outline"):
            limit = self.size[0] if self.kind == "ring" else min(self.size)
            if not (0.0 < self.thickness < limit):
                raise ValidationError(
                    f"{self.kind} thickness must be in (0, {limit}), got {self.thickness}"
                )

    def covers(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Center-in-shape membership test on pixel-center coordinates."""
        dx = px - self.center[0]
        dy = py - self.center[1]
        sx, sy = self.size
        if self.kind == "disk":
            return (dx / sx) ** 2 + (dy / sy) ** 2 <= 1.0
        if self.kind == "ring":
            r = np.hypot(dx, dy)
            return (r <= sx) & (r >= sx - self.thickness)
        if self.kind == "rectangle":
            return (np.abs(dx) <= sx) & (np.abs(dy) <= sy)
        # rect_outline
        outer = (np.abs(dx) <= sx) & (np.abs(dy) <= sy)
        inner = (np.abs(dx) < sx - self.thickness) & (np.abs(dy) < sy - self.thickness)
        return outer & ~inner


@dataclass
class Scene:
    """Point scatterers and shapes on the z = z0 plane.

    ``points`` is an (N, 3) array of (x, y, amplitude) rows.
    """

    points: np.ndarray
    shapes: list[Shape]
    z0: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.size and (
            np.any(self.points[:, 2] <= 0) or np.any(self.points[:, 2] > 1)
        ):
            raise ValidationError("point amplitudes must be in (0, 1]")


@dataclass
class SceneSpec:
    """Distribution parameters for random scene generation.

    Count ranges are inclusive. Shape sizes are drawn as fractions of the
    smaller FOV extent. Targets are confined to a centered sub-region
    covering ``margin`` of the FOV.
    """

    extent_x: float
    extent_y: float
    z0: float = 0.0
    n_points: tuple[int, int] = (1, 10)
    n_shapes: tuple[int, int] = (1, 2)
    amplitude_range: tuple[float, float] = (0.3, 1.0)
    size_frac: tuple[float, float] = (0.06, 0.16)
    thickness_frac: tuple[float, float] = (0.25, 0.6)
    kinds: tuple[str, ...] = SHAPE_KINDS
    margin: float = 0.9

    def validate(self):
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValidationError("scene FOV extents must be > 0")
        if self.n_points[1] < self.n_points[0] or self.n_points[0] < 0:
            raise ValidationError(f"empty point-count range {self.n_points}")
        if self.n_shapes[1] < self.n_shapes[0] or self.n_shapes[0] < 0:
            raise ValidationError(f"empty shape-count range {self.n_shapes}")
        if not (0 < self.margin <= 1):
            raise ValidationError("margin must be in (0, 1]")


def random_scene(spec: SceneSpec, seed) -> Scene:
    """Draw a scene from the configured distributions; deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    half_x = spec.margin * spec.extent_x / 2.0
    half_y = spec.margin * spec.extent_y / 2.0

    n_pts = int(rng.integers(spec.n_points[0], spec.n_points[1] + 1))
    n_shp = int(rng.integers(spec.n_shapes[0], spec.n_shapes[1] + 1))

    pts = np.zeros((n_pts, 3))
    pts[:, 0] = rng.uniform(-half_x, half_x, n_pts)
    pts[:, 1] = rng.uniform(-half_y, half_y, n_pts)
    pts[:, 2] = rng.uniform(*spec.amplitude_range, n_pts)

    min_extent = min(spec.extent_x, spec.extent_y)
    shapes = []
    for _ in range(n_shp):
        kind = spec.kinds[int(rng.integers(0, len(spec.kinds)))]
        s = rng.uniform(*spec.size_frac) * min_extent
        size = (s, s) if kind in ("disk", "ring") else (s, rng.uniform(*spec.size_frac) * min_extent)
        cx = rng.uniform(-(half_x - size[0]), half_x - size[0])
        cy = rng.uniform(-(half_y - size[1]), half_y - size[1])
        amp = rng.uniform(*spec.amplitude_range)
        thickness = 0.0
        if kind in ("ring", "rect_outline"):
            limit = size[0] if kind == "ring" else min(size)
            thickness = rng.uniform(*spec.thickness_frac) * limit
        shapes.append(Shape(kind=kind, center=(cx, cy), size=size, amplitude=amp,
                            thickness=thickness))
    return Scene(points=pts, shapes=shapes, z0=spec.z0)


def _check_in_fov(scene: Scene, grid: ImageGrid):
    offenders = []
    for i, (x, y, _a) in enumerate(scene.points):
        if not grid.contains(x, y):
            offenders.append(f"point[{i}] at ({x:.4g}, {y:.4g})")
    hx, hy = grid.extent_x / 2.0, grid.extent_y / 2.0
    for i, sh in enumerate(scene.shapes):
        if (abs(sh.center[0]) + sh.size[0] > hx) or (abs(sh.center[1]) + sh.size[1] > hy):
            offenders.append(f"shape[{i}] ({sh.kind}) at {sh.center}")
    if offenders:
        raise ValidationError("scene elements outside the FOV: " + "; ".join(offenders))


def _rasterize_shapes(scene: Scene, grid: ImageGrid) -> np.ndarray:
    img = np.zeros((grid.ny, grid.nx))
    if scene.shapes:
        px, py = np.meshgrid(grid.x_centers(), grid.y_centers())
        for sh in scene.shapes:
            mask = sh.covers(px, py)
            np.maximum(img, np.where(mask, sh.amplitude, 0.0), out=img)
    return img


def rasterize(scene: Scene, grid: ImageGrid) -> ReflectivityImage:
    """Ground-truth image: nearest-pixel points, center-in-shape fills.

    Overlapping contributions take the maximum amplitude, so values stay
    in [0, 1].
    """
    _check_in_fov(scene, grid)
    img = _rasterize_shapes(scene, grid)
    for x, y, amp in scene.points:
        iy, ix = grid.cell_index(x, y)
        img[iy, ix] = max(img[iy, ix], amp)
    return ReflectivityImage(pixels=img, grid=grid)


def point_cloud(scene: Scene, grid: ImageGrid) -> np.ndarray:
    """Discretize the scene into (x, y, amplitude) scatterers.

    Point scatterers pass through unchanged. Shapes contribute one
    scatterer per covered pixel center, row-major, carrying the pixel's
    rasterized amplitude — so the cloud support matches `rasterize` exactly
    even where shapes overlap.
    """
    _check_in_fov(scene, grid)
    rows = [scene.points.reshape(-1, 3)]
    img = _rasterize_shapes(scene, grid)
    iy, ix = np.nonzero(img)
    if iy.size:
        xc = grid.x_centers()[ix]
        yc = grid.y_centers()[iy]
        rows.append(np.column_stack([xc, yc, img[iy, ix]]))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 3))


def scene_to_json(scene: Scene) -> str:
    doc = {
        "schema": SCENE_SCHEMA,
        "units": "meters",
        "z0": scene.z0,
        "points": [
            {"x": float(x), "y": float(y), "amplitude": float(a)}
            for x, y, a in scene.points
        ],
        "shapes": [
            {
                "kind": sh.kind,
                "center": [float(sh.center[0]), float(sh.center[1])],
                "size": [float(sh.size[0]), float(sh.size[1])],
                "amplitude": float(sh.amplitude),
                "thickness": float(sh.thickness),
            }
            for sh in scene.shapes
        ],
    }
    return json.dumps(doc, indent=2)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    if doc.get("schema") != SCENE_SCHEMA:
        raise ValidationError(f"unsupported scene schema {doc.get('schema')!r}")
    pts = np.array([[p["x"], p["y"], p["amplitude"]] for p in doc["points"]]).reshape(-1, 3)
    shapes = [
        Shape(
            kind=s["kind"],
            center=tuple(s["center"]),
            size=tuple(s["size"]),
            amplitude=s["amplitude"],
            thickness=s.get("thickness", 0.0),
        )
        for s in doc["shapes"]
    ]
    return Scene(points=pts, shapes=shapes, z0=doc["z0"])


def write_scene_json(scene: Scene, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene_to_json(scene))


def read_scene_json(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_json(fh.read())
