"""Freehand volume reconstruction by forward nearest-voxel pasting.

Every pixel ``(u, v)`` of a tracked frame is mapped to the world by
``pose @ C @ (u, v, 0, 1)`` and dropped into the nearest voxel. No hole
filling is done. Frames are pasted sequentially in list order in every
compounding mode, so results are deterministic; mean mode accumulates exact
sums and divides once at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidSpec
from .geometry import compose

__all__ = [
    "COMPOUNDING_MODES",
    "FrameImage",
    "VolumePlan",
    "VoxelVolume",
    "frame_corners",
    "plan_volume",
    "paste_frames",
]

COMPOUNDING_MODES = ("mean", "max", "latest")
DEFAULT_SPACING = 0.25  # mm


@dataclass(frozen=True, eq=False)
class FrameImage:
    """Grayscale frame ``pixels[v, u]`` with its sensor-to-world pose."""

    pixels: np.ndarray
    pose: object

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise InvalidSpec(f"frame pixels must be a non-empty 2D array, got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class VolumePlan:
    dims: tuple  # (nx, ny, nz)
    origin: tuple  # mm, centre of voxel (0, 0, 0)
    spacing: float  # mm

    @property
    def size(self):
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Reconstructed grid. ``data`` and ``weight`` have shape ``(nz, ny, nx)``
    so that the flattened order is x-fastest.

    ``accumulator`` holds the exact per-voxel intensity sums in mean mode
    (``None`` otherwise).
    """

    dims: tuple
    spacing: float
    origin: tuple
    data: np.ndarray
    weight: np.ndarray
    compounding: str = "mean"
    accumulator: np.ndarray = None

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidSpec(f"invalid volume dims {self.dims}")
        if not self.spacing > 0:
            raise InvalidSpec("voxel spacing must be positive")
        shape = tuple(reversed(self.dims))
        if self.data.shape != shape or self.weight.shape != shape:
            raise InvalidSpec("data/weight shape does not match dims")

    def voxel_centres(self):
        """World coordinates of all voxel centres, shape ``(nz, ny, nx, 3)``."""
        nx, ny, nz = self.dims
        z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        idx = np.stack([x, y, z], axis=-1).astype(float)
        return np.asarray(self.origin) + self.spacing * idx


def frame_corners(width, height):
    """Outer pixel-edge corners of a ``width x height`` image, as ``(u, v)``."""
    return np.array(
        [[-0.5, -0.5], [width - 0.5, -0.5], [-0.5, height - 0.5], [width - 0.5, height - 0.5]]
    )


def _image_to_world(frame, calib):
    return compose(frame.pose.matrix, calib)


def plan_volume(frames, calib, spacing=DEFAULT_SPACING, padding=0.0):
    """Axis-aligned grid covering every frame's pixel footprint plus ``padding`` mm."""
    frames = list(frames)
    if not frames:
        raise EmptyInput("no frames to plan a volume for")
    if not spacing > 0:
        raise InvalidSpec("spacing must be positive")
    if not padding >= 0:
        raise InvalidSpec("padding must be non-negative")
    corners = []
    for f in frames:
        m = _image_to_world(f, calib)
        uv = frame_corners(f.width, f.height)
        corners.append(uv @ m[:3, :2].T + m[:3, 3])
    corners = np.vstack(corners)
    lo = corners.min(axis=0) - padding
    hi = corners.max(axis=0) + padding
    extent = hi - lo
    dims = tuple(max(1, math.ceil(e / spacing - 1e-9)) for e in extent)
    centre = (lo + hi) / 2.0
    origin = centre - (np.array(dims) - 1) * spacing / 2.0
    return VolumePlan(dims, tuple(float(o) for o in origin), float(spacing))


def _voxel_indices(frame, calib, plan):
    m = _image_to_world(frame, calib)
    vv, uu = np.mgrid[0 : frame.height, 0 : frame.width]
    uv = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    world = uv @ m[:3, :2].T + m[:3, 3]
    ijk = np.floor((world - plan.origin) / plan.spacing + 0.5).astype(np.int64)
    dims = np.array(plan.dims)
    inside = np.all((ijk >= 0) & (ijk < dims), axis=1)
    nx, ny, _ = plan.dims
    flat = ijk[:, 0] + nx * (ijk[:, 1] + ny * ijk[:, 2])
    return flat, inside


def paste_frames(frames, calib, plan, compounding="mean"):
    """Paste ``frames`` into the grid described by ``plan``.

    Returns ``(volume, dropped)`` where ``dropped`` counts pixels that fell
    outside the grid.
    """
    if compounding not in COMPOUNDING_MODES:
        raise InvalidSpec(f"compounding must be one of {COMPOUNDING_MODES}, got {compounding!r}")
    n = plan.size
    weight = np.zeros(n, dtype=np.int64)
    acc = np.zeros(n) if compounding == "mean" else None
    data = np.full(n, -np.inf) if compounding == "max" else np.zeros(n)
    dropped = 0

    for frame in frames:
        flat, inside = _voxel_indices(frame, calib, plan)
        values = frame.pixels.ravel().astype(float)
        dropped += int(np.count_nonzero(~inside))
        flat, values = flat[inside], values[inside]
        if flat.size == 0:
            continue
        weight += np.bincount(flat, minlength=n)
        if compounding == "mean":
            acc += np.bincount(flat, weights=values, minlength=n)
        elif compounding == "max":
            np.maximum.at(data, flat, values)
        else:
            # last pixel in raster order wins within a frame
            rev = flat[::-1]
            uniq, first = np.unique(rev, return_index=True)
            data[uniq] = values[::-1][first]

    if compounding == "mean":
        hit = weight > 0
        data[hit] = acc[hit] / weight[hit]
    elif compounding == "max":
        data[weight == 0] = 0.0

    shape = tuple(reversed(plan.dims))
    volume = VoxelVolume(
        dims=plan.dims,
        spacing=plan.spacing,
        origin=plan.origin,
        data=data.reshape(shape),
        weight=weight.reshape(shape),
        compounding=compounding,
        accumulator=None if acc is None else acc.reshape(shape),
    )
    return volume, dropped
