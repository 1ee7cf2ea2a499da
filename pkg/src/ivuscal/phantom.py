"""Landmark model of the needle-cluster calibration phantom.

Phantom frame: the cavity cylinder axis is ``z`` and the origin sits on the
axis. A needle of length ``L`` mounted on the cavity wall (radius ``r``) at
cluster angle ``theta`` with axial offset ``a`` has its tip at
``((r - L) cos theta, (r - L) sin theta, a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidSpec

__all__ = ["PhantomSpec", "PhantomModel", "build_phantom", "default_phantom", "DEFAULT_SPEC"]


@dataclass(frozen=True)
class PhantomSpec:
    cluster_angles: tuple  # degrees
    needles_per_cluster: int
    needle_lengths: tuple  # mm, one per needle within a cluster
    cavity_radius: float  # mm
    axial_offsets: tuple  # mm, one per needle within a cluster

    def __post_init__(self):
        for name in ("cluster_angles", "needle_lengths", "axial_offsets"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))

    def validate(self):
        if self.needles_per_cluster < 1:
            raise InvalidSpec("needles_per_cluster must be >= 1")
        if not self.cluster_angles:
            raise InvalidSpec("at least one cluster angle is required")
        if len(self.needle_lengths) != self.needles_per_cluster:
            raise InvalidSpec(
                f"expected {self.needles_per_cluster} needle lengths, got {len(self.needle_lengths)}"
            )
        if len(self.axial_offsets) != self.needles_per_cluster:
            raise InvalidSpec(
                f"expected {self.needles_per_cluster} axial offsets, got {len(self.axial_offsets)}"
            )
        values = self.cluster_angles + self.needle_lengths + self.axial_offsets + (self.cavity_radius,)
        if not all(math.isfinite(v) for v in values):
            raise InvalidSpec("phantom spec values must be finite")
        if not self.cavity_radius > 0:
            raise InvalidSpec("cavity_radius must be positive")
        for length in self.needle_lengths:
            if not 0 < length < self.cavity_radius:
                raise InvalidSpec(
                    f"needle length {length} mm outside (0, {self.cavity_radius}) mm"
                )


DEFAULT_SPEC = PhantomSpec(
    cluster_angles=(60.0, 90.0, 120.0),
    needles_per_cluster=5,
    needle_lengths=(10.0, 30.0, 50.0, 20.0, 40.0),
    cavity_radius=65.0,
    axial_offsets=(-10.0, -5.0, 0.0, 5.0, 10.0),
)


@dataclass(frozen=True, eq=False)
class PhantomModel:
    """Needle-tip coordinates (mm, phantom frame), row ``i`` is landmark id ``i``."""

    points: np.ndarray
    spec: Optional[PhantomSpec] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidSpec(f"phantom points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidSpec("phantom points must be finite")
        if self.spec is not None and len(pts):
            radial = np.hypot(pts[:, 0], pts[:, 1])
            if np.any(radial > self.spec.cavity_radius):
                raise InvalidSpec("landmark lies outside the cavity")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def landmark_ids(self):
        return range(len(self.points))

    @property
    def landmarks(self):
        """Mapping ``landmark_id -> point``."""
        return {i: self.points[i] for i in self.landmark_ids}

    def __eq__(self, other):
        if not isinstance(other, PhantomModel):
            return NotImplemented
        return np.array_equal(self.points, other.points) and self.spec == other.spec


def build_phantom(spec):
    """Needle tips for every (cluster, needle), ids cluster-major."""
    spec.validate()
    tips = []
    for angle in spec.cluster_angles:
        theta = math.radians(angle)
        c, s = math.cos(theta), math.sin(theta)
        for length, offset in zip(spec.needle_lengths, spec.axial_offsets):
            rho = spec.cavity_radius - length
            tips.append((rho * c, rho * s, offset))
    return PhantomModel(np.array(tips), spec)


def default_phantom():
    """Three 5-needle clusters at 60, 90 and 120 degrees in a 65 mm cavity."""
    return build_phantom(DEFAULT_SPEC)
