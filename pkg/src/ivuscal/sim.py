"""Synthetic tracked acquisitions with known ground-truth calibration.

The probe sits on the cavity axis and rotates about it. At rotation angle
``phi`` the image plane contains the axis: image ``u`` runs along ``+z``
(transducer at the top-centre pixel, on the axis) and image ``v`` (depth)
runs radially outward along ``(cos phi, sin phi, 0)``. Sensor poses are
derived from that image placement and the ground-truth calibration, so
poses at the cluster angles see all needles of the cluster.

The world (tracker) frame differs from the phantom frame by a rigid
offset, random per seed unless given.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .calibration import (
    CalibrationParams,
    CalibrationProblem,
    LandmarkObservation,
    PARAM_NAMES,
    calibration_matrix,
)
from .errors import InvalidSpec, NoVisibleLandmarks
from .geometry import RigidTransform, compose, inverse

__all__ = [
    "AcquisitionSpec",
    "TrackedSequence",
    "LandmarkObservation",
    "DEFAULT_BOUNDS",
    "image_plane_pose",
    "sensor_pose",
    "landmarks_in_image",
    "simulate_acquisition",
    "random_calibration",
    "render_frame",
]

IMAGE_SIZE = (680, 480)  # width, height in px


@dataclass(frozen=True)
class AcquisitionSpec:
    pose_count: int = 150
    sweep: float = 360.0  # degrees, clockwise
    depth_mm: float = 90.0
    pixel_noise_sigma: float = 0.0
    pose_translation_noise_sigma: float = 0.0
    pose_rotation_noise_sigma: float = 0.0  # degrees
    slab_half_thickness: float = 1.0  # mm
    seed: int = 0
    # poses aimed exactly at these angles come first; the rest sweep
    anchor_angles: tuple = (60.0, 90.0, 120.0)
    sweep_start: float = 0.0  # degrees
    axial_position: float = 0.0  # mm, transducer position along the axis
    image_size: tuple = IMAGE_SIZE
    world_offset: Optional[RigidTransform] = None
    # Annotate tips seen by sweep poses too. Such tips may sit up to the slab
    # half-thickness off the image plane, so their annotations carry that
    # much model error even without noise.
    annotate_sweep: bool = False

    def validate(self):
        if self.pose_count < 1:
            raise InvalidSpec("pose_count must be >= 1")
        sigmas = (
            self.pixel_noise_sigma,
            self.pose_translation_noise_sigma,
            self.pose_rotation_noise_sigma,
        )
        if any(not s >= 0 for s in sigmas):
            raise InvalidSpec("noise sigmas must be non-negative")
        if not self.slab_half_thickness > 0:
            raise InvalidSpec("slab_half_thickness must be positive")
        if not self.depth_mm > 0:
            raise InvalidSpec("depth_mm must be positive")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise InvalidSpec("image_size must be (width, height) >= 1")

    def pose_angles(self):
        anchors = [float(a) for a in self.anchor_angles][: self.pose_count]
        n_sweep = self.pose_count - len(anchors)
        step = self.sweep / n_sweep if n_sweep else 0.0
        return anchors + [self.sweep_start - j * step for j in range(n_sweep)]


@dataclass(frozen=True, eq=False)
class TrackedSequence:
    poses: dict  # frame -> RigidTransform (as recorded, noise included)
    observations: tuple
    ground_truth: Optional[CalibrationParams] = None
    true_poses: dict = field(default_factory=dict)
    world_offset: Optional[RigidTransform] = None

    def problem(self, phantom):
        return CalibrationProblem(phantom, self.observations, self.poses)

    def __eq__(self, other):
        if not isinstance(other, TrackedSequence):
            return NotImplemented
        return (
            self.poses == other.poses
            and self.observations == other.observations
            and self.ground_truth == other.ground_truth
            and self.true_poses == other.true_poses
            and self.world_offset == other.world_offset
        )


def image_plane_pose(angle_deg, width, axial_position=0.0):
    """Rigid placement of the image plane in the phantom frame (pixel units
    along the axes still need the calibration scale)."""
    phi = math.radians(angle_deg)
    radial = np.array([math.cos(phi), math.sin(phi), 0.0])
    axis = np.array([0.0, 0.0, 1.0])
    rot = np.column_stack([axis, radial, np.cross(axis, radial)])
    return rot, np.array([0.0, 0.0, axial_position]), width / 2.0


def sensor_pose(gt, angle_deg, width, axial_position=0.0, world_offset=None):
    """Sensor-to-world pose that puts the image plane at ``angle_deg``."""
    rot, apex, u_centre = image_plane_pose(angle_deg, width, axial_position)
    s = gt.scale
    origin = apex - s * u_centre * rot[:, 0]
    image_to_phantom = np.eye(4)
    image_to_phantom[:3, :3] = s * rot
    image_to_phantom[:3, 3] = origin
    pose = compose(image_to_phantom, inverse(calibration_matrix(gt)))
    # strip rounding so the rotation block is exactly orthonormal
    u, _, vt = np.linalg.svd(pose[:3, :3])
    t = RigidTransform(u @ vt, pose[:3, 3])
    if world_offset is not None:
        t = world_offset @ t
    return t


def landmarks_in_image(points_world, pose, gt):
    """Image coordinates ``(u, v, w)`` of world points; ``w`` is the
    out-of-plane coordinate in pixels."""
    to_image = inverse(compose(pose.matrix, calibration_matrix(gt)))
    pts = np.asarray(points_world, dtype=float)
    return pts @ to_image[:3, :3].T + to_image[:3, 3]


def _visible(uvw, gt, image_size, depth_mm, slab):
    width, height = image_size
    u, v, w = uvw[:, 0], uvw[:, 1], uvw[:, 2]
    max_v = min(height - 1, depth_mm / gt.scale)
    return (np.abs(w) * gt.scale <= slab) & (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= max_v)


def _random_offset(rng):
    rot = Rotation.random(random_state=rng).as_matrix()
    u, _, vt = np.linalg.svd(rot)
    return RigidTransform(u @ vt, rng.uniform(-100.0, 100.0, 3))


def _perturb(pose, rng, sigma_t, sigma_r_deg):
    dr = np.eye(3)
    if sigma_r_deg > 0:
        rotvec = rng.normal(0.0, math.radians(sigma_r_deg), 3)
        u, _, vt = np.linalg.svd(Rotation.from_rotvec(rotvec).as_matrix())
        dr = u @ vt
    dt = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
    rot = dr @ pose.rotation
    u, _, vt = np.linalg.svd(rot)
    return RigidTransform(u @ vt, pose.translation + dt)


def simulate_acquisition(phantom, gt, spec=None):
    """Synthesize sensor poses and needle-tip annotations.

    Observations are ordered by frame, then landmark id. Pose noise is drawn
    after the observations are placed, so it only corrupts the recorded poses.
    """
    spec = spec or AcquisitionSpec()
    spec.validate()
    if not gt.scale > 0:
        raise InvalidSpec("ground-truth scale must be positive")
    rng = np.random.default_rng(spec.seed)
    offset = spec.world_offset if spec.world_offset is not None else _random_offset(rng)
    world_pts = offset.apply(phantom.points)
    width = spec.image_size[0]

    true_poses = {}
    observations = []
    n_anchor = min(len(spec.anchor_angles), spec.pose_count)
    for frame, angle in enumerate(spec.pose_angles()):
        pose = sensor_pose(gt, angle, width, spec.axial_position, offset)
        true_poses[frame] = pose
        if frame >= n_anchor and not spec.annotate_sweep:
            continue
        uvw = landmarks_in_image(world_pts, pose, gt)
        vis = np.flatnonzero(_visible(uvw, gt, spec.image_size, spec.depth_mm, spec.slab_half_thickness))
        for lid in vis:
            u, v = uvw[lid, 0], uvw[lid, 1]
            if spec.pixel_noise_sigma > 0:
                u, v = (u, v) + rng.normal(0.0, spec.pixel_noise_sigma, 2)
            observations.append(LandmarkObservation(frame, int(lid), float(u), float(v)))

    if not observations:
        raise NoVisibleLandmarks("no landmark falls inside the image slab at any pose")

    poses = {
        f: _perturb(p, rng, spec.pose_translation_noise_sigma, spec.pose_rotation_noise_sigma)
        if (spec.pose_translation_noise_sigma > 0 or spec.pose_rotation_noise_sigma > 0)
        else p
        for f, p in true_poses.items()
    }
    return TrackedSequence(poses, tuple(observations), gt, true_poses, offset)


DEFAULT_BOUNDS = {
    "roll": (-math.radians(20), math.radians(20)),
    "pitch": (-math.radians(20), math.radians(20)),
    "yaw": (-math.radians(20), math.radians(20)),
    "tx": (-10.0, 10.0),
    "ty": (-10.0, 10.0),
    "tz": (-10.0, 10.0),
    "scale": (0.5, 1.5),
}


def random_calibration(bounds=None, seed=0):
    """Uniform draw of calibration parameters inside ``bounds``.

    ``bounds`` maps each name in ``PARAM_NAMES`` to ``(low, high)``; angles
    in radians. Missing names fall back to ``DEFAULT_BOUNDS``.
    """
    merged = dict(DEFAULT_BOUNDS)
    merged.update(bounds or {})
    for name in PARAM_NAMES:
        lo, hi = merged[name]
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise InvalidSpec(f"invalid bounds for {name}: {(lo, hi)}")
    if merged["scale"][0] <= 0:
        raise InvalidSpec("scale bounds must be positive")
    rng = np.random.default_rng(seed)
    return CalibrationParams(*(float(rng.uniform(*merged[n])) for n in PARAM_NAMES))


def render_frame(
    phantom,
    gt,
    pose,
    image_size=IMAGE_SIZE,
    depth_mm=90.0,
    slab_half_thickness=1.0,
    sigma_px=2.0,
    world_offset=None,
):
    """8-bit frame with a Gaussian blob (peak 255) at every visible tip.

    ``pose`` is the true sensor pose; ``world_offset`` maps phantom to world
    coordinates (identity when omitted). Returns a ``(height, width)`` array.
    """
    width, height = image_size
    pts = phantom.points if world_offset is None else world_offset.apply(phantom.points)
    uvw = landmarks_in_image(pts, pose, gt)
    vis = _visible(uvw, gt, image_size, depth_mm, slab_half_thickness)
    img = np.zeros((height, width))
    if not np.any(vis):
        return img.astype(np.uint8)
    vv, uu = np.mgrid[0:height, 0:width]
    for u, v in uvw[vis, :2]:
        blob = 255.0 * np.exp(-((uu - u) ** 2 + (vv - v) ** 2) / (2.0 * sigma_px**2))
        np.maximum(img, blob, out=img)
    return np.rint(img).astype(np.uint8)
