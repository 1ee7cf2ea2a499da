"""Rotations, homogeneous transforms and rigid point-set registration.

Points are handled as ``(N, 3)`` float arrays (a single point may be passed
as a length-3 vector). Homogeneous transforms are plain ``(4, 4)`` arrays
whose bottom row is ``(0, 0, 0, 1)``; they may carry a uniform scale in the
linear block, which is how the calibration matrix is represented.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry

__all__ = [
    "RigidTransform",
    "rot_x",
    "rot_y",
    "rot_z",
    "euler_to_rotation",
    "homogeneous",
    "translation",
    "compose",
    "inverse",
    "apply",
    "kabsch_align",
    "icp_align",
]

_ORTHO_TOL = 1e-9


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(roll, pitch, yaw):
    """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; angles in radians."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def homogeneous(linear, offset=(0.0, 0.0, 0.0)):
    m = np.eye(4)
    m[:3, :3] = linear
    m[:3, 3] = offset
    return m


def translation(x, y, z):
    return homogeneous(np.eye(3), (x, y, z))


def compose(a, b):
    """Matrix product ``a @ b`` of two homogeneous transforms."""
    m = np.asarray(a, dtype=float) @ np.asarray(b, dtype=float)
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return m


def inverse(m):
    """Inverse of a homogeneous transform whose linear block is invertible."""
    m = np.asarray(m, dtype=float)
    lin_inv = np.linalg.inv(m[:3, :3])
    return homogeneous(lin_inv, -lin_inv @ m[:3, 3])


def apply(t, p):
    """Apply homogeneous transform ``t`` to one point or an ``(N, 3)`` array."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    return p @ t[:3, :3].T + t[:3, 3]


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation (mm). Immutable; arrays are made read-only."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self):
        return homogeneous(self.rotation, self.translation)

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, p):
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(
                self.rotation @ other.rotation,
                self.rotation @ other.translation + self.translation,
            )
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def _as_points(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"{name} must be an (N, 3) array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return p


def kabsch_align(source, target):
    """Least-squares rigid transform mapping ``source`` onto ``target``.

    Correspondences are given by index. Minimizes
    ``sum ||R @ s_i + t - t_i||**2`` with ``det(R) = +1``.

    Raises
    ------
    DegenerateGeometry
        Fewer than 3 pairs, or either set is (nearly) collinear.
    """
    src = _as_points(source, "source")
    dst = _as_points(target, "target")
    if src.shape != dst.shape:
        raise ValueError(f"point sets differ in shape: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise DegenerateGeometry(f"need at least 3 point pairs, got {len(src)}")

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst
    for pts, name in ((a, "source"), (b, "target")):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateGeometry(f"{name} points are collinear or coincident")

    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, c_dst - rot @ c_src)


def icp_align(source, target, max_iters=50, tol=1e-9, init=None):
    """Point-to-point ICP for unlabeled point sets.

    Alternates nearest-neighbour matching (source to target) with
    :func:`kabsch_align` until the mean residual changes by less than
    ``tol`` (mm) or ``max_iters`` is reached.
    """
    src = _as_points(source, "source")
    dst = _as_points(target, "target")
    if len(src) == 0 or len(dst) == 0:
        raise DegenerateGeometry("ICP needs non-empty point sets")
    tree = cKDTree(dst)
    current = init if init is not None else RigidTransform()
    prev = np.inf
    for _ in range(max_iters):
        dist, idx = tree.query(current.apply(src))
        step = kabsch_align(src, dst[idx])
        moved = step.apply(src)
        mean_res = float(np.mean(np.linalg.norm(moved - dst[idx], axis=1)))
        current = step
        if abs(prev - mean_res) < tol:
            break
        prev = mean_res
    return current
