"""Optimization-based image-to-sensor calibration.

The calibration matrix maps image pixels ``(u, v, 0, 1)`` into the tracking
sensor frame::

    C = [ s * Rz(yaw) @ Ry(pitch) @ Rx(roll) | (tx, ty, tz) ]
        [            0                       |       1      ]

Each iteration rebuilds ``C``, projects the annotated needle tips into the
world frame through the tracked sensor poses, rigidly registers the
projected points to the phantom model, scores the mean squared residual and
takes one Adam step. The gradient treats the registration of the current
iterate as a constant; because that registration is itself a least-squares
optimum, this is also the exact gradient of the registered error.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .errors import DegenerateGeometry, InvalidSpec, UnknownFrame, UnknownLandmark
from .geometry import RigidTransform, euler_to_rotation, rot_x, rot_y, rot_z

log = logging.getLogger(__name__)

__all__ = [
    "PARAM_NAMES",
    "EULER_CONVENTION",
    "CalibrationParams",
    "LandmarkObservation",
    "CalibrationProblem",
    "OptimizerConfig",
    "CalibrationResult",
    "calibration_matrix",
    "project_landmarks",
    "registered_error",
    "objective_gradient",
    "solve",
    "landmark_rmse",
]

PARAM_NAMES = ("roll", "pitch", "yaw", "tx", "ty", "tz", "scale")
EULER_CONVENTION = "ZYX-extrinsic-rzryrx"


@dataclass(frozen=True)
class CalibrationParams:
    """Angles in radians, translations in mm, scale in mm per pixel."""

    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidSpec(f"calibration parameter {name} is not finite")
            object.__setattr__(self, name, value)
        if self.scale <= 0:
            raise InvalidSpec(f"scale must be positive, got {self.scale}")

    def as_vector(self):
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_vector(cls, v):
        return cls(*(float(x) for x in v))

    @property
    def rotation(self):
        return euler_to_rotation(self.roll, self.pitch, self.yaw)


@dataclass(frozen=True)
class LandmarkObservation:
    """Needle tip ``landmark_id`` seen at pixel ``(u, v)`` in ``frame``."""

    frame: int
    landmark_id: int
    u: float
    v: float


def calibration_matrix(params):
    m = np.eye(4)
    m[:3, :3] = params.scale * params.rotation
    m[:3, 3] = (params.tx, params.ty, params.tz)
    return m


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    """Phantom model, annotated tips and the sensor pose of every frame.

    ``poses`` maps frame index to the sensor-to-world :class:`RigidTransform`.
    """

    phantom: object
    observations: tuple
    poses: dict

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        n_landmarks = len(self.phantom.points)
        for o in obs:
            if not 0 <= o.landmark_id < n_landmarks:
                raise UnknownLandmark(f"observation refers to unknown landmark {o.landmark_id}")
            if o.frame not in self.poses:
                raise UnknownFrame(f"observation refers to frame {o.frame} with no pose")
        if len({o.landmark_id for o in obs}) < 3:
            raise DegenerateGeometry("calibration needs at least 3 distinct landmarks")
        if len({o.frame for o in obs}) < 2:
            raise DegenerateGeometry("calibration needs at least 2 distinct poses")

        frames = [o.frame for o in obs]
        pose_r = np.array([self.poses[f].rotation for f in frames])
        pose_t = np.array([self.poses[f].translation for f in frames])
        uv = np.array([(o.u, o.v) for o in obs], dtype=float)
        targets = self.phantom.points[[o.landmark_id for o in obs]]
        for name, arr in (("pose_r", pose_r), ("pose_t", pose_t), ("uv", uv), ("targets", targets)):
            arr.flags.writeable = False
            object.__setattr__(self, f"_{name}", arr)

    def __len__(self):
        return len(self.observations)

    def with_poses(self, poses):
        return CalibrationProblem(self.phantom, self.observations, poses)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    epsilon: float = 1e-4  # mm^2
    max_iters: int = 10000
    plateau_window: int = 200
    plateau_rel_tol: float = 1e-9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    registration: str = "kabsch"  # or "icp" for unlabeled landmarks
    restarts: int = 0
    restart_seed: int = 0
    center_pixels: bool = True

    def validate(self):
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be positive")
        if not self.epsilon >= 0:
            raise InvalidSpec("epsilon must be non-negative")
        if self.max_iters < 1:
            raise InvalidSpec("max_iters must be at least 1")
        if self.plateau_window < 1:
            raise InvalidSpec("plateau_window must be at least 1")
        if self.registration not in ("kabsch", "icp"):
            raise InvalidSpec(f"unknown registration {self.registration!r}")
        if self.restarts < 0:
            raise InvalidSpec("restarts must be non-negative")


@dataclass(frozen=True)
class CalibrationResult:
    params: CalibrationParams
    matrix: np.ndarray
    final_error: float  # mm^2
    iterations: int
    converged: bool
    error_trace: tuple = field(default=(), repr=False)

    @property
    def rmse(self):
        return math.sqrt(self.final_error)


def _project(problem, params):
    lin = params.scale * params.rotation
    local = problem._uv @ lin[:, :2].T + (params.tx, params.ty, params.tz)
    return np.einsum("nij,nj->ni", problem._pose_r, local) + problem._pose_t


def project_landmarks(problem, params):
    """World positions of the observed tips and their phantom counterparts.

    Returns two ``(N, 3)`` arrays in observation order.
    """
    return _project(problem, params), problem._targets.copy()


def _register(world, problem, registration):
    if registration == "kabsch":
        return geometry.kabsch_align(world, problem._targets), problem._targets
    if registration == "icp":
        pts = problem.phantom.points
        init = RigidTransform(np.eye(3), pts.mean(axis=0) - world.mean(axis=0))
        reg = geometry.icp_align(world, pts, init=init)
        _, idx = cKDTree(pts).query(reg.apply(world))
        return reg, pts[idx]
    raise InvalidSpec(f"unknown registration {registration!r}")


def registered_error(problem, params, registration="kabsch"):
    """Mean squared landmark residual (mm^2) after rigid registration.

    Returns ``(error, registration_transform)``.
    """
    world = _project(problem, params)
    reg, targets = _register(world, problem, registration)
    resid = reg.apply(world) - targets
    return float(np.mean(np.sum(resid * resid, axis=1))), reg


def _gradient(problem, params, reg, targets, world, uv=None):
    uv = problem._uv if uv is None else uv
    n = len(world)
    resid = reg.apply(world) - targets
    g_world = (2.0 / n) * resid @ reg.rotation  # rows: R_reg^T r_i
    g_local = np.einsum("nji,nj->ni", problem._pose_r, g_world)  # R_k^T g

    # dE/dM for the first two columns of the linear block M = s R
    g_lin = g_local.T @ uv  # (3, 2)
    rx, ry, rz = rot_x(params.roll), rot_y(params.pitch), rot_z(params.yaw)
    s = params.scale

    def d_rot(a, axis):
        c, sn = math.cos(a), math.sin(a)
        if axis == 0:
            return np.array([[0.0, 0.0, 0.0], [0.0, -sn, -c], [0.0, c, -sn]])
        if axis == 1:
            return np.array([[-sn, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -sn]])
        return np.array([[-sn, -c, 0.0], [c, -sn, 0.0], [0.0, 0.0, 0.0]])

    d_roll = s * (rz @ ry @ d_rot(params.roll, 0))
    d_pitch = s * (rz @ d_rot(params.pitch, 1) @ rx)
    d_yaw = s * (d_rot(params.yaw, 2) @ ry @ rx)
    rot = rz @ ry @ rx

    grad = np.empty(7)
    grad[0] = np.sum(g_lin * d_roll[:, :2])
    grad[1] = np.sum(g_lin * d_pitch[:, :2])
    grad[2] = np.sum(g_lin * d_yaw[:, :2])
    grad[3:6] = g_local.sum(axis=0)
    grad[6] = np.sum(g_lin * rot[:, :2])
    return grad


def objective_gradient(problem, params, registration="kabsch", fixed_registration=None):
    """Gradient of :func:`registered_error` w.r.t. ``PARAM_NAMES``.

    The registration is estimated at ``params`` (or taken from
    ``fixed_registration``) and then held constant.
    """
    world = _project(problem, params)
    if fixed_registration is None:
        reg, targets = _register(world, problem, registration)
    else:
        reg, targets = fixed_registration, problem._targets
    return _gradient(problem, params, reg, targets, world)


def landmark_rmse(problem, params, registration="kabsch"):
    err, _ = registered_error(problem, params, registration)
    return math.sqrt(err)


class _Adam:
    def __init__(self, lr, beta1, beta2, eps, size):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (g * g)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# Internal coordinates: angles, the image of pixel ``centre`` (instead of
# pixel (0, 0)) and log(scale). Anchoring the translation at the centroid of
# the annotations decouples it from the rotation; the log keeps scale > 0.
def _to_internal(params, centre):
    v = params.as_vector()
    v[3:6] += params.scale * params.rotation[:, :2] @ centre
    v[6] = math.log(v[6])
    return v


def _from_internal(x, centre):
    v = np.array(x, dtype=float)
    v[6] = math.exp(v[6])
    v[3:6] -= v[6] * euler_to_rotation(*v[:3])[:, :2] @ centre
    return CalibrationParams.from_vector(v)


def _solve_once(problem, config, init):
    centre = problem._uv.mean(axis=0) if config.center_pixels else np.zeros(2)
    uv_centred = problem._uv - centre
    x = _to_internal(init, centre)
    adam = _Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps, 7)
    trace = []
    best_trace = []
    best_err, best_params = math.inf, init
    converged = False

    for it in range(config.max_iters):
        params = _from_internal(x, centre)
        world = _project(problem, params)
        reg, targets = _register(world, problem, config.registration)
        resid = reg.apply(world) - targets
        err = float(np.mean(np.sum(resid * resid, axis=1)))
        trace.append(err)
        if err < best_err:
            best_err, best_params = err, params
        best_trace.append(best_err)

        if best_err <= config.epsilon:
            converged = True
            break
        w = config.plateau_window
        if it >= w:
            ref = best_trace[it - w]
            if ref - best_err <= config.plateau_rel_tol * ref:
                log.debug("plateau after %d iterations (error %.3g)", it + 1, best_err)
                break

        grad = _gradient(problem, params, reg, targets, world, uv_centred)
        grad[6] *= params.scale  # chain rule for log(scale)
        x = adam.step(x, grad)
        if not np.all(np.isfinite(x)):
            log.warning("optimizer diverged at iteration %d", it + 1)
            break

    return CalibrationResult(
        params=best_params,
        matrix=calibration_matrix(best_params),
        final_error=best_err,
        iterations=len(trace),
        converged=converged,
        error_trace=tuple(trace),
    )


def _jitter(init, rng):
    x = _to_internal(init, np.zeros(2))
    x[:3] += rng.uniform(-0.35, 0.35, 3)
    x[3:6] += rng.uniform(-10.0, 10.0, 3)
    x[6] += rng.uniform(-0.4, 0.4)
    return _from_internal(x, np.zeros(2))


def solve(problem, config=None, init=None):
    """Run the calibration loop from ``init`` (identity calibration by default).

    Stops when the error reaches ``config.epsilon``, after ``max_iters``
    iterations, or when the best error improved by less than
    ``plateau_rel_tol`` (relative) over ``plateau_window`` iterations. The
    lowest-error iterate is returned. With ``config.restarts > 0`` the loop
    is rerun from seeded jittered starts until one converges and the best
    run is reported.
    """
    config = config or OptimizerConfig()
    config.validate()
    init = init or CalibrationParams()
    best = _solve_once(problem, config, init)
    if config.restarts and not best.converged:
        rng = np.random.default_rng(config.restart_seed)
        for k in range(config.restarts):
            run = _solve_once(problem, config, _jitter(init, rng))
            log.info("restart %d: error %.3g", k + 1, run.final_error)
            if run.final_error < best.final_error:
                best = run
            if best.converged:
                break
    return best
