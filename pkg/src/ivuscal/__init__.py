"""Spatial calibration of tracked intravascular ultrasound (IVUS) probes.

Modules
-------
geometry     rotations, homogeneous transforms, Kabsch and ICP registration
phantom      needle-cluster phantom landmark model
sim          synthetic tracked acquisitions with known ground truth
calibration  calibration matrix, registered landmark error, Adam solver
recon        freehand volume reconstruction by voxel pasting
io           CSV / calibration / volume / PGM file formats
cli          ``ivuscal`` command-line front end
"""
from .calibration import (
    CalibrationParams,
    CalibrationProblem,
    CalibrationResult,
    LandmarkObservation,
    OptimizerConfig,
    calibration_matrix,
    landmark_rmse,
    objective_gradient,
    project_landmarks,
    registered_error,
    solve,
)
from .errors import DegenerateGeometry, IvusCalError, ParseError
from .geometry import RigidTransform, euler_to_rotation, icp_align, kabsch_align
from .phantom import PhantomModel, PhantomSpec, build_phantom, default_phantom
from .recon import FrameImage, VoxelVolume, paste_frames, plan_volume
from .sim import AcquisitionSpec, TrackedSequence, random_calibration, render_frame, simulate_acquisition

__version__ = "0.1.0"
