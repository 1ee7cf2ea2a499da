import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivuscal.calibration import CalibrationParams, calibration_matrix
from ivuscal.errors import EmptyInput, InvalidSpec
from ivuscal.geometry import RigidTransform, rot_x, rot_y, rot_z
from ivuscal.phantom import PhantomModel
from ivuscal.recon import FrameImage, VolumePlan, _voxel_indices, paste_frames, plan_volume
from ivuscal.sim import render_frame, sensor_pose

EYE = np.eye(4)


def flat_frame(value, width=4, height=3, pose=None):
    return FrameImage(np.full((height, width), value, dtype=np.uint8), pose or RigidTransform())


def sweep_volume(spacing=0.25, compounding="mean"):
    """Rotational sweep of a single landmark 5 mm off the cavity axis."""
    tip = np.array([[0.0, 5.0, 0.0]])
    phantom = PhantomModel(tip)
    gt = CalibrationParams(roll=0.1, pitch=-0.05, yaw=0.2, tx=1.0, ty=-2.0, tz=0.5, scale=0.1)
    size = (64, 160)
    frames = []
    for angle in np.arange(80.0, 100.0 + 1e-9, 0.25):
        pose = sensor_pose(gt, angle, size[0])
        img = render_frame(phantom, gt, pose, image_size=size, depth_mm=16.0, slab_half_thickness=1.0)
        frames.append(FrameImage(img, pose))
    calib = calibration_matrix(gt)
    plan = plan_volume(frames, calib, spacing=spacing, padding=1.0)
    vol, dropped = paste_frames(frames, calib, plan, compounding)
    return tip[0], frames, calib, plan, vol, dropped


def intensity_centroid(vol):
    w = vol.data.astype(float)
    return np.tensordot(w, vol.voxel_centres(), axes=([0, 1, 2], [0, 1, 2])) / w.sum()


# -- plan_volume ---------------------------------------------------------------


def test_plan_single_identity_frame():
    frame = FrameImage(np.zeros((480, 680)), RigidTransform())
    plan = plan_volume([frame], EYE, spacing=1.0)
    assert plan.dims == (680, 480, 1)
    np.testing.assert_allclose(plan.origin, [0, 0, 0], atol=1e-12)


def test_plan_duplicate_frames_same_box():
    frame = FrameImage(np.zeros((480, 680)), RigidTransform())
    assert plan_volume([frame, frame], EYE, 1.0) == plan_volume([frame], EYE, 1.0)


def test_plan_quarter_spacing_quadruples_dims():
    frame = FrameImage(np.zeros((480, 680)), RigidTransform())
    coarse = plan_volume([frame], EYE, 1.0)
    fine = plan_volume([frame], EYE, 0.25)
    assert fine.dims[:2] == (4 * coarse.dims[0], 4 * coarse.dims[1])


def test_plan_errors():
    with pytest.raises(EmptyInput):
        plan_volume([], EYE)
    with pytest.raises(InvalidSpec):
        plan_volume([flat_frame(1)], EYE, spacing=0.0)


# -- paste_frames --------------------------------------------------------------


def test_identity_paste_copies_pixels():
    px = np.arange(12, dtype=np.uint8).reshape(3, 4)
    frame = FrameImage(px, RigidTransform())
    vol, dropped = paste_frames([frame], EYE, plan_volume([frame], EYE, 1.0))
    assert dropped == 0
    np.testing.assert_array_equal(vol.data[0], px)
    np.testing.assert_array_equal(vol.weight[0], 1)


@pytest.mark.parametrize("mode,expected", [("mean", 150), ("max", 200), ("latest", 200)])
def test_compounding_semantics(mode, expected):
    frames = [flat_frame(100), flat_frame(200)]
    vol, _ = paste_frames(frames, EYE, plan_volume(frames, EYE, 1.0), mode)
    np.testing.assert_array_equal(vol.data, expected)
    np.testing.assert_array_equal(vol.weight, 2)


def test_latest_respects_frame_order():
    frames = [flat_frame(200), flat_frame(100)]
    vol, _ = paste_frames(frames, EYE, plan_volume(frames, EYE, 1.0), "latest")
    np.testing.assert_array_equal(vol.data, 100)


def test_unknown_mode_rejected():
    with pytest.raises(InvalidSpec):
        paste_frames([flat_frame(1)], EYE, plan_volume([flat_frame(1)], EYE), "median")


def test_pixels_outside_plan_are_dropped():
    frame = flat_frame(7)
    plan = VolumePlan((2, 3, 1), (0.0, 0.0, 0.0), 1.0)
    vol, dropped = paste_frames([frame], EYE, plan)
    assert dropped == 6
    assert vol.weight.sum() == 6


def test_data_layout_is_x_fastest():
    frame = flat_frame(0, width=5, height=2)
    vol, _ = paste_frames([frame], EYE, plan_volume([frame], EYE, 1.0))
    assert vol.dims == (5, 2, 1)
    assert vol.data.shape == (1, 2, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mean_mode_conservation_is_exact(seed):
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(4):
        rot = rot_z(rng.uniform(-1, 1)) @ rot_x(rng.uniform(-1, 1))
        px = rng.integers(0, 256, (9, 11), dtype=np.uint8)
        frames.append(FrameImage(px, RigidTransform(rot, rng.uniform(-3, 3, 3))))
    calib = calibration_matrix(CalibrationParams(scale=rng.uniform(0.2, 1.0)))
    plan = plan_volume(frames, calib, spacing=0.5)
    # shrink the grid so that some pixels are dropped
    small = VolumePlan(tuple(max(1, d - 3) for d in plan.dims), plan.origin, plan.spacing)
    vol, dropped = paste_frames(frames, calib, small)
    kept_sum = 0.0
    kept = 0
    for f in frames:
        _, inside = _voxel_indices(f, calib, small)
        kept_sum += f.pixels.ravel()[inside].astype(float).sum()
        kept += int(inside.sum())
    assert vol.accumulator.sum() == kept_sum
    assert vol.weight.sum() == kept
    assert dropped == sum(f.pixels.size for f in frames) - kept
    hit = vol.weight > 0
    np.testing.assert_allclose(vol.data[hit] * vol.weight[hit], vol.accumulator[hit], rtol=1e-12)


@pytest.mark.parametrize(
    "rot",
    [rot_z(np.pi / 2), rot_x(np.pi / 2), rot_y(-np.pi / 2), rot_z(np.pi)],
    ids=["z90", "x90", "y-90", "z180"],
)
def test_axis_aligned_rotation_permutes_voxels(rot, rng):
    rot = np.rint(rot)
    frames = [
        FrameImage(rng.integers(0, 256, (6, 8), dtype=np.uint8), RigidTransform(rot_x(a), [0.1, 0.2, 0.3]))
        for a in (0.0, 0.4, 1.0)
    ]
    calib = calibration_matrix(CalibrationParams(scale=0.5))
    plan = plan_volume(frames, calib, spacing=0.5)
    vol, dropped = paste_frames(frames, calib, plan)

    g = RigidTransform(rot, [0.0, 0.0, 0.0])
    moved = [FrameImage(f.pixels, g @ f.pose) for f in frames]
    plan_g = plan_volume(moved, calib, spacing=0.5)
    vol_g, dropped_g = paste_frames(moved, calib, plan_g)
    assert dropped == dropped_g == 0

    # map each voxel centre of the original grid through G and look it up in the rotated grid
    centres = vol.voxel_centres().reshape(-1, 3) @ rot.T
    idx = np.rint((centres - plan_g.origin) / plan_g.spacing).astype(int)
    assert np.all(idx >= 0) and np.all(idx < plan_g.dims)
    np.testing.assert_array_equal(vol_g.weight[idx[:, 2], idx[:, 1], idx[:, 0]], vol.weight.ravel())
    np.testing.assert_array_equal(vol_g.data[idx[:, 2], idx[:, 1], idx[:, 0]], vol.data.ravel())


def test_padding_never_increases_drops():
    frames = [
        FrameImage(np.ones((5, 7), dtype=np.uint8), RigidTransform(rot_z(a), [a, 0, 0])) for a in (0, 0.3, 0.6)
    ]
    base = plan_volume(frames[:1], EYE, 1.0)
    last = None
    for pad in (0.0, 1.0, 2.0, 4.0, 8.0):
        plan = plan_volume(frames[:1], EYE, 1.0, padding=pad)
        assert plan.dims >= base.dims
        _, dropped = paste_frames(frames, EYE, plan)
        if last is not None:
            assert dropped <= last
        last = dropped
    assert last == 0


# -- simulator oracle ----------------------------------------------------------


def test_sweep_centroid_matches_landmark():
    tip, _, _, plan, vol, dropped = sweep_volume()
    assert plan.spacing == 0.25
    assert dropped == 0
    assert np.linalg.norm(intensity_centroid(vol) - tip) <= 0.25


def test_sweep_modes_share_support():
    _, _, _, _, mean_vol, _ = sweep_volume(compounding="mean")
    _, _, _, _, max_vol, _ = sweep_volume(compounding="max")
    np.testing.assert_array_equal(mean_vol.weight, max_vol.weight)
    assert np.all(max_vol.data >= mean_vol.data - 1e-12)
