import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from ivuscal.calibration import CalibrationParams, CalibrationResult, LandmarkObservation, calibration_matrix
from ivuscal.errors import DuplicateId, IoError, NonRigidPose, ParseError, VersionMismatch
from ivuscal.geometry import RigidTransform
from ivuscal.io import (
    Manifest,
    load_calibration,
    load_manifest,
    load_observations,
    load_phantom,
    load_poses,
    load_volume,
    read_pgm,
    save_calibration,
    save_manifest,
    save_observations,
    save_phantom,
    save_poses,
    save_volume,
    write_pgm,
)
from ivuscal.recon import VoxelVolume


def result_for(params, **kw):
    base = dict(final_error=1.25e-5, iterations=321, converged=True, error_trace=[1.0, 1.25e-5])
    base.update(kw)
    return CalibrationResult(params=params, matrix=calibration_matrix(params), **base)


# -- phantom -------------------------------------------------------------------


def test_default_phantom_has_sixteen_lines(phantom, tmp_path):
    path = tmp_path / "phantom.csv"
    save_phantom(phantom, path)
    data = path.read_bytes()
    assert data.count(b"\n") == 16 and b"\r" not in data
    assert data.startswith(b"id,x_mm,y_mm,z_mm\n")


def test_phantom_round_trip_is_byte_identical(phantom, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_phantom(phantom, a)
    loaded = load_phantom(a)
    save_phantom(loaded, b)
    assert a.read_bytes() == b.read_bytes()
    # value-exact at 9 significant digits
    expected = np.array([[float(format(x, ".9g")) for x in row] for row in phantom.points])
    np.testing.assert_array_equal(loaded.points, expected)


def test_empty_file_is_parse_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError):
        load_phantom(path)


def test_phantom_duplicate_id(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("id,x_mm,y_mm,z_mm\n0,1,2,3\n0,4,5,6\n")
    with pytest.raises(DuplicateId) as info:
        load_phantom(path)
    assert info.value.line == 3


@pytest.mark.parametrize(
    "text",
    [
        "id,x_mm,y_mm\n0,1,2\n",
        "id,x_mm,y_mm,z_mm\n0,1,2,3,4\n",
        "id,x_mm,y_mm,z_mm\n0,1,two,3\n",
        "id,x_mm,y_mm,z_mm\n0,1,nan,3\n",
    ],
    ids=["bad-header", "extra-column", "not-a-number", "nan"],
)
def test_phantom_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParseError):
        load_phantom(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_phantom(tmp_path / "nope.csv")


# -- poses ---------------------------------------------------------------------

POSE_HEADER = "frame,r00,r01,r02,tx_mm,r10,r11,r12,ty_mm,r20,r21,r22,tz_mm\n"


def test_identity_pose_row(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "0,1,0,0,0,0,1,0,0,0,0,1,0\n")
    poses = load_poses(path)
    assert poses == {0: RigidTransform()}


def test_reflection_rejected(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "0,1,0,0,0,0,1,0,0,0,0,-1,0\n")
    with pytest.raises(NonRigidPose):
        load_poses(path)


def test_large_correction_rejected(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "0,1.01,0,0,0,0,1,0,0,0,0,1,0\n")
    with pytest.raises(NonRigidPose):
        load_poses(path)


def test_small_correction_projected(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "0,1.0001,0,0,0,0,1,0,0,0,0,1,0\n")
    rot = load_poses(path)[0].rotation
    np.testing.assert_allclose(rot, np.eye(3), atol=1e-15)


def test_duplicate_frame_rejected(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text(POSE_HEADER + "0,1,0,0,0,0,1,0,0,0,0,1,0\n" * 2)
    with pytest.raises(ParseError):
        load_poses(path)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pose_round_trip_is_byte_identical(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    poses = {
        int(f): RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-300, 300, 3))
        for f in rng.choice(1000, 20, replace=False)
    }
    d = tmp_path_factory.mktemp("poses")
    save_poses(poses, d / "a.csv")
    loaded = load_poses(d / "a.csv")
    save_poses(loaded, d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    assert load_poses(d / "b.csv") == loaded
    for f, p in poses.items():
        np.testing.assert_allclose(loaded[f].rotation, p.rotation, atol=1e-8)
        np.testing.assert_allclose(loaded[f].translation, p.translation, rtol=1e-8)


def test_simulated_poses_round_trip(noisy, tmp_path):
    _, seq, _ = noisy
    save_poses(seq.poses, tmp_path / "a.csv")
    save_poses(load_poses(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- observations --------------------------------------------------------------


def test_observations_anchor_rows(noiseless, tmp_path):
    _, seq, _ = noiseless
    path = tmp_path / "obs.csv"
    save_observations(seq.observations, path)
    assert path.read_text().count("\n") == 16
    loaded = load_observations(path)
    assert [(o.frame, o.landmark_id) for o in loaded] == [(o.frame, o.landmark_id) for o in seq.observations]
    save_observations(loaded, tmp_path / "b.csv")
    assert path.read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_observation_values_exact_at_nine_digits(tmp_path):
    obs = [LandmarkObservation(2, 4, 123.456789, 0.5), LandmarkObservation(0, 1, 1e-3, 479.0)]
    save_observations(obs, tmp_path / "o.csv")
    assert load_observations(tmp_path / "o.csv") == obs


def test_duplicate_observation_rejected(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("frame,landmark_id,u_px,v_px\n0,1,2,3\n0,1,4,5\n")
    with pytest.raises(ParseError) as info:
        load_observations(path)
    assert info.value.line == 3


def test_observation_extra_column_rejected(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("frame,landmark_id,u_px,v_px\n0,1,2,3,9\n")
    with pytest.raises(ParseError):
        load_observations(path)


# -- calibration ---------------------------------------------------------------


def test_identity_calibration_matrix(tmp_path):
    save_calibration(result_for(CalibrationParams()), tmp_path / "c.cal")
    np.testing.assert_array_equal(load_calibration(tmp_path / "c.cal").matrix, np.eye(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_calibration_round_trip_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    params = CalibrationParams(*rng.uniform(-3, 3, 6), rng.uniform(0.05, 3))
    d = tmp_path_factory.mktemp("cal")
    res = result_for(params, final_error=float(rng.uniform(0, 5)), converged=bool(rng.integers(2)))
    save_calibration(res, d / "a.cal", depth_mm=50.0)
    loaded = load_calibration(d / "a.cal")
    assert loaded.params == params
    np.testing.assert_array_equal(loaded.matrix, calibration_matrix(params))
    assert (loaded.final_error, loaded.iterations, loaded.converged, loaded.depth_mm) == (
        res.final_error,
        res.iterations,
        res.converged,
        50.0,
    )
    save_calibration(loaded, d / "b.cal")
    assert (d / "a.cal").read_bytes() == (d / "b.cal").read_bytes()
    assert load_calibration(d / "b.cal") == loaded


def test_calibration_file_fields(tmp_path):
    save_calibration(result_for(CalibrationParams(scale=0.2)), tmp_path / "c.cal")
    text = (tmp_path / "c.cal").read_text()
    assert "euler_convention = ZYX-extrinsic-rzryrx" in text
    assert "scale_mm_per_px = 0.2" in text
    assert len(text.split("matrix_row_major = ")[1].split("\n")[0].split()) == 16


@pytest.mark.parametrize(
    "edit,error",
    [
        (lambda t: "\n".join(l for l in t.split("\n") if not l.startswith("scale_mm_per_px")), ParseError),
        (lambda t: t.replace("format_version = 1", "format_version = 2"), VersionMismatch),
        (lambda t: t.replace("ZYX-extrinsic-rzryrx", "XYZ"), ParseError),
        (lambda t: t.replace("converged = true", "converged = maybe"), ParseError),
        (lambda t: t.replace("tx_mm = 0.0", "tx_mm = 5.0"), ParseError),
        (lambda t: t + "garbage line\n", ParseError),
    ],
    ids=["missing-scale", "version", "convention", "flag", "matrix-mismatch", "no-equals"],
)
def test_calibration_malformed(tmp_path, edit, error):
    path = tmp_path / "c.cal"
    save_calibration(result_for(CalibrationParams()), path)
    path.write_text(edit(path.read_text()))
    with pytest.raises(error):
        load_calibration(path)


# -- volumes -------------------------------------------------------------------


def small_volume(dims=(2, 2, 1), spacing=0.25):
    shape = tuple(reversed(dims))
    data = np.arange(np.prod(dims), dtype=float).reshape(shape) + 0.5
    return VoxelVolume(dims, spacing, (1.0, -2.0, 3.5), data, np.ones(shape, dtype=np.int64))


def test_volume_payload_size_and_metadata(tmp_path):
    raw = save_volume(small_volume(), tmp_path / "vol")
    assert raw.stat().st_size == 16
    meta = json.loads((tmp_path / "vol.json").read_text())
    assert meta["spacing_mm"] == 0.25
    assert meta["element_type"] == "f32-le"
    assert meta["dims"] == [2, 2, 1]
    assert meta["compounding"] == "mean"


@pytest.mark.parametrize("dims", [(1, 1, 1), (3, 2, 5), (7, 1, 2)])
def test_volume_round_trip(tmp_path, dims):
    vol = small_volume(dims)
    raw = save_volume(vol, tmp_path / "v")
    assert raw.stat().st_size == 4 * np.prod(dims)
    back = load_volume(tmp_path / "v")
    assert back.dims == dims and back.origin == vol.origin and back.spacing == vol.spacing
    np.testing.assert_array_equal(back.data, vol.data.astype(np.float32))
    # x-fastest: second payload value is voxel (1, 0, 0)
    if dims[0] > 1:
        assert np.frombuffer(raw.read_bytes(), "<f4")[1] == vol.data[0, 0, 1]


def test_truncated_volume_rejected(tmp_path):
    raw = save_volume(small_volume(), tmp_path / "v")
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(ParseError):
        load_volume(tmp_path / "v")


# -- PGM -----------------------------------------------------------------------


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 11), dtype=np.uint8)
    write_pgm(tmp_path / "f.pgm", img)
    assert (tmp_path / "f.pgm").read_bytes().startswith(b"P5\n11 7\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "f.pgm"), img)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[1, 2]])


@pytest.mark.parametrize(
    "blob", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1"]
)
def test_pgm_malformed(tmp_path, blob):
    (tmp_path / "b.pgm").write_bytes(blob)
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "b.pgm")


# -- manifest ------------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    (tmp_path / "poses.csv").write_text(POSE_HEADER)
    (tmp_path / "obs.csv").write_text("frame,landmark_id,u_px,v_px\n")
    save_manifest(Manifest("poses.csv", "obs.csv", None, 90.0, "seed 1"), tmp_path / "m.json")
    m = load_manifest(tmp_path / "m.json")
    assert m.poses == str(tmp_path / "poses.csv")
    assert m.observations == str(tmp_path / "obs.csv")
    assert m.depth_mm == 90.0 and m.notes == "seed 1" and m.frames is None


def test_manifest_missing_file(tmp_path):
    save_manifest(Manifest("poses.csv", "obs.csv"), tmp_path / "m.json")
    with pytest.raises(IoError):
        load_manifest(tmp_path / "m.json")
