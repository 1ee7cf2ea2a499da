"""File formats: phantom, pose and observation CSVs, calibration files,
raw volumes with a JSON sidecar, 8-bit PGM frames and a run manifest.

CSV files are UTF-8 with LF line endings and an exact header row; floats are
written with 9 significant digits. Loaders reject extra or missing columns
and report the offending line number.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .calibration import (
    EULER_CONVENTION,
    CalibrationParams,
    LandmarkObservation,
    calibration_matrix,
)
from .errors import DuplicateId, IoError, NonRigidPose, ParseError, VersionMismatch
from .geometry import RigidTransform
from .phantom import PhantomModel
from .recon import VoxelVolume

__all__ = [
    "PHANTOM_HEADER",
    "POSES_HEADER",
    "OBSERVATIONS_HEADER",
    "CALIBRATION_VERSION",
    "StoredCalibration",
    "Manifest",
    "phantom_csv",
    "save_phantom",
    "load_phantom",
    "save_poses",
    "load_poses",
    "save_observations",
    "load_observations",
    "save_calibration",
    "load_calibration",
    "save_volume",
    "load_volume",
    "write_pgm",
    "read_pgm",
    "frame_filename",
    "save_manifest",
    "load_manifest",
]

PHANTOM_HEADER = ("id", "x_mm", "y_mm", "z_mm")
POSES_HEADER = (
    "frame",
    "r00", "r01", "r02", "tx_mm",
    "r10", "r11", "r12", "ty_mm",
    "r20", "r21", "r22", "tz_mm",
)  # fmt: skip
OBSERVATIONS_HEADER = ("frame", "landmark_id", "u_px", "v_px")
CALIBRATION_VERSION = 1
VOLUME_VERSION = 1
MANIFEST_VERSION = 1
MAX_POSE_CORRECTION = 1e-3  # Frobenius norm


def _fmt(x):
    return format(float(x), ".9g")


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_text(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", path=path) from exc


def _csv_text(header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    _write_text(path, _csv_text(header, rows))


def _read_csv(path, header):
    """Yield ``(line_number, fields)`` for each data row after checking the header."""
    text = _read_text(path)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", line=1, path=path)
    got = tuple(f.strip() for f in lines[0].rstrip("\r").split(","))
    if got != tuple(header):
        raise ParseError(f"expected header {','.join(header)!r}, got {lines[0]!r}", line=1, path=path)
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.rstrip("\r")
        if not raw.strip():
            raise ParseError("blank line", line=lineno, path=path)
        fields = raw.split(",")
        if len(fields) != len(header):
            raise ParseError(
                f"expected {len(header)} columns, got {len(fields)}", line=lineno, path=path
            )
        yield lineno, fields


def _int(text, lineno, path):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"not an integer: {text!r}", line=lineno, path=path) from None


def _float(text, lineno, path):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=lineno, path=path) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value: {text!r}", line=lineno, path=path)
    return value


# -- phantom -----------------------------------------------------------------


def phantom_csv(phantom):
    rows = ([str(i), *(_fmt(c) for c in p)] for i, p in enumerate(phantom.points))
    return _csv_text(PHANTOM_HEADER, rows)


def save_phantom(phantom, path):
    _write_text(path, phantom_csv(phantom))


def load_phantom(path):
    points = {}
    for lineno, f in _read_csv(path, PHANTOM_HEADER):
        lid = _int(f[0], lineno, path)
        if lid in points:
            raise DuplicateId(f"duplicate landmark id {lid}", line=lineno, path=path)
        points[lid] = [_float(x, lineno, path) for x in f[1:]]
    if not points:
        raise ParseError("phantom has no landmarks", path=path)
    if sorted(points) != list(range(len(points))):
        raise ParseError("landmark ids must be contiguous from 0", path=path)
    return PhantomModel(np.array([points[i] for i in range(len(points))]))


# -- poses -------------------------------------------------------------------


def _project_text(text):
    m = np.array([[float(x) for x in row] for row in text])
    u, _, vt = np.linalg.svd(m)
    return tuple(tuple(_fmt(x) for x in row) for row in u @ vt)


def _fixed_point(text, passes=20):
    for _ in range(passes):
        nxt = _project_text(text)
        if nxt == text:
            return text
        text = nxt
    return None


def _stable_rotation_text(rot, attempts=200):
    """9-digit rendering of ``rot`` that reloads (after SO(3) projection) to
    itself, so save -> load -> save is byte-identical.

    Rounding then projecting usually reaches a fixed point within a pass or
    two. Otherwise the rotation is tilted by a few 1e-10 rad (far below the
    9-digit resolution of a pose) and the search restarts.
    """
    rot = np.asarray(rot, dtype=float)
    for k in range(attempts):
        tilt = np.eye(3)
        if k:
            axis = np.array([np.sin(k), np.cos(2.0 * k), np.sin(3.0 * k)])
            tilt = Rotation.from_rotvec(1e-10 * k * axis / np.linalg.norm(axis)).as_matrix()
        text = _fixed_point(tuple(tuple(_fmt(x) for x in row) for row in tilt @ rot))
        if text is not None:
            return text
    return _project_text(tuple(tuple(_fmt(x) for x in row) for row in rot))


def save_poses(poses, path):
    rows = []
    for frame in sorted(poses):
        p = poses[frame]
        rot_text = _stable_rotation_text(p.rotation)
        row = [str(frame)]
        for i in range(3):
            row.extend(rot_text[i])
            row.append(_fmt(p.translation[i]))
        rows.append(row)
    _write_csv(path, POSES_HEADER, rows)


def _nearest_rotation(m, lineno, path):
    if np.linalg.det(m) <= 0:
        raise NonRigidPose("rotation block is a reflection or singular", line=lineno, path=path)
    u, _, vt = np.linalg.svd(m)
    rot = u @ vt
    correction = np.linalg.norm(rot - m)
    if correction > MAX_POSE_CORRECTION:
        raise NonRigidPose(
            f"rotation block is {correction:.3g} (Frobenius) from orthonormal", line=lineno, path=path
        )
    return rot


def load_poses(path):
    """Frame-indexed sensor poses; rotations are projected onto SO(3)."""
    poses = {}
    for lineno, f in _read_csv(path, POSES_HEADER):
        frame = _int(f[0], lineno, path)
        if frame in poses:
            raise ParseError(f"duplicate frame {frame}", line=lineno, path=path)
        vals = np.array([_float(x, lineno, path) for x in f[1:]]).reshape(3, 4)
        rot = _nearest_rotation(vals[:, :3], lineno, path)
        poses[frame] = RigidTransform(rot, vals[:, 3])
    return poses


# -- observations ------------------------------------------------------------


def save_observations(observations, path):
    rows = ([str(o.frame), str(o.landmark_id), _fmt(o.u), _fmt(o.v)] for o in observations)
    _write_csv(path, OBSERVATIONS_HEADER, rows)


def load_observations(path):
    seen = set()
    out = []
    for lineno, f in _read_csv(path, OBSERVATIONS_HEADER):
        frame, lid = _int(f[0], lineno, path), _int(f[1], lineno, path)
        if (frame, lid) in seen:
            raise ParseError(f"duplicate observation of landmark {lid} in frame {frame}", line=lineno, path=path)
        seen.add((frame, lid))
        out.append(LandmarkObservation(frame, lid, _float(f[2], lineno, path), _float(f[3], lineno, path)))
    return out


# -- calibration -------------------------------------------------------------

_PARAM_KEYS = (
    ("roll", "roll_rad"),
    ("pitch", "pitch_rad"),
    ("yaw", "yaw_rad"),
    ("tx", "tx_mm"),
    ("ty", "ty_mm"),
    ("tz", "tz_mm"),
    ("scale", "scale_mm_per_px"),
)


@dataclass(frozen=True, eq=False)
class StoredCalibration:
    """Calibration as read back from disk (the error trace is not stored)."""

    params: CalibrationParams
    matrix: np.ndarray
    final_error: float
    iterations: int
    converged: bool
    depth_mm: Optional[float] = None

    def __eq__(self, other):
        if not isinstance(other, StoredCalibration):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.matrix, other.matrix)
            and self.final_error == other.final_error
            and self.iterations == other.iterations
            and self.converged == other.converged
            and self.depth_mm == other.depth_mm
        )


def save_calibration(result, path, depth_mm=None):
    """Write a calibration result (or :class:`StoredCalibration`) as ``key = value`` text.

    Floats use the shortest repr that round-trips exactly.
    """
    if depth_mm is None:
        depth_mm = getattr(result, "depth_mm", None)
    p = result.params
    lines = [
        "# ivuscal calibration: image (u, v, 0, 1) px -> sensor frame mm",
        f"format_version = {CALIBRATION_VERSION}",
        f"euler_convention = {EULER_CONVENTION}",
    ]
    lines += [f"{key} = {getattr(p, name)!r}" for name, key in _PARAM_KEYS]
    matrix = calibration_matrix(p)
    lines.append("matrix_row_major = " + " ".join(repr(float(x)) for x in matrix.ravel()))
    lines.append(f"final_error_mm2 = {float(result.final_error)!r}")
    lines.append(f"iterations = {int(result.iterations)}")
    lines.append(f"converged = {'true' if result.converged else 'false'}")
    lines.append(f"depth_mm = {'none' if depth_mm is None else repr(float(depth_mm))}")
    _write_text(path, "\n".join(lines) + "\n")


def load_calibration(path):
    entries = {}
    for lineno, raw in enumerate(_read_text(path).split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected 'key = value', got {raw!r}", line=lineno, path=path)
        key = key.strip()
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", line=lineno, path=path)
        entries[key] = (lineno, value.strip())

    def take(key):
        if key not in entries:
            raise ParseError(f"missing key {key!r}", path=path)
        return entries[key]

    lineno, version = take("format_version")
    if _int(version, lineno, path) != CALIBRATION_VERSION:
        raise VersionMismatch(
            f"calibration format {version}, expected {CALIBRATION_VERSION}", line=lineno, path=path
        )
    lineno, convention = take("euler_convention")
    if convention != EULER_CONVENTION:
        raise ParseError(f"unsupported Euler convention {convention!r}", line=lineno, path=path)
    values = {name: _float(take(key)[1], take(key)[0], path) for name, key in _PARAM_KEYS}
    try:
        params = CalibrationParams(**values)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None

    lineno, text = take("matrix_row_major")
    parts = text.split()
    if len(parts) != 16:
        raise ParseError(f"matrix needs 16 entries, got {len(parts)}", line=lineno, path=path)
    matrix = np.array([_float(x, lineno, path) for x in parts]).reshape(4, 4)
    if not np.allclose(matrix, calibration_matrix(params), rtol=0.0, atol=1e-9):
        raise ParseError("matrix does not match the stored parameters", line=lineno, path=path)

    lineno, err = take("final_error_mm2")
    final_error = _float(err, lineno, path)
    lineno, iters = take("iterations")
    iterations = _int(iters, lineno, path)
    lineno, conv = take("converged")
    if conv not in ("true", "false"):
        raise ParseError(f"converged must be true/false, got {conv!r}", line=lineno, path=path)
    depth_mm = None
    if "depth_mm" in entries and entries["depth_mm"][1] != "none":
        depth_mm = _float(entries["depth_mm"][1], entries["depth_mm"][0], path)
    return StoredCalibration(params, matrix, final_error, iterations, conv == "true", depth_mm)


# -- volumes -----------------------------------------------------------------


def save_volume(volume, path_prefix):
    """Write ``<prefix>.json`` metadata and ``<prefix>.raw`` little-endian float32 data."""
    prefix = Path(path_prefix)
    raw = prefix.with_name(prefix.name + ".raw")
    meta = {
        "format_version": VOLUME_VERSION,
        "dims": [int(d) for d in volume.dims],
        "spacing_mm": float(volume.spacing),
        "origin_mm": [float(o) for o in volume.origin],
        "compounding": volume.compounding,
        "element_type": "f32-le",
        "order": "x-fastest",
        "data_file": raw.name,
    }
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    try:
        raw.write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {raw}: {exc}") from exc
    _write_text(prefix.with_name(prefix.name + ".json"), json.dumps(meta, indent=2) + "\n")
    return raw


def load_volume(path_prefix):
    """Read a volume written by :func:`save_volume` (weights are not stored)."""
    prefix = Path(path_prefix)
    meta_path = prefix.with_name(prefix.name + ".json")
    try:
        meta = json.loads(_read_text(meta_path))
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path=meta_path) from None
    if meta.get("format_version") != VOLUME_VERSION:
        raise VersionMismatch(f"volume format {meta.get('format_version')}", path=meta_path)
    if meta.get("element_type") != "f32-le":
        raise ParseError(f"unsupported element type {meta.get('element_type')!r}", path=meta_path)
    dims = tuple(int(d) for d in meta["dims"])
    raw = meta_path.with_name(meta["data_file"])
    try:
        payload = raw.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {raw}: {exc}") from exc
    if len(payload) != 4 * dims[0] * dims[1] * dims[2]:
        raise ParseError(f"payload is {len(payload)} bytes, expected {4 * math.prod(dims)}", path=raw)
    data = np.frombuffer(payload, dtype="<f4").reshape(tuple(reversed(dims))).astype(np.float32)
    return VoxelVolume(
        dims=dims,
        spacing=float(meta["spacing_mm"]),
        origin=tuple(float(o) for o in meta["origin_mm"]),
        data=data,
        weight=np.zeros(data.shape, dtype=np.int64),
        compounding=meta.get("compounding", "mean"),
    )


# -- PGM frames --------------------------------------------------------------


def frame_filename(frame):
    return f"frame_{frame:05d}.pgm"


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM frames must be 2D uint8 arrays")
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pgm(path):
    """Read a binary (P5) 8-bit PGM into a ``(height, width)`` uint8 array."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path=path)
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace before the raster

    if tokens[0] != b"P5":
        raise ParseError(f"not a binary PGM (magic {tokens[0]!r})", path=path)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("bad PGM header", path=path) from None
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ParseError(f"unsupported PGM geometry {w}x{h} maxval {maxval}", path=path)
    raster = blob[pos : pos + w * h]
    if len(raster) != w * h:
        raise ParseError(f"PGM raster has {len(raster)} bytes, expected {w * h}", path=path)
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


# -- manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    poses: str
    observations: str
    frames: Optional[str] = None
    depth_mm: Optional[float] = None
    notes: str = ""
    format_version: int = MANIFEST_VERSION
    extra: dict = field(default_factory=dict)


def save_manifest(manifest, path):
    doc = {
        "format_version": manifest.format_version,
        "poses": manifest.poses,
        "observations": manifest.observations,
        "frames": manifest.frames,
        "depth_mm": manifest.depth_mm,
        "notes": manifest.notes,
    }
    doc.update(manifest.extra)
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path):
    """Read a manifest; relative paths are resolved against its directory."""
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path=path) from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise VersionMismatch(f"manifest format {doc.get('format_version')}", path=path)
    base = Path(path).parent
    resolved = {}
    for key in ("poses", "observations", "frames"):
        ref = doc.get(key)
        if ref is None:
            if key != "frames":
                raise ParseError(f"manifest lacks {key!r}", path=path)
            resolved[key] = None
            continue
        full = base / ref
        if not full.exists():
            raise IoError(f"manifest entry {key!r} points to missing {full}")
        resolved[key] = os.fspath(full)
    known = {"format_version", "poses", "observations", "frames", "depth_mm", "notes"}
    return Manifest(
        poses=resolved["poses"],
        observations=resolved["observations"],
        frames=resolved["frames"],
        depth_mm=doc.get("depth_mm"),
        notes=doc.get("notes", ""),
        extra={k: v for k, v in doc.items() if k not in known},
    )
