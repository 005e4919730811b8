"""Readers and writers for the on-disk formats.

* Middlebury ``.flo`` flow fields
* ``OPV1`` probability volumes
* PFM float maps and 8-bit PGM/PPM images
* KITTI odometry pose text files
* correspondence and solver-trace CSVs
"""

from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import FormatError, MalformedLine, NonRigidPose
from .se3 import Pose, nearest_rotation
from .trajectory import Trajectory

log = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
OPV_MAGIC = b"OPV1"


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow)
    H, W = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", W, H))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(data)}")
    (magic,) = struct.unpack_from("<f", data, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic at offset 0")
    W, H = struct.unpack_from("<ii", data, 4)
    if W <= 0 or H <= 0:
        raise FormatError(f"{path}: invalid size {W}x{H} at offset 4")
    expected = 12 + 8 * W * H
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)} (payload at offset 12)")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(H, W, 2).astype(float)


def write_opv(path, opv: np.ndarray) -> None:
    opv = np.asarray(opv)
    H, W, side, side2 = opv.shape
    if side != side2 or side % 2 == 0:
        raise FormatError("probability volume must have odd square cells")
    with open(path, "wb") as f:
        f.write(OPV_MAGIC)
        f.write(struct.pack("<iii", (side - 1) // 2, W, H))
        f.write(opv.astype("<f4").tobytes())


def read_opv(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != OPV_MAGIC:
        raise FormatError(f"{path}: bad OPV magic at offset 0")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header at offset {len(data)}")
    k, W, H = struct.unpack_from("<iii", data, 4)
    if k < 1 or W <= 0 or H <= 0:
        raise FormatError(f"{path}: invalid header values at offset 4")
    side = 2 * k + 1
    expected = 16 + 4 * H * W * side * side
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)} (payload at offset 16)")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(H, W, side, side).astype(float)


def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    color = image.ndim == 3
    if color and image.shape[2] != 3:
        raise FormatError("colour PFM needs three channels")
    H, W = image.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{W} {H}\n-1.0\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(image[::-1]).astype("<f4").tobytes())


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated header at offset {pos}")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # a single whitespace byte ends the header


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(data, 4)
    kind = tokens[0]
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: bad PFM magic at offset 0")
    try:
        W, H = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable PFM header") from exc
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = W * H * channels
    if len(data) - offset != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} payload bytes at offset {offset}")
    img = np.frombuffer(data, dtype=dtype, offset=offset, count=n).astype(float)
    shape = (H, W, 3) if channels == 3 else (H, W)
    return img.reshape(shape)[::-1].copy()


def write_pnm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (grey) or PPM (colour) from an image in ``[0, 1]``."""
    image = np.asarray(image, dtype=float)
    color = image.ndim == 3
    H, W = image.shape[:2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"{'P6' if color else 'P5'}\n{W} {H}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM magic at offset 0")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images are supported")
    channels = 3 if tokens[0] == b"P6" else 1
    n = W * H * channels
    if len(data) - offset != n:
        raise FormatError(f"{path}: expected {n} payload bytes at offset {offset}")
    img = np.frombuffer(data, dtype=np.uint8, offset=offset).astype(float) / 255.0
    return img.reshape((H, W, 3) if channels == 3 else (H, W))


def _fmt(x: float) -> str:
    return f"{x + 0.0:.9g}"


def format_kitti_pose(pose: Pose) -> str:
    m = pose.as_matrix()[:3]
    return " ".join(_fmt(v) for v in m.ravel())


def write_kitti_poses(traj: Trajectory | list[Pose], path) -> None:
    poses = traj.poses if isinstance(traj, Trajectory) else traj
    Path(path).write_text("".join(format_kitti_pose(p) + "\n" for p in poses))


def parse_kitti_line(line: str, line_no: int) -> Pose:
    parts = line.split()
    if len(parts) != 12:
        raise MalformedLine(line_no, f"expected 12 numbers, found {len(parts)}")
    try:
        values = np.array([float(v) for v in parts])
    except ValueError as exc:
        raise MalformedLine(line_no, "non-numeric entry") from exc
    m = values.reshape(3, 4)
    R = m[:, :3]
    deviation = float(np.max(np.abs(R.T @ R - np.eye(3))))
    if deviation > 1e-2 or np.linalg.det(R) <= 0:
        raise NonRigidPose(line_no, deviation)
    if deviation > 1e-3:
        log.warning("line %d: rotation deviates from orthonormal by %.2e; projecting", line_no, deviation)
    return Pose(nearest_rotation(R), m[:, 3])


def read_kitti_poses(path) -> Trajectory:
    poses = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        poses.append(parse_kitti_line(line, line_no))
    if not poses:
        raise FormatError(f"{path}: no poses found")
    return Trajectory(poses)


CORRESPONDENCE_HEADER = ["px", "py", "qx", "qy", "inv_depth", "score"]


def write_correspondences(path, corr: CorrespondenceSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CORRESPONDENCE_HEADER)
        for p, q, d, s in zip(corr.p, corr.q, corr.inv_depth, corr.score):
            w.writerow([_fmt(v) for v in (p[0], p[1], q[0], q[1], d, s)])


def read_correspondences(path) -> CorrespondenceSet:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CORRESPONDENCE_HEADER:
            raise FormatError(f"{path}: unexpected header {header}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise MalformedLine(line_no, "expected 6 columns")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise MalformedLine(line_no, "non-numeric entry") from exc
    a = np.array(rows, dtype=float).reshape(-1, 6)
    return CorrespondenceSet(a[:, 0:2], a[:, 2:4], a[:, 4], a[:, 5])


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "lambda", "cost", "accepted"])
        for rec in trace:
            w.writerow([rec.iteration, repr(float(rec.lam)), repr(float(rec.cost)), int(rec.accepted)])
