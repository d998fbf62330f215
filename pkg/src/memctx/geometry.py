"""Pinhole camera math: poses, projection, visibility and lat-long sphere sampling.

Extrinsics are stored world->camera: a world point ``p`` maps to camera
coordinates ``R @ (p - t)`` where ``t`` is the camera centre in world units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError, InvalidArgument, InvalidPose

ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        # zero-sized images are allowed; they simply see nothing
        if self.width < 0 or self.height < 0:
            raise InvalidArgument(f"image size must be non-negative, got {self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def default_intrinsics(width: int, height: int) -> Intrinsics:
    """Fallback intrinsics used when a trajectory carries extrinsics only."""
    f = float(min(width, height))
    return Intrinsics(f, f, width / 2.0, height / 2.0, width, height)


def _check_rotation(rot: np.ndarray) -> None:
    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        raise InvalidPose(f"rotation must be a finite 3x3 matrix, got shape {rot.shape}")
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise InvalidPose(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(rot)
    if abs(det - 1.0) > ROTATION_TOL:
        raise InvalidPose(f"rotation determinant is {det:.9f}, expected +1")


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(-1)
        if trans.shape != (3,) or not np.all(np.isfinite(trans)):
            raise InvalidPose(f"translation must be a finite 3-vector, got {self.translation!r}")
        _check_rotation(rot)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form ``[R | t; 0 0 0 1]``."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


Frame = tuple  # (Intrinsics, Pose)


@dataclass(frozen=True)
class CameraTrajectory:
    frames: tuple
    heterogeneous: bool = False

    def __post_init__(self):
        frames = tuple((intr, pose) for intr, pose in self.frames)
        if not frames:
            raise InvalidArgument("trajectory must contain at least one frame")
        for intr, pose in frames:
            if not isinstance(intr, Intrinsics) or not isinstance(pose, Pose):
                raise InvalidArgument("trajectory frames must be (Intrinsics, Pose) pairs")
        if not self.heterogeneous and any(intr != frames[0][0] for intr, _ in frames):
            raise InvalidArgument("frames use different intrinsics; pass heterogeneous=True")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def poses(self) -> list:
        return [pose for _, pose in self.frames]


def relative_pose(pose: Pose, ref: Pose) -> Pose:
    """Express ``pose`` relative to ``ref``: ``(R_ref^T R, R_ref^T (t - t_ref))``."""
    r_ref_t = ref.rotation.T
    return Pose(r_ref_t @ pose.rotation, r_ref_t @ (pose.translation - ref.translation))


def compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous product ``T_a @ T_b``; inverse of :func:`relative_pose`."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def to_camera(points: np.ndarray, pose: Pose) -> np.ndarray:
    """World points (M, 3) to camera coordinates (M, 3).

    Written out per component so the result is bit-identical to a scalar loop
    evaluating ``R[i,0]*d0 + R[i,1]*d1 + R[i,2]*d2`` left to right.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    t = pose.translation
    d0 = pts[:, 0] - t[0]
    d1 = pts[:, 1] - t[1]
    d2 = pts[:, 2] - t[2]
    rot = pose.rotation
    out = np.empty_like(pts)
    for i in range(3):
        out[:, i] = rot[i, 0] * d0 + rot[i, 1] * d1 + rot[i, 2] * d2
    return out


def project_points(points: np.ndarray, intr: Intrinsics, pose: Pose):
    """Vectorised projection. Returns ``(u, v, in_front)``; u/v are nan behind the camera."""
    xc = to_camera(points, pose)
    z = xc[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, intr.fx * (xc[:, 0] / z) + intr.cx, np.nan)
        v = np.where(in_front, intr.fy * (xc[:, 1] / z) + intr.cy, np.nan)
    return u, v, in_front


def project(point, intr: Intrinsics, pose: Pose) -> Optional[tuple]:
    """Pixel ``(u, v)`` of a world point, or None when it is not in front of the camera."""
    u, v, ok = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), intr, pose)
    if not ok[0]:
        return None
    return float(u[0]), float(v[0])


def visible_mask(points: np.ndarray, intr: Intrinsics, pose: Pose) -> np.ndarray:
    """Boolean mask of points with positive depth landing in ``[0, width) x [0, height)``."""
    u, v, ok = project_points(points, intr, pose)
    with np.errstate(invalid="ignore"):
        inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return ok & inside


def in_fov(point, intr: Intrinsics, pose: Pose) -> bool:
    return bool(visible_mask(np.asarray(point, dtype=np.float64).reshape(1, 3), intr, pose)[0])


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Latitude-longitude samples on a sphere; index ``u * n_phi + v``.

    Latitude is measured from the +y pole (image "down" axis), so a camera
    looking down +z sits on the equator where the grid is densest.
    """

    n_theta: int
    n_phi: int
    radius: float
    points: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def grid_id(self) -> str:
        return f"latlong:{self.n_theta}x{self.n_phi}@{self.radius!r}"

    def index(self, u: int, v: int) -> int:
        return u * self.n_phi + v


def sample_sphere(n_theta: int = 180, n_phi: int = 360, radius: float = 1.0) -> SphereGrid:
    if n_theta < 1 or n_phi < 1:
        raise InvalidArgument(f"grid counts must be >= 1, got {n_theta}x{n_phi}")
    if not radius > 0:
        raise InvalidArgument(f"sphere radius must be positive, got {radius}")
    theta = np.pi * (np.arange(n_theta) + 0.5) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    sin_th = np.sin(th)
    pts = np.stack(
        [radius * sin_th * np.cos(ph), radius * np.cos(th), radius * sin_th * np.sin(ph)], axis=-1
    ).reshape(-1, 3)
    pts.setflags(write=False)
    return SphereGrid(n_theta, n_phi, float(radius), pts)


def parse_grid(text: str) -> tuple:
    """``"180x360"`` -> ``(180, 360)``."""
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise InvalidArgument(f"grid must look like NTHETAxNPHI, got {text!r}") from None


def flatten_extrinsics(traj: CameraTrajectory) -> np.ndarray:
    """F x 12 matrix; row t is ``[R_t | t_t]`` flattened row-major."""
    rows = [np.hstack([pose.rotation, pose.translation[:, None]]).reshape(12) for _, pose in traj]
    return np.vstack(rows)


def unflatten_extrinsics(mat: np.ndarray, intrinsics: Intrinsics | Sequence[Intrinsics]) -> CameraTrajectory:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != 12 or mat.shape[0] < 1:
        raise InvalidArgument(f"expected an F x 12 matrix, got shape {mat.shape}")
    if isinstance(intrinsics, Intrinsics):
        intrs = [intrinsics] * mat.shape[0]
    else:
        intrs = list(intrinsics)
    frames = []
    for row, intr in zip(mat, intrs):
        rt = row.reshape(3, 4)
        frames.append((intr, Pose(rt[:, :3], rt[:, 3])))
    return CameraTrajectory(tuple(frames), heterogeneous=len(set(intrs)) > 1)


# -- trajectory text format ---------------------------------------------------
# one frame per line: fx fy cx cy width height r11 .. r33 tx ty tz
# lines with only the 12 extrinsic numbers take default intrinsics


def parse_trajectory(text: str, default: Optional[Intrinsics] = None, source: str = "<string>") -> CameraTrajectory:
    frames = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric field") from None
        if len(vals) == 18:
            fx, fy, cx, cy, w, h = vals[:6]
            if w != int(w) or h != int(h):
                raise FormatError(f"{source}:{lineno}: width/height must be integers")
            intr = Intrinsics(fx, fy, cx, cy, int(w), int(h))
            ext = vals[6:]
        elif len(vals) == 12 and default is not None:
            intr, ext = default, vals
        else:
            raise FormatError(f"{source}:{lineno}: expected 18 fields, got {len(vals)}")
        try:
            frames.append((intr, Pose(np.array(ext[:9]).reshape(3, 3), ext[9:])))
        except InvalidArgument as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
    if not frames:
        raise FormatError(f"{source}: no frames")
    hetero = len({intr for intr, _ in frames}) > 1
    return CameraTrajectory(tuple(frames), heterogeneous=hetero)


def read_trajectory(path, default: Optional[Intrinsics] = None) -> CameraTrajectory:
    path = Path(path)
    return parse_trajectory(path.read_text(), default=default, source=str(path))


def format_trajectory(traj: CameraTrajectory) -> str:
    lines = ["# fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz"]
    for intr, pose in traj:
        vals: Iterable = (
            [intr.fx, intr.fy, intr.cx, intr.cy]
            + [intr.width, intr.height]
            + pose.rotation.reshape(9).tolist()
            + pose.translation.tolist()
        )
        lines.append(" ".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in vals))
    return "\n".join(lines) + "\n"


def write_trajectory(traj: CameraTrajectory, path) -> None:
    Path(path).write_text(format_trajectory(traj))


# -- small constructors used by tests and demos -------------------------------


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
