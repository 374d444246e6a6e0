"""Core geometric types and the gripper coordinate frame.

Everything downstream (sampling, grouping, mixing, evaluation) builds on the
conventions fixed here, so they are spelled out once:

Units
  All lengths are meters.  Angles are radians.

Point representation
  A Point3 is a float64 array of shape (3,).  Clouds stack points row-wise
  into (N, 3) arrays.  Every array stored on a frozen dataclass below is a
  private, read-only copy of the caller's data.

Gripper frame (derived from a GraspPose by frame_of_grasp)
  x axis : approach direction; the gripper advances along +x.
  y axis : closing direction; the fingers translate along +/-y.
  z axis : x cross y; the finger-height direction.
  The in-plane angle is measured about the approach axis from a reference
  direction: the projection of world +z onto the plane orthogonal to the
  approach.  When the approach is within 1e-6 of +/-z that projection
  degenerates and world +x is projected instead.

Grasp depth
  GraspPose.depth is the distance from the grasp center to the fingertip
  plane along the approach axis.  The finger sweep therefore occupies
  gripper-frame x in [depth - finger_depth, depth]; with the default
  depth = finger_depth / 2 the sweep is centered on the grasp translation.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Instance label reserved for points that belong to no object.
BACKGROUND = -1

_UNIT_TOL = 1e-6
_ORTHO_TOL = 1e-6


def _frozen_array(values, dtype, shape=None, name="array"):
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def point3(x, y, z):
    """Build a finite (3,) float64 point."""
    p = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    p.setflags(write=False)
    return p


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloud:
    """Positions plus optional per-point normals and instance labels.

    points          (N, 3) float64, finite
    normals         (N, 3) float64, unit rows within 1e-6, or None
    instance_labels (N,) int32, non-negative ids or BACKGROUND, or None
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    instance_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN or Inf")
        object.__setattr__(self, "points", _frozen_array(pts, np.float64))

        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            if not np.all(np.isfinite(nrm)):
                raise ValueError("normals contain NaN or Inf")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > _UNIT_TOL):
                raise ValueError("normals must have unit norm within 1e-6")
            object.__setattr__(self, "normals", _frozen_array(nrm, np.float64))

        if self.instance_labels is not None:
            lbl = np.asarray(self.instance_labels)
            if lbl.shape != (len(pts),):
                raise ValueError("instance_labels must be (N,)")
            if not np.issubdtype(lbl.dtype, np.integer):
                raise ValueError("instance_labels must be integers")
            if np.any(lbl < BACKGROUND):
                raise ValueError("instance labels must be >= -1")
            object.__setattr__(self, "instance_labels",
                               _frozen_array(lbl, np.int32))

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    @property
    def has_labels(self):
        return self.instance_labels is not None

    def subset(self, indices) -> "PointCloud":
        """New cloud with the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            points=self.points[idx],
            normals=None if self.normals is None else self.normals[idx],
            instance_labels=(None if self.instance_labels is None
                             else self.instance_labels[idx]),
        )


@dataclass(frozen=True)
class RigidPose:
    """Proper rigid transform: p_world = rotation @ p_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.all(np.isfinite(rot)):
            raise ValueError("rotation contains NaN or Inf")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1 within 1e-6")
        object.__setattr__(self, "rotation", _frozen_array(rot, np.float64))
        object.__setattr__(
            self, "translation",
            _frozen_array(np.asarray(self.translation, dtype=np.float64).reshape(3),
                          np.float64, (3,), "translation"))
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation contains NaN or Inf")

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate then translate an (N, 3) or (3,) array of positions."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_to_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rotation=rt, translation=-(rt @ self.translation))

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidPose(rotation=self.rotation @ other.rotation,
                         translation=self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class GraspPose:
    """A parallel-jaw grasp: where, from which direction, how wide.

    translation  grasp center, (3,)
    approach     unit vector the gripper advances along, (3,)
    angle        in-plane rotation about the approach axis, radians
    width        jaw opening in meters (must not exceed the gripper's w_max
                 wherever a concrete gripper is in play)
    depth        grasp center to fingertip plane along approach, meters
    score        ranking score; higher is better
    """

    translation: np.ndarray
    approach: np.ndarray
    angle: float
    width: float
    depth: float
    score: float

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        a = np.asarray(self.approach, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise ValueError("grasp translation/approach must be finite")
        if abs(np.linalg.norm(a) - 1.0) > _UNIT_TOL:
            raise ValueError("approach must have unit norm within 1e-6")
        object.__setattr__(self, "translation", _frozen_array(t, np.float64))
        object.__setattr__(self, "approach", _frozen_array(a, np.float64))
        for name in ("angle", "width", "depth", "score"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"grasp {name} must be finite")
            object.__setattr__(self, name, v)
        if self.width < 0.0:
            raise ValueError("grasp width must be >= 0")
        if self.depth < 0.0:
            raise ValueError("grasp depth must be >= 0")


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper dimensions.

    w_max         maximum jaw opening (0.10 m matches the benchmark gripper)
    finger_depth  finger extent along the approach axis
    finger_height finger extent along the cross (z) axis
    finger_width  lateral thickness of one finger
    base_depth    body slab behind the fingers, along approach
    """

    w_max: float = 0.10
    finger_depth: float = 0.04
    finger_height: float = 0.02
    finger_width: float = 0.01
    base_depth: float = 0.02

    def __post_init__(self):
        for name in ("w_max", "finger_depth", "finger_height",
                     "finger_width", "base_depth"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"gripper {name} must be strictly positive")
            object.__setattr__(self, name, v)


# ---------------------------------------------------------------------------
# Frame construction
# ---------------------------------------------------------------------------

def _reference_direction(approach: np.ndarray) -> np.ndarray:
    """Zero-angle closing direction for a given unit approach vector."""
    z = np.array([0.0, 0.0, 1.0])
    ref = z - np.dot(z, approach) * approach
    norm = np.linalg.norm(ref)
    if norm < 1e-6:
        # approach is (anti)parallel to z; project world +x instead
        x = np.array([1.0, 0.0, 0.0])
        ref = x - np.dot(x, approach) * approach
        norm = np.linalg.norm(ref)
    return ref / norm


def grasp_frame(translation, approach, angle) -> RigidPose:
    """Gripper frame from raw grasp parameters.

    Columns of the rotation are the gripper x (approach), y (closing) and
    z (cross) axes expressed in world coordinates.
    """
    a = np.asarray(approach, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(a)
    if norm < 1e-9:
        raise ValueError("approach direction is degenerate (norm < 1e-9)")
    a = a / norm
    ref = _reference_direction(a)
    closing = np.cos(angle) * ref + np.sin(angle) * np.cross(a, ref)
    rotation = np.column_stack([a, closing, np.cross(a, closing)])
    return RigidPose(rotation=rotation,
                     translation=np.asarray(translation, dtype=np.float64).reshape(3))


def frame_of_grasp(g: GraspPose) -> RigidPose:
    """Pose whose rotation columns are the grasp's x/y/z gripper axes."""
    return grasp_frame(g.translation, g.approach, g.angle)


def angle_for_closing(approach, closing) -> float:
    """In-plane angle that makes grasp_frame produce the given closing direction.

    closing must be orthogonal to approach (within 1e-6) and non-degenerate.
    """
    a = np.asarray(approach, dtype=np.float64).reshape(3)
    a = a / np.linalg.norm(a)
    c = np.asarray(closing, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(c)
    if norm < 1e-9:
        raise ValueError("closing direction is degenerate")
    c = c / norm
    if abs(np.dot(a, c)) > _UNIT_TOL:
        raise ValueError("closing direction must be orthogonal to approach")
    ref = _reference_direction(a)
    return float(np.arctan2(np.dot(c, np.cross(a, ref)), np.dot(c, ref)))


def transform_cloud(cloud: PointCloud, pose: RigidPose) -> PointCloud:
    """Rigidly move a cloud: points rotated then translated, normals rotated,
    labels carried through unchanged."""
    return PointCloud(
        points=pose.apply(cloud.points),
        normals=None if cloud.normals is None else pose.apply_to_vectors(cloud.normals),
        instance_labels=cloud.instance_labels,
    )
