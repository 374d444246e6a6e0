"""Synthetic desk-scale scenes with known geometry and known-good grasps.

Boxes, cylinders and plates (thin boxes) are sampled into surface clouds
with exact analytic normals, perturbed into "sensor" clouds with Gaussian
noise and per-instance dropout, and annotated with grasps that are
antipodally correct by construction: a parallel-jaw grasp closing across two
opposite faces of a box, or across a cylinder's diameter, always finds
opposing contact normals aligned with the closing line.

Primitives are sampled in their object frame; poses live on the
PrimitiveSpec and are applied when scenes and grasp labels are assembled.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (GraspPose, GripperModel, PointCloud, RigidPose,
                   angle_for_closing, transform_cloud)
from .ncm import InstanceAsset, SceneAssets
from .scale_balance import GraspLabelSet

KINDS = ("box", "cylinder", "plate")

# free-axis positions of box grasps, as fractions of the free dimension
_OFFSET_FRACTIONS = (-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3)
_CYLINDER_ANGLES = 16
# palm backoff: with the sweep slab flush against the surface, rounding in
# the frame transform can push on-surface points across the strict collision
# boundary; a micron of clearance absorbs that without moving the contacts
_EDGE_CLEARANCE = 1e-6


@dataclass(frozen=True)
class PrimitiveSpec:
    """One object to drop into a scene.

    kind            "box", "cylinder" or "plate" (a plate is a thin box)
    dimensions      box/plate: (sx, sy, sz); cylinder: (radius, height)
    surface_density points per square meter
    pose            object-to-world transform
    instance_id     label the object's points will carry
    """

    kind: str
    dimensions: Tuple[float, ...]
    surface_density: float
    pose: RigidPose
    instance_id: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dimensions)
        expect = 2 if self.kind == "cylinder" else 3
        if len(dims) != expect:
            raise ValueError(f"{self.kind} takes {expect} dimensions, "
                             f"got {len(dims)}")
        if any(not (math.isfinite(d) and d > 0.0) for d in dims):
            raise ValueError("dimensions must be positive and finite")
        if not float(self.surface_density) > 0.0:
            raise ValueError("surface density must be > 0")
        if int(self.instance_id) < 0:
            raise ValueError("instance_id must be non-negative")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "surface_density", float(self.surface_density))
        object.__setattr__(self, "instance_id", int(self.instance_id))

    def surface_area(self) -> float:
        if self.kind == "cylinder":
            r, h = self.dimensions
            return 2.0 * math.pi * r * h + 2.0 * math.pi * r * r
        sx, sy, sz = self.dimensions
        return 2.0 * (sx * sy + sy * sz + sx * sz)


def _largest_remainder(total: int, areas: Sequence[float]) -> List[int]:
    """Integer allocation proportional to areas, exact sum, ties by index."""
    areas = np.asarray(areas, dtype=np.float64)
    quota = total * areas / areas.sum()
    alloc = np.floor(quota).astype(int)
    short = total - int(alloc.sum())
    if short > 0:
        frac = quota - alloc
        for i in np.argsort(-frac, kind="stable")[:short]:
            alloc[i] += 1
    return alloc.tolist()


def sample_primitive(spec: PrimitiveSpec, seed=0) -> PointCloud:
    """Surface cloud in the object frame, with exact normals.

    Total point count is round(density * area), split across faces by
    largest-remainder allocation so strata stay proportional to area.
    Deterministic for a fixed seed.
    """
    total = int(round(spec.surface_density * spec.surface_area()))
    if total < 1:
        raise ValueError("surface density too low: primitive would be empty")
    rng = np.random.default_rng(seed)

    if spec.kind == "cylinder":
        r, h = spec.dimensions
        areas = [2.0 * math.pi * r * h, math.pi * r * r, math.pi * r * r]
        n_side, n_top, n_bot = _largest_remainder(total, areas)
        parts = []
        theta = rng.uniform(0.0, 2.0 * math.pi, n_side)
        z = rng.uniform(-h / 2.0, h / 2.0, n_side)
        side = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        side_n = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n_side)])
        parts.append((side, side_n))
        for n_cap, zc, nz in ((n_top, h / 2.0, 1.0), (n_bot, -h / 2.0, -1.0)):
            rr = r * np.sqrt(rng.uniform(0.0, 1.0, n_cap))
            th = rng.uniform(0.0, 2.0 * math.pi, n_cap)
            cap = np.column_stack([rr * np.cos(th), rr * np.sin(th),
                                   np.full(n_cap, zc)])
            cap_n = np.tile([0.0, 0.0, nz], (n_cap, 1))
            parts.append((cap, cap_n))
        pts = np.concatenate([p for p, _ in parts])
        nrm = np.concatenate([n for _, n in parts])
        return PointCloud(points=pts, normals=nrm)

    # box and plate share the sampler
    sx, sy, sz = spec.dimensions
    half = np.array([sx, sy, sz]) / 2.0
    # faces in fixed order: +x, -x, +y, -y, +z, -z
    face_areas = [sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy]
    alloc = _largest_remainder(total, face_areas)
    pts_parts, nrm_parts = [], []
    for fi, (axis, sign) in enumerate(((0, 1.0), (0, -1.0), (1, 1.0),
                                       (1, -1.0), (2, 1.0), (2, -1.0))):
        n_f = alloc[fi]
        u_axis, v_axis = [d for d in range(3) if d != axis]
        uv = rng.uniform(-1.0, 1.0, (n_f, 2))
        face = np.zeros((n_f, 3))
        face[:, axis] = sign * half[axis]
        face[:, u_axis] = uv[:, 0] * half[u_axis]
        face[:, v_axis] = uv[:, 1] * half[v_axis]
        normal = np.zeros((n_f, 3))
        normal[:, axis] = sign
        pts_parts.append(face)
        nrm_parts.append(normal)
    return PointCloud(points=np.concatenate(pts_parts),
                      normals=np.concatenate(nrm_parts))


def generate_scene(specs: Sequence[PrimitiveSpec], noise_sigma: float = 0.0,
                   dropout: float = 0.0, seed=0
                   ) -> Tuple[PointCloud, SceneAssets]:
    """Sample primitives, keep the clean assets, emit a degraded scene cloud.

    The noisy cloud adds isotropic Gaussian jitter (sigma = noise_sigma) to
    every surviving point and drops round(dropout * n) points per instance
    (always keeping at least one).  Normals and labels ride along
    unperturbed, and every instance keeps the same id in both outputs.
    Fully deterministic for a fixed seed.
    """
    if not specs:
        raise ValueError("no primitives given")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must be in [0, 1)")
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be >= 0")
    ids = [s.instance_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate instance ids across primitives")

    streams = np.random.SeedSequence(seed).spawn(len(specs) + 1)
    assets = []
    for spec, stream in zip(specs, streams[:-1]):
        assets.append(InstanceAsset(instance_id=spec.instance_id,
                                    model=sample_primitive(spec, stream),
                                    pose=spec.pose))
    scene_assets = SceneAssets(assets=tuple(
        sorted(assets, key=lambda a: a.instance_id)))

    noise_rng = np.random.default_rng(streams[-1])
    pts_parts, nrm_parts, lbl_parts = [], [], []
    for i in scene_assets.ids():
        asset = scene_assets.get(i)
        posed = transform_cloud(asset.model, asset.pose)
        n = len(posed)
        jitter = noise_rng.normal(0.0, noise_sigma, (n, 3))
        keep = max(1, n - int(round(dropout * n)))
        survivors = np.sort(noise_rng.permutation(n)[:keep])
        pts_parts.append(posed.points[survivors] + jitter[survivors])
        nrm_parts.append(posed.normals[survivors])
        lbl_parts.append(np.full(keep, i, dtype=np.int32))
    noisy = PointCloud(points=np.concatenate(pts_parts),
                       normals=np.concatenate(nrm_parts),
                       instance_labels=np.concatenate(lbl_parts))
    return noisy, scene_assets


# ---------------------------------------------------------------------------
# Analytic grasp labels
# ---------------------------------------------------------------------------

def _box_grasps(dims, gm: GripperModel):
    """Object-frame grasps closing across each pair of opposite box faces.

    For every closable dimension i (size <= w_max) the gripper approaches
    along each perpendicular axis j, from both sides, hugging the near face
    with the sweep centered on it (depth = finger_depth / 2), at seven
    stations along the remaining free axis.  Width equals dims[i] exactly,
    so the face normals are exactly (anti)parallel to the closing line.
    """
    fd = gm.finger_depth
    out = []  # (translation, approach, closing, width, score)
    for i in range(3):
        if dims[i] > gm.w_max:
            continue
        closing = np.zeros(3)
        closing[i] = 1.0
        for j in range(3):
            if j == i:
                continue
            k = 3 - i - j
            for sign in (1.0, -1.0):
                approach = np.zeros(3)
                approach[j] = -sign
                for frac in _OFFSET_FRACTIONS:
                    t = np.zeros(3)
                    t[j] = sign * (dims[j] / 2.0 - fd / 2.0 + _EDGE_CLEARANCE)
                    t[k] = frac * dims[k]
                    score = 1.0 - 0.5 * abs(frac)
                    out.append((t, approach, closing, dims[i], score))
    return out


def _cylinder_grasps(dims, gm: GripperModel):
    """Diametral grasps from above and below the cylinder."""
    r, h = dims
    width = 2.0 * r
    if width > gm.w_max:
        return []
    fd = gm.finger_depth
    out = []
    for sign in (1.0, -1.0):
        t = np.array([0.0, 0.0,
                      sign * (h / 2.0 - fd / 2.0 + _EDGE_CLEARANCE)])
        approach = np.array([0.0, 0.0, -sign])
        for k in range(_CYLINDER_ANGLES):
            phi = math.pi * k / _CYLINDER_ANGLES
            closing = np.array([math.cos(phi), math.sin(phi), 0.0])
            out.append((t, approach, closing, width, 1.0 - 0.01 * k))
    return out


def analytic_grasps(spec: PrimitiveSpec,
                    gm: Optional[GripperModel] = None) -> GraspLabelSet:
    """Ground-truth grasps for one primitive, posed into the world frame.

    Entries are grouped per grasp center; a center reachable along several
    closing directions carries several candidates.  Objects too large to
    close on in any direction yield an empty set.
    """
    gm = gm or GripperModel()
    raw = (_cylinder_grasps(spec.dimensions, gm) if spec.kind == "cylinder"
           else _box_grasps(spec.dimensions, gm))

    grouped: Dict[tuple, List[GraspPose]] = {}
    order: List[tuple] = []
    for t_obj, approach_obj, closing_obj, width, score in raw:
        t_w = spec.pose.apply(t_obj)
        a_w = spec.pose.apply_to_vectors(approach_obj)
        c_w = spec.pose.apply_to_vectors(closing_obj)
        g = GraspPose(translation=t_w, approach=a_w,
                      angle=angle_for_closing(a_w, c_w),
                      width=width, depth=gm.finger_depth / 2.0, score=score)
        key = tuple(t_obj)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(g)

    positions = None
    if order:
        positions = np.array([grouped[k][0].translation for k in order])
    return GraspLabelSet(grasps=tuple(tuple(grouped[k]) for k in order),
                         w_max=gm.w_max, positions=positions)


def flatten_labels(labels: GraspLabelSet) -> List[GraspPose]:
    """All grasps of a label set in per-point emission order."""
    return [g for group in labels.grasps for g in group]
