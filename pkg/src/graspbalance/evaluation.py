"""Grasp quality evaluation: collision, force closure, ranking metrics.

Gripper geometry for the checks below, in the gripper frame produced by
core.frame_of_grasp (x approach, y closing, z cross; grasp depth measured
from the grasp center to the fingertip plane along x):

  closing sweep   x in [depth - finger_depth, depth], |y| <= width/2,
                  |z| <= finger_height/2 (inclusive; this is where contact
                  candidates live)
  finger boxes    same x and z ranges but strict, width/2 < |y| <
                  width/2 + finger_width (strict interior, so points the
                  fingers merely touch at |y| = width/2 are not collisions)
  base slab       x in (depth - finger_depth - base_depth,
                  depth - finger_depth), |y| < width/2 + finger_width,
                  |z| < finger_height/2 (strict)

Force closure is a two-contact antipodal friction-cone test, not a full
wrench-space computation: a grasp succeeds at friction mu when some contact
normal lies within arctan(mu) of the +y closing direction and some other
within arctan(mu) of -y.  Equivalently |n_y| >= 1/sqrt(1 + mu^2) on both
sides, compared inclusively, which keeps the success set exactly monotone
in mu.

Ranking follows the usual benchmark conventions: grasps sort by descending
score (ties by smaller width, then input order), colliding grasps are
dropped, Precision@k penalizes shortfalls by keeping k in the denominator,
AP_mu averages Precision@k for k = 1..50, and AP averages AP_mu over
mu in {0.2, 0.4, 0.6, 0.8, 1.0, 1.2}.
"""

import enum
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import GraspPose, GripperModel, PointCloud, frame_of_grasp, transform_cloud
from .ncm import SceneAssets

MU_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
TOP_K = 50
STATS_TOP_N = 10
STATS_MU = 0.8

# benchmark width intervals, meters
SMALL_MAX = 0.04
MEDIUM_MAX = 0.07
LARGE_MAX = 0.10


class ScaleClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def scale_class_of(width: float) -> ScaleClass:
    """Small [0, 0.04), Medium [0.04, 0.07), Large [0.07, 0.10]."""
    if not 0.0 <= width <= LARGE_MAX:
        raise ValueError(f"width {width} outside [0, {LARGE_MAX}]")
    if width < SMALL_MAX:
        return ScaleClass.SMALL
    if width < MEDIUM_MAX:
        return ScaleClass.MEDIUM
    return ScaleClass.LARGE


@dataclass(frozen=True)
class ScaleStats:
    count: int
    success_rate: float


@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap_by_mu: Dict[float, float]
    ap_by_scale: Dict[ScaleClass, float]
    per_scale_stats: Dict[ScaleClass, ScaleStats]

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap_by_mu": {f"{mu:.1f}": v for mu, v in self.ap_by_mu.items()},
            "ap_small": self.ap_by_scale[ScaleClass.SMALL],
            "ap_medium": self.ap_by_scale[ScaleClass.MEDIUM],
            "ap_large": self.ap_by_scale[ScaleClass.LARGE],
            "stats": {
                cls.value: {"count": st.count, "success_rate": st.success_rate}
                for cls, st in self.per_scale_stats.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            ap=float(d["ap"]),
            ap_by_mu={float(k): float(v) for k, v in d["ap_by_mu"].items()},
            ap_by_scale={ScaleClass.SMALL: float(d["ap_small"]),
                         ScaleClass.MEDIUM: float(d["ap_medium"]),
                         ScaleClass.LARGE: float(d["ap_large"])},
            per_scale_stats={
                sc: ScaleStats(count=int(d["stats"][sc.value]["count"]),
                               success_rate=float(d["stats"][sc.value]["success_rate"]))
                for sc in ScaleClass
            },
        )


# ---------------------------------------------------------------------------
# Geometry checks
# ---------------------------------------------------------------------------

def collision_check(g: GraspPose, scene: PointCloud,
                    gm: Optional[GripperModel] = None) -> bool:
    """True iff any scene point lies strictly inside a gripper box."""
    gm = gm or GripperModel()
    if len(scene) == 0:
        return False
    frame = frame_of_grasp(g)
    local = (scene.points - frame.translation) @ frame.rotation
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    ay = np.abs(y)
    zin = np.abs(z) < gm.finger_height / 2.0
    finger = ((x > g.depth - gm.finger_depth) & (x < g.depth) &
              (ay > g.width / 2.0) & (ay < g.width / 2.0 + gm.finger_width) &
              zin)
    base = ((x > g.depth - gm.finger_depth - gm.base_depth) &
            (x < g.depth - gm.finger_depth) &
            (ay < g.width / 2.0 + gm.finger_width) & zin)
    return bool(np.any(finger) or np.any(base))


def closure_cosine(g: GraspPose, obj: PointCloud,
                   gm: Optional[GripperModel] = None) -> float:
    """Best achievable two-sided alignment of contact normals with closing.

    Over the object points inside the closing sweep, returns
    min(max n_y, max -n_y): the grasp succeeds at friction mu iff this is
    >= 1/sqrt(1 + mu^2).  -inf when the sweep holds no points or the
    normals never oppose.
    """
    gm = gm or GripperModel()
    if obj.normals is None:
        raise ValueError("force closure needs object normals")
    frame = frame_of_grasp(g)
    local = (obj.points - frame.translation) @ frame.rotation
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    sweep = ((x >= g.depth - gm.finger_depth) & (x <= g.depth) &
             (np.abs(y) <= g.width / 2.0) &
             (np.abs(z) <= gm.finger_height / 2.0))
    if not sweep.any():
        return float("-inf")
    ny = obj.normals[sweep] @ frame.rotation[:, 1]
    return float(min(ny.max(), -ny.min()))


def grasp_success(g: GraspPose, obj: PointCloud, mu: float,
                  gm: Optional[GripperModel] = None) -> bool:
    """Antipodal friction-cone success at coefficient mu (inclusive cone edge)."""
    if not mu > 0.0:
        raise ValueError("mu must be > 0")
    return closure_cosine(g, obj, gm) >= 1.0 / np.sqrt(1.0 + mu * mu)


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def precision_at_k(results: Sequence[bool], k: int) -> float:
    """Fraction of successes among the top k; short lists count misses."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for r in results[:k] if r)
    return hits / k


def ap_mu(results: Sequence[bool]) -> float:
    """Mean Precision@k for k = 1..50 on a score-ordered outcome list."""
    return sum(precision_at_k(results, k) for k in range(1, TOP_K + 1)) / TOP_K


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def _ranked_order(grasps: Sequence[GraspPose]) -> List[int]:
    # canonical sort: score desc, then width asc, then input order
    return sorted(range(len(grasps)),
                  key=lambda i: (-grasps[i].score, grasps[i].width, i))


def _world_objects(objects: SceneAssets) -> List[Tuple[int, PointCloud, cKDTree]]:
    out = []
    for i in objects.ids():
        posed = transform_cloud(objects.get(i).model, objects.get(i).pose)
        out.append((i, posed, cKDTree(posed.points)))
    return out


def _associate(grasps: Sequence[GraspPose], world) -> List[int]:
    """Index into `world` of the object nearest each grasp center."""
    assoc = []
    for g in grasps:
        dists = [tree.query(g.translation)[0] for _, _, tree in world]
        assoc.append(int(np.argmin(dists)))
    return assoc


def _zero_report() -> EvalReport:
    return EvalReport(
        ap=0.0,
        ap_by_mu={mu: 0.0 for mu in MU_GRID},
        ap_by_scale={sc: 0.0 for sc in ScaleClass},
        per_scale_stats={sc: ScaleStats(0, 0.0) for sc in ScaleClass},
    )


def _ap_pipeline(grasps: Sequence[GraspPose], scene: PointCloud,
                 world, gm: GripperModel) -> Dict[float, float]:
    """Sort, drop collisions, associate, score against every mu."""
    order = _ranked_order(grasps)
    survivors = [grasps[i] for i in order
                 if not collision_check(grasps[i], scene, gm)]
    if not survivors:
        return {mu: 0.0 for mu in MU_GRID}
    assoc = _associate(survivors, world)
    cosines = [closure_cosine(g, world[a][1], gm)
               for g, a in zip(survivors, assoc)]
    out = {}
    for mu in MU_GRID:
        threshold = 1.0 / np.sqrt(1.0 + mu * mu)
        out[mu] = ap_mu([c >= threshold for c in cosines])
    return out


def evaluate(grasps: Sequence[GraspPose], scene: PointCloud,
             objects: SceneAssets, gm: Optional[GripperModel] = None) -> EvalReport:
    """Collision-filtered, score-ranked AP report with per-scale breakdown.

    AP_small/medium/large rerun the whole pipeline on the width-restricted
    subsets, so the per-class numbers are self-contained rather than a
    partition of the overall outcome list.
    """
    gm = gm or GripperModel()
    grasps = list(grasps)
    if not grasps:
        return _zero_report()
    world = _world_objects(objects)

    by_mu = _ap_pipeline(grasps, scene, world, gm)
    by_scale = {}
    for sc in ScaleClass:
        subset = [g for g in grasps if scale_class_of(g.width) is sc]
        if subset:
            by_scale[sc] = float(np.mean(list(
                _ap_pipeline(subset, scene, world, gm).values())))
        else:
            by_scale[sc] = 0.0

    return EvalReport(
        ap=float(np.mean(list(by_mu.values()))),
        ap_by_mu=by_mu,
        ap_by_scale=by_scale,
        per_scale_stats=per_scale_stats(grasps, objects, gm),
    )


def per_scale_stats(grasps: Sequence[GraspPose], objects: SceneAssets,
                    gm: Optional[GripperModel] = None) -> Dict[ScaleClass, ScaleStats]:
    """Scale mix and success rate of each object's top-10 grasps at mu = 0.8.

    Grasps associate to their nearest object; each object contributes its
    ten best by score (fewer if it has fewer), classified by width and
    checked for force closure.  Classes with no grasps report rate 0.
    """
    gm = gm or GripperModel()
    grasps = list(grasps)
    counts = {sc: 0 for sc in ScaleClass}
    hits = {sc: 0 for sc in ScaleClass}
    if grasps:
        world = _world_objects(objects)
        assoc = _associate(grasps, world)
        threshold = 1.0 / np.sqrt(1.0 + STATS_MU * STATS_MU)
        per_object: Dict[int, List[int]] = {}
        for gi, a in enumerate(assoc):
            per_object.setdefault(a, []).append(gi)
        for a, indices in sorted(per_object.items()):
            ranked = sorted(indices, key=lambda i: (-grasps[i].score,
                                                    grasps[i].width, i))
            for gi in ranked[:STATS_TOP_N]:
                g = grasps[gi]
                sc = scale_class_of(g.width)
                counts[sc] += 1
                if closure_cosine(g, world[a][1], gm) >= threshold:
                    hits[sc] += 1
    return {sc: ScaleStats(count=counts[sc],
                           success_rate=(hits[sc] / counts[sc]) if counts[sc] else 0.0)
            for sc in ScaleClass}
