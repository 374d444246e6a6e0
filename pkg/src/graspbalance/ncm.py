"""Noisy-clean scene mixing.

Sensor clouds are noisy and partial; with object models and poses in hand a
clean counterpart of the scene can be synthesized, trimmed down to what the
sensor actually saw, and mixed in at instance granularity: each object is
independently kept noisy or swapped for its clean points.

Consistency matters in two places.  First, clean points are visibility
filtered: a clean point survives only if the noisy scene has a same-instance
point within a small radius, so regions the sensor never observed do not
leak in.  Second, mixing is per whole instance and never changes the
instance-id set of the scene.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND, PointCloud, RigidPose, transform_cloud

DEFAULT_VISIBILITY_RADIUS = 0.005
DEFAULT_REPLACE_PROB = 0.5


@dataclass(frozen=True)
class InstanceAsset:
    """One object: its clean model cloud (object frame, with normals) and pose."""

    instance_id: int
    model: PointCloud
    pose: RigidPose

    def __post_init__(self):
        if int(self.instance_id) < 0:
            raise ValueError("instance_id must be non-negative")
        if self.model.normals is None:
            raise ValueError("asset model clouds must carry normals")
        object.__setattr__(self, "instance_id", int(self.instance_id))


@dataclass(frozen=True)
class SceneAssets:
    """Per-instance models and poses; ids are unique."""

    assets: Tuple[InstanceAsset, ...]

    def __post_init__(self):
        assets = tuple(self.assets)
        ids = [a.instance_id for a in assets]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate instance ids in scene assets")
        object.__setattr__(self, "assets", assets)

    def __len__(self):
        return len(self.assets)

    def ids(self):
        return sorted(a.instance_id for a in self.assets)

    def get(self, instance_id: int) -> InstanceAsset:
        for a in self.assets:
            if a.instance_id == instance_id:
                return a
        raise KeyError(f"no asset for instance {instance_id}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def synthesize_clean_scene(assets: SceneAssets) -> PointCloud:
    """Pose every model cloud and concatenate, ascending instance id.

    Output labels identify the source asset per point; normals ride along.
    """
    if len(assets) == 0:
        raise ValueError("no assets to synthesize from")
    points, normals, labels = [], [], []
    for i in assets.ids():
        asset = assets.get(i)
        posed = transform_cloud(asset.model, asset.pose)
        points.append(posed.points)
        normals.append(posed.normals)
        labels.append(np.full(len(posed), i, dtype=np.int32))
    return PointCloud(points=np.concatenate(points),
                      normals=np.concatenate(normals),
                      instance_labels=np.concatenate(labels))


def visibility_filter(clean: PointCloud, noisy: PointCloud,
                      r: float = DEFAULT_VISIBILITY_RADIUS) -> PointCloud:
    """Keep clean points witnessed by a same-instance noisy point within r.

    Both clouds must be labeled.  Instances absent from the noisy scene are
    removed wholesale; output point order follows the clean input (the kept
    subset), so the result is always a subset of the clean cloud.
    """
    if clean.instance_labels is None or noisy.instance_labels is None:
        raise ValueError("visibility filtering requires labels on both clouds")
    if not r > 0.0:
        raise ValueError("radius must be > 0")
    keep = np.zeros(len(clean), dtype=bool)
    for lbl in np.unique(clean.instance_labels):
        cmask = clean.instance_labels == lbl
        nmask = noisy.instance_labels == lbl
        if not nmask.any():
            continue
        tree = cKDTree(noisy.points[nmask])
        dist, _ = tree.query(clean.points[cmask], k=1)
        keep[np.flatnonzero(cmask)[dist <= r]] = True
    return clean.subset(np.flatnonzero(keep))


def mix_scene(noisy: PointCloud, clean_filtered: PointCloud,
              replace_prob: float = DEFAULT_REPLACE_PROB,
              seed=0) -> PointCloud:
    """Swap whole instances of the noisy scene for their clean points.

    One uniform variate is drawn per noisy instance id, ascending, from a
    generator seeded with `seed`; ids drawing below replace_prob take their
    points from clean_filtered, the rest stay noisy.  Background points are
    always noisy.  An instance whose clean points were entirely filtered
    away stays noisy regardless of the draw, so the output id set always
    equals the noisy scene's.

    Output layout: every unreplaced noisy point in its original order (so
    replace_prob = 0 reproduces the noisy cloud exactly), then one clean
    block per replaced id in ascending order.  Normals are carried only
    when both inputs have them.
    """
    if not 0.0 <= replace_prob <= 1.0:
        raise ValueError(f"replace_prob must be in [0, 1], got {replace_prob}")
    if noisy.instance_labels is None or clean_filtered.instance_labels is None:
        raise ValueError("mixing requires labels on both clouds")

    rng = np.random.default_rng(seed)
    ids = np.unique(noisy.instance_labels)
    ids = ids[ids != BACKGROUND]

    replaced = []
    for i in ids:
        u = rng.uniform()  # one draw per id, whatever the outcome
        if u < replace_prob and np.any(clean_filtered.instance_labels == i):
            replaced.append(int(i))

    keep = ~np.isin(noisy.instance_labels, replaced)
    chunks = [(noisy, np.flatnonzero(keep))]
    for i in replaced:
        chunks.append((clean_filtered,
                       np.flatnonzero(clean_filtered.instance_labels == i)))

    carry_normals = noisy.normals is not None and clean_filtered.normals is not None
    points = np.concatenate([src.points[idx] for src, idx in chunks])
    labels = np.concatenate([src.instance_labels[idx] for src, idx in chunks])
    normals = None
    if carry_normals:
        normals = np.concatenate([src.normals[idx] for src, idx in chunks])
    return PointCloud(points=points, normals=normals, instance_labels=labels)
