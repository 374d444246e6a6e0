"""Candidate point selection and seed feature interpolation.

Four operations: plain farthest point sampling over the whole cloud,
foreground-restricted FPS, object-balanced sampling with per-instance
quotas, and 3-nearest-neighbour feature interpolation for positions that
were not in the original seed set.

All of them are deterministic: FPS starts at a fixed index (0 by default)
and breaks maximin ties by lowest index, so identical inputs give
bit-identical outputs.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND, PointCloud

_EPS = 1e-8


class SampleShortfallWarning(UserWarning):
    """Fewer points were available than requested; all of them were returned."""


@dataclass(frozen=True)
class SeedFeatureSet:
    """Sampled candidate positions with their encoder features.

    positions (M, 3) float64
    features  (M, C) float64
    """

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        feat = np.array(self.features, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (M, 3), got {pos.shape}")
        if feat.ndim != 2:
            raise ValueError(f"features must be (M, C), got {feat.shape}")
        if len(pos) != len(feat):
            raise ValueError("positions and features must have equal length")
        pos.setflags(write=False)
        feat.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    def __len__(self):
        return len(self.positions)

    @property
    def feature_dim(self):
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# Farthest point sampling
# ---------------------------------------------------------------------------

def _fps_on_points(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Greedy maximin selection over an (N, 3) array.

    Keeps a running minimum squared distance to the chosen set; np.argmax
    returns the first maximum, which is exactly the lowest-index tie rule.
    """
    n = len(points)
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    min_sq = ((points - points[start]) ** 2).sum(axis=1)
    min_sq[start] = -1.0  # never reselected
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))
        selected[i] = nxt
        d = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(min_sq, d, out=min_sq)
        min_sq[nxt] = -1.0
    return selected


def fps(cloud: PointCloud, m: int, start: int = 0) -> np.ndarray:
    """Farthest point sampling; returns m distinct indices in selection order.

    Each index after the first maximizes the minimum distance to all points
    chosen so far, ties broken by lowest index.  The prefix property holds:
    with the same start, fps(cloud, m1) is a prefix of fps(cloud, m2) for
    m1 < m2.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    return _fps_on_points(cloud.points, m, start)


def foreground_sample(cloud: PointCloud, m: int) -> np.ndarray:
    """FPS restricted to points with a non-background instance label.

    If fewer than m foreground points exist, all of them are returned (in
    FPS selection order) and a SampleShortfallWarning is issued.
    """
    if cloud.instance_labels is None:
        raise ValueError("foreground sampling requires instance labels")
    fg = np.flatnonzero(cloud.instance_labels != BACKGROUND)
    if len(fg) == 0:
        raise ValueError("cloud has no foreground points")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if len(fg) < m:
        warnings.warn(
            f"requested {m} samples but only {len(fg)} foreground points exist",
            SampleShortfallWarning, stacklevel=2)
        m = len(fg)
    local = _fps_on_points(cloud.points[fg], m, start=0)
    return fg[local]


def object_balanced_sample(cloud: PointCloud, m: int) -> np.ndarray:
    """Per-instance FPS with equal quotas.

    Quotas: floor(m/K) per instance, +1 for the first m mod K instance ids
    in ascending order.  An instance smaller than its quota contributes all
    of its points; the deficit rolls to the next instances in id order and
    wraps around to any remaining spare capacity.  Per-instance counts
    therefore sum to min(m, foreground size).

    Returns indices grouped by ascending instance id, FPS selection order
    within each group.
    """
    if cloud.instance_labels is None:
        raise ValueError("object-balanced sampling requires instance labels")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    labels = cloud.instance_labels
    ids = np.unique(labels[labels != BACKGROUND])
    if len(ids) == 0:
        raise ValueError("cloud has no foreground instance")

    members = {int(i): np.flatnonzero(labels == i) for i in ids}
    sizes = {i: len(members[i]) for i in members}
    k = len(ids)
    base, rem = divmod(m, k)
    quota = {int(ids[j]): base + (1 if j < rem else 0) for j in range(k)}

    take = {}
    carry = 0
    for i in (int(v) for v in ids):
        want = quota[i] + carry
        take[i] = min(want, sizes[i])
        carry = want - take[i]
    # wrap the leftover into whatever capacity remains, still in id order
    for i in (int(v) for v in ids):
        if carry == 0:
            break
        extra = min(sizes[i] - take[i], carry)
        take[i] += extra
        carry -= extra
    if carry > 0:
        warnings.warn(
            f"requested {m} samples but only {m - carry} foreground points exist",
            SampleShortfallWarning, stacklevel=2)

    picked = []
    for i in (int(v) for v in ids):
        if take[i] == 0:
            continue
        local = _fps_on_points(cloud.points[members[i]], take[i], start=0)
        picked.append(members[i][local])
    return np.concatenate(picked)


# ---------------------------------------------------------------------------
# Feature interpolation
# ---------------------------------------------------------------------------

def interpolate_features(new_positions, seeds: SeedFeatureSet) -> np.ndarray:
    """Inverse-distance-weighted features from the 3 nearest seeds.

    Weights are 1 / (d + 1e-8), normalized to sum 1, so an exact position
    match dominates naturally.  With fewer than 3 seeds, all of them are
    used.  Returns a (Q, C) array.
    """
    if len(seeds) == 0:
        raise ValueError("seed set is empty")
    q = np.asarray(new_positions, dtype=np.float64)
    if q.ndim == 1:
        q = q.reshape(1, 3)
    if q.ndim != 2 or q.shape[1] != 3:
        raise ValueError(f"new_positions must be (Q, 3), got {q.shape}")
    k = min(3, len(seeds))
    dist, idx = cKDTree(seeds.positions).query(q, k=k)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    w = 1.0 / (dist + _EPS)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("qk,qkc->qc", w, seeds.features[idx])
