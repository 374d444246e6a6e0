"""Independent reference implementations used to cross-check the library.

Everything in this file is written directly from the documented contracts,
using the slowest and most literal formulation available (full pairwise
matrices, per-point python loops).  Nothing here imports the package under
test; agreement between these oracles and the fast implementations is the
point of the exercise.
"""

import numpy as np


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def fps_oracle(points, m, start=0):
    """Brute-force maximin farthest point sampling.

    Recomputes, at every step, the distance of every unchosen point to the
    full chosen set from an N x N pairwise matrix.  Ties broken by lowest
    index (first argmax).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    chosen = [start]
    while len(chosen) < m:
        best_idx = -1
        best_val = -1.0
        for i in range(n):
            if i in chosen:
                continue
            d = min(dist[i, j] for j in chosen)
            if d > best_val:
                best_val = d
                best_idx = i
        chosen.append(best_idx)
    return chosen


def obs_count_oracle(labels, m, background=-1):
    """Per-instance sample counts under the declared quota rule.

    floor(m/K) per instance, +1 for the first m mod K ids in ascending
    order; an instance short of its quota contributes everything it has and
    the deficit rolls forward to the next instances in id order, wrapping
    around to spare capacity if the tail cannot absorb it.
    """
    labels = np.asarray(labels)
    ids = sorted(int(i) for i in np.unique(labels) if i != background)
    k = len(ids)
    if k == 0:
        raise ValueError("no foreground instance")
    sizes = {i: int((labels == i).sum()) for i in ids}
    base, rem = divmod(m, k)
    quota = {ids[j]: base + (1 if j < rem else 0) for j in range(k)}
    take = {}
    carry = 0
    for i in ids:
        want = quota[i] + carry
        take[i] = min(want, sizes[i])
        carry = want - take[i]
    for i in ids:
        if carry == 0:
            break
        spare = sizes[i] - take[i]
        extra = min(spare, carry)
        take[i] += extra
        carry -= extra
    return take


def knn3_oracle(query, seed_positions, seed_features, eps=1e-8):
    """Exhaustive 3-nearest-neighbour inverse-distance interpolation."""
    q = np.asarray(query, dtype=np.float64)
    pos = np.asarray(seed_positions, dtype=np.float64)
    feat = np.asarray(seed_features, dtype=np.float64)
    d = np.sqrt(((pos - q) ** 2).sum(axis=1))
    order = np.argsort(d, kind="stable")[: min(3, len(pos))]
    w = 1.0 / (d[order] + eps)
    w = w / w.sum()
    return order, (w[:, None] * feat[order]).sum(axis=0)


# ---------------------------------------------------------------------------
# Cylinder grouping
# ---------------------------------------------------------------------------

def cylinder_filter_oracle(points, rotation, translation, radius, h_min, h_max):
    """Per-point inequality filter for the cylinder crop (no cap)."""
    keep = []
    for i, p in enumerate(np.asarray(points, dtype=np.float64)):
        local = rotation.T @ (p - translation)
        radial = np.hypot(local[1], local[2])
        if h_min <= local[0] <= h_max and radial <= radius:
            keep.append(i)
    return keep


def cylinder_capped_oracle(points, rotation, translation, radius,
                           h_min, h_max, max_points):
    """Crop then keep the max_points nearest to the axis, ties by index."""
    inside = cylinder_filter_oracle(points, rotation, translation,
                                    radius, h_min, h_max)
    pts = np.asarray(points, dtype=np.float64)
    radial = []
    for i in inside:
        local = rotation.T @ (pts[i] - translation)
        radial.append(np.hypot(local[1], local[2]))
    order = sorted(range(len(inside)), key=lambda j: (radial[j], inside[j]))
    return sorted(inside[j] for j in order[:max_points])


# ---------------------------------------------------------------------------
# Noisy-clean mixing
# ---------------------------------------------------------------------------

def visibility_oracle(clean_points, clean_labels, noisy_points, noisy_labels, r):
    """All-pairs radius presence test; returns the kept clean indices."""
    cp = np.asarray(clean_points, dtype=np.float64)
    np_ = np.asarray(noisy_points, dtype=np.float64)
    kept = []
    for i in range(len(cp)):
        lbl = clean_labels[i]
        ok = False
        for j in range(len(np_)):
            if noisy_labels[j] != lbl:
                continue
            if np.linalg.norm(cp[i] - np_[j]) <= r:
                ok = True
                break
        if ok:
            kept.append(i)
    return kept


# ---------------------------------------------------------------------------
# Evaluation geometry and metrics
# ---------------------------------------------------------------------------

def point_in_gripper_boxes_oracle(points, rotation, translation,
                                  width, depth, finger_depth, finger_height,
                                  finger_width, base_depth):
    """True iff any point lies strictly inside one of the three gripper boxes.

    Boxes in the gripper frame (x approach, y closing, z cross):
      fingers: x in (depth - finger_depth, depth),
               |y| in (width/2, width/2 + finger_width),
               |z| < finger_height/2
      base:    x in (depth - finger_depth - base_depth, depth - finger_depth),
               |y| < width/2 + finger_width, |z| < finger_height/2
    """
    for p in np.asarray(points, dtype=np.float64):
        x, y, z = rotation.T @ (p - translation)
        if abs(z) >= finger_height / 2.0:
            continue
        in_sweep_x = depth - finger_depth < x < depth
        if in_sweep_x and width / 2.0 < abs(y) < width / 2.0 + finger_width:
            return True
        in_base_x = depth - finger_depth - base_depth < x < depth - finger_depth
        if in_base_x and abs(y) < width / 2.0 + finger_width:
            return True
    return False


def antipodal_oracle(contact_normals_y, mu):
    """Two-sided friction cone check from the closing-axis normal components.

    Success iff some normal lies within arctan(mu) of +closing and some
    other within arctan(mu) of -closing.
    """
    ny = np.asarray(contact_normals_y, dtype=np.float64)
    cone_cos = np.cos(np.arctan(mu))
    return bool((ny >= cone_cos).any() and (ny <= -cone_cos).any())


def precision_at_k_oracle(results, k):
    hits = sum(1 for r in results[:k] if r)
    return hits / k


def ap_mu_oracle(results):
    return sum(precision_at_k_oracle(results, k) for k in range(1, 51)) / 50.0


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix; used to cross-check frame construction."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    kx = np.array([[0.0, -a[2], a[1]],
                   [a[2], 0.0, -a[0]],
                   [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
