"""Scale statistics and frequency-balanced loss weighting.

A grasp's scale is its gripper opening width.  Training data is heavily
skewed across scales, so per-sample losses get reweighted by how rare the
sample's scale bin is:

    W = 1 - ln(C_bin / C_max)

where C_bin counts training grasps in the sample's width bin and C_max is
the largest bin count.  The most common scale keeps weight 1.0 and rarer
ones grow logarithmically.  Negative samples (points with no successful
grasp) also get weight 1.0.

The weighted loss over a batch is the mean of W * (approach + alpha * rotation).
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import GraspPose

DEFAULT_BINS = 10
DEFAULT_ALPHA = 1.0


@dataclass(frozen=True)
class ScaleHistogram:
    """Counts of grasp widths over t equal bins spanning [0, w_max].

    Bin i covers [i * w_max / t, (i + 1) * w_max / t); the last bin is
    closed on the right so a width of exactly w_max lands in bin t - 1.

    Counts are stored as floats: build_scale_histogram always produces
    whole numbers, but direct construction may use real-valued counts
    (useful for exact weight-ratio fixtures).
    """

    t: int
    w_max: float
    counts: np.ndarray

    def __post_init__(self):
        if int(self.t) < 1:
            raise ValueError("histogram needs at least one bin")
        if not float(self.w_max) > 0.0:
            raise ValueError("w_max must be > 0")
        counts = np.array(self.counts, dtype=np.float64, copy=True)
        if counts.shape != (int(self.t),):
            raise ValueError(f"counts must have shape ({self.t},)")
        if np.any(~np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "w_max", float(self.w_max))
        object.__setattr__(self, "counts", counts)

    @property
    def c_max(self) -> float:
        return float(self.counts.max())

    @property
    def populated(self) -> bool:
        return self.c_max > 0.0

    def bin_of(self, scale: float) -> int:
        """Bin index for a width in [0, w_max]."""
        if not 0.0 <= scale <= self.w_max:
            raise ValueError(f"scale {scale} outside [0, {self.w_max}]")
        edges = _bin_edges(self.t, self.w_max)
        i = int(np.searchsorted(edges, scale, side="right")) - 1
        return min(i, self.t - 1)  # scale == w_max closes the last bin

    def to_dict(self) -> dict:
        return {"t": self.t, "w_max": self.w_max,
                "counts": [float(c) for c in self.counts]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleHistogram":
        return cls(t=int(d["t"]), w_max=float(d["w_max"]),
                   counts=np.asarray(d["counts"], dtype=np.float64))


@dataclass(frozen=True)
class GraspLabelSet:
    """Annotated grasp candidates for a set of sample points.

    grasps[i] is the tuple of candidate GraspPoses for point i; positions
    optionally records the points themselves.  Every width must lie in
    [0, w_max].
    """

    grasps: Tuple[Tuple[GraspPose, ...], ...]
    w_max: float = 0.10
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.grasps)
        for pi, group in enumerate(groups):
            for g in group:
                if not isinstance(g, GraspPose):
                    raise ValueError(f"point {pi}: entries must be GraspPose")
                if g.width > self.w_max:
                    raise ValueError(
                        f"point {pi}: width {g.width} exceeds w_max {self.w_max}")
        object.__setattr__(self, "grasps", groups)
        object.__setattr__(self, "w_max", float(self.w_max))
        if self.positions is not None:
            pos = np.array(self.positions, dtype=np.float64, copy=True)
            if pos.shape != (len(groups), 3):
                raise ValueError("positions must be (P, 3) matching grasps")
            pos.setflags(write=False)
            object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.grasps)


def _bin_edges(t: int, w_max: float) -> np.ndarray:
    edges = np.arange(t + 1, dtype=np.float64) * (w_max / t)
    edges[-1] = w_max  # guard the top edge against rounding
    return edges


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def best_scale_per_point(labels: GraspLabelSet) -> List[Optional[float]]:
    """Width of each point's highest-scoring successful grasp.

    A grasp counts as successful when its score is positive; a point with
    no successful grasp yields None (a negative sample).  Score ties prefer
    the smaller width, then the earlier entry.
    """
    out: List[Optional[float]] = []
    for group in labels.grasps:
        best: Optional[GraspPose] = None
        for g in group:
            if g.score <= 0.0:
                continue
            if best is None or g.score > best.score or \
                    (g.score == best.score and g.width < best.width):
                best = g
        out.append(None if best is None else best.width)
    return out


def build_scale_histogram(scales, t: int = DEFAULT_BINS,
                          w_max: float = 0.10) -> ScaleHistogram:
    """Bin a list of widths; raises on widths outside [0, w_max]."""
    if t < 1:
        raise ValueError("histogram needs at least one bin")
    vals = np.asarray([s for s in scales], dtype=np.float64)
    if vals.size and (vals.min() < 0.0 or vals.max() > w_max):
        bad = vals[(vals < 0.0) | (vals > w_max)][0]
        raise ValueError(f"scale {bad} outside [0, {w_max}]")
    edges = _bin_edges(t, w_max)
    idx = np.searchsorted(edges, vals, side="right") - 1
    idx[idx == t] = t - 1  # widths exactly at w_max
    counts = np.bincount(idx, minlength=t).astype(np.float64)
    return ScaleHistogram(t=t, w_max=w_max, counts=counts)


def sample_weight(h: ScaleHistogram, scale: Optional[float]) -> float:
    """Frequency weight for one sample: 1 - ln(C_bin / C_max).

    None marks a negative sample and always weighs 1.0.  A bin that is
    empty at inference time is clamped to count 1 so the weight stays
    finite.  Requires a populated histogram.
    """
    if not h.populated:
        raise ValueError("histogram is unpopulated (all counts zero)")
    if scale is None:
        return 1.0
    c = float(h.counts[h.bin_of(scale)])
    if c == 0.0:
        c = 1.0
    return float(1.0 - np.log(c / h.c_max))


def weighted_loss(approach_losses, rotation_losses, weights,
                  alpha: float = DEFAULT_ALPHA) -> float:
    """Mean over samples of W * (approach + alpha * rotation)."""
    a = np.asarray(approach_losses, dtype=np.float64)
    r = np.asarray(rotation_losses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not (a.shape == r.shape == w.shape) or a.ndim != 1:
        raise ValueError("loss and weight vectors must share one length")
    if a.size == 0:
        raise ValueError("cannot reduce an empty batch")
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    return float(np.mean(w * (a + alpha * r)))
