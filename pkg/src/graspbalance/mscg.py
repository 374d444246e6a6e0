"""Multi-scale cylinder grouping with gated seed-feature fusion.

Around each candidate grasp frame, points are cropped by a stack of
concentric cylinders whose radii step evenly up to the gripper's maximum
width.  Each crop is encoded by a per-scale point MLP followed by a
coordinate-wise max over the group, and the per-scale codes are fused by an
affine map together with the candidate's seed feature, which first passes
through a logistic gate conditioned on itself.

Conventions:
  * cylinder axis = gripper x (approach); the crop keeps points with
    h_min <= x <= h_max and sqrt(y^2 + z^2) <= radius in the gripper frame.
  * encoder input is the 3-vector of gripper-frame coordinates.
  * weight matrices are (out, in); a layer computes x @ W.T + b with a
    rectifier between layers (none after the last).
  * an empty crop encodes to the zero vector and raises an empty flag; a
    candidate whose crops are all empty bypasses fusion entirely and
    reports a zero feature.

The analytic gradient path exists so the kernels can be checked against
finite differences; it mirrors the forward pass exactly (max-pool routes
gradient to the first maximizing point, rectifier subgradient 0 at the
kink).
"""

import re
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import GripperModel, PointCloud, RigidPose, grasp_frame
from .sampling import SeedFeatureSet, interpolate_features

_DEFAULT_MAX_POINTS = 64
_KEY_RE = re.compile(r"^scale(\d+)_layer(\d+)_(w|b)$")


@dataclass(frozen=True)
class CylinderSpec:
    """One crop cylinder, axis along the gripper approach direction."""

    radius: float
    h_min: float
    h_max: float
    max_points: int = _DEFAULT_MAX_POINTS

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0.0):
            raise ValueError("cylinder radius must be > 0")
        if not self.h_min < self.h_max:
            raise ValueError("cylinder requires h_min < h_max")
        if int(self.max_points) < 1:
            raise ValueError("max_points must be >= 1")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "h_min", float(self.h_min))
        object.__setattr__(self, "h_max", float(self.h_max))
        object.__setattr__(self, "max_points", int(self.max_points))


def _freeze(arr):
    a = np.array(arr, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EncoderParams:
    """Weights for the per-scale MLPs, the seed gate and the fusion layer.

    scale_layers[i] is the layer list ((W, b), ...) of scale i; the first
    layer consumes the 3 gripper-frame coordinates and every scale ends at
    the common feature dimension C.  gate_w/gate_b are (C, C)/(C,), and
    fuse_w maps the concatenation of the s scale codes and the gated seed
    (or, in "sum" mode, the summed scale code and the gated seed) back to C.
    """

    scale_layers: Tuple[Tuple[Tuple[np.ndarray, np.ndarray], ...], ...]
    gate_w: np.ndarray
    gate_b: np.ndarray
    fuse_w: np.ndarray
    fuse_b: np.ndarray
    fusion_mode: str = "concat"

    def __post_init__(self):
        if self.fusion_mode not in ("concat", "sum"):
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        scales = []
        out_dims = set()
        for si, layers in enumerate(self.scale_layers):
            if len(layers) == 0:
                raise ValueError(f"scale {si} has no layers")
            frozen = []
            prev = 3
            for li, (w, b) in enumerate(layers):
                w = np.asarray(w, dtype=np.float64)
                b = np.asarray(b, dtype=np.float64)
                if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                    raise ValueError(f"scale {si} layer {li}: bad shapes "
                                     f"{w.shape} / {b.shape}")
                if w.shape[1] != prev:
                    raise ValueError(
                        f"scale {si} layer {li}: input dim {w.shape[1]} "
                        f"does not chain from {prev}")
                prev = w.shape[0]
                frozen.append((_freeze(w), _freeze(b)))
            out_dims.add(prev)
            scales.append(tuple(frozen))
        if len(out_dims) != 1:
            raise ValueError(f"scales disagree on feature dim: {sorted(out_dims)}")
        c = out_dims.pop()

        gate_w = np.asarray(self.gate_w, dtype=np.float64)
        gate_b = np.asarray(self.gate_b, dtype=np.float64)
        if gate_w.shape != (c, c) or gate_b.shape != (c,):
            raise ValueError(f"gate expects ({c}, {c}) / ({c},), got "
                             f"{gate_w.shape} / {gate_b.shape}")
        s = len(scales)
        fuse_in = (s * c + c) if self.fusion_mode == "concat" else 2 * c
        fuse_w = np.asarray(self.fuse_w, dtype=np.float64)
        fuse_b = np.asarray(self.fuse_b, dtype=np.float64)
        if fuse_w.shape != (c, fuse_in) or fuse_b.shape != (c,):
            raise ValueError(f"fusion expects ({c}, {fuse_in}) / ({c},), got "
                             f"{fuse_w.shape} / {fuse_b.shape}")

        object.__setattr__(self, "scale_layers", tuple(scales))
        object.__setattr__(self, "gate_w", _freeze(gate_w))
        object.__setattr__(self, "gate_b", _freeze(gate_b))
        object.__setattr__(self, "fuse_w", _freeze(fuse_w))
        object.__setattr__(self, "fuse_b", _freeze(fuse_b))

    @property
    def num_scales(self) -> int:
        return len(self.scale_layers)

    @property
    def feature_dim(self) -> int:
        return self.scale_layers[0][-1][0].shape[0]

    # -- construction and persistence --------------------------------------

    @classmethod
    def seeded(cls, num_scales: int, layer_dims: Sequence[int] = (3, 64, 64),
               seed=0, fusion_mode: str = "concat") -> "EncoderParams":
        """Deterministic pseudo-random initialization.

        layer_dims runs from the 3 input coordinates to the feature dim C
        and is shared by all scales (each scale draws its own weights).
        Weights are Glorot-uniform, biases zero.
        """
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or dims[0] != 3:
            raise ValueError("layer_dims must run from 3 to the feature dim")
        if num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        rng = np.random.default_rng(seed)

        def glorot(out_dim, in_dim):
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            return rng.uniform(-limit, limit, size=(out_dim, in_dim))

        c = dims[-1]
        scales = tuple(
            tuple((glorot(dims[j + 1], dims[j]), np.zeros(dims[j + 1]))
                  for j in range(len(dims) - 1))
            for _ in range(num_scales))
        gate_w = glorot(c, c)
        fuse_in = (num_scales * c + c) if fusion_mode == "concat" else 2 * c
        fuse_w = glorot(c, fuse_in)
        return cls(scale_layers=scales, gate_w=gate_w, gate_b=np.zeros(c),
                   fuse_w=fuse_w, fuse_b=np.zeros(c), fusion_mode=fusion_mode)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Named-array form used by save/load and by gradient checks."""
        out = {}
        for si, layers in enumerate(self.scale_layers):
            for li, (w, b) in enumerate(layers):
                out[f"scale{si}_layer{li}_w"] = np.array(w)
                out[f"scale{si}_layer{li}_b"] = np.array(b)
        out["gate_w"] = np.array(self.gate_w)
        out["gate_b"] = np.array(self.gate_b)
        out["fuse_w"] = np.array(self.fuse_w)
        out["fuse_b"] = np.array(self.fuse_b)
        out["fusion_mode"] = np.array(self.fusion_mode)
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "EncoderParams":
        layer_map: Dict[int, Dict[int, dict]] = {}
        for key in arrays:
            mt = _KEY_RE.match(key)
            if mt:
                si, li, kind = int(mt.group(1)), int(mt.group(2)), mt.group(3)
                layer_map.setdefault(si, {}).setdefault(li, {})[kind] = \
                    np.asarray(arrays[key])
        if not layer_map:
            raise ValueError("no scale layers found")
        if sorted(layer_map) != list(range(len(layer_map))):
            raise ValueError("scale indices must be contiguous from 0")
        scales = []
        for si in range(len(layer_map)):
            lis = layer_map[si]
            if sorted(lis) != list(range(len(lis))):
                raise ValueError(f"scale {si}: layer indices must be "
                                 "contiguous from 0")
            layers = []
            for li in range(len(lis)):
                entry = lis[li]
                if "w" not in entry or "b" not in entry:
                    raise ValueError(f"scale {si} layer {li}: missing w or b")
                layers.append((entry["w"], entry["b"]))
            scales.append(tuple(layers))
        mode = str(np.asarray(arrays["fusion_mode"])) if "fusion_mode" in arrays \
            else "concat"
        for key in ("gate_w", "gate_b", "fuse_w", "fuse_b"):
            if key not in arrays:
                raise ValueError(f"missing array {key!r}")
        return cls(scale_layers=tuple(scales),
                   gate_w=np.asarray(arrays["gate_w"]),
                   gate_b=np.asarray(arrays["gate_b"]),
                   fuse_w=np.asarray(arrays["fuse_w"]),
                   fuse_b=np.asarray(arrays["fuse_b"]),
                   fusion_mode=mode)

    def save(self, path) -> None:
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "EncoderParams":
        with np.load(path, allow_pickle=False) as data:
            return cls.from_arrays({k: data[k] for k in data.files})


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def make_radii(w_max: float, s: int) -> np.ndarray:
    """Radii evenly stepped up to the gripper width: w_max * i / s, i = 1..s."""
    if s < 1:
        raise ValueError("need at least one scale")
    if not w_max > 0.0:
        raise ValueError("w_max must be > 0")
    return w_max * np.arange(1, s + 1, dtype=np.float64) / s


def cylinder_query(cloud: PointCloud, frame: RigidPose,
                   spec: CylinderSpec) -> np.ndarray:
    """Indices of points inside the cylinder, ascending.

    When more than max_points qualify, the ones nearest the cylinder axis
    are kept (ties by lowest index).
    """
    local = (cloud.points - frame.translation) @ frame.rotation
    x = local[:, 0]
    radial_sq = local[:, 1] ** 2 + local[:, 2] ** 2
    mask = (x >= spec.h_min) & (x <= spec.h_max) & \
           (radial_sq <= spec.radius * spec.radius)
    idx = np.flatnonzero(mask)
    if len(idx) > spec.max_points:
        # stable sort on radial distance preserves ascending index among ties
        order = np.argsort(radial_sq[idx], kind="stable")[:spec.max_points]
        idx = np.sort(idx[order])
    return idx.astype(np.int64)


# ---------------------------------------------------------------------------
# Encoding and fusion
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def encode_group(group_points, params: EncoderParams,
                 scale_index: int) -> Tuple[np.ndarray, bool]:
    """Per-point MLP then coordinate-wise max over the group.

    group_points are gripper-frame coordinates, shape (n, 3).  Returns
    (code, empty): an empty group encodes to zeros with empty=True so the
    caller can decide whether fusion still makes sense.
    """
    if not 0 <= scale_index < params.num_scales:
        raise ValueError(f"scale index {scale_index} out of range")
    pts = np.asarray(group_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(params.feature_dim), True
    layers = params.scale_layers[scale_index]
    h = pts
    for li, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if li < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h.max(axis=0), False


def gated_fusion(scale_features, seed_feature, params: EncoderParams) -> np.ndarray:
    """Affine fusion of the scale codes with the gated seed feature.

    gate = logistic(gate_w @ seed + gate_b); the gated seed g * seed joins
    the scale codes (concatenated, or summed in "sum" mode) as fusion input.
    """
    feats = [np.asarray(f, dtype=np.float64) for f in scale_features]
    seed = np.asarray(seed_feature, dtype=np.float64)
    c = params.feature_dim
    if len(feats) != params.num_scales:
        raise ValueError(f"expected {params.num_scales} scale features, "
                         f"got {len(feats)}")
    if any(f.shape != (c,) for f in feats) or seed.shape != (c,):
        raise ValueError(f"scale and seed features must all be ({c},)")
    gate = _sigmoid(params.gate_w @ seed + params.gate_b)
    gated = gate * seed
    if params.fusion_mode == "concat":
        z = np.concatenate(feats + [gated])
    else:
        z = np.concatenate([np.sum(feats, axis=0), gated])
    return params.fuse_w @ z + params.fuse_b


def _default_h_range():
    fd = GripperModel().finger_depth
    return (-fd, fd)


def mscg_features(cloud: PointCloud, candidates, seeds: SeedFeatureSet,
                  params: EncoderParams, w_max: float = 0.10,
                  s: Optional[int] = None,
                  h_range: Optional[Tuple[float, float]] = None,
                  max_points: int = _DEFAULT_MAX_POINTS
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Fused multi-scale feature per candidate.

    candidates is a sequence of (position, approach, angle) triples.  For
    each one: build the gripper frame, crop s concentric cylinders
    (make_radii), encode every crop, interpolate the candidate's seed
    feature from the seed set, and fuse.  Candidates whose crops are all
    empty get a zero feature and a raised flag instead of going through
    fusion.

    Returns (features (Q, C), all_empty (Q,) bool).
    """
    if s is None:
        s = params.num_scales
    elif s != params.num_scales:
        raise ValueError(f"s={s} does not match params with "
                         f"{params.num_scales} scales")
    if h_range is None:
        h_range = _default_h_range()
    h_min, h_max = float(h_range[0]), float(h_range[1])
    radii = make_radii(w_max, s)

    cand = list(candidates)
    features = np.zeros((len(cand), params.feature_dim))
    all_empty = np.zeros(len(cand), dtype=bool)
    if not cand:
        return features, all_empty

    positions = np.asarray([np.asarray(c[0], dtype=np.float64).reshape(3)
                            for c in cand])
    seed_feats = interpolate_features(positions, seeds)

    for qi, (position, approach, angle) in enumerate(cand):
        frame = grasp_frame(position, approach, angle)
        codes = []
        empties = []
        for si, radius in enumerate(radii):
            spec = CylinderSpec(radius=radius, h_min=h_min, h_max=h_max,
                                max_points=max_points)
            idx = cylinder_query(cloud, frame, spec)
            local = (cloud.points[idx] - frame.translation) @ frame.rotation
            code, empty = encode_group(local, params, si)
            codes.append(code)
            empties.append(empty)
        if all(empties):
            all_empty[qi] = True
            continue
        features[qi] = gated_fusion(codes, seed_feats[qi], params)
    return features, all_empty


# ---------------------------------------------------------------------------
# Analytic gradients (numerical-check mode)
# ---------------------------------------------------------------------------

def fused_with_grad(groups, seed_feature, params: EncoderParams, upstream):
    """Forward fusion for one candidate plus parameter gradients.

    groups is the list of per-scale gripper-frame point arrays (possibly
    empty).  upstream is the (C,) cotangent; the returned gradients are the
    derivatives of dot(upstream, fused) with respect to every parameter
    array, keyed like to_arrays().  Empty scales contribute constant zeros,
    hence zero gradients.
    """
    seed = np.asarray(seed_feature, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    c = params.feature_dim
    s = params.num_scales
    if len(groups) != s:
        raise ValueError(f"expected {s} groups, got {len(groups)}")
    if seed.shape != (c,) or u.shape != (c,):
        raise ValueError(f"seed feature and upstream must be ({c},)")

    # forward, keeping intermediates
    caches = []
    codes = []
    for si in range(s):
        pts = np.asarray(groups[si], dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            caches.append(None)
            codes.append(np.zeros(c))
            continue
        layers = params.scale_layers[si]
        h = pts
        pre = []   # pre-activation of each layer
        acts = [h]  # input of each layer
        for li, (w, b) in enumerate(layers):
            z = h @ w.T + b
            pre.append(z)
            if li < len(layers) - 1:
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
        argmax = np.argmax(h, axis=0)
        caches.append((pre, acts, argmax, h.shape[0]))
        codes.append(h.max(axis=0))

    gate_pre = params.gate_w @ seed + params.gate_b
    gate = _sigmoid(gate_pre)
    gated = gate * seed
    if params.fusion_mode == "concat":
        z = np.concatenate(codes + [gated])
    else:
        z = np.concatenate([np.sum(codes, axis=0), gated])
    fused = params.fuse_w @ z + params.fuse_b

    grads = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
             for k, v in params.to_arrays().items() if k != "fusion_mode"}

    # backward
    grads["fuse_w"] = np.outer(u, z)
    grads["fuse_b"] = u.copy()
    dz = params.fuse_w.T @ u
    if params.fusion_mode == "concat":
        dcodes = [dz[si * c:(si + 1) * c] for si in range(s)]
        dgated = dz[s * c:]
    else:
        dcodes = [dz[:c]] * s
        dgated = dz[c:]

    dgate = dgated * seed
    dpre = dgate * gate * (1.0 - gate)
    grads["gate_w"] = np.outer(dpre, seed)
    grads["gate_b"] = dpre

    for si in range(s):
        if caches[si] is None:
            continue
        pre, acts, argmax, n = caches[si]
        layers = params.scale_layers[si]
        dout = np.zeros((n, c))
        dout[argmax, np.arange(c)] = dcodes[si]
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            if li < len(layers) - 1:
                dout = dout * (pre[li] > 0.0)
            grads[f"scale{si}_layer{li}_w"] += dout.T @ acts[li]
            grads[f"scale{si}_layer{li}_b"] += dout.sum(axis=0)
            if li > 0:
                dout = dout @ w
    return fused, grads
