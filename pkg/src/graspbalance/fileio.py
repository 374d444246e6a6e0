"""Serialization for clouds, grasps, labels, scenes, and reports.

Formats:

* Point clouds: PLY, ASCII or binary little-endian.  Vertex properties are
  x, y, z as doubles, optionally nx, ny, nz as doubles, optionally
  instance_id as a 32-bit int (-1 marks background).  No other elements or
  properties are accepted; the reader validates the count and rejects
  non-finite values.
* Grasp lists: plain text, one grasp per line as ten space-separated reals
  (tx ty tz  ax ay az  angle width depth score) printed with 17 significant
  digits so values survive a round trip bit-exactly.  '#' starts a comment.
* Grasp label sets, scene specs, asset manifests, histograms, and
  evaluation reports: JSON with sorted keys.
* Index lists and weight vectors: one value per line, '#' comments.
* Config files: "key = value" lines mapped onto CLI flags.
"""

import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import GraspPose, PointCloud, RigidPose
from .evaluation import EvalReport
from .ncm import InstanceAsset, SceneAssets
from .scale_balance import GraspLabelSet, ScaleHistogram
from .scenegen import PrimitiveSpec

_FLOAT_NAMES = ("double", "float64")
_INT_NAMES = ("int", "int32")


class PlyParseError(ValueError):
    """Malformed PLY input; carries the file position of the problem."""

    def __init__(self, message: str, path=None, line: Optional[int] = None,
                 offset: Optional[int] = None):
        where = []
        if path is not None:
            where.append(os.fspath(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.offset = offset


# ---------------------------------------------------------------------------
# PLY clouds
# ---------------------------------------------------------------------------

def _parse_ply_header(data: bytes, path):
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("missing end_header", path)
    header_end = data.find(b"\n", end)
    if header_end < 0:
        raise PlyParseError("header is not newline-terminated", path,
                            offset=end)
    lines = data[:header_end].decode("ascii", errors="replace").split("\n")
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)", path,
                            line=1)

    fmt = None
    count = None
    props: List[Tuple[str, str]] = []
    for ln, raw in enumerate(lines[1:], start=2):
        fields = raw.split()
        if not fields or fields[0] == "comment":
            continue
        if fields[0] == "format":
            if len(fields) != 3 or fields[2] != "1.0" or \
                    fields[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format {raw.strip()!r}",
                                    path, line=ln)
            fmt = fields[1]
        elif fields[0] == "element":
            if len(fields) != 3 or fields[1] != "vertex":
                raise PlyParseError(f"unsupported element {raw.strip()!r}",
                                    path, line=ln)
            if count is not None:
                raise PlyParseError("duplicate vertex element", path, line=ln)
            try:
                count = int(fields[2])
            except ValueError:
                count = -1
            if count < 0:
                raise PlyParseError(f"bad vertex count {fields[2]!r}", path,
                                    line=ln)
        elif fields[0] == "property":
            if len(fields) != 3:
                raise PlyParseError(f"bad property line {raw.strip()!r}",
                                    path, line=ln)
            if count is None:
                raise PlyParseError("property before element", path, line=ln)
            props.append((fields[2], fields[1]))
        elif fields[0] == "end_header":
            break
        else:
            raise PlyParseError(f"unrecognized header line {raw.strip()!r}",
                                path, line=ln)
    if fmt is None:
        raise PlyParseError("missing format line", path, line=1)
    if count is None:
        raise PlyParseError("missing vertex element", path, line=1)

    names = [n for n, _ in props]
    if names not in (["x", "y", "z"],
                     ["x", "y", "z", "nx", "ny", "nz"],
                     ["x", "y", "z", "instance_id"],
                     ["x", "y", "z", "nx", "ny", "nz", "instance_id"]):
        raise PlyParseError(f"unsupported property layout {names}", path,
                            line=len(lines))
    for name, tname in props:
        ok = _INT_NAMES if name == "instance_id" else _FLOAT_NAMES
        if tname not in ok:
            raise PlyParseError(
                f"property {name} has type {tname}, expected one of {ok}",
                path, line=len(lines))
    has_normals = "nx" in names
    has_labels = "instance_id" in names
    return fmt, count, has_normals, has_labels, header_end + 1, len(lines)


def read_cloud(path) -> PointCloud:
    """Read a PLY point cloud (ASCII or binary little-endian)."""
    data = open(os.fspath(path), "rb").read()
    fmt, count, has_normals, has_labels, body_at, header_lines = \
        _parse_ply_header(data, path)
    n_float = 6 if has_normals else 3
    body = data[body_at:]

    if fmt == "ascii":
        n_fields = n_float + (1 if has_labels else 0)
        rows = []
        row_lines = []
        for ln, raw in enumerate(body.decode("ascii", errors="replace")
                                 .split("\n"), start=header_lines + 1):
            fields = raw.split()
            if not fields:
                continue
            if len(fields) != n_fields:
                raise PlyParseError(
                    f"expected {n_fields} values, got {len(fields)}",
                    path, line=ln)
            try:
                row = [float(f) for f in fields[:n_float]]
                if has_labels:
                    row.append(int(fields[n_float]))
            except ValueError:
                raise PlyParseError(f"unparseable vertex {raw.strip()!r}",
                                    path, line=ln)
            rows.append(row)
            row_lines.append(ln)
        if len(rows) != count:
            raise PlyParseError(
                f"header declares {count} vertices, body has {len(rows)}",
                path, line=header_lines)
        table = np.array(rows, dtype=np.float64).reshape(count,
                                                         len(rows[0]) if rows
                                                         else n_fields)
        floats = table[:, :n_float]
        labels = table[:, n_float].astype(np.int32) if has_labels else None
        bad_line = row_lines
    else:
        row_size = 8 * n_float + (4 if has_labels else 0)
        expected = count * row_size
        if len(body) != expected:
            raise PlyParseError(
                f"binary body has {len(body)} bytes, expected {expected}",
                path, offset=body_at)
        dt = [(n, "<f8") for n in
              (("x", "y", "z", "nx", "ny", "nz") if has_normals
               else ("x", "y", "z"))]
        if has_labels:
            dt.append(("instance_id", "<i4"))
        rec = np.frombuffer(body, dtype=np.dtype(dt), count=count)
        floats = np.column_stack([rec[n] for n, t in dt if t == "<f8"])
        labels = rec["instance_id"].copy() if has_labels else None
        bad_line = None

    bad = ~np.isfinite(floats)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        if bad_line is not None:
            raise PlyParseError("non-finite vertex value", path,
                                line=bad_line[row])
        raise PlyParseError("non-finite vertex value", path,
                            offset=body_at + row * row_size)
    return PointCloud(points=floats[:, :3],
                      normals=floats[:, 3:6] if has_normals else None,
                      instance_labels=labels)


def write_cloud(path, cloud: PointCloud, binary: bool = False) -> None:
    """Write a PLY point cloud; normals and labels only when present."""
    names = ["x", "y", "z"]
    if cloud.has_normals:
        names += ["nx", "ny", "nz"]
    header = ["ply",
              "format binary_little_endian 1.0" if binary else
              "format ascii 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property double {n}" for n in names]
    if cloud.has_labels:
        header.append("property int instance_id")
    header.append("end_header")

    cols = [cloud.points]
    if cloud.has_normals:
        cols.append(cloud.normals)
    floats = np.hstack(cols)
    with open(os.fspath(path), "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            dt = [(n, "<f8") for n in names]
            if cloud.has_labels:
                dt.append(("instance_id", "<i4"))
            rec = np.empty(len(cloud), dtype=np.dtype(dt))
            for ci, n in enumerate(names):
                rec[n] = floats[:, ci]
            if cloud.has_labels:
                rec["instance_id"] = cloud.instance_labels
            fh.write(rec.tobytes())
        else:
            lines = []
            for ri in range(len(cloud)):
                parts = ["%.17g" % v for v in floats[ri]]
                if cloud.has_labels:
                    parts.append("%d" % cloud.instance_labels[ri])
                lines.append(" ".join(parts))
            if lines:
                fh.write(("\n".join(lines) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Grasp lists and label sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraspRecord:
    """Flat ten-field view of a GraspPose for the text format."""

    tx: float
    ty: float
    tz: float
    ax: float
    ay: float
    az: float
    angle: float
    width: float
    depth: float
    score: float

    @classmethod
    def from_grasp(cls, g: GraspPose) -> "GraspRecord":
        return cls(*g.translation, *g.approach, g.angle, g.width, g.depth,
                   g.score)

    def to_grasp(self) -> GraspPose:
        return GraspPose(translation=np.array([self.tx, self.ty, self.tz]),
                         approach=np.array([self.ax, self.ay, self.az]),
                         angle=self.angle, width=self.width,
                         depth=self.depth, score=self.score)

    def to_line(self) -> str:
        vals = (self.tx, self.ty, self.tz, self.ax, self.ay, self.az,
                self.angle, self.width, self.depth, self.score)
        return " ".join("%.17g" % v for v in vals)

    @classmethod
    def from_fields(cls, fields: Sequence[str]) -> "GraspRecord":
        if len(fields) != 10:
            raise ValueError(f"expected 10 fields, got {len(fields)}")
        return cls(*(float(f) for f in fields))


def write_grasps(path, grasps: Sequence[GraspPose]) -> None:
    with open(os.fspath(path), "w") as fh:
        fh.write("# tx ty tz ax ay az angle width depth score\n")
        for g in grasps:
            fh.write(GraspRecord.from_grasp(g).to_line() + "\n")


def read_grasps(path) -> List[GraspPose]:
    grasps = []
    with open(os.fspath(path)) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                grasps.append(GraspRecord.from_fields(line.split()).to_grasp())
            except ValueError as exc:
                raise ValueError(f"{os.fspath(path)}: line {ln}: {exc}")
    return grasps


def _grasp_fields(g: GraspPose) -> List[float]:
    return [float(v) for v in (*g.translation, *g.approach, g.angle,
                               g.width, g.depth, g.score)]


def write_labels(path, labels: GraspLabelSet) -> None:
    points = []
    for pi, group in enumerate(labels.grasps):
        pos = None
        if labels.positions is not None:
            pos = [float(v) for v in labels.positions[pi]]
        points.append({"position": pos,
                       "grasps": [_grasp_fields(g) for g in group]})
    write_json(path, {"w_max": labels.w_max, "points": points})


def read_labels(path) -> GraspLabelSet:
    doc = _load_json(path)
    groups = []
    positions = []
    have_pos = True
    for rec in doc["points"]:
        group = []
        for row in rec["grasps"]:
            if len(row) != 10:
                raise ValueError(f"grasp rows take 10 reals, got {len(row)}")
            group.append(GraspRecord(*(float(v) for v in row)).to_grasp())
        groups.append(tuple(group))
        pos = rec.get("position")
        if pos is None:
            have_pos = False
        else:
            positions.append(pos)
    return GraspLabelSet(
        grasps=tuple(groups), w_max=float(doc["w_max"]),
        positions=np.array(positions) if have_pos and positions else None)


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    with open(os.fspath(path), "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    with open(os.fspath(path)) as fh:
        return json.load(fh)


def write_histogram(path, hist: ScaleHistogram) -> None:
    write_json(path, hist.to_dict())


def read_histogram(path) -> ScaleHistogram:
    return ScaleHistogram.from_dict(_load_json(path))


def write_report(path, report: EvalReport) -> None:
    write_json(path, report.to_dict())


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(_load_json(path))


def _pose_record(pose: RigidPose) -> Dict[str, list]:
    return {"rotation": [float(v) for v in pose.rotation.reshape(-1)],
            "translation": [float(v) for v in pose.translation]}


def _pose_from_record(rec) -> RigidPose:
    rot = np.array(rec.get("rotation",
                           [1, 0, 0, 0, 1, 0, 0, 0, 1]),
                   dtype=np.float64).reshape(3, 3)
    return RigidPose(rotation=rot,
                     translation=np.array(rec.get("translation", [0, 0, 0]),
                                          dtype=np.float64))


def write_manifest(path, entries: Dict[int, Tuple[str, RigidPose]]) -> None:
    """Asset manifest: instance id -> model file path + world pose."""
    doc = {str(i): {"model": model, **_pose_record(pose)}
           for i, (model, pose) in entries.items()}
    write_json(path, doc)


def read_manifest(path) -> Dict[int, Tuple[str, RigidPose]]:
    doc = _load_json(path)
    out = {}
    for key, rec in doc.items():
        out[int(key)] = (rec["model"], _pose_from_record(rec))
    return out


def load_assets(path) -> SceneAssets:
    """Read a manifest and the model clouds it references.

    Relative model paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.fspath(path))
    entries = read_manifest(path)
    assets = []
    for i in sorted(entries):
        model_path, pose = entries[i]
        if not os.path.isabs(model_path):
            model_path = os.path.join(base, model_path)
        assets.append(InstanceAsset(instance_id=i,
                                    model=read_cloud(model_path), pose=pose))
    return SceneAssets(assets=tuple(assets))


def write_scene_spec(path, specs: Sequence[PrimitiveSpec]) -> None:
    recs = []
    for s in specs:
        recs.append({"kind": s.kind,
                     "dimensions": [float(d) for d in s.dimensions],
                     "surface_density": s.surface_density,
                     "instance_id": s.instance_id,
                     **_pose_record(s.pose)})
    write_json(path, recs)


def read_scene_spec(path) -> List[PrimitiveSpec]:
    doc = _load_json(path)
    if not isinstance(doc, list):
        raise ValueError(f"{os.fspath(path)}: scene spec must be a JSON list")
    specs = []
    for rec in doc:
        specs.append(PrimitiveSpec(kind=rec["kind"],
                                   dimensions=tuple(rec["dimensions"]),
                                   surface_density=rec["surface_density"],
                                   pose=_pose_from_record(rec),
                                   instance_id=rec["instance_id"]))
    return specs


# ---------------------------------------------------------------------------
# Small line-oriented files
# ---------------------------------------------------------------------------

def write_indices(path, indices) -> None:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    with open(os.fspath(path), "w") as fh:
        for v in idx:
            fh.write("%d\n" % v)


def read_indices(path) -> np.ndarray:
    vals = []
    with open(os.fspath(path)) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals.append(int(line))
            except ValueError:
                raise ValueError(
                    f"{os.fspath(path)}: line {ln}: not an index: {line!r}")
    return np.array(vals, dtype=np.int64)


def write_floats(path, values) -> None:
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    with open(os.fspath(path), "w") as fh:
        for v in vals:
            fh.write("%.17g\n" % v)


def write_matrix(path, matrix) -> None:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("matrix must be 2-D")
    with open(os.fspath(path), "w") as fh:
        for row in arr:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def parse_config(path) -> Dict[str, str]:
    """Key-value config: one "flag = value" per line, '#' for comments.

    Keys are normalized to use underscores so "replace-prob" and
    "replace_prob" mean the same flag.
    """
    out: Dict[str, str] = {}
    with open(os.fspath(path)) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(
                    f"{os.fspath(path)}: line {ln}: expected key = value")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out
