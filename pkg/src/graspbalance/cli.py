"""Command-line driver chaining the pipeline stages.

Subcommands mirror the library: gen (synthesize a labeled scene), sample
(candidate selection), group (multi-scale features), weights
(scale-frequency loss weights), mix (noisy-clean blending), eval (grasp
scoring), stats (per-scale tables), report (figures and CSV tables).

Exit codes: 0 success, 1 usage error (bad flags, out-of-range values,
unknown config keys), 2 data error (unreadable, malformed, or inconsistent
input files).  Numeric flag ranges are checked before any data file is
opened.  Randomized subcommands take a required --seed; with equal inputs
and seeds, outputs are byte-identical across runs.

Each subcommand accepts --config FILE holding "flag = value" lines; values
given on the command line win over the file.
"""

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import fileio
from .evaluation import ScaleClass, evaluate, per_scale_stats
from .mscg import EncoderParams, mscg_features
from .ncm import mix_scene, synthesize_clean_scene, visibility_filter
from .report import render_histogram, render_report
from .sampling import (SeedFeatureSet, foreground_sample, fps,
                       object_balanced_sample)
from .scale_balance import (GraspLabelSet, best_scale_per_point,
                            build_scale_histogram, sample_weight)
from .scenegen import analytic_grasps, flatten_labels, generate_scene


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit with our usage code, not argparse's default 2
    def error(self, message):
        raise _UsageError(message)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_vec3(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated reals: {text!r}")
    vec = np.array([float(p) for p in parts])
    if np.linalg.norm(vec) < 1e-9:
        raise ValueError("direction vector is degenerate")
    return vec


@dataclass(frozen=True)
class _Opt:
    """One option flag: how to parse it, its default, and its legal range."""

    flag: str
    type: Callable[[str], Any] = str
    default: Any = None
    required: bool = False
    choices: Optional[Tuple[str, ...]] = None
    check: Optional[Tuple[Callable[[Any], bool], str]] = None
    boolean: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


_CONFIG = _Opt("--config", help="key = value file merged under CLI precedence")


def _seed_opt(help_text="RNG seed; equal seeds reproduce bit-equal outputs"):
    return _Opt("--seed", type=int, required=True,
                check=(lambda v: v >= 0, "must be >= 0"), help=help_text)


_COMMANDS: Dict[str, dict] = {
    "gen": dict(
        help="synthesize a scene from a primitive spec file",
        positionals=[("spec", "scene spec JSON (list of primitives)"),
                     ("out_dir", "directory for scene files")],
        opts=[
            _seed_opt(),
            _Opt("--noise-sigma", type=float, default=0.0,
                 check=(lambda v: v >= 0.0, "must be >= 0"),
                 help="Gaussian jitter applied to the sensor cloud (m)"),
            _Opt("--dropout", type=float, default=0.0,
                 check=(lambda v: 0.0 <= v < 1.0, "must be in [0, 1)"),
                 help="fraction of points dropped per instance"),
            _Opt("--binary", boolean=True, help="write binary PLY"),
            _CONFIG,
        ]),
    "sample": dict(
        help="select candidate points from a cloud",
        positionals=[("cloud", "input PLY cloud")],
        opts=[
            _Opt("--strategy", required=True, choices=("fps", "fs", "obs"),
                 help="fps: farthest-point over all points; fs: foreground "
                      "only; obs: per-instance quotas"),
            _Opt("--m", type=int, required=True,
                 check=(lambda v: v >= 1, "must be >= 1"),
                 help="number of samples"),
            _Opt("--out", required=True, help="output index list"),
            _Opt("--start", type=int, default=0,
                 check=(lambda v: v >= 0, "must be >= 0"),
                 help="first selected index (fps strategy only)"),
            _CONFIG,
        ]),
    "group": dict(
        help="fused multi-scale features for candidate points",
        positionals=[("cloud", "input PLY cloud")],
        opts=[
            _Opt("--candidates", required=True,
                 help="index list of candidate points"),
            _Opt("--seeds", required=True,
                 help="index list of seed points"),
            _Opt("--params", required=True, help="encoder weights (.npz)"),
            _Opt("--out", required=True, help="output feature matrix"),
            _Opt("--seed-features", help="seed feature matrix; zeros when "
                                         "omitted"),
            _Opt("--empty-out", help="write indices of candidates whose "
                                     "crops were all empty"),
            _Opt("--w-max", type=float, default=0.10,
                 check=(lambda v: v > 0.0, "must be > 0"),
                 help="gripper width bound; the largest cylinder radius"),
            _Opt("--max-points", type=int, default=64,
                 check=(lambda v: v >= 1, "must be >= 1"),
                 help="point cap per cylinder crop"),
            _Opt("--approach", type=_parse_vec3, default="0,0,-1",
                 help="shared approach direction as x,y,z"),
            _Opt("--angle", type=float, default=0.0,
                 help="shared in-plane rotation (radians)"),
            _CONFIG,
        ]),
    "weights": dict(
        help="scale histogram and per-point loss weights from grasp labels",
        positionals=[("labels", "grasp label set JSON")],
        opts=[
            _Opt("--out", required=True, help="output weight list"),
            _Opt("--bins", type=int, default=10,
                 check=(lambda v: v >= 1, "must be >= 1"),
                 help="histogram bin count"),
            _Opt("--w-max", type=float, default=0.10,
                 check=(lambda v: v > 0.0, "must be > 0"),
                 help="upper edge of the width range"),
            _Opt("--histogram-out", help="also write the histogram JSON"),
            _CONFIG,
        ]),
    "mix": dict(
        help="replace noisy instances with visibility-filtered clean points",
        positionals=[("noisy", "labeled sensor cloud (PLY)"),
                     ("manifest", "asset manifest JSON")],
        opts=[
            _Opt("--replace-prob", type=float, required=True,
                 check=(lambda v: 0.0 <= v <= 1.0, "must be in [0, 1]"),
                 help="per-instance replacement probability"),
            _seed_opt(),
            _Opt("--out", required=True, help="output PLY cloud"),
            _Opt("--visibility-radius", type=float, default=0.005,
                 check=(lambda v: v > 0.0, "must be > 0"),
                 help="clean points survive within this distance of an "
                      "observed same-instance point (m)"),
            _Opt("--binary", boolean=True, help="write binary PLY"),
            _CONFIG,
        ]),
    "eval": dict(
        help="score a grasp list against scene geometry",
        positionals=[("grasps", "grasp list (text)"),
                     ("manifest", "asset manifest JSON")],
        opts=[
            _Opt("--out", required=True, help="output report JSON"),
            _Opt("--scene", help="collision cloud PLY; defaults to the "
                                 "clean scene assembled from the manifest"),
            _CONFIG,
        ]),
    "stats": dict(
        help="per-scale success table for the best grasps per object",
        positionals=[("grasps", "grasp list (text)"),
                     ("manifest", "asset manifest JSON")],
        opts=[
            _Opt("--out", help="optional output JSON"),
            _CONFIG,
        ]),
    "report": dict(
        help="render evaluation figures and CSV tables",
        positionals=[],
        opts=[
            _Opt("--eval-report", help="report JSON produced by eval"),
            _Opt("--histogram", help="histogram JSON produced by weights"),
            _Opt("--out-dir", required=True, help="directory for outputs"),
            _Opt("--stem", help="filename prefix for the rendered files"),
            _CONFIG,
        ]),
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="graspbalance",
                     description="scale-balanced grasp detection pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, spec in _COMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        for pos_name, pos_help in spec["positionals"]:
            p.add_argument(pos_name, help=pos_help)
        for opt in spec["opts"]:
            if opt.boolean:
                p.add_argument(opt.flag, dest=opt.dest, action="store_const",
                               const=True, default=None, help=opt.help)
            else:
                # parse as text; conversion happens after the config merge
                p.add_argument(opt.flag, dest=opt.dest, default=None,
                               help=opt.help, metavar=opt.dest.upper())
    return parser


def _finalize(ns: argparse.Namespace, opts: List[_Opt]) -> None:
    """Merge config values, convert, apply defaults, and range-check."""
    merged: Dict[str, str] = {}
    if ns.config is not None:
        try:
            merged = fileio.parse_config(ns.config)
        except (OSError, ValueError) as exc:
            raise _UsageError(f"config: {exc}")
    known = {opt.dest: opt for opt in opts}
    for key, value in merged.items():
        if key not in known:
            raise _UsageError(f"unknown config key {key!r}")
        if getattr(ns, key) is None:
            setattr(ns, key, value)

    for opt in opts:
        value = getattr(ns, opt.dest)
        if value is None and opt.required:
            raise _UsageError(f"{opt.flag} is required")
        if value is None:
            value = opt.default
        if isinstance(value, str):
            try:
                value = _parse_bool(value) if opt.boolean else opt.type(value)
            except ValueError as exc:
                raise _UsageError(f"{opt.flag}: {exc}")
        if opt.boolean and value is None:
            value = False
        if value is not None:
            if opt.choices is not None and value not in opt.choices:
                raise _UsageError(
                    f"{opt.flag} must be one of {', '.join(opt.choices)}")
            if opt.check is not None and not opt.check[0](value):
                raise _UsageError(f"{opt.flag} {opt.check[1]} (got {value})")
        setattr(ns, opt.dest, value)


def _note(path: str) -> None:
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_gen(ns) -> int:
    specs = fileio.read_scene_spec(ns.spec)
    noisy, assets = generate_scene(specs, noise_sigma=ns.noise_sigma,
                                   dropout=ns.dropout, seed=ns.seed)
    os.makedirs(ns.out_dir, exist_ok=True)

    scene_path = os.path.join(ns.out_dir, "scene.ply")
    fileio.write_cloud(scene_path, noisy, binary=ns.binary)
    _note(scene_path)
    clean_path = os.path.join(ns.out_dir, "clean.ply")
    fileio.write_cloud(clean_path, synthesize_clean_scene(assets),
                       binary=ns.binary)
    _note(clean_path)

    entries = {}
    for i in assets.ids():
        model_name = f"model_{i}.ply"
        model_path = os.path.join(ns.out_dir, model_name)
        fileio.write_cloud(model_path, assets.get(i).model, binary=ns.binary)
        _note(model_path)
        entries[i] = (model_name, assets.get(i).pose)
    manifest_path = os.path.join(ns.out_dir, "manifest.json")
    fileio.write_manifest(manifest_path, entries)
    _note(manifest_path)

    groups: list = []
    positions: list = []
    by_id = {s.instance_id: s for s in specs}
    for i in assets.ids():
        labels = analytic_grasps(by_id[i])
        groups.extend(labels.grasps)
        if labels.positions is not None:
            positions.extend(labels.positions)
    merged = GraspLabelSet(
        grasps=tuple(groups), w_max=0.10,
        positions=np.array(positions) if positions else None)
    labels_path = os.path.join(ns.out_dir, "labels.json")
    fileio.write_labels(labels_path, merged)
    _note(labels_path)
    grasps_path = os.path.join(ns.out_dir, "grasps.txt")
    fileio.write_grasps(grasps_path, flatten_labels(merged))
    _note(grasps_path)
    return 0


def _cmd_sample(ns) -> int:
    cloud = fileio.read_cloud(ns.cloud)
    if ns.strategy == "fps":
        idx = fps(cloud, ns.m, start=ns.start)
    elif ns.strategy == "fs":
        idx = foreground_sample(cloud, ns.m)
    else:
        idx = object_balanced_sample(cloud, ns.m)
    fileio.write_indices(ns.out, idx)
    _note(ns.out)
    return 0


def _cmd_group(ns) -> int:
    cloud = fileio.read_cloud(ns.cloud)
    cand_idx = fileio.read_indices(ns.candidates)
    seed_idx = fileio.read_indices(ns.seeds)
    for name, idx in (("candidates", cand_idx), ("seeds", seed_idx)):
        if idx.size == 0:
            raise ValueError(f"{name}: empty index list")
        if idx.min() < 0 or idx.max() >= len(cloud):
            raise ValueError(f"{name}: index out of range for a "
                             f"{len(cloud)}-point cloud")
    params = EncoderParams.load(ns.params)

    if ns.seed_features is not None:
        feats = np.loadtxt(ns.seed_features, ndmin=2)
        if feats.shape != (len(seed_idx), params.feature_dim):
            raise ValueError(
                f"seed features are {feats.shape}, expected "
                f"({len(seed_idx)}, {params.feature_dim})")
    else:
        feats = np.zeros((len(seed_idx), params.feature_dim))
    seeds = SeedFeatureSet(positions=cloud.points[seed_idx], features=feats)

    candidates = [(cloud.points[i], ns.approach, ns.angle) for i in cand_idx]
    features, all_empty = mscg_features(cloud, candidates, seeds, params,
                                        w_max=ns.w_max,
                                        max_points=ns.max_points)
    fileio.write_matrix(ns.out, features)
    _note(ns.out)
    if ns.empty_out is not None:
        fileio.write_indices(ns.empty_out, np.flatnonzero(all_empty))
        _note(ns.empty_out)
    return 0


def _cmd_weights(ns) -> int:
    labels = fileio.read_labels(ns.labels)
    scales = best_scale_per_point(labels)
    present = [s for s in scales if s is not None]
    hist = build_scale_histogram(present, t=ns.bins, w_max=ns.w_max)
    weights = [sample_weight(hist, s) for s in scales]
    fileio.write_floats(ns.out, weights)
    _note(ns.out)
    if ns.histogram_out is not None:
        fileio.write_histogram(ns.histogram_out, hist)
        _note(ns.histogram_out)
    return 0


def _cmd_mix(ns) -> int:
    noisy = fileio.read_cloud(ns.noisy)
    assets = fileio.load_assets(ns.manifest)
    clean = synthesize_clean_scene(assets)
    visible = visibility_filter(clean, noisy, r=ns.visibility_radius)
    mixed = mix_scene(noisy, visible, replace_prob=ns.replace_prob,
                      seed=ns.seed)
    fileio.write_cloud(ns.out, mixed, binary=ns.binary)
    _note(ns.out)
    return 0


def _cmd_eval(ns) -> int:
    grasps = fileio.read_grasps(ns.grasps)
    assets = fileio.load_assets(ns.manifest)
    scene = (fileio.read_cloud(ns.scene) if ns.scene is not None
             else synthesize_clean_scene(assets))
    report = evaluate(grasps, scene, assets)
    fileio.write_report(ns.out, report)
    _note(ns.out)
    print(f"AP = {report.ap:.6f}")
    return 0


def _cmd_stats(ns) -> int:
    grasps = fileio.read_grasps(ns.grasps)
    assets = fileio.load_assets(ns.manifest)
    stats = per_scale_stats(grasps, assets)
    print(f"{'scale':<8} {'count':>7} {'success_rate':>13}")
    for cls in (ScaleClass.SMALL, ScaleClass.MEDIUM, ScaleClass.LARGE):
        st = stats[cls]
        print(f"{cls.value:<8} {st.count:>7d} {st.success_rate:>13.4f}")
    if ns.out is not None:
        doc = {cls.value: {"count": st.count,
                           "success_rate": st.success_rate}
               for cls, st in stats.items()}
        fileio.write_json(ns.out, doc)
        _note(ns.out)
    return 0


def _cmd_report(ns) -> int:
    if ns.eval_report is None and ns.histogram is None:
        raise _UsageError("nothing to render: pass --eval-report and/or "
                          "--histogram")
    written: List[str] = []
    if ns.eval_report is not None:
        report = fileio.read_report(ns.eval_report)
        written += render_report(report, ns.out_dir,
                                 stem=ns.stem or "eval")
    if ns.histogram is not None:
        hist = fileio.read_histogram(ns.histogram)
        written += render_histogram(hist, ns.out_dir,
                                    stem=ns.stem or "histogram")
    for path in written:
        _note(path)
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "sample": _cmd_sample,
    "group": _cmd_group,
    "weights": _cmd_weights,
    "mix": _cmd_mix,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "report": _cmd_report,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise _UsageError("a subcommand is required")
        _finalize(ns, _COMMANDS[ns.command]["opts"])
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)

    try:
        return _HANDLERS[ns.command](ns)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
