"""Acceptance gate.

Each criterion below prints a single [PASS]/[FAIL] line with its runtime so
the whole gate can be read off a terminal at a glance.  Every criterion also
enforces its own time budget; blowing the budget fails the criterion.
"""

import hashlib
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from graspbalance import (EncoderParams, GraspPose, InstanceAsset, PointCloud,
                          PrimitiveSpec, RigidPose, SceneAssets,
                          ScaleClass, ScaleHistogram, SeedFeatureSet,
                          analytic_grasps, ap_mu, closure_cosine,
                          cylinder_query, CylinderSpec, encode_group,
                          evaluate, flatten_labels, foreground_sample, fps,
                          frame_of_grasp, fused_with_grad, generate_scene,
                          grasp_success, make_radii, mix_scene, mscg_features,
                          object_balanced_sample, sample_weight,
                          synthesize_clean_scene, visibility_filter,
                          weighted_loss)
from graspbalance.cli import cli_main
from graspbalance.fileio import write_scene_spec
from graspbalance.evaluation import MU_GRID
from graspbalance.mscg import _sigmoid
from oracles import (ap_mu_oracle, cylinder_filter_oracle, fps_oracle,
                     obs_count_oracle, visibility_oracle)

DOWN = np.array([0.0, 0.0, -1.0])


def _emit(capsys, num, desc, t0, failed):
    elapsed = time.perf_counter() - t0
    tag = "FAIL" if failed else "PASS"
    with capsys.disabled():
        print(f"[{tag}] criterion {num:2d}: {desc} ({elapsed:.2f}s)")


def _grasp(width=0.04, depth=0.02, score=1.0, translation=(0.0, 0.0, 0.0),
           approach=DOWN, angle=0.0):
    return GraspPose(translation=np.asarray(translation, dtype=float),
                     approach=approach, angle=angle, width=width,
                     depth=depth, score=score)


def _contact_cloud(g, ny_values):
    frame = frame_of_grasp(g)
    locals_ = np.array([[0.0, 0.004 * i - 0.012, 0.0]
                        for i in range(len(ny_values))])
    normals = np.array([[0.0, ny, math.sqrt(max(0.0, 1.0 - ny * ny))]
                        for ny in ny_values])
    return PointCloud(points=frame.apply(locals_),
                      normals=frame.apply_to_vectors(normals))


# ---------------------------------------------------------------------------

def test_criterion_01_frequency_weights(capsys):
    t0, failed = time.perf_counter(), True
    try:
        counts = np.zeros(10)
        counts[0], counts[1], counts[2] = math.e ** 2, math.e, 1.0
        h = ScaleHistogram(t=10, w_max=0.10, counts=counts)
        assert sample_weight(h, 0.005) == 1.0
        assert abs(sample_weight(h, 0.015) - 2.0) < 1e-12
        assert abs(sample_weight(h, 0.025) - 3.0) < 1e-12
        for c in ([1.0] * 10, np.arange(1.0, 11.0), counts):
            hh = ScaleHistogram(t=10, w_max=0.10, counts=np.asarray(c, float))
            assert sample_weight(hh, None) == 1.0
        assert time.perf_counter() - t0 < 1.0
        failed = False
    finally:
        _emit(capsys, 1, "frequency weights hit exact log ratios", t0, failed)


def test_criterion_02_weighted_loss(capsys):
    t0, failed = time.perf_counter(), True
    try:
        rng = np.random.default_rng(100)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            a = rng.uniform(0, 2, n)
            r = rng.uniform(0, 2, n)
            w = rng.uniform(1, 4, n)
            alpha = float(rng.uniform(0, 3))
            want = math.fsum(w[i] * (a[i] + alpha * r[i])
                             for i in range(n)) / n
            assert abs(weighted_loss(a, r, w, alpha=alpha) - want) < 1e-12
        a = np.array([1.0, 2.0, 3.0])
        r = np.array([0.5, 0.5, 0.5])
        w = np.array([2.0, 1.0, 3.0])
        assert weighted_loss(a, r, w, alpha=0.0) == np.mean(w * a)
        assert abs(weighted_loss(a, r, np.ones(3)) - np.mean(a + r)) < 1e-12
        assert time.perf_counter() - t0 < 1.0
        failed = False
    finally:
        _emit(capsys, 2, "weighted loss matches direct substitution",
              t0, failed)


def test_criterion_03_sampling_oracles(capsys):
    t0, failed = time.perf_counter(), True
    try:
        rng = np.random.default_rng(101)
        for trial in range(200):
            n = int(rng.integers(2, 257))
            if trial % 3 == 0:
                pts = rng.integers(0, 4, size=(n, 3)).astype(np.float64)
            else:
                pts = rng.uniform(-1, 1, (n, 3))
            cloud = PointCloud(points=pts)
            m = int(rng.integers(1, min(n, 64) + 1))
            assert list(fps(cloud, m)) == fps_oracle(pts, m)

        for _ in range(100):
            n = int(rng.integers(10, 150))
            labels = rng.integers(0, int(rng.integers(1, 6)), n)
            labels[rng.uniform(size=n) < 0.2] = -1
            if not (labels >= 0).any():
                labels[0] = 0
            cloud = PointCloud(points=rng.uniform(-1, 1, (n, 3)),
                               instance_labels=labels)
            fg = int((labels != -1).sum())
            m = int(rng.integers(1, fg + 1))
            idx = object_balanced_sample(cloud, m)
            want = obs_count_oracle(labels, m)
            got = {int(i): int((labels[idx] == i).sum())
                   for i in np.unique(labels[idx])}
            assert got == {i: c for i, c in want.items() if c > 0}

        for _ in range(20):
            n = 60
            labels = np.where(rng.uniform(size=n) < 0.3, -1, 0)
            labels[0] = 0
            cloud = PointCloud(points=rng.uniform(-1, 1, (n, 3)),
                               instance_labels=labels)
            m = int(rng.integers(1, (labels == 0).sum() + 1))
            assert np.array_equal(object_balanced_sample(cloud, m),
                                  foreground_sample(cloud, m))
        assert time.perf_counter() - t0 < 30.0
        failed = False
    finally:
        _emit(capsys, 3, "point sampling matches brute-force oracles",
              t0, failed)


def test_criterion_04_cylinder_crops(capsys):
    t0, failed = time.perf_counter(), True
    try:
        rng = np.random.default_rng(102)
        for _ in range(200):
            cloud = PointCloud(points=rng.uniform(-0.3, 0.3, (120, 3)))
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            ang = float(rng.uniform(-np.pi, np.pi))
            c, s = math.cos(ang), math.sin(ang)
            k = np.array([[0, -axis[2], axis[1]],
                          [axis[2], 0, -axis[0]],
                          [-axis[1], axis[0], 0]])
            rot = np.eye(3) + s * k + (1 - c) * (k @ k)
            frame = RigidPose(rotation=rot,
                              translation=rng.uniform(-0.2, 0.2, 3))
            spec = CylinderSpec(radius=float(rng.uniform(0.05, 0.2)),
                                h_min=float(rng.uniform(-0.15, -0.01)),
                                h_max=float(rng.uniform(0.0, 0.15)),
                                max_points=10_000)
            got = cylinder_query(cloud, frame, spec)
            want = cylinder_filter_oracle(cloud.points, frame.rotation,
                                          frame.translation, spec.radius,
                                          spec.h_min, spec.h_max)
            assert list(got) == want

        cloud = PointCloud(points=rng.uniform(-0.2, 0.2, (300, 3)))
        prev: set = set()
        for radius in make_radii(0.10, 5):
            spec = CylinderSpec(radius=float(radius), h_min=-0.05,
                                h_max=0.05, max_points=10_000)
            idx = set(cylinder_query(cloud, RigidPose.identity(),
                                     spec).tolist())
            assert prev <= idx
            prev = idx
        assert time.perf_counter() - t0 < 10.0
        failed = False
    finally:
        _emit(capsys, 4, "cylinder crops match the inequality filter",
              t0, failed)


def test_criterion_05_encoder_and_gradients(capsys):
    t0, failed = time.perf_counter(), True
    try:
        rng = np.random.default_rng(103)

        # permutation invariance, bit for bit
        params = EncoderParams.seeded(num_scales=2, layer_dims=(3, 5, 5),
                                      seed=2)
        cloud = PointCloud(points=rng.uniform(-0.08, 0.08, (200, 3)))
        cands = [(rng.uniform(-0.05, 0.05, 3), DOWN, 0.0) for _ in range(6)]
        seeds = SeedFeatureSet(positions=rng.uniform(-0.08, 0.08, (5, 3)),
                               features=rng.normal(size=(5, 5)))
        feats, empty = mscg_features(cloud, cands, seeds, params,
                                     max_points=10_000)
        perm = rng.permutation(len(cloud))
        feats2, empty2 = mscg_features(PointCloud(points=cloud.points[perm]),
                                       cands, seeds, params,
                                       max_points=10_000)
        assert np.array_equal(feats, feats2)
        assert np.array_equal(empty, empty2)

        # max pooling makes duplication a no-op
        for _ in range(10):
            g = rng.uniform(-0.05, 0.05, (int(rng.integers(1, 8)), 3))
            doubled = np.vstack([g, g])
            assert np.array_equal(encode_group(g, params, 0)[0],
                                  encode_group(doubled, params, 0)[0])

        # logistic gate stays strictly inside (0, 1)
        for _ in range(50):
            seed_vec = rng.normal(size=5) * float(rng.uniform(0.5, 4.0))
            z = params.gate_w @ seed_vec + params.gate_b
            gate = _sigmoid(z)
            assert np.all(gate > 0.0) and np.all(gate < 1.0)

        # analytic gradients against central differences
        h = 1e-6
        for trial in range(20):
            p = EncoderParams.seeded(num_scales=2, layer_dims=(3, 5, 5),
                                     seed=200 + trial)
            groups = [rng.uniform(-0.05, 0.05,
                                  (int(rng.integers(1, 6)), 3))
                      for _ in range(2)]
            seed_vec = rng.normal(size=5)
            upstream = rng.normal(size=5)
            _, grads = fused_with_grad(groups, seed_vec, p, upstream)
            base_arrays = p.to_arrays()

            def scalar_at(arrays):
                q = EncoderParams.from_arrays(arrays)
                f, _ = fused_with_grad(groups, seed_vec, q, upstream)
                return float(upstream @ f)

            for key, grad in grads.items():
                base = base_arrays[key].astype(np.float64)
                flat = grad.reshape(-1)
                for pos in range(flat.size):
                    bump = np.zeros(base.size)
                    bump[pos] = h
                    plus = dict(base_arrays)
                    plus[key] = (base.reshape(-1) + bump).reshape(base.shape)
                    minus = dict(base_arrays)
                    minus[key] = (base.reshape(-1) - bump).reshape(base.shape)
                    fd = (scalar_at(plus) - scalar_at(minus)) / (2.0 * h)
                    assert abs(fd - flat[pos]) <= 1e-4 * (1.0 + abs(flat[pos]))
        assert time.perf_counter() - t0 < 30.0
        failed = False
    finally:
        _emit(capsys, 5, "encoder invariances and analytic gradients",
              t0, failed)


def test_criterion_06_scene_mixing(capsys):
    t0, failed = time.perf_counter(), True
    try:
        rng = np.random.default_rng(104)

        def _assets():
            rows = []
            for i, off in enumerate((0.0, 0.3, 0.6)):
                n = int(rng.integers(20, 50))
                v = rng.normal(size=(n, 3))
                model = PointCloud(
                    points=rng.uniform(-0.05, 0.05, (n, 3)),
                    normals=v / np.linalg.norm(v, axis=1, keepdims=True))
                pose = RigidPose(rotation=np.eye(3),
                                 translation=np.array([off, 0.0, 0.0]))
                rows.append(InstanceAsset(instance_id=i, model=model,
                                          pose=pose))
            return SceneAssets(assets=tuple(rows))

        clean = synthesize_clean_scene(_assets())
        noisy = PointCloud(points=clean.points + rng.normal(0, 2e-3,
                                                            clean.points.shape),
                           normals=clean.normals,
                           instance_labels=clean.instance_labels)
        visible = visibility_filter(clean, noisy, r=0.02)

        kept = mix_scene(noisy, visible, replace_prob=0.0, seed=5)
        assert np.array_equal(kept.points, noisy.points)
        assert np.array_equal(kept.instance_labels, noisy.instance_labels)
        assert np.array_equal(kept.normals, noisy.normals)

        swapped = mix_scene(noisy, visible, replace_prob=1.0, seed=5)
        for i in np.unique(visible.instance_labels):
            assert np.array_equal(
                swapped.points[swapped.instance_labels == i],
                visible.points[visible.instance_labels == i])

        for _ in range(50):
            n_c, n_n = int(rng.integers(20, 80)), int(rng.integers(20, 80))
            c = PointCloud(points=rng.uniform(-0.1, 0.1, (n_c, 3)),
                           instance_labels=rng.integers(0, 3, n_c))
            nn = PointCloud(points=rng.uniform(-0.1, 0.1, (n_n, 3)),
                            instance_labels=rng.integers(-1, 3, n_n))
            r = float(rng.uniform(0.01, 0.08))
            got = visibility_filter(c, nn, r=r)
            want = visibility_oracle(c.points, c.instance_labels,
                                     nn.points, nn.instance_labels, r)
            assert np.array_equal(got.points, c.points[want])

        for seed in range(10):
            mixed = mix_scene(noisy, visible, replace_prob=0.5, seed=seed)
            assert np.array_equal(np.unique(mixed.instance_labels),
                                  np.unique(noisy.instance_labels))
        assert time.perf_counter() - t0 < 20.0
        failed = False
    finally:
        _emit(capsys, 6, "scene mixing endpoints and visibility oracle",
              t0, failed)


def test_criterion_07_evaluation_metrics(capsys):
    t0, failed = time.perf_counter(), True
    try:
        results = [True] * 25 + [False] * 25
        want = Fraction(0)
        for k in range(1, 51):
            want += Fraction(min(k, 25), k)
        want /= 50
        assert abs(ap_mu(results) - float(want)) < 1e-12
        assert abs(ap_mu(results) - ap_mu_oracle(results)) < 1e-15

        # a scene whose analytic labels all succeed: AP and the populated
        # per-scale APs must come out exactly 1.0
        def _slab(i, width, y):
            pose = RigidPose(rotation=np.eye(3),
                             translation=np.array([0.0, y, 0.0]))
            return PrimitiveSpec(kind="box", dimensions=(width, 0.15, 0.2),
                                 surface_density=3e5, pose=pose,
                                 instance_id=i)

        specs = [_slab(0, 0.03, -0.6), _slab(1, 0.03, -0.2),
                 _slab(2, 0.05, 0.2), _slab(3, 0.05, 0.6)]
        _, assets = generate_scene(specs, seed=7)
        scene = synthesize_clean_scene(assets)
        grasps = [g for spec in specs
                  for g in flatten_labels(analytic_grasps(spec))]
        assert len(grasps) == 112
        report = evaluate(grasps, scene, assets)
        assert report.ap == 1.0
        assert report.ap_by_scale[ScaleClass.SMALL] == 1.0
        assert report.ap_by_scale[ScaleClass.MEDIUM] == 1.0
        assert report.ap_by_scale[ScaleClass.LARGE] == 0.0  # no large grasps
        st = report.per_scale_stats
        assert (st[ScaleClass.SMALL].count,
                st[ScaleClass.SMALL].success_rate) == (20, 1.0)
        assert (st[ScaleClass.MEDIUM].count,
                st[ScaleClass.MEDIUM].success_rate) == (20, 1.0)
        assert (st[ScaleClass.LARGE].count,
                st[ScaleClass.LARGE].success_rate) == (0, 0.0)

        rng = np.random.default_rng(105)
        for _ in range(50):
            pts = rng.uniform(-0.03, 0.03, (60, 3))
            v = rng.normal(size=(60, 3))
            model = PointCloud(points=pts,
                               normals=v / np.linalg.norm(v, axis=1,
                                                          keepdims=True))
            blob = SceneAssets(assets=(InstanceAsset(
                instance_id=0, model=model, pose=RigidPose.identity()),))
            gs = [_grasp(width=float(rng.uniform(0.01, 0.09)),
                         translation=rng.uniform(-0.02, 0.02, 3),
                         angle=float(rng.uniform(-np.pi, np.pi)),
                         score=float(rng.uniform(0.1, 1.0)))
                  for _ in range(12)]
            rep = evaluate(gs, PointCloud(points=pts), blob)
            aps = [rep.ap_by_mu[mu] for mu in MU_GRID]
            assert all(a <= b + 1e-15 for a, b in zip(aps, aps[1:]))
        assert time.perf_counter() - t0 < 30.0
        failed = False
    finally:
        _emit(capsys, 7, "ranking metrics and scale-split evaluation",
              t0, failed)


def test_criterion_08_closure_thresholds(capsys):
    t0, failed = time.perf_counter(), True
    try:
        g = _grasp()
        plates = _contact_cloud(g, [1.0, -1.0])
        assert closure_cosine(g, plates) == pytest.approx(1.0, abs=1e-12)
        assert grasp_success(g, plates, mu=0.2)

        s = 1.0 / np.sqrt(2.0)
        tilted = _contact_cloud(g, [s, -s])
        outcomes = [grasp_success(g, tilted, mu=mu) for mu in MU_GRID]
        assert outcomes == [False, False, False, False, True, True]

        rng = np.random.default_rng(106)
        for _ in range(100):
            ny = rng.uniform(-1.0, 1.0, size=int(rng.integers(1, 8)))
            obj = _contact_cloud(g, ny)
            grid = [grasp_success(g, obj, mu=mu) for mu in MU_GRID]
            assert grid == sorted(grid)
        assert time.perf_counter() - t0 < 10.0
        failed = False
    finally:
        _emit(capsys, 8, "antipodal closure thresholds", t0, failed)


def test_criterion_09_balanced_sampling_in_clutter(capsys):
    t0, failed = time.perf_counter(), True
    try:
        specs = [PrimitiveSpec(kind="box", dimensions=(0.08, 0.25, 0.12),
                               surface_density=3e5,
                               pose=RigidPose.identity(), instance_id=0),
                 PrimitiveSpec(kind="cylinder", dimensions=(0.03, 0.12),
                               surface_density=3e5,
                               pose=RigidPose(rotation=np.eye(3),
                                              translation=np.array(
                                                  [0.3, 0.0, 0.0])),
                               instance_id=1)]
        for k in range(6):
            pose = RigidPose(rotation=np.eye(3),
                             translation=np.array([-0.3 + 0.12 * k,
                                                   0.3, 0.0]))
            specs.append(PrimitiveSpec(kind="plate",
                                       dimensions=(0.035, 0.03, 0.002),
                                       surface_density=3e5, pose=pose,
                                       instance_id=2 + k))
        noisy, _ = generate_scene(specs, noise_sigma=5e-4, dropout=0.05,
                                  seed=42)
        plate_ids = set(range(2, 8))

        obs_idx = object_balanced_sample(noisy, 1024)
        obs_on_plates = sum(int(noisy.instance_labels[i]) in plate_ids
                            for i in obs_idx)
        fps_idx = fps(noisy, 1024)
        fps_on_plates = sum(int(noisy.instance_labels[i]) in plate_ids
                            for i in fps_idx)
        assert fps_on_plates > 0
        assert obs_on_plates >= 3 * fps_on_plates
        assert time.perf_counter() - t0 < 60.0
        failed = False
    finally:
        _emit(capsys, 9, "balanced sampling favors thin objects in clutter",
              t0, failed)


def test_criterion_10_pipeline_reproducibility(capsys, tmp_path):
    t0, failed = time.perf_counter(), True
    try:
        pose_b = RigidPose(rotation=np.eye(3),
                           translation=np.array([0.25, 0.0, 0.0]))
        pose_c = RigidPose(rotation=np.eye(3),
                           translation=np.array([0.0, 0.25, 0.0]))
        specs = [PrimitiveSpec(kind="box", dimensions=(0.04, 0.05, 0.06),
                               surface_density=1e5,
                               pose=RigidPose.identity(), instance_id=0),
                 PrimitiveSpec(kind="box", dimensions=(0.03, 0.06, 0.09),
                               surface_density=1e5, pose=pose_b,
                               instance_id=1),
                 PrimitiveSpec(kind="cylinder", dimensions=(0.02, 0.08),
                               surface_density=1e5, pose=pose_c,
                               instance_id=2)]
        spec_path = tmp_path / "spec.json"
        write_scene_spec(spec_path, specs)
        params_path = tmp_path / "enc.npz"
        EncoderParams.seeded(num_scales=2, layer_dims=(3, 8, 8),
                             seed=7).save(params_path)

        def run(root):
            root.mkdir()
            scene = root / "scene"
            assert cli_main(["gen", str(spec_path), str(scene),
                             "--seed", "3", "--noise-sigma", "5e-4",
                             "--dropout", "0.1"]) == 0
            cands = root / "cands.txt"
            assert cli_main(["sample", str(scene / "scene.ply"),
                             "--strategy", "obs", "--m", "64",
                             "--out", str(cands)]) == 0
            seeds = root / "seeds.txt"
            assert cli_main(["sample", str(scene / "scene.ply"),
                             "--strategy", "fps", "--m", "8",
                             "--out", str(seeds)]) == 0
            assert cli_main(["group", str(scene / "scene.ply"),
                             "--candidates", str(cands),
                             "--seeds", str(seeds),
                             "--params", str(params_path),
                             "--out", str(root / "features.txt"),
                             "--empty-out", str(root / "empty.txt")]) == 0
            assert cli_main(["weights", str(scene / "labels.json"),
                             "--out", str(root / "weights.txt"),
                             "--histogram-out", str(root / "hist.json")]) == 0
            assert cli_main(["mix", str(scene / "scene.ply"),
                             str(scene / "manifest.json"),
                             "--replace-prob", "0.5", "--seed", "9",
                             "--out", str(root / "mixed.ply")]) == 0
            assert cli_main(["eval", str(scene / "grasps.txt"),
                             str(scene / "manifest.json"),
                             "--out", str(root / "report.json")]) == 0
            assert cli_main(["stats", str(scene / "grasps.txt"),
                             str(scene / "manifest.json"),
                             "--out", str(root / "stats.json")]) == 0
            assert cli_main(["report",
                             "--eval-report", str(root / "report.json"),
                             "--histogram", str(root / "hist.json"),
                             "--out-dir", str(root / "figs")]) == 0

        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        run(dir_a)
        run(dir_b)
        capsys.readouterr()

        files_a = sorted(p.relative_to(dir_a)
                         for p in dir_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(dir_b)
                         for p in dir_b.rglob("*") if p.is_file())
        assert files_a == files_b and len(files_a) >= 16
        for rel in files_a:
            ha = hashlib.sha256((dir_a / rel).read_bytes()).hexdigest()
            hb = hashlib.sha256((dir_b / rel).read_bytes()).hexdigest()
            assert ha == hb, f"pipeline output differs: {rel}"
        assert time.perf_counter() - t0 < 60.0
        failed = False
    finally:
        _emit(capsys, 10, "command pipeline is bit-reproducible", t0, failed)
