"""End-to-end acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary lists a
PASS/FAIL line for each criterion.
"""
import json
import struct
import time

import numpy as np
import pytest

from crowdloc.augment import crop_map, patch_count, split_quarters
from crowdloc.cli import main
from crowdloc.evaluate import match_and_ap, match_one
from crowdloc.grid import AnnotationSet, DensityMap, integral_count, save_annotations, write_density_map
from crowdloc.groundtruth import SceneConfig, SigmaPolicy, generate_density_map, synth_scene
from crowdloc.localize import (
    DbscanParams,
    KMeansParams,
    WeightedPointSet,
    dbscan,
    fit_kmeans,
    global_cluster_count,
    isolated_kmeans,
    localize_kmeans,
)
from crowdloc.losses import (
    CurriculumSchedule,
    attention_loss,
    curriculum_weights,
    msdlc_loss,
    mse_loss,
    sal_loss,
    ssim_loss,
    total_loss,
    weighted_mse_loss,
)

import oracles


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def random_wps(rng, n, span, max_w):
    flat = rng.choice(span * span, size=n, replace=False)
    return WeightedPointSet(flat % span, flat // span, rng.integers(1, max_w + 1, n))


@criterion(1, "count conservation of generated density maps")
def test_ac1_count_conservation():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    for _ in range(200):
        w, h = int(rng.integers(64, 1025)), int(rng.integers(64, 769))
        n = int(rng.integers(1, 501))
        pts = rng.uniform(0, 1, (n, 2)) * [w, h]
        pts = np.minimum(pts, np.nextafter([w, h], 0))
        dmap = generate_density_map(AnnotationSet(w, h, pts))
        assert abs(integral_count(dmap) - n) <= n * 1e-6 + 1e-9
    assert time.perf_counter() - start < 60


@criterion(2, "loss identities")
def test_ac2_loss_identities():
    rng = np.random.default_rng(102)
    for _ in range(100):
        h, w = int(rng.integers(11, 40)), int(rng.integers(11, 40))
        a = rng.random((h, w)) * rng.uniform(0.01, 5)
        b = rng.random((h, w)) * rng.uniform(0.01, 5)
        att_gt = (rng.random((h, w)) < 0.4).astype(float)
        att_pred = rng.uniform(0.01, 0.99, (h, w))

        pairs = {
            "mse": lambda p, g: mse_loss([p], [g]),
            "sal_avg": lambda p, g: sal_loss(p, g, 3, "avg"),
            "sal_max": lambda p, g: sal_loss(p, g, 3, "max"),
            "msdlc": msdlc_loss,
            "ssim": ssim_loss,
        }
        for name, fn in pairs.items():
            assert fn(a, b) >= 0, name
            assert fn(a, a) <= 1e-9, name
        assert attention_loss(att_pred, att_gt) >= 0
        assert attention_loss(att_gt, att_gt) <= 1e-9
        assert total_loss(a, b, att_pred, att_gt) >= 0
        assert total_loss(a, a, att_gt, att_gt) <= 1e-9

        assert msdlc_loss(a, b, sizes=[1]) == pytest.approx(abs(a.mean() - b.mean()), rel=1e-12, abs=1e-15)
        assert weighted_mse_loss([a], [b], [np.ones((h, w))]) == mse_loss([a], [b])


@criterion(3, "SSIM matches the sliding-window oracle")
def test_ac3_ssim_oracle():
    rng = np.random.default_rng(103)
    for _ in range(50):
        p, g = rng.random((16, 16)), rng.random((16, 16))
        assert abs(ssim_loss(p, g) - oracles.ssim_loss_brute(p, g)) <= 1e-9


def _canon(pts, labels):
    groups = {}
    for x, y, lab in zip(pts.xs, pts.ys, labels):
        groups.setdefault(int(lab), set()).add((int(x), int(y)))
    return {frozenset(g) for g in groups.values()}


@criterion(4, "DBSCAN matches the reachability-closure oracle")
def test_ac4_dbscan_oracle():
    rng = np.random.default_rng(104)
    for _ in range(100):
        n = int(rng.integers(1, 201))
        pts = random_wps(rng, n, span=int(rng.integers(15, 60)), max_w=int(rng.integers(1, 10)))
        eps = float(rng.choice([1.0, 1.5, 2.5, 3.0, 5.0]))
        min_w = int(rng.integers(1, 20))
        part = dbscan(pts, DbscanParams(eps, min_w))
        assert _canon(pts, part.labels) == oracles.dbscan_brute(pts.xs, pts.ys, pts.weights, eps, min_w)


@criterion(5, "KMeans descent, determinism and near-optimality")
def test_ac5_kmeans_contracts():
    rng = np.random.default_rng(105)
    good = 0
    for run in range(100):
        n = int(rng.integers(4, 16))
        K = int(rng.integers(1, 4))
        pts = random_wps(rng, n, span=40, max_w=8)
        params = KMeansParams(seed=run)
        a = fit_kmeans(pts, K, params)
        b = fit_kmeans(pts, K, params)
        assert a.centers.tobytes() == b.centers.tobytes()
        assert all(nxt <= prev for prev, nxt in zip(a.wcss_history, a.wcss_history[1:]))
        best = oracles.exhaustive_wcss(pts.coords, pts.weights, K)
        good += a.wcss <= 1.05 * best + 1e-9
    assert good >= 95, f"{good}/100 runs within 5% of optimum"


@criterion(6, "isolated KMeans returns exactly K centers")
def test_ac6_exact_k():
    for seed in range(100):
        cfg = SceneConfig(
            width=96, height=72, head_count_range=(1, 60),
            placement="mixture" if seed % 2 else "uniform",
            noise_sigma=0.2 if seed % 4 >= 2 else 0.0, noise_relative=True, seed=seed,
        )
        _, _, noisy = synth_scene(cfg)
        K = global_cluster_count(noisy)
        res = isolated_kmeans(noisy, kp=KMeansParams(seed=seed))
        assert res.K == K
        if K:
            assert sum(res.partition.region_counts) == K


@criterion(7, "isolated KMeans beats plain KMeans at AP@20")
def test_ac7_isolated_beats_kmeans():
    start = time.perf_counter()
    iso_aps, km_aps = [], []
    for seed in range(100):
        cfg = SceneConfig(
            width=256, height=256, head_count_range=(50, 300),
            placement="mixture" if seed % 2 else "uniform",
            noise_sigma=2e-4, seed=seed, sigma=SigmaPolicy.fixed(3.0),
        )
        ann, _, noisy = synth_scene(cfg)
        kp = KMeansParams(seed=seed)
        iso_aps.append(match_one(isolated_kmeans(noisy, kp=kp).centers, ann.points, 20).ap)
        km_aps.append(match_one(localize_kmeans(noisy, kp=kp).centers, ann.points, 20).ap)
    iso, km = np.array(iso_aps), np.array(km_aps)
    wins = int((iso > km).sum())
    print(f"mean AP@20 isolated {iso.mean():.4f} kmeans {km.mean():.4f}, isolated wins {wins}/100")
    assert iso.mean() >= km.mean()
    assert wins >= 70
    assert time.perf_counter() - start < 300


@criterion(8, "AP sanity")
def test_ac8_ap_sanity():
    rng = np.random.default_rng(108)
    gt = rng.uniform(0, 300, (40, 2))
    centers = np.column_stack([gt, rng.integers(1, 9, 40)])
    reports = match_and_ap(centers, AnnotationSet(300, 300, gt))
    assert {d: r.ap for d, r in reports.items()} == {10: 1.0, 20: 1.0, 40: 1.0}

    two = np.array([[0.0, 0.0], [100.0, 100.0]])
    ranked = np.array([[0, 0, 5.0], [100, 100, 3.0], [50, 50, 1.0]])
    assert match_one(ranked, two, 10).ap == 1.0
    decoy_first = np.array([[0, 0, 5.0], [100, 100, 3.0], [50, 50, 9.0]])
    assert match_one(decoy_first, two, 10).ap == 0.5 * (1 / 2 + 2 / 3)
    assert round(match_one(decoy_first, two, 10).ap, 4) == 0.5833


@criterion(9, "quarter counts sum to the whole-map integral")
def test_ac9_patch_sums():
    rng = np.random.default_rng(109)
    for i in range(100):
        h, w = int(rng.integers(2, 200)), int(rng.integers(2, 200))
        if i < 25:
            h, w = h | 1, w | 1
        m = DensityMap(rng.random((h, w)) * rng.uniform(1e-4, 10))
        quarters = [float(crop_map(m, r).values.sum()) for r in split_quarters(w, h)]
        assert abs(sum(quarters) - integral_count(m)) <= 1e-9
        assert abs(patch_count(m) - integral_count(m)) <= 1e-9


@criterion(10, "curriculum weights")
def test_ac10_curriculum():
    sched = CurriculumSchedule(0.002, 0.005)
    rng = np.random.default_rng(110)
    gt = np.concatenate([rng.random(200) * rng.choice([0.01, 0.5, 3.0], 200), [0.0, 0.5, 1e-6, 10.0]])
    gt = gt.reshape(1, -1)
    prev = None
    for e in range(201):
        W = curriculum_weights(gt, e, sched)
        assert np.all((W > 0) & (W <= 1))
        if prev is not None:
            assert np.all(W >= prev)
        prev = W
    w = curriculum_weights(np.array([[0.5]]), 100, sched)
    assert abs(w[0, 0] - 0.41) <= 1e-12


def _check_dmf1(raw, width, height):
    assert raw[:4] == b"DMF1"
    assert struct.unpack("<II", raw[4:12]) == (width, height)
    assert len(raw) == 12 + 4 * width * height
    vals = np.frombuffer(raw[12:], dtype="<f4")
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)


def _check_pgm(raw, width, height):
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    assert raw.startswith(header)
    assert len(raw) == len(header) + width * height


@criterion(11, "CLI determinism and byte formats")
def test_ac11_cli(tmp_path, capsys):
    rng = np.random.default_rng(111)
    ann = AnnotationSet(80, 60, rng.uniform(0, 1, (12, 2)) * [79.9, 59.9])
    save_annotations(ann, tmp_path / "ann.json")
    write_density_map(DensityMap(rng.random((60, 80))), tmp_path / "pred.dmf")
    p = lambda name: str(tmp_path / name)

    commands = [
        (["gen", "--annotations", p("ann.json"), "--out", p("gt.dmf")], "gt.dmf"),
        (["gen", "--annotations", p("ann.json"), "--out", p("gtf.dmf"), "--sigma", "fixed:4"], "gtf.dmf"),
        (["attention", "--annotations", p("ann.json"), "--out", p("attw.dmf")], "attw.dmf"),
        (["attention", "--density", p("gt.dmf"), "--out", p("attt.dmf")], "attt.dmf"),
        (["localize", "--density", p("gt.dmf"), "--method", "kmeans", "--seed", "5", "--out", p("km.json")], "km.json"),
        (["localize", "--density", p("gt.dmf"), "--method", "isolated", "--seed", "5", "--out", p("iso.json")], "iso.json"),
        (["eval", "--centers", p("iso.json"), "--annotations", p("ann.json")], None),
        (["bench", "--trials", "2", "--width", "96", "--height", "96", "--min-heads", "10", "--max-heads", "30",
          "--noise", "1e-4", "--seed", "9", "--csv", p("bench.csv")], "bench.csv"),
        (["viz", "--density", p("gt.dmf"), "--centers", p("iso.json"), "--out", p("gt.pgm")], "gt.pgm"),
        (["losses", "--pred", p("pred.dmf"), "--gt", p("gt.dmf"), "--curriculum-epoch", "50",
          "--pred-att", p("attt.dmf"), "--gt-att", p("attw.dmf")], None),
    ]
    seen = set()
    for argv, artifact in commands:
        outputs = []
        for _ in range(2):
            assert main(argv) == 0, capsys.readouterr().out
            stdout = capsys.readouterr().out
            data = (tmp_path / artifact).read_bytes() if artifact else b""
            outputs.append((stdout, data))
        assert outputs[0] == outputs[1], argv[0]
        json.loads(outputs[0][0])
        seen.add(argv[0])
    assert seen == {"gen", "attention", "localize", "eval", "bench", "viz", "losses"}

    for name in ("gt.dmf", "gtf.dmf", "attw.dmf", "attt.dmf"):
        _check_dmf1((tmp_path / name).read_bytes(), 80, 60)
    _check_pgm((tmp_path / "gt.pgm").read_bytes(), 80, 60)
