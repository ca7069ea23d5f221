"""End-to-end acceptance checks, one test per criterion, each recording a PASS/FAIL line."""

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from oracles import confusion_double_loop, iou_from_lists, random_primitives, random_rays
from rareboost_forge import csc
from rareboost_forge import dataset_io as dio
from rareboost_forge.cli import EXIT_OK, main
from rareboost_forge.geometry import build_bvh, cast_rays, cast_rays_linear
from rareboost_forge.labelmap import SHIPPED_MAPS, UNIFIED_INDEX, load_label_map, map_labels, validate
from rareboost_forge.metrics import ConfusionMatrix, accumulate, iou
from rareboost_forge.rebalance import load_plan
from rareboost_forge.sensor import Scan

SIX = ("car", "person", "bicycle", "motorcycle", "rider", "truck")


def _tree_hash(root) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_c01_rebalance_totals(record_criterion):
    t0 = time.perf_counter()
    totals = [load_plan(n) for n in ("plan_baseline", "plan_setting1", "plan_setting2")]
    got = (totals[0].rare_total_before, totals[1].rare_total_after, totals[2].rare_total_after)
    dt = time.perf_counter() - t0
    ok = got == (412, 1124, 1358) and all(p.rare_total_before == 412 for p in totals) and dt < 1.0
    record_criterion(1, ok, f"rare totals {got[0]}/{got[1]}/{got[2]} in {dt:.3f} s")
    assert ok


@pytest.fixture(scope="module")
def city_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("city")
    t0 = time.perf_counter()
    gen = main(["generate", "--scene", "city", "--targets", "setting1", "--scans", "100",
                "--out", str(out), "--seed", "0"])
    aud = main(["audit", "--dataset", str(out), "--plan", "plan_setting1"])
    return out, gen, aud, time.perf_counter() - t0


def test_c02_count_exact_generation(city_run, record_criterion):
    out, gen, aud, dt = city_run
    inst = dio.stats(out, load_label_map("carla-0.9.15")).instance_counts()
    realized = {c: int(inst[UNIFIED_INDEX[c]]) for c in SIX}
    expected = load_plan("plan_setting1").additions.counts
    ok = gen == EXIT_OK and aud == EXIT_OK and realized == expected and dt < 300
    record_criterion(2, ok, f"100 city scans, audit exit {aud}, realized {realized}, {dt:.1f} s")
    assert ok


def test_c03_points_per_scan_band(city_run, record_criterion):
    out = city_run[0]
    seq = out / "00"
    sizes = np.array([dio.scan_paths(seq, i)[0].stat().st_size // 16 for i in dio.scan_indices(seq)])
    frac = float(np.mean((sizes >= 125_000) & (sizes <= 138_000)))
    ok = len(sizes) == 100 and frac >= 0.9
    record_criterion(3, ok, f"{frac:.0%} of scans in [125000, 138000] (min {sizes.min()}, max {sizes.max()})")
    assert ok


def test_c04_gradient_check(record_criterion):
    t0 = time.perf_counter()
    errs = csc.gradient_check(100, seed=0)
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-4 and dt < 30
    record_criterion(4, ok, f"max relative error {max(errs):.2e} over 100 instances in {dt:.1f} s")
    assert ok


def test_c05_closed_forms(record_criterion):
    c = 5
    cfg = csc.CscConfig(c + 1, c)
    bank = csc.PrototypeBank(csc.REAL, np.eye(c + 1)[:, :c], np.ones(c, bool))
    q = np.zeros((4, c + 1))
    q[:, c] = [1.0, 0.3, 2.0, 7.0]
    uniform = csc.contrastive_loss(csc.EmbeddingBatch(q, [0, 1, 2, 4], csc.REAL), bank, cfg)[0]
    rng = np.random.default_rng(5)
    one = csc.contrastive_loss(csc.EmbeddingBatch(rng.normal(size=(6, 3)), np.zeros(6), csc.SYNTHETIC),
                               csc.PrototypeBank(csc.REAL, [[1.0], [0.0], [0.0]], [True]), csc.CscConfig(3, 1))[0]
    add_err = 0.0
    for _ in range(50):
        batch, _, cfg_r = csc.random_instance(rng)
        p_real = rng.normal(size=(cfg_r.dim, cfg_r.n_classes))
        p_syn = rng.normal(size=(cfg_r.dim, cfg_r.n_classes))
        real = csc.PrototypeBank(csc.REAL, p_real / np.linalg.norm(p_real, axis=0), np.ones(cfg_r.n_classes, bool))
        syn = csc.PrototypeBank(csc.SYNTHETIC, p_syn / np.linalg.norm(p_syn, axis=0),
                                np.ones(cfg_r.n_classes, bool))
        seg = float(rng.uniform(0, 3))
        total, _ = csc.csc_loss(batch, real, syn, cfg_r, seg)
        parts = seg + csc.contrastive_loss(batch, real, cfg_r)[0] + csc.contrastive_loss(batch, syn, cfg_r)[0]
        add_err = max(add_err, abs(total - parts))
    u_err = abs(uniform - math.log(c))
    ok = u_err <= 1e-12 and one == 0.0 and add_err <= 1e-12
    record_criterion(5, ok, f"|loss - ln C| = {u_err:.1e}, C=1 loss {one}, additivity error {add_err:.1e}")
    assert ok


def test_c06_toy_alignment(record_criterion):
    t0 = time.perf_counter()
    rep = csc.toy_alignment_experiment(seed=0)
    dt = time.perf_counter() - t0
    b, a = rep.baseline, rep.aligned
    ok = a.mean_cosine > b.mean_cosine and a.accuracy >= b.accuracy and dt < 120
    record_criterion(6, ok, f"cosine {b.mean_cosine:.4f} -> {a.mean_cosine:.4f}, "
                            f"accuracy {b.accuracy:.3f} -> {a.accuracy:.3f}, {dt:.1f} s")
    assert ok


def test_c07_metrics_oracle(record_criterion):
    rng = np.random.default_rng(7)
    n_cls = 16
    mismatches = 0
    total = ConfusionMatrix.zeros(n_cls)
    ref_total = [[0] * n_cls for _ in range(n_cls)]
    ref_missed = [0] * n_cls
    labels = np.array(list(range(n_cls)) + [255])
    for _ in range(1000):
        n = int(rng.integers(0, 200))
        gt, pred = rng.choice(labels, n), rng.choice(labels, n)
        cm = accumulate(ConfusionMatrix.zeros(n_cls), gt, pred)
        ref, missed = confusion_double_loop(gt.tolist(), pred.tolist(), n_cls)
        got = iou(cm).per_class
        want = iou_from_lists(ref, missed)
        same_iou = all((np.isnan(g) and w is None) or g == w for g, w in zip(got, want))
        if not (np.array_equal(cm.counts, ref) and np.array_equal(cm.missed, missed) and same_iou):
            mismatches += 1
        total = total + cm
        ref_total = [[x + y for x, y in zip(r, s)] for r, s in zip(ref_total, ref)]
        ref_missed = [x + y for x, y in zip(ref_missed, missed)]
    merged_ok = np.array_equal(total.counts, ref_total) and np.array_equal(total.missed, ref_missed)
    gt = rng.integers(0, n_cls, 5000)
    perfect = iou(accumulate(ConfusionMatrix.zeros(n_cls), gt, gt)).as_percent()["miou"]
    ok = mismatches == 0 and merged_ok and perfect == 100.0
    record_criterion(7, ok, f"{mismatches} mismatches over 1000 arrays, perfect mIoU {perfect}")
    assert ok


def test_c08_bvh_oracle(record_criterion):
    rng = np.random.default_rng(8)
    prims = random_primitives(rng, 10_000, spread=30.0)
    bvh = build_bvh(prims)
    o, d = random_rays(rng, 1000)
    tb, ib = cast_rays(bvh, o, d)
    tl, il = cast_rays_linear(bvh, o, d)
    same_idx = np.array_equal(ib, il)
    hit = ib >= 0
    t_err = float(np.abs(tb[hit] - tl[hit]).max()) if hit.any() else 0.0
    ok = same_idx and t_err <= 1e-9 and hit.sum() > 0
    record_criterion(8, ok, f"{int(hit.sum())} hits, indices identical {same_idx}, max |dt| {t_err:.1e}")
    assert ok


def test_c09_io_round_trip(tmp_path, record_criterion):
    rng = np.random.default_rng(9)
    failures = 0
    for k in range(200):
        n = int(rng.integers(0, 2000))
        pts = rng.normal(scale=80, size=(n, 3)).astype(np.float32)
        scan = Scan(pts, rng.integers(0, 65536, n), rng.integers(0, 65536, n))
        b, l = dio.scan_paths(tmp_path, k)
        dio.write_scan(scan, b, l)
        back = dio.read_scan(b, l)
        if not (back.equals(scan) and back.points.tobytes() == scan.points.tobytes()):
            failures += 1
    b, l = dio.scan_paths(tmp_path / "golden", 0)
    dio.write_scan(Scan(np.array([[1.0, 2.0, 3.0]], np.float32), [5], [9]), b, l)
    golden = Path(__file__).parent / "data" / "golden" / "00"
    golden_ok = (b.read_bytes() == (golden / "velodyne/000000.bin").read_bytes()
                 == bytes.fromhex("0000803f000000400000404000000000")
                 and l.read_bytes() == (golden / "labels/000000.label").read_bytes() == bytes.fromhex("05000900"))
    ok = failures == 0 and golden_ok
    record_criterion(9, ok, f"{failures} of 200 fuzzed scans changed, golden file match {golden_ok}")
    assert ok


def test_c10_label_maps(record_criterion):
    problems = {name: validate(load_label_map(name)) for name in SHIPPED_MAPS}
    lm = load_label_map("semantickitti")
    riders = map_labels([lm.source.id_of("bicyclist"), lm.source.id_of("motorcyclist")], lm).tolist()
    ok = not any(problems.values()) and riders == [UNIFIED_INDEX["rider"]] * 2
    record_criterion(10, ok, f"validate problems {sum(map(len, problems.values()))}, riders -> {riders}")
    assert ok


def test_c11_determinism(tmp_path, record_criterion):
    (tmp_path / "t.yaml").write_text(yaml.safe_dump({"car": 6, "person": 4, "bicycle": 2, "truck": 1}))
    argv = ["generate", "--scene", "town", "--targets", str(tmp_path / "t.yaml"), "--scans", "3", "--seed", "42"]
    codes = [main(argv + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    ha, hb = _tree_hash(tmp_path / "a"), _tree_hash(tmp_path / "b")
    ok = codes == [EXIT_OK, EXIT_OK] and ha == hb
    record_criterion(11, ok, f"two runs, tree hashes {'equal' if ha == hb else 'differ'} ({ha[:12]})")
    assert ok
