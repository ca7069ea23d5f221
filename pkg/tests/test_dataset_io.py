import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rareboost_forge import dataset_io as dio
from rareboost_forge.errors import FormatError
from rareboost_forge.geometry import Pose
from rareboost_forge.labelmap import UNIFIED_INDEX, load_label_map
from rareboost_forge.sensor import Scan

GOLDEN = Path(__file__).parent / "data" / "golden"
GOLDEN_BIN = bytes.fromhex("0000803f" "00000040" "00004040" "00000000")
GOLDEN_LABEL = bytes.fromhex("05000900")


def _one_point():
    return Scan(np.array([[1.0, 2.0, 3.0]], np.float32), [5], [9])


def test_golden_encoding(tmp_path):
    b, l = dio.scan_paths(tmp_path, 0)
    dio.write_scan(_one_point(), b, l)
    assert b.read_bytes() == GOLDEN_BIN == (GOLDEN / "00/velodyne/000000.bin").read_bytes()
    assert l.read_bytes() == GOLDEN_LABEL == (GOLDEN / "00/labels/000000.label").read_bytes()
    assert int.from_bytes(GOLDEN_LABEL, "little") == 0x00090005


def test_golden_decoding():
    scan = dio.read_scan(*dio.scan_paths(GOLDEN / "00", 0))
    assert scan.equals(_one_point())


def test_empty_scan(tmp_path):
    b, l = dio.scan_paths(tmp_path, 3)
    dio.write_scan(Scan.empty(), b, l)
    assert b.stat().st_size == 0 and l.stat().st_size == 0
    assert len(dio.read_scan(b, l)) == 0


def test_truncated_bin(tmp_path):
    b, l = dio.scan_paths(tmp_path, 0)
    dio.write_scan(_one_point(), b, l)
    b.write_bytes(b.read_bytes()[:15])
    with pytest.raises(FormatError) as err:
        dio.read_scan(b, l)
    assert str(b) in str(err.value) and str(l) in str(err.value)


def test_count_mismatch(tmp_path):
    b, l = dio.scan_paths(tmp_path, 0)
    dio.write_scan(_one_point(), b, l)
    l.write_bytes(l.read_bytes() * 2)
    with pytest.raises(FormatError):
        dio.read_scan(b, l)


def test_big_endian_input_is_not_native(tmp_path):
    """Files are little-endian regardless of how the array was held in memory."""
    pts = np.array([[1.5, -2.25, 3.0]], dtype=">f4")
    b, l = dio.scan_paths(tmp_path, 0)
    dio.write_scan(Scan(pts, [7], [1]), b, l)
    assert b.read_bytes()[:4] == np.float32(1.5).astype("<f4").tobytes()


@settings(max_examples=60)
@given(n=st.integers(0, 300), seed=st.integers(0, 2**32 - 1))
def test_fuzzed_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=50, size=(n, 3)).astype(np.float32)
    # include awkward values: signed zeros, subnormals, extremes
    if n >= 4:
        pts[0] = [-0.0, 1e-45, np.finfo(np.float32).max]
    scan = Scan(pts, rng.integers(0, 65536, n), rng.integers(0, 65536, n))
    d = tmp_path_factory.mktemp("rt")
    b, l = dio.scan_paths(d, 0)
    dio.write_scan(scan, b, l)
    back = dio.read_scan(b, l)
    assert back.equals(scan)
    assert back.points.tobytes() == scan.points.tobytes()


def test_poses_round_trip(tmp_path, rng):
    from oracles import random_pose

    poses = [random_pose(rng) for _ in range(5)] + [Pose.from_yaw(np.pi, [0, 0, 1.73])]
    path = tmp_path / "poses.txt"
    dio.write_poses(path, poses)
    back = dio.read_poses(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6 and all(len(x.split()) == 12 for x in lines)
    assert "-0.000000000e+00" not in path.read_text()
    for a, b in zip(poses, back):
        np.testing.assert_allclose(a.matrix34(), b.matrix34(), atol=1e-8)


def test_sequence_layout_checks(tmp_path):
    seq = tmp_path / "00"
    for i in range(3):
        dio.write_scan(_one_point(), *dio.scan_paths(seq, i))
    assert dio.scan_indices(seq) == [0, 1, 2]
    dio.scan_paths(seq, 1)[1].unlink()
    with pytest.raises(FormatError):
        dio.scan_indices(seq)
    dio.write_scan(_one_point(), *dio.scan_paths(seq, 1))
    dio.write_scan(_one_point(), *dio.scan_paths(seq, 5))
    with pytest.raises(FormatError):
        dio.scan_indices(seq)


def test_meta_round_trip(tmp_path):
    meta = {"taxonomy": "carla-0.9.15", "seed": 3, "sensor": {"n_channels": 64}}
    dio.write_meta(tmp_path, meta)
    assert dio.read_meta(tmp_path) == meta


def _write_instances(seq, scans):
    for i, (sem, inst) in enumerate(scans):
        n = len(sem)
        dio.write_scan(Scan(np.zeros((n, 3), np.float32), sem, inst), *dio.scan_paths(seq, i))


def test_stats_empty_dataset(tmp_path):
    st_ = dio.stats(tmp_path, load_label_map("carla-0.9.15"))
    assert st_.points.sum() == 0 and st_.instance_counts().sum() == 0 and st_.n_scans == 0


def test_stats_counts_distinct_instances(tmp_path):
    lm = load_label_map("carla-0.9.15")
    car, ped, road = (lm.source.id_of(n) for n in ("car", "pedestrian", "road"))
    _write_instances(tmp_path / "00", [([car, car, ped, road], [1, 1, 2, 0]), ([car, ped], [3, 2])])
    _write_instances(tmp_path / "01", [([car], [1])])
    st_ = dio.stats(tmp_path, lm)
    counts = st_.instance_counts()
    assert counts[UNIFIED_INDEX["car"]] == 3  # ids 1 and 3 in 00, id 1 in 01
    assert counts[UNIFIED_INDEX["person"]] == 1
    assert st_.points[UNIFIED_INDEX["car"]] == 4 and st_.points[UNIFIED_INDEX["road"]] == 1


def test_stats_car_to_rare_ratio(tmp_path):
    """Baseline-like counts: about five times as many car instances as rare ones."""
    lm = load_label_map("carla-0.9.15")
    tax = lm.source
    counts = {"car": 1950, "pedestrian": 139, "bicycle": 128, "motorcycle": 57, "rider": 60, "truck": 28}
    scans, next_id = [], 1
    for name, n in counts.items():
        ids = np.arange(next_id, next_id + n)
        next_id += n
        scans.append(([tax.id_of(name)] * n, ids))
    _write_instances(tmp_path / "00", scans)
    inst = dio.stats(tmp_path, lm).instance_counts()
    rare = sum(inst[UNIFIED_INDEX[c]] for c in ("person", "bicycle", "motorcycle", "rider", "truck"))
    assert rare == 412 and inst[UNIFIED_INDEX["car"]] == 1950
    assert 4.5 <= inst[UNIFIED_INDEX["car"]] / rare <= 5.5


def test_stats_order_independent(tmp_path, rng):
    lm = load_label_map("carla-0.9.15")
    ids = sorted(lm.source.entries)
    files = []
    for s in range(3):
        scans = [(rng.choice(ids, 50), rng.integers(0, 6, 50)) for _ in range(4)]
        _write_instances(tmp_path / f"{s:02d}", scans)
    files = dio.label_files(tmp_path)
    parts = [dio._file_stats(seq, path, lm) for seq, path in files]
    fwd = dio.DatasetStats()
    for p in parts:
        fwd = fwd.merge(p)
    rev = dio.DatasetStats()
    for p in reversed(parts):
        rev = rev.merge(p)
    full = dio.stats(tmp_path, lm, threads=3)
    for other in (rev, full):
        assert np.array_equal(fwd.points, other.points) and fwd.instances == other.instances


def test_missing_root():
    with pytest.raises(FormatError):
        dio.list_sequences("/nonexistent/dataset")
