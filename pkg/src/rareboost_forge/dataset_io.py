"""On-disk sequence layout and dataset statistics.

Layout::

    <root>/<sequence>/velodyne/000000.bin   little-endian float32 x, y, z, intensity
    <root>/<sequence>/labels/000000.label   little-endian uint32, (instance << 16) | semantic
    <root>/<sequence>/poses.txt             one row-major 3x4 sensor-to-world transform per line
    <root>/<sequence>/meta.yaml             taxonomy, sensor config, seeds, scene info
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

from .errors import FormatError
from .geometry import Pose
from .labelmap import IGNORE, UNIFIED_CLASSES, LabelMap, map_labels
from .sensor import Scan

META_FILE = "meta.yaml"
POSES_FILE = "poses.txt"
POINT_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")


def scan_paths(seq_dir, index: int) -> tuple[Path, Path]:
    seq_dir = Path(seq_dir)
    return seq_dir / "velodyne" / f"{index:06d}.bin", seq_dir / "labels" / f"{index:06d}.label"


def encode_labels(semantic, instance) -> np.ndarray:
    sem = np.asarray(semantic, dtype=np.uint32)
    inst = np.asarray(instance, dtype=np.uint32)
    return ((inst << np.uint32(16)) | sem).astype(LABEL_DTYPE)


def decode_labels(words) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(words, dtype=np.uint32)
    return (w & 0xFFFF).astype(np.uint16), (w >> 16).astype(np.uint16)


def write_scan(scan: Scan, bin_path, label_path) -> None:
    bin_path, label_path = Path(bin_path), Path(label_path)
    rows = np.zeros((len(scan), 4), dtype=POINT_DTYPE)
    rows[:, :3] = scan.points
    try:
        bin_path.parent.mkdir(parents=True, exist_ok=True)
        label_path.parent.mkdir(parents=True, exist_ok=True)
        bin_path.write_bytes(rows.tobytes())
        label_path.write_bytes(encode_labels(scan.semantic_labels, scan.instance_ids).tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write scan to {bin_path} / {label_path}: {exc}") from exc


def read_scan(bin_path, label_path) -> Scan:
    bin_path, label_path = Path(bin_path), Path(label_path)
    try:
        raw_pts = bin_path.read_bytes()
        raw_lbl = label_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read scan {bin_path} / {label_path}: {exc}") from exc
    if len(raw_pts) % 16 or len(raw_lbl) % 4 or len(raw_pts) // 16 != len(raw_lbl) // 4:
        raise FormatError(
            f"size mismatch: {bin_path} has {len(raw_pts)} bytes, {label_path} has {len(raw_lbl)} bytes "
            "(expected 16 bytes per point and 4 bytes per label)"
        )
    pts = np.frombuffer(raw_pts, dtype=POINT_DTYPE).reshape(-1, 4)[:, :3].astype(np.float32)
    sem, inst = decode_labels(np.frombuffer(raw_lbl, dtype=LABEL_DTYPE))
    return Scan(pts, sem, inst)


def read_labels(label_path) -> tuple[np.ndarray, np.ndarray]:
    """Semantic and instance arrays of one label file, without the points."""
    raw = Path(label_path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{label_path}: length {len(raw)} is not a multiple of 4")
    return decode_labels(np.frombuffer(raw, dtype=LABEL_DTYPE))


def write_poses(path, poses: list[Pose]) -> None:
    # adding 0.0 turns -0.0 into 0.0 so the text is stable
    lines = [" ".join(f"{v + 0.0:.9e}" for v in p.matrix34().ravel()) for p in poses]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_poses(path) -> list[Pose]:
    poses = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = np.array(line.split(), dtype=np.float64)
        if vals.size != 12:
            raise FormatError(f"{path}:{n}: expected 12 values, got {vals.size}")
        m = vals.reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def write_meta(seq_dir, meta: dict) -> None:
    Path(seq_dir, META_FILE).write_text(yaml.safe_dump(meta, sort_keys=True))


def read_meta(seq_dir) -> dict:
    path = Path(seq_dir, META_FILE)
    if not path.exists():
        return {}
    try:
        return yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def list_sequences(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"dataset root {root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "velodyne").is_dir())


def scan_indices(seq_dir) -> list[int]:
    """Indices of the scans in a sequence; checks bin/label pairing and contiguity."""
    seq_dir = Path(seq_dir)
    bins = sorted(p.stem for p in (seq_dir / "velodyne").glob("*.bin"))
    labels_dir = seq_dir / "labels"
    labels = sorted(p.stem for p in labels_dir.glob("*.label")) if labels_dir.is_dir() else []
    if bins != labels:
        raise FormatError(f"{seq_dir}: {len(bins)} point files but {len(labels)} label files, or names differ")
    idx = [int(s) for s in bins]
    if idx != list(range(len(idx))):
        raise FormatError(f"{seq_dir}: scan indices are not contiguous from 0")
    return idx


def iter_scans(root) -> Iterator[tuple[str, int, Scan]]:
    for seq in list_sequences(root):
        for i in scan_indices(seq):
            yield seq.name, i, read_scan(*scan_paths(seq, i))


def label_files(root) -> list[tuple[str, Path]]:
    return [(seq.name, scan_paths(seq, i)[1]) for seq in list_sequences(root) for i in scan_indices(seq)]


def default_threads() -> int:
    env = os.environ.get("RAREBOOST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class DatasetStats:
    points: np.ndarray = field(default_factory=lambda: np.zeros(len(UNIFIED_CLASSES), dtype=np.int64))
    instances: set = field(default_factory=set)
    ignored_points: int = 0
    n_scans: int = 0

    def merge(self, other: "DatasetStats") -> "DatasetStats":
        return DatasetStats(self.points + other.points, self.instances | other.instances,
                            self.ignored_points + other.ignored_points, self.n_scans + other.n_scans)

    def instance_counts(self) -> np.ndarray:
        counts = np.zeros(len(UNIFIED_CLASSES), dtype=np.int64)
        for _, cls, _ in self.instances:
            counts[cls] += 1
        return counts

    def as_dict(self) -> dict:
        inst = self.instance_counts()
        return {
            "scans": self.n_scans,
            "ignored_points": int(self.ignored_points),
            "classes": {name: {"points": int(self.points[i]), "instances": int(inst[i])}
                        for i, name in enumerate(UNIFIED_CLASSES)},
        }


def _file_stats(seq: str, label_path: Path, lm: LabelMap) -> DatasetStats:
    sem, inst = read_labels(label_path)
    uni = map_labels(sem, lm)
    valid = uni != IGNORE
    points = np.bincount(uni[valid], minlength=len(UNIFIED_CLASSES)).astype(np.int64)
    keep = valid & (inst > 0)
    pairs = np.unique(np.stack([uni[keep].astype(np.int64), inst[keep].astype(np.int64)], axis=1), axis=0)
    instances = {(seq, int(c), int(i)) for c, i in pairs}
    return DatasetStats(points, instances, int((~valid).sum()), 1)


def stats(root, lm: LabelMap, threads: int | None = None) -> DatasetStats:
    """Points per unified class and distinct (class, instance) pairs across the dataset."""
    files = label_files(root)
    total = DatasetStats()
    with ThreadPoolExecutor(max_workers=threads or default_threads()) as pool:
        for part in pool.map(lambda f: _file_stats(f[0], f[1], lm), files):
            total = total.merge(part)
    return total
