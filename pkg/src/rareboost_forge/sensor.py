"""Spinning multi-channel LiDAR simulation producing labelled scans."""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property
from typing import Iterator

import numpy as np

from . import rng
from .geometry import DEFAULT_T_MIN, Bvh, Pose, build_bvh_packed, cast_rays
from .scene import InstancePlacement, SceneSpec, place_instances, realize_packed

# stream tags keep the drop and noise draws of one ray independent
_DROP_STREAM = 1
_NOISE_STREAM = 2


@dataclass(frozen=True)
class SensorConfig:
    n_channels: int = 64
    elevation_min: float = -24.9
    elevation_max: float = 2.0
    azimuth_step: float = 0.18
    range_min: float = 1.0
    range_max: float = 120.0
    range_noise_sigma: float = 0.0
    ray_drop_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not self.azimuth_step > 0 or abs(self.n_azimuth * self.azimuth_step - 360.0) > 1e-9:
            raise ValueError("azimuth_step must divide 360 degrees")
        if not 0.0 <= self.ray_drop_prob < 1.0:
            raise ValueError("ray_drop_prob must be in [0, 1)")
        if not 0.0 <= self.range_min < self.range_max:
            raise ValueError("require 0 <= range_min < range_max")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")
        if self.elevation_min > self.elevation_max:
            raise ValueError("elevation_min must not exceed elevation_max")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "SensorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown sensor settings: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def n_azimuth(self) -> int:
        return int(round(360.0 / self.azimuth_step))

    @property
    def n_rays(self) -> int:
        return self.n_channels * self.n_azimuth

    @cached_property
    def elevations(self) -> np.ndarray:
        """Channel elevation angles in degrees, top channel first."""
        return np.linspace(self.elevation_max, self.elevation_min, self.n_channels)

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, channel-major, shape (n_rays, 3)."""
        el = np.radians(self.elevations)[:, None]
        az = np.radians(np.arange(self.n_azimuth) * self.azimuth_step)[None, :]
        x = np.cos(el) * np.cos(az)
        y = np.cos(el) * np.sin(az)
        z = np.broadcast_to(np.sin(el), x.shape)
        d = np.stack([x, y, z], axis=-1).reshape(-1, 3)
        d.flags.writeable = False
        return d


@dataclass(frozen=True, eq=False)
class Scan:
    """One revolution: sensor-frame points with raw semantic and instance labels."""

    points: np.ndarray
    semantic_labels: np.ndarray
    instance_ids: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        sem = np.asarray(self.semantic_labels)
        inst = np.asarray(self.instance_ids)
        if not (len(pts) == len(sem) == len(inst)):
            raise ValueError("points and label arrays must have equal length")
        for name, arr in (("semantic", sem), ("instance", inst)):
            if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
                raise ValueError(f"{name} labels must fit in 16 unsigned bits")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "semantic_labels", sem.astype(np.uint16).reshape(-1))
        object.__setattr__(self, "instance_ids", inst.astype(np.uint16).reshape(-1))

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "Scan":
        return cls(np.zeros((0, 3), np.float32), np.zeros(0, np.uint16), np.zeros(0, np.uint16))

    def subset(self, index) -> "Scan":
        return Scan(self.points[index], self.semantic_labels[index], self.instance_ids[index])

    def equals(self, other: "Scan") -> bool:
        return (
            np.array_equal(self.points.view(np.uint32), other.points.view(np.uint32))
            and np.array_equal(self.semantic_labels, other.semantic_labels)
            and np.array_equal(self.instance_ids, other.instance_ids)
        )


def simulate_scan(bvh: Bvh | None, pose: Pose, cfg: SensorConfig, scan_index: int) -> Scan:
    """Cast every beam of one revolution from ``pose`` and keep in-range returns.

    Drop and range-noise draws are hashed from (rng_seed, scan_index, channel,
    azimuth index), so a scan depends on nothing but its arguments.
    """
    if bvh is None:
        return Scan.empty()
    local = cfg.directions
    ts, idx = cast_rays(bvh, pose.translation, pose.apply_direction(local), DEFAULT_T_MIN, cfg.range_max)
    keep = (idx >= 0) & (ts >= cfg.range_min)
    rays = np.flatnonzero(keep)
    rng_ = ts[rays]
    if cfg.ray_drop_prob > 0 or cfg.range_noise_sigma > 0:
        channel, azimuth = np.divmod(rays, cfg.n_azimuth)
        ok = np.ones(len(rays), dtype=bool)
        if cfg.ray_drop_prob > 0:
            u = rng.uniform(cfg.rng_seed, scan_index, channel, azimuth, _DROP_STREAM)
            ok &= u >= cfg.ray_drop_prob
        if cfg.range_noise_sigma > 0:
            rng_ = rng_ + cfg.range_noise_sigma * rng.normal(cfg.rng_seed, scan_index, channel, azimuth, _NOISE_STREAM)
            ok &= (rng_ >= cfg.range_min) & (rng_ <= cfg.range_max)
        rays, rng_ = rays[ok], rng_[ok]
    hit = idx[rays]
    points = (local[rays] * rng_[:, None]).astype(np.float32)
    return Scan(points, bvh.labels[hit], bvh.instance_ids[hit])


@dataclass(frozen=True, eq=False)
class PreparedSequence:
    placements: list[InstancePlacement]
    bvh: Bvh | None
    poses: list[Pose]


def prepare_sequence(spec: SceneSpec, targets: dict[str, int], n_scans: int) -> PreparedSequence:
    if n_scans < 1:
        raise ValueError("n_scans must be >= 1")
    placements = place_instances(spec, targets)
    kinds, data, labels, inst = realize_packed(spec, placements)
    bvh = build_bvh_packed(kinds, data, labels, inst) if len(kinds) else None
    return PreparedSequence(placements, bvh, spec.trajectory.poses(n_scans))


def simulate_sequence(spec: SceneSpec, targets: dict[str, int], cfg: SensorConfig, n_scans: int) -> Iterator[Scan]:
    """Yield one scan per trajectory tick."""
    seq = prepare_sequence(spec, targets, n_scans)
    for i, pose in enumerate(seq.poses):
        yield simulate_scan(seq.bvh, pose, cfg, i)

