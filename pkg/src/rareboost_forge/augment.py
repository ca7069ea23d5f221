"""Point dropout and coordinate jitter for labelled scans."""

from __future__ import annotations

import numpy as np

from .sensor import Scan


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_dropout(scan: Scan, keep_fraction: float = 0.8, seed=0) -> Scan:
    """Keep exactly ``round(keep_fraction * N)`` points, drawn without replacement.

    Surviving points keep their original order.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    n = len(scan)
    k = int(round(keep_fraction * n))
    if k == n:
        return scan
    keep = np.sort(_rng(seed).choice(n, size=k, replace=False))
    return scan.subset(keep)


def jitter(scan: Scan, sigma: float = 0.01, clip: float = 0.05, seed=0) -> Scan:
    """Add per-coordinate Gaussian noise, clipped to [-clip, clip]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not clip > 0:
        raise ValueError("clip must be > 0")
    if sigma == 0 or len(scan) == 0:
        return scan
    noise = np.clip(_rng(seed).normal(0.0, sigma, size=scan.points.shape), -clip, clip)
    pts = (scan.points.astype(np.float64) + noise).astype(np.float32)
    return Scan(pts, scan.semantic_labels, scan.instance_ids)


def scan_seed(seed: int, sequence: int, index: int) -> np.random.Generator:
    """Independent generator for one scan of one sequence."""
    return np.random.default_rng([int(seed), int(sequence), int(index)])
