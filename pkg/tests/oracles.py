"""Reference implementations used only by the tests.

They are written independently of the library kernels: plain numpy, one
primitive at a time, no acceleration structure.
"""

import math

import numpy as np

from rareboost_forge.geometry import Pose, Primitive


def ray_triangle(o, d, v0, v1, v2):
    """Möller-Trumbore; returns t or inf."""
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(d, e2)
    det = e1 @ p
    if abs(det) < 1e-15:
        return math.inf
    s = o - v0
    u = (s @ p) / det
    if u < 0 or u > 1:
        return math.inf
    q = np.cross(s, e1)
    v = (d @ q) / det
    if v < 0 or u + v > 1:
        return math.inf
    return (e2 @ q) / det


def _local(prim: Primitive, o, d):
    inv = prim.pose.inverse()
    return inv.apply(o), inv.apply_direction(d)


def ray_box(o, d, half):
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        if d[a] == 0.0:
            if abs(o[a]) > half[a]:
                return []
            continue
        ta = (-half[a] - o[a]) / d[a]
        tb = (half[a] - o[a]) / d[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return [t0, t1] if t0 <= t1 else []


def ray_cylinder(o, d, r, hh):
    """All surface crossings of a capped cylinder with axis z."""
    out = []
    a = d[0] ** 2 + d[1] ** 2
    if a > 0:
        b = 2 * (o[0] * d[0] + o[1] * d[1])
        c = o[0] ** 2 + o[1] ** 2 - r * r
        disc = b * b - 4 * a * c
        if disc >= 0:
            for t in ((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)):
                if abs(o[2] + t * d[2]) <= hh:
                    out.append(t)
    if d[2] != 0:
        for z in (-hh, hh):
            t = (z - o[2]) / d[2]
            x, y = o[0] + t * d[0], o[1] + t * d[1]
            if x * x + y * y <= r * r:
                out.append(t)
    return out


def ray_ground(o, d, hx, hy):
    if d[2] == 0:
        return []
    t = -o[2] / d[2]
    x, y = o[0] + t * d[0], o[1] + t * d[1]
    return [t] if abs(x) <= hx and abs(y) <= hy else []


def ray_primitive(prim: Primitive, o, d, t_min, t_max):
    if prim.shape == "triangle":
        v = prim.pose.apply(prim.params)
        t = ray_triangle(o, d, *v)
        return t if t_min <= t <= t_max else math.inf
    lo, ld = _local(prim, o, d)
    if prim.shape == "box":
        ts = ray_box(lo, ld, prim.params)
    elif prim.shape == "cylinder":
        ts = ray_cylinder(lo, ld, *prim.params)
    else:
        ts = ray_ground(lo, ld, *prim.params)
    ok = [t for t in ts if t_min <= t <= t_max]
    return min(ok) if ok else math.inf


def nearest(prims, o, d, t_min=1e-4, t_max=math.inf):
    best, idx = math.inf, -1
    for i, p in enumerate(prims):
        t = ray_primitive(p, o, d, t_min, t_max)
        if t < best:
            best, idx = t, i
    return best, idx


def random_primitives(rng, n, spread=20.0, kinds=("triangle", "box", "cylinder", "ground")):
    prims = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        c = rng.uniform(-spread, spread, 3)
        label, inst = int(rng.integers(0, 29)), int(rng.integers(0, 100))
        if kind == "triangle":
            v = c + rng.normal(scale=1.0, size=(3, 3))
            prims.append(Primitive.triangle(*v, semantic_label=label, instance_id=inst))
        elif kind == "box":
            prims.append(Primitive.box(c, rng.uniform(0.2, 3.0, 3), rng.uniform(0, 2 * np.pi), label, inst))
        elif kind == "cylinder":
            prims.append(Primitive.cylinder(c, rng.uniform(0.1, 1.0), rng.uniform(0.5, 5.0), label, inst))
        else:
            prims.append(Primitive.ground(c, rng.uniform(0.5, 6.0, 2), rng.uniform(0, 2 * np.pi), label, inst))
    return prims


def random_rays(rng, n, spread=25.0):
    o = rng.uniform(-spread, spread, (n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return o, d


def random_pose(rng) -> Pose:
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return Pose(rot, rng.uniform(-50, 50, 3))


def confusion_double_loop(gt, pred, n_classes, ignore=255):
    cm = [[0] * n_classes for _ in range(n_classes)]
    missed = [0] * n_classes
    for g, p in zip(gt, pred):
        if g == ignore:
            continue
        if p == ignore:
            missed[g] += 1
        else:
            cm[g][p] += 1
    return cm, missed


def iou_from_lists(cm, missed):
    n = len(cm)
    out = []
    for c in range(n):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(n)) - tp
        fn = sum(cm[c]) - tp + missed[c]
        union = tp + fp + fn
        out.append(None if union == 0 else tp / union)
    return out
