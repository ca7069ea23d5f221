"""Primitives, rigid poses, a median-split BVH and ray casting.

Shapes are intersected analytically in their local frame (boxes, finite
capped cylinders, rectangular ground patches) or with Moller-Trumbore for
triangles.  Everything the kernels need is packed into flat float64 arrays so
the traversal can run under numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

# the bundled TBB is too old for numba; avoid the warning it triggers
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .errors import EmptyScene

TRIANGLE, BOX, CYLINDER, GROUND = 0, 1, 2, 3
SHAPES = {"triangle": TRIANGLE, "box": BOX, "cylinder": CYLINDER, "ground": GROUND}

DEFAULT_T_MIN = 1e-4
LEAF_SIZE = 4

_IDENTITY = np.eye(3)


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_rotation(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(rot)):
        raise ValueError("rotation must be finite")
    if abs(np.linalg.det(rot) - 1.0) > 1e-6 or not np.allclose(rot.T @ rot, _IDENTITY, atol=1e-6):
        raise ValueError("rotation must be orthonormal with det = +1")
    return rot


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates into the parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_yaw(cls, yaw: float, translation) -> "Pose":
        return cls(rotation_z(yaw), translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_direction(self, dirs: np.ndarray) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T

    def compose(self, inner: "Pose") -> "Pose":
        """Return ``self * inner`` (apply ``inner`` first)."""
        return Pose(self.rotation @ inner.rotation, self.apply(inner.translation))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(o)) and np.all(np.isfinite(d))):
            raise ValueError("ray components must be finite")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def toward(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=np.float64)
        return cls(origin, d / np.linalg.norm(d))


@dataclass(frozen=True)
class Primitive:
    """One intersectable shape with its labels.

    ``params`` depends on ``shape``:
      triangle: (3, 3) local vertices;
      box: half extents (hx, hy, hz) around the local origin;
      cylinder: (radius, half_height), axis along local z, centred at origin;
      ground: (half_x, half_y) rectangle in the local z = 0 plane.
    """

    shape: str
    params: np.ndarray
    pose: Pose = field(default_factory=Pose)
    semantic_label: int = 0
    instance_id: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.instance_id < 0:
            raise ValueError("instance_id must be nonnegative")
        p = np.asarray(self.params, dtype=np.float64)
        if not np.all(np.isfinite(p)):
            raise ValueError("primitive parameters must be finite")
        if self.shape == "triangle":
            p = p.reshape(3, 3)
            area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
            if area <= 1e-12:
                raise ValueError("degenerate triangle")
        elif self.shape == "box":
            p = p.reshape(3)
        else:
            p = p.reshape(2)
        if self.shape != "triangle" and np.any(p <= 0):
            raise ValueError(f"{self.shape} dimensions must be positive")
        object.__setattr__(self, "params", p)

    @classmethod
    def triangle(cls, v0, v1, v2, semantic_label=0, instance_id=0) -> "Primitive":
        return cls("triangle", np.array([v0, v1, v2], dtype=np.float64), Pose(), semantic_label, instance_id)

    @classmethod
    def box(cls, center, size, yaw=0.0, semantic_label=0, instance_id=0) -> "Primitive":
        half = 0.5 * np.asarray(size, dtype=np.float64)
        return cls("box", half, Pose.from_yaw(yaw, center), semantic_label, instance_id)

    @classmethod
    def cylinder(cls, base_center, radius, height, semantic_label=0, instance_id=0) -> "Primitive":
        c = np.asarray(base_center, dtype=np.float64) + [0.0, 0.0, 0.5 * height]
        return cls("cylinder", [radius, 0.5 * height], Pose(np.eye(3), c), semantic_label, instance_id)

    @classmethod
    def ground(cls, center, size, yaw=0.0, semantic_label=0, instance_id=0) -> "Primitive":
        half = 0.5 * np.asarray(size, dtype=np.float64)[:2]
        return cls("ground", half, Pose.from_yaw(yaw, center), semantic_label, instance_id)

    def transformed(self, pose: Pose) -> "Primitive":
        return Primitive(self.shape, self.params, pose.compose(self.pose), self.semantic_label, self.instance_id)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = _element_bounds(*_pack_one(self))
        return lo, hi


def mesh_primitives(vertices, faces, pose: Pose, semantic_label: int, instance_id: int = 0) -> list[Primitive]:
    """Expand a triangle mesh into world-space triangle primitives."""
    world = pose.apply(vertices)
    tris = world[np.asarray(faces)]
    return [Primitive("triangle", t, Pose(), semantic_label, instance_id) for t in tris]


# ---------------------------------------------------------------------------
# packing


def _pack_one(prim: Primitive):
    row = np.zeros(15)
    if prim.shape == "triangle":
        v = prim.pose.apply(prim.params)
        row[0:3] = v[0]
        row[3:6] = v[1] - v[0]
        row[6:9] = v[2] - v[0]
    else:
        row[0:9] = prim.pose.rotation.reshape(9)
        row[9:12] = prim.pose.translation
        row[12 : 12 + prim.params.size] = prim.params
    return np.array([SHAPES[prim.shape]], dtype=np.int8), row[None, :]


def _element_bounds(kinds: np.ndarray, data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(kinds)
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    tri = kinds == TRIANGLE
    if tri.any():
        d = data[tri]
        v0 = d[:, 0:3]
        v1 = v0 + d[:, 3:6]
        v2 = v0 + d[:, 6:9]
        lo[tri] = np.minimum(np.minimum(v0, v1), v2)
        hi[tri] = np.maximum(np.maximum(v0, v1), v2)
    other = ~tri
    if other.any():
        d = data[other]
        rot = d[:, 0:9].reshape(-1, 3, 3)
        centre = d[:, 9:12]
        k = kinds[other]
        ext = np.empty((len(d), 3))
        box = k == BOX
        ext[box] = np.einsum("nij,nj->ni", np.abs(rot[box]), d[box, 12:15])
        cyl = k == CYLINDER
        if cyl.any():
            axis = rot[cyl][:, :, 2]
            r = d[cyl, 12:13]
            hh = d[cyl, 13:14]
            ext[cyl] = hh * np.abs(axis) + r * np.sqrt(np.clip(1.0 - axis**2, 0.0, None))
        gnd = k == GROUND
        if gnd.any():
            half = np.zeros((int(gnd.sum()), 3))
            half[:, :2] = d[gnd, 12:14]
            ext[gnd] = np.einsum("nij,nj->ni", np.abs(rot[gnd]), half)
        lo[other] = centre - ext
        hi[other] = centre + ext
    return lo, hi


def pack_primitives(primitives: list[Primitive]):
    """Flatten primitives into (kinds, data, labels, instance_ids) arrays."""
    n = len(primitives)
    kinds = np.empty(n, dtype=np.int8)
    data = np.zeros((n, 15))
    labels = np.empty(n, dtype=np.int64)
    inst = np.empty(n, dtype=np.int64)
    tri_rows = []
    tri_verts = []
    tri_rot = []
    tri_trans = []
    for i, p in enumerate(primitives):
        kinds[i] = SHAPES[p.shape]
        labels[i] = p.semantic_label
        inst[i] = p.instance_id
        if p.shape == "triangle":
            tri_rows.append(i)
            tri_verts.append(p.params)
            tri_rot.append(p.pose.rotation)
            tri_trans.append(p.pose.translation)
        else:
            data[i, 0:9] = p.pose.rotation.reshape(9)
            data[i, 9:12] = p.pose.translation
            data[i, 12 : 12 + p.params.size] = p.params
    if tri_rows:
        v = np.einsum("nij,nkj->nki", np.asarray(tri_rot), np.asarray(tri_verts)) + np.asarray(tri_trans)[:, None, :]
        rows = np.asarray(tri_rows)
        data[rows, 0:3] = v[:, 0]
        data[rows, 3:6] = v[:, 1] - v[:, 0]
        data[rows, 6:9] = v[:, 2] - v[:, 0]
    return kinds, data, labels, inst


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, inline="always")
def _slab(o, d, lo, hi):
    if d == 0.0:
        if o < lo or o > hi:
            return math.inf, -math.inf
        return -math.inf, math.inf
    inv = 1.0 / d
    t0 = (lo - o) * inv
    t1 = (hi - o) * inv
    if t0 > t1:
        return t1, t0
    return t0, t1


@nb.njit(cache=True)
def _to_local(row, ox, oy, oz, dx, dy, dz):
    px = ox - row[9]
    py = oy - row[10]
    pz = oz - row[11]
    lox = row[0] * px + row[3] * py + row[6] * pz
    loy = row[1] * px + row[4] * py + row[7] * pz
    loz = row[2] * px + row[5] * py + row[8] * pz
    ldx = row[0] * dx + row[3] * dy + row[6] * dz
    ldy = row[1] * dx + row[4] * dy + row[7] * dz
    ldz = row[2] * dx + row[5] * dy + row[8] * dz
    return lox, loy, loz, ldx, ldy, ldz


@nb.njit(cache=True)
def _hit_triangle(row, ox, oy, oz, dx, dy, dz, tmin, tmax):
    e1x, e1y, e1z = row[3], row[4], row[5]
    e2x, e2y, e2z = row[6], row[7], row[8]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-15:
        return math.inf
    inv = 1.0 / det
    tx = ox - row[0]
    ty = oy - row[1]
    tz = oz - row[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return math.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return math.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < tmin or t > tmax:
        return math.inf
    return t


@nb.njit(cache=True)
def _hit_box(row, ox, oy, oz, dx, dy, dz, tmin, tmax):
    lox, loy, loz, ldx, ldy, ldz = _to_local(row, ox, oy, oz, dx, dy, dz)
    a0, a1 = _slab(lox, ldx, -row[12], row[12])
    b0, b1 = _slab(loy, ldy, -row[13], row[13])
    c0, c1 = _slab(loz, ldz, -row[14], row[14])
    tn = max(a0, b0, c0)
    tf = min(a1, b1, c1)
    if tn > tf:
        return math.inf
    if tn >= tmin and tn <= tmax:
        return tn
    if tf >= tmin and tf <= tmax:
        return tf
    return math.inf


@nb.njit(cache=True)
def _hit_cylinder(row, ox, oy, oz, dx, dy, dz, tmin, tmax):
    lox, loy, loz, ldx, ldy, ldz = _to_local(row, ox, oy, oz, dx, dy, dz)
    r = row[12]
    hh = row[13]
    best = math.inf
    a = ldx * ldx + ldy * ldy
    if a > 0.0:
        b = lox * ldx + loy * ldy
        c = lox * lox + loy * loy - r * r
        disc = b * b - a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            for t in ((-b - sq) / a, (-b + sq) / a):
                if t >= tmin and t <= tmax and t < best:
                    z = loz + t * ldz
                    if -hh <= z <= hh:
                        best = t
    if ldz != 0.0:
        for cap in (-hh, hh):
            t = (cap - loz) / ldz
            if t >= tmin and t <= tmax and t < best:
                x = lox + t * ldx
                y = loy + t * ldy
                if x * x + y * y <= r * r:
                    best = t
    return best


@nb.njit(cache=True)
def _hit_ground(row, ox, oy, oz, dx, dy, dz, tmin, tmax):
    lox, loy, loz, ldx, ldy, ldz = _to_local(row, ox, oy, oz, dx, dy, dz)
    if ldz == 0.0:
        return math.inf
    t = -loz / ldz
    if t < tmin or t > tmax:
        return math.inf
    x = lox + t * ldx
    y = loy + t * ldy
    if abs(x) <= row[12] and abs(y) <= row[13]:
        return t
    return math.inf


@nb.njit(cache=True)
def _hit_element(kind, row, ox, oy, oz, dx, dy, dz, tmin, tmax):
    if kind == TRIANGLE:
        return _hit_triangle(row, ox, oy, oz, dx, dy, dz, tmin, tmax)
    if kind == BOX:
        return _hit_box(row, ox, oy, oz, dx, dy, dz, tmin, tmax)
    if kind == CYLINDER:
        return _hit_cylinder(row, ox, oy, oz, dx, dy, dz, tmin, tmax)
    return _hit_ground(row, ox, oy, oz, dx, dy, dz, tmin, tmax)


@nb.njit(cache=True)
def _traverse(bmin, bmax, left, right, start, count, order, kinds, data, ox, oy, oz, dx, dy, dz, tmin, tmax):
    best_t = math.inf
    best_i = -1
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        a0, a1 = _slab(ox, dx, bmin[node, 0], bmax[node, 0])
        b0, b1 = _slab(oy, dy, bmin[node, 1], bmax[node, 1])
        c0, c1 = _slab(oz, dz, bmin[node, 2], bmax[node, 2])
        tn = max(a0, b0, c0)
        tf = min(a1, b1, c1)
        # pad so that rounding in the slab test never culls a true hit
        pad = 1e-9 * (1.0 + max(abs(tn) if tn != -math.inf else 0.0, abs(tf) if tf != math.inf else 0.0))
        tn -= pad
        tf += pad
        if tn > tf or tf < tmin or tn > tmax or tn > best_t:
            continue
        if left[node] < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                e = order[k]
                t = _hit_element(kinds[e], data[e], ox, oy, oz, dx, dy, dz, tmin, tmax)
                if t < best_t or (t == best_t and t != math.inf and e < best_i):
                    best_t = t
                    best_i = e
        else:
            stack[sp] = right[node]
            stack[sp + 1] = left[node]
            sp += 2
    return best_t, best_i


@nb.njit(cache=True, parallel=True)
def _cast_bvh(bmin, bmax, left, right, start, count, order, kinds, data, origins, dirs, tmin, tmax):
    n = dirs.shape[0]
    ts = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    stride = 0 if origins.shape[0] == 1 else 1
    for i in nb.prange(n):
        j = i * stride
        t, e = _traverse(
            bmin, bmax, left, right, start, count, order, kinds, data,
            origins[j, 0], origins[j, 1], origins[j, 2], dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin, tmax,
        )
        ts[i] = t
        idx[i] = e
    return ts, idx


@nb.njit(cache=True)
def _cast_linear(kinds, data, origins, dirs, tmin, tmax):
    n = dirs.shape[0]
    ts = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    stride = 0 if origins.shape[0] == 1 else 1
    for i in range(n):
        j = i * stride
        best_t = math.inf
        best_i = -1
        for e in range(kinds.shape[0]):
            t = _hit_element(
                kinds[e], data[e], origins[j, 0], origins[j, 1], origins[j, 2],
                dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin, tmax,
            )
            if t < best_t:
                best_t = t
                best_i = e
        ts[i] = best_t
        idx[i] = best_i
    return ts, idx


# ---------------------------------------------------------------------------
# BVH


@dataclass(frozen=True)
class Hit:
    t: float
    semantic_label: int
    instance_id: int
    primitive: int


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened bounding volume hierarchy; node 0 is the root.

    Interior nodes have ``left >= 0``; leaves cover ``order[start:start+count]``.
    """

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    kinds: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    instance_ids: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_primitives(self) -> int:
        return len(self.kinds)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)


def build_bvh(primitives: list[Primitive], leaf_size: int = LEAF_SIZE) -> Bvh:
    """Build a BVH by median split of centroids along the longest axis."""
    if len(primitives) == 0:
        raise EmptyScene("cannot build a BVH over zero primitives")
    kinds, data, labels, inst = pack_primitives(primitives)
    return build_bvh_packed(kinds, data, labels, inst, leaf_size)


@nb.njit(cache=True)
def _build_nodes(lo, hi, cent, leaf_size):
    n = lo.shape[0]
    order = np.arange(n)
    cap = 2 * n
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    count[0] = n
    n_nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        c = count[node]
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for a in range(3):
            bmin[node, a] = np.inf
            bmax[node, a] = -np.inf
        for k in range(s, s + c):
            e = order[k]
            for a in range(3):
                bmin[node, a] = min(bmin[node, a], lo[e, a])
                bmax[node, a] = max(bmax[node, a], hi[e, a])
                cmin[a] = min(cmin[a], cent[e, a])
                cmax[a] = max(cmax[a], cent[e, a])
        if c <= leaf_size:
            continue
        axis = 0
        for a in range(1, 3):
            if cmax[a] - cmin[a] > cmax[axis] - cmin[axis]:
                axis = a
        if cmax[axis] > cmin[axis]:
            ids = order[s : s + c].copy()
            keys = np.empty(c)
            for k in range(c):
                keys[k] = cent[ids[k], axis]
            perm = np.argsort(keys, kind="mergesort")
            for k in range(c):
                order[s + k] = ids[perm[k]]
        mid = c // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r
        start[l] = s
        count[l] = mid
        start[r] = s + mid
        count[r] = c - mid
        stack[sp] = r
        stack[sp + 1] = l
        sp += 2
    return bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


def build_bvh_packed(kinds, data, labels, instance_ids, leaf_size: int = LEAF_SIZE) -> Bvh:
    if len(kinds) == 0:
        raise EmptyScene("cannot build a BVH over zero primitives")
    lo, hi = _element_bounds(kinds, data)
    cent = 0.5 * (lo + hi)
    nodes = _build_nodes(lo, hi, cent, int(leaf_size))
    return Bvh(
        *(np.ascontiguousarray(a) for a in nodes), kinds, data,
        np.asarray(labels, dtype=np.int64), np.asarray(instance_ids, dtype=np.int64),
    )


def cast_rays(bvh: Bvh, origins, directions, t_min: float = DEFAULT_T_MIN, t_max: float = math.inf):
    """Nearest hit per ray. Returns (t, primitive index) with inf / -1 on a miss.

    ``origins`` is (N, 3) or a single (3,) origin shared by all rays.
    """
    o = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    return _cast_bvh(
        bvh.bmin, bvh.bmax, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order,
        bvh.kinds, bvh.data, o, d, float(t_min), float(t_max),
    )


def cast_rays_linear(bvh: Bvh, origins, directions, t_min: float = DEFAULT_T_MIN, t_max: float = math.inf):
    """Exhaustive per-primitive nearest hit; the reference for BVH traversal."""
    o = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    return _cast_linear(bvh.kinds, bvh.data, o, d, float(t_min), float(t_max))


def intersect(bvh: Bvh, ray: Ray, t_min: float = DEFAULT_T_MIN, t_max: float = math.inf) -> Hit | None:
    if t_min < 0 or not t_max > t_min:
        raise ValueError("require 0 <= t_min < t_max")
    ts, idx = cast_rays(bvh, ray.origin, ray.direction, t_min, t_max)
    if idx[0] < 0:
        return None
    e = int(idx[0])
    return Hit(float(ts[0]), int(bvh.labels[e]), int(bvh.instance_ids[e]), e)
