"""Declarative scenes, count-exact instance placement and sensor trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import InfeasiblePlacement, SchemaError
from .geometry import TRIANGLE, Pose, Primitive, pack_primitives
from .labelmap import Taxonomy, synthetic_taxonomy

RETRY_BUDGET = 1000
SHIPPED_SCENES = ("rural", "town", "city")


@dataclass(frozen=True, eq=False)
class Template:
    name: str
    vertices: np.ndarray
    faces: np.ndarray
    footprint_radius: float

    def __post_init__(self):
        if not self.footprint_radius > 0:
            raise SchemaError(f"template {self.name}: footprint radius must be positive")

    @property
    def n_triangles(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class InstanceClass:
    label: int
    templates: tuple[Template, ...]


@dataclass(frozen=True, eq=False)
class PlacementRegion:
    polygon: np.ndarray
    classes: tuple[str, ...]
    z: float = 0.0

    @property
    def area(self) -> float:
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def contains_disk(self, x: float, y: float, r: float) -> bool:
        return _inside_with_clearance(self.polygon, x, y, r)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear waypoint path traversed at constant speed."""

    waypoints: np.ndarray
    closed: bool = False
    sensor_height: float = 1.73

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self._path(), axis=0), axis=1).sum())

    def _path(self) -> np.ndarray:
        w = self.waypoints
        return np.vstack([w, w[:1]]) if self.closed else w

    def poses(self, n: int) -> list[Pose]:
        """``n`` sensor poses equally spaced in arc length along the path."""
        path = self._path()
        if len(path) == 1 or n < 1:
            return [Pose.from_yaw(0.0, path[0] + [0, 0, self.sensor_height])] * max(n, 0)
        seg = np.diff(path, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = cum[-1]
        if self.closed:
            s = total * np.arange(n) / n
        else:
            s = total * np.arange(n) / max(n - 1, 1)
        poses = []
        for si in s:
            k = int(np.clip(np.searchsorted(cum, si, side="right") - 1, 0, len(seg) - 1))
            while seg_len[k] == 0.0 and k + 1 < len(seg):
                k += 1
            frac = (si - cum[k]) / seg_len[k] if seg_len[k] > 0 else 0.0
            pos = path[k] + frac * seg[k]
            yaw = math.atan2(seg[k][1], seg[k][0])
            poses.append(Pose.from_yaw(yaw, pos + [0.0, 0.0, self.sensor_height]))
        return poses


@dataclass(frozen=True, eq=False)
class SceneSpec:
    name: str
    rng_seed: int
    extents: tuple[np.ndarray, np.ndarray]
    statics: tuple[Primitive, ...]
    placement_regions: tuple[PlacementRegion, ...]
    instance_templates: dict[str, InstanceClass]
    trajectory: Trajectory
    sensor: dict = field(default_factory=dict)
    taxonomy: str = "carla-0.9.15"

    def __post_init__(self):
        if not 0 <= self.rng_seed < 2**64:
            raise SchemaError("rng_seed must be a 64-bit unsigned integer")
        lo, hi = self.extents
        for reg in self.placement_regions:
            if np.any(reg.polygon < lo[:2]) or np.any(reg.polygon > hi[:2]):
                raise SchemaError(f"placement region for {reg.classes} leaves the scene extents")

    def with_seed(self, seed: int) -> "SceneSpec":
        return SceneSpec(self.name, int(seed), self.extents, self.statics, self.placement_regions,
                         self.instance_templates, self.trajectory, self.sensor, self.taxonomy)


@dataclass(frozen=True)
class InstancePlacement:
    class_name: str
    template_index: int
    yaw: float
    x: float
    y: float
    z: float
    instance_id: int
    footprint_radius: float

    def pose(self) -> Pose:
        return Pose.from_yaw(self.yaw, (self.x, self.y, self.z))


# ---------------------------------------------------------------------------
# polygons


def _inside(poly: np.ndarray, x: float, y: float) -> bool:
    xs, ys = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    crosses = (ys > y) != (yj > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = (xj - xs) * (y - ys) / (yj - ys) + xs
    return bool(np.count_nonzero(crosses & (x < xint)) % 2)


def _edge_distance(poly: np.ndarray, x: float, y: float) -> float:
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = np.array([x, y]) - a
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    d = ap - t[:, None] * ab
    return float(np.sqrt(np.einsum("ij,ij->i", d, d).min()))


def _inside_with_clearance(poly, x, y, r) -> bool:
    return _inside(poly, x, y) and _edge_distance(poly, x, y) >= r


# ---------------------------------------------------------------------------
# placement


class _Grid:
    """Uniform hash grid of accepted footprint disks."""

    def __init__(self, cell: float):
        self.cell = cell
        self.cells: dict[tuple[int, int], list[int]] = {}
        self.xy: list[tuple[float, float]] = []
        self.r: list[float] = []

    def free(self, x, y, r, r_max) -> bool:
        reach = int(math.ceil((r + r_max) / self.cell))
        cx, cy = int(math.floor(x / self.cell)), int(math.floor(y / self.cell))
        for i in range(cx - reach, cx + reach + 1):
            for j in range(cy - reach, cy + reach + 1):
                for k in self.cells.get((i, j), ()):
                    px, py = self.xy[k]
                    if math.hypot(px - x, py - y) < r + self.r[k]:
                        return False
        return True

    def add(self, x, y, r):
        key = (int(math.floor(x / self.cell)), int(math.floor(y / self.cell)))
        self.cells.setdefault(key, []).append(len(self.xy))
        self.xy.append((x, y))
        self.r.append(r)


def _class_order(spec: SceneSpec, classes) -> list[str]:
    def largest(c):
        return max(t.footprint_radius for t in spec.instance_templates[c].templates)

    return sorted(classes, key=lambda c: (-largest(c), c))


def place_instances(spec: SceneSpec, targets: dict[str, int]) -> list[InstancePlacement]:
    """Place exactly ``targets[c]`` non-overlapping instances of every class ``c``.

    Classes are filled largest-footprint first; each instance gets up to
    ``RETRY_BUDGET`` uniform draws inside an area-weighted allowed region.
    """
    for cls, n in targets.items():
        if int(n) != n or n < 0:
            raise SchemaError(f"target for {cls!r} must be a nonnegative integer, got {n!r}")
    active = [c for c, n in targets.items() if n > 0]
    regions_for = {}
    for cls in active:
        if cls not in spec.instance_templates or not spec.instance_templates[cls].templates:
            raise SchemaError(f"scene {spec.name!r} has no templates for class {cls!r}")
        regs = [r for r in spec.placement_regions if cls in r.classes]
        if not regs:
            raise SchemaError(f"scene {spec.name!r} has no placement region allowing {cls!r}")
        regions_for[cls] = regs
    if not active:
        return []

    r_max = max(t.footprint_radius for c in active for t in spec.instance_templates[c].templates)
    grid = _Grid(cell=2.0 * r_max)
    rng = np.random.default_rng(spec.rng_seed)
    out = []
    next_id = 1
    for cls in _class_order(spec, active):
        templates = spec.instance_templates[cls].templates
        regs = regions_for[cls]
        areas = np.array([r.area for r in regs])
        weights = areas / areas.sum()
        bboxes = [(r.polygon.min(axis=0), r.polygon.max(axis=0)) for r in regs]
        for k in range(int(targets[cls])):
            for _ in range(RETRY_BUDGET):
                ti = int(rng.integers(len(templates)))
                ri = int(rng.choice(len(regs), p=weights))
                lo, hi = bboxes[ri]
                x, y = rng.uniform(lo, hi)
                rad = templates[ti].footprint_radius
                if regs[ri].contains_disk(x, y, rad) and grid.free(x, y, rad, r_max):
                    break
            else:
                raise InfeasiblePlacement(
                    f"could not place {cls} #{k + 1} of {targets[cls]} in scene {spec.name!r} "
                    f"after {RETRY_BUDGET} attempts"
                )
            yaw = float(rng.uniform(0.0, 2.0 * math.pi))
            grid.add(x, y, rad)
            out.append(InstancePlacement(cls, ti, yaw, float(x), float(y), regs[ri].z, next_id, rad))
            next_id += 1
    return out


# ---------------------------------------------------------------------------
# realization


def realize_scene(spec: SceneSpec, placements: list[InstancePlacement]) -> list[Primitive]:
    """Statics followed by one triangle primitive per template face per placement."""
    prims = list(spec.statics)
    for p in placements:
        tpl, label = _template_for(spec, p)
        world = p.pose().apply(tpl.vertices)
        prims.extend(Primitive("triangle", tri, Pose(), label, p.instance_id) for tri in world[tpl.faces])
    return prims


def realize_packed(spec: SceneSpec, placements: list[InstancePlacement]):
    """Same content as :func:`realize_scene`, packed directly into kernel arrays."""
    kinds, data, labels, inst = pack_primitives(list(spec.statics)) if spec.statics else (
        np.empty(0, np.int8), np.empty((0, 15)), np.empty(0, np.int64), np.empty(0, np.int64))
    parts_k, parts_d, parts_l, parts_i = [kinds], [data], [labels], [inst]
    for p in placements:
        tpl, label = _template_for(spec, p)
        tris = p.pose().apply(tpl.vertices)[tpl.faces]
        d = np.zeros((len(tris), 15))
        d[:, 0:3] = tris[:, 0]
        d[:, 3:6] = tris[:, 1] - tris[:, 0]
        d[:, 6:9] = tris[:, 2] - tris[:, 0]
        parts_k.append(np.full(len(tris), TRIANGLE, np.int8))
        parts_d.append(d)
        parts_l.append(np.full(len(tris), label, np.int64))
        parts_i.append(np.full(len(tris), p.instance_id, np.int64))
    return (np.concatenate(parts_k), np.concatenate(parts_d), np.concatenate(parts_l), np.concatenate(parts_i))


def _template_for(spec: SceneSpec, p: InstancePlacement) -> tuple[Template, int]:
    ic = spec.instance_templates.get(p.class_name)
    if ic is None:
        raise SchemaError(f"placement refers to unknown class {p.class_name!r}")
    if not 0 <= p.template_index < len(ic.templates):
        raise SchemaError(f"class {p.class_name!r} has no template #{p.template_index}")
    return ic.templates[p.template_index], ic.label


# ---------------------------------------------------------------------------
# files


def read_obj(text: str, name: str = "mesh") -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
            faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
    if not faces:
        raise SchemaError(f"template {name} has no faces")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _bundled_template(name: str) -> tuple[np.ndarray, np.ndarray]:
    node = resources.files("rareboost_forge.data.templates").joinpath(f"{name}.obj")
    if not node.is_file():
        raise SchemaError(f"no bundled template named {name!r}")
    return read_obj(node.read_text(), name)


def load_template(entry, base_dir: Path | None = None) -> Template:
    """Resolve a template entry: a bundled name, or ``{file: ..., footprint_radius: ...}``."""
    if isinstance(entry, str):
        entry = {"name": entry}
    if "file" in entry:
        path = Path(entry["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        v, f = read_obj(path.read_text(), str(path))
        name = entry.get("name", path.stem)
    else:
        name = entry["name"]
        v, f = _bundled_template(name)
    radius = entry.get("footprint_radius")
    if radius is None:
        radius = float(np.sqrt((v[:, :2] ** 2).sum(axis=1)).max())
    return Template(name, v, f, float(radius))


def _static_from_entry(e: dict, tax: Taxonomy) -> Primitive:
    label = tax.id_of(e["label"])
    shape = e["shape"]
    yaw = math.radians(float(e.get("yaw_deg", 0.0)))
    if shape == "box":
        size = np.asarray(e["size"], dtype=float)
        base = np.asarray(e["base"], dtype=float)
        return Primitive.box(base + [0, 0, size[2] / 2], size, yaw, label)
    if shape == "cylinder":
        return Primitive.cylinder(e["base"], float(e["radius"]), float(e["height"]), label)
    if shape == "ground":
        return Primitive.ground(e["center"], e["size"], yaw, label)
    if shape == "triangle":
        return Primitive.triangle(*e["vertices"], semantic_label=label)
    raise SchemaError(f"unknown static shape {shape!r}")


def _expand(entry: dict) -> list[dict]:
    """Apply an optional ``repeat: {count, step}`` to a static entry."""
    rep = entry.get("repeat")
    if not rep:
        return [entry]
    out = []
    step = np.asarray(rep["step"], dtype=float)
    key = "center" if "center" in entry else "base"
    heights = rep.get("heights")
    for i in range(int(rep["count"])):
        e = {k: v for k, v in entry.items() if k != "repeat"}
        e[key] = (np.asarray(entry[key], dtype=float) + i * step).tolist()
        if heights:
            if e["shape"] == "box":
                e["size"] = [e["size"][0], e["size"][1], heights[i % len(heights)]]
            else:
                e["height"] = heights[i % len(heights)]
        out.append(e)
    return out


def scene_from_dict(doc: dict, base_dir: Path | None = None) -> SceneSpec:
    try:
        tax = synthetic_taxonomy()
        statics = tuple(_static_from_entry(x, tax) for e in doc.get("statics", []) for x in _expand(e))
        regions = tuple(
            PlacementRegion(np.asarray(r["polygon"], dtype=float), tuple(r["classes"]), float(r.get("z", 0.0)))
            for r in doc.get("placement_regions", [])
        )
        templates = {}
        for cls, body in (doc.get("instance_templates") or {}).items():
            templates[cls] = InstanceClass(
                tax.id_of(body["label"]), tuple(load_template(t, base_dir) for t in body["templates"])
            )
        traj = doc["trajectory"]
        trajectory = Trajectory(
            np.asarray(traj["waypoints"], dtype=float).reshape(-1, 3),
            bool(traj.get("closed", False)),
            float(traj.get("sensor_height", 1.73)),
        )
        ext = doc["extents"]
        extents = (np.asarray(ext["min"], dtype=float), np.asarray(ext["max"], dtype=float))
        return SceneSpec(
            str(doc["name"]), int(doc.get("rng_seed", 0)), extents, statics, regions, templates,
            trajectory, dict(doc.get("sensor") or {}), str(doc.get("taxonomy", "carla-0.9.15")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed scene spec: {exc!r}") from exc


def load_scene(path_or_name) -> SceneSpec:
    """Load a scene file, or one of the shipped scenes by name."""
    key = str(path_or_name)
    if key in SHIPPED_SCENES and not Path(key).exists():
        text = resources.files("rareboost_forge.data.scenes").joinpath(f"{key}.yaml").read_text()
        return scene_from_dict(yaml.safe_load(text))
    path = Path(key)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read scene spec {path}: {exc}") from exc
    return scene_from_dict(yaml.safe_load(text), path.parent)


def placement_summary(placements: list[InstancePlacement]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for p in placements:
        counts[p.class_name] = counts.get(p.class_name, 0) + 1
    return counts

