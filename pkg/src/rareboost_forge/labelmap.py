"""Raw label taxonomies and their mapping onto the unified 16-class set."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import SchemaError, UnmappedLabel

UNIFIED_CLASSES = (
    "car", "road", "building", "person", "bicycle", "motorcycle", "rider", "truck",
    "sidewalk", "fence", "vegetation", "terrain", "pole", "traffic-sign", "other-ground", "other-vehicle",
)
UNIFIED_INDEX = {name: i for i, name in enumerate(UNIFIED_CLASSES)}
# column headers used in printed tables
UNIFIED_ABBREV = (
    "car", "road", "build.", "person", "bi.cle", "mt.cle", "rider", "truck",
    "sidew.", "fence", "veget.", "terra.", "pole", "traffic-sign", "oth-g.", "oth-v.",
)
IGNORE = 255
MAX_RAW_ID = 0xFFFF

# merges the real-world map must contain, by raw class name
REAL_MERGES = {
    "rider": ("bicyclist", "motorcyclist"),
    "other-ground": ("parking", "other-ground"),
    "vegetation": ("vegetation", "trunk"),
}
SYNTHETIC_IGNORED = ("sky", "water", "train")

_ALIASES = {"bi.cle": "bicycle", "mt.cle": "motorcycle", "build.": "building", "sidew.": "sidewalk",
            "veget.": "vegetation", "terra.": "terrain", "oth-g.": "other-ground", "oth-v.": "other-vehicle"}


def unified_class(name: str) -> str:
    """Canonical unified class name; accepts the abbreviated table headers."""
    key = _ALIASES.get(name, name)
    if key not in UNIFIED_INDEX:
        raise SchemaError(f"unknown class {name!r}; expected one of {', '.join(UNIFIED_CLASSES)}")
    return key


@dataclass(frozen=True)
class Taxonomy:
    name: str
    entries: dict[int, str]

    def __post_init__(self):
        if any(not 0 <= i <= MAX_RAW_ID for i in self.entries):
            raise SchemaError(f"taxonomy {self.name}: raw ids must fit in 16 bits")

    def id_of(self, class_name: str) -> int:
        for i, n in self.entries.items():
            if n == class_name:
                return i
        raise SchemaError(f"taxonomy {self.name} has no class named {class_name!r}")

    def ids_named(self, class_name: str) -> list[int]:
        return [i for i, n in self.entries.items() if n == class_name]


@dataclass(frozen=True)
class LabelMap:
    source: Taxonomy
    rules: dict[int, int]
    ignore: frozenset[int]
    kind: str = "synthetic"
    unified_names: tuple[str, ...] = field(default=UNIFIED_CLASSES)

    @cached_property
    def _tables(self) -> tuple[np.ndarray, np.ndarray]:
        lut = np.full(MAX_RAW_ID + 1, IGNORE, dtype=np.uint8)
        known = np.zeros(MAX_RAW_ID + 1, dtype=bool)
        for raw, uid in self.rules.items():
            lut[raw] = uid
            known[raw] = True
        for raw in self.ignore:
            lut[raw] = IGNORE
            known[raw] = True
        return lut, known

    def unified_of(self, raw_id: int) -> int:
        return int(map_labels(np.array([raw_id]), self)[0])


def map_labels(labels, lm: LabelMap) -> np.ndarray:
    """Map raw ids to unified ids (uint8); ignored ids become 255."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return np.zeros(labels.shape, dtype=np.uint8)
    lut, known = lm._tables
    flat = labels.astype(np.int64).ravel()
    out_of_range = (flat < 0) | (flat > MAX_RAW_ID)
    if out_of_range.any():
        raise UnmappedLabel(flat[out_of_range][0], lm.source.name)
    bad = ~known[flat]
    if bad.any():
        raise UnmappedLabel(flat[bad][0], lm.source.name)
    return lut[flat].reshape(labels.shape)


def validate(lm: LabelMap) -> list[str]:
    """Return every violation found; an empty list means the map is sound."""
    problems = []
    ids = set(lm.source.entries)
    ruled = set(lm.rules)
    both = sorted(ruled & lm.ignore)
    if both:
        problems.append(f"disjointness: ids in both rules and ignore: {both}")
    missing = sorted(ids - ruled - set(lm.ignore))
    if missing:
        problems.append(f"totality: ids with no disposition: {missing}")
    extra = sorted((ruled | set(lm.ignore)) - ids)
    if extra:
        problems.append(f"unknown ids referenced by the map: {extra}")
    bad_targets = sorted({u for u in lm.rules.values() if not 0 <= u < len(UNIFIED_CLASSES)})
    if bad_targets:
        problems.append(f"rules target ids outside 0..15: {bad_targets}")
    if tuple(lm.unified_names) != UNIFIED_CLASSES:
        problems.append("unified class list differs from the 16 standard classes")

    def target_of(name):
        return [lm.rules.get(i) for i in lm.source.ids_named(name)]

    if lm.kind == "real":
        for unified, raws in REAL_MERGES.items():
            want = UNIFIED_INDEX[unified]
            for raw in raws:
                got = target_of(raw)
                if not got:
                    problems.append(f"merge: raw class {raw!r} missing from taxonomy")
                elif any(g != want for g in got):
                    problems.append(f"merge: raw class {raw!r} must map to {unified!r}")
    if lm.kind == "synthetic":
        if lm.source.entries.get(0) != "unlabeled":
            problems.append("synthetic taxonomy must reserve id 0 for 'unlabeled'")
        for name in SYNTHETIC_IGNORED:
            for i in lm.source.ids_named(name):
                if i not in lm.ignore:
                    problems.append(f"synthetic class {name!r} must be ignored")
    return problems


def label_map_from_dict(doc: dict) -> LabelMap:
    try:
        tax = Taxonomy(str(doc["name"]), {int(k): str(v) for k, v in doc["entries"].items()})
        rules = {}
        for raw, target in (doc.get("rules") or {}).items():
            rules[int(raw)] = UNIFIED_INDEX[unified_class(str(target))] if isinstance(target, str) else int(target)
        ignore = frozenset(int(i) for i in doc.get("ignore") or ())
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed label map: {exc}") from exc
    return LabelMap(tax, rules, ignore, str(doc.get("kind", "synthetic")))


def label_map_to_dict(lm: LabelMap) -> dict:
    return {
        "name": lm.source.name,
        "kind": lm.kind,
        "entries": dict(sorted(lm.source.entries.items())),
        "rules": {k: UNIFIED_CLASSES[v] for k, v in sorted(lm.rules.items())},
        "ignore": sorted(lm.ignore),
    }


SHIPPED_MAPS = {"carla-0.9.15": "carla.yaml", "semantickitti": "semantickitti.yaml", "unified": "unified.yaml"}


def load_label_map(path_or_name) -> LabelMap:
    """Load a mapping file, or a shipped map by taxonomy name / file stem."""
    key = str(path_or_name)
    shipped = SHIPPED_MAPS.get(key) or (key + ".yaml" if key + ".yaml" in SHIPPED_MAPS.values() else None)
    if shipped and not Path(key).exists():
        text = resources.files("rareboost_forge.data.labelmaps").joinpath(shipped).read_text()
    else:
        try:
            text = Path(key).read_text()
        except OSError as exc:
            raise SchemaError(f"cannot read label map {key}: {exc}") from exc
    return label_map_from_dict(yaml.safe_load(text))


def default_label_map(taxonomy_name: str) -> LabelMap:
    if taxonomy_name not in SHIPPED_MAPS:
        raise SchemaError(f"no shipped label map for taxonomy {taxonomy_name!r}")
    return load_label_map(taxonomy_name)


def synthetic_taxonomy() -> Taxonomy:
    return default_label_map("carla-0.9.15").source
