"""Instance-count plans for rare-class enrichment and dataset audits against them."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Mapping

import yaml

from .dataset_io import list_sequences, read_meta, stats
from .errors import SchemaError
from .labelmap import UNIFIED_INDEX, LabelMap, default_label_map, unified_class

DEFAULT_RARE = frozenset({"person", "bicycle", "motorcycle", "rider", "truck"})
SHIPPED_PLANS = ("baseline", "setting1", "setting2", "plan_baseline", "plan_setting1", "plan_setting2")


@dataclass(frozen=True)
class ClassCounts:
    """Nonnegative instance counts keyed by unified class name."""

    counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, n in dict(self.counts).items():
            cls = unified_class(name)
            if isinstance(n, bool) or int(n) != n or n < 0:
                raise SchemaError(f"count for {name!r} must be a nonnegative integer, got {n!r}")
            if cls in clean:
                raise SchemaError(f"class {cls!r} listed twice")
            clean[cls] = int(n)
        object.__setattr__(self, "counts", clean)

    def __getitem__(self, name: str) -> int:
        return self.counts.get(unified_class(name), 0)

    def classes(self) -> list[str]:
        return sorted(self.counts, key=UNIFIED_INDEX.__getitem__)

    def total(self, classes=None) -> int:
        if classes is None:
            return sum(self.counts.values())
        return sum(self[c] for c in classes)


@dataclass(frozen=True)
class RebalancePlan:
    baseline: ClassCounts
    additions: ClassCounts
    rare_classes: frozenset = DEFAULT_RARE

    @property
    def classes(self) -> list[str]:
        names = set(self.baseline.counts) | set(self.additions.counts)
        return sorted(names, key=UNIFIED_INDEX.__getitem__)

    @property
    def resulting(self) -> ClassCounts:
        return ClassCounts({c: self.baseline[c] + self.additions[c] for c in self.classes})

    @property
    def rare_total_before(self) -> int:
        return self.baseline.total(self.rare_classes)

    @property
    def rare_total_after(self) -> int:
        return self.resulting.total(self.rare_classes)

    def rows(self) -> list[dict]:
        res = self.resulting
        return [{"class": c, "baseline": self.baseline[c], "addition": self.additions[c], "resulting": res[c],
                 "rare": c in self.rare_classes} for c in self.classes]

    def to_dict(self) -> dict:
        return {"rows": self.rows(), "rare_total_before": self.rare_total_before,
                "rare_total_after": self.rare_total_after}


def plan(baseline, additions, rare=DEFAULT_RARE) -> RebalancePlan:
    baseline = baseline if isinstance(baseline, ClassCounts) else ClassCounts(baseline)
    additions = additions if isinstance(additions, ClassCounts) else ClassCounts(additions)
    rare = frozenset(unified_class(c) for c in rare)
    return RebalancePlan(baseline, additions, rare)


def _counts_from_file(path) -> ClassCounts:
    doc = _load_yaml(path)
    if isinstance(doc, dict) and "counts" in doc:
        doc = doc["counts"]
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a mapping of class name to count")
    return ClassCounts(doc)


def _load_yaml(path_or_name):
    path = Path(path_or_name)
    if not path.exists() and path.stem in SHIPPED_PLANS and path.parent == Path("."):
        path = files("rareboost_forge.data.plans").joinpath(f"{path.stem}.yaml")
    try:
        return yaml.safe_load(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read {path_or_name}: {exc}") from exc


def load_counts(path_or_name) -> ClassCounts:
    """Counts from a YAML mapping file, or one of the shipped plan files by name."""
    return _counts_from_file(path_or_name)


def load_plan(path) -> RebalancePlan:
    """A plan file holds ``baseline`` and ``additions`` (inline mappings or file names) and optional ``rare``."""
    doc = _load_yaml(path)
    if not isinstance(doc, dict) or "baseline" not in doc or "additions" not in doc:
        raise SchemaError(f"{path}: plan needs 'baseline' and 'additions'")
    base_dir = Path(path).parent if Path(path).exists() else None

    def part(v):
        if isinstance(v, dict):
            return ClassCounts(v)
        ref = Path(v)
        if base_dir is not None and not ref.is_absolute() and (base_dir / ref).exists():
            ref = base_dir / ref
        return load_counts(ref if ref.exists() else v)

    return plan(part(doc["baseline"]), part(doc["additions"]), doc.get("rare", DEFAULT_RARE))


def plan_to_dict(p: RebalancePlan) -> dict:
    return {"baseline": dict(p.baseline.counts), "additions": dict(p.additions.counts),
            "rare": sorted(p.rare_classes, key=UNIFIED_INDEX.__getitem__)}


@dataclass(frozen=True)
class AuditRow:
    cls: str
    baseline: int
    addition: int
    resulting: int
    realized: int

    @property
    def mismatch(self) -> bool:
        return self.realized != self.addition


@dataclass(frozen=True)
class AuditReport:
    rows: tuple[AuditRow, ...]

    @property
    def mismatches(self) -> list[str]:
        return [r.cls for r in self.rows if r.mismatch]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict:
        return {"rows": [{"class": r.cls, "baseline": r.baseline, "addition": r.addition, "resulting": r.resulting,
                          "realized": r.realized, "mismatch": r.mismatch} for r in self.rows],
                "mismatches": self.mismatches}


def _dataset_label_map(root) -> LabelMap:
    names = {read_meta(seq).get("taxonomy") for seq in list_sequences(root)} - {None}
    if len(names) > 1:
        raise SchemaError(f"dataset mixes taxonomies: {sorted(names)}")
    return default_label_map(names.pop() if names else "carla-0.9.15")


def audit(root, p: RebalancePlan, lm: LabelMap | None = None, threads: int | None = None) -> AuditReport:
    """Distinct instances per unified class in a dataset compared with the planned additions.

    The generated data holds the added instances only, so each realized count
    is compared with ``additions`` rather than the resulting total.
    """
    lm = lm or _dataset_label_map(root)
    realized = stats(root, lm, threads).instance_counts()
    res = p.resulting
    rows = tuple(AuditRow(c, p.baseline[c], p.additions[c], res[c], int(realized[UNIFIED_INDEX[c]]))
                 for c in p.classes)
    return AuditReport(rows)


def targets_of(p: RebalancePlan) -> dict[str, int]:
    """Placement targets that realize a plan's additions."""
    return {c: p.additions[c] for c in p.classes}

