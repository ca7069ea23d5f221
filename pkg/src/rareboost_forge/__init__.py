"""Synthetic labelled LiDAR scans with count-exact rare-class instances, plus label
mapping, augmentation, IoU evaluation and prototype-contrastive alignment."""

from .errors import (
    EmptyScene,
    ForgeError,
    FormatError,
    InfeasiblePlacement,
    SchemaError,
    ShapeError,
    UninitializedPrototype,
    UnmappedLabel,
)
from .geometry import Bvh, Hit, Pose, Primitive, Ray, build_bvh, intersect
from .labelmap import IGNORE, UNIFIED_CLASSES, LabelMap, Taxonomy, load_label_map, map_labels, validate
from .scene import SceneSpec, load_scene, place_instances, realize_scene
from .sensor import Scan, SensorConfig, simulate_scan, simulate_sequence

__version__ = "0.1.0"
