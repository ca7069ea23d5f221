"""Regenerate the shipped scene specs (rural, town, city).

Run from the repository root:  python tools/make_scenes.py
The outputs are plain YAML and may be edited by hand afterwards.
"""

from pathlib import Path

import yaml

OUT = Path(__file__).resolve().parents[1] / "src" / "rareboost_forge" / "data" / "scenes"

INSTANCE_TEMPLATES = {
    "car": {"label": "car", "templates": ["car_sedan", "car_hatch"]},
    "truck": {"label": "truck", "templates": ["truck_box", "truck_short"]},
    "person": {"label": "pedestrian", "templates": ["person_adult", "person_short"]},
    "bicycle": {"label": "bicycle", "templates": ["bicycle_city", "bicycle_small"]},
    "motorcycle": {"label": "motorcycle", "templates": ["motorcycle_std", "motorcycle_scooter"]},
    "rider": {"label": "rider", "templates": ["rider_bicycle", "rider_motorcycle"]},
}
SMALL = ["person", "bicycle", "motorcycle", "rider"]
LARGE = ["car", "truck"]
HEIGHTS = [18.0, 27.0, 22.0, 34.0, 15.0, 40.0, 25.0, 30.0, 20.0, 36.0]


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def ring_street(a, b, road, walk, bands, facade_depth, block_len, heights, extras=True):
    """A closed rectangular street loop with centreline corners (+-a, +-b).

    ``bands`` is a list of (inner offset, outer offset, classes) measured from
    the centreline on both sides of the ego lane.
    """
    statics = []
    regions = []
    f = road + walk  # facade offset from the centreline
    # road surface, sidewalks and markings along each side
    for horizontal, c, length in ((True, b, 2 * a), (True, -b, 2 * a), (False, a, 2 * b), (False, -a, 2 * b)):
        def ground(off, width, label, z=0.0, length=length + 2 * f):
            centre = [0.0, c + off, z] if horizontal else [c + off, 0.0, z]
            size = [length, width] if horizontal else [width, length]
            return {"shape": "ground", "label": label, "center": centre, "size": size}

        statics.append(ground(0.0, 2 * road, "road"))
        statics.append(ground(road + walk / 2, walk, "sidewalk", 0.15, length - 2 * f))
        statics.append(ground(-(road + walk / 2), walk, "sidewalk", 0.15, length - 2 * f))
        statics.append(ground(0.0, 0.15, "road-line", 0.01, length))
        lo = -length / 2 + f
        hi = length / 2 - f
        for i0, i1, classes in bands:
            for sgn in (1, -1):
                o0, o1 = sorted((c + sgn * i0, c + sgn * i1))
                poly = rect(lo, o0, hi, o1) if horizontal else rect(o0, lo, o1, hi)
                regions.append({"polygon": poly, "classes": classes})
        if extras:
            n = int((hi - lo) // 24)
            for sgn in (1, -1):
                pole_off = c + sgn * (road + 0.6)
                tree_off = c + sgn * (road + walk - 1.5)
                pole_base = [lo + 6, pole_off, 0.15] if horizontal else [pole_off, lo + 6, 0.15]
                tree_base = [lo + 18, tree_off, 0.15] if horizontal else [tree_off, lo + 18, 0.15]
                step = [24.0, 0.0, 0.0] if horizontal else [0.0, 24.0, 0.0]
                statics.append({"shape": "cylinder", "label": "pole", "base": pole_base, "radius": 0.12,
                                "height": 7.0, "repeat": {"count": n, "step": step}})
                sign_base = [pole_base[0], pole_base[1], 2.6]
                statics.append({"shape": "box", "label": "traffic-sign", "base": sign_base,
                                "size": [0.08, 0.7, 0.7] if horizontal else [0.7, 0.08, 0.7],
                                "repeat": {"count": (n + 1) // 2, "step": [2 * s for s in step]}})
                statics.append({"shape": "cylinder", "label": "vegetation", "base": tree_base, "radius": 0.25,
                                "height": 3.0, "repeat": {"count": n, "step": step}})
                crown = [tree_base[0], tree_base[1], 3.0]
                statics.append({"shape": "box", "label": "vegetation", "base": crown, "size": [3.0, 3.0, 2.5],
                                "repeat": {"count": n, "step": step}})

    # inner block facades and outer ring facades, cut into buildings of block_len
    def facade_row(x0, x1, y, depth, horizontal):
        n = max(1, int(round((x1 - x0) / block_len)))
        step = (x1 - x0) / n
        if horizontal:
            base = [x0 + step / 2, y, 0.0]
            size = [step, depth, heights[0]]
            rep = [step, 0.0, 0.0]
        else:
            base = [y, x0 + step / 2, 0.0]
            size = [depth, step, heights[0]]
            rep = [0.0, step, 0.0]
        return {"shape": "box", "label": "building", "base": base, "size": size,
                "repeat": {"count": n, "step": rep, "heights": heights}}

    ia, ib = a - f, b - f  # inner block half sizes
    d = facade_depth
    statics.append(facade_row(-ia, ia, ib - d / 2, d, True))
    statics.append(facade_row(-ia, ia, -ib + d / 2, d, True))
    statics.append(facade_row(-ib + d, ib - d, ia - d / 2, d, False))
    statics.append(facade_row(-ib + d, ib - d, -ia + d / 2, d, False))
    oa, ob = a + f, b + f
    statics.append(facade_row(-oa - d, oa + d, ob + d / 2, d, True))
    statics.append(facade_row(-oa - d, oa + d, -ob - d / 2, d, True))
    statics.append(facade_row(-ob, ob, oa + d / 2, d, False))
    statics.append(facade_row(-ob, ob, -oa - d / 2, d, False))
    return statics, regions


def city():
    a, b = 300.0, 150.0
    road, walk = 16.0, 6.0
    bands = [(2.6, 6.8, SMALL), (6.8, 16.0, LARGE)]
    statics, regions = ring_street(a, b, road, walk, bands, 20.0, 30.0, HEIGHTS)
    statics.insert(0, {"shape": "ground", "label": "terrain", "center": [0, 0, -0.05], "size": [800, 500]})
    return {
        "name": "city",
        "rng_seed": 20240601,
        "taxonomy": "carla-0.9.15",
        "extents": {"min": [-400, -250, -1], "max": [400, 250, 60]},
        "statics": statics,
        "placement_regions": regions,
        "instance_templates": INSTANCE_TEMPLATES,
        "trajectory": {"closed": True, "sensor_height": 1.73,
                       "waypoints": [[-a, -b, 0], [a, -b, 0], [a, b, 0], [-a, b, 0]]},
    }


def town():
    a, b = 120.0, 80.0
    road, walk = 12.5, 4.0
    bands = [(2.2, 5.0, SMALL), (5.0, 12.5, LARGE), (13.0, 16.0, ["person", "bicycle"])]
    statics, regions = ring_street(a, b, road, walk, bands, 14.0, 16.0, [8.0, 11.0, 6.5, 9.0, 12.0, 7.5])
    statics.insert(0, {"shape": "ground", "label": "terrain", "center": [0, 0, -0.05], "size": [400, 300]})
    return {
        "name": "town",
        "rng_seed": 20240602,
        "taxonomy": "carla-0.9.15",
        "extents": {"min": [-200, -150, -1], "max": [200, 150, 40]},
        "statics": statics,
        "placement_regions": regions,
        "instance_templates": INSTANCE_TEMPLATES,
        "trajectory": {"closed": True, "sensor_height": 1.73,
                       "waypoints": [[-a, -b, 0], [a, -b, 0], [a, b, 0], [-a, b, 0]]},
    }


def rural():
    length = 600.0
    statics = [
        {"shape": "ground", "label": "terrain", "center": [0, 0, -0.05], "size": [900, 400]},
        {"shape": "ground", "label": "road", "center": [0, 0, 0], "size": [length + 200, 20.0]},
        {"shape": "ground", "label": "road-line", "center": [0, 0, 0.01], "size": [length + 200, 0.15]},
        {"shape": "ground", "label": "ground", "center": [0, 11.5, 0.02], "size": [length + 200, 3.0]},
        {"shape": "ground", "label": "ground", "center": [0, -11.5, 0.02], "size": [length + 200, 3.0]},
    ]
    for y in (13.5, -13.5):
        statics.append({"shape": "box", "label": "fence", "base": [-length / 2, y, 0.0], "size": [18.0, 0.1, 1.2],
                        "repeat": {"count": int(length // 20) + 1, "step": [20.0, 0.0, 0.0]}})
        statics.append({"shape": "cylinder", "label": "pole", "base": [-length / 2 + 5, y * 0.95, 0.0],
                        "radius": 0.15, "height": 8.0,
                        "repeat": {"count": int(length // 50) + 1, "step": [50.0, 0.0, 0.0]}})
    for y in (30.0, -30.0, 60.0, -55.0):
        statics.append({"shape": "cylinder", "label": "vegetation", "base": [-length / 2, y, 0.0], "radius": 0.4,
                        "height": 4.0, "repeat": {"count": int(length // 15), "step": [15.0, 0.0, 0.0],
                                                  "heights": [4.0, 5.5, 3.5]}})
        statics.append({"shape": "box", "label": "vegetation", "base": [-length / 2, y, 3.5], "size": [5.0, 5.0, 4.5],
                        "repeat": {"count": int(length // 15), "step": [15.0, 0.0, 0.0]}})
    for x in (-220.0, -60.0, 140.0):
        statics.append({"shape": "box", "label": "building", "base": [x, 22.0, 0.0], "size": [14.0, 10.0, 7.0],
                        "yaw_deg": 8.0})
    regions = [
        {"polygon": rect(-length / 2, 1.5, length / 2, 9.8), "classes": ["car", "truck", "motorcycle", "bicycle", "rider"]},
        {"polygon": rect(-length / 2, -9.8, length / 2, -1.5), "classes": ["car", "truck", "motorcycle", "bicycle", "rider"]},
        {"polygon": rect(-length / 2, 14.0, length / 2, 24.0), "classes": ["person", "bicycle"]},
        {"polygon": rect(-length / 2, -24.0, length / 2, -14.0), "classes": ["person", "bicycle"]},
    ]
    return {
        "name": "rural",
        "rng_seed": 20240603,
        "taxonomy": "carla-0.9.15",
        "extents": {"min": [-450, -200, -1], "max": [450, 200, 30]},
        "statics": statics,
        "placement_regions": regions,
        "instance_templates": INSTANCE_TEMPLATES,
        "trajectory": {"closed": False, "sensor_height": 1.73,
                       "waypoints": [[-length / 2, 0, 0], [length / 2, 0, 0]]},
    }


class _Dumper(yaml.SafeDumper):
    def ignore_aliases(self, data):
        return True


def _flow_lists(dumper, data):
    flow = all(not isinstance(x, (dict, list)) for x in data) or all(
        isinstance(x, list) and all(not isinstance(y, (dict, list)) for y in x) for x in data)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


def _flow_small_dicts(dumper, data):
    flow = all(not isinstance(v, dict) for v in data.values()) and len(data) <= 8 and "polygon" not in data
    return dumper.represent_mapping("tag:yaml.org,2002:map", data, flow_style=flow)


_Dumper.add_representer(list, _flow_lists)
_Dumper.add_representer(dict, _flow_small_dicts)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (rural, town, city):
        doc = build()
        text = yaml.dump(doc, Dumper=_Dumper, sort_keys=False, width=120)
        (OUT / f"{doc['name']}.yaml").write_text(f"# generated by tools/make_scenes.py\n{text}")
        print(doc["name"], len(doc["statics"]), "static entries")


if __name__ == "__main__":
    main()
