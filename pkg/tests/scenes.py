"""Small scene documents shared by several test modules."""

CLASSES = ["car", "truck", "person", "bicycle", "motorcycle", "rider"]
TEMPLATES = {
    "car": {"label": "car", "templates": ["car_sedan", "car_hatch"]},
    "truck": {"label": "truck", "templates": ["truck_box", "truck_short"]},
    "person": {"label": "pedestrian", "templates": ["person_adult", "person_short"]},
    "bicycle": {"label": "bicycle", "templates": ["bicycle_city", "bicycle_small"]},
    "motorcycle": {"label": "motorcycle", "templates": ["motorcycle_std", "motorcycle_scooter"]},
    "rider": {"label": "rider", "templates": ["rider_bicycle", "rider_motorcycle"]},
}


def plaza(seed=11, half=14.0, loop=24.0):
    """Open square with one placement region ringed by the sensor path."""
    return {
        "name": "plaza",
        "rng_seed": seed,
        "taxonomy": "carla-0.9.15",
        "extents": {"min": [-100, -100, -1], "max": [100, 100, 30]},
        "statics": [
            {"shape": "ground", "label": "road", "center": [0, 0, 0], "size": [200, 200]},
            {"shape": "box", "label": "building", "base": [60, 0, 0], "size": [10, 30, 12]},
            {"shape": "cylinder", "label": "pole", "base": [-40, 10, 0], "radius": 0.2, "height": 6},
        ],
        "placement_regions": [
            {"polygon": [[-half, -half], [half, -half], [half, half], [-half, half]], "classes": CLASSES},
        ],
        "instance_templates": TEMPLATES,
        "trajectory": {"closed": True, "waypoints": [[-loop, -loop, 0], [loop, -loop, 0], [loop, loop, 0],
                                                      [-loop, loop, 0]]},
    }
