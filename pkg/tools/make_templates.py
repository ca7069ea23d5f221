"""Regenerate the bundled low-poly instance templates (OBJ files).

Run from the repository root:  python tools/make_templates.py
Canonical frame: origin on the ground under the object centre, +x forward, +z up.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "rareboost_forge" / "data" / "templates"

BOX_FACES = [
    (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
    (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7),
]


class Mesh:
    def __init__(self):
        self.v = []
        self.f = []

    def add(self, verts, faces):
        base = len(self.v)
        self.v.extend(map(tuple, verts))
        self.f.extend(tuple(base + i for i in face) for face in faces)
        return self

    def box(self, lo, hi, pitch=0.0, pivot=None):
        (x0, y0, z0), (x1, y1, z1) = lo, hi
        v = np.array([
            (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
            (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
        ], dtype=float)
        if pitch:
            p = np.asarray(pivot if pivot is not None else v.mean(axis=0))
            c, s = np.cos(pitch), np.sin(pitch)
            rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            v = (v - p) @ rot.T + p
        return self.add(v, BOX_FACES)

    def wheel(self, cx, cy, cz, radius, width, sides=8):
        """Prism with its axis along y."""
        ang = 2 * np.pi * (np.arange(sides) + 0.5) / sides
        ring = np.stack([cx + radius * np.cos(ang), np.zeros(sides), cz + radius * np.sin(ang)], axis=1)
        a = ring.copy()
        a[:, 1] = cy - width / 2
        b = ring.copy()
        b[:, 1] = cy + width / 2
        verts = np.vstack([a, b])
        faces = []
        for i in range(sides):
            j = (i + 1) % sides
            faces += [(i, j, sides + j), (i, sides + j, sides + i)]
        for i in range(1, sides - 1):
            faces += [(0, i + 1, i), (sides, sides + i, sides + i + 1)]
        return self.add(verts, faces)

    def write(self, path, comment):
        lines = [f"# {comment}", f"# {len(self.f)} triangles"]
        lines += [f"v {x:.4f} {y:.4f} {z:.4f}" for x, y, z in self.v]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.f]
        path.write_text("\n".join(lines) + "\n")


def car(length, width, body_h, cabin_len, cabin_h, cabin_shift):
    m = Mesh()
    m.box((-length / 2, -width / 2, 0.3), (length / 2, width / 2, 0.3 + body_h))
    m.box((cabin_shift - cabin_len / 2, -width / 2 + 0.08, 0.3 + body_h),
          (cabin_shift + cabin_len / 2, width / 2 - 0.08, 0.3 + body_h + cabin_h))
    for sx in (-1, 1):
        for sy in (-1, 1):
            m.wheel(sx * (length / 2 - 0.75), sy * (width / 2 - 0.1), 0.32, 0.32, 0.22)
    return m


def truck(cab_len, cargo_len, width, cab_h, cargo_h):
    m = Mesh()
    total = cab_len + cargo_len + 0.2
    x0 = -total / 2
    m.box((x0, -width / 2, 0.5), (x0 + cargo_len, width / 2, 0.5 + cargo_h))
    m.box((x0 + cargo_len + 0.2, -width / 2 + 0.05, 0.5), (total / 2, width / 2 - 0.05, 0.5 + cab_h))
    for x in (x0 + 0.9, x0 + 2.1, total / 2 - 0.8):
        for sy in (-1, 1):
            m.wheel(x, sy * (width / 2 - 0.2), 0.48, 0.48, 0.35)
    return m


def person(height, torso_pitch=0.0):
    s = height / 1.75
    m = Mesh()
    for y in (-0.1, 0.1):
        m.box((-0.08 * s, y - 0.075 * s, 0.0), (0.08 * s, y + 0.075 * s, 0.85 * s))
    m.box((-0.13 * s, -0.21 * s, 0.85 * s), (0.13 * s, 0.21 * s, 1.45 * s))
    m.box((-0.1 * s, -0.1 * s, 1.5 * s), (0.1 * s, 0.1 * s, 1.75 * s))
    for y in (-0.27, 0.27):
        m.box((-0.05 * s, y * s - 0.05 * s, 0.85 * s), (0.05 * s, y * s + 0.05 * s, 1.42 * s))
    return m


def two_wheeler(length, wheel_r, tyre_w, body_h, body_w, motor):
    m = Mesh()
    axle = length / 2 - wheel_r
    for x in (-axle, axle):
        m.wheel(x, 0.0, wheel_r, wheel_r, tyre_w)
    if motor:
        m.box((-axle + 0.1, -body_w / 2, wheel_r), (axle - 0.15, body_w / 2, wheel_r + body_h))
        m.box((-axle + 0.2, -0.15, wheel_r + body_h), (0.1, 0.15, wheel_r + body_h + 0.12))
    else:
        m.box((-axle, -0.02, wheel_r + 0.2), (axle - 0.1, 0.02, wheel_r + 0.25))
        m.box((-axle * 0.6, -0.02, wheel_r - 0.05), (axle * 0.7, 0.02, wheel_r + 0.0), pitch=-0.5)
    m.box((axle - 0.15, -0.3, wheel_r + body_h + 0.25), (axle - 0.05, 0.3, wheel_r + body_h + 0.3))
    return m


def rider(on_motor):
    base = two_wheeler(2.05 if on_motor else 1.7, 0.31 if on_motor else 0.34, 0.14 if on_motor else 0.05,
                       0.45 if on_motor else 0.3, 0.38, on_motor)
    seat = 0.31 + 0.45 + 0.12 if on_motor else 0.95
    for y in (-0.12, 0.12):
        base.box((-0.15, y - 0.06, seat - 0.5), (0.05, y + 0.06, seat))
    base.box((-0.25, -0.2, seat), (0.05, 0.2, seat + 0.6), pitch=0.35, pivot=(-0.1, 0.0, seat))
    base.box((0.0, -0.1, seat + 0.62), (0.2, 0.1, seat + 0.84))
    for y in (-0.22, 0.22):
        base.box((0.0, y - 0.04, seat + 0.35), (0.55, y + 0.04, seat + 0.43))
    return base


TEMPLATES = {
    "car_sedan": (car(4.4, 1.8, 0.75, 2.3, 0.55, -0.2), "car, sedan"),
    "car_hatch": (car(3.9, 1.75, 0.8, 2.2, 0.6, -0.5), "car, hatchback"),
    "truck_box": (truck(1.9, 4.3, 2.4, 2.5, 2.7), "truck, box body"),
    "truck_short": (truck(1.8, 3.6, 2.3, 2.4, 2.3), "truck, short body"),
    "person_adult": (person(1.75), "person, adult"),
    "person_short": (person(1.55), "person, short"),
    "bicycle_city": (two_wheeler(1.7, 0.34, 0.05, 0.3, 0.1, False), "bicycle"),
    "bicycle_small": (two_wheeler(1.5, 0.3, 0.05, 0.26, 0.1, False), "bicycle, small frame"),
    "motorcycle_std": (two_wheeler(2.05, 0.31, 0.14, 0.45, 0.38, True), "motorcycle"),
    "motorcycle_scooter": (two_wheeler(1.8, 0.25, 0.12, 0.4, 0.34, True), "motorcycle, scooter"),
    "rider_bicycle": (rider(False), "rider on a bicycle"),
    "rider_motorcycle": (rider(True), "rider on a motorcycle"),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (mesh, comment) in TEMPLATES.items():
        mesh.write(OUT / f"{name}.obj", comment)
        print(f"{name}: {len(mesh.f)} triangles")


if __name__ == "__main__":
    main()
