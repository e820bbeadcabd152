#!/usr/bin/env python3
"""Regenerates data/default_scene.json.

Phantom frame: +x runs along the neck toward the head (the major axis),
+y is lateral, +z points out of the skin. All lengths in mm.
"""
import json
import math
import pathlib

X0, Y0, SPACING, NX, NY = -20.0, -110.0, 2.0, 111, 81


def skin(x, y):
    return 40.0 + 0.05 * x - (y + 30.0) ** 2 / 300.0


def r(v):
    return round(v, 6)


def vessel_points():
    vein, artery = [], []
    for i in range(39):
        x = 5.0 * i
        yv = -30.0 + 2.5 * math.sin(x / 35.0)
        zv = skin(x, yv) - (15.0 + 0.015 * x)
        rv = 4.0 + 1.8 * x / 190.0
        ya = yv + 11.0 + 0.01 * x
        za = skin(x, ya) - (19.0 + 0.01 * x)
        ra = 3.2 - 0.3 * x / 190.0
        vein.append(([r(x), r(yv), r(zv)], r(rv)))
        artery.append(([r(x), r(ya), r(za)], r(ra)))
    return vein, artery


def main():
    heights = [r(skin(X0 + ix * SPACING, Y0 + iy * SPACING)) for iy in range(NY) for ix in range(NX)]
    vein, artery = vessel_points()
    scene = {
        "version": 1,
        "surface": {
            "origin": [X0, Y0],
            "spacing": SPACING,
            "nx": NX,
            "ny": NY,
            "heights": heights,
        },
        "major_axis": [1.0, 0.0, 0.0],
        "reference_force": 5.0,
        "max_force": 10.0,
        "vein_radius_range": [3.24, 6.16],
        "vessels": [
            {
                "label": "vein",
                "centerline": [p for p, _ in vein],
                "radii": [rad for _, rad in vein],
                "compliance": 0.08,
            },
            {
                "label": "artery",
                "centerline": [p for p, _ in artery],
                "radii": [rad for _, rad in artery],
                "compliance": 0.01,
            },
        ],
        "landmarks": {
            "sn": [20.0, 10.0, r(skin(20.0, 10.0))],
            "lc": [20.0, -70.0, r(skin(20.0, -70.0))],
            "ht": [150.0, -25.0, r(skin(150.0, -25.0))],
        },
    }
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "default_scene.json"
    out.write_text(json.dumps(scene, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
