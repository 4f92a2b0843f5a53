"""Regenerate src/nhgln/resources/montage_62.txt.

Idealized spherical 10-10 positions on a 9 cm head sphere, x = right,
y = nasion, z = vertex. The equator (Fpz, T7, Oz) is split into 18 degree
steps; the midline arc Fpz-Cz-Oz into 22.5 degree steps; every lateral row
is spread evenly along the circle through its two equator end points and
its midline electrode. CB1/CB2 sit one step below the equator behind PO7/PO8.
"""

from pathlib import Path

import numpy as np

RADIUS = 9.0
ROWS = [
    # (row names left..right, midline polar angle in degrees, anterior?)
    (["FP1", "FPZ", "FP2"], 90.0, True, 18.0),
    (["AF3", "AF4"], 67.5, True, None),
    (["F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8"], 45.0, True, 54.0),
    (["FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8"], 22.5, True, 72.0),
    (["T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8"], 0.0, True, 90.0),
    (["TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8"], 22.5, False, 108.0),
    (["P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8"], 45.0, False, 126.0),
    (["PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8"], 67.5, False, 144.0),
    (["O1", "OZ", "O2"], 90.0, False, 162.0),
]


def sph(polar, azimuth):
    """Unit vector; azimuth measured from +y toward -x (left)."""
    t, p = np.radians(polar), np.radians(azimuth)
    return np.array([-np.sin(t) * np.sin(p), np.sin(t) * np.cos(p), np.cos(t)])


def arc(left, mid, right, n):
    """n+1 evenly spaced points on the circle through three points."""
    a, b, c = left, mid, right
    ab, ac = b - a, c - a
    normal = np.cross(ab, ac)
    center = a + (np.dot(ac, ac) * np.cross(normal, ab) + np.dot(ab, ab) * np.cross(ac, normal)) / (
        2 * np.dot(normal, normal)
    )
    u = (a - center) / np.linalg.norm(a - center)
    w = np.cross(normal / np.linalg.norm(normal), u)
    r = np.linalg.norm(a - center)
    end = np.arctan2(np.dot(c - center, w), np.dot(c - center, u)) % (2 * np.pi)
    angles = np.linspace(0, end, n + 1)
    pts = center + r * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * w)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def main():
    pos = {}
    for names, mid_polar, anterior, edge_az in ROWS:
        mid = sph(mid_polar, 0.0 if anterior else 180.0)
        if names[0] == "AF3":
            full = arc(sph(90, 36), mid, sph(90, -36), 8)
            pos["AF3"], pos["AF4"] = full[2], full[6]
            continue
        left, right = sph(90, edge_az), sph(90, -edge_az)
        if mid_polar == 0.0:
            mid = np.array([0.0, 0.0, 1.0])
        pts = arc(left, mid, right, len(names) - 1) if mid_polar < 90 else None
        if pts is None:
            az = np.linspace(edge_az, -edge_az, len(names)) if anterior else np.linspace(edge_az, 360 - edge_az, len(names))
            pts = np.array([sph(90, a) for a in az])
        for n, p in zip(names, pts):
            pos[n] = p
    pos["CB1"] = sph(112.5, 153.0)
    pos["CB2"] = sph(112.5, -153.0)
    order = [
        "FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8",
        "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1",
        "CZ", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6",
        "TP8", "P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3", "POZ",
        "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2",
    ]
    assert len(order) == 62 and set(order) == set(pos)
    out = Path(__file__).resolve().parents[1] / "src" / "nhgln" / "resources" / "montage_62.txt"
    lines = [n + "".join(f" {round(RADIUS * v, 4) + 0.0:.4f}" for v in pos[n]) for n in order]
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
