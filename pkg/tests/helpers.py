"""Shared test utilities: random geometry and independent oracles.

The oracles here deliberately avoid the code paths they check: plane
intersections are sampled by solving the two plane equations directly,
rasterization is re-done per pixel, and contour distances use an
all-pairs scan.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from cardiossl.geometry import ImagePlane, pixel_to_world, plane_normal


def random_plane(rng, size=(64, 64), origin_scale=100.0, spacing_range=(1.0, 3.0)):
    rot = Rotation.random(random_state=rng.integers(2 ** 31)).as_matrix()
    origin = rng.uniform(-origin_scale, origin_scale, size=3)
    spacing = tuple(rng.uniform(*spacing_range, size=2))
    return ImagePlane(origin, rot[:, 0], rot[:, 1], spacing, size)


def plane_equation(plane):
    """(normal, offset) with normal . p = offset for all points p on the plane."""
    n = plane_normal(plane)
    return n, float(n @ plane.origin)


def sample_intersection_points(a, b, n_points=20, span=100.0):
    """Points on the intersection of two planes, found by solving the two
    plane equations with one coordinate pinned (no cross products involved)."""
    (na, ca), (nb, cb) = plane_equation(a), plane_equation(b)
    best_axis, best_det = None, 0.0
    for axis in range(3):
        cols = [i for i in range(3) if i != axis]
        det = abs(na[cols[0]] * nb[cols[1]] - na[cols[1]] * nb[cols[0]])
        if det > best_det:
            best_axis, best_det = axis, det
    assert best_det > 1e-9, "planes look parallel"
    cols = [i for i in range(3) if i != best_axis]
    lhs = np.array([[na[cols[0]], na[cols[1]]], [nb[cols[0]], nb[cols[1]]]])
    points = []
    for tau in np.linspace(-span, span, n_points):
        rhs = np.array([ca - na[best_axis] * tau, cb - nb[best_axis] * tau])
        sol = np.linalg.solve(lhs, rhs)
        p = np.empty(3)
        p[best_axis] = tau
        p[cols[0]], p[cols[1]] = sol
        points.append(p)
    return np.array(points)


def point_line_distance(points, line):
    d = points - line.point
    along = d @ line.direction
    return np.linalg.norm(d - along[:, None] * line.direction, axis=1)


def brute_force_rasterize(boxes, image_size):
    """Per-pixel point-in-box check; lowest label wins on overlap."""
    rows, cols = image_size
    grid = np.zeros((rows, cols), dtype=np.int16)
    for r in range(rows):
        for c in range(cols):
            for box in sorted(boxes, key=lambda b: b.label):
                r0 = int(np.floor(box.center[0] + 0.5))
                c0 = int(np.floor(box.center[1] + 0.5))
                h = (box.side - 1) // 2
                if abs(r - r0) <= h and abs(c - c0) <= h:
                    grid[r, c] = box.label
                    break
    return grid


def brute_force_dice(pred, gt, label):
    a = (np.asarray(pred) == label).ravel()
    b = (np.asarray(gt) == label).ravel()
    inter = sum(1 for x, y in zip(a, b) if x and y)
    total = int(a.sum()) + int(b.sum())
    return 1.0 if total == 0 else 2.0 * inter / total


def brute_force_boundary(mask):
    mask = np.asarray(mask, dtype=bool)
    rows, cols = mask.shape
    out = []
    for r in range(rows):
        for c in range(cols):
            if not mask[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < rows and 0 <= cc < cols) or not mask[rr, cc]:
                    out.append((r, c))
                    break
    return np.array(out) if out else np.empty((0, 2))


def brute_force_mcd(pred, gt, label, spacing):
    sx, sy = (spacing, spacing) if np.isscalar(spacing) else spacing
    bp = brute_force_boundary(np.asarray(pred) == label)
    bg = brute_force_boundary(np.asarray(gt) == label)
    assert len(bp) and len(bg)

    def mean_min(src, dst):
        total = 0.0
        for r, c in src:
            best = min(((r - r2) * sy) ** 2 + ((c - c2) * sx) ** 2
                       for r2, c2 in dst)
            total += best ** 0.5
        return total / len(src)

    return (mean_min(bp, bg) + mean_min(bg, bp)) / 2.0
