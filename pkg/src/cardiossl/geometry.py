"""Plane and line geometry in patient space.

Conventions used throughout the package:

* Patient coordinates follow the DICOM convention, in mm:
  +x toward the patient's left, +y posterior, +z superior.
* An image plane is described the way DICOM headers do: the patient
  position of pixel (0, 0), two unit direction cosines and the pixel
  spacing.  ``row_dir`` is the direction along which the *column* index
  grows and ``col_dir`` the direction along which the *row* index grows.
* Pixel coordinates are continuous ``(row, col)`` pairs, so that

      world(row, col) = origin + col * spacing[0] * row_dir
                               + row * spacing[1] * col_dir

  with ``spacing = (mm per column step, mm per row step)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousOrientation, OffPlanePoint, ParallelPlanes

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6
PARALLEL_TOL = 1e-6
PLANE_TOL = 1e-3  # mm, max out-of-plane residual accepted by world_to_pixel

PATIENT_AXES = {
    "left": np.array([1.0, 0.0, 0.0]),
    "posterior": np.array([0.0, 1.0, 0.0]),
    "superior": np.array([0.0, 0.0, 1.0]),
}


def _as_unit(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) and v.shape != (2,):
        raise ValueError(f"{name} must be a 2- or 3-vector, got shape {v.shape}")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be unit length, |{name}| = {np.linalg.norm(v)!r}")
    return v


@dataclass(frozen=True)
class ImagePlane:
    """A 2D acquisition plane embedded in 3D patient space."""

    origin: np.ndarray          # (3,) mm, patient position of pixel (0, 0)
    row_dir: np.ndarray         # unit, direction of increasing column index
    col_dir: np.ndarray         # unit, direction of increasing row index
    spacing: tuple[float, float]  # (mm per column step, mm per row step)
    size: tuple[int, int]       # (rows, cols)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "row_dir", _as_unit(self.row_dir, "row_dir"))
        object.__setattr__(self, "col_dir", _as_unit(self.col_dir, "col_dir"))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        if self.origin.shape != (3,):
            raise ValueError("origin must be a 3-vector")
        if abs(float(self.row_dir @ self.col_dir)) > ORTHO_TOL:
            raise ValueError("row_dir and col_dir must be orthogonal")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError("spacing components must be positive")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("size components must be positive")


@dataclass(frozen=True)
class Line3:
    """A line in patient space: ``point + t * direction``."""

    point: np.ndarray      # (3,) mm
    direction: np.ndarray  # unit 3-vector

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "direction", _as_unit(self.direction, "direction"))


@dataclass(frozen=True)
class Line2:
    """A line in continuous pixel coordinates of one image plane.

    ``positive_axis`` records, once ``orient_direction`` has run, which
    patient axis the +direction points toward ("left", "posterior" or
    "superior").
    """

    point: np.ndarray      # (2,) continuous (row, col)
    direction: np.ndarray  # unit 2-vector
    positive_axis: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "direction", _as_unit(self.direction, "direction"))
        if self.positive_axis is not None and self.positive_axis not in PATIENT_AXES:
            raise ValueError(f"unknown patient axis {self.positive_axis!r}")


def plane_normal(plane: ImagePlane) -> np.ndarray:
    """Unit normal of the plane (cross product of the direction cosines)."""
    n = np.cross(plane.row_dir, plane.col_dir)
    return n / np.linalg.norm(n)


def pixel_to_world(plane: ImagePlane, rc) -> np.ndarray:
    """Map continuous (row, col) pixel coordinates to patient mm coordinates.

    Accepts a single (2,) pair or an (..., 2) array.
    """
    rc = np.asarray(rc, dtype=float)
    sx, sy = plane.spacing
    return (plane.origin
            + rc[..., 1, None] * sx * plane.row_dir
            + rc[..., 0, None] * sy * plane.col_dir)


def world_to_pixel(plane: ImagePlane, p) -> np.ndarray:
    """Map patient mm coordinates on the plane to continuous (row, col) pixels.

    Raises OffPlanePoint if any point is more than PLANE_TOL mm off the
    plane surface.  Accepts a single (3,) point or an (..., 3) array.
    """
    p = np.asarray(p, dtype=float)
    d = p - plane.origin
    off = d @ plane_normal(plane)
    worst = np.max(np.abs(off))
    if worst > PLANE_TOL:
        raise OffPlanePoint(f"point lies {worst:.6g} mm off the plane (tol {PLANE_TOL} mm)")
    sx, sy = plane.spacing
    col = (d @ plane.row_dir) / sx
    row = (d @ plane.col_dir) / sy
    return np.stack([row, col], axis=-1)


def intersect_planes(a: ImagePlane, b: ImagePlane) -> Line3:
    """Intersection line of two non-parallel planes.

    The returned point is the point of the line closest to the patient
    origin, which makes the result deterministic.
    """
    na, nb = plane_normal(a), plane_normal(b)
    c = np.cross(na, nb)
    norm_c = np.linalg.norm(c)
    if norm_c <= PARALLEL_TOL:
        raise ParallelPlanes(f"|n_a x n_b| = {norm_c:.3g} <= {PARALLEL_TOL}")
    d = c / norm_c
    # p must satisfy both plane equations; pinning d @ p = 0 picks the
    # point closest to the origin and makes the 3x3 system non-singular.
    lhs = np.stack([na, nb, d])
    rhs = np.array([na @ a.origin, nb @ b.origin, 0.0])
    return Line3(np.linalg.solve(lhs, rhs), d)


def project_line(target: ImagePlane, line: Line3) -> Line2:
    """Draw a 3D line that lies in ``target`` as a 2D pixel-space line."""
    p0 = world_to_pixel(target, line.point)
    p1 = world_to_pixel(target, line.point + 10.0 * line.direction)
    v = p1 - p0
    return Line2(p0, v / np.linalg.norm(v))


def direction_to_world(plane: ImagePlane, d2) -> np.ndarray:
    """Unit 3D direction corresponding to a 2D pixel-space direction."""
    d2 = np.asarray(d2, dtype=float)
    sx, sy = plane.spacing
    v = d2[1] * sx * plane.row_dir + d2[0] * sy * plane.col_dir
    return v / np.linalg.norm(v)


def orient_direction(line: Line2, plane: ImagePlane, axis: str) -> Line2:
    """Flip a 2D line's direction so its 3D counterpart points toward ``axis``.

    ``axis`` is one of "left", "posterior", "superior".  Idempotent.
    """
    if axis not in PATIENT_AXES:
        raise ValueError(f"unknown patient axis {axis!r}")
    d3 = direction_to_world(plane, line.direction)
    s = float(d3 @ PATIENT_AXES[axis])
    if abs(s) <= PARALLEL_TOL:
        raise AmbiguousOrientation(f"line is perpendicular to the {axis} axis (dot {s:.3g})")
    direction = line.direction if s > 0 else -line.direction
    return Line2(line.point, direction, positive_axis=axis)
