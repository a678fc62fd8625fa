"""Anatomical-position boxes and the label maps of the self-supervision task.

Two long-axis view planes drawn into a target image give two crossing
lines.  Nine square boxes are placed on them: one at the crossing and
two on either side along each line.  Predicting these boxes (plus
background) is a 10-way segmentation problem whose labels come for free
from the scan geometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import ParallelLines, PipelineError

log = logging.getLogger(__name__)

DEFAULT_SIDE = 11      # px, box edge length
DEFAULT_SPACING = 30   # px, distance between adjacent box centers
NUM_PRETEXT_LABELS = 10  # nine boxes + background

# Label layout: 1 = crossing; 2..5 walk line A (-1, -2, +1, +2 steps);
# 6..9 walk line B the same way.  "+" points toward the oriented patient
# axis of the line.
ROLE_OF_LABEL = {
    1: "intersection",
    2: "lineA-1",
    3: "lineA-2",
    4: "lineA+1",
    5: "lineA+2",
    6: "lineB-1",
    7: "lineB-2",
    8: "lineB+1",
    9: "lineB+2",
}

# Which patient axes the two crossing lines are oriented toward, per view.
VIEW_AXES = {
    "sa": ("left", "posterior"),
    "la_4ch": ("left", "superior"),
}


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class PositionBox:
    center: np.ndarray  # (row, col), continuous pixels
    side: int
    label: int
    role: str
    out_of_field: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.side < 1 or self.side % 2 == 0:
            raise ValueError(f"box side must be odd and >= 1, got {self.side}")
        if not 1 <= self.label <= 9:
            raise ValueError(f"box label must be in 1..9, got {self.label}")


@dataclass(frozen=True)
class LabelMap:
    grid: np.ndarray
    num_labels: int

    def __post_init__(self):
        grid = np.asarray(self.grid)
        object.__setattr__(self, "grid", grid)
        if grid.size and (grid.min() < 0 or grid.max() >= self.num_labels):
            raise ValueError(
                f"grid values must lie in [0, {self.num_labels - 1}], "
                f"found [{grid.min()}, {grid.max()}]")


def place_positions(line_a: geo.Line2, line_b: geo.Line2, image_size,
                    side: int = DEFAULT_SIDE,
                    spacing: int = DEFAULT_SPACING) -> list[PositionBox]:
    """Place the nine position boxes on a pair of oriented crossing lines.

    Boxes whose rounded center falls outside the image are kept but
    flagged ``out_of_field``; rasterize() clips them.
    """
    pa, da = line_a.point, line_a.direction
    pb, db = line_b.point, line_b.direction
    cross = da[0] * db[1] - da[1] * db[0]
    if abs(cross) <= geo.PARALLEL_TOL:
        raise ParallelLines(f"2D cross product {cross:.3g} <= {geo.PARALLEL_TOL}")
    diff = pb - pa
    t = (diff[0] * db[1] - diff[1] * db[0]) / cross
    inter = pa + t * da

    rows, cols = int(image_size[0]), int(image_size[1])

    def box(label, center):
        r = _round_half_up(center[0])
        c = _round_half_up(center[1])
        oof = not (0 <= r < rows and 0 <= c < cols)
        return PositionBox(center, side, label, ROLE_OF_LABEL[label], oof)

    boxes = [box(1, inter)]
    for base, d in ((2, da), (6, db)):
        boxes.append(box(base, inter - spacing * d))
        boxes.append(box(base + 1, inter - 2 * spacing * d))
        boxes.append(box(base + 2, inter + spacing * d))
        boxes.append(box(base + 3, inter + 2 * spacing * d))
    return boxes


def rasterize(boxes: list[PositionBox], image_size,
              num_labels: int = NUM_PRETEXT_LABELS) -> LabelMap:
    """Paint the boxes into an integer grid, background 0.

    A pixel belongs to a box when it lies in the side x side square
    around the rounded center (inclusive), clipped to the image.  Where
    boxes overlap the lowest label wins.
    """
    labels = [b.label for b in boxes]
    if len(set(labels)) != len(labels):
        raise ValueError(f"box labels must be distinct, got {sorted(labels)}")
    rows, cols = int(image_size[0]), int(image_size[1])
    grid = np.zeros((rows, cols), dtype=np.int16)
    for b in sorted(boxes, key=lambda b: -b.label):  # low labels painted last
        r0 = _round_half_up(b.center[0])
        c0 = _round_half_up(b.center[1])
        h = (b.side - 1) // 2
        rlo, rhi = max(r0 - h, 0), min(r0 + h, rows - 1)
        clo, chi = max(c0 - h, 0), min(c0 + h, cols - 1)
        if rlo > rhi or clo > chi:
            continue
        grid[rlo:rhi + 1, clo:chi + 1] = b.label
    return LabelMap(grid, num_labels)


def assign_line_axes(lines2, planes, axes):
    """Decide which of two projected lines carries which patient axis.

    Each line takes the axis its 3D direction is most parallel to; if
    both prefer the same axis the better-aligned line keeps it.  Ties
    within 1e-6 go to the first (left) axis.  Returns the two lines
    oriented toward axes[0] and axes[1] respectively.
    """
    d3 = [geo.direction_to_world(plane, ln.direction) for ln, plane in zip(lines2, planes)]
    score = np.array([[abs(d @ geo.PATIENT_AXES[ax]) for ax in axes] for d in d3])
    pick = [0 if score[i, 0] + 1e-6 >= score[i, 1] else 1 for i in range(2)]
    if pick[0] == pick[1]:
        j = pick[0]
        keeper = 0 if score[0, j] >= score[1, j] else 1
        pick[keeper] = j
        pick[1 - keeper] = 1 - j
    by_axis = {pick[i]: i for i in range(2)}
    line_a = geo.orient_direction(lines2[by_axis[0]], planes[by_axis[0]], axes[0])
    line_b = geo.orient_direction(lines2[by_axis[1]], planes[by_axis[1]], axes[1])
    return line_a, line_b


def pretext_label_map(target: geo.ImagePlane, aux_a: geo.ImagePlane,
                      aux_b: geo.ImagePlane, axes,
                      side: int = DEFAULT_SIDE,
                      spacing: int = DEFAULT_SPACING) -> LabelMap:
    """Construct the 10-way pretext label map for one target image.

    Intersects the two auxiliary planes with the target plane, projects
    the lines into pixels, orients them toward ``axes`` and rasterizes
    the nine boxes.  Raises the underlying geometry errors on
    degenerate configurations.
    """
    lines3 = [geo.intersect_planes(aux, target) for aux in (aux_a, aux_b)]
    lines2 = [geo.project_line(target, l3) for l3 in lines3]
    line_a, line_b = assign_line_axes(lines2, (target, target), axes)
    boxes = place_positions(line_a, line_b, target.size, side=side, spacing=spacing)
    return rasterize(boxes, target.size)


def make_pretext_labels(study, target: str, side: int = DEFAULT_SIDE,
                        spacing: int = DEFAULT_SPACING):
    """Pretext label maps for every target image of a study.

    ``target`` is "sa" (auxiliary planes: 2Ch and 4Ch) or "la_4ch"
    (auxiliary planes: 2Ch and the mid short-axis slice).  Returns a
    list of LabelMap aligned with the target images; entries are None
    for images whose geometry is degenerate, which are logged and
    skipped rather than failing the study.
    """
    if target == "sa":
        targets = [v.plane for v in study.sa_stack]
        aux = (study.la_2ch.plane, study.la_4ch.plane)
    elif target == "la_4ch":
        targets = [study.la_4ch.plane]
        mid = study.sa_stack[len(study.sa_stack) // 2]
        aux = (study.la_2ch.plane, mid.plane)
    else:
        raise ValueError(f"unknown pretext target {target!r}")

    axes = VIEW_AXES[target]
    maps = []
    for i, plane in enumerate(targets):
        try:
            maps.append(pretext_label_map(plane, aux[0], aux[1], axes,
                                          side=side, spacing=spacing))
        except PipelineError as exc:
            log.warning("skipping %s/%s %s[%d]: %s",
                        study.subject_id, study.frame, target, i, exc)
            maps.append(None)
    return maps
