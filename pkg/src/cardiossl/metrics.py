"""Segmentation metrics, per-cohort evaluation and result aggregation.

Dice of two empty masks is 1.0 and of one empty mask 0.0, which rewards
correctly predicting the absence of a structure on apical slices.  Mean
contour distance is the symmetric average over the two boundary point
sets of the nearest-neighbour distance in mm; slices where either mask
is empty carry no distance and are counted as exclusions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import EmptyMask, ShapeMismatch
from .studies import LA_STRUCTURES, SA_STRUCTURES
from .unet import load_checkpoint, normalize_image


def dice(pred, gt, label) -> float:
    """Overlap 2|A n B| / (|A| + |B|) of the two binary masks of ``label``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    a = pred == label
    b = gt == label
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def boundary_pixels(mask) -> np.ndarray:
    """(row, col) indices of mask pixels with at least one off-mask 4-neighbour.

    Pixels on the image border count as boundary (the outside is off-mask).
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(mask & ~interior)


def mean_contour_distance(pred, gt, label, spacing) -> float:
    """Symmetric mean boundary-to-boundary distance in mm.

    ``spacing`` is a scalar or (mm per column step, mm per row step),
    matching ImagePlane.spacing.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    bp = boundary_pixels(pred == label)
    bg = boundary_pixels(gt == label)
    if len(bp) == 0 or len(bg) == 0:
        raise EmptyMask(f"label {label}: empty mask (pred {len(bp)}, gt {len(bg)} "
                        f"boundary pixels)")
    sx, sy = (spacing, spacing) if np.isscalar(spacing) else spacing
    scale = np.array([sy, sx], dtype=float)  # rows step sy mm, cols step sx mm
    pa = bp * scale
    pb = bg * scale
    d_ab = cKDTree(pb).query(pa)[0].mean()
    d_ba = cKDTree(pa).query(pb)[0].mean()
    return float((d_ab + d_ba) / 2.0)


# -- cohort evaluation ----------------------------------------------------------

@dataclass
class MetricRow:
    subject: str
    frame: str
    structure: str
    dice: float
    mcd_mm: float  # nan when every slice was excluded


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)
    mcd_exclusions: int = 0  # slices skipped because a contour was empty

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["subject", "frame", "structure", "dice", "mcd_mm"])
            for r in self.rows:
                w.writerow([r.subject, r.frame, r.structure, repr(r.dice),
                            "" if math.isnan(r.mcd_mm) else repr(r.mcd_mm)])

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        rows = []
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                rows.append(MetricRow(rec["subject"], rec["frame"], rec["structure"],
                                      float(rec["dice"]),
                                      float(rec["mcd_mm"]) if rec["mcd_mm"] else math.nan))
        return cls(rows)

    def mean_dice(self) -> float:
        """Mean Dice over per-(subject, frame) structure averages."""
        by_case: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            by_case.setdefault((r.subject, r.frame), []).append(r.dice)
        case_means = [float(np.mean(v)) for v in by_case.values()]
        return float(np.mean(case_means))

    def aggregate(self):
        """Per-structure mean (std) of Dice and contour distance."""
        out = {}
        for structure in sorted({r.structure for r in self.rows}):
            d = [r.dice for r in self.rows if r.structure == structure]
            m = [r.mcd_mm for r in self.rows
                 if r.structure == structure and not math.isnan(r.mcd_mm)]
            out[structure] = {
                "dice_mean": float(np.mean(d)), "dice_std": float(np.std(d)),
                "mcd_mean": float(np.mean(m)) if m else math.nan,
                "mcd_std": float(np.std(m)) if m else math.nan,
                "n": len(d),
            }
        return out


# -- experiment aggregation -------------------------------------------------------

def aggregate_experiment(reports: dict):
    """Aggregate reports keyed by (mode, n_subjects) into the comparison grid.

    Returns (table, curves): ``table`` is a DataFrame with one row per
    annotation budget (ascending) and one "mean (std)" cell per mode;
    ``curves`` maps (mode, structure) to a budget-ordered list of
    (n, dice_mean, dice_std, mcd_mean, mcd_std, n_mcd_excluded) rows for
    learning-curve plots.
    """
    import pandas as pd

    modes = list(dict.fromkeys(mode for mode, _ in reports))
    budgets = sorted({n for _, n in reports})
    cells = {}
    curves: dict[tuple[str, str], list] = {}
    for (mode, n), report in reports.items():
        dices = []
        by_case: dict[tuple[str, str], list[float]] = {}
        for r in report.rows:
            by_case.setdefault((r.subject, r.frame), []).append(r.dice)
        dices = [float(np.mean(v)) for v in by_case.values()]
        cells[(mode, n)] = f"{np.mean(dices):.3f} ({np.std(dices):.3f})"
        for structure, agg in report.aggregate().items():
            curves.setdefault((mode, structure), []).append(
                (n, agg["dice_mean"], agg["dice_std"],
                 agg["mcd_mean"], agg["mcd_std"], report.mcd_exclusions))
    for rows in curves.values():
        rows.sort(key=lambda r: r[0])

    table = pd.DataFrame(
        [[cells.get((mode, n), "") for mode in modes] for n in budgets],
        index=pd.Index(budgets, name="n_subjects"), columns=modes)
    return table, curves


def plot_learning_curves(curves, out_dir):
    """Render Dice and contour-distance learning curves to PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    structures = sorted({s for _, s in curves})
    modes = sorted({m for m, _ in curves})
    paths = []
    for metric, (mean_i, std_i), ylabel in (("dice", (1, 2), "Dice"),
                                            ("mcd", (3, 4), "mean contour distance (mm)")):
        fig, axes = plt.subplots(1, len(structures),
                                 figsize=(4 * len(structures), 3.2), squeeze=False)
        for ax, structure in zip(axes[0], structures):
            for mode in modes:
                rows = curves.get((mode, structure))
                if not rows:
                    continue
                n = [r[0] for r in rows]
                mean = [r[mean_i] for r in rows]
                std = [r[std_i] for r in rows]
                ax.errorbar(n, mean, yerr=std, marker="o", capsize=3, label=mode)
            ax.set_title(structure)
            ax.set_xlabel("training subjects")
            ax.set_ylabel(ylabel)
        axes[0][-1].legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"learning_curve_{metric}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def predict_slice(net, image, task: str) -> np.ndarray:
    x = torch.from_numpy(normalize_image(image)[None, None]).float()
    with torch.no_grad():
        logits = net(x, task=task)
    return logits.argmax(dim=1)[0].numpy().astype(np.int16)


def evaluate(checkpoint, studies, view: str) -> MetricsReport:
    """Segment every annotated slice of ``view`` and score it per subject.

    ``checkpoint`` is a checkpoint path, or directly a callable
    image -> label map (useful for oracle predictors in tests).  For the
    SA stack, per-slice metrics are averaged within a subject and frame
    first; the cohort statistics in aggregate() then run over
    (subject, frame) rows.
    """
    structures = SA_STRUCTURES if view == "sa" else LA_STRUCTURES
    if callable(checkpoint):
        predictor = checkpoint
    else:
        net, _ = load_checkpoint(checkpoint)
        task = "task2" if "task2" in net.heads else "task1"
        k = net.head_channels()[task]
        if k != len(structures) + 1:
            raise ShapeMismatch(f"checkpoint head has {k} classes, view {view!r} "
                                f"needs {len(structures) + 1}")
        net.eval()

        def predictor(image):
            return predict_slice(net, image, task)

    report = MetricsReport()
    for study in studies:
        images = [v for v in study.views.get(view, []) if v.labels is not None]
        if not images:
            continue
        dices: dict[int, list[float]] = {lab: [] for lab in structures}
        dists: dict[int, list[float]] = {lab: [] for lab in structures}
        for v in images:
            pred = predictor(v.image)
            for lab in structures:
                dices[lab].append(dice(pred, v.labels, lab))
                try:
                    dists[lab].append(mean_contour_distance(
                        pred, v.labels, lab, v.plane.spacing))
                except EmptyMask:
                    report.mcd_exclusions += 1
        for lab, name in structures.items():
            mcd = float(np.mean(dists[lab])) if dists[lab] else math.nan
            report.rows.append(MetricRow(study.subject_id, study.frame, name,
                                         float(np.mean(dices[lab])), mcd))
    return report
