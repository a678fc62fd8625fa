"""Self-supervised pretraining, the four transfer regimes and augmentation.

Transfer regimes:

* ``scratch``        random init, all parameters trained on the target task
* ``ssl_decoder``    pretrained init, encoder frozen, decoder + head trained
* ``ssl_all``        pretrained init, everything trained
* ``ssl_multitask``  pretrained init, two heads, alternating optimization:
                     one pretext sub-iteration followed by ``beta``
                     target-task sub-iterations, repeated until the target
                     task has received its full iteration budget

Every regime applies exactly ``iterations`` gradient updates to the
target-task objective, so comparisons across regimes share one budget.
Batch sampling and augmentation draw from an RNG keyed on (seed,
iteration index), which makes runs reproducible bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .errors import (BadBudget, BadShape, EmptyDataset, MissingCheckpoint,
                     TrainingDiverged)
from .unet import (NetConfig, attach_second_head, build_net, cross_entropy,
                   load_checkpoint, normalize_image, parameter_checksum,
                   replace_head, save_checkpoint)

MODES = ("scratch", "ssl_decoder", "ssl_all", "ssl_multitask")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8            # full-scale reference: 20 slices
    iterations: int = 2000         # full-scale reference: 50000
    beta: int = 10                 # target-task sub-iterations per pretext one
    seed: int = 0
    rotation_degrees: float = 30.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ValueError("learning_rate, batch_size and iterations must be positive")
        if not isinstance(self.beta, int) or isinstance(self.beta, bool) or self.beta < 1:
            raise ValueError("beta must be an integer >= 1 (it is a sub-iteration count)")
        if self.scale_range[0] <= 0 or self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale_range must be increasing and positive")


# -- augmentation ---------------------------------------------------------------

def apply_rotation_scale(image, label, angle_deg: float, scale: float):
    """Rotate and scale an (image, label) pair about the image center.

    Image is interpolated linearly and padded with its minimum, labels
    nearest-neighbour and padded with background 0.
    """
    if angle_deg == 0.0 and scale == 1.0:
        return image.copy(), label.copy()
    th = math.radians(angle_deg)
    cos, sin = math.cos(th), math.sin(th)
    # snap right-angle rotations to exact index permutations: residues of
    # ~1e-16 push edge coordinates outside the grid and clip them
    cos, sin = (0.0 if abs(v) < 1e-12 else
                math.copysign(1.0, v) if abs(abs(v) - 1.0) < 1e-12 else v
                for v in (cos, sin))
    matrix = np.array([[cos, sin], [-sin, cos]]) / scale
    center = (np.array(image.shape, dtype=float) - 1.0) / 2.0
    offset = center - matrix @ center
    image_t = ndimage.affine_transform(image, matrix, offset=offset, order=1,
                                       mode="constant", cval=float(image.min()))
    label_t = ndimage.affine_transform(label, matrix, offset=offset, order=0,
                                       mode="constant", cval=0)
    return image_t, label_t


def augment(image, label, rng, cfg: TrainConfig):
    """Draw one random rotation+scale and apply it to both maps."""
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    return apply_rotation_scale(image, label, angle, scale)


# -- batches ----------------------------------------------------------------------

def prepare_slices(pairs):
    """Normalize images and fix dtypes once, before the training loop."""
    if not pairs:
        raise EmptyDataset("no training slices")
    out = [(normalize_image(img), np.asarray(lab, dtype=np.int16))
           for img, lab in pairs]
    shapes = {img.shape for img, _ in out}
    if len(shapes) != 1:
        raise BadShape(f"training slices have mixed shapes {sorted(shapes)}")
    return out


def make_batch(slices, cfg: TrainConfig, iteration: int):
    """Sample one batch, uniformly over slices with replacement."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, iteration)))
    idx = rng.integers(len(slices), size=cfg.batch_size)
    images, labels = [], []
    for i in idx:
        img, lab = slices[i]
        if cfg.augment:
            img, lab = augment(img, lab, rng, cfg)
        images.append(img)
        labels.append(lab)
    x = torch.from_numpy(np.stack(images)[:, None].astype(np.float32))
    y = torch.from_numpy(np.stack(labels).astype(np.int64))
    return x, y


# -- schedules ---------------------------------------------------------------------

def multitask_step_schedule(beta: int, task2_budget: int) -> list[int]:
    """Alternating task ids: one task-1 step then ``beta`` task-2 steps,
    repeated until task 2 has received exactly ``task2_budget`` steps."""
    if not isinstance(beta, int) or isinstance(beta, bool) or beta < 1:
        raise BadBudget(f"beta must be an integer >= 1, got {beta!r}")
    if task2_budget < 0 or task2_budget % beta != 0:
        raise BadBudget(f"task-2 budget {task2_budget} is not divisible by beta={beta}")
    return [1, *([2] * beta)] * (task2_budget // beta)


# -- training loops -----------------------------------------------------------------

def _write_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "task", "loss"])
        for it, task, loss in rows:
            w.writerow([it, task, repr(loss)])


def _loss_sanity(rows, context):
    losses = [loss for _, _, loss in rows]
    if len(losses) < 50:
        return
    k = max(1, len(losses) // 10)
    first, last = float(np.mean(losses[:k])), float(np.mean(losses[-k:]))
    if not last < first:
        raise TrainingDiverged(
            f"{context}: mean loss went {first:.4f} -> {last:.4f}")


def train_steps(net, datasets: dict[int, list], cfg: TrainConfig, schedule,
                parameters=None, log_path=None):
    """Run one optimization stream over a task schedule.

    ``datasets`` maps task id -> prepared slice list; ``schedule`` is a
    sequence of task ids; ``parameters`` restricts what the optimizer
    updates (default: all trainable parameters).
    """
    params = list(parameters) if parameters is not None else \
        [p for p in net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    head_of_task = {1: "task1", 2: "task2"}
    if len(net.heads) == 1:
        only = next(iter(net.heads))
        head_of_task = {t: only for t in head_of_task}

    net.train()
    dtype = next(net.parameters()).dtype
    rows = []
    for step, task in enumerate(schedule):
        x, y = make_batch(datasets[task], cfg, step)
        x = x.to(dtype)
        opt.zero_grad(set_to_none=True)
        loss = cross_entropy(net(x, task=head_of_task[task]), y)
        loss.backward()
        opt.step()
        rows.append((step, task, float(loss.detach())))
    if log_path is not None:
        _write_log(log_path, rows)
    return rows


def pretrain(cfg: TrainConfig, pretext_pairs, net_cfg: NetConfig,
             out_dir) -> Path:
    """Train the position-box task from random init; returns the checkpoint path."""
    slices = prepare_slices(pretext_pairs)
    net = build_net(net_cfg, seed=cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = train_steps(net, {1: slices}, cfg, [1] * cfg.iterations,
                       log_path=out_dir / "train_log.csv")
    _loss_sanity(rows, "pretraining")
    path = out_dir / "checkpoint.pt"
    save_checkpoint(net, path, meta={"stage": "pretrain", "seed": cfg.seed,
                                     "iterations": cfg.iterations})
    return path


def finetune(mode: str, cfg: TrainConfig, annotated_pairs, num_classes: int,
             out_dir, pretrained: Path | str | None = None,
             pretext_pairs=None) -> Path:
    """Train the target segmentation task under one transfer regime."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "ssl_multitask":
        return multitask_finetune(cfg, pretext_pairs, annotated_pairs,
                                  num_classes, pretrained, out_dir)

    slices = prepare_slices(annotated_pairs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"stage": "finetune", "mode": mode, "seed": cfg.seed,
            "iterations": cfg.iterations}

    if mode == "scratch":
        net_cfg = NetConfig(num_classes=num_classes)
        net = build_net(net_cfg, seed=cfg.seed)
        params = None
    else:
        if pretrained is None:
            raise MissingCheckpoint(f"mode {mode} needs a pretrained checkpoint")
        base, _ = load_checkpoint(pretrained)
        net = replace_head(base, num_classes, seed=cfg.seed)
        if mode == "ssl_decoder":
            for name, p in net.named_parameters():
                if name.startswith("encoder."):
                    p.requires_grad_(False)
            params = [p for p in net.parameters() if p.requires_grad]
            meta["encoder_checksum_before"] = parameter_checksum(net, "encoder")
        else:
            params = None

    train_steps(net, {2: slices}, cfg, [2] * cfg.iterations,
                parameters=params, log_path=out_dir / "train_log.csv")

    if mode == "ssl_decoder":
        meta["encoder_checksum_after"] = parameter_checksum(net, "encoder")
        if meta["encoder_checksum_after"] != meta["encoder_checksum_before"]:
            raise TrainingDiverged("frozen encoder changed during ssl_decoder finetune")
    path = out_dir / "checkpoint.pt"
    save_checkpoint(net, path, meta=meta)
    return path


def multitask_finetune(cfg: TrainConfig, pretext_pairs, annotated_pairs,
                       num_classes: int, pretrained: Path | str | None,
                       out_dir) -> Path:
    """Alternating two-head finetuning: task 1 keeps the position-box head,
    task 2 is the target segmentation."""
    if pretrained is None:
        raise MissingCheckpoint("ssl_multitask needs a pretrained checkpoint")
    if pretext_pairs is None:
        raise EmptyDataset("ssl_multitask needs the pretext dataset as well")
    pretext = prepare_slices(pretext_pairs)
    annotated = prepare_slices(annotated_pairs)

    base, _ = load_checkpoint(pretrained)
    net = attach_second_head(base, num_classes, seed=cfg.seed)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = multitask_step_schedule(cfg.beta, cfg.iterations)
    train_steps(net, {1: pretext, 2: annotated}, cfg, schedule,
                log_path=out_dir / "train_log.csv")
    path = out_dir / "checkpoint.pt"
    save_checkpoint(net, path, meta={"stage": "finetune", "mode": "ssl_multitask",
                                     "seed": cfg.seed, "beta": cfg.beta,
                                     "iterations": cfg.iterations})
    return path
