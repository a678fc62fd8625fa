"""Configurable 2D U-net with named parameter partitions and head surgery.

The network splits into three disjoint, exhaustive parameter groups:
``encoder`` (the down path including the bottleneck), ``decoder`` (the
up path) and one 1x1 convolution head per task.  Transfer between tasks
swaps or adds heads while the encoder/decoder weights carry over.

Inputs are expected per-image z-score normalized (``normalize_image``);
spatial sizes that are not divisible by 2^(depth-1) are reflect-padded
and the logits cropped back, so output size always equals input size.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadShape, FormatError

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class NetConfig:
    depth: int = 4          # resolution levels
    base_channels: int = 16
    in_channels: int = 1
    num_classes: int = 10   # channels of the initial task head

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Per-image z-score; the normalization every input slice gets."""
    image = np.asarray(image, dtype=np.float32)
    std = float(image.std())
    return (image - float(image.mean())) / max(std, 1e-6)


def _block(cin, cout):
    # conv bias is redundant (and gradient-free) under the following norm
    groups = min(8, cout)
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.GroupNorm(groups, cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.GroupNorm(groups, cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        chs = [cfg.base_channels * 2 ** i for i in range(cfg.depth)]
        self.encoder = nn.ModuleList(
            [_block(cfg.in_channels if i == 0 else chs[i - 1], chs[i])
             for i in range(cfg.depth)])
        self.upsamplers = nn.ModuleList(
            [nn.ConvTranspose2d(chs[i], chs[i - 1], 2, stride=2)
             for i in range(cfg.depth - 1, 0, -1)])
        self.decoder = nn.ModuleList(
            [_block(2 * chs[i - 1], chs[i - 1])
             for i in range(cfg.depth - 1, 0, -1)])
        self.heads = nn.ModuleDict(
            {"task1": nn.Conv2d(cfg.base_channels, cfg.num_classes, 1)})

    def forward(self, x, task: str | None = None):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise BadShape(f"expected (batch, {self.cfg.in_channels}, H, W) input, "
                           f"got {tuple(x.shape)}")
        if task is None:
            if len(self.heads) != 1:
                raise ValueError(f"net has heads {sorted(self.heads)}; pick one")
            task = next(iter(self.heads))
        if task not in self.heads:
            raise BadShape(f"no head named {task!r}, have {sorted(self.heads)}")

        h, w = x.shape[2], x.shape[3]
        mult = 2 ** (self.cfg.depth - 1)
        ph, pw = (-h) % mult, (-w) % mult
        if ph or pw:
            if ph >= h or pw >= w:
                raise BadShape(f"input {h}x{w} too small to pad to a multiple of {mult}")
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")

        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i < len(self.encoder) - 1:
                skips.append(x)
                x = F.max_pool2d(x, 2)
        for up, block, skip in zip(self.upsamplers, self.decoder, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        logits = self.heads[task](x)
        return logits[:, :, :h, :w]

    def head_channels(self) -> dict[str, int]:
        return {name: head.out_channels for name, head in self.heads.items()}


def build_net(cfg: NetConfig, seed: int) -> UNet:
    """Build a U-net with deterministic initialization."""
    torch.manual_seed(seed)
    return UNet(cfg)


def _fresh_head(net: UNet, k: int, seed: int) -> nn.Conv2d:
    torch.manual_seed(seed)
    head = nn.Conv2d(net.cfg.base_channels, k, 1)
    return head.to(next(net.parameters()).dtype)


def replace_head(net: UNet, k_new: int, seed: int) -> UNet:
    """New net whose encoder/decoder are bit-identical and whose single
    head is a fresh ``task2`` head with ``k_new`` channels."""
    out = copy.deepcopy(net)
    out.heads = nn.ModuleDict({"task2": _fresh_head(net, k_new, seed)})
    return out


def attach_second_head(net: UNet, k2: int, seed: int) -> UNet:
    """New net sharing encoder/decoder/task1 head, plus a fresh ``task2`` head."""
    if "task1" not in net.heads or len(net.heads) != 1:
        raise ValueError(f"expected a single task1 head, have {sorted(net.heads)}")
    out = copy.deepcopy(net)
    out.heads["task2"] = _fresh_head(net, k2, seed)
    return out


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross entropy of integer labels under softmax logits."""
    if logits.ndim != 4 or labels.ndim != 3:
        raise BadShape(f"need (B,K,H,W) logits and (B,H,W) labels, got "
                       f"{tuple(logits.shape)} and {tuple(labels.shape)}")
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise BadShape(f"logits {tuple(logits.shape)} do not match labels "
                       f"{tuple(labels.shape)}")
    labels = labels.long()
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise BadShape(f"labels must lie in [0, {logits.shape[1] - 1}]")
    return F.cross_entropy(logits, labels)


# -- parameter partitions -------------------------------------------------------

PARTITIONS = ("encoder", "decoder", "head")


def partition_of(param_name: str) -> str:
    if param_name.startswith("encoder."):
        return "encoder"
    if param_name.startswith(("decoder.", "upsamplers.")):
        return "decoder"
    if param_name.startswith("heads."):
        return "head"
    raise ValueError(f"parameter {param_name!r} belongs to no partition")


def partition_parameters(net: UNet, partition: str):
    """Named parameters of one partition ('head' may be 'head:task1' etc.)."""
    part, _, task = partition.partition(":")
    for name, p in net.named_parameters():
        if partition_of(name) != part:
            continue
        if part == "head" and task and not name.startswith(f"heads.{task}."):
            continue
        yield name, p


def parameter_checksum(net: UNet, partition: str | None = None) -> str:
    """SHA-256 over (name, raw bytes) of the partition's parameters."""
    items = (partition_parameters(net, partition) if partition
             else net.named_parameters())
    digest = hashlib.sha256()
    for name, p in sorted(items, key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(net: UNet, path, meta: dict | None = None) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "net_config": asdict(net.cfg),
        "heads": net.head_channels(),
        "state_dict": net.state_dict(),
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Load (net, meta) from a checkpoint archive."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch surfaces several unpickling error types
        raise FormatError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise FormatError(f"checkpoint {path} has schema "
                          f"{payload.get('schema_version')}, expected {CHECKPOINT_SCHEMA}")
    cfg = NetConfig(**payload["net_config"])
    net = UNet(cfg)
    net.heads = nn.ModuleDict(
        {name: nn.Conv2d(cfg.base_channels, k, 1)
         for name, k in payload["heads"].items()})
    net.load_state_dict(payload["state_dict"])
    return net, payload["meta"]
