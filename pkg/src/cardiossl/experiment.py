"""Grid experiments with persisted, resumable run artifacts.

A workspace directory accumulates everything one comparison needs:

    workspace/
      config_resolved.json
      data/pretrain/<subject>/<frame>/...     unannotated cohort + box labels
      data/annotated/<subject>/<frame>/...    cohort with structure labels
      runs/seed<K>/pretrain/                  checkpoint + log + manifest
      runs/seed<K>/<mode>_n<N>/               checkpoint + metrics + manifest
      tables/table_seed<K>.csv, table_pooled.csv
      plots/learning_curve_*.png

Each run directory carries a manifest written before work starts and
finalized after, holding the resolved config, input digests and every
artifact path; a cell whose manifest says "complete" is skipped on
re-run.  All cells are deterministic given (config, seed), so a grid
cell equals the same single command run standalone.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import logging
import subprocess
import uuid
from pathlib import Path

import numpy as np

from . import metrics, phantom, pretext, studies, training
from .config import PipelineConfig, resolved_dict
from .errors import FormatError, PipelineError
from .nifti import write_nifti

log = logging.getLogger(__name__)

ANNOTATED_SEED_OFFSET = 1  # annotated cohort seed = cohort.seed + this


# -- manifests -------------------------------------------------------------------

def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tree_digest(root) -> str:
    """Digest of a data directory: sha256 over sorted (relpath, file digest).

    Files directly under the root (manifest, digest note, resolved config)
    are run metadata, not data, and carry timestamps; only files inside
    subject directories count.
    """
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.parent != root:
            digest.update(str(path.relative_to(root)).encode())
            digest.update(file_sha256(path).encode())
    return digest.hexdigest()


def source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def start_manifest(run_dir, command: str, cfg: PipelineConfig,
                   inputs: dict | None = None) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "run_id": f"{run_dir.name}-{uuid.uuid4().hex[:8]}",
        "command": command,
        "status": "running",
        "created_at": _now(),
        "source_revision": source_revision(),
        "config": resolved_dict(cfg),
        "inputs": dict(inputs or {}),
        "artifacts": {},
    }
    _write_manifest(run_dir, manifest)
    return manifest


def finish_manifest(run_dir, manifest: dict, artifacts: dict) -> None:
    manifest["artifacts"] = {k: str(v) for k, v in artifacts.items()}
    manifest["status"] = "complete"
    manifest["finished_at"] = _now()
    _write_manifest(run_dir, manifest)


def _write_manifest(run_dir, manifest) -> None:
    (Path(run_dir) / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True))


def manifest_complete(run_dir) -> bool:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("status") != "complete":
        return False
    return all(Path(p).exists() for p in manifest.get("artifacts", {}).values())


# -- data stages -----------------------------------------------------------------

def generate_data(out_dir, cfg: PipelineConfig, n_subjects: int, seed: int) -> Path:
    """Generate a phantom cohort under out_dir; skipped when already complete."""
    out_dir = Path(out_dir)
    if manifest_complete(out_dir):
        log.info("cohort %s already generated, skipping", out_dir)
        return out_dir
    cohort = dataclasses.replace(cfg.cohort, seed=seed)
    manifest = start_manifest(out_dir, f"gen-data --subjects {n_subjects} --seed {seed}",
                              cfg)
    for index in range(n_subjects):
        for study in phantom.generate_subject(cohort, index):
            studies.save_study(study, out_dir)
    finish_manifest(out_dir, manifest, {"data": out_dir, "digest": _digest_note(out_dir)})
    return out_dir


def _digest_note(data_dir) -> str:
    # record the digest inside a tiny file so the manifest artifact check
    # (which wants paths) and the digest both survive
    digest = tree_digest(data_dir)
    note = Path(data_dir) / "cohort_digest.txt"
    note.write_text(digest + "\n")
    return str(note)


def make_pretext_data(data_dir, view: str, side: int, spacing: int):
    """Write position-box label volumes next to every study of a cohort.

    Returns (n_images, n_skipped) across the cohort.
    """
    data_dir = Path(data_dir)
    n_images = n_skipped = 0
    for subject in studies.list_subjects(data_dir):
        for frame_dir in sorted((data_dir / subject).iterdir()):
            if not frame_dir.is_dir():
                continue
            study = studies.load_study(frame_dir)
            maps = pretext.make_pretext_labels(study, view, side=side, spacing=spacing)
            planes = ([v.plane for v in study.sa_stack] if view == "sa"
                      else [study.la_4ch.plane])
            stack = [m.grid if m is not None else np.full(p.size, -1, np.int16)
                     for m, p in zip(maps, planes)]
            vol = np.stack(stack, axis=-1).astype(np.int16)
            if vol.shape[-1] == 1:
                vol = vol[..., 0]
            write_nifti(frame_dir / f"{view}_pretext.nii.gz", vol)
            n_images += len(maps)
            n_skipped += sum(m is None for m in maps)
    return n_images, n_skipped


# -- training cells ----------------------------------------------------------------

def _stage_train_cfg(cfg: PipelineConfig, iterations: int, seed: int):
    return dataclasses.replace(cfg.train, iterations=iterations, seed=seed)


def pretrain_cell(workspace, cfg: PipelineConfig, seed: int) -> Path:
    """Pretrain the position-box network for one seed; resumable."""
    workspace = Path(workspace)
    run_dir = workspace / "runs" / f"seed{seed}" / "pretrain"
    if manifest_complete(run_dir):
        log.info("pretrain %s already complete, skipping", run_dir)
        return run_dir / "checkpoint.pt"
    data_dir = workspace / "data" / "pretrain"
    cohort = studies.load_cohort(data_dir)
    pairs = studies.pretext_slices(cohort, cfg.pretext.views)
    if not pairs:
        raise FormatError(f"no pretext labels under {data_dir}; "
                          f"run `cardiossl make-pretext --data {data_dir}` first")
    manifest = start_manifest(run_dir, f"pretrain --seed {seed}", cfg,
                              inputs={"data": str(data_dir)})
    tc = _stage_train_cfg(cfg, cfg.experiment.pretrain_iterations, seed)
    net_cfg = dataclasses.replace(cfg.net, num_classes=pretext.NUM_PRETEXT_LABELS)
    ckpt = training.pretrain(tc, pairs, net_cfg, run_dir)
    finish_manifest(run_dir, manifest, {"checkpoint": ckpt,
                                        "train_log": run_dir / "train_log.csv"})
    return ckpt


def _annotated_split(workspace, cfg: PipelineConfig):
    data_dir = Path(workspace) / "data" / "annotated"
    cohort = studies.load_cohort(data_dir)
    if not cohort:
        raise FormatError(f"no annotated cohort under {data_dir}; "
                          f"run `cardiossl gen-data --out {data_dir}` first")
    pool_size = cfg.experiment.annotated_subjects - cfg.experiment.test_subjects
    train_pool, rest = studies.split_dataset(cohort, pool_size,
                                             cfg.experiment.split_seed)
    test = studies.first_subjects(rest, cfg.experiment.test_subjects)
    return train_pool, test


def finetune_cell(workspace, cfg: PipelineConfig, seed: int, mode: str,
                  n_subjects: int) -> Path:
    """Finetune + evaluate one (mode, budget, seed) grid cell; resumable."""
    workspace = Path(workspace)
    run_dir = workspace / "runs" / f"seed{seed}" / f"{mode}_n{n_subjects}"
    if manifest_complete(run_dir):
        log.info("cell %s already complete, skipping", run_dir)
        return run_dir

    train_pool, test = _annotated_split(workspace, cfg)
    train = studies.first_subjects(train_pool, n_subjects)
    view = cfg.experiment.view
    annotated_pairs = studies.structure_slices(train, view)
    num_classes = len(studies.SA_STRUCTURES if view == "sa"
                      else studies.LA_STRUCTURES) + 1

    pretrained = None
    pretext_pairs = None
    inputs = {"data": str(workspace / "data" / "annotated")}
    if mode != "scratch":
        pretrained = workspace / "runs" / f"seed{seed}" / "pretrain" / "checkpoint.pt"
        if not pretrained.exists():
            raise FormatError(f"missing pretrained checkpoint {pretrained}; "
                              f"run `cardiossl pretrain` for seed {seed} first")
        inputs["pretrained"] = str(pretrained)
        inputs["pretrained_sha256"] = file_sha256(pretrained)
    if mode == "ssl_multitask":
        pretrain_cohort = studies.load_cohort(workspace / "data" / "pretrain")
        pretext_pairs = studies.pretext_slices(pretrain_cohort, cfg.pretext.views)

    manifest = start_manifest(
        run_dir, f"finetune --mode {mode} --subjects {n_subjects} --seed {seed}",
        cfg, inputs=inputs)
    tc = _stage_train_cfg(cfg, cfg.experiment.finetune_iterations, seed)
    ckpt = training.finetune(mode, tc, annotated_pairs, num_classes, run_dir,
                             pretrained=pretrained, pretext_pairs=pretext_pairs)

    report = metrics.evaluate(ckpt, test, view)
    metrics_path = run_dir / "metrics_raw.csv"
    report.to_csv(metrics_path)
    finish_manifest(run_dir, manifest, {
        "checkpoint": ckpt,
        "train_log": run_dir / "train_log.csv",
        "metrics": metrics_path,
    })
    return run_dir


# -- the full grid ------------------------------------------------------------------

def _cell_args(workspace, cfg):
    for seed in cfg.experiment.seeds:
        for mode in cfg.experiment.modes:
            for n in cfg.experiment.budgets:
                yield workspace, cfg, seed, mode, n


def _run_cell(args):
    workspace, cfg, seed, mode, n = args
    finetune_cell(workspace, cfg, seed, mode, n)
    return seed, mode, n


def run_experiment(workspace, cfg: PipelineConfig, workers: int = 1) -> Path:
    """Run the whole grid {mode x budget x seed} and aggregate the results."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    from .config import save_resolved
    save_resolved(cfg, workspace / "config_resolved.json")

    exp = cfg.experiment
    generate_data(workspace / "data" / "pretrain", cfg, exp.pretrain_subjects,
                  cfg.cohort.seed)
    generate_data(workspace / "data" / "annotated", cfg, exp.annotated_subjects,
                  cfg.cohort.seed + ANNOTATED_SEED_OFFSET)

    needs_pretext = any(m != "scratch" for m in exp.modes)
    if needs_pretext:
        for view in cfg.pretext.views:
            marker = workspace / "data" / "pretrain" / f".pretext_{view}.json"
            if not marker.exists():
                n_images, n_skipped = make_pretext_data(
                    workspace / "data" / "pretrain", view,
                    cfg.pretext.side, cfg.pretext.spacing)
                marker.write_text(json.dumps(
                    {"images": n_images, "skipped": n_skipped}))
        for seed in exp.seeds:
            pretrain_cell(workspace, cfg, seed)

    cells = list(_cell_args(workspace, cfg))
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            for seed, mode, n in pool.imap_unordered(_run_cell, cells):
                log.info("cell done: seed=%d mode=%s n=%d", seed, mode, n)
    else:
        for args in cells:
            _run_cell(args)

    return aggregate_workspace(workspace, cfg)


def aggregate_workspace(workspace, cfg: PipelineConfig) -> Path:
    """Build per-seed and pooled tables plus learning-curve plots."""
    workspace = Path(workspace)
    tables_dir = workspace / "tables"
    tables_dir.mkdir(exist_ok=True)
    exp = cfg.experiment

    pooled: dict[tuple[str, int], metrics.MetricsReport] = {}
    for seed in exp.seeds:
        per_seed = {}
        for mode in exp.modes:
            for n in exp.budgets:
                path = (workspace / "runs" / f"seed{seed}" / f"{mode}_n{n}"
                        / "metrics_raw.csv")
                if not path.exists():
                    raise FormatError(f"missing {path}; the grid is incomplete")
                report = metrics.MetricsReport.from_csv(path)
                per_seed[(mode, n)] = report
                merged = pooled.setdefault((mode, n), metrics.MetricsReport())
                # tag rows by seed so pooled stats treat seeds as repeats
                for row in report.rows:
                    merged.rows.append(dataclasses.replace(
                        row, subject=f"seed{seed}:{row.subject}"))
        table, _ = metrics.aggregate_experiment(per_seed)
        table.to_csv(tables_dir / f"table_seed{seed}.csv")

    table, curves = metrics.aggregate_experiment(pooled)
    pooled_path = tables_dir / "table_pooled.csv"
    table.to_csv(pooled_path)
    metrics.plot_learning_curves(curves, workspace / "plots")
    return pooled_path
