"""Study data model, on-disk layout and dataset assembly.

A study is one subject at one cardiac frame (ED or ES): a short-axis
stack plus single 2Ch and 4Ch long-axis slices, all sharing one patient
coordinate frame.  On disk a study lives in ``<root>/<subject>/<frame>/``:

    sa.nii.gz            rows x cols x slices intensity stack
    sa.geom.json         geometry sidecar (one plane entry per slice)
    sa_label.nii.gz      structure labels (optional)
    sa_pretext.nii.gz    position-box labels (written by make-pretext)
    la_2ch.nii.gz, la_2ch.geom.json, la_2ch_label.nii.gz
    la_4ch.nii.gz, la_4ch.geom.json, la_4ch_label.nii.gz, la_4ch_pretext.nii.gz

The sidecar mirrors DICOM ImagePositionPatient / ImageOrientationPatient /
PixelSpacing semantics:

    {"view": "sa", "subject_id": "...", "frame": "ED",
     "planes": [{"origin": [x,y,z], "row_dir": [...], "col_dir": [...],
                 "spacing": [mm_per_col_step, mm_per_row_step],
                 "size": [rows, cols]}, ...]}

Structure label values: 0 background, 1 LV cavity, 2 myocardium, 3 RV;
long-axis views add 4 LA and 5 RA.  In pretext label volumes a plane of
-1 marks a slice whose box construction was skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientSubjects
from .geometry import ImagePlane, plane_normal
from .nifti import read_nifti, write_nifti

SA_STRUCTURES = {1: "LV", 2: "Myo", 3: "RV"}
LA_STRUCTURES = {1: "LV", 2: "Myo", 3: "RV", 4: "LA", 5: "RA"}
VIEWS = ("sa", "la_2ch", "la_4ch")
FRAMES = ("ED", "ES")
PARALLEL_NORMAL_TOL = 1e-6


@dataclass
class ViewImage:
    """One acquired slice: geometry, intensities and optional label maps."""

    plane: ImagePlane
    image: np.ndarray                 # (rows, cols) float32
    labels: np.ndarray | None = None  # (rows, cols) structure labels
    pretext: np.ndarray | None = None  # (rows, cols) position-box labels

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.shape != self.plane.size:
            raise FormatError(
                f"image shape {self.image.shape} != plane size {self.plane.size}")
        for name in ("labels", "pretext"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int16)
                if arr.shape != self.plane.size:
                    raise FormatError(
                        f"{name} shape {arr.shape} != plane size {self.plane.size}")
                setattr(self, name, arr)


@dataclass
class ViewStudy:
    """A geometrically consistent set of SA / 2Ch / 4Ch images."""

    subject_id: str
    frame: str
    sa_stack: list[ViewImage] = field(default_factory=list)
    la_2ch: ViewImage | None = None
    la_4ch: ViewImage | None = None

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise FormatError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        normals = [plane_normal(v.plane) for v in self.sa_stack]
        for n in normals[1:]:
            if np.linalg.norm(np.cross(normals[0], n)) > PARALLEL_NORMAL_TOL:
                raise FormatError("SA slices are not mutually parallel")
        for v in self.sa_stack:
            _check_label_values(v.labels, SA_STRUCTURES, "sa")
        for name in ("la_2ch", "la_4ch"):
            v = getattr(self, name)
            if v is not None:
                _check_label_values(v.labels, LA_STRUCTURES, name)

    @property
    def views(self):
        out = {"sa": self.sa_stack}
        if self.la_2ch is not None:
            out["la_2ch"] = [self.la_2ch]
        if self.la_4ch is not None:
            out["la_4ch"] = [self.la_4ch]
        return out


def _check_label_values(labels, structures, view):
    if labels is None:
        return
    allowed = {0, *structures}
    present = set(np.unique(labels).tolist())
    if not present <= allowed:
        raise FormatError(f"{view} labels contain {sorted(present - allowed)}, "
                          f"allowed {sorted(allowed)}")


# -- persistence --------------------------------------------------------------

def _plane_to_dict(plane: ImagePlane) -> dict:
    return {"origin": plane.origin.tolist(),
            "row_dir": plane.row_dir.tolist(),
            "col_dir": plane.col_dir.tolist(),
            "spacing": list(plane.spacing),
            "size": list(plane.size)}

def _plane_from_dict(d: dict) -> ImagePlane:
    try:
        return ImagePlane(origin=d["origin"], row_dir=d["row_dir"],
                          col_dir=d["col_dir"], spacing=d["spacing"], size=d["size"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad plane entry in geometry sidecar: {exc}") from exc


def save_study(study: ViewStudy, root) -> Path:
    """Write a study under ``root/<subject>/<frame>/``; returns that directory."""
    out = Path(root) / study.subject_id / study.frame
    out.mkdir(parents=True, exist_ok=True)
    for view, images in study.views.items():
        planes = [v.plane for v in images]
        sidecar = {"view": view, "subject_id": study.subject_id,
                   "frame": study.frame, "planes": [_plane_to_dict(p) for p in planes]}
        (out / f"{view}.geom.json").write_text(
            json.dumps(sidecar, indent=1, sort_keys=True))

        def stack(attr, dtype):
            arrs = [getattr(v, attr) for v in images]
            if all(a is None for a in arrs):
                return None
            fill = [(a if a is not None else np.full(p.size, -1, dtype))
                    for a, p in zip(arrs, planes)]
            vol = np.stack(fill, axis=-1).astype(dtype)
            return vol[..., 0] if len(images) == 1 else vol

        spacing3 = (*planes[0].spacing, 1.0)
        write_nifti(out / f"{view}.nii.gz", stack("image", np.float32),
                    spacing=spacing3[:2] if len(images) == 1 else spacing3)
        for attr, suffix in (("labels", "label"), ("pretext", "pretext")):
            vol = stack(attr, np.int16)
            if vol is not None:
                write_nifti(out / f"{view}_{suffix}.nii.gz", vol,
                            spacing=spacing3[:vol.ndim])
    return out


def _load_view(frame_dir: Path, view: str) -> list[ViewImage] | None:
    img_path = frame_dir / f"{view}.nii.gz"
    geom_path = frame_dir / f"{view}.geom.json"
    if not img_path.exists():
        return None
    if not geom_path.exists():
        raise FormatError(f"missing geometry sidecar {geom_path}")
    try:
        sidecar = json.loads(geom_path.read_text())
        planes = [_plane_from_dict(d) for d in sidecar["planes"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed geometry sidecar {geom_path}: {exc}") from exc

    vol, _ = read_nifti(img_path)
    if vol.ndim == 2:
        vol = vol[..., None]
    if vol.shape[2] != len(planes):
        raise FormatError(f"{img_path}: {vol.shape[2]} slices but "
                          f"{len(planes)} sidecar planes")

    def load_optional(suffix):
        p = frame_dir / f"{view}_{suffix}.nii.gz"
        if not p.exists():
            return None
        arr, _ = read_nifti(p)
        return arr[..., None] if arr.ndim == 2 else arr

    labels = load_optional("label")
    pretext = load_optional("pretext")
    images = []
    for i, plane in enumerate(planes):
        if vol.shape[:2] != plane.size:
            raise FormatError(f"{img_path}: image shape {vol.shape[:2]} != "
                              f"sidecar size {plane.size}")
        lab = None if labels is None else labels[..., i]
        pre = None if pretext is None else pretext[..., i]
        if pre is not None and np.all(pre == -1):
            pre = None  # slice was skipped at pretext construction
        images.append(ViewImage(plane, vol[..., i].astype(np.float32), lab, pre))
    return images


def load_study(frame_dir) -> ViewStudy:
    """Load one study from its frame directory."""
    frame_dir = Path(frame_dir)
    if not frame_dir.is_dir():
        raise FormatError(f"study directory {frame_dir} does not exist")
    sa = _load_view(frame_dir, "sa")
    la_2ch = _load_view(frame_dir, "la_2ch")
    la_4ch = _load_view(frame_dir, "la_4ch")
    if sa is None:
        raise FormatError(f"{frame_dir} has no sa.nii.gz")
    return ViewStudy(subject_id=frame_dir.parent.name, frame=frame_dir.name,
                     sa_stack=sa,
                     la_2ch=None if la_2ch is None else la_2ch[0],
                     la_4ch=None if la_4ch is None else la_4ch[0])


def list_subjects(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"data root {root} does not exist")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def load_cohort(root, subjects=None, frames=FRAMES) -> list[ViewStudy]:
    """Load all (subject, frame) studies under a data root."""
    root = Path(root)
    if subjects is None:
        subjects = list_subjects(root)
    studies = []
    for subject in subjects:
        for frame in frames:
            d = root / subject / frame
            if d.is_dir():
                studies.append(load_study(d))
    return studies


# -- splitting and slice datasets ---------------------------------------------

def _subject_of(item) -> str:
    return item.subject_id if isinstance(item, ViewStudy) else str(item)


def split_dataset(studies, n_train_subjects: int, seed: int):
    """Split by subject, never by slice.  Deterministic given seed.

    Both halves come back ordered by the shuffled subject order, so the
    first n subjects of the training half form a nested sub-budget.
    """
    subjects = sorted({_subject_of(s) for s in studies})
    if n_train_subjects > len(subjects):
        raise InsufficientSubjects(
            f"asked for {n_train_subjects} training subjects, have {len(subjects)}")
    order = np.random.default_rng(seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    by_subject: dict[str, list] = {}
    for s in studies:
        by_subject.setdefault(_subject_of(s), []).append(s)

    def pick(ids):
        return [s for sid in ids for s in by_subject[sid]]

    return (pick(shuffled[:n_train_subjects]),
            pick(shuffled[n_train_subjects:]))


def first_subjects(studies, n: int):
    """The studies of the first n distinct subjects, preserving order."""
    ids = list(dict.fromkeys(_subject_of(s) for s in studies))
    if len(ids) < n:
        raise InsufficientSubjects(f"asked for {n} subjects, have {len(ids)}")
    keep = set(ids[:n])
    return [s for s in studies if _subject_of(s) in keep]


def structure_slices(studies, view: str):
    """(image, structure labels) pairs for every annotated slice."""
    out = []
    for study in studies:
        for v in study.views.get(view, []):
            if v.labels is not None:
                out.append((v.image, v.labels))
    return out


def pretext_slices(studies, views=("sa",)):
    """(image, position-box labels) pairs for every slice with pretext labels."""
    out = []
    for study in studies:
        for view in views:
            for v in study.views.get(view, []):
                if v.pretext is not None:
                    out.append((v.image, v.pretext))
    return out
