"""Synthetic cardiac phantoms with geometrically consistent view planes.

A phantom is a posed set of analytic shapes in patient space: an
ellipsoidal LV cavity wrapped in a myocardial shell, a crescent RV
abutting the septum, and two atrial spheres above the base.  Intensity
is per-structure base levels plus Gaussian noise (plus an optional
smooth bias field).  View planes are derived from the pose: the SA
stack is orthogonal to the LV long axis, the 2Ch/4Ch planes contain it,
so the long-axis views intersect along the LV centreline by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import DegenerateSpec
from .geometry import ImagePlane, intersect_planes, pixel_to_world
from .studies import ViewImage, ViewStudy

LV_HEIGHT_FACTOR = 2.0      # long semi-axis of the LV cavity, in lv_radius units
RV_SEMI_FACTORS = (1.25, 0.9, 0.9)  # RV ellipsoid semi-axes vs (r, r, lv half-height)
RA_RADIUS_FACTOR = 0.85
ATRIA_LIFT = 0.6            # atrial center height above the epicardial top, in atrial_size

LABEL_LV, LABEL_MYO, LABEL_RV, LABEL_LA, LABEL_RA = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Pose:
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)       # xyz Euler, radians
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # mm

    def matrix(self) -> np.ndarray:
        return Rotation.from_euler("xyz", self.angles).as_matrix()


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    lv_radius: float = 22.0       # mm, cavity short semi-axis
    myo_thickness: float = 8.0    # mm
    rv_offset: float = 34.0       # mm, RV center distance from the LV axis
    atrial_size: float = 16.0     # mm, LA sphere radius
    heart_pose: Pose = field(default_factory=Pose)
    noise_sigma: float = 0.03
    grid_size: int = 96           # isotropic volume, voxels per side
    grid_spacing: float = 2.0     # mm per voxel
    # intensity base levels: background, LV, myo, RV, LA, RA
    levels: tuple[float, ...] = (0.05, 0.85, 0.40, 0.80, 0.78, 0.74)
    bias_amplitude: float = 0.0   # relative strength of the smooth bias field
    # distractor ellipsoids painted into the background intensity (label
    # stays 0): a stand-in for thorax anatomy, so that structure intensity
    # alone cannot solve the segmentation task
    clutter: int = 0
    clutter_level: tuple[float, float] = (0.05, 1.0)
    clutter_size: tuple[float, float] = (8.0, 45.0)  # mm semi-axis range

    def __post_init__(self):
        for name in ("lv_radius", "myo_thickness", "rv_offset", "atrial_size",
                     "grid_spacing"):
            if getattr(self, name) <= 0:
                raise DegenerateSpec(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise DegenerateSpec("noise_sigma must be >= 0")
        if self.grid_size < 8:
            raise DegenerateSpec("grid_size too small to hold a heart")
        if len(self.levels) != 6:
            raise DegenerateSpec("levels must list 6 per-structure intensities")


def shell_volume_mm3(spec: PhantomSpec) -> float:
    """Closed-form myocardial shell volume (outer minus cavity ellipsoid)."""
    r, t = spec.lv_radius, spec.myo_thickness
    c = LV_HEIGHT_FACTOR * r
    return 4.0 / 3.0 * math.pi * ((r + t) ** 2 * (c + t) - r ** 2 * c)


def _patient_coords(spec: PhantomSpec) -> np.ndarray:
    """Voxel-center patient coordinates in mm, shape (3, n, n, n)."""
    n, s = spec.grid_size, spec.grid_spacing
    ax = (np.arange(n) - (n - 1) / 2.0) * s
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"))


def _canonical_coords(spec: PhantomSpec, w: np.ndarray) -> np.ndarray:
    """Heart-frame coordinates of the patient-space voxel grid."""
    rot = spec.heart_pose.matrix()
    t = np.asarray(spec.heart_pose.translation, dtype=float)
    return np.einsum("ji,jklm->iklm", rot, w - t.reshape(3, 1, 1, 1))


def _ellipsoid(q, center, semi):
    d = (q - np.reshape(center, (3, 1, 1, 1))) / np.reshape(semi, (3, 1, 1, 1))
    return np.sum(d * d, axis=0) <= 1.0


def generate_phantom(spec: PhantomSpec):
    """Generate (structure labels uint8, intensity float32) volumes.

    Deterministic given the spec; raises DegenerateSpec when any
    structure ends up with zero voxels.
    """
    r, t = spec.lv_radius, spec.myo_thickness
    c = LV_HEIGHT_FACTOR * r
    w = _patient_coords(spec)
    q = _canonical_coords(spec, w)

    labels = np.zeros(q.shape[1:], dtype=np.uint8)
    cavity = _ellipsoid(q, (0, 0, 0), (r, r, c))
    outer = _ellipsoid(q, (0, 0, 0), (r + t, r + t, c + t))
    labels[outer] = LABEL_MYO
    labels[cavity] = LABEL_LV

    rv = _ellipsoid(q, (-spec.rv_offset, 0, 0),
                    (RV_SEMI_FACTORS[0] * r, RV_SEMI_FACTORS[1] * r,
                     RV_SEMI_FACTORS[2] * c))
    labels[rv & (labels == 0)] = LABEL_RV

    a = spec.atrial_size
    z_atria = c + t + ATRIA_LIFT * a
    la = _ellipsoid(q, (0, 0, z_atria), (a, a, a))
    labels[la & (labels == 0)] = LABEL_LA
    ra = _ellipsoid(q, (-0.8 * spec.rv_offset, 0, z_atria),
                    (RA_RADIUS_FACTOR * a,) * 3)
    labels[ra & (labels == 0)] = LABEL_RA

    for lab, name in ((LABEL_LV, "LV"), (LABEL_MYO, "myocardium"),
                      (LABEL_RV, "RV"), (LABEL_LA, "LA"), (LABEL_RA, "RA")):
        if not np.any(labels == lab):
            raise DegenerateSpec(f"{name} has zero voxels; shapes collapsed "
                                 f"or fell outside the grid")

    rng = np.random.default_rng(spec.seed)
    intensity = np.asarray(spec.levels, dtype=np.float32)[labels]
    if spec.clutter > 0:
        half = (spec.grid_size - 1) / 2.0 * spec.grid_spacing
        background = labels == 0
        for _ in range(spec.clutter):
            center = rng.uniform(-0.85 * half, 0.85 * half, size=3)
            semi = rng.uniform(*spec.clutter_size, size=3)
            level = rng.uniform(*spec.clutter_level)
            blob = _ellipsoid(w, center, semi)
            intensity[blob & background] = level
    if spec.bias_amplitude > 0:
        # two random low-frequency cosine ripples, wavelength 150-400 mm
        bias = np.zeros(labels.shape, dtype=np.float32)
        for _ in range(2):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            k = 2 * math.pi / rng.uniform(150.0, 400.0)
            phase = rng.uniform(0, 2 * math.pi)
            bias += np.cos(k * np.einsum("i,iklm->klm", direction, w) + phase)
        intensity = intensity * (1.0 + spec.bias_amplitude * 0.5 * bias)
    if spec.noise_sigma > 0:
        intensity = intensity + rng.normal(
            0.0, spec.noise_sigma, size=labels.shape).astype(np.float32)
    return labels, intensity.astype(np.float32)


# -- view sampling -------------------------------------------------------------

@dataclass(frozen=True)
class ViewConfig:
    image_size: tuple[int, int] = (64, 64)
    image_spacing: tuple[float, float] = (2.5, 2.5)  # (mm/col step, mm/row step)
    n_sa_slices: int = 10
    sa_coverage: float = 0.9        # SA offsets span +-coverage * outer half-height
    azimuth_4ch: float = 0.0        # radians, in-plane direction of the 4Ch view
    azimuth_2ch: float = math.pi / 3
    la_center_shift: float = 0.25   # LA image center shift toward the base
    center_jitter: float = 10.0     # mm, max random in-plane decentering per view


def _plane(center, row_dir, col_dir, cfg: ViewConfig, jitter) -> ImagePlane:
    rows, cols = cfg.image_size
    sx, sy = cfg.image_spacing
    center = (np.asarray(center, dtype=float)
              + jitter[0] * np.asarray(row_dir) + jitter[1] * np.asarray(col_dir))
    origin = (center
              - (cols - 1) / 2.0 * sx * np.asarray(row_dir)
              - (rows - 1) / 2.0 * sy * np.asarray(col_dir))
    return ImagePlane(origin, row_dir, col_dir, (sx, sy), cfg.image_size)


def draw_view_jitter(cfg: ViewConfig, rng) -> dict[str, np.ndarray]:
    """Per-view in-plane decentering, so hearts are not always image-centred."""
    j = cfg.center_jitter
    return {view: rng.uniform(-j, j, size=2) for view in ("sa", "la_2ch", "la_4ch")}


def view_planes(spec: PhantomSpec, cfg: ViewConfig, jitter=None):
    """SA stack planes plus the 2Ch and 4Ch planes for a posed phantom.

    ``jitter`` maps view name to an in-plane (row_dir, col_dir) offset in
    mm; the SA stack shares one offset so its slices stay aligned.
    """
    if jitter is None:
        jitter = {v: np.zeros(2) for v in ("sa", "la_2ch", "la_4ch")}
    rot = spec.heart_pose.matrix()
    u, v, axis = rot[:, 0], rot[:, 1], rot[:, 2]
    center = np.asarray(spec.heart_pose.translation, dtype=float)
    half_height = LV_HEIGHT_FACTOR * spec.lv_radius + spec.myo_thickness

    offsets = np.linspace(-cfg.sa_coverage, cfg.sa_coverage,
                          cfg.n_sa_slices) * half_height
    sa = [_plane(center + off * axis, u, v, cfg, jitter["sa"]) for off in offsets]

    la_center = center + cfg.la_center_shift * half_height * axis
    la = {}
    for view, az in (("la_4ch", cfg.azimuth_4ch), ("la_2ch", cfg.azimuth_2ch)):
        w = math.cos(az) * u + math.sin(az) * v
        la[view] = _plane(la_center, w, -axis, cfg, jitter[view])
    return sa, la["la_2ch"], la["la_4ch"]


def _sample_plane(plane: ImagePlane, volume, spec: PhantomSpec, order, cval):
    rows, cols = plane.size
    rc = np.stack(np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij"),
                  axis=-1).astype(float)
    world = pixel_to_world(plane, rc)                      # (rows, cols, 3)
    idx = world / spec.grid_spacing + (spec.grid_size - 1) / 2.0
    coords = np.moveaxis(idx, -1, 0)
    return ndimage.map_coordinates(volume, coords, order=order,
                                   mode="constant", cval=cval)


def sample_view_study(labels, intensity, spec: PhantomSpec, cfg: ViewConfig,
                      subject_id: str, frame: str, jitter=None) -> ViewStudy:
    """Resample a generated phantom into a geometrically consistent study."""
    sa_planes, p2ch, p4ch = view_planes(spec, cfg, jitter)

    def view_image(plane, la_view):
        img = _sample_plane(plane, intensity, spec, order=1,
                            cval=spec.levels[0]).astype(np.float32)
        lab = _sample_plane(plane, labels, spec, order=0, cval=0).astype(np.int16)
        if not la_view:
            lab[lab > LABEL_RV] = 0  # SA annotations stop at the ventricles
        return ViewImage(plane, img, lab)

    study = ViewStudy(
        subject_id=subject_id, frame=frame,
        sa_stack=[view_image(p, False) for p in sa_planes],
        la_2ch=view_image(p2ch, True),
        la_4ch=view_image(p4ch, True),
    )

    # The long-axis planes share the LV centreline by construction; check it.
    line = intersect_planes(study.la_2ch.plane, study.la_4ch.plane)
    d = np.asarray(spec.heart_pose.translation) - line.point
    gap = np.linalg.norm(d - (d @ line.direction) * line.direction)
    if gap > 2.0 * spec.grid_spacing:
        raise RuntimeError(f"2Ch/4Ch intersection misses the LV centre by {gap:.2f} mm")
    return study


# -- cohort sampling -----------------------------------------------------------

@dataclass(frozen=True)
class CohortConfig:
    """Ranges the per-subject phantom parameters are drawn from."""

    seed: int = 0
    es_lv_scale: float = 0.7            # ES frame shrinks the LV radius
    lv_radius: tuple[float, float] = (18.0, 26.0)
    myo_thickness: tuple[float, float] = (6.0, 10.0)
    rv_margin: tuple[float, float] = (2.0, 8.0)   # added to lv_radius + myo_thickness
    atrial_size: tuple[float, float] = (13.0, 18.0)
    rotation_deg: float = 25.0
    translation_mm: float = 10.0
    noise_sigma: float = 0.05
    blood_level: tuple[float, float] = (0.60, 0.95)
    myo_level: tuple[float, float] = (0.25, 0.55)
    bg_level: tuple[float, float] = (0.02, 0.10)
    bias_amplitude: float = 0.2
    clutter: tuple[int, int] = (8, 15)  # distractor ellipsoids per frame
    grid_size: int = 96
    grid_spacing: float = 2.0
    views: ViewConfig = field(default_factory=ViewConfig)


def subject_specs(cfg: CohortConfig, index: int):
    """Draw one subject's ED and ES phantom specs plus the per-view plane
    decentering shared by both frames.  Deterministic in (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))
    r = rng.uniform(*cfg.lv_radius)
    t = rng.uniform(*cfg.myo_thickness)
    rv_offset = r + t + rng.uniform(*cfg.rv_margin)
    atrial = rng.uniform(*cfg.atrial_size)
    lim = math.radians(cfg.rotation_deg)
    pose = Pose(angles=tuple(rng.uniform(-lim, lim, size=3)),
                translation=tuple(rng.uniform(-cfg.translation_mm,
                                              cfg.translation_mm, size=3)))
    blood = rng.uniform(*cfg.blood_level)
    myo = rng.uniform(*cfg.myo_level)
    bg = rng.uniform(*cfg.bg_level)
    chamber_jitter = rng.uniform(0.92, 1.0, size=3)
    levels = (bg, blood, myo, blood * chamber_jitter[0],
              blood * chamber_jitter[1], blood * chamber_jitter[2])
    noise_seeds = rng.integers(0, 2 ** 31, size=2)

    common = dict(rv_offset=rv_offset, atrial_size=atrial, heart_pose=pose,
                  noise_sigma=cfg.noise_sigma, levels=levels,
                  bias_amplitude=cfg.bias_amplitude,
                  grid_size=cfg.grid_size, grid_spacing=cfg.grid_spacing)
    specs = {
        "ED": PhantomSpec(seed=int(noise_seeds[0]), lv_radius=r,
                          myo_thickness=t, **common),
        "ES": PhantomSpec(seed=int(noise_seeds[1]), lv_radius=r * cfg.es_lv_scale,
                          myo_thickness=t, **common),
    }
    return specs, draw_view_jitter(cfg.views, rng)


def generate_subject(cfg: CohortConfig, index: int) -> list[ViewStudy]:
    """Generate both frames of one subject."""
    subject_id = f"subject_{index:04d}"
    specs, jitter = subject_specs(cfg, index)
    studies = []
    for frame, spec in specs.items():
        labels, intensity = generate_phantom(spec)
        studies.append(sample_view_study(labels, intensity, spec, cfg.views,
                                         subject_id, frame, jitter))
    return studies
