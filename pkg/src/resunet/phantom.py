"""Deterministic synthetic brain-tumour phantoms.

Each phantom is a spherical "brain" of positive Gaussian-textured intensities
on an exactly-zero background, with a randomly oriented tumour made of nested
ellipsoids: oedema (label 2) outermost, an enhancing shell (label 4) and a
necrotic centre (label 1). Modality contrasts loosely mimic MR behaviour:
T1ce is brightest on enhancing tumour, T2/FLAIR are brightest on oedema.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import SpecError
from .volume import MODALITIES, MultiModalCase

TISSUES = ("brain", "edema", "necrosis", "enhancing")
_TISSUE_LABEL = {"edema": 2, "necrosis": 1, "enhancing": 4}


def _default_contrast() -> dict[str, dict[str, tuple[float, float]]]:
    # (mean, sigma) per modality and tissue
    return {
        "T1": {"brain": (100.0, 10.0), "edema": (85.0, 10.0), "necrosis": (60.0, 10.0), "enhancing": (95.0, 10.0)},
        "T1ce": {"brain": (100.0, 10.0), "edema": (95.0, 10.0), "necrosis": (65.0, 10.0), "enhancing": (190.0, 12.0)},
        "T2": {"brain": (100.0, 10.0), "edema": (165.0, 12.0), "necrosis": (185.0, 12.0), "enhancing": (130.0, 10.0)},
        "FLAIR": {"brain": (100.0, 10.0), "edema": (175.0, 12.0), "necrosis": (120.0, 10.0), "enhancing": (145.0, 10.0)},
    }


@dataclass(frozen=True)
class PhantomSpec:
    """Generator parameters.

    ``tumor_radius`` is the semi-axis range in voxels of the outer (oedema)
    ellipsoid; ``core_fraction`` and ``necrosis_fraction`` scale the core
    relative to the tumour and the necrotic centre relative to the core.
    """

    dims: tuple[int, int, int] = (64, 64, 64)
    seed: int = 0
    presence: dict[str, float] = field(
        default_factory=lambda: {"tumor": 1.0, "core": 0.9, "necrosis": 0.75}
    )
    contrast: dict[str, dict[str, tuple[float, float]]] = field(default_factory=_default_contrast)
    brain_fraction: float = 0.42
    tumor_radius: tuple[float, float] = (6.0, 12.0)
    core_fraction: tuple[float, float] = (0.5, 0.8)
    necrosis_fraction: tuple[float, float] = (0.45, 0.7)
    bias_strength: float = 0.15
    min_intensity: float = 1.0

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 32:
            raise SpecError(f"phantom dims must be >= 32 per axis, got {self.dims}")
        for name, (lo, hi) in (
            ("tumor_radius", self.tumor_radius),
            ("core_fraction", self.core_fraction),
            ("necrosis_fraction", self.necrosis_fraction),
        ):
            if not 0 < lo <= hi:
                raise SpecError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if self.core_fraction[1] >= 1 or self.necrosis_fraction[1] >= 1:
            raise SpecError("core and necrosis fractions must stay below 1")
        brain_r = self.brain_radius
        if self.tumor_radius[1] + 1 >= brain_r:
            raise SpecError(
                f"tumour radius up to {self.tumor_radius[1]} does not fit in a brain of radius {brain_r:.1f}"
            )
        if max(self.dims) > 128 and 2 * self.tumor_radius[1] + 1 > 128:
            raise SpecError("tumour extent must stay within a 128-voxel crop window")
        if not 0 <= self.bias_strength < 1:
            raise SpecError("bias_strength must lie in [0, 1)")
        for modality in MODALITIES:
            if set(self.contrast.get(modality, {})) != set(TISSUES):
                raise SpecError(f"contrast table for {modality} must cover {TISSUES}")

    @property
    def brain_radius(self) -> float:
        return self.brain_fraction * min(self.dims)


def _rng(spec: PhantomSpec, case_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(spec.seed), int(case_index)]))


def _ellipsoid(coords, center, semi_axes, rotation) -> np.ndarray:
    local = (coords - center) @ rotation  # rotation columns are the ellipsoid axes
    return np.sum((local / semi_axes) ** 2, axis=-1) <= 1.0


def generate_labels(spec: PhantomSpec, case_index: int, rng: np.random.Generator | None = None):
    """Return ``(labels, brain_mask)`` for one phantom."""
    rng = rng or _rng(spec, case_index)
    dims = np.asarray(spec.dims)
    grid = np.indices(spec.dims, dtype=np.float64)
    coords = np.moveaxis(grid, 0, -1)
    center = (dims - 1) / 2.0
    brain = np.sum((coords - center) ** 2, axis=-1) <= spec.brain_radius**2

    labels = np.zeros(spec.dims, dtype=np.uint8)
    if rng.random() >= spec.presence.get("tumor", 1.0):
        return labels, brain

    semi = rng.uniform(*spec.tumor_radius, size=3)
    rotation = Rotation.random(random_state=rng).as_matrix()
    # keep the whole tumour inside the brain sphere
    reach = spec.brain_radius - semi.max() - 1.0
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    tumor_center = center + direction * rng.uniform(0.0, reach)
    tumor = _ellipsoid(coords, tumor_center, semi, rotation)
    labels[tumor] = 2

    if rng.random() < spec.presence.get("core", 1.0):
        core_semi = semi * rng.uniform(*spec.core_fraction)
        slack = semi.min() - core_semi.max()
        core_center = tumor_center + rng.uniform(-0.5, 0.5, size=3) * max(slack, 0.0)
        core = _ellipsoid(coords, core_center, core_semi, rotation) & tumor
        labels[core] = 4
        if rng.random() < spec.presence.get("necrosis", 1.0):
            nec_semi = core_semi * rng.uniform(*spec.necrosis_fraction)
            necrosis = _ellipsoid(coords, core_center, nec_semi, rotation) & core
            labels[necrosis] = 1
    return labels, brain


def generate_case(spec: PhantomSpec | None = None, case_index: int = 0) -> MultiModalCase:
    """Deterministic for ``(spec.seed, case_index)``; independent of call order."""
    spec = spec or PhantomSpec()
    spec.validate()
    rng = _rng(spec, case_index)
    labels, brain = generate_labels(spec, case_index, rng)

    tissue_masks = {"brain": brain & (labels == 0)}
    for name, label in _TISSUE_LABEL.items():
        tissue_masks[name] = brain & (labels == label)

    dims = np.asarray(spec.dims, dtype=np.float64)
    norm_coords = np.moveaxis(np.indices(spec.dims, dtype=np.float64), 0, -1) / (dims - 1) - 0.5
    modalities = {}
    for modality in MODALITIES:
        vol = np.zeros(spec.dims, dtype=np.float64)
        noise = rng.standard_normal(spec.dims)
        for name in TISSUES:
            sel = tissue_masks[name]
            mean, sigma = spec.contrast[modality][name]
            vol[sel] = mean + sigma * noise[sel]
        # smooth multiplicative bias ramp
        gradient = rng.normal(size=3)
        gradient *= spec.bias_strength / max(np.abs(gradient).sum(), 1e-12)
        vol *= 1.0 + norm_coords @ gradient
        vol[brain] = np.maximum(vol[brain], spec.min_intensity)
        vol[~brain] = 0.0
        modalities[modality] = vol.astype(np.float32).astype(np.float64)

    labels[~brain] = 0
    return MultiModalCase(
        case_id=f"phantom_{spec.seed:04d}_{case_index:05d}",
        modalities=modalities,
        labels=labels,
        spacing=(1.0, 1.0, 1.0),
    )


def generate_cases(spec: PhantomSpec | None = None, n: int = 1, start: int = 0) -> list[MultiModalCase]:
    return [generate_case(spec, i) for i in range(start, start + n)]
