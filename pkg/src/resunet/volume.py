"""In-memory case model, BraTS label semantics and view reslicing.

Grids are indexed ``(D, H, W)``. Axial slices cut axis 0, sagittal axis 1 and
coronal axis 2, so a canonical 155 x 240 x 240 BraTS volume gives 155 axial
slices of 240 x 240.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimMismatch, InvalidIndex, InvalidLabel, MissingModality, ShapeMismatch

MODALITIES = ("T1", "T1ce", "T2", "FLAIR")
BRATS_LABELS = (0, 1, 2, 4)
N_CLASSES = len(BRATS_LABELS)
REGIONS = ("ET", "WT", "TC")

_LABEL_TO_INDEX = np.full(256, -1, dtype=np.int16)
for _idx, _lab in enumerate(BRATS_LABELS):
    _LABEL_TO_INDEX[_lab] = _idx
_INDEX_TO_LABEL = np.asarray(BRATS_LABELS, dtype=np.uint8)


class View(str, Enum):
    AXIAL = "axial"
    SAGITTAL = "sagittal"
    CORONAL = "coronal"

    @property
    def axis(self) -> int:
        return _VIEW_AXIS[self]

    @classmethod
    def parse(cls, value) -> "View":
        if isinstance(value, View):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown view {value!r}; expected one of {[v.value for v in cls]}")


_VIEW_AXIS = {View.AXIAL: 0, View.SAGITTAL: 1, View.CORONAL: 2}
ALL_VIEWS = (View.AXIAL, View.SAGITTAL, View.CORONAL)


@dataclass
class MultiModalCase:
    """One patient: four co-registered modality volumes and optional labels."""

    case_id: str
    modalities: dict[str, np.ndarray]
    labels: np.ndarray | None = None
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    header: object | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        missing = [m for m in MODALITIES if m not in self.modalities]
        if missing:
            raise MissingModality(missing[0])
        self.modalities = {m: np.asarray(self.modalities[m]) for m in MODALITIES}
        dims = {v.shape for v in self.modalities.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 3:
            raise DimMismatch(f"modalities must share one 3D shape, got {sorted(dims)}")
        for name, vol in self.modalities.items():
            if not np.all(np.isfinite(vol)):
                raise ValueError(f"modality {name} contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != self.dims:
                raise DimMismatch(f"labels {self.labels.shape} != image dims {self.dims}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.modalities[MODALITIES[0]].shape

    def stacked(self) -> np.ndarray:
        """Channels-last ``D x H x W x 4`` array in T1, T1ce, T2, FLAIR order."""
        return np.stack([self.modalities[m] for m in MODALITIES], axis=-1)


@dataclass(frozen=True)
class RegionMasks:
    et: np.ndarray
    tc: np.ndarray
    wt: np.ndarray

    def __getitem__(self, region: str) -> np.ndarray:
        return {"ET": self.et, "TC": self.tc, "WT": self.wt}[region]


def validate_labels(vol) -> None:
    """Raise :class:`InvalidLabel` for the first voxel outside {0, 1, 2, 4}."""
    vol = np.asarray(vol)
    bad = ~np.isin(vol, BRATS_LABELS)
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise InvalidLabel(vol[tuple(pos)].item(), pos)


def derive_region_masks(vol) -> RegionMasks:
    vol = np.asarray(vol)
    validate_labels(vol)
    et = vol == 4
    tc = et | (vol == 1)
    wt = tc | (vol == 2)
    return RegionMasks(et=et, tc=tc, wt=wt)


def labels_to_indices(vol) -> np.ndarray:
    vol = np.asarray(vol)
    validate_labels(vol)
    return _LABEL_TO_INDEX[vol.astype(np.int64)].astype(np.uint8)


def indices_to_labels(idx) -> np.ndarray:
    idx = np.asarray(idx)
    bad = (idx < 0) | (idx >= N_CLASSES)
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise InvalidIndex(idx[tuple(pos)].item(), pos)
    return _INDEX_TO_LABEL[idx.astype(np.int64)]


def map_labels(vol, direction: str = "forward") -> np.ndarray:
    """``forward``: BraTS labels -> class indices 0..3; ``backward``: the inverse."""
    if direction == "forward":
        return labels_to_indices(vol)
    if direction == "backward":
        return indices_to_labels(vol)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def reslice(volume, view) -> np.ndarray:
    """Stack of 2D cross-sections along ``view``'s axis.

    ``volume`` is a ``D x H x W`` grid, a ``D x H x W x C`` channels-last grid,
    or a :class:`MultiModalCase` (yielding 4-channel slices). Slice ``k`` of the
    result is the cross-section at index ``k``; trailing channels are kept.
    """
    if isinstance(volume, MultiModalCase):
        volume = volume.stacked()
    volume = np.asarray(volume)
    if volume.ndim not in (3, 4):
        raise ShapeMismatch(f"expected a 3D grid (optionally with channels), got {volume.shape}")
    return np.moveaxis(volume, View.parse(view).axis, 0)


def reassemble(slices, view, dims) -> np.ndarray:
    """Inverse of :func:`reslice`: rebuild the ``dims`` grid from a slice stack."""
    slices = np.asarray(slices)
    dims = tuple(int(d) for d in dims)
    axis = View.parse(view).axis
    expected = (dims[axis],) + tuple(d for i, d in enumerate(dims) if i != axis)
    if slices.ndim not in (3, 4) or slices.shape[:3] != expected:
        raise ShapeMismatch(
            f"slices of shape {slices.shape} do not match dims {dims} in the {View.parse(view).value} view"
        )
    return np.ascontiguousarray(np.moveaxis(slices, 0, axis))


def class_counts(label_volumes) -> dict[int, int]:
    counts = {lab: 0 for lab in BRATS_LABELS}
    for vol in label_volumes:
        vol = np.asarray(vol)
        validate_labels(vol)
        values, n = np.unique(vol, return_counts=True)
        for v, c in zip(values.tolist(), n.tolist()):
            counts[int(v)] += int(c)
    return counts
