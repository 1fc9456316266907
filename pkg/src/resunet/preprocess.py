"""Intensity normalisation, tumour-filtered patch extraction and dataset splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateIntensity, EmptyBrain, MissingLabels, TooFewSamples
from .io import read_fixture, write_fixture
from .volume import BRATS_LABELS, MODALITIES, MultiModalCase, View, class_counts, labels_to_indices, reslice

EPS_STD = 1e-6


@dataclass
class PatchSample:
    image: np.ndarray  # S x S x 4, channels T1, T1ce, T2, FLAIR
    mask: np.ndarray  # S x S class indices 0..3
    view: View
    case_id: str
    slice_index: int


@dataclass
class DatasetSplit:
    train: list[PatchSample]
    val: list[PatchSample]
    seed: int = 0
    meta: dict = field(default_factory=dict)


def normalize_modality(vol, eps_std: float = EPS_STD) -> np.ndarray:
    """Z-score the nonzero (brain) voxels; exact zeros stay exactly zero.

    Statistics use the population standard deviation of the nonzero voxels.
    """
    vol = np.asarray(vol, dtype=np.float64)
    brain = vol != 0
    n = int(brain.sum())
    if n == 0:
        raise EmptyBrain("volume has no nonzero voxels")
    if n < 2:
        raise DegenerateIntensity("need at least two nonzero voxels to estimate a spread")
    values = vol[brain]
    mean = values.mean()
    std = values.std()
    if not std > eps_std:
        raise DegenerateIntensity(f"nonzero-voxel std {std:.3g} <= {eps_std:g}")
    out = np.zeros_like(vol)
    out[brain] = (values - mean) / std
    return out


def normalize_case(case: MultiModalCase) -> MultiModalCase:
    return MultiModalCase(
        case_id=case.case_id,
        modalities={m: normalize_modality(case.modalities[m]) for m in MODALITIES},
        labels=case.labels,
        spacing=case.spacing,
        header=case.header,
    )


def _window(center: float, extent: int, size: int) -> tuple[int, int]:
    """Start/stop of a ``size`` window centred on ``center`` and clamped to [0, extent)."""
    if extent <= size:
        return 0, extent
    start = int(math.floor(center + 0.5)) - size // 2
    start = min(max(start, 0), extent - size)
    return start, start + size


def _pad_to(array: np.ndarray, size: int) -> np.ndarray:
    pads = []
    for extent in array.shape[:2]:
        total = max(size - extent, 0)
        pads.append((total // 2, total - total // 2))
    pads += [(0, 0)] * (array.ndim - 2)
    return np.pad(array, pads)


def crop_slice(image: np.ndarray, mask: np.ndarray, patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Tumour-centroid-centred crop of one slice, zero-padded up to ``patch_size``."""
    rows, cols = np.nonzero(mask)
    r0, r1 = _window(rows.mean(), mask.shape[0], patch_size)
    c0, c1 = _window(cols.mean(), mask.shape[1], patch_size)
    return _pad_to(image[r0:r1, c0:c1], patch_size), _pad_to(mask[r0:r1, c0:c1], patch_size)


def extract_patches(case: MultiModalCase, view, patch_size: int = 128) -> list[PatchSample]:
    """One patch per slice along ``view`` that contains at least one tumour voxel."""
    if case.labels is None:
        raise MissingLabels(f"case {case.case_id} has no label volume")
    view = View.parse(view)
    images = reslice(case, view)
    masks = reslice(labels_to_indices(case.labels), view)
    patches = []
    for k in range(masks.shape[0]):
        if not masks[k].any():
            continue
        image, mask = crop_slice(images[k], masks[k], patch_size)
        patches.append(
            PatchSample(
                image=image.astype(np.float32),
                mask=mask.astype(np.uint8),
                view=view,
                case_id=case.case_id,
                slice_index=k,
            )
        )
    return patches


def split_dataset(patches, ratio: float = 0.8, seed: int = 0, by_case: bool = False) -> DatasetSplit:
    """Seeded shuffle then partition into train/val.

    The default split is patch-wise. ``by_case=True`` shuffles case ids and
    assigns whole cases, so no patient contributes to both sides.
    """
    patches = list(patches)
    if len(patches) < 2:
        raise TooFewSamples(f"need at least 2 patches to split, got {len(patches)}")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    if by_case:
        case_ids = sorted({p.case_id for p in patches})
        if len(case_ids) < 2:
            raise TooFewSamples("a patient-wise split needs at least 2 cases")
        order = [case_ids[i] for i in rng.permutation(len(case_ids))]
        n_train = min(max(round(ratio * len(order)), 1), len(order) - 1)
        train_ids = set(order[:n_train])
        train = [p for p in patches if p.case_id in train_ids]
        val = [p for p in patches if p.case_id not in train_ids]
        return DatasetSplit(train=train, val=val, seed=seed, meta={"by_case": True})
    order = rng.permutation(len(patches))
    n_train = min(max(round(ratio * len(patches)), 1), len(patches) - 1)
    return DatasetSplit(
        train=[patches[i] for i in order[:n_train]],
        val=[patches[i] for i in order[n_train:]],
        seed=seed,
        meta={"by_case": False},
    )


def class_distribution(label_volumes) -> dict[int, float]:
    """Voxel fraction of background and labels 1, 2, 4 over all volumes."""
    counts = class_counts(label_volumes)
    total = sum(counts.values())
    if total == 0:
        return {lab: 0.0 for lab in BRATS_LABELS}
    return {lab: counts[lab] / total for lab in BRATS_LABELS}


def stack_patches(patches) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([p.image for p in patches]).astype(np.float32)
    masks = np.stack([p.mask for p in patches]).astype(np.uint8)
    return images, masks


# -- on-disk patch store -------------------------------------------------------


def save_patches(patches, directory, name: str) -> None:
    """Store a patch list as two fixture grids plus an index manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images, masks = stack_patches(patches)
    write_fixture(directory / f"{name}_images.raw", images)
    write_fixture(directory / f"{name}_masks.raw", masks)
    index = [
        {"case_id": p.case_id, "view": p.view.value, "slice_index": int(p.slice_index)}
        for p in patches
    ]
    (directory / f"{name}_index.json").write_text(json.dumps(index, indent=1) + "\n")


def load_patches(directory, name: str) -> list[PatchSample]:
    directory = Path(directory)
    images, _ = read_fixture(directory / f"{name}_images.raw")
    masks, _ = read_fixture(directory / f"{name}_masks.raw")
    index = json.loads((directory / f"{name}_index.json").read_text())
    return [
        PatchSample(
            image=images[i],
            mask=masks[i],
            view=View.parse(entry["view"]),
            case_id=entry["case_id"],
            slice_index=int(entry["slice_index"]),
        )
        for i, entry in enumerate(index)
    ]
