"""Case I/O: NIfTI-1 (BraTS layout) and a raw-grid + JSON sidecar fixture format.

On disk NIfTI grids are stored ``(x, y, z)`` as BraTS distributes them
(240 x 240 x 155). In memory the toolkit uses ``(D, H, W) = (z, y, x)``, so
arrays are transposed on read and transposed back on write. Affines and other
header fields are passed through untouched.

Fixture format: ``<stem>.raw`` holds the C-ordered grid bytes, ``<stem>.json``
holds ``{"dims": [...], "dtype": "<f4", "spacing": [...]}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import nibabel as nib
import numpy as np

from .errors import CorruptHeader, DimMismatch, IoError, MissingModality
from .volume import MODALITIES, MultiModalCase, validate_labels

log = logging.getLogger(__name__)

DEFAULT_SUFFIXES = {"T1": "_t1", "T1ce": "_t1ce", "T2": "_t2", "FLAIR": "_flair", "seg": "_seg"}
NIFTI_EXTENSIONS = (".nii.gz", ".nii")
FIXTURE_EXTENSION = ".raw"


@dataclass
class CaseLayout:
    directory: Path
    case_id: str | None = None
    suffixes: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SUFFIXES))

    def __post_init__(self):
        self.directory = Path(self.directory)
        if self.case_id is None:
            self.case_id = self.directory.name

    def find(self, key: str) -> Path | None:
        stem = self.directory / f"{self.case_id}{self.suffixes[key]}"
        for ext in NIFTI_EXTENSIONS + (FIXTURE_EXTENSION,):
            candidate = stem.with_name(stem.name + ext)
            if candidate.exists():
                return candidate
        return None


@dataclass
class NiftiReference:
    """Geometry carried from an input file to exported predictions."""

    affine: np.ndarray
    header: nib.Nifti1Header


# -- fixture format ---------------------------------------------------------


def write_fixture(path, array, spacing=None) -> None:
    path = Path(path)
    array = np.ascontiguousarray(array)
    meta = {"dims": list(array.shape), "dtype": array.dtype.str}
    if spacing is not None:
        meta["spacing"] = [float(s) for s in spacing]
    try:
        path.with_suffix(".raw").write_bytes(array.tobytes())
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write fixture {path}: {exc}") from exc


def read_fixture(path) -> tuple[np.ndarray, tuple[float, ...] | None]:
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".raw").read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read fixture {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptHeader(f"bad fixture sidecar for {path}: {exc}") from exc
    try:
        dims = tuple(int(d) for d in meta["dims"])
        dtype = np.dtype(meta["dtype"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"bad fixture sidecar for {path}: {exc}") from exc
    if len(raw) != int(np.prod(dims)) * dtype.itemsize:
        raise CorruptHeader(f"fixture {path} holds {len(raw)} bytes, sidecar expects dims {dims}")
    array = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    spacing = tuple(meta["spacing"]) if "spacing" in meta else None
    return array, spacing


# -- NIfTI ------------------------------------------------------------------


def read_nifti(path, integer: bool = False):
    """Return ``(array in (D, H, W), spacing, NiftiReference)``.

    Intensities come back as float64 with scl_slope/scl_inter applied; with
    ``integer=True`` the stored values are read unscaled (label maps).
    """
    path = Path(path)
    try:
        img = nib.load(str(path))
        if integer:
            data = np.asanyarray(img.dataobj)
            if not np.issubdtype(data.dtype, np.integer):
                rounded = np.rint(data)
                if not np.array_equal(rounded, data):
                    raise CorruptHeader(f"label file {path} holds non-integer values")
                data = rounded
            data = data.astype(np.int16)
        else:
            data = img.get_fdata(dtype=np.float64)
    except FileNotFoundError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except (nib.filebasedimages.ImageFileError, nib.spatialimages.HeaderDataError, EOFError, OSError, ValueError) as exc:
        raise CorruptHeader(f"cannot parse NIfTI file {path}: {exc}") from exc
    if data.ndim != 3:
        raise CorruptHeader(f"{path}: expected a 3D image, got shape {data.shape}")
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])[::-1]
    ref = NiftiReference(affine=img.affine.copy(), header=img.header.copy())
    return np.ascontiguousarray(data.transpose(2, 1, 0)), spacing, ref


def write_nifti(array, path, reference: NiftiReference | None = None, spacing=None) -> None:
    path = Path(path)
    array = np.asarray(array)
    data = np.ascontiguousarray(array.transpose(2, 1, 0))
    if reference is not None:
        header = reference.header.copy()
        affine = reference.affine
    else:
        header = nib.Nifti1Header()
        affine = np.eye(4)
        if spacing is not None:
            affine[:3, :3] = np.diag([float(s) for s in spacing][::-1])
    header.set_data_dtype(data.dtype)
    img = nib.Nifti1Image(data, affine, header)
    if spacing is not None and reference is None:
        img.header.set_zooms(tuple(float(s) for s in spacing)[::-1])
    img.header.set_slope_inter(1.0, 0.0)
    try:
        nib.save(img, str(path))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- cases ------------------------------------------------------------------


def _read_any(path: Path, integer: bool):
    if path.name.endswith(FIXTURE_EXTENSION):
        array, spacing = read_fixture(path)
        return array, spacing, None
    return read_nifti(path, integer=integer)


def read_case(layout) -> MultiModalCase:
    if not isinstance(layout, CaseLayout):
        layout = CaseLayout(layout)
    arrays, spacing, reference = {}, None, None
    for modality in MODALITIES:
        path = layout.find(modality)
        if path is None:
            raise MissingModality(modality, layout.directory)
        array, sp, ref = _read_any(path, integer=False)
        arrays[modality] = np.asarray(array, dtype=np.float64)
        spacing = spacing or sp
        reference = reference or ref
    shapes = {a.shape for a in arrays.values()}
    if len(shapes) != 1:
        raise DimMismatch(f"{layout.case_id}: modality shapes differ: {sorted(shapes)}")
    labels = None
    seg_path = layout.find("seg")
    if seg_path is not None:
        labels, _, _ = _read_any(seg_path, integer=True)
        if labels.shape != next(iter(shapes)):
            raise DimMismatch(f"{layout.case_id}: seg shape {labels.shape} != image shape")
        validate_labels(labels)
        labels = labels.astype(np.uint8)
    return MultiModalCase(
        case_id=layout.case_id,
        modalities=arrays,
        labels=labels,
        spacing=spacing or (1.0, 1.0, 1.0),
        header=reference,
    )


def write_labels(vol, path, reference_header: NiftiReference | None = None, spacing=None) -> None:
    """Write a BraTS label volume as NIfTI (or fixture if ``path`` ends in .raw)."""
    vol = np.asarray(vol)
    validate_labels(vol)
    vol = vol.astype(np.uint8)
    path = Path(path)
    if path.name.endswith(FIXTURE_EXTENSION):
        write_fixture(path, vol, spacing)
    else:
        write_nifti(vol, path, reference_header, spacing=spacing)


def read_labels(path) -> np.ndarray:
    array, _, _ = _read_any(Path(path), integer=True)
    validate_labels(array)
    return array.astype(np.uint8)


def write_case(case: MultiModalCase, directory, fmt: str = "nifti") -> Path:
    """Write ``case`` in the BraTS directory layout; returns the case directory."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    items = [(DEFAULT_SUFFIXES[m], case.modalities[m].astype(np.float32)) for m in MODALITIES]
    if case.labels is not None:
        items.append((DEFAULT_SUFFIXES["seg"], case.labels.astype(np.uint8)))
    for suffix, array in items:
        stem = directory / f"{case.case_id}{suffix}"
        if fmt == "nifti":
            write_nifti(array, stem.with_name(stem.name + ".nii.gz"), case.header, spacing=case.spacing)
        elif fmt == "fixture":
            write_fixture(stem.with_name(stem.name + ".raw"), array, case.spacing)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    return directory


def list_case_dirs(root) -> list[Path]:
    """Case directories under ``root`` (those holding a FLAIR file), sorted by name."""
    root = Path(root)
    found = []
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if CaseLayout(child).find("FLAIR") is not None:
            found.append(child)
    return found
