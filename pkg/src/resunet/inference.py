"""Full-volume prediction and softmax-averaging view ensembles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ShapeError, ViewMismatch
from .network import load_checkpoint, predict_numpy, save_checkpoint
from .volume import ALL_VIEWS, MultiModalCase, View, indices_to_labels, reassemble, reslice


class Regime(str, Enum):
    SINGLE_VIEW = "single_view"
    MIXED_VIEWS = "mixed_views"
    PER_VIEW_ENSEMBLE = "per_view_ensemble"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(f"unknown regime {value!r}; expected one of {[r.value for r in cls]}")


@dataclass
class ModelSet:
    """Trained models with the view each one predicts in.

    A mixed-view model carries ``None`` as its tag and predicts axially.
    """

    models: list
    regime: Regime

    def __post_init__(self):
        self.regime = Regime.parse(self.regime)
        self.models = [(m, None if v is None else View.parse(v)) for m, v in self.models]
        self.check()

    def check(self) -> None:
        views = [v for _, v in self.models]
        if self.regime is Regime.PER_VIEW_ENSEMBLE:
            if len(views) != 3 or set(views) != set(ALL_VIEWS):
                raise ViewMismatch(
                    f"a per-view ensemble needs exactly one model per view, got {[getattr(v, 'value', v) for v in views]}"
                )
        elif len(self.models) != 1:
            raise ViewMismatch(f"regime {self.regime.value} takes one model, got {len(self.models)}")

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries, paths = [], []
        for net, view in self.models:
            tag = view.value if view is not None else "mixed"
            path = directory / f"model_{tag}.pt"
            save_checkpoint(net, path, extra={"view": None if view is None else view.value})
            entries.append({"file": path.name, "view": None if view is None else view.value})
            paths.append(path)
        (directory / "modelset.json").write_text(
            json.dumps({"regime": self.regime.value, "models": entries}, indent=2) + "\n"
        )
        return paths

    @classmethod
    def load(cls, directory) -> "ModelSet":
        directory = Path(directory)
        meta = json.loads((directory / "modelset.json").read_text())
        models = []
        for entry in meta["models"]:
            net, _ = load_checkpoint(directory / entry["file"])
            models.append((net, entry["view"]))
        return cls(models=models, regime=meta["regime"])


def pad_to_multiple(array, m: int):
    """Zero-pad the two leading axes symmetrically up to multiples of ``m``.

    Returns ``(padded, record)``; ``crop(padded, record)`` restores the input.
    Extra padding goes after (an odd remainder puts the larger half last).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    array = np.asarray(array)
    record = []
    for extent in array.shape[:2]:
        total = -extent % m
        record.append((total // 2, total - total // 2))
    pads = record + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, pads), tuple(record)


def crop(array, record):
    (top, bottom), (left, right) = record
    array = np.asarray(array)
    return array[top : array.shape[0] - bottom, left : array.shape[1] - right]


def _pad_stack(stack: np.ndarray, m: int):
    """pad_to_multiple applied to axes 1, 2 of a slice stack."""
    padded, record = pad_to_multiple(np.moveaxis(stack, 0, 2), m)
    return np.moveaxis(padded, 2, 0), record


def predict_volume(model, case: MultiModalCase, view, batch_size: int = 8) -> np.ndarray:
    """``D x H x W x n_classes`` softmax volume predicted slice-wise along ``view``.

    The case must already be normalised like the training data.
    """
    view = View.parse(view if view is not None else View.AXIAL)
    stack = reslice(case, view).astype(np.float32)
    if stack.shape[-1] != model.config.in_channels:
        raise ShapeError(f"case has {stack.shape[-1]} channels, model expects {model.config.in_channels}")
    padded, record = _pad_stack(stack, model.config.multiple)
    probs = predict_numpy(model, padded, batch_size=batch_size)
    probs = np.moveaxis(crop(np.moveaxis(probs, 0, 2), record), 2, 0)
    return reassemble(probs.astype(np.float64), view, case.dims)


def average_probabilities(volumes) -> np.ndarray:
    """Voxelwise arithmetic mean, summed in list order for reproducibility."""
    volumes = list(volumes)
    total = np.zeros_like(volumes[0], dtype=np.float64)
    for vol in volumes:
        total += vol
    return total / len(volumes)


def argmax_labels(probs) -> np.ndarray:
    """Class argmax (first maximum wins, i.e. ties go to the lower index) as BraTS labels."""
    return indices_to_labels(np.argmax(probs, axis=-1))


def ensemble_probabilities(models: ModelSet, case: MultiModalCase, batch_size: int = 8) -> np.ndarray:
    models.check()
    return average_probabilities(predict_volume(net, case, view, batch_size) for net, view in models.models)


def ensemble_predict(models: ModelSet, case: MultiModalCase, batch_size: int = 8) -> np.ndarray:
    """BraTS label volume from the averaged softmax outputs of every model in the set."""
    return argmax_labels(ensemble_probabilities(models, case, batch_size))
