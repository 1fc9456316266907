"""On-the-fly augmentation, the Adam training loop and the multi-view regimes."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, NonFiniteLoss, ShapeError
from .inference import ModelSet, Regime
from .loss import one_hot, weighted_dice_loss
from .network import NetworkConfig, ResUNet, build_network, conv_kernels, forward
from .preprocess import DatasetSplit, PatchSample, extract_patches, normalize_case, split_dataset
from .volume import ALL_VIEWS, N_CLASSES, View

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 300
    learning_rate: float = 1e-4
    l2_strength: float = 1e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    rotation: bool = True
    hflip: bool = True
    vflip: bool = True
    rotation_degrees: float = 180.0
    keep_best: bool = False
    regime: str = Regime.SINGLE_VIEW.value
    view: str = View.AXIAL.value

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_strength < 0:
            raise ConfigError("l2_strength must be >= 0")
        Regime.parse(self.regime)
        View.parse(self.view)


@dataclass
class TrainHistory:
    epochs: list[dict]

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def train_loss(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    @property
    def val_loss(self) -> list[float]:
        return [e["val_loss"] for e in self.epochs]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for e in self.epochs:
                writer.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), f"{e['seconds']:.3f}"])


# -- augmentation ----------------------------------------------------------


def apply_transform(sample: PatchSample, angle: float = 0.0, hflip: bool = False, vflip: bool = False) -> PatchSample:
    """Rotate by ``angle`` degrees (bilinear image, nearest mask), then flip."""
    image, mask = sample.image, sample.mask
    if angle != 0.0:
        image = ndimage.rotate(image, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)
        mask = ndimage.rotate(mask, angle, axes=(1, 0), reshape=False, order=0, mode="constant", cval=0)
    if hflip:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if vflip:
        image, mask = image[::-1], mask[::-1]
    return replace(
        sample,
        image=np.ascontiguousarray(image, dtype=np.float32),
        mask=np.ascontiguousarray(mask, dtype=np.uint8),
    )


def augment(sample: PatchSample, rng: np.random.Generator, cfg: TrainConfig | None = None) -> PatchSample:
    cfg = cfg or TrainConfig()
    hflip = bool(cfg.hflip and rng.random() < 0.5)
    vflip = bool(cfg.vflip and rng.random() < 0.5)
    angle = float(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)) if cfg.rotation else 0.0
    return apply_transform(sample, angle, hflip, vflip)


# -- training loop ----------------------------------------------------------


def l2_penalty(net: torch.nn.Module) -> torch.Tensor:
    return sum((w * w).sum() for w in conv_kernels(net))


def batch_tensors(samples, n_classes: int = N_CLASSES) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))
    target = torch.from_numpy(one_hot(np.stack([s.mask for s in samples]), n_classes))
    return images, target


def make_optimizer(net: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)


def train_step(net: ResUNet, optimizer, images, target, l2_strength: float) -> tuple[float, float]:
    """One optimisation step; returns (dice loss, full objective) before the update."""
    probs = forward(net, images, train=True)
    dice = weighted_dice_loss(probs, target)
    objective = dice + l2_strength * l2_penalty(net) if l2_strength else dice
    if not torch.isfinite(objective):
        raise NonFiniteLoss(f"loss became {objective.item()} (dice term {dice.item()})")
    optimizer.zero_grad(set_to_none=True)
    objective.backward()
    optimizer.step()
    return float(dice.detach()), float(objective.detach())


def evaluate_loss(net: ResUNet, samples, batch_size: int = 8) -> float:
    """Mean inference-mode Dice loss over batches; NaN for an empty set."""
    if not samples:
        return math.nan
    losses = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            images, target = batch_tensors(samples[start : start + batch_size], net.config.n_classes)
            losses.append(float(weighted_dice_loss(forward(net, images), target)))
    return float(np.mean(losses))


def _check_shapes(net: ResUNet, samples) -> None:
    m = net.config.multiple
    for s in samples:
        h, w, c = s.image.shape
        if c != net.config.in_channels or h % m or w % m or s.mask.shape != (h, w):
            raise ShapeError(
                f"patch {s.case_id}/{s.view.value}/{s.slice_index} has shape {s.image.shape}; "
                f"network needs {net.config.in_channels} channels and sides divisible by {m}"
            )


def train_model(net: ResUNet, split: DatasetSplit, cfg: TrainConfig | None = None, callback=None):
    """Minimise weighted Dice + L2 on conv kernels with Adam at a constant step size.

    Every epoch draws a seeded permutation of the training patches and fresh
    augmentations. Returns ``(net, TrainHistory)``; with ``keep_best`` the
    weights with the lowest validation loss are restored at the end.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    train, val = list(split.train), list(split.val)
    if not train:
        raise ShapeError("training split is empty")
    _check_shapes(net, train + val)
    order_seed, aug_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng = np.random.default_rng(order_seed)
    aug_rng = np.random.default_rng(aug_seed)
    optimizer = make_optimizer(net, cfg)
    any_aug = cfg.rotation or cfg.hflip or cfg.vflip

    history = []
    best = (math.inf, None)
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = order_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            if any_aug:
                batch = [augment(s, aug_rng, cfg) for s in batch]
            images, target = batch_tensors(batch, net.config.n_classes)
            dice, _ = train_step(net, optimizer, images, target, cfg.l2_strength)
            losses.append(dice)
        val_loss = evaluate_loss(net, val, cfg.batch_size)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "seconds": time.perf_counter() - started,
        }
        history.append(record)
        log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, record["train_loss"], val_loss, record["seconds"])
        if cfg.keep_best and val_loss < best[0]:
            best = (val_loss, {k: v.detach().clone() for k, v in net.state_dict().items()})
        if callback is not None:
            callback(net, record)
    if cfg.keep_best and best[1] is not None:
        net.load_state_dict(best[1])
    net.eval()
    return net, TrainHistory(history)


# -- multi-view regimes -------------------------------------------------------


def collect_patches(cases, view, patch_size: int) -> list[PatchSample]:
    patches = []
    for case in cases:
        patches.extend(extract_patches(case, view, patch_size))
    return patches


def train_multiview(
    cases,
    cfg: TrainConfig | None = None,
    net_cfg: NetworkConfig | None = None,
    patch_size: int = 128,
    ratio: float = 0.8,
    by_case: bool = False,
    normalize: bool = True,
    patches_by_view: dict | None = None,
):
    """Train the models a regime calls for; returns ``(ModelSet, {tag: TrainHistory})``.

    ``per_view_ensemble`` trains one model per view, ``mixed_views`` one model
    on the pooled patches of all three views, ``single_view`` one model on
    ``cfg.view``. Every model is initialised, split and trained with
    ``cfg.seed``. Pre-extracted ``patches_by_view`` skips patch extraction.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    net_cfg = net_cfg or NetworkConfig()
    regime = Regime.parse(cfg.regime)
    if patches_by_view is None:
        if normalize:
            cases = [normalize_case(c) for c in cases]
        needed = ALL_VIEWS if regime is not Regime.SINGLE_VIEW else (View.parse(cfg.view),)
        patches_by_view = {v: collect_patches(cases, v, patch_size) for v in needed}
    patches_by_view = {View.parse(k): v for k, v in patches_by_view.items()}

    def fit(patches):
        split = split_dataset(patches, ratio=ratio, seed=cfg.seed, by_case=by_case)
        net = build_network(net_cfg, seed=cfg.seed)
        return train_model(net, split, cfg)

    models, histories = [], {}
    if regime is Regime.PER_VIEW_ENSEMBLE:
        for view in ALL_VIEWS:
            net, hist = fit(patches_by_view[view])
            models.append((net, view))
            histories[view.value] = hist
    elif regime is Regime.MIXED_VIEWS:
        pooled = [p for view in ALL_VIEWS for p in patches_by_view[view]]
        net, hist = fit(pooled)
        models.append((net, None))
        histories["mixed"] = hist
    else:
        view = View.parse(cfg.view)
        net, hist = fit(patches_by_view[view])
        models.append((net, view))
        histories[view.value] = hist
    return ModelSet(models=models, regime=regime), histories
