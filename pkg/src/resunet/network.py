"""2D fully convolutional residual U-Net.

Layout for ``depth = d`` (channels in brackets, ``b = base_filters``)::

    stem 3x3 [in -> b]
    level 0 .. d-1:  ResidualBlock[b*2^l] -> strided 3x3 conv [b*2^l -> b*2^(l+1)]
    bottleneck:      ResidualBlock[b*2^d]
    level d-1 .. 0:  1x1 conv [2w -> w] + 2x bilinear upsample, concat skip [2w],
                     DecoderBlock[2w -> w]
    head 1x1 [b -> n_classes] + softmax

The public :func:`forward` helper works channels-last (``B x H x W x C``) and
returns channels-last probabilities; the module itself runs NCHW internally.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

CHECKPOINT_VERSION = 1

# Keras-style BN: running = 0.99 * running + 0.01 * batch.
BN_MOMENTUM = 0.01
BN_EPS = 1e-3


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_filters: int = 32
    in_channels: int = 4
    n_classes: int = 4
    upsample_mode: str = "bilinear"

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_filters < 1:
            raise ConfigError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.in_channels < 1 or self.n_classes < 2:
            raise ConfigError("in_channels must be >= 1 and n_classes >= 2")
        if self.upsample_mode != "bilinear":
            raise ConfigError(f"unsupported upsample_mode {self.upsample_mode!r}")

    @property
    def bottleneck_channels(self) -> int:
        return self.base_filters * 2**self.depth

    @property
    def multiple(self) -> int:
        return 2**self.depth


def _bn(channels: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(channels, eps=BN_EPS, momentum=BN_MOMENTUM)


class ResidualBlock(nn.Module):
    """Two 3x3 conv/BN/ReLU units with an additive shortcut.

    The shortcut joins after the second BN and the final ReLU follows the sum.
    When ``in_ch != out_ch`` (decoder blocks, after the skip concatenation) the
    shortcut is a 1x1 convolution + BN projection.
    """

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = _bn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = _bn(out_ch)
        if in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), _bn(out_ch))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class Downsample(nn.Module):
    def __init__(self, in_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, 2 * in_ch, 3, stride=2, padding=1)
        self.bn = _bn(2 * in_ch)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class Upsample(nn.Module):
    """Halve channels with a 1x1 conv, then 2x bilinear upsampling.

    Both maps are linear and bilinear weights sum to one, so running the conv
    at the coarse resolution is equivalent to running it after upsampling.
    """

    def __init__(self, in_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, in_ch // 2, 1)

    def forward(self, x):
        return F.interpolate(self.conv(x), scale_factor=2, mode="bilinear", align_corners=False)


class ResUNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        b = config.base_filters
        self.stem = nn.Conv2d(config.in_channels, b, 3, padding=1)
        self.encoder = nn.ModuleList()
        self.down = nn.ModuleList()
        for level in range(config.depth):
            width = b * 2**level
            self.encoder.append(ResidualBlock(width, width))
            self.down.append(Downsample(width))
        self.bottleneck = ResidualBlock(config.bottleneck_channels, config.bottleneck_channels)
        self.up = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for level in reversed(range(config.depth)):
            width = b * 2**level
            self.up.append(Upsample(2 * width))
            self.decoder.append(ResidualBlock(2 * width, width))
        self.head = nn.Conv2d(b, config.n_classes, 1)

    def encode(self, x):
        """Return (skip activations per level, bottleneck activation)."""
        h = self.stem(x)
        skips = []
        for block, down in zip(self.encoder, self.down):
            h = block(h)
            skips.append(h)
            h = down(h)
        return skips, self.bottleneck(h)

    def logits(self, x):
        skips, h = self.encode(x)
        for up, block, skip in zip(self.up, self.decoder, reversed(skips)):
            h = block(torch.cat([up(h), skip], dim=1))
        return self.head(h)

    def forward(self, x):
        m = self.config.multiple
        if x.shape[-2] % m or x.shape[-1] % m:
            raise ShapeError(
                f"spatial size {tuple(x.shape[-2:])} is not divisible by 2**depth = {m}"
            )
        return torch.softmax(self.logits(x), dim=1)


def _init_weights(net: nn.Module, generator: torch.Generator) -> None:
    for module in net.modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.normal_(0.0, std, generator=generator)
                module.bias.zero_()
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


def build_network(cfg: NetworkConfig | None = None, seed: int = 0) -> ResUNet:
    """Build a freshly initialised network; weights depend only on ``seed``."""
    cfg = cfg or NetworkConfig()
    net = ResUNet(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    _init_weights(net, gen)
    return net


def forward(net: ResUNet, batch, train: bool = False) -> torch.Tensor:
    """Channels-last forward pass: ``B x H x W x C_in`` -> ``B x H x W x n_classes``.

    Accepts numpy arrays or tensors. In the default inference mode BN uses its
    running statistics and no graph is kept unless the input requires grad.
    """
    x = torch.as_tensor(batch, dtype=torch.float32)
    if x.ndim != 4 or x.shape[-1] != net.config.in_channels:
        raise ShapeError(
            f"expected B x H x W x {net.config.in_channels} input, got {tuple(x.shape)}"
        )
    net.train(train)
    probs = net(x.permute(0, 3, 1, 2))
    return probs.permute(0, 2, 3, 1)


def bottleneck_shape(net: ResUNet, height: int, width: int) -> tuple[int, int, int]:
    """(H, W, C) of the encoder endpoint for an input of the given spatial size."""
    x = torch.zeros(1, net.config.in_channels, height, width)
    net.eval()
    with torch.no_grad():
        _, h = net.encode(x)
    return int(h.shape[2]), int(h.shape[3]), int(h.shape[1])


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def conv_kernels(net: nn.Module) -> list[torch.Tensor]:
    """Convolution kernel tensors; the only parameters that receive L2 decay."""
    return [m.weight for m in net.modules() if isinstance(m, nn.Conv2d)]


def save_checkpoint(net: ResUNet, path, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "state_dict": net.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[ResUNet, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')!r}")
    net = ResUNet(NetworkConfig(**payload["config"]))
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, payload.get("extra", {})


def predict_numpy(net: ResUNet, batch: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Inference-mode forward over an arbitrarily long channels-last stack."""
    out = []
    with torch.no_grad():
        for start in range(0, len(batch), batch_size):
            out.append(forward(net, batch[start : start + batch_size]).numpy())
    return np.concatenate(out, axis=0)
