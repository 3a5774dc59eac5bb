"""Auxiliary classifier architectures and model serialization.

Two architectures:

* truncated_resnet50 — the standard ResNet50 stem (7x7 stride-2 conv,
  max-pool) followed by the three bottleneck blocks of stage conv2, cut at
  the conv2_block3_out activation, then global average pooling and a linear
  head. On 32x32 inputs the pre-pool feature map is 8x8 (input / 4).
* small_cnn — a 4-conv-layer net for fast desk-scale runs and gradient
  checks.

Models return logits; use predict_proba for softmax probabilities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "truncated_resnet50"
    input_size: tuple[int, int, int] = (32, 32, 1)
    num_classes: int = 10
    truncation_layer: str = "conv2_block3_out"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(d <= 0 for d in self.input_size):
            raise ValueError("input dimensions must be positive")


class Bottleneck(nn.Module):
    """ResNet v1 bottleneck: 1x1 reduce, 3x3, 1x1 expand, residual add."""

    def __init__(self, in_channels: int, width: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, out_channels, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


class TruncatedResNet50(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        channels = config.input_size[2]
        self.stem = nn.Sequential(
            nn.Conv2d(channels, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        # Stage conv2 of ResNet50: three bottlenecks at stride 1, 64 -> 256.
        self.conv2 = nn.Sequential(
            Bottleneck(64, 64, 256),
            Bottleneck(256, 64, 256),
            Bottleneck(256, 64, 256),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(256, config.num_classes)

    def features(self, x):
        """Feature map at the truncation cut, before pooling."""
        return self.conv2(self.stem(x))

    def forward(self, x):
        f = self.pool(self.features(x)).flatten(1)
        return self.head(f)


class SmallCnn(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        channels = config.input_size[2]
        self.body = nn.Sequential(
            nn.Conv2d(channels, 16, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(64, config.num_classes)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.body(x))


def build_model(config: ModelConfig) -> nn.Module:
    """Instantiate the configured architecture. Raises on unknown names."""
    if config.architecture == "truncated_resnet50":
        return TruncatedResNet50(config)
    if config.architecture == "small_cnn":
        return SmallCnn(config)
    raise ValueError(f"unknown architecture {config.architecture!r}")


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def to_batch(images_array: np.ndarray) -> torch.Tensor:
    """(N, H, W) or (N, H, W, C) float array in [0,1] -> (N, C, H, W) tensor."""
    arr = np.asarray(images_array, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, :, :, None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


@torch.no_grad()
def predict_proba(model: nn.Module, images_array: np.ndarray,
                  batch_size: int = 256) -> np.ndarray:
    """Softmax class probabilities, float64, rows summing to 1."""
    model.eval()
    chunks = []
    for lo in range(0, len(images_array), batch_size):
        logits = model(to_batch(images_array[lo:lo + batch_size]))
        chunks.append(torch.softmax(logits.double(), dim=1).numpy())
    return np.concatenate(chunks, axis=0)


def save_model(model: nn.Module, path: str | Path) -> None:
    """Versioned binary container with the ModelConfig embedded."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, Path(path))


def load_model(path: str | Path) -> nn.Module:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model container version {version}")
    cfg = payload["model_config"]
    cfg["input_size"] = tuple(cfg["input_size"])
    model = build_model(ModelConfig(**cfg))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
