"""Torch modules for the two-branch action classifier.

The video branch is a small 3-D CNN (two conv layers, each max-pooled, global
average pool, linear projection) producing a 512-d embedding. The sensor
branch standardizes channels, zeroes masked ones, and runs an LSTM whose last
hidden state is the 128-d embedding. Late fusion concatenates both and a
two-layer head with dropout maps the 640-d vector to six action logits.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
from torch import nn

from ..validation import ConfigurationError, ShapeError, ValidationError
from ..vitalgen import ACTION_LABELS, CHANNELS

VIDEO_DIM = 512
SENSOR_DIM = 128
FUSED_DIM = VIDEO_DIM + SENSOR_DIM
N_CLASSES = len(ACTION_LABELS)

SENSOR_MODALITIES = ("heart_rate", "breathing_rate", "posture", "movement")


@dataclass(frozen=True)
class ModalityMask:
    """Which inputs the classifier is allowed to see."""

    video: bool = True
    heart_rate: bool = True
    breathing_rate: bool = True
    posture: bool = True
    movement: bool = True

    def __post_init__(self):
        if not any(getattr(self, f.name) for f in fields(self)):
            raise ConfigurationError("at least one modality must be enabled")

    def sensor_vector(self) -> np.ndarray:
        """1.0 for visible sensor channels, 0.0 for masked, channel order."""
        return np.array([float(getattr(self, m)) for m in SENSOR_MODALITIES])

    @property
    def name(self) -> str:
        short = {"heart_rate": "hr", "breathing_rate": "br",
                 "posture": "posture", "movement": "move"}
        parts = (["video"] if self.video else []) + [
            short[m] for m in SENSOR_MODALITIES if getattr(self, m)
        ]
        return "+".join(parts)

    @classmethod
    def from_name(cls, name: str) -> "ModalityMask":
        long = {"hr": "heart_rate", "br": "breathing_rate",
                "posture": "posture", "move": "movement", "video": "video"}
        enabled = {}
        for token in name.split("+"):
            token = token.strip().lower()
            if token == "sensor":  # all four sensor channels
                enabled.update({m: True for m in SENSOR_MODALITIES})
                continue
            if token not in long:
                raise ConfigurationError(f"unknown modality token {token!r} in {name!r}")
            enabled[long[token]] = True
        base = {f.name: False for f in fields(cls)}
        base.update(enabled)
        return cls(**base)


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    label: str

    def __post_init__(self):
        if self.logits.shape != (N_CLASSES,):
            raise ShapeError(f"expected {N_CLASSES} logits, got {self.logits.shape}")
        total = float(self.probabilities.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"probabilities sum to {total}, expected 1 +- 1e-6")


def prediction_from_logits(logits: np.ndarray) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    # ties resolve to the lowest class index for reproducible confusions
    return Prediction(logits=logits, probabilities=probs,
                      label=ACTION_LABELS[int(np.argmax(logits))])


def fuse(video_embedding: np.ndarray, sensor_embedding: np.ndarray) -> np.ndarray:
    """Concatenate embeddings, video block first."""
    v = np.asarray(video_embedding, dtype=np.float64).ravel()
    s = np.asarray(sensor_embedding, dtype=np.float64).ravel()
    if v.shape != (VIDEO_DIM,):
        raise ShapeError(f"video embedding must have length {VIDEO_DIM}, got {v.shape}")
    if s.shape != (SENSOR_DIM,):
        raise ShapeError(f"sensor embedding must have length {SENSOR_DIM}, got {s.shape}")
    return np.concatenate([v, s])


class VideoEncoder(nn.Module):
    """Two 3-D conv layers with max pooling, GAP, projection to 512."""

    def __init__(self, conv_channels: tuple[int, int] = (16, 32)):
        super().__init__()
        c1, c2 = conv_channels
        self.conv1 = nn.Conv3d(3, c1, kernel_size=3, padding=1)
        self.conv2 = nn.Conv3d(c1, c2, kernel_size=3, padding=1)
        self.pool = nn.MaxPool3d(2, ceil_mode=True)
        self.proj = nn.Linear(c2, VIDEO_DIM)

    def feature_maps(self, x: torch.Tensor) -> torch.Tensor:
        """Output of the last conv layer (post-ReLU), the Grad-CAM target."""
        h = self.pool(torch.relu(self.conv1(x)))
        return torch.relu(self.conv2(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 3:
            raise ShapeError(f"clip batch must be (B, 3, T, H, W), got {tuple(x.shape)}")
        a = self.pool(self.feature_maps(x))
        pooled = a.mean(dim=(2, 3, 4))
        return self.proj(pooled)


class SensorEncoder(nn.Module):
    """LSTM over standardized, mask-zeroed channels; last hidden state out."""

    def __init__(self):
        super().__init__()
        self.lstm = nn.LSTM(input_size=len(CHANNELS), hidden_size=SENSOR_DIM,
                            batch_first=True)
        self.register_buffer("channel_mean", torch.zeros(len(CHANNELS)))
        self.register_buffer("channel_std", torch.ones(len(CHANNELS)))
        self.register_buffer("channel_keep", torch.ones(len(CHANNELS)))

    def set_standardization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.channel_mean.copy_(torch.as_tensor(mean, dtype=self.channel_mean.dtype))
        self.channel_std.copy_(torch.as_tensor(std, dtype=self.channel_std.dtype))

    def set_mask(self, mask: ModalityMask) -> None:
        self.channel_keep.copy_(torch.as_tensor(mask.sensor_vector(),
                                                dtype=self.channel_keep.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[2] != len(CHANNELS):
            raise ShapeError(f"sensor batch must be (B, T, {len(CHANNELS)}), got {tuple(x.shape)}")
        if x.shape[1] < 1:
            raise ValidationError("sensor series must have at least one timestep")
        z = (x - self.channel_mean) / self.channel_std
        z = z * self.channel_keep  # masked channels become the neutral value 0
        _, (h_n, _) = self.lstm(z)
        return h_n[-1]


class FusionHead(nn.Module):
    """640 -> hidden with ReLU and dropout -> 6 logits."""

    def __init__(self, hidden: int = 256, dropout: float = 0.5):
        super().__init__()
        self.fc = nn.Linear(FUSED_DIM, hidden)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(hidden, N_CLASSES)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.shape[-1] != FUSED_DIM:
            raise ShapeError(f"fused vector must have length {FUSED_DIM}, got {fused.shape[-1]}")
        return self.out(self.drop(torch.relu(self.fc(fused))))


class FusionModel(nn.Module):
    """Late-fusion classifier over (clip batch, sensor batch)."""

    def __init__(self, mask: ModalityMask | None = None,
                 conv_channels: tuple[int, int] = (16, 32),
                 fusion_hidden: int = 256, dropout: float = 0.5):
        super().__init__()
        self.mask = mask or ModalityMask()
        self.video = VideoEncoder(conv_channels)
        self.sensor = SensorEncoder()
        self.head = FusionHead(fusion_hidden, dropout)
        self.sensor.set_mask(self.mask)

    def embed(self, clips: torch.Tensor, sensors: torch.Tensor):
        batch = sensors.shape[0]
        if self.mask.video:
            v = self.video(clips)
        else:
            # bypass the encoder entirely so logits cannot depend on pixels
            v = torch.zeros(batch, VIDEO_DIM, dtype=sensors.dtype, device=sensors.device)
        s = self.sensor(sensors)
        return v, s

    def forward(self, clips: torch.Tensor, sensors: torch.Tensor) -> torch.Tensor:
        v, s = self.embed(clips, sensors)
        return self.head(torch.cat([v, s], dim=1))
