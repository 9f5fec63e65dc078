"""Training, inference, and evaluation around :class:`FusionModel`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..checkpoint import load_checkpoint, save_checkpoint
from ..tracksync import FusionSample
from ..validation import (
    ConfigurationError,
    ShapeError,
    ValidationError,
    check_fitted,
)
from ..vitalgen import ACTION_LABELS
from .model import (
    FUSED_DIM,
    N_CLASSES,
    SENSOR_DIM,
    VIDEO_DIM,
    FusionModel,
    ModalityMask,
    Prediction,
    fuse,
    prediction_from_logits,
)


def _clip_tensor(samples: list[FusionSample]) -> torch.Tensor:
    shapes = {s.clip.frames.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeError(f"clips must share one shape, got {sorted(shapes)}")
    stacked = np.stack([s.clip.frames for s in samples])  # (B, T, H, W, 3)
    return torch.from_numpy(stacked).permute(0, 4, 1, 2, 3).contiguous()


def _sensor_tensor(samples: list[FusionSample]) -> torch.Tensor:
    shapes = {s.sensors.samples.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeError(f"sensor windows must share one shape, got {sorted(shapes)}")
    stacked = np.stack([s.sensors.samples for s in samples])
    return torch.from_numpy(stacked).float()


@dataclass
class EvaluationResult:
    accuracy: float
    confusion: np.ndarray  # rows: ground truth, cols: prediction
    n_test: int
    classes: tuple[str, ...] = ACTION_LABELS

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("truth\\pred," + ",".join(self.classes) + "\n")
            for i, label in enumerate(self.classes):
                fh.write(label + "," + ",".join(str(int(v)) for v in self.confusion[i]) + "\n")


class FusionActionClassifier:
    """sklearn-style late-fusion classifier over aligned clip/sensor samples.

    ``fit`` trains with Adam and cross-entropy; horizontal clip flipping is
    the only train-time augmentation. Per-channel sensor statistics are
    computed on the training samples and frozen into the model. Seeded runs
    in deterministic mode are bit-reproducible on CPU.
    """

    CHECKPOINT_KIND = "fusion-action-classifier"

    def __init__(self, mask: str = "video+sensor", learning_rate: float = 1e-4,
                 epochs: int = 30, batch_size: int = 16,
                 conv_channels: tuple[int, int] = (16, 32),
                 fusion_hidden: int = 256, dropout: float = 0.5,
                 hflip: bool = True, seed: int = 0, deterministic: bool = True):
        self.mask = mask
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.conv_channels = conv_channels
        self.fusion_hidden = fusion_hidden
        self.dropout = dropout
        self.hflip = hflip
        self.seed = seed
        self.deterministic = deterministic

    def get_params(self, deep: bool = True) -> dict:
        return {
            "mask": self.mask,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "conv_channels": tuple(self.conv_channels),
            "fusion_hidden": self.fusion_hidden,
            "dropout": self.dropout,
            "hflip": self.hflip,
            "seed": self.seed,
            "deterministic": self.deterministic,
        }

    def set_params(self, **params):
        known = self.get_params()
        for key, value in params.items():
            if key not in known:
                raise ConfigurationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    @property
    def modality_mask(self) -> ModalityMask:
        return ModalityMask.from_name(self.mask)

    def _check_config(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        self.modality_mask  # raises on an all-masked configuration

    def fit(self, samples: list[FusionSample], y=None) -> "FusionActionClassifier":
        self._check_config()
        if not samples:
            raise ValidationError("no training samples")
        labels = [s.label for s in samples]
        missing = [c for c in ACTION_LABELS if c not in labels]
        if missing:
            raise ValidationError(f"training split is missing action classes: {missing}")

        if self.deterministic:
            torch.manual_seed(self.seed)
        gen = torch.Generator().manual_seed(self.seed)

        mask = self.modality_mask
        model = FusionModel(mask=mask, conv_channels=tuple(self.conv_channels),
                            fusion_hidden=self.fusion_hidden, dropout=self.dropout)
        sensor_stack = np.stack([s.sensors.samples for s in samples])
        mean = sensor_stack.mean(axis=(0, 1))
        std = np.maximum(sensor_stack.std(axis=(0, 1)), 1e-6)
        model.sensor.set_standardization(mean, std)

        clips = _clip_tensor(samples)
        sensors = _sensor_tensor(samples)
        targets = torch.tensor([ACTION_LABELS.index(l) for l in labels])

        opt = torch.optim.Adam(model.parameters(), lr=self.learning_rate)
        history = []
        n = len(samples)
        model.train()
        for _ in range(self.epochs):
            order = torch.randperm(n, generator=gen)
            epoch_loss = 0.0
            epoch_correct = 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                batch_clips = clips[idx]
                if self.hflip and mask.video:
                    flip = torch.rand(len(idx), generator=gen) < 0.5
                    if flip.any():
                        batch_clips = batch_clips.clone()
                        batch_clips[flip] = batch_clips[flip].flip(dims=(4,))
                logits = model(batch_clips, sensors[idx])
                loss = nn.functional.cross_entropy(logits, targets[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_loss += loss.item() * len(idx)
                epoch_correct += (logits.argmax(dim=1) == targets[idx]).sum().item()
            history.append({"loss": epoch_loss / n, "accuracy": epoch_correct / n})
        model.eval()
        self.model_ = model
        self.classes_ = ACTION_LABELS
        self.history_ = history
        return self

    # -- inference -----------------------------------------------------------

    def _forward(self, samples: list[FusionSample]) -> np.ndarray:
        check_fitted(self, "model_")
        self.model_.eval()
        with torch.no_grad():
            logits = self.model_(_clip_tensor(samples), _sensor_tensor(samples))
        return logits.numpy().astype(np.float64)

    def predict_logits(self, samples: list[FusionSample]) -> np.ndarray:
        return self._forward(samples)

    def predict_proba(self, samples: list[FusionSample]) -> np.ndarray:
        return np.stack([prediction_from_logits(row).probabilities
                         for row in self._forward(samples)])

    def predict(self, samples: list[FusionSample]) -> list[Prediction]:
        return [prediction_from_logits(row) for row in self._forward(samples)]

    def video_encode(self, clip) -> np.ndarray:
        """512-d embedding of one PersonClip (mask-independent)."""
        check_fitted(self, "model_")
        x = torch.from_numpy(clip.frames[None]).permute(0, 4, 1, 2, 3).contiguous()
        with torch.no_grad():
            v = self.model_.video(x)
        return v[0].numpy().astype(np.float64)

    def sensor_encode(self, series) -> np.ndarray:
        """128-d embedding of one VitalSignSeries window under the mask."""
        check_fitted(self, "model_")
        x = torch.from_numpy(series.samples[None]).float()
        with torch.no_grad():
            s = self.model_.sensor(x)
        return s[0].numpy().astype(np.float64)

    def classify(self, fused: np.ndarray) -> Prediction:
        """Head-only prediction from an explicit 640-d fused vector."""
        check_fitted(self, "model_")
        fused = np.asarray(fused, dtype=np.float64)
        if fused.shape != (FUSED_DIM,):
            raise ShapeError(f"fused vector must have shape ({FUSED_DIM},), got {fused.shape}")
        with torch.no_grad():
            logits = self.model_.head(torch.from_numpy(fused).float().unsqueeze(0))
        return prediction_from_logits(logits[0].numpy())

    def explain(self, clip, target_class: str, sensor_window=None) -> np.ndarray:
        """Per-frame class activation heatmaps for one clip."""
        check_fitted(self, "model_")
        from .gradcam import gradcam_heatmaps

        return gradcam_heatmaps(self.model_, clip.frames, target_class, sensor_window)

    def evaluate(self, samples: list[FusionSample]) -> EvaluationResult:
        if not samples:
            raise ValidationError("no evaluation samples")
        predictions = self.predict(samples)
        confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
        for sample, pred in zip(samples, predictions):
            confusion[ACTION_LABELS.index(sample.label),
                      ACTION_LABELS.index(pred.label)] += 1
        accuracy = float(np.trace(confusion)) / len(samples)
        return EvaluationResult(accuracy=accuracy, confusion=confusion, n_test=len(samples))

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "model_")
        params = {k: v.detach().numpy() for k, v in self.model_.state_dict().items()}
        config = self.get_params()
        config["conv_channels"] = list(config["conv_channels"])
        save_checkpoint(path, self.CHECKPOINT_KIND, config, params,
                        {"history": self.history_})

    @classmethod
    def load(cls, path) -> "FusionActionClassifier":
        config, params, extras = load_checkpoint(path, expected_kind=cls.CHECKPOINT_KIND)
        config["conv_channels"] = tuple(config["conv_channels"])
        est = cls(**config)
        model = FusionModel(mask=est.modality_mask,
                            conv_channels=est.conv_channels,
                            fusion_hidden=est.fusion_hidden, dropout=est.dropout)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
        model.eval()
        est.model_ = model
        est.classes_ = ACTION_LABELS
        est.history_ = extras.get("history", [])
        return est


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,loss,accuracy\n")
        for epoch, row in enumerate(history):
            fh.write(f"{epoch},{row['loss']!r},{row['accuracy']!r}\n")


def stratified_split(samples: list[FusionSample], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[list[int], list[int]]:
    """Per-class shuffled index split; at least one test sample per class."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    by_label: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_label.setdefault(s.label, []).append(i)
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        rng.shuffle(idx)
        n_test = max(1, int(round(len(idx) * test_fraction)))
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    return sorted(train_idx), sorted(test_idx)
