"""Gradient-weighted class activation maps for the video branch.

The map is built from the last convolutional feature maps: per-channel
weights are the spatiotemporal mean of the class-logit gradient, the weighted
channel sum is rectified, upsampled to clip resolution, and max-normalized to
[0, 1]. A uniformly zero rectified map stays all-zero instead of dividing
by zero.
"""

from __future__ import annotations

import numpy as np
import torch

from ..validation import ValidationError
from ..vitalgen import ACTION_LABELS, CHANNELS
from .model import FusionModel


def gradcam_components(model: FusionModel, clip_frames: np.ndarray,
                       target_class: str, sensor_window: np.ndarray | None = None):
    """Raw ingredients of the map for one clip.

    Returns ``(activations, gradients, cam_raw)`` where activations and
    gradients are (C, T', H', W') arrays for the last conv layer and
    ``cam_raw`` is the unrectified gradient-weighted channel sum. Kept
    separate so an independent per-channel recomputation can check the sum.
    """
    if target_class not in ACTION_LABELS:
        raise ValidationError(f"unknown target class {target_class!r}")
    class_idx = ACTION_LABELS.index(target_class)

    x = torch.from_numpy(clip_frames[None]).permute(0, 4, 1, 2, 3).contiguous()
    t_frames = clip_frames.shape[0]
    if sensor_window is None:
        sensor_window = np.zeros((t_frames, len(CHANNELS)), dtype=np.float64)
    s = torch.from_numpy(np.asarray(sensor_window)[None]).float()

    model.eval()
    features = model.video.feature_maps(x)
    features.retain_grad()
    pooled = model.video.pool(features).mean(dim=(2, 3, 4))
    v = model.video.proj(pooled)
    with torch.no_grad():
        sensor_emb = model.sensor(s)
    logits = model.head(torch.cat([v, sensor_emb], dim=1))
    model.zero_grad(set_to_none=True)
    logits[0, class_idx].backward()

    activations = features[0].detach().numpy().astype(np.float64)
    gradients = features.grad[0].detach().numpy().astype(np.float64)
    weights = gradients.mean(axis=(1, 2, 3))                 # (C,)
    cam_raw = np.tensordot(weights, activations, axes=(0, 0))  # (T', H', W')
    return activations, gradients, cam_raw


def gradcam_heatmaps(model: FusionModel, clip_frames: np.ndarray, target_class: str,
                     sensor_window: np.ndarray | None = None) -> np.ndarray:
    """Per-frame heatmaps at clip resolution, values in [0, 1]."""
    _, _, cam_raw = gradcam_components(model, clip_frames, target_class, sensor_window)
    cam = np.maximum(cam_raw, 0.0)
    t, h, w = clip_frames.shape[:3]
    up = torch.nn.functional.interpolate(
        torch.from_numpy(cam[None, None]), size=(t, h, w),
        mode="trilinear", align_corners=False,
    )[0, 0].numpy()
    up = np.maximum(up, 0.0)  # interpolation can undershoot zero slightly
    peak = up.max()
    if peak > 0:
        up = up / peak
    return up


def overlay_heatmap(frame: np.ndarray, heatmap: np.ndarray) -> np.ndarray:
    """Blend a [0,1] heatmap over a [0,1] RGB frame as a red emphasis."""
    out = frame.copy()
    out[..., 0] = np.clip(out[..., 0] + 0.6 * heatmap, 0.0, 1.0)
    out[..., 1] = out[..., 1] * (1.0 - 0.4 * heatmap)
    out[..., 2] = out[..., 2] * (1.0 - 0.4 * heatmap)
    return out
