"""Shared exception types and small validation helpers."""

from __future__ import annotations

import numpy as np


class TriageKitError(Exception):
    """Base class for every error this package raises on purpose."""


class ValidationError(TriageKitError, ValueError):
    """An input value violates a documented invariant."""


class ConfigurationError(TriageKitError, ValueError):
    """A configuration object is internally inconsistent."""


class ParseError(TriageKitError, ValueError):
    """A file or record could not be parsed; message names the location."""


class ShapeError(TriageKitError, ValueError):
    """An array has the wrong shape for the operation."""


class NotFittedError(TriageKitError, RuntimeError):
    """An estimator method that requires training was called before fit."""


class AlignmentError(TriageKitError, ValueError):
    """Clips and sensor streams could not be paired one-to-one."""


def check_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_shape(name: str, arr: np.ndarray, shape: tuple) -> np.ndarray:
    """Check dims against ``shape``; ``None`` entries match anything."""
    arr = np.asarray(arr)
    if arr.ndim != len(shape) or any(
        s is not None and a != s for a, s in zip(arr.shape, shape)
    ):
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr
