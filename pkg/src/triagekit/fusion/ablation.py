"""Modality-ablation harness: one model per mask over a shared split.

Thirteen mask rows cover video-only, each sensor channel alone, and the
informative channel combinations; two fusion rows compare raw against
augmented sensor streams with all modalities enabled.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..tracksync import FusionSample
from ..validation import ValidationError
from .estimator import FusionActionClassifier, stratified_split

MASK_ROWS = (
    "video",
    "hr",
    "br",
    "move",
    "posture",
    "hr+br",
    "hr+move",
    "hr+posture",
    "br+move",
    "br+posture",
    "hr+br+posture",
    "hr+br+move",
    "hr+br+posture+move",
)
FUSION_ROWS = ("video+sensor(w/o)", "video+sensor(w)")
ALL_ROWS = MASK_ROWS + FUSION_ROWS


@dataclass
class AblationRow:
    mask: str
    accuracy: float
    n_test: int
    model: FusionActionClassifier


def run_ablation(samples_raw: list[FusionSample],
                 samples_augmented: list[FusionSample] | None = None,
                 rows: tuple[str, ...] = ALL_ROWS,
                 test_fraction: float = 0.2, seed: int = 0,
                 **train_params) -> list[AblationRow]:
    """Train and score one model per row on a shared stratified split.

    ``samples_augmented`` must parallel ``samples_raw`` (same clips and
    labels, sensor streams routed through the augmenter); it is required
    only when a ``(w)`` row is requested.
    """
    if samples_augmented is not None:
        if len(samples_augmented) != len(samples_raw) or any(
            a.label != b.label for a, b in zip(samples_raw, samples_augmented)
        ):
            raise ValidationError("augmented samples must parallel raw samples")
    train_idx, test_idx = stratified_split(samples_raw, test_fraction, seed)

    results = []
    for row in rows:
        if row.endswith("(w)"):
            if samples_augmented is None:
                raise ValidationError(f"row {row!r} needs augmented samples")
            pool = samples_augmented
            mask = row[: -len("(w)")]
        elif row.endswith("(w/o)"):
            pool = samples_raw
            mask = row[: -len("(w/o)")]
        else:
            pool = samples_raw
            mask = row
        clf = FusionActionClassifier(mask=mask, seed=seed, **train_params)
        clf.fit([pool[i] for i in train_idx])
        result = clf.evaluate([pool[i] for i in test_idx])
        results.append(AblationRow(mask=row, accuracy=result.accuracy,
                                   n_test=result.n_test, model=clf))
    return results


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("mask,accuracy,n_test\n")
        for row in rows:
            fh.write(f"{row.mask},{row.accuracy!r},{row.n_test}\n")
