"""Deterministic synthetic vital-sign corpora.

Two corpora are produced: a "field" corpus of six action classes (what the
body-worn sensors record while a subject performs an action) and a "clinical
reference" corpus of four clinical conditions used to train the vital-sign
augmenter. Both are drawn from per-class channel profiles, so the class
structure of every corpus is known by construction and downstream accuracy
checks have a ground truth to stand on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .validation import ConfigurationError, ParseError, ValidationError

# Canonical channel order. Serialization uses this order; code indexes by name.
CHANNELS = ("heart_rate", "breathing_rate", "posture", "movement")
CSV_COLUMNS = ("hr_bpm", "br_rpm", "posture_deg", "movement_g")
CSV_HEADER = ("t",) + CSV_COLUMNS + ("label", "subject_id")

CHANNEL_RANGES = {
    "heart_rate": (20.0, 240.0),
    "breathing_rate": (2.0, 70.0),
    "posture": (-180.0, 180.0),
    "movement": (0.0, math.inf),
}

ACTION_LABELS = (
    "arm_injury",
    "head_injury",
    "limping",
    "walk_collapse",
    "crawling",
    "running",
)
INJURED_ACTIONS = frozenset(ACTION_LABELS[:4])

CLINICAL_LABELS = ("bleeding", "cardiac_arrest", "brain_injury", "baseline_healthy")


def channel_index(name: str) -> int:
    try:
        return CHANNELS.index(name)
    except ValueError:
        raise KeyError(f"unknown channel {name!r}; expected one of {CHANNELS}") from None


@dataclass(frozen=True)
class VitalSignSeries:
    """A T x D time series of body-sensor channels with a label.

    ``samples`` columns follow :data:`CHANNELS`. ``label`` is an action or
    clinical label depending on the corpus the series belongs to.
    """

    samples: np.ndarray
    rate_hz: float = 1.0
    label: str = ""
    subject_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", arr)
        validate_series(self)

    @property
    def timesteps(self) -> int:
        return self.samples.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return self.samples[:, channel_index(name)]

    def with_samples(self, samples: np.ndarray) -> "VitalSignSeries":
        return replace(self, samples=samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VitalSignSeries):
            return NotImplemented
        return (
            self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
            and self.rate_hz == other.rate_hz
            and self.label == other.label
            and self.subject_id == other.subject_id
        )


def validate_series(series: VitalSignSeries) -> None:
    """Raise ValidationError unless the series satisfies its invariants."""
    arr = series.samples
    if arr.ndim != 2:
        raise ValidationError(f"samples must be 2-D (T x D), got shape {arr.shape}")
    t, d = arr.shape
    if t < 1:
        raise ValidationError("series must contain at least one timestep")
    if d != len(CHANNELS):
        raise ValidationError(f"expected {len(CHANNELS)} channels, got {d}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("series contains non-finite values")
    if series.rate_hz <= 0:
        raise ValidationError(f"rate_hz must be positive, got {series.rate_hz}")
    for name in CHANNELS:
        lo, hi = CHANNEL_RANGES[name]
        col = arr[:, channel_index(name)]
        if col.min() < lo or col.max() > hi:
            raise ValidationError(
                f"channel {name} outside [{lo}, {hi}]: "
                f"observed [{col.min():.3f}, {col.max():.3f}]"
            )


@dataclass(frozen=True)
class ChannelProfile:
    """Band of per-series base levels plus linear trend and noise amplitude.

    A generated channel is ``base + slope * t + noise`` with ``base`` drawn
    uniformly from ``[lo, hi]`` once per series, then clipped to the channel's
    physiological range.
    """

    lo: float
    hi: float
    slope: float = 0.0
    noise: float = 0.0

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigurationError(f"profile band min {self.lo} > max {self.hi}")
        if self.noise < 0:
            raise ConfigurationError(f"noise amplitude must be >= 0, got {self.noise}")

    def mean_band(self, timesteps: int, rate_hz: float = 1.0) -> tuple[float, float]:
        """Band the per-series time mean falls in (noise-free)."""
        drift = self.slope * (timesteps - 1) / (2.0 * rate_hz)
        return (self.lo + drift, self.hi + drift)


ClassProfile = dict[str, ChannelProfile]


def _p(lo, hi, slope=0.0, noise=0.0) -> ChannelProfile:
    return ChannelProfile(lo=lo, hi=hi, slope=slope, noise=noise)


# Field corpus: six action classes, separable by construction. Bands were
# chosen so every pair of classes differs strongly in at least one channel.
FIELD_PROFILES: dict[str, ClassProfile] = {
    "arm_injury": {
        "heart_rate": _p(88, 105, noise=2.5),
        "breathing_rate": _p(18, 24, noise=1.0),
        "posture": _p(10, 30, noise=3.0),
        "movement": _p(0.20, 0.40, noise=0.04),
    },
    "head_injury": {
        "heart_rate": _p(55, 70, noise=2.5),
        "breathing_rate": _p(10, 16, noise=1.0),
        "posture": _p(35, 60, noise=4.0),
        "movement": _p(0.08, 0.25, noise=0.03),
    },
    "limping": {
        "heart_rate": _p(100, 120, noise=3.0),
        "breathing_rate": _p(20, 28, noise=1.2),
        "posture": _p(5, 20, noise=3.0),
        "movement": _p(0.35, 0.60, noise=0.06),
    },
    "walk_collapse": {
        "heart_rate": _p(100, 120, slope=-0.35, noise=3.0),
        "breathing_rate": _p(20, 26, slope=-0.08, noise=1.2),
        "posture": _p(5, 15, slope=0.80, noise=4.0),
        "movement": _p(0.30, 0.50, slope=-0.0022, noise=0.04),
    },
    "crawling": {
        "heart_rate": _p(95, 115, noise=3.0),
        "breathing_rate": _p(22, 30, noise=1.2),
        "posture": _p(75, 100, noise=4.0),
        "movement": _p(0.22, 0.45, noise=0.05),
    },
    "running": {
        "heart_rate": _p(140, 170, noise=4.0),
        "breathing_rate": _p(35, 45, noise=1.5),
        "posture": _p(0, 15, noise=3.0),
        "movement": _p(0.80, 1.50, noise=0.10),
    },
}

# Ambiguous variant: the three augmentation-eligible injury classes share one
# healthy-looking sensor profile (the subjects acting them are healthy), so raw
# sensor streams carry no signal separating them. The remaining classes keep
# their separable bands. Used by the augmentation-benefit experiments.
_HEALTHY_ACTOR_PROFILE: ClassProfile = {
    "heart_rate": _p(72, 90, noise=2.5),
    "breathing_rate": _p(14, 20, noise=1.0),
    "posture": _p(5, 25, noise=3.0),
    "movement": _p(0.20, 0.40, noise=0.04),
}
AMBIGUOUS_FIELD_PROFILES: dict[str, ClassProfile] = {
    **FIELD_PROFILES,
    "arm_injury": _HEALTHY_ACTOR_PROFILE,
    "head_injury": _HEALTHY_ACTOR_PROFILE,
    "walk_collapse": _HEALTHY_ACTOR_PROFILE,
}

# Clinical reference corpus: bands enforce the orderings the tests rely on,
# e.g. cardiac arrest heart rate sits far below the healthy band.
CLINICAL_PROFILES: dict[str, ClassProfile] = {
    "bleeding": {
        "heart_rate": _p(115, 135, noise=3.0),
        "breathing_rate": _p(24, 32, noise=1.2),
        "posture": _p(40, 80, noise=4.0),
        "movement": _p(0.05, 0.20, noise=0.03),
    },
    "cardiac_arrest": {
        "heart_rate": _p(25, 40, noise=2.0),
        "breathing_rate": _p(3, 7, noise=0.6),
        "posture": _p(85, 110, noise=3.0),
        "movement": _p(0.00, 0.05, noise=0.01),
    },
    "brain_injury": {
        "heart_rate": _p(48, 60, noise=2.0),
        "breathing_rate": _p(8, 12, noise=0.8),
        "posture": _p(60, 95, noise=4.0),
        "movement": _p(0.00, 0.10, noise=0.02),
    },
    "baseline_healthy": {
        "heart_rate": _p(65, 80, noise=2.5),
        "breathing_rate": _p(12, 16, noise=1.0),
        "posture": _p(0, 20, noise=3.0),
        "movement": _p(0.05, 0.25, noise=0.03),
    },
}


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything that determines a corpus. Equal specs give equal corpora."""

    seed: int = 0
    per_class: int = 10
    timesteps: int = 120
    rate_hz: float = 1.0
    profiles: dict[str, ClassProfile] = field(default_factory=dict)

    def __post_init__(self):
        if self.per_class < 0:
            raise ConfigurationError(f"per_class must be >= 0, got {self.per_class}")
        if self.timesteps < 1:
            raise ConfigurationError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.rate_hz <= 0:
            raise ConfigurationError(f"rate_hz must be > 0, got {self.rate_hz}")
        for label, profile in self.profiles.items():
            missing = [c for c in CHANNELS if c not in profile]
            if missing:
                raise ConfigurationError(f"profile {label!r} missing channels {missing}")


def _generate_series(
    rng: np.random.Generator,
    profile: ClassProfile,
    spec: GeneratorSpec,
    label: str,
    subject_id: str,
) -> VitalSignSeries:
    t = np.arange(spec.timesteps, dtype=np.float64) / spec.rate_hz
    cols = []
    for name in CHANNELS:
        p = profile[name]
        base = rng.uniform(p.lo, p.hi)
        noise = p.noise * rng.standard_normal(spec.timesteps)
        col = base + p.slope * t + noise
        lo, hi = CHANNEL_RANGES[name]
        cols.append(np.clip(col, lo, min(hi, 1e9)))
    samples = np.stack(cols, axis=1)
    return VitalSignSeries(samples=samples, rate_hz=spec.rate_hz, label=label, subject_id=subject_id)


def _generate_corpus(spec: GeneratorSpec, default_profiles, id_prefix: str) -> list[VitalSignSeries]:
    profiles = spec.profiles or default_profiles
    rng = np.random.default_rng(spec.seed)
    corpus = []
    for label in profiles:  # insertion order keeps generation deterministic
        for i in range(spec.per_class):
            subject_id = f"{id_prefix}-{label}-{i:03d}"
            corpus.append(_generate_series(rng, profiles[label], spec, label, subject_id))
    return corpus


def generate_field_corpus(spec: GeneratorSpec) -> list[VitalSignSeries]:
    """Six action classes, ``spec.per_class`` series each, labeled by action."""
    return _generate_corpus(spec, FIELD_PROFILES, "field")


def generate_clinical_reference(spec: GeneratorSpec) -> list[VitalSignSeries]:
    """Four clinical classes standing in for an ICU reference corpus."""
    return _generate_corpus(spec, CLINICAL_PROFILES, "clin")


def write_csv(series: VitalSignSeries, path) -> None:
    """One row per timestep; ``t`` is the integer sample index.

    Values are written with repr precision so a read reproduces them exactly.
    The sampling rate is not part of the wire format; readers supply it
    (1 Hz by default).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i in range(series.timesteps):
            row = [i] + [repr(float(v)) for v in series.samples[i]]
            row += [series.label, series.subject_id]
            writer.writerow(row)


def read_csv(path, rate_hz: float = 1.0) -> VitalSignSeries:
    """Parse a series written by :func:`write_csv`, validating every row."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise ParseError(f"{path}: header missing columns {missing}")
        idx = {c: header.index(c) for c in CSV_HEADER}

        rows = []
        label = None
        subject_id = None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values = [float(row[idx[c]]) for c in CSV_COLUMNS]
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{line_no}: malformed row ({exc})") from None
            for name, v in zip(CHANNELS, values):
                lo, hi = CHANNEL_RANGES[name]
                if not (lo <= v <= hi) or not math.isfinite(v):
                    raise ParseError(
                        f"{path}:{line_no}: {name}={v} outside valid range [{lo}, {hi}]"
                    )
            rows.append(values)
            label = row[idx["label"]]
            subject_id = row[idx["subject_id"]]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return VitalSignSeries(
        samples=np.asarray(rows, dtype=np.float64),
        rate_hz=rate_hz,
        label=label,
        subject_id=subject_id,
    )


def read_corpus(directory, rate_hz: float = 1.0) -> list[VitalSignSeries]:
    """Read every ``*.csv`` under ``directory`` in sorted order."""
    from pathlib import Path

    paths = sorted(Path(directory).glob("*.csv"))
    return [read_csv(p, rate_hz=rate_hz) for p in paths]


def write_corpus(corpus: list[VitalSignSeries], directory) -> list[str]:
    """Write one CSV per series, named after its subject id."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, series in enumerate(corpus):
        name = series.subject_id or f"series-{i:04d}"
        path = directory / f"{name}.csv"
        write_csv(series, path)
        paths.append(str(path))
    return paths
