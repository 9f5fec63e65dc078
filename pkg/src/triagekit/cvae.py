"""Conditional VAE that rewrites healthy vital signs toward clinical conditions.

The model trains on the clinical reference corpus. Encoder and decoder are
both conditioned on the clinical label (one-hot concatenated to their inputs),
and a small LSTM classifier over the latent code pulls the latent space toward
class-separated regions. Augmentation then encodes a healthy field recording
under a *target* condition and decodes it back, producing vitals that read as
if the subject had that condition.

Loss composition: ``total = alpha * (reconstruction + kl) + regularizer``
where the KL term is the closed-form divergence to a standard normal prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .validation import (
    ConfigurationError,
    NotFittedError,
    ShapeError,
    ValidationError,
    check_fitted,
)
from .vitalgen import CHANNELS, CHANNEL_RANGES, CLINICAL_LABELS, VitalSignSeries

ACTION_TO_CLINICAL = {
    "arm_injury": "bleeding",
    "walk_collapse": "cardiac_arrest",
    "head_injury": "brain_injury",
    "limping": None,
    "crawling": None,
    "running": None,
}


def action_to_clinical(action: str) -> str | None:
    """Clinical condition an injured action maps to; None means use raw data."""
    if action not in ACTION_TO_CLINICAL:
        raise ValidationError(f"unknown action label {action!r}")
    return ACTION_TO_CLINICAL[action]


# ---------------------------------------------------------------------------
# Loss terms. These are the numerical contract of the model; each has a
# brute-force oracle in the tests.
# ---------------------------------------------------------------------------

def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over timesteps, averaged over channels and batch."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((x_hat - x) ** 2)


def kl_loss(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)) averaged over the batch.

    Per sample: 0.5 * sum(mu^2 + exp(log_var) - 1 - log_var).
    """
    if mu.shape != log_var.shape:
        raise ShapeError(f"shape mismatch: {tuple(mu.shape)} vs {tuple(log_var.shape)}")
    per_sample = 0.5 * torch.sum(mu**2 + torch.exp(log_var) - 1.0 - log_var, dim=-1)
    return per_sample.mean()


def reparameterize(mu, log_var, eps):
    """z = mu + exp(0.5 * log_var) * eps, elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != eps.shape:
        raise ShapeError(
            f"mu/log_var/eps shapes differ: {mu.shape}, {log_var.shape}, {eps.shape}"
        )
    return mu + np.exp(0.5 * log_var) * eps


def classifier_cross_entropy(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean -log p(true label) given predicted distributions (rows sum to 1)."""
    picked = probs.gather(1, labels.view(-1, 1)).clamp_min(1e-12)
    return (-torch.log(picked)).mean()


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    kl: float
    regularizer: float
    total: float


def total_loss(reconstruction: float, kl: float, regularizer: float, alpha: float) -> LossBreakdown:
    """Compose the three terms exactly as the training loop does."""
    if alpha < 0:
        raise ConfigurationError(f"alpha must be >= 0, got {alpha}")
    return LossBreakdown(
        reconstruction=reconstruction,
        kl=kl,
        regularizer=regularizer,
        total=alpha * (reconstruction + kl) + regularizer,
    )


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class ConditionalVae(nn.Module):
    """MLP encoder/decoder over flattened T x D input, plus a latent classifier.

    The classifier reads the latent code as a sequence of scalars through an
    LSTM; its cross-entropy is the latent-space regularizer.
    """

    def __init__(self, timesteps: int, n_channels: int, n_classes: int,
                 latent_dim: int = 16, hidden_size: int = 32,
                 widths: tuple[int, int] = (128, 64)):
        super().__init__()
        self.timesteps = timesteps
        self.n_channels = n_channels
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        in_dim = timesteps * n_channels
        wide, narrow = widths
        self.enc = nn.Sequential(
            nn.Linear(in_dim + n_classes, wide), nn.ReLU(),
            nn.Linear(wide, narrow), nn.ReLU(),
        )
        self.enc_mu = nn.Linear(narrow, latent_dim)
        self.enc_log_var = nn.Linear(narrow, latent_dim)
        self.dec = nn.Sequential(
            nn.Linear(latent_dim + n_classes, narrow), nn.ReLU(),
            nn.Linear(narrow, wide), nn.ReLU(),
            nn.Linear(wide, in_dim),
        )
        self.latent_rnn = nn.LSTM(input_size=1, hidden_size=hidden_size, batch_first=True)
        self.latent_head = nn.Linear(hidden_size, n_classes)

    def encode(self, x: torch.Tensor, onehot: torch.Tensor):
        h = self.enc(torch.cat([x.flatten(1), onehot], dim=1))
        return self.enc_mu(h), self.enc_log_var(h)

    def decode(self, z: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
        out = self.dec(torch.cat([z, onehot], dim=1))
        return out.view(-1, self.timesteps, self.n_channels)

    def classify_latent(self, z: torch.Tensor) -> torch.Tensor:
        seq = z.unsqueeze(-1)  # (B, latent_dim, 1)
        _, (h_n, _) = self.latent_rnn(seq)
        return self.latent_head(h_n[-1])


def cvae_batch_loss(net: ConditionalVae, x: torch.Tensor, onehot: torch.Tensor,
                    labels: torch.Tensor, alpha: float, eps: torch.Tensor):
    """Differentiable loss terms for one batch with the noise fixed to ``eps``.

    Returns (total, reconstruction, kl, regularizer) as torch scalars.
    """
    mu, log_var = net.encode(x, onehot)
    z = mu + torch.exp(0.5 * log_var) * eps
    x_hat = net.decode(z, onehot)
    rec = reconstruction_loss(x, x_hat)
    kl = kl_loss(mu, log_var)
    logits = net.classify_latent(z)
    reg = nn.functional.cross_entropy(logits, labels)
    total = alpha * (rec + kl) + reg
    return total, rec, kl, reg


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------

class VitalSignAugmenter:
    """Fits the conditional VAE on a clinical reference corpus.

    After ``fit``, ``transform`` (or ``augment``) rewrites healthy series
    toward a target clinical condition. Channels are standardized with
    statistics frozen from the training corpus.

    Parameters mirror the training configuration; ``alpha`` weighs the
    ELBO terms against the latent-classifier regularizer.
    """

    CHECKPOINT_KIND = "vital-sign-augmenter"

    def __init__(self, latent_dim: int = 16, alpha: float = 1.0,
                 learning_rate: float = 1e-4, epochs: int = 50,
                 batch_size: int = 16, hidden_size: int = 32,
                 seed: int = 0, deterministic: bool = True):
        self.latent_dim = latent_dim
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.hidden_size = hidden_size
        self.seed = seed
        self.deterministic = deterministic

    # sklearn-compatible parameter plumbing
    def get_params(self, deep: bool = True) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "alpha": self.alpha,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "hidden_size": self.hidden_size,
            "seed": self.seed,
            "deterministic": self.deterministic,
        }

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self.get_params():
                raise ConfigurationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _check_config(self):
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.latent_dim < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("latent_dim/batch_size must be >= 1, epochs >= 0")

    # -- training ----------------------------------------------------------

    def fit(self, corpus: list[VitalSignSeries], y=None) -> "VitalSignAugmenter":
        """Train on a clinical reference corpus containing all four labels."""
        self._check_config()
        if not corpus:
            raise ValidationError("training corpus is empty")
        labels = [s.label for s in corpus] if y is None else list(y)
        missing = [c for c in CLINICAL_LABELS if c not in labels]
        if missing:
            raise ValidationError(f"training corpus missing clinical classes: {missing}")
        timesteps = corpus[0].timesteps
        for s in corpus:
            if s.timesteps != timesteps:
                raise ShapeError(
                    f"all series must share T; got {s.timesteps} and {timesteps}"
                )

        raw = np.stack([s.samples for s in corpus])  # (N, T, D)
        self.channel_mean_ = raw.mean(axis=(0, 1))
        self.channel_std_ = np.maximum(raw.std(axis=(0, 1)), 1e-6)
        self.timesteps_ = timesteps
        self.classes_ = tuple(CLINICAL_LABELS)

        x = torch.from_numpy((raw - self.channel_mean_) / self.channel_std_).float()
        label_idx = torch.tensor([self.classes_.index(l) for l in labels])
        onehot = nn.functional.one_hot(label_idx, len(self.classes_)).float()

        if self.deterministic:
            torch.manual_seed(self.seed)
        gen = torch.Generator().manual_seed(self.seed)
        net = ConditionalVae(
            timesteps, len(CHANNELS), len(self.classes_),
            latent_dim=self.latent_dim, hidden_size=self.hidden_size,
        )
        opt = torch.optim.Adam(net.parameters(), lr=self.learning_rate)

        n = len(corpus)
        history = []
        for _ in range(self.epochs):
            order = torch.randperm(n, generator=gen)
            sums = np.zeros(3)
            batches = 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                eps = torch.randn(len(idx), self.latent_dim, generator=gen)
                total, rec, kl, reg = cvae_batch_loss(
                    net, x[idx], onehot[idx], label_idx[idx], self.alpha, eps
                )
                opt.zero_grad()
                total.backward()
                opt.step()
                sums += [rec.item(), kl.item(), reg.item()]
                batches += 1
            rec_m, kl_m, reg_m = sums / batches
            history.append(total_loss(rec_m, kl_m, reg_m, self.alpha))
        net.eval()
        self.model_ = net
        self.history_ = history
        return self

    # -- inference ---------------------------------------------------------

    def _onehot(self, label: str) -> torch.Tensor:
        if label not in self.classes_:
            raise ValidationError(
                f"unknown clinical label {label!r}; expected one of {self.classes_}"
            )
        vec = torch.zeros(1, len(self.classes_))
        vec[0, self.classes_.index(label)] = 1.0
        return vec

    def _standardize(self, series: VitalSignSeries) -> torch.Tensor:
        if series.timesteps != self.timesteps_:
            raise ShapeError(
                f"series has T={series.timesteps}, model trained with T={self.timesteps_}"
            )
        std = (series.samples - self.channel_mean_) / self.channel_std_
        return torch.from_numpy(std).float().unsqueeze(0)

    def encode(self, series: VitalSignSeries, label: str):
        """Posterior (mu, log_var) of the series under the given condition."""
        check_fitted(self, "model_")
        x = self._standardize(series)
        with torch.no_grad():
            mu, log_var = self.model_.encode(x, self._onehot(label))
        return mu[0].numpy().astype(np.float64), log_var[0].numpy().astype(np.float64)

    def decode(self, z: np.ndarray, label: str) -> np.ndarray:
        """Decode a latent code to raw-unit T x D values (not range-clipped)."""
        check_fitted(self, "model_")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ShapeError(f"z has shape {z.shape}, expected ({self.latent_dim},)")
        with torch.no_grad():
            out = self.model_.decode(
                torch.from_numpy(z).float().unsqueeze(0), self._onehot(label)
            )[0].numpy()
        return out.astype(np.float64) * self.channel_std_ + self.channel_mean_

    def augment(self, series: VitalSignSeries, target: str,
                seed: int | None = None, noise_scale: float = 0.0) -> VitalSignSeries:
        """Rewrite a series as if its subject had the target condition.

        Uses the posterior mean path; ``noise_scale > 0`` adds seeded latent
        noise. Output values are clipped to physiological channel ranges.
        """
        check_fitted(self, "model_")
        mu, log_var = self.encode(series, target)
        if noise_scale > 0.0:
            rng = np.random.default_rng(seed)
            eps = rng.standard_normal(self.latent_dim) * noise_scale
        else:
            eps = np.zeros(self.latent_dim)
        z = reparameterize(mu, log_var, eps)
        values = self.decode(z, target)
        for j, name in enumerate(CHANNELS):
            lo, hi = CHANNEL_RANGES[name]
            values[:, j] = np.clip(values[:, j], lo, min(hi, 1e9))
        return VitalSignSeries(
            samples=values, rate_hz=series.rate_hz,
            label=target, subject_id=series.subject_id,
        )

    def transform(self, corpus: list[VitalSignSeries], target: str,
                  seed: int | None = None) -> list[VitalSignSeries]:
        return [self.augment(s, target, seed=seed) for s in corpus]

    def reconstruction_error(self, series: VitalSignSeries, label: str) -> float:
        """Standardized-space MSE of the mean-path reconstruction."""
        mu, _ = self.encode(series, label)
        values = self.decode(mu, label)
        diff = (values - series.samples) / self.channel_std_
        return float(np.mean(diff**2))

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "model_")
        params = {k: v.detach().numpy() for k, v in self.model_.state_dict().items()}
        params["channel_mean"] = self.channel_mean_
        params["channel_std"] = self.channel_std_
        config = self.get_params()
        config["timesteps"] = self.timesteps_
        config["classes"] = list(self.classes_)
        history = [
            [b.reconstruction, b.kl, b.regularizer, b.total] for b in self.history_
        ]
        save_checkpoint(path, self.CHECKPOINT_KIND, config, params, {"history": history})

    @classmethod
    def load(cls, path) -> "VitalSignAugmenter":
        config, params, extras = load_checkpoint(path, expected_kind=cls.CHECKPOINT_KIND)
        timesteps = config.pop("timesteps")
        classes = tuple(config.pop("classes"))
        est = cls(**config)
        est.timesteps_ = timesteps
        est.classes_ = classes
        est.channel_mean_ = params.pop("channel_mean")
        est.channel_std_ = params.pop("channel_std")
        net = ConditionalVae(
            timesteps, len(CHANNELS), len(classes),
            latent_dim=est.latent_dim, hidden_size=est.hidden_size,
        )
        net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
        net.eval()
        est.model_ = net
        est.history_ = [
            LossBreakdown(
                reconstruction=r, kl=k, regularizer=g,
                total=t,
            )
            for r, k, g, t in extras.get("history", [])
        ]
        return est


def write_history_csv(history: list[LossBreakdown], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,reconstruction,kl,regularizer,total\n")
        for epoch, b in enumerate(history):
            fh.write(f"{epoch},{b.reconstruction!r},{b.kl!r},{b.regularizer!r},{b.total!r}\n")


# ---------------------------------------------------------------------------
# Proximity validation
# ---------------------------------------------------------------------------

class ProximityMatrix:
    """Signed mean deviation of augmented samples from reference class means.

    ``m[a, c, j]`` is the time- and sample-averaged deviation of augmented
    class ``a`` on channel ``j`` from the reference mean of clinical class
    ``c``. The z-scored variant divides by the reference per-channel standard
    deviation so channels with different units compare on one scale.
    """

    def __init__(self, augmented_classes, clinical_classes, channels, m, channel_scale):
        self.augmented_classes = tuple(augmented_classes)
        self.clinical_classes = tuple(clinical_classes)
        self.channels = tuple(channels)
        self.m = np.asarray(m, dtype=np.float64)            # (A, C, J)
        self.channel_scale = np.asarray(channel_scale)       # (J,)

    def value(self, augmented: str, clinical: str, channel: str) -> float:
        return float(
            self.m[
                self.augmented_classes.index(augmented),
                self.clinical_classes.index(clinical),
                self.channels.index(channel),
            ]
        )

    def zscored(self) -> np.ndarray:
        return self.m / self.channel_scale

    def abs_sum(self, augmented: str, zscore: bool = False) -> dict[str, float]:
        """Sum over channels of |m| for each clinical class."""
        a = self.augmented_classes.index(augmented)
        mat = self.zscored() if zscore else self.m
        return {
            c: float(np.sum(np.abs(mat[a, ci, :])))
            for ci, c in enumerate(self.clinical_classes)
        }

    def closest_class(self, augmented: str, zscore: bool = False) -> str:
        sums = self.abs_sum(augmented, zscore=zscore)
        return min(sums, key=sums.get)

    def diagonal_holds(self, zscore: bool = False) -> bool:
        """True if every augmented class is strictly closest to itself."""
        for a in self.augmented_classes:
            if a not in self.clinical_classes:
                continue
            sums = self.abs_sum(a, zscore=zscore)
            intended = sums[a]
            if any(intended >= v for c, v in sums.items() if c != a):
                return False
        return True

    def to_rows(self) -> list[dict]:
        rows = []
        mz = self.zscored()
        for ai, a in enumerate(self.augmented_classes):
            for ci, c in enumerate(self.clinical_classes):
                for ji, j in enumerate(self.channels):
                    rows.append({
                        "augmented_class": a,
                        "clinical_class": c,
                        "channel": j,
                        "m": float(self.m[ai, ci, ji]),
                        "abs_m": float(abs(self.m[ai, ci, ji])),
                        "m_zscored": float(mz[ai, ci, ji]),
                    })
        return rows

    def write_csv(self, path) -> None:
        rows = self.to_rows()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("augmented_class,clinical_class,channel,m,abs_m,m_zscored\n")
            for r in rows:
                fh.write(
                    f"{r['augmented_class']},{r['clinical_class']},{r['channel']},"
                    f"{r['m']!r},{r['abs_m']!r},{r['m_zscored']!r}\n"
                )


def proximity_map(augmented: list[VitalSignSeries],
                  reference: list[VitalSignSeries]) -> ProximityMatrix:
    """Compare augmented output against each reference class's channel means."""
    if not augmented or not reference:
        raise ValidationError("augmented and reference sets must be nonempty")
    clinical_classes = tuple(sorted({s.label for s in reference}))
    augmented_classes = tuple(sorted({s.label for s in augmented}))

    ref_means = np.zeros((len(clinical_classes), len(CHANNELS)))
    for ci, c in enumerate(clinical_classes):
        members = [s.samples for s in reference if s.label == c]
        if not members:
            raise ValidationError(f"reference class {c!r} is empty")
        ref_means[ci] = np.concatenate(members, axis=0).mean(axis=0)
    all_ref = np.concatenate([s.samples for s in reference], axis=0)
    channel_scale = np.maximum(all_ref.std(axis=0), 1e-9)

    m = np.zeros((len(augmented_classes), len(clinical_classes), len(CHANNELS)))
    for ai, a in enumerate(augmented_classes):
        members = [s.samples for s in augmented if s.label == a]
        aug_mean = np.concatenate(members, axis=0).mean(axis=0)
        for ci in range(len(clinical_classes)):
            m[ai, ci] = aug_mean - ref_means[ci]
    return ProximityMatrix(augmented_classes, clinical_classes, CHANNELS, m, channel_scale)
