"""Denoising diffusion prior over standardised feature vectors."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError
from .numerics import Mlp, Rng, ad, derive_seed
from .numerics.nn import train_loop

EMBED_DIM = 16
HIDDEN = (64, 64)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) == 0:
            raise ContractError("betas must be a non-empty vector")
        if not (np.all(b > 0) and np.all(b < 1) and np.all(np.diff(b) >= 0)):
            raise ContractError("betas must be nondecreasing within (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, T: int = 100, beta_start: float = 1e-4, beta_end: float | None = None) -> "NoiseSchedule":
        # End value rescaled from the common 1000-step schedule so alpha_bar_T stays tiny.
        beta_end = 0.02 * 1000 / T if beta_end is None else beta_end
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def at(self, t: int) -> tuple[float, float, float]:
        """(beta_t, alpha_t, alpha_bar_t) for 1-based t."""
        if not 1 <= t <= self.T:
            raise ContractError(f"t={t} outside [1, {self.T}]")
        return float(self.betas[t - 1]), float(self.alphas[t - 1]), float(self.alpha_bars[t - 1])


def forward_noise(x0, t, eps, schedule: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` is a scalar or per-row array (1-based)."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ContractError(f"t outside [1, {schedule.T}]")
    ab = schedule.alpha_bars[t - 1]
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def time_embedding(t, T: int, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal features of t / T at geometrically spaced frequencies."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    freqs = np.exp(-math.log(1000.0) * np.arange(dim // 2) / max(dim // 2 - 1, 1))
    ang = (t / T) * 1000.0 * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class PriorConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float | None = None
    epochs: int = 200
    batch_size: int = 256
    lr: float = 2e-3
    final_lr_frac: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ContractError("invalid prior configuration")


@dataclass(frozen=True)
class DiffusionPrior:
    schedule: NoiseSchedule
    params: dict
    mu_x: np.ndarray
    sd_x: np.ndarray
    curve: tuple = field(default=(), compare=False)
    config: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return len(self.mu_x)

    @property
    def net(self) -> Mlp:
        return Mlp("eps_", (self.dim + EMBED_DIM, *HIDDEN, self.dim))

    def eps_hat(self, xt, t, params=None):
        """Predicted noise; ``xt`` may be an array or a tensor, ``t`` scalar or per-row."""
        params = self.params if params is None else params
        n = xt.shape[0]
        emb = time_embedding(np.broadcast_to(np.asarray(t), (n,)), self.schedule.T)
        return self.net(params, ad.concat([xt, emb], axis=1))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mu_x) / self.sd_x

    def denormalize(self, xn):
        return np.asarray(xn) * self.sd_x + self.mu_x


def init_prior(features, config: PriorConfig = PriorConfig()) -> DiffusionPrior:
    x = np.asarray(features, dtype=np.float64)
    mu, sd = x.mean(0), x.std(0)
    if np.any(sd <= 0):
        raise ContractError("constant feature column; cannot standardise")
    schedule = NoiseSchedule.linear(config.T, config.beta_start, config.beta_end)
    net = Mlp("eps_", (x.shape[1] + EMBED_DIM, *HIDDEN, x.shape[1]))
    params = net.init(Rng(derive_seed(config.seed, "prior-init")))
    return DiffusionPrior(schedule, params, mu, sd, config=asdict(config))


def train_prior(features, config: PriorConfig = PriorConfig()) -> DiffusionPrior:
    """Fit the noise predictor by the epsilon-regression objective."""
    prior = init_prior(features, config)
    x0 = prior.normalize(features)
    n = len(x0)
    rng = Rng(derive_seed(config.seed, "prior-train"))
    noise_rng = rng.spawn("noise")
    T = prior.schedule.T

    def objective(p, idx):
        t = noise_rng.integers(1, T + 1, len(idx))
        eps = noise_rng.normal((len(idx), prior.dim))
        xt = forward_noise(x0[idx], t, eps, prior.schedule)
        return ad.mean(ad.sum(ad.square(prior.eps_hat(xt, t, p) - eps), axis=1))

    steps = config.epochs * math.ceil(n / min(config.batch_size, n))
    params, curve = train_loop(objective, prior.params, n, steps, config.batch_size, config.lr, rng,
                               final_lr_frac=config.final_lr_frac)
    return replace(prior, params=params, curve=tuple(curve))


def reverse_mean(prior: DiffusionPrior, x, t: int, eps_hat) -> np.ndarray:
    beta, alpha, abar = prior.schedule.at(t)
    return (x - (beta / math.sqrt(1.0 - abar)) * eps_hat) / math.sqrt(alpha)


def sample_unconditional(prior: DiffusionPrior, n: int, seed: int, normalized: bool = False) -> np.ndarray:
    """Ancestral sampling with variance beta_t at every step but the last."""
    if n < 1:
        raise ContractError("n must be positive")
    rng = Rng(derive_seed(seed, "diffusion-sample"))
    x = rng.normal((n, prior.dim))
    for t in range(prior.schedule.T, 0, -1):
        mu = reverse_mean(prior, x, t, prior.eps_hat(x, t).numpy())
        x = mu + math.sqrt(prior.schedule.at(t)[0]) * rng.normal((n, prior.dim)) if t > 1 else mu
    return x if normalized else prior.denormalize(x)


def prior_to_dict(prior: DiffusionPrior) -> dict:
    return {
        "kind": "diffusion",
        "betas": prior.schedule.betas.tolist(),
        "mu_x": prior.mu_x.tolist(),
        "sd_x": prior.sd_x.tolist(),
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in sorted(prior.params.items())},
        "config": prior.config,
        "curve": [list(c) for c in prior.curve],
    }


def prior_from_dict(d: dict) -> DiffusionPrior:
    if d.get("kind") != "diffusion":
        raise ContractError("not a diffusion checkpoint")
    params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
    return DiffusionPrior(NoiseSchedule(np.asarray(d["betas"])), params, np.asarray(d["mu_x"]),
                          np.asarray(d["sd_x"]), tuple(tuple(c) for c in d["curve"]), d["config"])


def save_prior(prior: DiffusionPrior, path) -> None:
    from .harness.io import atomic_write_text
    atomic_write_text(path, json.dumps(prior_to_dict(prior), sort_keys=True) + "\n")


def load_prior(path) -> DiffusionPrior:
    return prior_from_dict(json.loads(Path(path).read_text()))
