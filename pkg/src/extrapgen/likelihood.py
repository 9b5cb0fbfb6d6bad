"""Gaussian conditional models linking specifications and features.

Variants:

A  one head per specification, each reading a masked subset of features
B  one head per specification, each reading every feature
C  one joint head for the whole specification vector (full covariance)
D  reverse direction, z -> x, joint Gaussian over features (full covariance)
E  reverse direction, z -> x, independent Gaussian per feature

All fitting happens in coordinates standardised with statistics of the
seen data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError
from .numerics import Mlp, Rng, Tensor, ad, derive_seed
from .numerics.nn import train_loop
from .synthetic import LabeledDataset

SIGMA_FLOOR = 1e-3
HIDDEN = (64, 64)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
VARIANTS = ("A", "B", "C", "D", "E")
REVERSE = ("D", "E")
# True parent sets of the synthetic task: Z1 <- {X1, X2}, Z2 <- {X2, X3}.
TRUE_MASKS = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])


def gaussian_nll(z, mu, sigma):
    """Closed-form NLL in the printed form ½((z−μ)/σ)² + ½ log σ + ½ log 2π.

    The ½ log σ term (rather than log σ) is kept as written; the minimiser
    in μ is unaffected.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < SIGMA_FLOOR):
        raise ContractError(f"sigma below floor {SIGMA_FLOOR}")
    r = (np.asarray(z, dtype=np.float64) - mu) / sigma
    return 0.5 * r * r + 0.5 * np.log(sigma) + HALF_LOG_2PI


def _nll_printed(r, sd):
    return 0.5 * ad.square(r / sd) + 0.5 * ad.log(sd) + HALF_LOG_2PI


def _nll_diag(r, sd):
    return 0.5 * ad.square(r / sd) + ad.log(sd) + HALF_LOG_2PI


def _positive(raw):
    return ad.softplus(raw) + SIGMA_FLOOR


def _tril_index(k: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(k) for j in range(i + 1)]


def _nll_full(r, raw, k: int):
    """-log N(r; 0, L Lᵀ) per row, with L filled row-major from ``raw``.

    Diagonal entries pass through softplus + floor; off-diagonals are free.
    Solved by forward substitution on the columns.
    """
    pos = {ij: n for n, ij in enumerate(_tril_index(k))}
    u = []
    logdet = 0.0
    for i in range(k):
        acc = r[:, i:i + 1]
        for j in range(i):
            acc = acc - raw[:, pos[(i, j)]:pos[(i, j)] + 1] * u[j]
        lii = _positive(raw[:, pos[(i, i)]:pos[(i, i)] + 1])
        u.append(acc / lii)
        logdet = logdet + ad.log(lii)
    quad = 0.0
    for uj in u:
        quad = quad + ad.square(uj)
    return 0.5 * quad + logdet + k * HALF_LOG_2PI


def _tril_numpy(raw: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(raw), k, k))
    for n, (i, j) in enumerate(_tril_index(k)):
        v = raw[:, n]
        out[:, i, j] = np.logaddexp(0.0, v) + SIGMA_FLOOR if i == j else v
    return out


@dataclass(frozen=True)
class GaussianHead:
    """Mean and scale networks for one (block of) output(s)."""

    name: str
    in_dim: int
    out_dim: int
    full_cov: bool = False

    @property
    def mean_net(self) -> Mlp:
        return Mlp(f"{self.name}mu_", (self.in_dim, *HIDDEN, self.out_dim))

    @property
    def scale_net(self) -> Mlp:
        k = self.out_dim
        return Mlp(f"{self.name}sd_", (self.in_dim, *HIDDEN, k * (k + 1) // 2 if self.full_cov else k))

    def init(self, rng: Rng) -> dict[str, np.ndarray]:
        return {**self.mean_net.init(rng.spawn(self.name, "mu")),
                **self.scale_net.init(rng.spawn(self.name, "sd"), out_scale=0.1)}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    beta: float = 5e-4
    final_lr_frac: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if (self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or self.beta < 0
                or not 0 < self.final_lr_frac <= 1):
            raise ContractError("invalid training configuration")


@dataclass(frozen=True)
class NormStats:
    mu_x: np.ndarray
    sd_x: np.ndarray
    mu_z: np.ndarray
    sd_z: np.ndarray

    @classmethod
    def from_data(cls, ds: LabeledDataset) -> "NormStats":
        return cls(ds.x.mean(0), ds.x.std(0), ds.z.mean(0), ds.z.std(0))

    def nx(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mu_x) / self.sd_x

    def dx(self, xn):
        return np.asarray(xn) * self.sd_x + self.mu_x

    def nz(self, z):
        return (np.asarray(z, dtype=np.float64) - self.mu_z) / self.sd_z

    def dz(self, zn):
        return np.asarray(zn) * self.sd_z + self.mu_z

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mu_x", "sd_x", "mu_z", "sd_z")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("mu_x", "sd_x", "mu_z", "sd_z")))


@dataclass(frozen=True)
class LikelihoodModel:
    variant: str
    params: dict
    norm: NormStats
    mask_mode: str = "frozen"  # "frozen", "learnable" or "none"
    masks: np.ndarray | None = None  # frozen 0/1 masks, one row per head
    curve: tuple = field(default=(), compare=False)
    train_config: dict = field(default_factory=dict, compare=False)

    @property
    def reverse(self) -> bool:
        return self.variant in REVERSE

    @property
    def in_dim(self) -> int:
        return len(self.norm.mu_z) if self.reverse else len(self.norm.mu_x)

    @property
    def out_dim(self) -> int:
        return len(self.norm.mu_x) if self.reverse else len(self.norm.mu_z)

    @property
    def heads(self) -> list[GaussianHead]:
        return _heads(self.variant, self.in_dim, self.out_dim)

    def mask_values(self) -> np.ndarray:
        """Current masks in [0,1] (ones for unmasked variants)."""
        if self.mask_mode == "learnable":
            return 1.0 / (1.0 + np.exp(-self.params["mask_logits"]))
        if self.mask_mode == "frozen":
            return np.array(self.masks, dtype=np.float64)
        return np.ones((len(self.heads), self.in_dim))

    def structure(self) -> np.ndarray:
        """Discrete parent-set readout: mask entries above one half."""
        return self.mask_values() > 0.5


def _heads(variant: str, in_dim: int, out_dim: int) -> list[GaussianHead]:
    if variant in ("A", "B"):
        return [GaussianHead(f"h{i}", in_dim, 1) for i in range(out_dim)]
    if variant in ("C", "D"):
        return [GaussianHead("h", in_dim, out_dim, full_cov=True)]
    if variant == "E":
        return [GaussianHead("h", in_dim, out_dim)]
    raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def build_model(variant: str, seen: LabeledDataset, seed: int = 0, mask_mode: str | None = None,
                masks: np.ndarray | None = None) -> LikelihoodModel:
    """Freshly initialised model with normalisation statistics from ``seen``."""
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    norm = NormStats.from_data(seen)
    if np.any(norm.sd_x <= 0) or np.any(norm.sd_z <= 0):
        raise ContractError("seen data has a constant column; cannot standardise")
    if mask_mode is None:
        mask_mode = "frozen" if variant == "A" else "none"
    if mask_mode != "none" and variant != "A":
        raise ContractError("only variant A carries masks")
    rng = Rng(derive_seed(seed, "likelihood", variant))
    in_dim = seen.z.shape[1] if variant in REVERSE else seen.x.shape[1]
    out_dim = seen.x.shape[1] if variant in REVERSE else seen.z.shape[1]
    params = {}
    for h in _heads(variant, in_dim, out_dim):
        params.update(h.init(rng))
    if mask_mode == "frozen":
        masks = TRUE_MASKS.copy() if masks is None else np.asarray(masks, dtype=np.float64)
        if not np.isin(masks, (0.0, 1.0)).all() or masks.shape != (out_dim, in_dim):
            raise ContractError("frozen masks must be 0/1 with one row per specification")
    elif mask_mode == "learnable":
        params["mask_logits"] = np.zeros((out_dim, in_dim))
        masks = None
    elif mask_mode == "none":
        masks = None
    else:
        raise ContractError(f"unknown mask mode {mask_mode!r}")
    return LikelihoodModel(variant, params, norm, mask_mode, masks)


def build_reverse(variant: str, seen: LabeledDataset, seed: int = 0) -> LikelihoodModel:
    if variant not in REVERSE:
        raise ContractError("reverse models are variants D and E")
    return build_model(variant, seen, seed)


def _head_inputs(model: LikelihoodModel, params, inp, i: int):
    if model.mask_mode == "frozen":
        return inp * model.masks[i:i + 1]
    if model.mask_mode == "learnable":
        m = ad.sigmoid(params["mask_logits"])
        return inp * m[i:i + 1]
    return inp


def predict_mean(model: LikelihoodModel, inp, params=None) -> Tensor:
    """Predicted mean in normalised units, shape (n, out_dim). Differentiable in ``inp``."""
    params = model.params if params is None else params
    means = [h.mean_net(params, _head_inputs(model, params, inp, i)) for i, h in enumerate(model.heads)]
    return means[0] if len(means) == 1 else ad.concat(means, axis=1)


def _row_nll(model: LikelihoodModel, params, inp, target, printed: bool):
    total = 0.0
    col = 0
    for i, h in enumerate(model.heads):
        v = _head_inputs(model, params, inp, i)
        mu = h.mean_net(params, v)
        raw = h.scale_net(params, v)
        r = target[:, col:col + h.out_dim] - mu
        if h.full_cov:
            nll = _nll_full(r, raw, h.out_dim)
        else:
            nll = ad.sum(_nll_printed(r, _positive(raw)) if printed else _nll_diag(r, _positive(raw)),
                         axis=1, keepdims=True)
        total = total + nll
        col += h.out_dim
    return total


def _pair(model: LikelihoodModel, x, z):
    xn, zn = model.norm.nx(x), model.norm.nz(z)
    return (zn, xn) if model.reverse else (xn, zn)


def loss_given(model: LikelihoodModel, x, z, params=None) -> Tensor:
    """Mean over rows of the summed per-head NLL (inputs in raw units)."""
    params = model.params if params is None else params
    inp, target = _pair(model, x, z)
    return ad.mean(_row_nll(model, params, inp, target, printed=model.variant in ("A", "B")))


def sparsity(model: LikelihoodModel, params=None) -> Tensor:
    params = model.params if params is None else params
    if model.mask_mode != "learnable":
        return Tensor(0.0)
    return ad.sum(ad.sigmoid(params["mask_logits"]))


def loss_masked(model: LikelihoodModel, x, z, params=None) -> tuple[Tensor, Tensor]:
    """(L_m, L_s): masked NLL and the L1 norm of the soft masks."""
    if model.mask_mode != "learnable":
        raise ContractError("loss_masked needs a model with learnable masks")
    return loss_given(model, x, z, params), sparsity(model, params)


def train(model: LikelihoodModel, seen: LabeledDataset, config: TrainConfig = TrainConfig()) -> LikelihoodModel:
    inp, target = _pair(model, seen.x, seen.z)
    printed = model.variant in ("A", "B")
    learnable = model.mask_mode == "learnable"

    def objective(p, idx):
        loss = ad.mean(_row_nll(model, p, inp[idx], target[idx], printed))
        if learnable:
            loss = loss + config.beta * ad.sum(ad.sigmoid(p["mask_logits"]))
        return loss

    steps = config.epochs * math.ceil(len(seen) / min(config.batch_size, len(seen)))
    rng = Rng(derive_seed(config.seed, "likelihood-train", model.variant))
    params, curve = train_loop(objective, model.params, len(seen), steps, config.batch_size, config.lr, rng,
                               final_lr_frac=config.final_lr_frac)
    return replace(model, params=params, curve=tuple(curve), train_config=asdict(config))


@dataclass(frozen=True)
class Prediction:
    """Mean and scale in normalised units.

    ``scale`` is (n, k) standard deviations for diagonal heads, or (n, k, k)
    lower-triangular factors for full-covariance heads.
    """

    mean: np.ndarray
    scale: np.ndarray

    @property
    def full_cov(self) -> bool:
        return self.scale.ndim == 3


def predict(model: LikelihoodModel, inp) -> Prediction:
    inp = np.asarray(inp, dtype=np.float64)
    params = model.params
    mus, scales = [], []
    for i, h in enumerate(model.heads):
        v = _head_inputs(model, params, inp, i)
        mus.append(h.mean_net(params, v).numpy())
        raw = h.scale_net(params, v).numpy()
        scales.append(_tril_numpy(raw, h.out_dim) if h.full_cov else np.logaddexp(0.0, raw) + SIGMA_FLOOR)
    mean = np.concatenate(mus, axis=1)
    scale = scales[0] if len(scales) == 1 else np.concatenate(scales, axis=1)
    return Prediction(mean, scale)


def predict_raw(model: LikelihoodModel, raw_inp) -> np.ndarray:
    """Predicted mean in raw output units for raw-unit inputs."""
    if model.reverse:
        return model.norm.dx(predict(model, model.norm.nz(raw_inp)).mean)
    return model.norm.dz(predict(model, model.norm.nx(raw_inp)).mean)


def sample_reverse(model: LikelihoodModel, z, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` feature vectors from the reverse model at raw target ``z``."""
    if not model.reverse:
        raise ContractError("sample_reverse needs variant D or E")
    if n < 1:
        raise ContractError("n must be positive")
    z = np.asarray(z, dtype=np.float64).reshape(-1, model.in_dim)
    if len(z) == 1:
        z = np.repeat(z, n, axis=0)
    elif len(z) != n:
        raise ContractError("z must be one target or n targets")
    pred = predict(model, model.norm.nz(z))
    eps = Rng(derive_seed(seed, "reverse", model.variant)).normal((n, model.out_dim))
    if pred.full_cov:
        xn = pred.mean + np.einsum("nij,nj->ni", pred.scale, eps)
    else:
        xn = pred.mean + pred.scale * eps
    return model.norm.dx(xn)


# Checkpoints -------------------------------------------------------------

def model_to_dict(model: LikelihoodModel) -> dict:
    return {
        "kind": "likelihood",
        "variant": model.variant,
        "mask_mode": model.mask_mode,
        "masks": None if model.masks is None else np.asarray(model.masks).tolist(),
        "norm": model.norm.to_dict(),
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in sorted(model.params.items())},
        "train_config": model.train_config,
        "curve": [list(c) for c in model.curve],
    }


def model_from_dict(d: dict) -> LikelihoodModel:
    if d.get("kind") != "likelihood":
        raise ContractError("not a likelihood checkpoint")
    params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
    masks = None if d["masks"] is None else np.asarray(d["masks"], dtype=np.float64)
    return LikelihoodModel(d["variant"], params, NormStats.from_dict(d["norm"]), d["mask_mode"], masks,
                           tuple(tuple(c) for c in d["curve"]), d["train_config"])


def save_model(model: LikelihoodModel, path) -> None:
    from .harness.io import atomic_write_text
    atomic_write_text(path, json.dumps(model_to_dict(model), sort_keys=True) + "\n")


def load_model(path) -> LikelihoodModel:
    return model_from_dict(json.loads(Path(path).read_text()))
