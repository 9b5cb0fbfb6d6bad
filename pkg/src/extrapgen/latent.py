"""Features and specifications observed only through linear mixings.

Two variational autoencoders, one per observation block, are trained
jointly. Besides each autoencoder's own objective, the specification
latents must be predictable from the feature latents through a masked
Gaussian head, with an L1 penalty on the soft masks. Recovery is scored
by matched absolute correlation (MCC).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ContractError
from .numerics import Mlp, Rng, ad, derive_seed
from .numerics.nn import train_loop
from .synthetic import LabeledDataset

LATENT_DIMS = (3, 2)
HIDDEN = 64
LOG_2PI = math.log(2.0 * math.pi)
GATE_TEMPERATURE = 0.5
NOISE_INIT = math.log(math.expm1(0.1))  # decoder noise sd starts at 0.1


class RankDeficientError(ContractError):
    pass


@dataclass(frozen=True)
class MixingConfig:
    obs_dim: int = 20
    seed: int = 0
    a_x: np.ndarray | None = field(default=None, compare=False)
    a_z: np.ndarray | None = field(default=None, compare=False)
    max_tries: int = 10

    def matrices(self, x_dim: int = 3, z_dim: int = 2) -> tuple[np.ndarray, np.ndarray]:
        """(A_X, A_Z), either the fixed ones or U(0,1) draws with full column rank."""
        if self.a_x is not None and self.a_z is not None:
            a_x, a_z = np.asarray(self.a_x, float), np.asarray(self.a_z, float)
            for a in (a_x, a_z):
                if np.linalg.matrix_rank(a) < a.shape[1]:
                    raise RankDeficientError("supplied mixing matrix is rank deficient")
            return a_x, a_z
        rng = Rng(derive_seed(self.seed, "mixing"))
        out = []
        for d in (x_dim, z_dim):
            for _ in range(self.max_tries):
                a = rng.uniform(0.0, 1.0, (self.obs_dim, d))
                if np.linalg.matrix_rank(a) == d:
                    out.append(a)
                    break
            else:
                raise RankDeficientError(f"no full-rank {self.obs_dim}x{d} mixing in {self.max_tries} draws")
        return out[0], out[1]


def mix(latents: LabeledDataset, config: MixingConfig = MixingConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Y_X = X A_Xᵀ and Y_Z = Z A_Zᵀ."""
    a_x, a_z = config.matrices(latents.x.shape[1], latents.z.shape[1])
    return latents.x @ a_x.T, latents.z @ a_z.T


# MCC ---------------------------------------------------------------------

@dataclass(frozen=True)
class MccReport:
    matched: np.ndarray  # |corr| of truth column j with its matched estimate
    assignment: tuple[int, ...]  # assignment[j] = estimated column matched to truth column j

    @property
    def mean(self) -> float:
        return float(np.mean(self.matched))


def _abs_corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(0)
    b = b - b.mean(0)
    na = np.sqrt((a * a).sum(0))
    nb = np.sqrt((b * b).sum(0))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.abs(a.T @ b) / np.outer(na, nb)
    c[~np.isfinite(c)] = 0.0  # zero-variance columns correlate with nothing
    return np.clip(c, 0.0, 1.0)


def mcc(estimated, truth) -> MccReport:
    """Best one-to-one matching of columns by absolute Pearson correlation."""
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    est = est[:, None] if est.ndim == 1 else est
    tru = tru[:, None] if tru.ndim == 1 else tru
    if est.shape != tru.shape:
        raise ContractError(f"shape mismatch {est.shape} vs {tru.shape}")
    c = _abs_corr(tru, est)
    k = c.shape[0]
    best, best_perm = -1.0, None
    for perm in itertools.permutations(range(k)):
        s = sum(c[j, perm[j]] for j in range(k))
        if s > best:
            best, best_perm = s, perm
    return MccReport(np.array([c[j, best_perm[j]] for j in range(k)]), tuple(best_perm))


# Twin VAE ----------------------------------------------------------------

@dataclass(frozen=True)
class VaeConfig:
    alpha: float = 0.05
    beta: float = 5e-4
    epochs: int = 100
    batch_size: int = 256
    lr: float = 2e-3
    final_lr_frac: float = 0.05
    whiten: bool = True
    learn_noise: bool = True
    stochastic_masks: bool = True
    gate_temperature: float = GATE_TEMPERATURE
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("alpha and beta must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or not self.gate_temperature > 0:
            raise ContractError("invalid VAE training configuration")


@dataclass(frozen=True)
class Preprocess:
    """Affine map y -> (y - mean) @ proj, with a least-squares inverse.

    Whitening keeps the principal directions above a relative singular-value
    cutoff, each scaled to unit variance; otherwise columns are standardised.
    """

    mean: np.ndarray
    proj: np.ndarray

    @classmethod
    def fit(cls, y: np.ndarray, whiten: bool, rtol: float = 1e-8) -> "Preprocess":
        mean = y.mean(0)
        yc = y - mean
        if whiten:
            _, s, vt = np.linalg.svd(yc, full_matrices=False)
            keep = s > rtol * s[0]
            proj = vt[keep].T / (s[keep] / np.sqrt(len(y)))
        else:
            sd = yc.std(0)
            if np.any(sd <= 0):
                raise ContractError("constant observation column")
            proj = np.diag(1.0 / sd)
        return cls(mean, proj)

    @property
    def dim(self) -> int:
        return self.proj.shape[1]

    def apply(self, y) -> np.ndarray:
        return (np.asarray(y, float) - self.mean) @ self.proj

    def invert(self, u) -> np.ndarray:
        return np.asarray(u) @ np.linalg.pinv(self.proj) + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "proj": self.proj.tolist()}


@dataclass(frozen=True)
class _Branch:
    """Encoder and decoder of one VAE: a linear path plus one tanh hidden layer."""

    name: str
    obs_dim: int
    latent_dim: int

    @property
    def enc(self) -> Mlp:
        return Mlp(f"{self.name}enc_", (self.obs_dim, HIDDEN, 2 * self.latent_dim))

    @property
    def dec(self) -> Mlp:
        return Mlp(f"{self.name}dec_", (self.latent_dim, HIDDEN, self.obs_dim))

    def init(self, rng: Rng) -> dict:
        p = {**self.enc.init(rng.spawn(self.name, "enc"), 0.1), **self.dec.init(rng.spawn(self.name, "dec"), 0.1)}
        p[f"{self.name}enc_lin"] = rng.spawn(self.name, "elin").normal((self.obs_dim, 2 * self.latent_dim)) \
            * np.sqrt(1.0 / self.obs_dim)
        p[f"{self.name}dec_lin"] = rng.spawn(self.name, "dlin").normal((self.latent_dim, self.obs_dim)) \
            * np.sqrt(1.0 / self.latent_dim)
        p[f"{self.name}noise"] = np.full((1, 1), NOISE_INIT)
        return p

    def encode(self, p, y):
        h = self.enc(p, y) + ad.matmul(y, p[f"{self.name}enc_lin"])
        k = self.latent_dim
        return h[:, :k], h[:, k:]  # mean, log-variance

    def decode(self, p, lat):
        return self.dec(p, lat) + ad.matmul(lat, p[f"{self.name}dec_lin"])

    def terms(self, p, y, eps, learn_noise: bool):
        """Per-row negative ELBO and the sampled latent."""
        mu, logvar = self.encode(p, y)
        lat = mu + ad.exp(0.5 * logvar) * eps
        r = self.decode(p, lat) - y
        if learn_noise:
            sd = ad.softplus(p[f"{self.name}noise"]) + 1e-3
            recon = ad.sum(0.5 * ad.square(r / sd) + ad.log(sd), axis=1)
        else:
            recon = 0.5 * ad.sum(ad.square(r), axis=1)
        recon = recon + 0.5 * self.obs_dim * LOG_2PI
        kl = 0.5 * ad.sum(ad.square(mu) + ad.exp(logvar) - logvar - 1.0, axis=1)
        return recon + kl, lat


def _heads(x_dim: int, z_dim: int) -> list[tuple[Mlp, Mlp]]:
    return [(Mlp(f"lik{i}mu_", (x_dim, HIDDEN, 1)), Mlp(f"lik{i}sd_", (x_dim, HIDDEN, 1))) for i in range(z_dim)]


@dataclass(frozen=True)
class TwinVae:
    params: dict
    pre_x: Preprocess
    pre_z: Preprocess
    config: dict
    curve: tuple = field(default=(), compare=False)

    @property
    def branches(self) -> tuple[_Branch, _Branch]:
        return (_Branch("x", self.pre_x.dim, LATENT_DIMS[0]), _Branch("z", self.pre_z.dim, LATENT_DIMS[1]))

    def encode_x(self, y_x) -> np.ndarray:
        """Posterior-mean feature latents."""
        return self.branches[0].encode(self.params, self.pre_x.apply(y_x))[0].numpy()

    def encode_z(self, y_z) -> np.ndarray:
        return self.branches[1].encode(self.params, self.pre_z.apply(y_z))[0].numpy()

    def decode_x(self, lat) -> np.ndarray:
        return self.pre_x.invert(self.branches[0].decode(self.params, np.asarray(lat, float)).numpy())

    def masks(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.params["mask_logits"]))

    def objective(self, y_x, y_z, seed: int = 0):
        """Full-data (L_ng, L_r, L_m, L_s) with fixed reparameterisation noise."""
        yx, yz = self.pre_x.apply(y_x), self.pre_z.apply(y_z)
        rng = Rng(derive_seed(seed, "twin-vae-eval"))
        ex, ez = rng.normal((len(yx), LATENT_DIMS[0])), rng.normal((len(yx), LATENT_DIMS[1]))
        c = self.config
        terms = twin_objective(self.branches, self.params, yx, yz, ex, ez, c["alpha"], c["beta"], c["learn_noise"])
        return tuple(float(np.asarray(t.numpy() if hasattr(t, "numpy") else t).reshape(-1)[0]) for t in terms)


def twin_objective(branches, p, yx, yz, eps_x, eps_z, alpha: float, beta: float, learn_noise: bool = True,
                   gate_noise=None, temperature: float = GATE_TEMPERATURE):
    """(L_ng, L_r, L_m, L_s) on one batch, as tensors.

    With ``gate_noise`` (logistic draws, shape (n, z_dim, x_dim)) each mask
    acts as a relaxed Bernoulli gate; otherwise the mask probabilities are used.
    """
    bx, bz = branches
    lx, xl = bx.terms(p, yx, eps_x, learn_noise)
    lz, zl = bz.terms(p, yz, eps_z, learn_noise)
    l_r = ad.mean(lx + lz)
    m = ad.sigmoid(p["mask_logits"])
    l_m = 0.0
    for i, (mu_net, sd_net) in enumerate(_heads(bx.latent_dim, bz.latent_dim)):
        if gate_noise is None:
            gate = m[i:i + 1]
        else:
            gate = ad.sigmoid((p["mask_logits"][i:i + 1] + gate_noise[:, i]) / temperature)
        v = xl * gate
        sd = ad.softplus(sd_net(p, v)) + 1e-3
        r = zl[:, i:i + 1] - mu_net(p, v)
        l_m = l_m + 0.5 * ad.square(r / sd) + 0.5 * ad.log(sd) + 0.5 * LOG_2PI
    l_m = ad.mean(l_m)
    l_s = ad.sum(m)
    return l_r + alpha * l_m + beta * l_s, l_r, l_m, l_s


def init_twin_vae(y_x, y_z, config: VaeConfig = VaeConfig()) -> TwinVae:
    y_x, y_z = np.asarray(y_x, float), np.asarray(y_z, float)
    pre_x, pre_z = Preprocess.fit(y_x, config.whiten), Preprocess.fit(y_z, config.whiten)
    rng = Rng(derive_seed(config.seed, "twin-vae-init"))
    bx, bz = _Branch("x", pre_x.dim, LATENT_DIMS[0]), _Branch("z", pre_z.dim, LATENT_DIMS[1])
    params = {**bx.init(rng), **bz.init(rng)}
    for i, (mu_net, sd_net) in enumerate(_heads(*LATENT_DIMS)):
        params.update(mu_net.init(rng.spawn("lik", i, "mu")))
        params.update(sd_net.init(rng.spawn("lik", i, "sd"), 0.1))
    params["mask_logits"] = np.zeros((LATENT_DIMS[1], LATENT_DIMS[0]))
    return TwinVae(params, pre_x, pre_z, asdict(config))


def train_twin_vae(y_x, y_z, config: VaeConfig = VaeConfig()) -> TwinVae:
    """Minimise L_r + alpha L_m + beta L_s over minibatches."""
    vae = init_twin_vae(y_x, y_z, config)
    yx, yz = vae.pre_x.apply(y_x), vae.pre_z.apply(y_z)
    n = len(yx)
    rng = Rng(derive_seed(config.seed, "twin-vae-train"))
    noise = rng.spawn("eps")
    branches = vae.branches

    def objective(p, idx):
        ex = noise.normal((len(idx), LATENT_DIMS[0]))
        ez = noise.normal((len(idx), LATENT_DIMS[1]))
        gates = None
        if config.stochastic_masks:
            u = noise.uniform(1e-6, 1.0 - 1e-6, (len(idx), LATENT_DIMS[1], LATENT_DIMS[0]))
            gates = np.log(u) - np.log1p(-u)
        return twin_objective(branches, p, yx[idx], yz[idx], ex, ez, config.alpha, config.beta,
                              config.learn_noise, gates, config.gate_temperature)[0]

    steps = config.epochs * math.ceil(n / min(config.batch_size, n))
    params, curve = train_loop(objective, vae.params, n, steps, config.batch_size, config.lr, rng,
                               final_lr_frac=config.final_lr_frac)
    return replace(vae, params=params, curve=tuple(curve))


# Downstream extrapolation ------------------------------------------------

def latent_masks(mcc_x: MccReport, mcc_z: MccReport, truth: np.ndarray | None = None) -> np.ndarray:
    """The assumed feature-to-specification structure, relabelled to the recovered columns."""
    from .likelihood import TRUE_MASKS

    truth = TRUE_MASKS if truth is None else np.asarray(truth, float)
    out = np.zeros_like(truth)
    for i, zi in enumerate(mcc_z.assignment):
        for j, xj in enumerate(mcc_x.assignment):
            out[zi, xj] = truth[i, j]
    return out


def downstream_extrapolation(vae: TwinVae, full: LabeledDataset, cfg, seed: int, mcc_x: MccReport,
                             mcc_z: MccReport, y_x: np.ndarray, y_z: np.ndarray,
                             methods=("opt", "dps")) -> dict:
    """Variant-A extrapolation on recovered latents.

    Returns the generated feature latents per method, the encoded oracle
    observations they are compared against, and per-method metadata.
    """
    from dataclasses import replace as _replace

    from . import generation, likelihood, pipeline
    from .synthetic import in_novel_region

    g = cfg.generator
    seen_rows = ~in_novel_region(full.z, g)
    x_hat, z_hat = vae.encode_x(y_x[seen_rows]), vae.encode_z(y_z[seen_rows])
    lat = LabeledDataset(x_hat, z_hat, np.ones(len(x_hat), bool))
    s = pipeline.stage_seed(seed, "latent-train", "A")
    model = likelihood.build_model("A", lat, s, masks=latent_masks(mcc_x, mcc_z))
    model = likelihood.train(model, lat, _replace(cfg.train, seed=s))
    # Target pools: rows whose specification lies on the novel side, at the model's predicted latent mean.
    z_true = full.z[seen_rows]
    novel_side = (z_true[:, 0] < g.t1, z_true[:, 1] > g.t2)
    pred = likelihood.predict_raw(model, x_hat)
    pools = [None, None]
    for i, col in enumerate(mcc_z.assignment):
        pools[col] = pred[novel_side[i], col]
    target = generation.TargetSpec(tuple(float(np.mean(p)) for p in pools), "marginal", pools=tuple(pools))
    samples, meta = {}, {}
    if "opt" in methods:
        s = pipeline.stage_seed(seed, "latent-extrapolate", "opt-A")
        samples["opt-A"] = generation.extrapolate_opt(model, lat, target, _replace(cfg.opt, seed=s)).samples
    if "dps" in methods:
        prior = pipeline.fit_prior(cfg, lat, pipeline.stage_seed(seed, "latent"))
        s = pipeline.stage_seed(seed, "latent-extrapolate", "dps-A")
        lam = cfg.dps.guidance
        if cfg.select_guidance:
            lam, _ = generation.select_guidance(model, prior, lat, cfg.guidance_grid, seed=s)
        samples["dps-A"] = generation.extrapolate_dps(model, prior, target,
                                                      _replace(cfg.dps, guidance=lam, seed=s)).samples
        meta["dps-A"] = {"guidance": lam}
    n_ref = max((len(v) for v in samples.values()), default=len(x_hat))
    samples["seen"] = x_hat[:n_ref]
    oracle = vae.encode_x(y_x[~seen_rows])
    return {"samples": samples, "oracle": oracle, "meta": meta, "masks": model.masks.tolist()}
