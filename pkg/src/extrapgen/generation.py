"""Drawing feature vectors for specification values never seen together.

Three routes: gradient search from seen rows toward the target
(``extrapolate_opt``), reverse diffusion with a likelihood correction on
each step's mean (``extrapolate_dps``), and direct sampling from the
reverse-direction baselines (``generate_reverse``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import DiffusionPrior, reverse_mean
from .errors import ContractError
from .likelihood import LikelihoodModel, predict_mean, predict_raw, sample_reverse
from .numerics import Rng, Tape, Tensor, ad, adam_init, adam_step, derive_seed
from .synthetic import LabeledDataset


@dataclass(frozen=True)
class TargetSpec:
    """Where chains are sent in specification space.

    ``mode`` selects how each chain's target is drawn:

    point     every chain uses ``z``
    region    uniform over the box ``region`` = ((lo1, hi1), (lo2, hi2), ...)
    marginal  each coordinate drawn independently from ``pools[i]``, the seen
              values of specification i lying on the novel side of its threshold;
              with ``joint=True`` the pools are aligned and one index is drawn per chain
    """

    z: tuple[float, ...] = (0.7, 1.1)
    mode: str = "point"
    region: tuple[tuple[float, float], ...] | None = None
    pools: tuple[np.ndarray, ...] | None = field(default=None, repr=False, compare=False)
    joint: bool = False

    def __post_init__(self):
        z = tuple(float(v) for v in self.z)
        if not all(math.isfinite(v) for v in z):
            raise ContractError("target must be finite")
        object.__setattr__(self, "z", z)
        if self.mode not in ("point", "region", "marginal"):
            raise ContractError(f"unknown target mode {self.mode!r}")
        if self.mode == "region":
            if self.region is None:
                raise ContractError("region mode needs a box")
            region = tuple((float(lo), float(hi)) for lo, hi in self.region)
            if len(region) != len(z) or any(not lo < hi for lo, hi in region):
                raise ContractError("region must give lo < hi for every specification")
            object.__setattr__(self, "region", region)
        if self.mode == "marginal":
            if self.pools is None or len(self.pools) != len(z) or any(len(p) == 0 for p in self.pools):
                raise ContractError("marginal mode needs one non-empty pool per specification")
            object.__setattr__(self, "pools", tuple(np.asarray(p, dtype=np.float64) for p in self.pools))
            if self.joint and len({len(p) for p in self.pools}) != 1:
                raise ContractError("joint pools must have equal lengths")

    def draw(self, n: int, rng: Rng) -> np.ndarray:
        if self.mode == "point":
            return np.tile(np.asarray(self.z), (n, 1))
        if self.mode == "region":
            return np.stack([rng.uniform(lo, hi, n) for lo, hi in self.region], axis=1)
        if self.joint:
            idx = rng.integers(0, len(self.pools[0]), n)
            return np.stack([p[idx] for p in self.pools], axis=1)
        return np.stack([p[rng.integers(0, len(p), n)] for p in self.pools], axis=1)

    def describe(self) -> dict:
        d = {"mode": self.mode, "z": list(self.z)}
        if self.mode == "region":
            d["region"] = [list(b) for b in self.region]
        if self.mode == "marginal":
            d["pool_sizes"] = [len(p) for p in self.pools]
            d["joint"] = self.joint
        return d


def novel_target(seen: LabeledDataset, mode: str = "marginal", t1: float = 0.8, t2: float = 1.0,
                 z: tuple[float, float] = (0.7, 1.1), model: LikelihoodModel | None = None) -> TargetSpec:
    """Target for the region Z1 < t1 and Z2 > t2, built from seen data only.

    In ``marginal`` mode the pool for each specification is the set of seen
    rows whose observed value lies on the novel side of its threshold. When a
    forward ``model`` is given, the pool holds the model's predicted mean at
    those rows instead of the noisy observation: gradient search inverts the
    conditional mean, so its targets have to live on the mean scale.
    """
    if mode == "point":
        return TargetSpec(z)
    if mode == "region":
        return TargetSpec(z, "region", ((float(seen.z[:, 0].min()), t1), (t2, float(seen.z[:, 1].max()))))
    if mode != "marginal":
        raise ContractError(f"unknown target mode {mode!r}")
    rows = (seen.z[:, 0] < t1, seen.z[:, 1] > t2)
    if model is None:
        pools = tuple(seen.z[r, i] for i, r in enumerate(rows))
    else:
        _check_forward(model)
        zhat = predict_raw(model, seen.x)
        pools = tuple(zhat[r, i] for i, r in enumerate(rows))
    return TargetSpec(z, "marginal", pools=pools)


@dataclass(frozen=True)
class OptConfig:
    lr: float = 1e-2
    steps: int = 1000
    n_gen: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0 or self.steps < 0 or self.n_gen < 1:
            raise ContractError("invalid optimisation config")


@dataclass(frozen=True)
class DpsConfig:
    guidance: float = 1.0
    n_gen: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.guidance >= 0 or self.n_gen < 1:
            raise ContractError("invalid DPS config")


@dataclass
class GenerationResult:
    samples: np.ndarray  # successful chains only, raw units
    final_loss: np.ndarray  # per chain, NaN for failed chains
    initial_loss: np.ndarray
    failed: int
    method: str
    config: dict = field(default_factory=dict)

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "config": self.config,
            "failed_chains": int(self.failed),
            "final_loss": [None if not math.isfinite(v) else float(v) for v in self.final_loss],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.samples.shape[1])])
        for row in self.samples:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def save(self, csv_path, sidecar_path) -> None:
        from .harness.io import atomic_write_text
        atomic_write_text(csv_path, self.to_csv())
        atomic_write_text(sidecar_path, json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")


def read_samples(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(header))


def _check_forward(model: LikelihoodModel) -> None:
    if model.reverse:
        raise ContractError("forward-direction likelihood (variant A, B or C) required")


def _residual_sq(model: LikelihoodModel, xn, zn_target):
    """Per-row squared residual between predicted and target specifications (normalised)."""
    return ad.sum(ad.square(predict_mean(model, xn) - zn_target), axis=1)


def extrapolate_opt(model: LikelihoodModel, seen: LabeledDataset, target: TargetSpec,
                    config: OptConfig = OptConfig()) -> GenerationResult:
    """Start chains at random seen rows and descend the squared target residual with Adam."""
    _check_forward(model)
    rng = Rng(derive_seed(config.seed, "opt", model.variant))
    idx = rng.integers(0, len(seen), config.n_gen)
    x = model.norm.nx(seen.x[idx])
    zt = model.norm.nz(target.draw(config.n_gen, rng.spawn("target")))
    alive = np.ones(config.n_gen, dtype=bool)
    state = adam_init({"x": x}, lr=config.lr)
    initial = None
    loss = _residual_sq(model, x, zt).numpy()
    for _ in range(config.steps):
        with Tape(check_nan=False) as tape:
            xt = tape.watch(Tensor(x))
            per_row = _residual_sq(model, xt, zt)
            total = ad.sum(per_row)
        (g,) = tape.gradient(total, [xt])
        loss = per_row.numpy()
        if initial is None:
            initial = loss.copy()
        bad = ~(np.isfinite(g).all(axis=1) & np.isfinite(loss))
        if bad.any():
            alive &= ~bad
            g[bad] = 0.0
        upd, state = adam_step(state, {"x": x}, {"x": g})
        x = np.where(alive[:, None], upd["x"], x)
    final = _residual_sq(model, x, zt).numpy()
    if initial is None:
        initial = final.copy()
    alive &= np.isfinite(final) & np.isfinite(x).all(axis=1)
    final = np.where(alive, final, np.nan)
    # With no steps the chains are their raw starting rows, untouched by the normalisation round trip.
    out = seen.x[idx] if config.steps == 0 else model.norm.dx(x)
    return GenerationResult(out[alive], final, initial, int((~alive).sum()), "opt",
                            {**asdict(config), "target": target.describe(), "variant": model.variant})


def _guidance(model: LikelihoodModel, prior: DiffusionPrior, x: np.ndarray, zt: np.ndarray):
    """Gradient of the summed squared residual w.r.t. prior-space x, plus the per-row residual."""
    scale = prior.sd_x / model.norm.sd_x
    shift = (prior.mu_x - model.norm.mu_x) / model.norm.sd_x
    with Tape(check_nan=False) as tape:
        xt = tape.watch(Tensor(x))
        per_row = _residual_sq(model, xt * scale + shift, zt)
        total = ad.sum(per_row)
    (g,) = tape.gradient(total, [xt])
    return g, per_row.numpy()


def extrapolate_dps(model: LikelihoodModel, prior: DiffusionPrior, target: TargetSpec,
                    config: DpsConfig = DpsConfig()) -> GenerationResult:
    """Ancestral sampling where each step's mean is pushed down the residual gradient.

    Uses the same random stream as unconditional sampling, so guidance 0
    reproduces it bit for bit.
    """
    _check_forward(model)
    n = config.n_gen
    rng = Rng(derive_seed(config.seed, "diffusion-sample"))
    zt = model.norm.nz(target.draw(n, Rng(derive_seed(config.seed, "dps-target"))))
    alive = np.ones(n, dtype=bool)
    x = rng.normal((n, prior.dim))
    initial = None
    for t in range(prior.schedule.T, 0, -1):
        mu = reverse_mean(prior, x, t, prior.eps_hat(x, t).numpy())
        if config.guidance != 0.0:
            g, res = _guidance(model, prior, x, zt)
            if initial is None:
                initial = res
            bad = ~np.isfinite(g).all(axis=1)
            alive &= ~bad
            g[bad] = 0.0
            mu = mu - config.guidance * g
        x = mu + math.sqrt(prior.schedule.at(t)[0]) * rng.normal((n, prior.dim)) if t > 1 else mu
        x[~alive] = 0.0
    xl = model.norm.nx(prior.denormalize(x))
    final = _residual_sq(model, xl, zt).numpy()
    if initial is None:
        initial = np.full(n, np.nan)
    alive &= np.isfinite(x).all(axis=1) & np.isfinite(final)
    final = np.where(alive, final, np.nan)
    return GenerationResult(prior.denormalize(x[alive]), final, initial, int((~alive).sum()), "dps",
                            {**asdict(config), "target": target.describe(), "variant": model.variant})


def generate_reverse(model: LikelihoodModel, target: TargetSpec, n: int, seed: int) -> GenerationResult:
    z = target.draw(n, Rng(derive_seed(seed, "reverse-target")))
    x = sample_reverse(model, z, n, seed)
    ok = np.isfinite(x).all(axis=1)
    return GenerationResult(x[ok], np.zeros(n), np.zeros(n), int((~ok).sum()), "reverse",
                            {"n": n, "seed": seed, "target": target.describe(), "variant": model.variant})


GUIDANCE_GRID = (0.03, 0.1, 0.3, 1.0)


def select_guidance(model: LikelihoodModel, prior: DiffusionPrior, seen: LabeledDataset,
                    grid=GUIDANCE_GRID, n: int = 1000, seed: int = 0) -> tuple[float, dict]:
    """Choose the guidance scale using seen data only.

    Draws ``n`` seen rows, guides toward the model's own predictions at
    those rows, and keeps the scale whose samples are closest (MMD) to the
    rows themselves. Returns the choice and the score of every candidate.
    """
    from .evaluation import mmd

    rng = Rng(derive_seed(seed, "guidance-select", model.variant))
    idx = rng.permutation(len(seen))[:min(n, len(seen))]
    zhat = predict_raw(model, seen.x[idx])
    target = TargetSpec(tuple(float(v) for v in zhat[0]), "marginal",
                        pools=tuple(zhat[:, i] for i in range(zhat.shape[1])), joint=True)
    scores = {}
    for lam in grid:
        res = extrapolate_dps(model, prior, target, DpsConfig(guidance=lam, n_gen=len(idx), seed=seed))
        scores[float(lam)] = mmd(res.samples, seen.x[idx]) if len(res.samples) else math.inf
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
