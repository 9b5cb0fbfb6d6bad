"""End-to-end synthetic experiment for one seed, in memory.

The command-line stages persist the same steps to disk; tests and demos
call these functions directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffusion, generation, likelihood
from .evaluation import EvalReport, MmdConfig, compare_variants
from .numerics import derive_seed
from .synthetic import GeneratorConfig, LabeledDataset, generate, in_novel_region, specifications, split_by_selection

FORWARD = ("A", "B", "C")
REVERSE = ("D", "E")


@dataclass(frozen=True)
class PipelineConfig:
    generator: GeneratorConfig = GeneratorConfig()
    train: likelihood.TrainConfig = likelihood.TrainConfig()
    prior: diffusion.PriorConfig = diffusion.PriorConfig()
    opt: generation.OptConfig = generation.OptConfig()
    dps: generation.DpsConfig = generation.DpsConfig()
    select_guidance: bool = True
    guidance_grid: tuple[float, ...] = generation.GUIDANCE_GRID
    target_mode: str = "marginal"
    target_point: tuple[float, float] = (0.7, 1.1)
    forward_variants: tuple[str, ...] = FORWARD
    reverse_variants: tuple[str, ...] = REVERSE
    methods: tuple[str, ...] = ("opt", "dps")


def stage_seed(master: int, stage: str, variant: str = "") -> int:
    """Sub-seed for one (stage, variant) cell."""
    return derive_seed(master, stage, variant)


def make_data(cfg: PipelineConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    gen = replace(cfg.generator, seed=stage_seed(seed, "data"))
    ds = generate(gen)
    seen, oracle = split_by_selection(ds, gen)
    return ds, seen, oracle


def fit_likelihood(cfg: PipelineConfig, seen: LabeledDataset, variant: str, seed: int) -> likelihood.LikelihoodModel:
    s = stage_seed(seed, "train", variant)
    model = likelihood.build_model(variant, seen, s)
    return likelihood.train(model, seen, replace(cfg.train, seed=s))


def fit_prior(cfg: PipelineConfig, seen: LabeledDataset, seed: int) -> diffusion.DiffusionPrior:
    return diffusion.train_prior(seen.x, replace(cfg.prior, seed=stage_seed(seed, "train", "prior")))


def target_for(cfg: PipelineConfig, seen: LabeledDataset, model=None) -> generation.TargetSpec:
    g = cfg.generator
    return generation.novel_target(seen, cfg.target_mode, g.t1, g.t2, cfg.target_point, model=model)


def extrapolate(cfg: PipelineConfig, seen: LabeledDataset, model, prior, method: str, seed: int):
    """Returns (GenerationResult, extra metadata)."""
    s = stage_seed(seed, "extrapolate", f"{method}-{model.variant}")
    if method == "reverse":
        return generation.generate_reverse(model, target_for(cfg, seen), cfg.opt.n_gen, s), {}
    target = target_for(cfg, seen, model)
    if method == "opt":
        return generation.extrapolate_opt(model, seen, target, replace(cfg.opt, seed=s)), {}
    if method == "dps":
        meta = {}
        lam = cfg.dps.guidance
        if cfg.select_guidance:
            lam, scores = generation.select_guidance(model, prior, seen, cfg.guidance_grid, seed=s)
            meta = {"guidance": lam, "guidance_scores": scores}
        return generation.extrapolate_dps(model, prior, target, replace(cfg.dps, guidance=lam, seed=s)), meta
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SeedRun:
    seed: int
    seen: LabeledDataset
    oracle: LabeledDataset
    samples: dict[str, np.ndarray]
    results: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    prior: diffusion.DiffusionPrior | None = None
    timings: dict = field(default_factory=dict)


def run_seed(cfg: PipelineConfig, seed: int, keep_models: bool = False) -> SeedRun:
    t0 = time.perf_counter()
    timings = {}
    _, seen, oracle = make_data(cfg, seed)
    models = {}
    for v in cfg.forward_variants + cfg.reverse_variants:
        t = time.perf_counter()
        models[v] = fit_likelihood(cfg, seen, v, seed)
        timings[f"train-{v}"] = time.perf_counter() - t
    prior = None
    if "dps" in cfg.methods:
        t = time.perf_counter()
        prior = fit_prior(cfg, seen, seed)
        timings["train-prior"] = time.perf_counter() - t
    samples, results, meta = {}, {}, {}
    for v in cfg.forward_variants:
        for m in cfg.methods:
            t = time.perf_counter()
            res, extra = extrapolate(cfg, seen, models[v], prior, m, seed)
            key = f"{m}-{v}"
            samples[key], results[key], meta[key] = res.samples, res, extra
            timings[key] = time.perf_counter() - t
    for v in cfg.reverse_variants:
        res, extra = extrapolate(cfg, seen, models[v], prior, "reverse", seed)
        key = f"reverse-{v}"
        samples[key], results[key], meta[key] = res.samples, res, extra
    timings["total"] = time.perf_counter() - t0
    return SeedRun(seed, seen, oracle, samples, results, meta,
                   models if keep_models else {}, prior if keep_models else None, timings)


def evaluate(runs: list[SeedRun], include_reference: bool = True, mmd_config: MmdConfig = MmdConfig()) -> EvalReport:
    """MMD to the oracle for every sample set, with seen data as a reference row."""
    results = []
    for r in runs:
        rows = dict(r.samples)
        if include_reference:
            n = min(len(r.seen), max((len(v) for v in r.samples.values()), default=len(r.seen)))
            rows["seen"] = r.seen.x[:n]
        results.append(rows)
    return compare_variants(results, [r.oracle.x for r in runs], [r.seed for r in runs], mmd_config)


def novel_hit_rate(x: np.ndarray, cfg: GeneratorConfig = GeneratorConfig()) -> float:
    """Fraction of feature vectors whose noise-mean specifications fall in the novel region."""
    if len(x) == 0:
        return 0.0
    return float(in_novel_region(specifications(x, cfg.noise_mean, cfg), cfg).mean())
