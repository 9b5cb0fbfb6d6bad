"""Run configuration: one JSON document, schema-checked, unknown keys rejected."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from ..diffusion import PriorConfig
from ..errors import ContractError
from ..evaluation import MEDIAN, MmdConfig
from ..generation import GUIDANCE_GRID, DpsConfig, OptConfig
from ..latent import MixingConfig, VaeConfig
from ..likelihood import TrainConfig
from ..numerics import derive_seed
from ..pipeline import PipelineConfig
from ..synthetic import GeneratorConfig
from .io import sha256_text

OUT_ROOT_ENV = "EXTRAPGEN_OUT_ROOT"


class ConfigError(ContractError):
    pass


# Every section with its default values; the schema is the shape of this dict.
DEFAULTS: dict = {
    "seed": 0,
    "n_seeds": 10,
    "output_dir": "runs/default",
    "generator": {
        "n_samples": 10_000,
        "coeff_z1": [0.8, 0.6],
        "coeff_z2": [0.6, 0.8],
        "x2_range": [0.75, 0.8],
        "noise_range": [0.0, 0.2],
        "t1": 0.8,
        "t2": 1.0,
    },
    "likelihood": {"epochs": 60, "batch_size": 256, "lr": 1e-3, "beta": 5e-4, "final_lr_frac": 0.05},
    "prior": {"T": 100, "beta_start": 1e-4, "beta_end": None, "epochs": 200, "batch_size": 256,
              "lr": 2e-3, "final_lr_frac": 0.02},
    "opt": {"lr": 1e-2, "steps": 1000, "n_gen": 1000},
    "dps": {"guidance": "select", "grid": list(GUIDANCE_GRID), "n_gen": 1000},
    "target": {"mode": "marginal", "point": [0.7, 1.1]},
    "variants": {"forward": ["A", "B", "C"], "reverse": ["D", "E"]},
    "evaluation": {"bandwidth": MEDIAN},
    "latent": {
        "obs_dim": 20,
        "vae": {"alpha": 0.05, "beta": 5e-4, "epochs": 100, "batch_size": 256, "lr": 2e-3,
                "final_lr_frac": 0.05, "whiten": True, "learn_noise": True, "stochastic_masks": True,
                "gate_temperature": 0.5},
        "downstream": True,
    },
    "stages": {"gen_data": True, "train": True, "extrapolate": True, "eval": True},
}

_NULLABLE = {("prior", "beta_end")}
_UNION = {("dps", "guidance"), ("evaluation", "bandwidth")}  # number or a marker string


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        here = path + (k,)
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{'.'.join(here)} must be an object")
            out[k] = _merge(base[k], v, here)
            continue
        _check_type(base[k], v, here)
        out[k] = v
    return out


def _check_type(default, value, path: tuple) -> None:
    name = ".".join(path)
    if value is None:
        if path in _NULLABLE:
            return
        raise ConfigError(f"{name} may not be null")
    if path in _UNION:
        if isinstance(value, str) or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return
        raise ConfigError(f"{name} must be a number or a string marker")
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and path not in _NULLABLE:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or path in _NULLABLE:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{name} has the wrong type ({type(value).__name__})")


class RunConfig:
    """Validated run configuration. ``data`` is the full, defaults-filled document."""

    def __init__(self, data: dict | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self._validate()

    def _validate(self) -> None:
        d = self.data
        if d["n_seeds"] < 1:
            raise ConfigError("n_seeds must be positive")
        for v in d["variants"]["forward"]:
            if v not in ("A", "B", "C"):
                raise ConfigError(f"forward variant {v!r} not in A/B/C")
        for v in d["variants"]["reverse"]:
            if v not in ("D", "E"):
                raise ConfigError(f"reverse variant {v!r} not in D/E")
        g = d["dps"]["guidance"]
        if isinstance(g, str) and g != "select":
            raise ConfigError("dps.guidance must be a number or 'select'")
        b = d["evaluation"]["bandwidth"]
        if isinstance(b, str) and b != MEDIAN:
            raise ConfigError(f"evaluation.bandwidth must be a number or {MEDIAN!r}")
        if d["target"]["mode"] not in ("point", "region", "marginal"):
            raise ConfigError("target.mode must be point, region or marginal")
        try:
            self.pipeline(0)
            self.vae_config(0)
            MmdConfig(b)
        except ContractError as e:
            raise ConfigError(str(e)) from e

    # Round trip ------------------------------------------------------------

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.data == other.data

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if out is not None:
            d["output_dir"] = str(out)
        return RunConfig(d)

    @property
    def hash(self) -> str:
        """Content hash of everything except where the run is written."""
        d = {k: v for k, v in self.data.items() if k != "output_dir"}
        return sha256_text(json.dumps(d, indent=2, sort_keys=True))

    # Views -----------------------------------------------------------------

    @property
    def master_seed(self) -> int:
        return int(self.data["seed"])

    def replicate_seeds(self) -> list[int]:
        return [derive_seed(self.master_seed, "replicate", i) for i in range(self.data["n_seeds"])]

    def output_dir(self) -> Path:
        out = Path(self.data["output_dir"])
        root = os.environ.get(OUT_ROOT_ENV)
        return Path(root) / out if root and not out.is_absolute() else out

    def pipeline(self, seed: int) -> PipelineConfig:
        d = self.data
        g = d["generator"]
        gen = GeneratorConfig(g["n_samples"], seed, tuple(g["coeff_z1"]), tuple(g["coeff_z2"]),
                              tuple(g["x2_range"]), tuple(g["noise_range"]), g["t1"], g["t2"])
        guidance = d["dps"]["guidance"]
        return PipelineConfig(
            generator=gen,
            train=TrainConfig(**d["likelihood"]),
            prior=PriorConfig(**d["prior"]),
            opt=OptConfig(d["opt"]["lr"], d["opt"]["steps"], d["opt"]["n_gen"]),
            dps=DpsConfig(1.0 if guidance == "select" else float(guidance), d["dps"]["n_gen"]),
            select_guidance=guidance == "select",
            guidance_grid=tuple(float(v) for v in d["dps"]["grid"]),
            target_mode=d["target"]["mode"],
            target_point=tuple(d["target"]["point"]),
            forward_variants=tuple(d["variants"]["forward"]),
            reverse_variants=tuple(d["variants"]["reverse"]),
        )

    def vae_config(self, seed: int) -> VaeConfig:
        return VaeConfig(**self.data["latent"]["vae"], seed=seed)

    def mixing_config(self, seed: int) -> MixingConfig:
        return MixingConfig(self.data["latent"]["obs_dim"], seed)

    def mmd_config(self) -> MmdConfig:
        return MmdConfig(self.data["evaluation"]["bandwidth"])


def default_config() -> RunConfig:
    return RunConfig()


def smoke_config(**overrides) -> RunConfig:
    """Small, fast settings for tests and quick demos."""
    data = {
        "n_seeds": 1,
        "generator": {"n_samples": 2000},
        "likelihood": {"epochs": 3},
        "prior": {"epochs": 3},
        "opt": {"steps": 20, "n_gen": 100},
        "dps": {"guidance": 0.3, "n_gen": 100},
        "latent": {"vae": {"epochs": 2}},
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k] = {**data[k], **v}
        else:
            data[k] = v
    return RunConfig(data)


__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "default_config", "smoke_config", "OUT_ROOT_ENV"]
