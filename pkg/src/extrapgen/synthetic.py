"""Three features, two specifications, and a selection split that hides one
corner of the specification space.

    X1, X3 ~ U(0, 1)            X2 ~ U(0.75, 0.8)
    Z1 = 0.8 X1 + 0.6 X2 + e1   Z2 = 0.6 X3 + 0.8 X2 + e2     e ~ U(0, 0.2)

Rows with Z1 < 0.8 and Z2 > 1.0 are the unseen ("oracle") region.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .numerics import Rng

HEADER = ("x1", "x2", "x3", "z1", "z2", "s")


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 10_000
    seed: int = 0
    coeff_z1: tuple[float, float] = (0.8, 0.6)  # (X1, X2)
    coeff_z2: tuple[float, float] = (0.6, 0.8)  # (X3, X2)
    x2_range: tuple[float, float] = (0.75, 0.8)
    noise_range: tuple[float, float] = (0.0, 0.2)
    t1: float = 0.8
    t2: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ContractError("n_samples must be positive")
        if not self.x2_range[0] < self.x2_range[1]:
            raise ContractError("x2_range must satisfy lo < hi")
        if not self.noise_range[0] <= self.noise_range[1]:
            raise ContractError("noise_range must satisfy lo <= hi")
        for name in ("coeff_z1", "coeff_z2", "x2_range", "noise_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def noise_mean(self) -> float:
        return 0.5 * (self.noise_range[0] + self.noise_range[1])


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        z = np.asarray(self.z, dtype=np.float64)
        x = x.reshape(len(x), -1) if x.ndim != 2 else x
        z = z.reshape(len(z), -1) if z.ndim != 2 else z
        s = np.asarray(self.s, dtype=bool).reshape(-1)
        if not (len(x) == len(z) == len(s)):
            raise ContractError("x, z and s must have equal row counts")
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise ContractError("dataset entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.x[mask], self.z[mask], self.s[mask], dict(self.meta))


def specifications(x: np.ndarray, noise: np.ndarray, cfg: GeneratorConfig = GeneratorConfig()) -> np.ndarray:
    """The generator's structural map, Z = f(X) + noise, row-wise."""
    x = np.atleast_2d(x)
    noise = np.broadcast_to(noise, (len(x), 2))
    a11, a12 = cfg.coeff_z1
    a23, a22 = cfg.coeff_z2
    z1 = a11 * x[:, 0] + a12 * x[:, 1] + noise[:, 0]
    z2 = a23 * x[:, 2] + a22 * x[:, 1] + noise[:, 1]
    return np.stack([z1, z2], axis=1)


def in_novel_region(z: np.ndarray, cfg: GeneratorConfig = GeneratorConfig()) -> np.ndarray:
    z = np.atleast_2d(z)
    return (z[:, 0] < cfg.t1) & (z[:, 1] > cfg.t2)


def generate(cfg: GeneratorConfig = GeneratorConfig()) -> LabeledDataset:
    rng = Rng(cfg.seed).spawn("synthetic")
    n = cfg.n_samples
    x1 = rng.uniform(0.0, 1.0, n)
    x2 = rng.uniform(*cfg.x2_range, n)
    x3 = rng.uniform(0.0, 1.0, n)
    lo, hi = cfg.noise_range
    noise = rng.uniform(lo, hi, (n, 2)) if hi > lo else np.full((n, 2), lo)
    x = np.stack([x1, x2, x3], axis=1)
    z = specifications(x, noise, cfg)
    s = ~in_novel_region(z, cfg)
    return LabeledDataset(x, z, s, {"config": cfg.to_dict()})


def split_by_selection(ds: LabeledDataset, cfg: GeneratorConfig = GeneratorConfig()) -> tuple[LabeledDataset, LabeledDataset]:
    """(seen, oracle). Oracle rows satisfy Z1 < t1 and Z2 > t2 strictly."""
    novel = in_novel_region(ds.z, cfg)
    seen = LabeledDataset(ds.x[~novel], ds.z[~novel], np.ones((~novel).sum(), bool), dict(ds.meta))
    oracle = LabeledDataset(ds.x[novel], ds.z[novel], np.zeros(novel.sum(), bool), dict(ds.meta))
    for part, name in ((seen, "seen"), (oracle, "oracle")):
        if len(part) == 0:
            msg = f"degenerate split: {name} set is empty"
            seen.meta.setdefault("warnings", []).append(msg)
            oracle.meta.setdefault("warnings", []).append(msg)
            warnings.warn(msg, stacklevel=2)
    return seen, oracle


def write_csv(ds: LabeledDataset, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for xi, zi, si in zip(ds.x, ds.z, ds.s):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in zi] + [int(si)])
    tmp.replace(path)


def read_csv(path) -> LabeledDataset:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != HEADER:
            raise ContractError(f"unexpected header {header}, expected {HEADER}")
        rows = [[float(v) for v in row] for row in r]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return LabeledDataset(arr[:, :3], arr[:, 3:5], arr[:, 5].astype(bool))
