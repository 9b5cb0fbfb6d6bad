"""Gaussian-kernel MMD, bandwidth selection and result tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import __version__
from .errors import ContractError

MEDIAN = "median-heuristic"
MAX_HEURISTIC_ROWS = 2000


class DegenerateBandwidthError(ContractError):
    """Every pooled point coincides, so the median distance is zero."""


@dataclass(frozen=True)
class MmdConfig:
    bandwidth: float | str = MEDIAN
    estimator: str = "biased"

    def __post_init__(self):
        if self.estimator != "biased":
            raise ContractError("only the biased V-statistic estimator is supported")
        if self.bandwidth != MEDIAN:
            h = float(self.bandwidth)
            if not (np.isfinite(h) and h > 0):
                raise ContractError("explicit bandwidth must be a positive finite number")
            object.__setattr__(self, "bandwidth", h)


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or len(a) == 0:
        raise ContractError("samples must be non-empty 2-D arrays")
    return a


def _subsample(a: np.ndarray, limit: int) -> np.ndarray:
    if len(a) <= limit:
        return a
    # Evenly spaced rows: deterministic and order-preserving.
    idx = np.linspace(0, len(a) - 1, limit).round().astype(int)
    return a[idx]


def median_heuristic(pooled) -> float:
    pooled = _subsample(_as_matrix(pooled), MAX_HEURISTIC_ROWS)
    if len(pooled) < 2:
        raise ContractError("median heuristic needs at least two rows")
    h = float(np.median(pdist(pooled)))
    if not h > 0:
        raise DegenerateBandwidthError("median pairwise distance is zero")
    return h


def _kernel_mean(a: np.ndarray, b: np.ndarray, h: float, chunk: int = 2048) -> float:
    # Row blocks keep memory bounded; block order is fixed so the sum is reproducible.
    total = 0.0
    for i in range(0, len(a), chunk):
        total += float(np.exp(-cdist(a[i:i + chunk], b, "sqeuclidean") / (2.0 * h * h)).sum())
    return total / (len(a) * len(b))


def mmd(sample_a, sample_b, config: MmdConfig = MmdConfig()) -> float:
    a, b = _as_matrix(sample_a), _as_matrix(sample_b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    h = median_heuristic(np.vstack([a, b])) if config.bandwidth == MEDIAN else config.bandwidth
    return mmd_at(a, b, h)


def mmd_at(a, b, h: float) -> float:
    """MMD with a fixed bandwidth. Symmetric in (a, b) by construction."""
    a, b = _as_matrix(a), _as_matrix(b)
    # Canonical argument order makes the floating-point reduction, and hence
    # the result, exactly symmetric.
    if (a.shape, a.tobytes()) > (b.shape, b.tobytes()):
        a, b = b, a
    kaa = _kernel_mean(a, a, h)
    kbb = _kernel_mean(b, b, h)
    kab = _kernel_mean(a, b, h)
    return float(np.sqrt(max(kaa + kbb - 2.0 * kab, 0.0)))


@dataclass
class EvalReport:
    metric: str
    rows: dict[str, list[float]]
    seeds: list[int]
    bandwidths: list[float] = field(default_factory=list)
    configs: dict = field(default_factory=dict)
    versions: dict = field(default_factory=lambda: {"extrapgen": __version__, "numpy": np.__version__})

    def summary(self) -> dict[str, tuple[float, float]]:
        return {k: (float(np.mean(v)), float(np.std(v))) for k, v in self.rows.items()}

    def argmin(self, labels: Sequence[str]) -> str:
        s = self.summary()
        return min(labels, key=lambda k: s[k][0])

    def to_json(self) -> str:
        payload = {
            "metric": self.metric,
            "seeds": self.seeds,
            "bandwidths": self.bandwidths,
            "per_seed": self.rows,
            "summary": {k: {"mean": m, "std": s} for k, (m, s) in self.summary().items()},
            "configs": self.configs,
            "versions": self.versions,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        width = max([len("row")] + [len(k) for k in self.rows])
        lines = [f"{'row':<{width}}  {self.metric + ' mean':>12}  {'std':>10}"]
        for k, (m, s) in self.summary().items():
            lines.append(f"{k:<{width}}  {m:>12.5f}  {s:>10.5f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "seed", self.metric])
        for k, vals in self.rows.items():
            for seed, v in zip(self.seeds, vals):
                w.writerow([k, seed, repr(float(v))])
        return buf.getvalue()


def compare_variants(results: Sequence[Mapping[str, np.ndarray]], oracles: Sequence[np.ndarray],
                     seeds: Sequence[int], config: MmdConfig = MmdConfig(),
                     configs: dict | None = None) -> EvalReport:
    """MMD of every labelled sample set to the oracle, one entry per seed.

    ``results[i]`` maps row labels to samples for seed ``seeds[i]``. Within a
    seed, one bandwidth is shared across every row, computed from the oracle
    pooled with all samples.
    """
    if not (len(results) == len(oracles) == len(seeds)):
        raise ContractError("results, oracles and seeds must align")
    rows: dict[str, list[float]] = {}
    bandwidths = []
    for res, oracle in zip(results, oracles):
        oracle = _as_matrix(oracle)
        for k, v in res.items():
            if _as_matrix(v).shape[1] != oracle.shape[1]:
                raise ContractError(f"row {k!r} has the wrong dimensionality")
        if config.bandwidth == MEDIAN:
            pooled = np.vstack([_subsample(oracle, MAX_HEURISTIC_ROWS)]
                               + [_subsample(_as_matrix(v), MAX_HEURISTIC_ROWS) for v in res.values()])
            h = median_heuristic(pooled)
        else:
            h = config.bandwidth
        bandwidths.append(h)
        for k, v in res.items():
            rows.setdefault(k, []).append(mmd_at(v, oracle, h))
    return EvalReport("mmd", rows, list(seeds), bandwidths, dict(configs or {}))
