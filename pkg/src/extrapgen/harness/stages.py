"""Pipeline stages persisted to disk, with a content-hash manifest.

Layout under the output directory::

    config.json
    manifest.json            config hash, tool version, artifact hashes
    timings.json             wall-clock per stage (kept out of the manifest)
    seed-<k>/data/{full,seen,oracle}.csv
    seed-<k>/models/{A..E,prior}.json
    seed-<k>/samples/<method>-<variant>.{csv,json}
    reports/mmd.{json,txt,csv}, reports/plot_points.csv

Only ``eval`` reads ``oracle.csv``.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .. import __version__, diffusion, likelihood, pipeline
from ..errors import ContractError
from ..evaluation import compare_variants
from ..generation import GenerationResult, read_samples
from ..synthetic import read_csv, write_csv
from .config import RunConfig
from .io import atomic_write_text, sha256_file


class StageError(ContractError):
    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class MissingArtifactError(StageError):
    """An upstream file is absent; ``stage`` names the command that produces it."""


class StaleArtifactError(StageError):
    """An upstream file no longer matches the hash recorded when it was written."""


class Manifest:
    def __init__(self, out: Path, config: RunConfig):
        self.out = out
        self.path = out / "manifest.json"
        self.config = config
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
            if self.data.get("config_hash") != config.hash:
                # Different configuration: earlier artifacts are stale for this run.
                self.data = self._fresh()
        else:
            self.data = self._fresh()

    def _fresh(self) -> dict:
        return {"config_hash": self.config.hash, "tool_version": __version__, "artifacts": {}}

    def record(self, path: Path, stage: str) -> None:
        rel = path.relative_to(self.out).as_posix()
        self.data["artifacts"][rel] = {"sha256": sha256_file(path), "stage": stage}

    def require(self, path: Path, stage: str) -> Path:
        """Check an upstream artifact exists and is unchanged; ``stage`` produces it."""
        rel = path.relative_to(self.out).as_posix()
        entry = self.data["artifacts"].get(rel)
        if not path.exists() or entry is None:
            raise MissingArtifactError(f"missing {rel}; run the '{stage}' stage first", stage)
        if sha256_file(path) != entry["sha256"]:
            raise StaleArtifactError(f"{rel} changed since it was written; rerun '{stage}'", stage)
        return path

    def save(self) -> None:
        self.data["artifacts"] = dict(sorted(self.data["artifacts"].items()))
        atomic_write_text(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")


class Run:
    """Shared state for the stage commands of one configured run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.output_dir()
        self.out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.out / "config.json", config.to_json())
        self.manifest = Manifest(self.out, config)
        self.timings_path = self.out / "timings.json"
        self.timings = json.loads(self.timings_path.read_text()) if self.timings_path.exists() else {}

    def seed_dir(self, k: int) -> Path:
        return self.out / f"seed-{k}"

    def write(self, path: Path, text: str, stage: str) -> None:
        atomic_write_text(path, text)
        self.manifest.record(path, stage)

    def finish(self, stage: str, seconds: float) -> None:
        self.timings[stage] = round(seconds, 3)
        atomic_write_text(self.timings_path, json.dumps(self.timings, indent=2, sort_keys=True) + "\n")
        self.manifest.save()

    def seeds(self) -> list[tuple[int, int]]:
        return list(enumerate(self.config.replicate_seeds()))


def _model_names(cfg: RunConfig) -> list[str]:
    v = cfg.data["variants"]
    return list(v["forward"]) + list(v["reverse"])


def cmd_gen_data(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    written = []
    for k, seed in run.seeds():
        full, seen, oracle = pipeline.make_data(run.config.pipeline(seed), seed)
        d = run.seed_dir(k) / "data"
        d.mkdir(parents=True, exist_ok=True)
        for name, ds in (("full", full), ("seen", seen), ("oracle", oracle)):
            path = d / f"{name}.csv"
            write_csv(ds, path)
            run.manifest.record(path, "gen-data")
            written.append(path)
    run.finish("gen-data", time.perf_counter() - t0)
    return written


def cmd_train(run: Run, variants: list[str] | None = None) -> list[Path]:
    t0 = time.perf_counter()
    names = variants or _model_names(run.config) + ["prior"]
    written = []
    for k, seed in run.seeds():
        seen = read_csv(run.manifest.require(run.seed_dir(k) / "data" / "seen.csv", "gen-data"))
        cfg = run.config.pipeline(seed)
        mdir = run.seed_dir(k) / "models"
        for v in names:
            path = mdir / f"{v}.json"
            if v == "prior":
                text = json.dumps(diffusion.prior_to_dict(pipeline.fit_prior(cfg, seen, seed)), sort_keys=True)
            else:
                model = pipeline.fit_likelihood(cfg, seen, v, seed)
                text = json.dumps(likelihood.model_to_dict(model), sort_keys=True)
            run.write(path, text + "\n", "train")
            written.append(path)
    run.finish("train", time.perf_counter() - t0)
    return written


def _load_likelihood(run: Run, k: int, v: str):
    path = run.manifest.require(run.seed_dir(k) / "models" / f"{v}.json", "train")
    return likelihood.model_from_dict(json.loads(path.read_text()))


def _load_prior(run: Run, k: int):
    path = run.manifest.require(run.seed_dir(k) / "models" / "prior.json", "train")
    return diffusion.prior_from_dict(json.loads(path.read_text()))


def sample_keys(config: RunConfig) -> list[tuple[str, str]]:
    """(method, variant) cells the run produces."""
    v = config.data["variants"]
    return [(m, f) for f in v["forward"] for m in ("opt", "dps")] + [("reverse", r) for r in v["reverse"]]


def cmd_extrapolate(run: Run, variants: list[str] | None = None, methods: list[str] | None = None) -> list[Path]:
    t0 = time.perf_counter()
    cells = [(m, v) for m, v in sample_keys(run.config)
             if (variants is None or v in variants) and (methods is None or m in methods)]
    written = []
    for k, seed in run.seeds():
        seen = read_csv(run.manifest.require(run.seed_dir(k) / "data" / "seen.csv", "gen-data"))
        cfg = run.config.pipeline(seed)
        prior = _load_prior(run, k) if any(m == "dps" for m, _ in cells) else None
        sdir = run.seed_dir(k) / "samples"
        for m, v in cells:
            model = _load_likelihood(run, k, v)
            res, extra = pipeline.extrapolate(cfg, seen, model, prior, m, seed)
            side = res.sidecar()
            side.update(extra)
            side["seed"] = seed
            csv_path, js_path = sdir / f"{m}-{v}.csv", sdir / f"{m}-{v}.json"
            run.write(csv_path, res.to_csv(), "extrapolate")
            run.write(js_path, json.dumps(side, indent=2, sort_keys=True) + "\n", "extrapolate")
            written += [csv_path, js_path]
    run.finish("extrapolate", time.perf_counter() - t0)
    return written


def cmd_eval(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    results, oracles, seeds = [], [], []
    for k, seed in run.seeds():
        sdir = run.seed_dir(k) / "samples"
        rows = {}
        for m, v in sample_keys(run.config):
            rows[f"{m}-{v}"] = read_samples(run.manifest.require(sdir / f"{m}-{v}.csv", "extrapolate"))
        seen = read_csv(run.manifest.require(run.seed_dir(k) / "data" / "seen.csv", "gen-data"))
        n_ref = max(len(r) for r in rows.values())
        rows["seen"] = seen.x[:n_ref]
        oracle = read_csv(run.manifest.require(run.seed_dir(k) / "data" / "oracle.csv", "gen-data"))
        results.append(rows)
        oracles.append(oracle.x)
        seeds.append(seed)
    report = compare_variants(results, oracles, seeds, run.config.mmd_config(),
                              {"config_hash": run.config.hash})
    rdir = run.out / "reports"
    written = []
    for name, text in (("mmd.json", report.to_json()), ("mmd.txt", report.to_table()), ("mmd.csv", report.to_csv()),
                       ("plot_points.csv", _plot_points(results[0], oracles[0]))):
        run.write(rdir / name, text, "eval")
        written.append(rdir / name)
    run.finish("eval", time.perf_counter() - t0)
    return written


def _plot_points(rows: dict, oracle: np.ndarray) -> str:
    """Point lists for the per-panel scatter views (first replicate)."""
    lines = ["panel,x1,x2,x3"]
    for name, pts in [("oracle", oracle)] + list(rows.items()):
        for p in pts:
            lines.append(",".join([name] + [repr(float(v)) for v in p]))
    return "\n".join(lines) + "\n"


def load_report(run: Run) -> dict:
    return json.loads(run.manifest.require(run.out / "reports" / "mmd.json", "eval").read_text())


def run_all(config: RunConfig) -> Run:
    run = Run(config)
    stages = config.data["stages"]
    if stages["gen_data"]:
        cmd_gen_data(run)
    if stages["train"]:
        cmd_train(run)
    if stages["extrapolate"]:
        cmd_extrapolate(run)
    if stages["eval"]:
        cmd_eval(run)
    return run


__all__ = ["Run", "Manifest", "MissingArtifactError", "StaleArtifactError", "StageError", "cmd_gen_data",
           "cmd_train", "cmd_extrapolate", "cmd_eval", "run_all", "load_report", "sample_keys",
           "GenerationResult"]
