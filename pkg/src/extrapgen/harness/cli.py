"""Command-line entry point.

Every verb accepts ``--config``, ``--seed`` and ``--out``. Failures print one
JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ..errors import ContractError, NumericError, TrainingError
from . import demos, stages
from .config import ConfigError, RunConfig
from .io import atomic_write_text

EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_OTHER = 1


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, out=args.out)


def _csv_list(text: str | None) -> list[str] | None:
    return None if text is None else [v.strip() for v in text.split(",") if v.strip()]


def _print_paths(paths) -> None:
    for p in paths:
        print(p)


def do_gen_data(args) -> None:
    _print_paths(stages.cmd_gen_data(stages.Run(_load(args))))


def do_train(args) -> None:
    _print_paths(stages.cmd_train(stages.Run(_load(args)), _csv_list(args.variant)))


def do_extrapolate(args) -> None:
    run = stages.Run(_load(args))
    _print_paths(stages.cmd_extrapolate(run, _csv_list(args.variant), _csv_list(args.method)))


def do_eval(args) -> None:
    run = stages.Run(_load(args))
    stages.cmd_eval(run)
    print((run.out / "reports" / "mmd.txt").read_text(), end="")


def do_reproduce_fig4(args) -> None:
    run = stages.run_all(_load(args))
    report = stages.load_report(run)
    print((run.out / "reports" / "mmd.txt").read_text(), end="")
    for method, pool in (("opt", ["opt-A", "opt-B", "opt-C", "reverse-D", "reverse-E"]),
                         ("dps", ["dps-A", "dps-B", "dps-C"])):
        means = {k: report["summary"][k]["mean"] for k in pool if k in report["summary"]}
        best = min(means, key=means.get) if means else None
        print(f"{method}: lowest mean MMD {best}")


def do_exact_demo(args) -> None:
    cfg = _load(args)
    report = demos.exact_demo(args.net, cfg.master_seed, args.n_nets)
    out = cfg.output_dir() / "reports"
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.net).stem if args.net not in ("fig3a", "fig3b") else args.net
    atomic_write_text(out / f"exact-{stem}.json", json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    print(demos.format_exact(report), end="")


def _latent(args, cfg: RunConfig) -> None:
    t0 = time.perf_counter()
    runs, report = demos.latent_demo(cfg)
    out = cfg.output_dir() / "reports"
    out.mkdir(parents=True, exist_ok=True)
    slim = [{k: v for k, v in r.items() if k not in ("samples", "oracle_latent")} for r in runs]
    atomic_write_text(out / "latent.json", json.dumps(slim, indent=2, sort_keys=True) + "\n")
    text = demos.format_latent(runs, report)
    atomic_write_text(out / "latent.txt", text)
    if report is not None:
        atomic_write_text(out / "latent-mmd.json", report.to_json())
    print(text, end="")
    print(f"elapsed {time.perf_counter() - t0:.1f} s", file=sys.stderr)


def do_latent_demo(args) -> None:
    _latent(args, _load(args))


def do_reproduce_tables(args) -> None:
    cfg = _load(args)
    _latent(args, cfg)


VERBS = {
    "gen-data": (do_gen_data, "generate and split the synthetic data"),
    "train": (do_train, "fit likelihood models and the diffusion prior"),
    "extrapolate": (do_extrapolate, "draw samples for the novel specification region"),
    "eval": (do_eval, "score sample files against the oracle split"),
    "exact-demo": (do_exact_demo, "exact identification on small discrete nets"),
    "latent-demo": (do_latent_demo, "twin-VAE latent recovery with downstream extrapolation"),
    "reproduce-fig4": (do_reproduce_fig4, "all stages plus the variant ranking"),
    "reproduce-tables": (do_reproduce_tables, "MCC and recovered-latent MMD tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extrapgen")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, (fn, help_text) in VERBS.items():
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        if verb in ("train", "extrapolate"):
            p.add_argument("--variant", help="comma-separated subset of variants")
        if verb == "extrapolate":
            p.add_argument("--method", help="comma-separated subset of opt,dps,reverse")
        if verb == "exact-demo":
            p.add_argument("net", nargs="?", default="fig3a", help="fig3a, fig3b or a net JSON file")
            p.add_argument("--n-nets", type=int, default=20)
        p.set_defaults(func=fn)
    return parser


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    except stages.StageError as e:
        return _fail(type(e).__name__, str(e), EXIT_STAGE, stage=e.stage)
    except (ContractError, NumericError, TrainingError, OSError, ValueError) as e:
        return _fail(type(e).__name__, str(e), EXIT_OTHER)
    return 0


if __name__ == "__main__":
    sys.exit(main())
