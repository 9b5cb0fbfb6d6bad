import json
import shutil
import subprocess
import sys
import time

import pytest

from extrapgen.harness import cli, demos, stages
from extrapgen.harness.config import ConfigError, RunConfig, smoke_config


def _cfg(tmp_path, name="run", **kw):
    return smoke_config(output_dir=str(tmp_path / name), **kw)


# Configuration ----------------------------------------------------------------

def test_config_roundtrip():
    cfg = smoke_config()
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert RunConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()


@pytest.mark.parametrize("bad", ['{"bogus": 1}', '{"opt": {"stepz": 3}}', '{"opt": {"steps": "many"}}',
                                 '[1, 2]', '{not json'])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_json(bad)


def test_seeds_derived_from_master():
    a, b = RunConfig({"seed": 3}), RunConfig({"seed": 3})
    assert a.replicate_seeds() == b.replicate_seeds() and len(set(a.replicate_seeds())) == 10
    assert a.replicate_seeds() != RunConfig({"seed": 4}).replicate_seeds()


def test_hash_ignores_output_dir_only():
    a = smoke_config(output_dir="x")
    assert a.hash == smoke_config(output_dir="y").hash
    assert a.hash != smoke_config(output_dir="x", seed=1).hash


# Stages -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    cfg = smoke_config(output_dir=str(tmp_path_factory.mktemp("h") / "a"))
    return stages.run_all(cfg)


def test_run_writes_reports(full_run):
    rep = stages.load_report(full_run)
    assert {"opt-A", "dps-A", "reverse-D", "reverse-E", "seen"} <= set(rep["summary"])
    assert (full_run.out / "reports" / "plot_points.csv").read_text().startswith("panel,x1,x2,x3")


def test_manifests_identical_across_reruns(full_run, tmp_path):
    again = stages.run_all(full_run.config.with_overrides(out=str(tmp_path / "b")))
    assert (again.out / "manifest.json").read_bytes() == (full_run.out / "manifest.json").read_bytes()
    assert (again.out / "reports" / "mmd.json").read_bytes() == (full_run.out / "reports" / "mmd.json").read_bytes()


def test_adding_a_variant_keeps_other_samples(full_run, tmp_path):
    only_a = stages.run_all(full_run.config.with_overrides(out=str(tmp_path / "c")).__class__(
        {**json.loads(full_run.config.to_json()), "output_dir": str(tmp_path / "c"),
         "variants": {"forward": ["A"], "reverse": []}}))
    rel = "seed-0/samples/opt-A.csv"
    assert (only_a.out / rel).read_bytes() == (full_run.out / rel).read_bytes()


def test_eval_without_samples_names_extrapolate(tmp_path):
    run = stages.Run(_cfg(tmp_path))
    stages.cmd_gen_data(run)
    with pytest.raises(stages.MissingArtifactError) as e:
        stages.cmd_eval(run)
    assert e.value.stage == "extrapolate"


def test_train_without_data_names_gen_data(tmp_path):
    with pytest.raises(stages.MissingArtifactError) as e:
        stages.cmd_train(stages.Run(_cfg(tmp_path)), ["A"])
    assert e.value.stage == "gen-data"


def test_tampered_artifact_is_stale(tmp_path):
    run = stages.Run(_cfg(tmp_path))
    stages.cmd_gen_data(run)
    seen = run.seed_dir(0) / "data" / "seen.csv"
    seen.write_text(seen.read_text() + "0,0,0,0,0,1\n")
    with pytest.raises(stages.StaleArtifactError):
        stages.cmd_train(run, ["A"])


def test_oracle_withheld_from_training_stages(tmp_path):
    run = stages.Run(_cfg(tmp_path))
    stages.cmd_gen_data(run)
    oracle = run.seed_dir(0) / "data" / "oracle.csv"
    hidden = tmp_path / "hidden.csv"
    shutil.move(oracle, hidden)
    stages.cmd_train(run)
    stages.cmd_extrapolate(run)
    with pytest.raises(stages.MissingArtifactError) as e:
        stages.cmd_eval(run)
    assert e.value.stage == "gen-data"
    shutil.move(hidden, oracle)
    stages.cmd_eval(run)


# CLI ------------------------------------------------------------------------------

def _write_cfg(tmp_path, cfg):
    p = tmp_path / "cfg.json"
    p.write_text(cfg.to_json())
    return str(p)


def test_cli_stage_sequence(tmp_path, capsys):
    p = _write_cfg(tmp_path, smoke_config())
    out = str(tmp_path / "cli")
    for argv in (["gen-data"], ["train", "--variant", "A,prior"], ["extrapolate", "--variant", "A", "--method", "opt"]):
        assert cli.main(argv + ["--config", p, "--out", out, "--seed", "2"]) == 0
    assert (tmp_path / "cli" / "seed-0" / "samples" / "opt-A.csv").exists()
    assert not (tmp_path / "cli" / "seed-0" / "samples" / "dps-A.csv").exists()


def test_cli_missing_artifact_exit_code(tmp_path, capsys):
    p = _write_cfg(tmp_path, smoke_config())
    assert cli.main(["eval", "--config", p, "--out", str(tmp_path / "e")]) == cli.EXIT_STAGE
    line = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert line["error"] == "MissingArtifactError" and line["stage"] == "extrapolate"


def test_cli_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"unknown": true}')
    assert cli.main(["gen-data", "--config", str(p)]) == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err.strip())["error"] == "config"


def test_cli_verbs_registered():
    assert set(cli.VERBS) == {"gen-data", "train", "extrapolate", "eval", "exact-demo", "latent-demo",
                              "reproduce-fig4", "reproduce-tables"}


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "extrapgen", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "exact-demo" in r.stdout


def test_reproduce_fig4_smoke(tmp_path, capsys):
    p = _write_cfg(tmp_path, smoke_config())
    assert cli.main(["reproduce-fig4", "--config", p, "--out", str(tmp_path / "f")]) == 0
    out = capsys.readouterr().out
    assert "opt: lowest mean MMD" in out and "dps: lowest mean MMD" in out


# Demos ------------------------------------------------------------------------------

def test_exact_demo_fig3a(tmp_path, capsys):
    assert cli.main(["exact-demo", "fig3a", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "reports" / "exact-fig3a.json").read_text())
    assert rep["max_abs_error"] < 1e-10


def test_exact_demo_fig3b():
    rep = demos.exact_demo("fig3b", seed=0, n_nets=20)
    tv = dict(zip(rep["deltas"], rep["tv_mean"]))
    assert tv[0.1] > tv[0.01] > tv[0.001] and tv[0.001] < 0.01
    assert rep["monotone_fraction"] == 1.0 and rep["positive_points"] == 1.0
    assert rep["witness"]["novel_tv"] >= 0.05 and rep["witness"]["selected_gap"] < 1e-9


def test_exact_demo_net_file(tmp_path, capsys):
    from extrapgen.exact import fig3a_net, save_net
    from extrapgen.numerics import Rng

    save_net(fig3a_net(Rng(1)), tmp_path / "net.json")
    assert cli.main(["exact-demo", str(tmp_path / "net.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "reports" / "exact-net.json").exists()


def test_latent_demo_smoke(tmp_path, capsys):
    p = _write_cfg(tmp_path, smoke_config())
    t0 = time.perf_counter()
    assert cli.main(["latent-demo", "--config", p, "--out", str(tmp_path / "l")]) == 0
    assert time.perf_counter() - t0 < 300
    runs = json.loads((tmp_path / "l" / "reports" / "latent.json").read_text())
    assert len(runs) == 1 and len(runs[0]["mcc_z"]) == 2
    assert "MCC" in capsys.readouterr().out
