"""End-to-end acceptance checks, one test per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

from conftest import FD_RTOL, directional_fd_check, fd_check_params, record_criterion
from extrapgen.exact import (
    ExistenceError,
    SpecificationPartition,
    conservative_identify,
    construct_positive_point,
    fig3a_net,
    fig3b_leaky_net,
    fig3b_net,
    fig3b_witness_template,
    identify_no_shared,
    leak_weights,
    nonidentifiability_witness,
)
from extrapgen.exact.identify import max_abs_diff, true_novel_conditional, tv_distance, witness_distances
from extrapgen.generation import read_samples
from extrapgen.harness import demos, stages
from extrapgen.harness.config import RunConfig
from extrapgen.numerics import Rng, derive_seed
from extrapgen.synthetic import GeneratorConfig, in_novel_region, specifications

FORWARD_OPT = ["opt-A", "opt-B", "opt-C", "reverse-D", "reverse-E"]
FORWARD_DPS = ["dps-A", "dps-B", "dps-C"]


def _nets(builder, n, tag, **kw):
    return [builder(Rng(derive_seed(2024, tag, i)), **kw) for i in range(n)]


# Exact inference ---------------------------------------------------------------

def test_criterion_1_exact_identification():
    t0 = time.perf_counter()
    errs = []
    for net in _nets(fig3a_net, 50, "c1"):
        errs.append(max_abs_diff(identify_no_shared(net, SpecificationPartition.singletons(net)),
                                 true_novel_conditional(net)))
    secs = time.perf_counter() - t0
    ok = max(errs) < 1e-10 and secs < 10
    record_criterion(1, ok, f"50 nets, max error {max(errs):.2e}, {secs:.2f} s")
    assert ok


def test_criterion_2_existence_construction():
    good = 0
    for net in _nets(fig3b_net, 50, "c2"):
        point = construct_positive_point(net, SpecificationPartition.singletons(net, shared=("X2",)))
        good += true_novel_conditional(net).prob(point) > 0
    errored = 0
    for net in _nets(fig3b_net, 50, "c2-bad", overlap=False):
        try:
            construct_positive_point(net, SpecificationPartition.singletons(net, shared=("X2",)))
        except ExistenceError:
            errored += 1
    ok = good == 50 and errored == 50
    record_criterion(2, ok, f"positive {good}/50, violating nets rejected {errored}/50")
    assert ok


def test_criterion_3_nonidentifiability():
    a, b, _ = nonidentifiability_witness(fig3b_witness_template(Rng(2024)))
    gap, tv = witness_distances(a, b)
    ok = gap < 1e-9 and tv >= 0.05
    record_criterion(3, ok, f"selected-data gap {gap:.2e}, novel TV {tv:.4f}")
    assert ok


def test_criterion_4_conservative_solution():
    deltas = (0.1, 0.01, 0.001, 0.0)
    table = []
    for i in range(20):
        rng = Rng(derive_seed(2024, "c4", i))
        base = fig3b_net(rng)
        w = leak_weights(rng)
        part = SpecificationPartition.singletons(base, shared=("X2",))
        table.append([tv_distance(conservative_identify(n, part), true_novel_conditional(n))
                      for n in (fig3b_leaky_net(rng, d, w, base) for d in deltas)])
    t = np.array(table)
    monotone = np.all(t[:, 0] > t[:, 1]) and np.all(t[:, 1] > t[:, 2])
    ok = monotone and t[:, 2].max() < 0.01 and t[:, 3].max() < 1e-10
    record_criterion(4, ok, "20 nets, max TV " + ", ".join(f"d={d}: {v:.2e}" for d, v in zip(deltas, t.max(0))))
    assert ok


# Synthetic pipeline ---------------------------------------------------------------

@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    cfg = RunConfig({"output_dir": str(tmp_path_factory.mktemp("acceptance") / "default")})
    t0 = time.perf_counter()
    run = stages.run_all(cfg)
    return run, stages.load_report(run), time.perf_counter() - t0


def _fmt(summary, keys):
    return ", ".join(f"{k} {summary[k]['mean']:.4f}±{summary[k]['std']:.4f}" for k in keys)


def test_criterion_5_ordering(pipeline_run):
    run, report, secs = pipeline_run
    s = report["summary"]
    best_opt = min(FORWARD_OPT, key=lambda k: s[k]["mean"])
    best_dps = min(FORWARD_DPS, key=lambda k: s[k]["mean"])
    strict_opt = all(s["opt-A"]["mean"] < s[k]["mean"] for k in FORWARD_OPT[1:])
    strict_dps = all(s["dps-A"]["mean"] < s[k]["mean"] for k in FORWARD_DPS[1:])
    ok = strict_opt and strict_dps and secs < 1800 and len(report["seeds"]) == 10
    record_criterion(5, ok, f"best opt {best_opt}, best dps {best_dps}, {secs:.0f} s; "
                            + _fmt(s, FORWARD_OPT + FORWARD_DPS))
    assert ok


def test_criterion_6_bracket(pipeline_run):
    s = pipeline_run[1]["summary"]
    a_opt, a_dps = s["opt-A"]["mean"], s["dps-A"]["mean"]
    ok = 0.02 <= a_opt <= 0.06 and 0.02 <= a_dps <= 0.06
    record_criterion(6, ok, _fmt(s, ["opt-A", "dps-A"]))
    assert ok


def test_criterion_10_hit_rate(pipeline_run):
    run = pipeline_run[0]
    mean_noise = np.full(2, GeneratorConfig().noise_mean)
    per = {"opt": [], "dps": []}
    for k, _ in run.seeds():
        for m in per:
            per[m].append(read_samples(run.seed_dir(k) / "samples" / f"{m}-A.csv"))
    rates = {m: in_novel_region(specifications(np.vstack(v), mean_noise)).mean() for m, v in per.items()}
    pooled = in_novel_region(specifications(np.vstack(per["opt"] + per["dps"]), mean_noise)).mean()
    ok = pooled >= 0.8
    record_criterion(10, ok, f"variant A pooled {pooled:.3f} (opt {rates['opt']:.3f}, dps {rates['dps']:.3f})")
    assert ok


# Latent recovery -------------------------------------------------------------------

def test_criterion_7_latent_recovery():
    cfg = RunConfig()
    runs = [demos.latent_seed(cfg, s, downstream=False) for s in cfg.replicate_seeds()]
    mx = np.array([r["mcc_x"] for r in runs]).mean(0)
    mz = np.array([r["mcc_z"] for r in runs]).mean(0)
    ok = mz[0] > 0.85 and mz[1] > 0.85 and mx[1] > mx[0]
    record_criterion(7, ok, "mean MCC X " + ", ".join(f"{v:.3f}" for v in mx)
                     + "; Z " + ", ".join(f"{v:.3f}" for v in mz))
    assert ok


# Degeneracy and gradients -------------------------------------------------------------

def test_criterion_8_degeneracy(model_a, prior_default, seen_default):
    from extrapgen.diffusion import sample_unconditional
    from extrapgen.generation import DpsConfig, OptConfig, extrapolate_dps, extrapolate_opt, novel_target

    seen = seen_default[0]
    target = novel_target(seen, model=model_a)
    dps = extrapolate_dps(model_a, prior_default, target, DpsConfig(guidance=0.0, n_gen=500, seed=5))
    same = np.array_equal(dps.samples, sample_unconditional(prior_default, 500, 5))
    cfg = OptConfig(steps=0, n_gen=500, seed=5)
    opt = extrapolate_opt(model_a, seen, target, cfg)
    idx = Rng(derive_seed(cfg.seed, "opt", "A")).integers(0, len(seen), cfg.n_gen)
    exact_init = np.array_equal(opt.samples, seen.x[idx])
    ok = same and exact_init
    record_criterion(8, ok, f"dps lambda=0 bit-identical {same}, opt steps=0 returns inits {exact_init}")
    assert ok


def test_criterion_9_gradients(seen_default, model_a, prior_default):
    from extrapgen.diffusion import forward_noise, init_prior
    from extrapgen.generation import _guidance, _residual_sq
    from extrapgen.latent import LATENT_DIMS, MixingConfig, init_twin_vae, mix, twin_objective
    from extrapgen.likelihood import build_model, loss_given, sparsity
    from extrapgen.numerics import ad, value_and_grad

    seen = seen_default[0]
    x, z = seen.x[:16], seen.z[:16]
    errs = {}
    for v, mode in (("A", None), ("A", "learnable"), ("B", None), ("C", None), ("D", None), ("E", None)):
        m = build_model(v, seen, mask_mode=mode)
        f = (lambda p, m=m: loss_given(m, x, z, p) + 5e-4 * sparsity(m, p))
        errs[f"likelihood-{v}{'-masks' if mode else ''}"] = fd_check_params(f, m.params, Rng(1))

    prior = init_prior(seen.x)
    r = Rng(2)
    t = r.integers(1, prior.schedule.T + 1, 16)
    eps = r.normal((16, 3))
    xt = forward_noise(prior.normalize(x), t, eps, prior.schedule)
    errs["prior"] = fd_check_params(lambda p: ad.mean(ad.sum(ad.square(prior.eps_hat(xt, t, p) - eps), axis=1)),
                                    prior.params, Rng(3))

    x0 = model_a.norm.nx(x)
    zt = r.normal((16, 2))
    _, g = value_and_grad(lambda p: ad.sum(_residual_sq(model_a, p["x"], zt)), {"x": x0})
    errs["opt-objective"] = directional_fd_check(lambda v: float(np.sum(_residual_sq(model_a, v, zt).numpy())),
                                                 g["x"], x0, Rng(4))
    xg = r.normal((16, 3))
    gg, _ = _guidance(model_a, prior_default, xg, zt)
    errs["dps-guidance"] = directional_fd_check(lambda v: float(np.sum(_guidance(model_a, prior_default, v, zt)[1])),
                                                gg, xg, Rng(5))

    y_x, y_z = mix(seen_default[0].subset(np.arange(200)), MixingConfig())
    vae = init_twin_vae(y_x, y_z)
    yx, yz = vae.pre_x.apply(y_x[:16]), vae.pre_z.apply(y_z[:16])
    ex, ez = r.normal((16, LATENT_DIMS[0])), r.normal((16, LATENT_DIMS[1]))
    u = r.uniform(1e-6, 1 - 1e-6, (16, LATENT_DIMS[1], LATENT_DIMS[0]))
    gates = np.log(u) - np.log1p(-u)
    errs["twin-vae"] = fd_check_params(
        lambda p: twin_objective(vae.branches, p, yx, yz, ex, ez, 0.05, 5e-4, True, gates)[0], vae.params, Rng(6))

    worst = max(errs, key=errs.get)
    ok = errs[worst] < FD_RTOL
    record_criterion(9, ok, f"{len(errs)} gradients x 100 probes, worst {worst} {errs[worst]:.2e}")
    assert ok


# Reproducibility ---------------------------------------------------------------------

def test_criterion_11_reproducibility(tmp_path):
    data = {"n_seeds": 2}
    a = stages.run_all(RunConfig({**data, "output_dir": str(tmp_path / "first")}))
    b = stages.run_all(RunConfig({**data, "output_dir": str(tmp_path / "second")}))
    ma, mb = (r.out / "manifest.json" for r in (a, b))
    same = ma.read_bytes() == mb.read_bytes()
    n = len(json.loads(ma.read_text())["artifacts"])
    record_criterion(11, same, f"two default-setting runs (2 seeds), {n} artifacts, manifests byte-identical {same}")
    assert same
