"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``; the lines are printed as
each criterion finishes and again in the terminal summary. The trained-model
criteria take several minutes of CPU time.

Criterion 10's trained-model runs are informational; their trial counts can
be raised with DIFFSCM_DCM_INDEP_TRIALS / DIFFSCM_ANM_INDEP_TRIALS.
"""

import os
import time

import numpy as np
import pytest

from diffscm.diffusion import DiffusionNodeModel, make_schedule
from diffscm.evaluation import BenchmarkConfig, eval_counterfactual, intervention_grid, run_benchmark
from diffscm.graph import named_graph
from diffscm.metrics import mmd_rbf
from diffscm.models import DcmHyperparams, fit_anm
from diffscm.nn import Mlp
from diffscm.rng import substream
from diffscm.scm import linear_scm
from diffscm.theory import (
    LEMMA_FAMILIES,
    additive_scenario,
    counterfactual_bound_check,
    dcm_encoder,
    encoding_independence_report,
    translation_lemma_check,
)

from test_metrics import brute_median, brute_mmd
from test_nn import fd_check

pytestmark = pytest.mark.slow

RESULTS: dict[int, str] = {}
SEEDS = [0, 1, 2, 3, 4]


def record(num: int, passed: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[num] = line
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def chain_run():
    cfg = BenchmarkConfig("chain", "NLIN", n_train=2000, seeds=SEEDS, models=["dcm"], dcm=DcmHyperparams(epochs=200))
    t0 = time.perf_counter()
    report = run_benchmark(cfg)
    return report, time.perf_counter() - t0


def test_c01_chain_counterfactual(chain_run):
    report, secs = chain_run
    cf = report.values("dcm", "cf_mse")
    ok = len(cf) == 5 and np.mean(cf) < 0.05 and secs < 15 * 60
    record(1, ok, f"chain NLIN DCM CF MSE mean {np.mean(cf):.4f} (< 0.05, anchor 0.0033); runtime {secs:.0f}s (< 900s)")


def test_c02_chain_mmd(chain_run):
    report, _ = chain_run
    obs, inter = np.mean(report.values("dcm", "obs_mmd")), np.mean(report.values("dcm", "int_mmd"))
    record(2, obs < 0.02 and inter < 0.06,
           f"chain NLIN DCM obs MMD {obs:.4f} (< 0.02, anchor 0.0027); int MMD {inter:.4f} (< 0.06, anchor 0.0171)")


def test_c03_triangle_nadd_ordering():
    cfg = BenchmarkConfig("triangle", "NADD", n_train=2000, seeds=SEEDS, models=["dcm", "anm"],
                          dcm=DcmHyperparams(epochs=200))
    report = run_benchmark(cfg)
    dcm, anm = np.array(report.values("dcm", "cf_mse")), np.array(report.values("anm", "cf_mse"))
    se = np.sqrt(dcm.var(ddof=1) / len(dcm) + anm.var(ddof=1) / len(anm))
    gap = anm.mean() - dcm.mean()
    record(3, len(dcm) == len(anm) == 5 and gap > se,
           f"triangle NADD CF MSE DCM {dcm.mean():.4f} vs ANM {anm.mean():.4f}; gap {gap:.4f} > SE {se:.4f}"
           " (anchor 0.2628 vs 0.9725)")


def test_c04_anm_linear_exactness():
    g = named_graph("chain")
    worst, picks = 0.0, []
    for seed in SEEDS:
        coef = substream(seed, "c4/coef").uniform(0.5, 2.0, size=2) * np.array([1, -1])
        scm = linear_scm(g, {1: coef[0], 2: coef[1]}, noise_scale=0.5)
        train = scm.sample({}, 5000, substream(seed, "c4/train"))
        model = fit_anm(train, g, substream(seed, "c4/fit"))
        picks += [model.selected[1], model.selected[2]]
        grids = {i: intervention_grid(train, g, i, 20) for i in (0, 1)}
        mse, _ = eval_counterfactual(model, scm, [0, 1], grids, 100, substream(seed, "c4/eval"))
        worst = max(worst, mse)
    ok = worst < 1e-3 and all(p == "ridge" for p in picks)
    record(4, ok, f"linear chain ANM worst-seed CF MSE {worst:.2e} (< 1e-3); regressors {sorted(set(picks))}")


def _round_trip_error(eps, rng):
    m = DiffusionNodeModel(1, 1, 1, make_schedule(100), eps)
    x, pa = rng.normal(size=(1000, 1)), rng.normal(size=(1000, 1))
    return float(np.max(np.abs(m.decode(m.encode(x, pa), pa) - x)))


def test_c05_ddim_invertibility(trained_chain):
    rng = substream(0, "c5")
    zero = _round_trip_error(lambda inp: np.zeros((len(inp), 1)), rng)
    affine = 0.0
    for _ in range(10):
        w = rng.normal(size=(3, 1))
        b = rng.normal()
        affine = max(affine, _round_trip_error(lambda inp, w=w, b=b: inp @ w + b, rng))
    model, _, held = trained_chain
    g = model.graph
    rmse = 0.0
    for i, nm in model.node_models.items():
        x, pa = held.values[:, g.slices()[i]], held.values[:, g.parent_columns(i)]
        rmse = max(rmse, float(np.sqrt(np.mean((nm.decode(nm.encode(x, pa), pa) - x) ** 2))))
    ok = zero <= 1e-9 and affine <= 1e-6 and rmse < 0.05
    record(5, ok, f"round trip eps=0 {zero:.1e} (<= 1e-9); random affine eps {affine:.1e} (<= 1e-6); "
                  f"trained chain held-out RMSE {rmse:.4f} (< 0.05)")


def test_c06_corollary_suite():
    parts = []
    for k, delta in enumerate((0.0, 0.01, 0.1)):
        res = counterfactual_bound_check(additive_scenario(delta=delta), rng=substream(0, "c6", k))
        parts.append(abs(res["max_counterfactual_error"] - delta) <= 1e-9
                     and abs(res["max_reconstruction_error"] - delta) <= 1e-9 and not res["violation"])
    # delta = 0: the decoded counterfactual is the oracle counterfactual itself
    sc = additive_scenario()
    g = sc.scm.graph
    fact = sc.scm.sample_observational(500, substream(1, "c6"))
    z = sc.encoder_decoder.encode(fact.values[:, 1:], fact.values[:, :1])
    exact = True
    for gamma in np.linspace(-2, 2, 9):
        truth = sc.scm.true_counterfactual(fact, {0: gamma})
        est = sc.encoder_decoder.decode(z, truth[:, g.parent_columns(1)])
        exact &= bool(np.max(np.abs(est - truth[:, 1:])) <= 1e-12)
    record(6, all(parts) and exact,
           f"delta in (0, 0.01, 0.1): max CF = max recon = delta {parts}; delta=0 equals oracle {exact}")


def test_c07_translation_lemma():
    cubic = translation_lemma_check(LEMMA_FAMILIES["cubic_shift"], tol=1e-6)
    ident = translation_lemma_check(LEMMA_FAMILIES["identity"], tol=1e-6)
    mult = translation_lemma_check(LEMMA_FAMILIES["multiplicative"], x_grid=np.linspace(0.5, 1.0, 6), tol=1e-6)
    ok = cubic["passed"] and ident["passed"] and not mult["passed"] and cubic["num_u"] == 401
    record(7, ok, f"spread cubic {cubic['derivative_spread']:.1e}, identity {ident['derivative_spread']:.1e} "
                  f"(pass at 1e-6); multiplicative {mult['derivative_spread']:.2f} (fails)")


def test_c08_gradient_check():
    rng = substream(0, "c8")
    worst = 0.0
    for _ in range(100):
        sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
        net = Mlp.init(sizes, rng)
        batch = int(rng.integers(1, 5))
        worst = max(worst, fd_check(net, rng.normal(size=(batch, sizes[0])), rng.normal(size=(batch, sizes[-1]))))
    record(8, worst < 1e-4, f"100 random nets, worst backprop vs central-difference relative error {worst:.1e} (< 1e-4)")


def test_c09_mmd_oracle():
    rng = substream(0, "c9")
    worst = 0.0
    for _ in range(20):
        X, Y = rng.normal(size=(10, 2)), rng.normal(0.3, 1.1, size=(10, 2))
        worst = max(worst, abs(mmd_rbf(X, Y, clamp=False) - brute_mmd(X, Y, brute_median(X, Y))))
    X = rng.normal(size=(500, 3))
    same = mmd_rbf(X, X)
    record(9, worst <= 1e-12 and same == 0.0, f"10-point sets vs brute force {worst:.1e} (<= 1e-12); MMD(X,X) = {same}")


def test_c10_independence():
    true = encoding_independence_report("true_noise", trials=100).summary()
    dep = encoding_independence_report("dependent", trials=100).summary()
    n_dcm = int(os.environ.get("DIFFSCM_DCM_INDEP_TRIALS", "10"))
    n_anm = int(os.environ.get("DIFFSCM_ANM_INDEP_TRIALS", "20"))
    dcm = encoding_independence_report(dcm_encoder(DcmHyperparams(epochs=200)), trials=n_dcm, label="dcm").summary()
    anm = encoding_independence_report("anm", trials=n_anm).summary()
    ok = 0.0 <= true["rejection_rate_0.05"] <= 0.15 and dep["mean"] < 0.01
    record(10, ok, f"true-noise rejection {true['rejection_rate_0.05']:.2f} (in [0, 0.15]); dependent mean p "
                   f"{dep['mean']:.1e} (< 0.01); informational: DCM mean p {dcm['mean']:.3f} over {n_dcm} trials "
                   f"(anchor 0.196), ANM mean p {anm['mean']:.3f} over {n_anm} trials")
