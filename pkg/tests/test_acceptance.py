"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture."""

import json
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from sssa.analysis import RatioStudyConfig, bench_scaling, ratio_var_exact, ratio_var_mc, taylor_study
from sssa.analysis.ratio import PUBLISHED_SPIKE_VARIANCE
from sssa.analysis.scaling import count_forward
from sssa.checkpoint import load_checkpoint, save_checkpoint
from sssa.cli import run
from sssa.conv import conv2d, conv2d_naive
from sssa.model import model_forward
from sssa.tensor import RngState
from sssa.training import OptimSpec, ToyTaskSpec, logistic_oracle, train_toy
from sssa.verify import counterexample, grad_checks, saccadic_agreement, verify_scaling_invariance, verify_v1_v2

from test_conv import random_conv_case


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_c01_spike_ratio_variance(verdict, tmp_path):
    (mean, exact), t_exact = timed(ratio_var_exact, 0.15, 128)
    assert run(["analyze-ratio", "--trials", "1000000", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "ratio_report_spike.json").read_text())["results"]
    rel = doc["mc_relative_error"]
    gap = abs(PUBLISHED_SPIKE_VARIANCE - exact)
    published_ok = gap <= 0.07
    documented = "note" in doc and len(doc.get("conventions", {})) == 4 and doc["published_variance"] == PUBLISHED_SPIKE_VARIANCE
    ok = t_exact < 1.0 and rel <= 0.02 and (published_ok or documented)
    how = "agrees" if published_ok else f"differs by {gap:.3f}; discrepancy documented with convention note"
    verdict(
        1,
        ok,
        f"exact {exact:.6f} in {t_exact:.3f}s, MC(1e6) {doc['variance']:.6f} rel err {rel:.2%}, "
        f"published {PUBLISHED_SPIKE_VARIANCE} {how}",
    )


def test_c02_spike_vs_gaussian(verdict):
    t0 = time.perf_counter()
    spike = ratio_var_mc(RatioStudyConfig(mode="spike", trials=1_000_000), workers=4).variance
    gauss = ratio_var_mc(RatioStudyConfig(mode="gaussian", mu=35, sigma=10, trials=1_000_000), workers=4).variance
    elapsed = time.perf_counter() - t0
    ok = spike >= 10 * gauss and elapsed < 30
    verdict(2, ok, f"spike {spike:.4g} / gaussian {gauss:.4g} = {spike / gauss:.1f}x in {elapsed:.1f}s")


def test_c03_taylor_bound(verdict):
    s = taylor_study(0.15, 0.1, 0.2)
    ok = abs(s.max_abs_error - 0.072132) <= 1e-4 and s.argmax == pytest.approx(0.1)
    verdict(3, ok, f"max error {s.max_abs_error:.6f} at x = {s.argmax:g}")


def test_c04_heaviside_scaling(verdict):
    res = verify_scaling_invariance(10_000, seed=0)
    verdict(4, res.ok, res.summary())


def test_c05_saccadic_duality(verdict):
    diag = saccadic_agreement(1000, seed=0, general=False)
    general = saccadic_agreement(1000, seed=0, general=True)
    ce = counterexample()
    ok = diag == 1.0 and ce["disagree"] and ce["train_spikes"] == [1, 1] and ce["infer_spikes"] == [1, 0]
    verdict(5, ok, f"diagonal agreement {diag:.3f}, general agreement {general:.3f}, counterexample disagrees")


def test_c06_v1_v2_equivalence(verdict):
    full = verify_v1_v2(1000, seed=0)
    single = verify_v1_v2(1000, seed=1, single_step=True)
    verdict(6, full.ok and single.ok, f"constant alpha {full.summary()}, T=1 {single.summary()}")


def test_c07_complexity_scaling(verdict):
    t0 = time.perf_counter()
    n = bench_scaling("n", variants=("v2-learned", "ssa"))
    d = bench_scaling("d", variants=("v2-learned",))
    elapsed = time.perf_counter() - t0
    e_v2, e_ssa, e_d = n.exponents["v2-learned"], n.exponents["ssa"], d.exponents["v2-learned"]
    ok = 0.8 <= e_v2 <= 1.2 and 1.8 <= e_ssa <= 2.2 and 0.8 <= e_d <= 1.2 and elapsed < 60
    verdict(7, ok, f"V2 vs N {e_v2:.3f}, SSA vs N {e_ssa:.3f}, V2 vs D {e_d:.3f} in {elapsed:.1f}s")


def test_c08_spike_driven(verdict):
    root, macs, forwards = RngState(0), [], 0
    for i, (t, n, d) in enumerate((t, n, d) for t in (1, 2, 4, 8) for n in (4, 16, 64) for d in (8, 32)):
        c = count_forward("v2-learned", t, n, d, root.stream(i))
        macs.append(c.mac)
        forwards += 1
    ok = all(m == 0 for m in macs)
    verdict(8, ok, f"mac = 0 on {sum(m == 0 for m in macs)}/{forwards} counted forwards")


def test_c09_gradient_checks(verdict):
    errs = grad_checks(instances=20, seed=0, h=1e-5)
    worst = max(errs.values())
    verdict(9, worst < 1e-4, "max rel error " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


@pytest.mark.slow
def test_c10_toy_training(verdict):
    task = ToyTaskSpec()
    oracle = logistic_oracle(task)
    if oracle < 0.95:
        verdict(10, False, f"logistic oracle only {oracle:.3f}; task not separable")
    with threadpool_limits(1):
        res, elapsed = timed(train_toy, task, optim=OptimSpec(epochs=200))
    ok = res.final_test_acc >= 0.9 and elapsed < 300
    verdict(10, ok, f"oracle {oracle:.3f}, test accuracy {res.final_test_acc:.3f} after 200 epochs in {elapsed:.0f}s")


def test_c11_oracle_equivalence(verdict, tmp_path):
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        x, p = random_conv_case(gen)
        worst = max(worst, float(np.abs(conv2d(x, p) - conv2d_naive(x, p)).max()))
    model = train_toy(ToyTaskSpec(samples_per_class=20), optim=OptimSpec(epochs=2)).model
    loaded = load_checkpoint(save_checkpoint(tmp_path / "ckpt.json", model)).model
    x = (RngState(1).generator().random((4, 5, 1, 16, 16)) < 0.3).astype(float)
    identical = model_forward(x, model).tobytes() == model_forward(x, loaded).tobytes()
    verdict(11, worst <= 1e-9 and identical, f"conv max abs diff {worst:.1e} over 50 cases, round-trip forward identical: {identical}")
