"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line, printed under "acceptance
criteria" at the end of the pytest run (or inline with ``-s``).
"""

import dataclasses
import hashlib
import time

import numpy as np
import pytest
from oracles import brute_f1, cmlp_oracle, loop_shd, pairwise_auc

from redcliff.cli import EXIT_OK, main
from redcliff.evaluation import evaluate_graphs, mean_sem, optimal_f1, pairwise_improvement, roc_auc, shd_split
from redcliff.model import Batch, RedcliffModel, lag_weights, loss_f, loss_g, total_loss, windows_to_batch
from redcliff.numerics import nrelu, relu
from redcliff.synth import build_system, complexity_rating, generate_dataset
from redcliff.training import TrainConfig, acclimate_factors, build_model, prepare, pretrain_state, train

# desk-scale trend setup shared by criteria 6-8
TREND_REPEATS = 3
TREND_TRAIN_PER_CLASS = 200
TREND_VAL_PER_CLASS = 50
TREND_INNOV_VAR = 1.0
TREND_MIN_EDGE_WEIGHT = 0.5
RUN_LIMIT_SECONDS = 600.0
ABLATIONS_CHECKED = ("single_factor", "alpha_pinned_one", "lambda_zero")


def random_model(gen, pinned=False, n_k=None, B=None):
    n_c = int(gen.integers(2, 5))
    n_k = n_k or int(gen.integers(2, 4))
    B = int(gen.integers(1, n_k + 1)) if B is None else B
    return RedcliffModel(
        n_c,
        n_k,
        B,
        tau_in=int(gen.integers(1, 4)),
        tau_cl=int(gen.integers(1, 4)),
        gen_hidden=(int(gen.integers(2, 6)),),
        embed_hidden=(int(gen.integers(3, 7)),),
        seed=int(gen.integers(1 << 30)),
        alpha_pinned=pinned,
    )


def random_batch(gen, m, n=4):
    labels = np.eye(max(m.B, 1))[gen.integers(0, max(m.B, 1), size=n)][:, : m.B]
    return Batch(gen.normal(size=(n, m.n_c, m.context)), gen.normal(size=(n, m.n_c)), labels)


def checksum(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.data.tobytes())
    return h.hexdigest()


# -- 1. gradient oracle -----------------------------------------------------------


def test_criterion_01_gradient_oracle(criterion):
    gen = np.random.default_rng(2024)
    h = 1e-5
    started = time.time()
    passed = {"forecast": 0, "alpha": 0, "total": 0}
    counted = dict.fromkeys(passed, 0)
    for _ in range(20):
        m = random_model(gen)
        batch = random_batch(gen, m)
        eta, omega, rho, gamma, lam = gen.uniform(0.1, 2.0, size=5)

        def terms():
            out = m.forward(batch.inputs)
            return {
                "forecast": loss_f(m, batch, eta, omega, rho, out),
                "alpha": loss_g(out.alpha, gamma),
                "total": total_loss(m, batch, eta, omega, rho, gamma, lam, out),
            }

        analytic = {}
        for name in passed:
            m.zero_grad()
            terms()[name].backward()
            analytic[name] = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in m.parameters()]
        for k, p in enumerate(m.parameters()):
            for idx in np.ndindex(p.data.shape):
                old = p.data[idx]
                p.data[idx] = old + h
                up = {n: float(v.data) for n, v in terms().items()}
                p.data[idx] = old - h
                down = {n: float(v.data) for n, v in terms().items()}
                p.data[idx] = old
                for name in passed:
                    a, fd = analytic[name][k][idx], (up[name] - down[name]) / (2 * h)
                    scale = max(abs(a), abs(fd))
                    if scale == 0.0:
                        continue  # the term does not depend on this entry
                    counted[name] += 1
                    passed[name] += abs(a - fd) / scale <= 1e-4
    elapsed = time.time() - started
    rates = {n: passed[n] / counted[n] for n in passed}
    ok = all(r >= 0.95 for r in rates.values()) and elapsed < 60.0
    detail = ", ".join(f"{n} {rates[n]:.4f} of {counted[n]}" for n in rates)
    criterion(1, ok, f"FD agreement {detail}; {elapsed:.1f}s")
    assert ok


# -- 2. reduction to the base model -----------------------------------------------


def base_model_loss(f, inputs, targets, eta):
    """Single cMLP objective: mean squared error plus the lag-weighted group penalty."""
    preds = np.array([cmlp_oracle(f, window[:, -f.tau_in :]) for window in inputs])
    err = sum((p - t) ** 2 for row_p, row_t in zip(preds, targets) for p, t in zip(row_p, row_t)) / targets.size
    penalty = 0.0
    w1 = f.w1.data
    for t in range(f.tau_in):
        for i in range(f.n_c):
            for j in range(f.n_c):
                penalty += np.log(t + 2.0) * np.sqrt(sum(v * v for v in w1[i, :, j, t]))
    return preds, err + eta * penalty


def test_criterion_02_reduction(criterion):
    gen = np.random.default_rng(7)
    worst_forecast = worst_loss = 0.0
    for _ in range(20):
        m = random_model(gen, pinned=True, n_k=1, B=0)
        batch = random_batch(gen, m, n=6)
        eta = float(gen.uniform(0.01, 1.0))
        preds, loss = base_model_loss(m.factors[0], batch.inputs, batch.targets, eta)
        x_hat = m.forward(batch.inputs).x_hat.data
        got = float(loss_f(m, batch, eta, 1.0, float(gen.uniform(0, 1))).data)
        worst_forecast = max(worst_forecast, float(np.max(np.abs(x_hat - preds))))
        worst_loss = max(worst_loss, abs(got - loss))
    assert np.allclose(lag_weights(3), np.log([2.0, 3.0, 4.0]))
    ok = worst_forecast <= 1e-12 and worst_loss <= 1e-12
    criterion(2, ok, f"max forecast diff {worst_forecast:.2e}, max loss diff {worst_loss:.2e}")
    assert ok


# -- 3. complexity categories -----------------------------------------------------


def test_criterion_03_complexity(criterion):
    expected = {(6, 2): (15.0, "High"), (12, 11): (12.0, "Moderate"), (12, 33): (4.0, "Low")}
    got = {k: complexity_rating(*k) for k in expected}
    ok = got == expected
    criterion(3, ok, "; ".join(f"{k} -> {v[0]} {v[1]}" for k, v in got.items()))
    assert ok


# -- 4. identifiability invariant -------------------------------------------------


def test_criterion_04_identifiability(criterion):
    gen = np.random.default_rng(4)
    a = gen.normal(scale=10.0, size=10_000)
    b = gen.normal(scale=10.0, size=10_000)
    a[:100] = 0.0
    # the mirrored source -a reaches B through nrelu with a sign-flipped edge weight
    matches = sum(relu(x) + y == -nrelu(-x) + y for x, y in zip(a, b))
    ok = matches == a.size
    criterion(4, ok, f"relu(a)+b == -nrelu(-a)+b on {matches}/{a.size} pairs")
    assert ok


# -- 5. metric oracles ------------------------------------------------------------


def test_criterion_05_metric_oracles(criterion):
    gen = np.random.default_rng(5)
    started = time.time()
    worst_f1 = worst_auc = 0.0
    shd_ok = 0
    for _ in range(200):
        n = int(gen.integers(2, 13))
        scores = gen.integers(0, 5, size=n) / 4.0 if gen.random() < 0.5 else gen.normal(size=n)
        labels = gen.integers(0, 2, size=n)
        labels[0], labels[-1] = 1, 0
        worst_f1 = max(worst_f1, abs(optimal_f1(scores, labels)[0] - brute_f1(scores, labels)))
        worst_auc = max(worst_auc, abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)))
        nodes = int(gen.integers(1, 13))
        p, t = gen.integers(0, 2, size=(nodes, nodes)), gen.integers(0, 2, size=(nodes, nodes))
        shd_ok += shd_split(p, t) == loop_shd(p, t)
    elapsed = time.time() - started
    ok = worst_f1 <= 1e-12 and worst_auc <= 1e-12 and shd_ok == 200 and elapsed < 60.0
    criterion(5, ok, f"F1 max err {worst_f1:.1e}, AUC max err {worst_auc:.1e}, SHD {shd_ok}/200 exact; {elapsed:.1f}s")
    assert ok


# -- 6-8. desk-scale trend --------------------------------------------------------


def trend_run(rep, ablation=None):
    spec = build_system(
        6, 2, 2, seed=100 + rep, innov_var=TREND_INNOV_VAR, min_edge_weight=TREND_MIN_EDGE_WEIGHT
    )
    train_ds = generate_dataset(spec, TREND_TRAIN_PER_CLASS, seed=200 + rep)
    val_ds = generate_dataset(spec, TREND_VAL_PER_CLASS, seed=300 + rep)
    base = TrainConfig(n_k=2, seed=rep)
    if ablation:
        base = dataclasses.replace(base, **{ablation: True})
    cfg = prepare(base, spec.n_c, 2)
    m = build_model(cfg, spec.n_c)
    data = windows_to_batch(train_ds, m.context, cfg.forecast_steps)
    val = windows_to_batch(val_ds, m.context, cfg.forecast_steps)
    started = time.time()
    train(m, data, val, cfg)
    elapsed = time.time() - started
    rows = evaluate_graphs(m.graphs(), spec.true_graphs(), supervised=cfg.B)
    return {(rep, r["factor"]): r for r in rows}, elapsed


@pytest.fixture(scope="module")
def trend():
    results = {}
    for method in ("full",) + ABLATIONS_CHECKED + ("rho_zero",):
        rows, times = {}, []
        for rep in range(TREND_REPEATS):
            r, elapsed = trend_run(rep, None if method == "full" else method)
            rows.update(r)
            times.append(elapsed)
        results[method] = {"rows": rows, "times": times}
    return results


def f1_by_key(trend, method):
    return {k: r["f1"] for k, r in trend[method]["rows"].items()}


@pytest.mark.slow
def test_criterion_06_factor_improvement(trend, criterion):
    mean, sem = pairwise_improvement(f1_by_key(trend, "full"), f1_by_key(trend, "single_factor"))
    slowest = max(max(v["times"]) for v in trend.values())
    ok = mean > 0 and mean > sem and slowest <= RUN_LIMIT_SECONDS
    criterion(6, ok, f"full - single_factor F1 = {mean:+.4f} +/- {sem:.4f} (SEM); slowest run {slowest:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_07_auc_bar(trend, criterion):
    aucs = [r["roc_auc"] for r in trend["full"]["rows"].values()]
    mean, sem = mean_sem(aucs)
    ok = mean >= 0.60
    criterion(7, ok, f"full mean ROC-AUC {mean:.4f} +/- {sem:.4f} (bar 0.60)")
    assert ok


@pytest.mark.slow
def test_criterion_08_ablation_direction(trend, criterion):
    full, _ = mean_sem(list(f1_by_key(trend, "full").values()))
    means = {m: mean_sem(list(f1_by_key(trend, m).values()))[0] for m in ABLATIONS_CHECKED + ("rho_zero",)}
    ok = all(means[m] <= full for m in ABLATIONS_CHECKED)
    parts = ", ".join(f"{m} {means[m]:.4f}" for m in ABLATIONS_CHECKED)
    criterion(8, ok, f"mean F1 full {full:.4f}; {parts}; rho_zero {means['rho_zero']:.4f} (reported only)")
    assert ok


# -- 9. phase isolation -----------------------------------------------------------


def test_criterion_09_phase_isolation(criterion):
    spec = build_system(4, 2, 2, seed=9, innov_var=1.0, min_edge_weight=0.5)
    ds = generate_dataset(spec, 20, seed=1, T_window=40)
    cfg = prepare(TrainConfig(n_k=2, tau_in=2, tau_cl=4, gen_hidden=(5,), embed_hidden=(8,), batch_size=16), 4, 2)
    m = build_model(cfg, 4)
    data = windows_to_batch(ds, m.context, cfg.forecast_steps)
    factors, state = checksum(m.factor_parameters()), checksum(m.state_parameters())
    pretrain_state(m, data, cfg, epochs=5)
    pre_ok = checksum(m.factor_parameters()) == factors and checksum(m.state_parameters()) != state
    factors, state = checksum(m.factor_parameters()), checksum(m.state_parameters())
    acclimate_factors(m, data, cfg, epochs=5)
    acc_ok = checksum(m.state_parameters()) == state and checksum(m.factor_parameters()) != factors
    ok = pre_ok and acc_ok
    criterion(9, ok, f"pretraining kept factors: {pre_ok}; acclimation kept state: {acc_ok}")
    assert ok


# -- 10. determinism --------------------------------------------------------------


def pipeline(root, cfg_path):
    data, run, ev = root / "data", root / "run", root / "eval"
    gen = ["gen-synth", "--n-c", "4", "--n-e", "2", "--n-k", "2", "--repeats", "1", "--seed", "3", "--out", str(data)]
    gen += ["--train-per-class", "10", "--val-per-class", "4", "--t-window", "40", "--innov-var", "1"]
    codes = [main(gen)]
    codes.append(main(["train", "--data", str(data / "repeat_0"), "--config", str(cfg_path), "--out", str(run)]))
    codes.append(main(["eval", "--model", str(run), "--truth", str(data / "repeat_0"), "--out", str(ev)]))
    assert codes == [EXIT_OK] * 3
    return (ev / "report.csv").read_bytes()


def test_criterion_10_determinism(tmp_path, criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        '{"tau_in": 2, "tau_cl": 4, "gen_hidden": [5], "embed_hidden": [8], "batch_size": 16,'
        ' "max_iter": 5, "pretrain_epochs": 3, "acclimation_epochs": 3, "seed": 11}'
    )
    first, second = pipeline(tmp_path / "a", cfg), pipeline(tmp_path / "b", cfg)
    ok = first == second
    criterion(10, ok, f"report.csv identical across runs: {ok} ({len(first)} bytes)")
    assert ok
