"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the summary lines appear at
the end of the session) or directly with ``python3 tests/test_acceptance.py``.
"""
import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

sys.path.insert(0, str(Path(__file__).parent))
from oracle import joint_log_probs  # noqa: E402

from dynef import _rng  # noqa: E402
from dynef.basis import custom_bank, raised_cosine_bank  # noqa: E402
from dynef.cli import main as cli_main  # noqa: E402
from dynef.graph import GraphPair  # noqa: E402
from dynef.inference import GibbsConfig, exact_node_marginal, exact_pair_marginal, gibbs_expectations  # noqa: E402
from dynef.learning import (  # noqa: E402
    Prior,
    TrainConfig,
    evaluate_log_likelihood,
    gradient_check,
    init_params,
    train_bayes,
    train_ml,
)
from dynef.model import ModelParams, TimeSeries, component_log_probs, component_tables, sample_sequence  # noqa: E402
from dynef.tasks import (  # noqa: E402
    TwoLayerSpec,
    augment_rotations,
    build_two_layer_graphs,
    encode_dataset,
    evaluate_accuracy,
    synthetic_digits,
)

RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)


def random_graph(rng, N, lateral):
    causal = [(j, i) for j in range(N) for i in range(N) if rng.random() < 0.5]
    lat = []
    if lateral:
        pairs = list(itertools.combinations(range(N), 2))
        lat = [pairs[k] for k in rng.permutation(len(pairs))[: rng.integers(1, len(pairs) + 1)]]
    return GraphPair.from_edges(N, causal, lat)


def random_model(rng, lateral):
    N = int(rng.integers(2, 5))
    C = int(rng.choice([2, 3]))
    tau = int(rng.integers(1, 4))
    K = int(rng.integers(1, min(2, tau) + 1))
    bank = raised_cosine_bank(K, tau) if rng.random() < 0.5 else custom_bank(rng.random((K, tau)))
    g = random_graph(rng, N, lateral)
    p = ModelParams.zeros(g, C, K)
    for a in (p.theta, p.V, p.U):
        a[...] = rng.normal(0.0, 1.0, a.shape)
    return g, bank, p


# --------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, n_models = 0.0, 24
    for m in range(n_models):
        g, bank, p = random_model(rng, lateral=m % 2 == 0)
        T = int(rng.integers(1, 6))
        x = TimeSeries(rng.integers(0, p.C, (g.n_units, T)), p.C)
        errs = gradient_check(x, p, g, bank, h=1e-5)
        worst = max(worst, max(errs.values()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 60
    report(1, ok, f"{n_models} models, max relative error {worst:.2e} (< 1e-5), {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_2_normalization_and_factorization():
    rng = np.random.default_rng(7)
    worst_norm = worst_fact = 0.0
    for _ in range(12):
        g, _, p = random_model(rng, lateral=True)
        N, C = g.n_units, p.C
        r = rng.normal(0.0, 2.0, (N, C - 1))
        oracle = joint_log_probs(r, p, g.lateral.edges, N, C)
        tables = component_tables(g.lateral, C)
        # each component's conditional sums to one when only its units vary
        base = np.zeros(N, dtype=int)
        for c, tab in enumerate(tables):
            total = 0.0
            for cfg in itertools.product(range(C), repeat=tab.size):
                x = base.copy()
                x[tab.members] = cfg
                total += math.exp(component_log_probs(x, r, p, g.lateral)[c])
            worst_norm = max(worst_norm, abs(total - 1.0))
        # the brute-force joint over all units equals the product over components
        for x, lp in oracle.items():
            prod = float(np.prod(np.exp(component_log_probs(x, r, p, g.lateral))))
            worst_fact = max(worst_fact, abs(math.exp(lp) - prod))
    ok = worst_norm < 1e-9 and worst_fact < 1e-12
    report(2, ok, f"normalization error {worst_norm:.1e} (< 1e-9), factorization error {worst_fact:.1e} (< 1e-12)")
    assert ok


def test_criterion_3_marginal_oracle():
    rng = np.random.default_rng(11)
    worst = worst_consistency = 0.0
    for _ in range(12):
        g, _, p = random_model(rng, lateral=True)
        N, C = g.n_units, p.C
        r = rng.normal(0.0, 2.0, (N, C - 1))
        table = joint_log_probs(r, p, g.lateral.edges, N, C)
        for i in range(N):
            expected = np.zeros(C)
            for x, lp in table.items():
                expected[x[i]] += math.exp(lp)
            worst = max(worst, np.abs(exact_node_marginal(i, r, p, g.lateral) - expected).max())
        for a, b in g.lateral.edges:
            expected = np.zeros((C, C))
            for x, lp in table.items():
                expected[x[a], x[b]] += math.exp(lp)
            pair = exact_pair_marginal((a, b), r, p, g.lateral)
            worst = max(worst, np.abs(pair - expected).max())
            worst_consistency = max(
                worst_consistency,
                np.abs(pair.sum(axis=1) - exact_node_marginal(a, r, p, g.lateral)).max(),
                np.abs(pair.sum(axis=0) - exact_node_marginal(b, r, p, g.lateral)).max(),
            )
    ok = worst < 1e-12 and worst_consistency < 1e-12
    report(3, ok, f"max marginal error {worst:.1e}, pair/node consistency {worst_consistency:.1e} (< 1e-12)")
    assert ok


def test_criterion_4_gibbs_convergence():
    g = GraphPair.from_edges(2, [], [(0, 1)])
    p = ModelParams.zeros(g, 2, 1)
    p.U[0] = math.log(2.0)
    t0 = time.perf_counter()
    ex = gibbs_expectations([0, 1], np.zeros((2, 1)), p, g.lateral,
                            GibbsConfig(n_samples=50_000, burn_in=1_000, seed=0))
    elapsed = time.perf_counter() - t0
    est = float(ex.pair[0, 0, 0])
    ok = abs(est - 0.4) <= 0.02 and elapsed < 10
    report(4, ok, f"E[x0 x1] = {est:.4f} vs 0.4 (tol 0.02), {elapsed:.2f}s")
    assert ok


def test_criterion_5_sgld_posterior():
    g = GraphPair.from_edges(1)
    bank = custom_bank([[1.0]])
    data = [TimeSeries(np.array([[1]]))] * 14 + [TimeSeries(np.array([[0]]))] * 6
    prior = Prior("gaussian_mixture", (0.0,), 1.0, (1.0,))       # N(0, 1)
    n_chains, burn_in, stride, per_chain = 2000, 15_000, 50, 50
    cfg = TrainConfig(lr=1e-4, epochs=1, seed=0, neg_phase="exact", prior=prior, burn_in=burn_in,
                      snapshot_stride=stride, updates_per_epoch=burn_in + stride * per_chain)
    t0 = time.perf_counter()
    res = train_bayes(data, g, bank, cfg, n_chains=n_chains)
    elapsed = time.perf_counter() - t0
    samples = res.samples[..., 0].ravel()

    # posterior by numerical integration on a fine grid
    grid = np.linspace(-8.0, 10.0, 40_001)
    log_post = -0.5 * grid ** 2 - 14 * np.logaddexp(0.0, -grid) - 6 * np.logaddexp(0.0, grid)
    dens = np.exp(log_post - log_post.max())
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    ks = stats.kstest(samples, lambda v: np.interp(v, grid, cdf)).statistic
    ok = samples.size >= 100_000 and ks < 0.05 and elapsed < 120
    report(5, ok, f"{samples.size} samples ({n_chains} chains), KS distance {ks:.4f} (< 0.05), {elapsed:.1f}s")
    assert ok


def test_criterion_6_model_recovery():
    N, seed = 4, 0
    causal = [(i, i) for i in range(N)] + [(i, (i + 1) % N) for i in range(N)]
    g = GraphPair.from_edges(N, causal, [(0, 1)])
    bank = raised_cosine_bank(2, 5)
    truth = init_params(g, 2, bank.K, TrainConfig(seed=seed))
    truth.theta[...] = -2.0 + 0.5 * truth.theta         # sparse firing, rate about 0.14
    train = [sample_sequence(truth, g, bank, 50, _rng.child_seed(seed, "train", k)) for k in range(200)]
    test = [sample_sequence(truth, g, bank, 50, _rng.child_seed(seed, "test", k)) for k in range(200)]
    t0 = time.perf_counter()
    res = train_ml(train, g, bank, TrainConfig(lr=0.05, epochs=500, seed=seed + 1, neg_phase="exact"))
    elapsed = time.perf_counter() - t0
    ll_true = evaluate_log_likelihood(test, truth, g, bank)
    ll_fit = evaluate_log_likelihood(test, res.params, g, bank)
    gap = abs(ll_fit - ll_true) / abs(ll_true)
    ok = gap <= 0.05 and elapsed < 300
    report(6, ok, f"held-out loglik {ll_fit:.3f} vs truth {ll_true:.3f}, gap {100 * gap:.2f}% (<= 5%), "
                  f"{elapsed:.0f}s (< 300s)")
    assert ok


def _task_run(seed: int, lateral: bool):
    spec = TwoLayerSpec(64, (("digit", 2), ("orientation", 2)), T=40, label_phase=4)
    bank = raised_cosine_bank(2, 4)
    train = augment_rotations(synthetic_digits(20, 8, seed=seed), seed=seed)
    test = augment_rotations(synthetic_digits(50, 8, seed=seed + 1000), seed=seed + 1000)
    g = build_two_layer_graphs(spec, lateral=lateral)
    data = encode_dataset(train, spec, seed)
    res = train_ml(data, g, bank, TrainConfig(lr=0.05, epochs=100, seed=seed, neg_phase="exact"))
    return evaluate_accuracy(res.params, g, bank, test, spec, seed)


def test_criterion_7_lateral_vs_no_lateral():
    t0 = time.perf_counter()
    acc = {True: [], False: []}
    for seed in range(5):
        for lateral in (True, False):
            a = _task_run(seed, lateral)
            acc[lateral].append([a["digit"], a["orientation"]])
    elapsed = time.perf_counter() - t0
    lat, nolat = np.mean(acc[True], axis=0), np.mean(acc[False], axis=0)
    diff = np.array(acc[True]) - np.array(acc[False])          # paired by seed
    se = diff.std(axis=0, ddof=1) / math.sqrt(len(diff))
    ok_order = bool(np.all(lat >= nolat))
    ok_chance = bool(np.all(lat >= 0.65) and np.all(nolat >= 0.65))
    ok = ok_order and ok_chance and elapsed < 600
    report(7, ok, f"lateral digit/orientation {lat[0]:.3f}/{lat[1]:.3f}, "
                  f"no-lateral {nolat[0]:.3f}/{nolat[1]:.3f}, paired difference "
                  f"{diff.mean(axis=0)[0]:+.3f}±{se[0]:.3f}/{diff.mean(axis=0)[1]:+.3f}±{se[1]:.3f} "
                  f"(lateral >= no-lateral: {ok_order}; both >= 0.65: {ok_chance}), {elapsed:.0f}s (< 600s)")
    assert ok


def test_criterion_8_prior_effect():
    spec = TwoLayerSpec(64, T=40, label_phase=4)
    bank = raised_cosine_bank(2, 4)
    data = encode_dataset(augment_rotations(synthetic_digits(10, 8, seed=0), seed=0), spec, 0)
    g = build_two_layer_graphs(spec)
    epochs = 150
    total = epochs * len(data)
    t0 = time.perf_counter()
    weights = {}
    for name, prior in (("bimodal", Prior("gaussian_mixture", (0.0, -1.0), 0.15, (0.5, 0.5))),
                        ("uniform", Prior("uniform"))):
        cfg = TrainConfig(lr=0.000625, epochs=epochs, seed=1, neg_phase="exact", prior=prior,
                          burn_in=total // 2, snapshot_stride=10)
        weights[name] = train_bayes(data, g, bank, cfg).sample_params().V.ravel()
    elapsed = time.perf_counter() - t0
    w = weights["bimodal"]
    sigma = 0.15
    near = float(np.mean((np.abs(w) <= 3 * sigma) | (np.abs(w + 1.0) <= 3 * sigma)))
    # bimodality: density near each mode exceeds the density at the midpoint
    dens = [np.mean(np.abs(w - c) <= 0.05) for c in (0.0, -0.5, -1.0)]
    bimodal = dens[0] > dens[1] and dens[2] > dens[1]
    std_b, std_u = float(w.std()), float(weights["uniform"].std())
    ok = near >= 0.6 and bimodal and std_u > std_b and elapsed < 600
    report(8, ok, f"mass within 3 sigma of a mode {near:.3f} (>= 0.6), densities at 0/-0.5/-1 "
                  f"{dens[0]:.3f}/{dens[1]:.3f}/{dens[2]:.3f}, std bimodal {std_b:.3f} < uniform {std_u:.3f}, "
                  f"{elapsed:.0f}s")
    assert ok


def test_criterion_9_determinism(tmp_path):
    cfg = {
        "seed": 42,
        "alphabet": 3,
        "graphs": {"n_units": 3, "causal": [[0, 1], [1, 2], [2, 0], [1, 1]], "lateral": [[0, 2]]},
        "basis": {"kind": "raised_cosine", "K": 2, "tau": 4},
        "train": {"lr": 0.05, "epochs": 5, "neg_phase": "exact"},
        "data": {"synthetic": {"n_train": 10, "T": 8}},
    }
    blobs = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.json"
        path.write_text(json.dumps(dict(cfg, output_dir=str(tmp_path / run))))
        assert cli_main(["train-ml", str(path)]) == 0
        blobs.append((tmp_path / run / "checkpoint.json").read_bytes())
    ok = blobs[0] == blobs[1]
    report(9, ok, f"checkpoints byte-identical: {ok} ({len(blobs[0])} bytes)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
