"""Likelihood gradients, maximum-likelihood SGD and SGLD sampling.

Gradients are sums over time (not averages) of the per-step exponential
family gradient: observed statistics minus their expectation under the
step conditional. The negative phase comes from :mod:`dynef.inference`.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import _rng
from .basis import BasisBank
from .graph import GraphPair
from .inference import GibbsConfig, negative_phase
from .model import (
    ComponentTooLarge,
    ModelParams,
    SequenceData,
    TimeSeries,
    data_log_likelihood,
    sequence_log_likelihood,
    sequence_potentials,
)

log = logging.getLogger(__name__)

GradientBundle = ModelParams


@dataclass(frozen=True)
class Prior:
    """Parameter prior: improper flat, or a Gaussian mixture per coordinate."""

    kind: str = "uniform"
    means: tuple[float, ...] = (0.0, -1.0)
    std: float = 0.15
    weights: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian_mixture"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            if self.std <= 0:
                raise ValueError("mixture std must be positive")
            if len(self.means) != len(self.weights) or not self.means:
                raise ValueError("mixture needs one weight per mean")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must be positive and sum to 1")

    def _log_terms(self, w: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.means, dtype=float)
        var = self.std ** 2
        return (np.log(np.asarray(self.weights, dtype=float))
                - (w[..., None] - mu) ** 2 / (2 * var)
                - 0.5 * np.log(2 * np.pi * var))

    def log_density(self, w: np.ndarray) -> np.ndarray:
        """Elementwise log density (0 for the flat prior)."""
        w = np.asarray(w, dtype=float)
        if self.kind == "uniform":
            return np.zeros_like(w)
        return logsumexp(self._log_terms(w), axis=-1)

    def grad(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.kind == "uniform":
            return np.zeros_like(w)
        gamma = softmax(self._log_terms(w), axis=-1)
        mu = np.asarray(self.means, dtype=float)
        return np.sum(gamma * (mu - w[..., None]), axis=-1) / self.std ** 2


def log_prior(params: ModelParams, prior: Prior) -> np.ndarray:
    return prior.log_density(params.flat()).sum(axis=-1)


def log_prior_grad(params: ModelParams, prior: Prior) -> GradientBundle:
    return ModelParams(prior.grad(params.theta), prior.grad(params.V), prior.grad(params.U))


# ---------------------------------------------------------------------------
# gradients


def value_and_grad(data: SequenceData, params: ModelParams, graphs: GraphPair,
                   neg_phase: str = "exact", gibbs: GibbsConfig | None = None,
                   index: int = 0) -> tuple[np.ndarray | None, GradientBundle]:
    """Log-likelihood and its gradient for precomputed sequence data.

    ``data`` may carry leading axes: either matching the params' batch shape
    (one sequence per chain) or extra axes that are summed over. The returned
    log-likelihood keeps those leading axes and is ``None`` whenever some
    component went through Gibbs sampling.
    """
    nb = len(params.batch_shape)
    R = sequence_potentials(data, params, graphs)
    n_extra = R.ndim - 2 - nb
    ph = negative_phase(R, params, graphs.lateral, neg_phase, gibbs, index=index,
                        n_extra=n_extra, codes=data.codes, S_obs=data.S)
    sum_axes = tuple(range(nb, nb + n_extra))  # extra axes + time

    D = data.S - ph.node
    d_theta = D.sum(axis=sum_axes)

    causal = graphs.causal
    if len(causal):
        a_src = data.alpha_prev[..., causal.src, :, :]
        d_dst = D[..., causal.dst, :]
        d_V = np.einsum("...eka,...eb->...ekab", a_src, d_dst)
        d_V = d_V.sum(axis=sum_axes)
    else:
        d_V = np.zeros_like(params.V)

    lateral = graphs.lateral
    if len(lateral):
        la = np.array([e[0] for e in lateral.edges], dtype=np.intp)
        lb = np.array([e[1] for e in lateral.edges], dtype=np.intp)
        pos = data.S[..., la, :, None] * data.S[..., lb, None, :]
        d_U = (pos - ph.pair).sum(axis=sum_axes)
    else:
        d_U = np.zeros_like(params.U)

    shape = params.batch_shape
    grad = ModelParams(np.broadcast_to(d_theta, shape + d_theta.shape[-2:]).copy(),
                       d_V.reshape(params.V.shape), d_U.reshape(params.U.shape))
    loglik = None if ph.loglik is None else ph.loglik.sum(axis=-1)
    return loglik, grad


def grad_log_likelihood(x: TimeSeries, params: ModelParams, graphs: GraphPair, bank: BasisBank,
                        neg_phase: str = "exact", gibbs: GibbsConfig | None = None,
                        index: int = 0) -> GradientBundle:
    """Gradient of ``sum_t log p(x_t | r_t)`` with respect to theta, V and U."""
    params.check(graphs, bank.K)
    if x.T == 0:
        return ModelParams(np.zeros_like(params.theta), np.zeros_like(params.V), np.zeros_like(params.U))
    _, grad = value_and_grad(SequenceData.build(x, graphs, bank), params, graphs, neg_phase, gibbs, index)
    return grad


def finite_difference_grad(f, params: ModelParams, h: float = 1e-5) -> GradientBundle:
    """Central differences of scalar ``f(params)`` on every coordinate."""
    base = params.flat()
    g = np.zeros_like(base)
    for k in range(base.size):
        v = base.copy()
        v[k] = base[k] + h
        fp = f(params.with_flat(v))
        v[k] = base[k] - h
        fm = f(params.with_flat(v))
        g[k] = (fp - fm) / (2 * h)
    return params.with_flat(g)


def relative_error(a, b, floor: float = 1e-3) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps ~0 gradients absolute."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(x: TimeSeries, params: ModelParams, graphs: GraphPair, bank: BasisBank,
                   h: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter block between analytic and numeric gradients."""
    analytic = grad_log_likelihood(x, params, graphs, bank, neg_phase="exact")
    numeric = finite_difference_grad(lambda p: sequence_log_likelihood(x, p, graphs, bank), params, h)
    out = {}
    for name, a in analytic.blocks().items():
        n = numeric.blocks()[name]
        out[name] = float(relative_error(a, n).max()) if a.size else 0.0
    return out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 1
    seed: int = 0
    neg_phase: str = "auto"
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    init_range: tuple[float, float] = (-1.0, 1.0)
    lateral_init_range: tuple[float, float] = (-2.0, 2.0)
    # Bayesian only
    prior: Prior = field(default_factory=Prior)
    dataset_size: int | None = None     # |D| scaling, defaults to len(dataset)
    snapshot_stride: int = 10
    burn_in: int | None = None          # in updates; default 10% of the run
    updates_per_epoch: int | None = None  # defaults to len(dataset)
    noise: bool = True

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


def init_params(graphs: GraphPair, C: int, K: int, cfg: TrainConfig, batch=()) -> ModelParams:
    """Uniform random initialization, seeded from ``cfg.seed``."""
    rng = _rng.stream(cfg.seed, "init")
    p = ModelParams.zeros(graphs, C, K, batch)
    lo, hi = cfg.init_range
    p.theta[...] = rng.uniform(lo, hi, p.theta.shape)
    p.V[...] = rng.uniform(lo, hi, p.V.shape)
    lo, hi = cfg.lateral_init_range
    p.U[...] = rng.uniform(lo, hi, p.U.shape)
    return p


@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[dict]


@dataclass
class BayesResult:
    params: ModelParams          # final state
    samples: np.ndarray          # (n_snapshots, *chains, n_params) flat parameter vectors
    sample_steps: list[int]
    metrics: list[dict]

    def sample_params(self) -> ModelParams:
        """Snapshots as batched params with a leading snapshot axis."""
        return self.params.with_flat(self.samples)


def _prepare(dataset, graphs, bank):
    if not dataset:
        raise ValueError("training needs a nonempty dataset")
    datas = [SequenceData.build(x, graphs, bank) for x in dataset]
    stacked = SequenceData.stack(datas) if len({d.T for d in datas}) == 1 else None
    return datas, stacked


def evaluate_log_likelihood(dataset, params: ModelParams, graphs: GraphPair, bank: BasisBank,
                            units=None, datas=None) -> float:
    """Mean per-sequence log-likelihood; NaN if some component is too large."""
    if not dataset and not datas:
        return math.nan
    if datas is None:
        datas, _ = _prepare(dataset, graphs, bank)
    try:
        return float(np.mean([data_log_likelihood(d, params, graphs, units) for d in datas]))
    except ComponentTooLarge:
        return math.nan


def _mean_or_nan(xs):
    return float(np.mean(xs)) if xs and not any(v is None for v in xs) else math.nan


def train_ml(dataset: list[TimeSeries], graphs: GraphPair, bank: BasisBank, cfg: TrainConfig,
             test: list[TimeSeries] | None = None, params: ModelParams | None = None,
             loglik_units=None, callback=None) -> TrainResult:
    """Stochastic gradient ascent, one uniformly drawn sequence per update.

    An epoch is ``updates_per_epoch`` updates (default: dataset size). The
    reported ``train_loglik`` averages the drawn sequences' log-likelihoods,
    each evaluated just before its own update.
    """
    datas, _ = _prepare(dataset, graphs, bank)
    test_datas = _prepare(test, graphs, bank)[0] if test else None
    C = dataset[0].C
    params = init_params(graphs, C, bank.K, cfg) if params is None else params.copy()
    params.check(graphs, bank.K)
    draw = _rng.stream(cfg.seed, "draw")
    per_epoch = cfg.updates_per_epoch or len(datas)
    metrics = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lls = []
        for _ in range(per_epoch):
            d = datas[int(draw.integers(len(datas)))]
            if d.T:
                ll, g = value_and_grad(d, params, graphs, cfg.neg_phase, cfg.gibbs, index=step)
                if loglik_units is not None and ll is not None:
                    ll = data_log_likelihood(d, params, graphs, loglik_units)
                lls.append(None if ll is None else float(ll))
                params.theta += cfg.lr * g.theta
                params.V += cfg.lr * g.V
                params.U += cfg.lr * g.U
            step += 1
        row = {
            "epoch": epoch,
            "train_loglik": _mean_or_nan(lls),
            "test_loglik": (evaluate_log_likelihood(test, params, graphs, bank, loglik_units, test_datas)
                            if test else math.nan),
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        metrics.append(row)
        log.debug("epoch %d train %.4f test %.4f", epoch, row["train_loglik"], row["test_loglik"])
        if callback is not None:
            callback(epoch, params, row)
    return TrainResult(params, metrics)


def train_bayes(dataset: list[TimeSeries], graphs: GraphPair, bank: BasisBank, cfg: TrainConfig,
                test: list[TimeSeries] | None = None, params: ModelParams | None = None,
                n_chains: int = 1, loglik_units=None, callback=None) -> BayesResult:
    """Stochastic gradient Langevin dynamics.

    Each update draws one sequence per chain and applies
    ``theta += lr * (grad log prior + |D| * grad log lik) + sqrt(2 lr) * noise``.
    After ``burn_in`` updates a snapshot is kept every ``snapshot_stride``
    updates. ``n_chains > 1`` runs independent chains in lockstep (their
    sequences must share one length).
    """
    datas, stacked = _prepare(dataset, graphs, bank)
    test_datas = _prepare(test, graphs, bank)[0] if test else None
    C = dataset[0].C
    batch = () if n_chains == 1 else (n_chains,)
    if batch and stacked is None:
        raise ValueError("parallel chains need training sequences of equal length")
    if params is None:
        params = init_params(graphs, C, bank.K, cfg, batch)
    else:
        params = ModelParams(*(np.broadcast_to(a, batch + a.shape[len(params.batch_shape):]).copy()
                               for a in (params.theta, params.V, params.U)))
    params.check(graphs, bank.K)
    n_data = cfg.dataset_size or len(datas)
    per_epoch = cfg.updates_per_epoch or len(datas)
    total = cfg.epochs * per_epoch
    burn_in = int(0.1 * total) if cfg.burn_in is None else cfg.burn_in
    draw = _rng.stream(cfg.seed, "draw")
    noise_rng = _rng.stream(cfg.seed, "langevin")
    noise_scale = math.sqrt(2.0 * cfg.lr) if cfg.noise else 0.0

    samples, steps, metrics = [], [], []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lls = []
        for _ in range(per_epoch):
            if batch:
                d = stacked.take(draw.integers(len(datas), size=n_chains))
            else:
                d = datas[int(draw.integers(len(datas)))]
            ll, g = value_and_grad(d, params, graphs, cfg.neg_phase, cfg.gibbs, index=step)
            if loglik_units is not None and ll is not None:
                ll = data_log_likelihood(d, params, graphs, loglik_units)
            lls.append(None if ll is None else float(np.mean(ll)))
            gp = log_prior_grad(params, cfg.prior)
            for name in ("theta", "V", "U"):
                a = getattr(params, name)
                a += cfg.lr * (getattr(gp, name) + n_data * getattr(g, name))
                if noise_scale:
                    a += noise_scale * noise_rng.standard_normal(a.shape)
            step += 1
            if step > burn_in and (step - burn_in) % cfg.snapshot_stride == 0:
                samples.append(params.flat())
                steps.append(step)
        row = {
            "epoch": epoch,
            "train_loglik": _mean_or_nan(lls),
            "test_loglik": math.nan,
            "wall_ms": 0.0,
        }
        if test and not batch:
            row["test_loglik"] = evaluate_log_likelihood(test, params, graphs, bank, loglik_units, test_datas)
        row["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        metrics.append(row)
        if callback is not None:
            callback(epoch, params, row)
    flat_shape = params.flat().shape
    arr = np.stack(samples) if samples else np.zeros((0,) + flat_shape)
    return BayesResult(params, arr, steps, metrics)
