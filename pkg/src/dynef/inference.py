"""Negative-phase expectations of the per-step conditional.

For each lateral component the node moments ``E[s_i | r_t]`` and the edge
moments ``E[s_a s_b^T | r_t]`` are computed either exactly, by enumerating
the component's joint configurations, or by systematic-scan Gibbs sampling.
Units without lateral neighbours have a closed form (softmax over
``[0, r_i]``) and are handled together in one vectorized pass.

All routines accept potentials with arbitrary leading axes (time, chains),
which is how training evaluates a whole sequence at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import _rng
from .graph import GraphPair, LateralGraph
from .model import (
    ComponentTable,
    ComponentTooLarge,
    ENUM_BUDGET,
    ModelParams,
    _insert_axes,
    _require_exact,
    component_tables,
)

MODES = ("exact", "gibbs", "auto")


@dataclass(frozen=True)
class GibbsConfig:
    n_samples: int = 2000
    burn_in: int = 200
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class StepExpectations:
    node: np.ndarray      # (..., N, Na)
    pair: np.ndarray      # (..., E_lateral, Na, Na)
    methods: tuple[str, ...] = ()   # one tag per lateral component
    loglik: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# exact


def _component_probs(tab: ComponentTable, R, U, n_extra=0):
    E = tab.energies(R, U, n_extra)
    return softmax(E, axis=-1), E


def _moments_from_probs(tab: ComponentTable, P: np.ndarray):
    cm, m, na = tab.stats.shape
    node = (P @ tab.stats.reshape(cm, m * na)).reshape(P.shape[:-1] + (m, na))
    pairs = []
    for a, b in zip(tab.local_a, tab.local_b):
        outer = (tab.stats[:, a, :, None] * tab.stats[:, b, None, :]).reshape(cm, na * na)
        pairs.append((P @ outer).reshape(P.shape[:-1] + (na, na)))
    return node, pairs


def _table_for_unit(lateral: LateralGraph, C: int, i: int) -> ComponentTable:
    cid = lateral.reach.component_of[i]
    return component_tables(lateral, C)[cid]


def exact_node_marginal(i: int, r_t, params: ModelParams, lateral: LateralGraph) -> np.ndarray:
    """``p(x_i = c | r_t)`` for ``c = 0..C-1`` by summing out the rest of i's component."""
    C = params.C
    tab = _table_for_unit(lateral, C, int(i))
    _require_exact(tab, C)
    P, _ = _component_probs(tab, np.asarray(r_t, dtype=float), params.U)
    local = int(np.flatnonzero(tab.members == i)[0])
    return np.bincount(tab.configs[:, local], weights=P, minlength=C)


def exact_pair_marginal(edge: tuple[int, int], r_t, params: ModelParams,
                        lateral: LateralGraph) -> np.ndarray:
    """``C x C`` joint table of ``(x_j, x_i)`` for lateral edge ``(j, i)``.

    Rows index ``x_j`` in the orientation the edge was given.
    """
    j, i = (int(v) for v in edge)
    if not lateral.has_edge(j, i):
        raise KeyError(f"({j}, {i}) is not a lateral edge")
    C = params.C
    tab = _table_for_unit(lateral, C, i)
    _require_exact(tab, C)
    P, _ = _component_probs(tab, np.asarray(r_t, dtype=float), params.U)
    lj = int(np.flatnonzero(tab.members == j)[0])
    li = int(np.flatnonzero(tab.members == i)[0])
    flat = tab.configs[:, lj] * C + tab.configs[:, li]
    return np.bincount(flat, weights=P, minlength=C * C).reshape(C, C)


# ---------------------------------------------------------------------------
# Gibbs


def _gibbs(members, edges, R, U, cfg: GibbsConfig, rng, n_extra=0, collect=True, sweeps=None):
    """Systematic-scan Gibbs over ``members``, vectorized over leading axes.

    ``edges`` lists ``(edge index, local a, local b)`` with energy
    ``s_a^T U_e s_b``. Returns (node mean, list of pair means, final symbols).
    """
    Rc = R[..., members, :]
    lead = Rc.shape[:-2]
    m, na = Rc.shape[-2:]
    C = na + 1
    S = np.zeros(lead + (m, na))
    x = np.zeros(lead + (m,), dtype=np.int64)
    nb = U.ndim - 3
    Ue = [_insert_axes(U[..., e, :, :], nb, n_extra) for e, _, _ in edges]
    nbrs = [[] for _ in range(m)]
    for k, (_, a, b) in enumerate(edges):
        nbrs[a].append((k, b, False))
        nbrs[b].append((k, a, True))

    def draw(field):
        logits = np.concatenate([np.zeros(field.shape[:-1] + (1,)), field], axis=-1)
        p = np.exp(logits - logits.max(axis=-1, keepdims=True))
        cdf = np.cumsum(p, axis=-1)
        v = rng.random(field.shape[:-1] + (1,)) * cdf[..., -1:]
        return np.minimum((cdf <= v).sum(axis=-1), C - 1)

    eye = np.eye(C)[:, 1:]
    n_sweeps = sweeps if sweeps is not None else cfg.burn_in + cfg.n_samples * cfg.thin
    node_sum = np.zeros(lead + (m, na))
    pair_sum = [np.zeros(lead + (na, na)) for _ in edges]
    count = 0
    for sweep in range(n_sweeps):
        if not edges:
            x = draw(Rc)
            S = eye[x]
        else:
            for u in range(m):
                f = Rc[..., u, :]
                for k, v, transpose in nbrs[u]:
                    M = np.swapaxes(Ue[k], -1, -2) if transpose else Ue[k]
                    f = f + (M @ S[..., v, :, None])[..., 0]
                x[..., u] = draw(f)
                S[..., u, :] = eye[x[..., u]]
        if collect and sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            count += 1
            node_sum += S
            for k, (_, a, b) in enumerate(edges):
                pair_sum[k] += S[..., a, :, None] * S[..., b, None, :]
    if not collect:
        return None, None, x
    return node_sum / count, [p / count for p in pair_sum], x


def _edges_of(tab: ComponentTable):
    return list(zip(tab.edges.tolist(), tab.local_a.tolist(), tab.local_b.tolist()))


def gibbs_chain_state(tab: ComponentTable, r, params: ModelParams, cfg: GibbsConfig, rng) -> np.ndarray:
    """One approximate draw of a component: the chain state after burn-in."""
    _, _, x = _gibbs(tab.members, _edges_of(tab), r, params.U, cfg, rng,
                     collect=False, sweeps=cfg.burn_in + 1)
    return x


def gibbs_expectations(units, r_t, params: ModelParams, lateral: LateralGraph,
                       cfg: GibbsConfig | None = None, t: int = 0) -> StepExpectations:
    """Gibbs estimate of the moments of one lateral component.

    Returned arrays cover only ``units`` (ascending) and the lateral edges
    inside them, in :attr:`LateralGraph.edges` order.
    """
    cfg = cfg or GibbsConfig()
    units = tuple(sorted(int(u) for u in units))
    reach = lateral.reach
    if not units or units not in reach.components:
        raise ValueError(f"{units} is not a lateral component")
    cid = reach.components.index(units)
    tab = component_tables(lateral, params.C)[cid]
    rng = _rng.stream(cfg.seed, "gibbs", cid, t)
    node, pairs, _ = _gibbs(tab.members, _edges_of(tab), np.asarray(r_t, dtype=float),
                            params.U, cfg, rng)
    na = params.C - 1
    pair = np.stack(pairs) if pairs else np.zeros((0, na, na))
    return StepExpectations(node, pair, ("gibbs",))


# ---------------------------------------------------------------------------
# dispatch


def _singletons(tables, mode):
    if mode == "gibbs":
        return [], list(range(len(tables)))
    singles = [c for c, tab in enumerate(tables) if tab.size == 1]
    return singles, [c for c, tab in enumerate(tables) if tab.size > 1]


def negative_phase(R: np.ndarray, params: ModelParams, lateral: LateralGraph,
                   mode: str = "auto", cfg: GibbsConfig | None = None, index: int = 0,
                   n_extra: int = 0, codes=None, S_obs=None) -> StepExpectations:
    """Node and pair expectations for every unit and lateral edge.

    ``R`` has shape ``(*param_batch, *extra, N, Na)``; ``n_extra`` counts the
    extra axes. When ``codes`` (observed configuration row per component) and
    ``S_obs`` (observed statistics) are given and every component was handled
    exactly, the step log-probabilities are returned as ``loglik``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown negative-phase mode {mode!r}; expected one of {MODES}")
    cfg = cfg or GibbsConfig()
    C = params.C
    na = C - 1
    tables = component_tables(lateral, C)
    lead = R.shape[:-2]
    node = np.zeros(lead + (lateral.n_units, na))
    pair = np.zeros(lead + (len(lateral), na, na))
    methods = [""] * len(tables)
    loglik = np.zeros(lead) if codes is not None else None

    singles, rest = _singletons(tables, mode)
    if singles:
        units = np.array([int(tables[c].members[0]) for c in singles], dtype=np.intp)
        Rs = R[..., units, :]
        logits = np.concatenate([np.zeros(Rs.shape[:-1] + (1,)), Rs], axis=-1)
        log_z = logsumexp(logits, axis=-1)
        node[..., units, :] = np.exp(Rs - log_z[..., None])
        for c in singles:
            methods[c] = "exact"
        if loglik is not None:
            loglik = loglik + np.sum(np.sum(Rs * S_obs[..., units, :], axis=-1) - log_z, axis=-1)

    for c in rest:
        tab = tables[c]
        use_exact = mode == "exact" or (mode == "auto" and tab.exact)
        if use_exact:
            _require_exact(tab, C)
            E = tab.energies(R, params.U, n_extra)
            log_z = logsumexp(E, axis=-1)
            P = np.exp(E - log_z[..., None])
            n_m, pairs = _moments_from_probs(tab, P)
            if loglik is not None:
                loglik = loglik + np.take_along_axis(E, codes[c][..., None], axis=-1)[..., 0] - log_z
            methods[c] = "exact"
        else:
            rng = _rng.stream(cfg.seed, "gibbs", c, index)
            n_m, pairs, _ = _gibbs(tab.members, _edges_of(tab), R, params.U, cfg, rng, n_extra)
            loglik = None
            methods[c] = "gibbs"
        node[..., tab.members, :] = n_m
        for e, pm in zip(tab.edges, pairs):
            pair[..., e, :, :] = pm
    return StepExpectations(node, pair, tuple(methods), loglik)


def step_expectations(r_t, params: ModelParams, graphs: GraphPair | LateralGraph,
                      mode: str = "auto", cfg: GibbsConfig | None = None, t: int = 0) -> StepExpectations:
    """Expectations at one step; ``auto`` enumerates whenever the budget allows."""
    lateral = graphs.lateral if isinstance(graphs, GraphPair) else graphs
    return negative_phase(np.asarray(r_t, dtype=float), params, lateral, mode, cfg, index=t)


__all__ = [
    "ComponentTooLarge",
    "ENUM_BUDGET",
    "GibbsConfig",
    "StepExpectations",
    "exact_node_marginal",
    "exact_pair_marginal",
    "gibbs_expectations",
    "negative_phase",
    "step_expectations",
]
