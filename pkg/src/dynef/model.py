"""Dynamic exponential family model over discrete-valued time series.

At each step the joint conditional of all units is

    p(x_t | past) ∝ exp{ sum_i r_{i,t}^T s(x_{i,t}) + sum_{a<b lateral} s(x_{a,t})^T U_{a,b} s(x_{b,t}) }

with membrane potentials ``r_{i,t} = theta_i + sum_{j->i} sum_k V_{j,i,k}^T alpha_{j,k,t-1}``
and filtered traces ``alpha_{j,k,t} = sum_d a_k[d+1] s(x_{j,t-d})``.
Each lateral edge contributes once. Symbols before t=1 are taken to be 0.

Array layout (``Na = C - 1``):

* ``theta``: ``(N, Na)``
* ``V``: ``(E_causal, K, Na, Na)``, in :attr:`CausalGraph.edges` order
* ``U``: ``(E_lateral, Na, Na)``, one block per canonical edge ``a < b``

Params may carry extra leading batch axes (used for parallel SGLD chains).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from . import _rng
from .basis import BasisBank
from .graph import GraphPair, LateralGraph

#: largest joint configuration count enumerated exactly per lateral component
ENUM_BUDGET = 4096


class ComponentTooLarge(RuntimeError):
    """A lateral component is too big to enumerate exactly."""


@dataclass(frozen=True)
class AlphabetSpec:
    C: int

    def __post_init__(self):
        if int(self.C) != self.C or self.C < 2:
            raise ValueError(f"alphabet size must be an integer >= 2, got {self.C}")

    @property
    def n_stats(self) -> int:
        return self.C - 1


def sufficient_stats(x: int, alphabet: AlphabetSpec | int) -> np.ndarray:
    """One-hot statistics of symbol ``x``; symbol 0 maps to the zero vector."""
    C = alphabet.C if isinstance(alphabet, AlphabetSpec) else int(alphabet)
    if not 0 <= x < C:
        raise ValueError(f"symbol {x} outside alphabet of size {C}")
    s = np.zeros(C - 1)
    if x > 0:
        s[x - 1] = 1.0
    return s


def stats_array(symbols, C: int) -> np.ndarray:
    """Vectorized :func:`sufficient_stats`: appends an ``Na`` axis."""
    symbols = np.asarray(symbols)
    return (symbols[..., None] == np.arange(1, C)).astype(float)


# ---------------------------------------------------------------------------
# parameters and data


@dataclass
class ModelParams:
    theta: np.ndarray
    V: np.ndarray
    U: np.ndarray

    @property
    def C(self) -> int:
        return self.theta.shape[-1] + 1

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.theta.shape[:-2]

    @classmethod
    def zeros(cls, graphs: GraphPair, C: int, K: int, batch=()) -> "ModelParams":
        na = C - 1
        batch = tuple(batch)
        return cls(
            np.zeros(batch + (graphs.n_units, na)),
            np.zeros(batch + (len(graphs.causal), K, na, na)),
            np.zeros(batch + (len(graphs.lateral), na, na)),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.theta.copy(), self.V.copy(), self.U.copy())

    def check(self, graphs: GraphPair, K: int | None = None) -> None:
        na = self.C - 1
        b = self.batch_shape
        if self.theta.shape != b + (graphs.n_units, na):
            raise ValueError(f"theta has shape {self.theta.shape}, expected {b + (graphs.n_units, na)}")
        if self.V.shape[:len(b) + 1] != b + (len(graphs.causal),) or self.V.shape[-2:] != (na, na):
            raise ValueError(f"V has shape {self.V.shape}, incompatible with {len(graphs.causal)} causal edges")
        if K is not None and self.V.shape[-3] != K:
            raise ValueError(f"V carries {self.V.shape[-3]} basis weights, basis bank has {K}")
        if self.U.shape != b + (len(graphs.lateral), na, na):
            raise ValueError(f"U has shape {self.U.shape}, expected {b + (len(graphs.lateral), na, na)}")
        if not all(np.isfinite(a).all() for a in (self.theta, self.V, self.U)):
            raise ValueError("model parameters must be finite")

    # flat vector view, used by finite differences and SGLD noise
    def flat(self) -> np.ndarray:
        b = self.batch_shape
        return np.concatenate([a.reshape(b + (-1,)) for a in (self.theta, self.V, self.U)], axis=-1)

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        b = vec.shape[:-1]
        out = []
        pos = 0
        for a in (self.theta, self.V, self.U):
            core = a.shape[len(self.batch_shape):]
            n = int(np.prod(core))
            out.append(vec[..., pos:pos + n].reshape(b + core))
            pos += n
        return ModelParams(*out)

    def blocks(self) -> dict[str, np.ndarray]:
        return {"theta": self.theta, "V": self.V, "U": self.U}

    def __add__(self, other: "ModelParams") -> "ModelParams":
        return ModelParams(self.theta + other.theta, self.V + other.V, self.U + other.U)

    def scale(self, c: float) -> "ModelParams":
        return ModelParams(c * self.theta, c * self.V, c * self.U)

    def lateral_block(self, lateral: LateralGraph, a: int, b: int) -> np.ndarray:
        """Coupling ``M`` such that the energy term is ``s_a^T M s_b``."""
        e = lateral.edge_index(a, b)
        return self.U[..., e, :, :] if a < b else np.swapaxes(self.U[..., e, :, :], -1, -2)

    def set_lateral_block(self, lateral: LateralGraph, a: int, b: int, M) -> None:
        """Store a coupling given for orientation ``(a, b)``, transposing if needed."""
        e = lateral.edge_index(a, b)
        M = np.asarray(M, dtype=float)
        self.U[..., e, :, :] = M if a < b else np.swapaxes(M, -1, -2)


@dataclass
class TimeSeries:
    """``(N, T)`` integer symbols; column ``t - 1`` holds time ``t``."""

    symbols: np.ndarray
    C: int = 2

    def __post_init__(self):
        s = np.asarray(self.symbols)
        if s.ndim != 2:
            raise ValueError(f"time series must be an N x T table, got shape {s.shape}")
        if s.size and not np.issubdtype(s.dtype, np.integer):
            if not np.all(s == np.round(s)):
                raise ValueError("time series symbols must be integers")
        s = s.astype(np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.C):
            raise ValueError(f"time series symbols must lie in [0, {self.C - 1}]")
        self.symbols = s

    @property
    def n_units(self) -> int:
        return self.symbols.shape[0]

    @property
    def T(self) -> int:
        return self.symbols.shape[1]

    def stats(self) -> np.ndarray:
        """``(T, N, Na)`` sufficient statistics, time-major."""
        return stats_array(self.symbols.T, self.C)


# ---------------------------------------------------------------------------
# traces and potentials


def _accumulate_traces(bank_values: np.ndarray, history) -> np.ndarray:
    # history[d] holds s_{t-d}; summed in ascending d so the batch and the
    # incremental paths agree bit for bit
    acc = None
    for d, s in enumerate(history):
        term = bank_values[:, d][:, None] * s[..., None, :]
        acc = term if acc is None else acc + term
    return acc


class TraceState:
    """Ring buffer of the last ``tau`` statistic vectors, plus their traces."""

    def __init__(self, n_units: int, bank: BasisBank, C: int):
        self.bank = bank
        self.C = C
        self.t = 0
        self._buf = np.zeros((bank.tau, n_units, C - 1))
        self._head = 0  # slot of the most recent step

    def push(self, s_t: np.ndarray) -> None:
        self._head = (self._head - 1) % self.bank.tau
        self._buf[self._head] = s_t
        self.t += 1

    def history(self) -> list[np.ndarray]:
        """Stored vectors ordered from newest (delay 0) to oldest."""
        tau = self.bank.tau
        return [self._buf[(self._head + d) % tau] for d in range(tau)]

    @property
    def alpha(self) -> np.ndarray:
        """``(N, K, Na)`` traces at the current step."""
        return _accumulate_traces(self.bank.values, self.history())


def filtered_traces(x: TimeSeries, t: int, bank: BasisBank, alphabet=None) -> TraceState:
    """Trace state after consuming ``x`` up to and including time ``t``."""
    C = x.C if alphabet is None else (alphabet.C if isinstance(alphabet, AlphabetSpec) else int(alphabet))
    if not 0 <= t <= x.T:
        raise ValueError(f"t={t} outside 0..{x.T}")
    state = TraceState(x.n_units, bank, C)
    S = stats_array(x.symbols.T, C)
    for tt in range(t):
        state.push(S[tt])
    return state


def sequence_traces(S: np.ndarray, bank: BasisBank) -> np.ndarray:
    """Traces for every step: ``(..., T, N, Na) -> (..., T, N, K, Na)``.

    Output index ``t - 1`` holds the trace at time ``t``.
    """
    T = S.shape[-3]
    history = []
    for d in range(bank.tau):
        shifted = np.zeros_like(S)
        if d < T:
            shifted[..., d:, :, :] = S[..., :T - d, :, :]
        history.append(shifted)
    if T == 0:
        return np.zeros(S.shape[:-1] + (bank.K, S.shape[-1]))
    return _accumulate_traces(bank.values, history)


def previous_traces(alpha: np.ndarray) -> np.ndarray:
    """Shift traces one step so index ``t - 1`` holds the trace at ``t - 1``."""
    prev = np.zeros_like(alpha)
    prev[..., 1:, :, :, :] = alpha[..., :-1, :, :, :]
    return prev


def _insert_axes(a: np.ndarray, n_batch: int, n_new: int) -> np.ndarray:
    return a.reshape(a.shape[:n_batch] + (1,) * n_new + a.shape[n_batch:])


def potentials(params: ModelParams, graphs: GraphPair, alpha_prev: np.ndarray) -> np.ndarray:
    """Membrane potentials from the previous step's traces.

    ``alpha_prev`` is ``(*batch, *extra, N, K, Na)`` where ``batch`` matches
    the params' batch shape; returns ``(*batch, *extra, N, Na)``.
    """
    nb = len(params.batch_shape)
    n_extra = alpha_prev.ndim - 3 - nb
    theta = _insert_axes(params.theta, nb, n_extra)
    causal = graphs.causal
    if len(causal) == 0:
        return np.broadcast_to(theta, alpha_prev.shape[:-3] + params.theta.shape[-2:]).copy()
    K, na = alpha_prev.shape[-2:]
    a_src = alpha_prev[..., causal.src, :, :]
    a_src = a_src.reshape(a_src.shape[:-2] + (1, K * na))
    V = _insert_axes(params.V, nb, n_extra)
    V = V.reshape(V.shape[:-3] + (K * na, na))
    contrib = (a_src @ V)[..., 0, :]  # (..., E, Na)
    return theta + causal.incidence @ contrib


def membrane_potentials(params: ModelParams, graphs: GraphPair, alpha_prev: np.ndarray) -> np.ndarray:
    """``r_t = theta + sum_{j->i} sum_k V_{j,i,k}^T alpha_{j,k,t-1}``, shape ``(N, Na)``."""
    alpha_prev = np.asarray(alpha_prev, dtype=float)
    if alpha_prev.shape[-3] != graphs.n_units:
        raise ValueError(f"traces cover {alpha_prev.shape[-3]} units, graph has {graphs.n_units}")
    if params.V.shape[-3] != alpha_prev.shape[-2]:
        raise ValueError("traces and V disagree on the number of basis functions")
    return potentials(params, graphs, alpha_prev)


# ---------------------------------------------------------------------------
# per-component enumeration


@dataclass(frozen=True, eq=False)
class ComponentTable:
    """Exhaustive configuration table of one lateral component."""

    members: np.ndarray       # (m,) unit indices, ascending
    edges: np.ndarray         # (n_e,) indices into LateralGraph.edges
    local_a: np.ndarray       # (n_e,) local position of the lower endpoint
    local_b: np.ndarray       # (n_e,) local position of the upper endpoint
    configs: np.ndarray | None  # (C^m, m) symbols, last member varies fastest
    stats: np.ndarray | None    # (C^m, m, Na)
    radix: np.ndarray         # (m,) weights turning a configuration into its row

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def exact(self) -> bool:
        return self.configs is not None

    def code(self, symbols: np.ndarray) -> np.ndarray:
        """Row index of configurations given as ``(..., m)`` symbols."""
        return symbols @ self.radix

    def lateral_energy(self, U: np.ndarray) -> np.ndarray:
        """``(*batch, C^m)`` lateral energy of every configuration."""
        S = self.stats
        out = np.zeros(U.shape[:-3] + (S.shape[0],))
        for e, a, b in zip(self.edges, self.local_a, self.local_b):
            SU = S[:, a, :] @ U[..., e, :, :]  # (*batch, C^m, Na)
            out = out + np.sum(SU * S[:, b, :], axis=-1)
        return out

    def energies(self, R: np.ndarray, U: np.ndarray, n_extra: int = 0) -> np.ndarray:
        """``(*batch, *extra, C^m)`` joint energies given full potentials ``R``."""
        Rc = R[..., self.members, :]
        m, na = Rc.shape[-2:]
        lin = Rc.reshape(Rc.shape[:-2] + (m * na,)) @ self.stats.reshape(-1, m * na).T
        lat = self.lateral_energy(U)
        nb = lat.ndim - 1
        return lin + _insert_axes(lat, nb, n_extra)


@lru_cache(maxsize=256)
def component_tables(lateral: LateralGraph, C: int) -> tuple[ComponentTable, ...]:
    reach = lateral.reach
    tables = []
    for members, edge_ids in zip(reach.components, reach.component_edges):
        m = len(members)
        pos = {u: p for p, u in enumerate(members)}
        edges = np.array(edge_ids, dtype=np.intp)
        la = np.array([pos[lateral.edges[e][0]] for e in edge_ids], dtype=np.intp)
        lb = np.array([pos[lateral.edges[e][1]] for e in edge_ids], dtype=np.intp)
        radix = C ** np.arange(m - 1, -1, -1, dtype=np.int64)
        if C ** m <= ENUM_BUDGET:
            configs = np.array(list(itertools.product(range(C), repeat=m)), dtype=np.int64).reshape(-1, m)
            stats = stats_array(configs, C)
        else:
            configs = stats = None
        tables.append(ComponentTable(np.array(members, dtype=np.intp), edges, la, lb, configs, stats, radix))
    return tuple(tables)


def _require_exact(tab: ComponentTable, C: int) -> None:
    if not tab.exact:
        raise ComponentTooLarge(
            f"lateral component {tuple(tab.members.tolist())} has {C}^{tab.size} configurations "
            f"(budget {ENUM_BUDGET})")


def _as_symbols(x_t, n_units: int) -> np.ndarray:
    x = np.asarray(x_t, dtype=np.int64)
    if x.shape != (n_units,):
        raise ValueError(f"expected {n_units} symbols, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# single-step quantities


def step_energy(x_t, r_t, params: ModelParams, lateral: LateralGraph) -> float:
    """Unnormalized log-probability of the joint symbol vector ``x_t``."""
    C = params.C
    r_t = np.asarray(r_t, dtype=float)
    S = stats_array(_as_symbols(x_t, lateral.n_units), C)
    energy = float(np.sum(r_t * S))
    for e, (a, b) in enumerate(lateral.edges):
        energy += float(S[a] @ params.U[e] @ S[b])
    return energy


def component_log_probs(x_t, r_t, params: ModelParams, lateral: LateralGraph) -> np.ndarray:
    """Log-probability contributed by each lateral component at one step."""
    C = params.C
    x = _as_symbols(x_t, lateral.n_units)
    r_t = np.asarray(r_t, dtype=float)
    out = []
    for tab in component_tables(lateral, C):
        _require_exact(tab, C)
        E = tab.energies(r_t, params.U)
        out.append(E[tab.code(x[tab.members])] - logsumexp(E))
    return np.array(out)


def step_log_prob(x_t, r_t, params: ModelParams, lateral: LateralGraph, reach=None) -> float:
    """``log p(x_t | r_t)``; normalizes each lateral component separately.

    ``reach`` is accepted for interface symmetry; the lateral graph already
    carries its components.
    """
    x = _as_symbols(x_t, lateral.n_units)
    energy = step_energy(x, r_t, params, lateral)
    r_t = np.asarray(r_t, dtype=float)
    log_z = 0.0
    for tab in component_tables(lateral, params.C):
        _require_exact(tab, params.C)
        log_z += float(logsumexp(tab.energies(r_t, params.U)))
    return energy - log_z


# ---------------------------------------------------------------------------
# whole sequences


@dataclass
class SequenceData:
    """Parameter-independent statistics of one (or a stack of) sequences."""

    S: np.ndarray           # (..., T, N, Na)
    alpha_prev: np.ndarray  # (..., T, N, K, Na)
    codes: list             # per component: (..., T) observed configuration rows
    C: int

    @property
    def T(self) -> int:
        return self.S.shape[-3]

    @classmethod
    def build(cls, x: TimeSeries, graphs: GraphPair, bank: BasisBank) -> "SequenceData":
        if x.n_units != graphs.n_units:
            raise ValueError(f"series has {x.n_units} units, graph has {graphs.n_units}")
        S = x.stats()
        alpha_prev = previous_traces(sequence_traces(S, bank)) if x.T else np.zeros((0, x.n_units, bank.K, x.C - 1))
        X = x.symbols.T
        codes = [tab.code(X[:, tab.members]) for tab in component_tables(graphs.lateral, x.C)]
        return cls(S, alpha_prev, codes, x.C)

    @classmethod
    def stack(cls, items: list["SequenceData"]) -> "SequenceData":
        if len({d.T for d in items}) > 1:
            raise ValueError("stacking requires sequences of equal length")
        return cls(np.stack([d.S for d in items]), np.stack([d.alpha_prev for d in items]),
                   [np.stack(c) for c in zip(*[d.codes for d in items])], items[0].C)

    def take(self, idx) -> "SequenceData":
        return SequenceData(self.S[idx], self.alpha_prev[idx], [c[idx] for c in self.codes], self.C)


def sequence_potentials(data: SequenceData, params: ModelParams, graphs: GraphPair) -> np.ndarray:
    return potentials(params, graphs, data.alpha_prev)


def data_log_likelihood(data: SequenceData, params: ModelParams, graphs: GraphPair,
                        units=None) -> np.ndarray:
    """Log-likelihood of precomputed sequence data, summed over time.

    With ``units`` given, only lateral components containing one of those
    units contribute (the conditional likelihood of that block).
    """
    R = sequence_potentials(data, params, graphs)
    n_extra = data.S.ndim - 3 - len(params.batch_shape)
    total = np.zeros(R.shape[:-3])
    keep = None if units is None else set(int(u) for u in units)
    for tab, code in zip(component_tables(graphs.lateral, data.C), data.codes):
        if keep is not None and not keep.intersection(tab.members.tolist()):
            continue
        _require_exact(tab, data.C)
        E = tab.energies(R, params.U, n_extra + 1)
        lp = np.take_along_axis(E, code[..., None], axis=-1)[..., 0] - logsumexp(E, axis=-1)
        total = total + lp.sum(axis=-1)
    return total


def sequence_log_likelihood(x: TimeSeries, params: ModelParams, graphs: GraphPair,
                            bank: BasisBank) -> float:
    """``sum_t log p(x_t | r_t)`` with potentials driven by the observed past."""
    params.check(graphs, bank.K)
    if x.T == 0:
        return 0.0
    return float(data_log_likelihood(SequenceData.build(x, graphs, bank), params, graphs))


def _draw_categorical(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logits - logits.max())
    cdf = np.cumsum(p)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_sequence(params: ModelParams, graphs: GraphPair, bank: BasisBank, T: int,
                    rng_seed: int = 0, clamp: dict | None = None, gibbs=None,
                    mode: str = "auto") -> TimeSeries:
    """Ancestral sampling, one step at a time.

    Each lateral component is drawn exactly (enumerate, then a categorical
    draw) when it fits the enumeration budget and ``mode`` allows it, and by a
    Gibbs chain otherwise. ``clamp`` maps unit -> length-T symbol array; a
    clamped component keeps its given symbols and only feeds the traces.
    """
    from .inference import GibbsConfig, gibbs_chain_state

    params.check(graphs, bank.K)
    if params.batch_shape:
        raise ValueError("sampling expects unbatched params")
    if mode not in ("auto", "exact", "gibbs"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    C = params.C
    N = graphs.n_units
    clamp = {int(u): np.asarray(v, dtype=np.int64) for u, v in (clamp or {}).items()}
    for u, v in clamp.items():
        if v.shape != (T,):
            raise ValueError(f"clamped train for unit {u} must have length {T}")
    tables = component_tables(graphs.lateral, C)
    free = []
    for tab in tables:
        inside = [int(u) in clamp for u in tab.members]
        if any(inside) and not all(inside):
            raise ValueError(f"component {tab.members.tolist()} is only partially clamped")
        if not any(inside):
            free.append(tab)
            if mode == "exact":
                _require_exact(tab, C)
    clamped_units = np.array(sorted(clamp), dtype=np.intp)
    clamped_vals = (np.stack([clamp[int(u)] for u in clamped_units]) if len(clamped_units)
                    else np.zeros((0, T), dtype=np.int64))
    gcfg = gibbs or GibbsConfig()
    rng = _rng.stream(rng_seed, "sample")

    symbols = np.zeros((N, T), dtype=np.int64)
    state = TraceState(N, bank, C)
    for t in range(T):
        r = potentials(params, graphs, state.alpha)
        x = np.zeros(N, dtype=np.int64)
        x[clamped_units] = clamped_vals[:, t]
        for tab in free:
            if tab.exact and mode != "gibbs":
                E = tab.energies(r, params.U)
                x[tab.members] = tab.configs[_draw_categorical(E, rng)]
            else:
                x[tab.members] = gibbs_chain_state(tab, r, params, gcfg, rng)
        symbols[:, t] = x
        state.push(stats_array(x, C))
    return TimeSeries(symbols, C)
