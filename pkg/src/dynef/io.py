"""Checkpoint JSON and time-series CSV formats.

Checkpoint (one JSON document)::

    {"format": "dynef-checkpoint", "version": 1, "alphabet": C,
     "graphs": {"n_units": N, "causal": [[j, i], ...], "lateral": [[a, b], ...]},
     "basis": {"kind": ..., "K": ..., "tau": ...[, "values": ...]},
     "theta": [[...Na...] per unit],
     "V": [[[...Na*Na row-major...] per k] per causal edge],
     "U": [[...Na*Na row-major...] per lateral edge a<b]}

Edges are listed in the same order as the parameter blocks.

Time series CSV, long form: header ``unit,t,symbol`` (optionally preceded by
a ``seq`` column to hold several sequences), ``t`` starting at 1, one row
per (unit, t). Dense form: header ``unit,t1,t2,...``, one row per unit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .basis import BasisBank
from .graph import GraphPair
from .model import ModelParams, TimeSeries

FORMAT = "dynef-checkpoint"


def checkpoint_dict(params: ModelParams, graphs: GraphPair, bank: BasisBank) -> dict:
    if params.batch_shape:
        raise ValueError("checkpoints hold a single parameter set")
    na = params.C - 1
    return {
        "format": FORMAT,
        "version": 1,
        "alphabet": params.C,
        "graphs": graphs.to_dict(),
        "basis": bank.to_dict(),
        "theta": params.theta.tolist(),
        "V": params.V.reshape(len(graphs.causal), bank.K, na * na).tolist(),
        "U": params.U.reshape(len(graphs.lateral), na * na).tolist(),
    }


def save_checkpoint(path, params: ModelParams, graphs: GraphPair, bank: BasisBank) -> None:
    text = json.dumps(checkpoint_dict(params, graphs, bank), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def params_from_dict(d: dict) -> tuple[ModelParams, GraphPair, BasisBank]:
    if d.get("format") != FORMAT:
        raise ValueError("not a dynef checkpoint")
    C = int(d["alphabet"])
    na = C - 1
    graphs = GraphPair.from_dict(d["graphs"])
    bank = BasisBank.from_dict(d["basis"])
    p = ModelParams.zeros(graphs, C, bank.K)
    p.theta[...] = np.asarray(d["theta"], dtype=float).reshape(p.theta.shape)
    if len(graphs.causal):
        p.V[...] = np.asarray(d["V"], dtype=float).reshape(len(graphs.causal), bank.K, na, na)
    if len(graphs.lateral):
        p.U[...] = np.asarray(d["U"], dtype=float).reshape(len(graphs.lateral), na, na)
    if not all(np.all(np.isfinite(a)) for a in (p.theta, p.V, p.U)):
        raise ValueError("checkpoint has non-finite parameters")
    return p, graphs, bank


def load_checkpoint(path) -> tuple[ModelParams, GraphPair, BasisBank]:
    return params_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# time series


def write_series(path, series: list[TimeSeries], dense: bool = False) -> None:
    """Write one or more sequences; several sequences get a ``seq`` column."""
    series = list(series)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if dense:
            if len(series) != 1:
                raise ValueError("the dense layout holds exactly one sequence")
            x = series[0]
            w.writerow(["unit"] + [f"t{t}" for t in range(1, x.T + 1)])
            for u in range(x.n_units):
                w.writerow([u] + x.symbols[u].tolist())
            return
        multi = len(series) != 1
        w.writerow((["seq"] if multi else []) + ["unit", "t", "symbol"])
        for k, x in enumerate(series):
            for u in range(x.n_units):
                for t in range(x.T):
                    w.writerow(([k] if multi else []) + [u, t + 1, int(x.symbols[u, t])])


def read_series(path, C: int = 2, n_units: int | None = None) -> list[TimeSeries]:
    """Read either CSV layout; returns a list of sequences."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file (a header is required)")
    header = [h.strip() for h in rows[0]]

    def num(v, lineno):
        try:
            return int(v)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected an integer, got {v!r}") from None

    if header[:1] == ["unit"] and len(header) >= 1 and header[1:2] != ["t"]:
        # dense layout
        T = len(header) - 1
        table = {}
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != T + 1:
                raise ValueError(f"{path}:{lineno}: expected {T + 1} fields, got {len(r)}")
            table[num(r[0], lineno)] = [num(v, lineno) for v in r[1:]]
        n = n_units if n_units is not None else (max(table) + 1 if table else 0)
        sym = np.zeros((n, T), dtype=np.int64)
        for u, vals in table.items():
            if u >= n:
                raise ValueError(f"{path}: unit {u} out of range for {n} units")
            sym[u] = vals
        return [TimeSeries(sym, C)]

    has_seq = header[:1] == ["seq"]
    expected = (["seq"] if has_seq else []) + ["unit", "t", "symbol"]
    if header != expected:
        raise ValueError(f"{path}:1: unrecognized header {header}")
    entries: dict[int, list] = {}
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(expected):
            raise ValueError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(r)}")
        vals = [num(v, lineno) for v in r]
        seq = vals[0] if has_seq else 0
        u, t, s = vals[-3:]
        if t < 1:
            raise ValueError(f"{path}:{lineno}: time index starts at 1, got {t}")
        entries.setdefault(seq, []).append((u, t, s))
    if not entries:
        return [TimeSeries(np.zeros((n_units or 0, 0), dtype=np.int64), C)]
    out = []
    for seq in sorted(entries):
        ent = np.array(entries[seq], dtype=np.int64)
        n = n_units if n_units is not None else int(ent[:, 0].max()) + 1
        sym = np.zeros((n, int(ent[:, 1].max())), dtype=np.int64)
        sym[ent[:, 0], ent[:, 1] - 1] = ent[:, 2]
        out.append(TimeSeries(sym, C))
    return out
