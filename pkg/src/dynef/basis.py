"""Temporal basis functions for the causal kernels.

A bank is a ``(K, tau)`` table; ``values[k, d - 1]`` weighs the symbol seen
``d`` steps in the past.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class BasisBank:
    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"basis table must be a nonempty K x tau table, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("basis table has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def tau(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, BasisBank) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def to_dict(self) -> dict:
        if self.kind == "raised_cosine":
            return {"kind": "raised_cosine", "K": self.K, "tau": self.tau}
        return {"kind": "custom", "K": self.K, "tau": self.tau, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisBank":
        kind = d.get("kind", "raised_cosine")
        if kind == "raised_cosine":
            return raised_cosine_bank(d["K"], d["tau"])
        if kind == "custom":
            bank = custom_bank(d["values"])
            if ("K" in d and d["K"] != bank.K) or ("tau" in d and d["tau"] != bank.tau):
                raise ValueError("custom basis K/tau do not match the values table")
            return bank
        raise ValueError(f"unknown basis kind {kind!r}")


def raised_cosine_bank(K: int, tau: int) -> BasisBank:
    """Raised cosines on a log-warped delay axis.

    Centers are evenly spaced on ``[ln 1, ln tau]`` and each bump spans one
    center spacing on either side, so neighbouring bumps overlap by half.
    Each bump is rescaled to peak at exactly 1 on the delay nearest its
    center (centers generally fall between integer delays).
    """
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    if int(tau) != tau or tau < 1:
        raise ValueError(f"tau must be a positive integer, got {tau}")
    K, tau = int(K), int(tau)
    phi = np.log(np.arange(1, tau + 1, dtype=float))
    centers = np.linspace(phi[0], phi[-1], K)
    # a lone bump is widened so it stays positive over the whole support
    width = phi[-1] / (K - 1) if K > 1 else 2.0 * phi[-1]
    if width == 0.0:
        # tau == 1: a single delay, every bump sits on it
        return BasisBank(np.ones((K, 1)), kind="raised_cosine")
    dist = phi[None, :] - centers[:, None]
    vals = 0.5 * (1.0 + np.cos(np.pi * dist / width))
    vals[np.abs(dist) > width] = 0.0
    # the bank should peak exactly at 1 on the nearest delay
    peak = vals.max(axis=1, keepdims=True)
    vals = np.clip(vals / peak, 0.0, 1.0)
    return BasisBank(vals, kind="raised_cosine")


def custom_bank(values) -> BasisBank:
    """Wrap a user-supplied ``K x tau`` table verbatim."""
    try:
        arr = np.array(values, dtype=float)
    except ValueError as exc:
        raise ValueError("basis table is ragged") from exc
    return BasisBank(arr, kind="custom")
