"""Closed-form model of ambiguous 1BD results.

A random pattern of length n is detected by accident when its primary is
drawn as a dummy into the first block (hypergeometric in the number of
primaries of that length) and its n-1 secondaries are all among the dummies
of the later blocks. For an original pattern of length M the later blocks
carry (M-1)(N-1) dummies. Summing over n and over the number k of drawn
primaries gives the expected number of detected patterns E(M); weighting by
the length histogram gives F(N).

Overlaps between patterns are ignored, as are duplicate draws across
blocks, so the model treats each completion as a single draw without
replacement from the dummy database. All probabilities are evaluated in log
space from a log-factorial table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .patterns import PatternDatabase

__all__ = [
    "ModelInput",
    "ModelOutput",
    "log_factorials",
    "log_binomial",
    "log_hypergeometric",
    "p_first_block",
    "q_completion",
    "expected_detected",
    "expected_by_length",
    "expected_mean",
]

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelInput:
    Q_size: int
    N: int
    length_histogram: dict[int, int]
    P_size: int = -1
    L: int = -1

    def __post_init__(self):
        hist = {int(m): int(c) for m, c in self.length_histogram.items() if c}
        object.__setattr__(self, "length_histogram", dict(sorted(hist.items())))
        if self.P_size < 0:
            object.__setattr__(self, "P_size", sum(hist.values()))
        if self.L < 0:
            object.__setattr__(self, "L", max(hist, default=0))
        if self.Q_size < 1 or self.N < 1:
            raise ValueError("Q_size and N must be positive")
        if any(m < 1 or c < 0 for m, c in hist.items()):
            raise ValueError("histogram keys must be >= 1 and counts non-negative")
        if sum(hist.values()) != self.P_size:
            raise ValueError("histogram counts must sum to P_size")
        if any(m > self.L for m in hist):
            raise ValueError("histogram has lengths beyond L")
        if self.N - 1 > self.Q_size:
            raise ValueError("cannot draw N-1 dummies from the dummy database")

    @classmethod
    def from_db(cls, db: PatternDatabase, N: int, Q_size: int | None = None) -> "ModelInput":
        return cls(
            Q_size=len(db.all_names) if Q_size is None else Q_size,
            N=N,
            length_histogram=db.length_histogram(),
        )

    def count(self, n: int) -> int:
        return self.length_histogram.get(n, 0)


@dataclass(frozen=True)
class ModelOutput:
    F_N: float
    E_by_length: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "F_N": self.F_N,
            "E_by_length": {str(m): e for m, e in sorted(self.E_by_length.items())},
        }


@lru_cache(maxsize=8)
def log_factorials(n: int) -> np.ndarray:
    """``log(i!)`` for i = 0..n."""
    return gammaln(np.arange(n + 1, dtype=float) + 1.0)


def log_binomial(n: int, k: int) -> float:
    if k < 0 or k > n:
        return NEG_INF
    lf = log_factorials(n)
    return float(lf[n] - lf[k] - lf[n - k])


def _check_count(**kw) -> None:
    for name, v in kw.items():
        if not isinstance(v, (int, np.integer)) or v < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {v!r}")


def log_hypergeometric(k: int, N_pop: int, M_pop: int, n_draw: int) -> float:
    """log h(k | N_pop; M_pop; n_draw): k marked among n_draw drawn from N_pop with M_pop marked."""
    _check_count(k=k, N_pop=N_pop, M_pop=M_pop, n_draw=n_draw)
    if n_draw > N_pop or M_pop > N_pop:
        raise ValueError("draws and marked count must not exceed the population")
    if k > min(M_pop, n_draw) or n_draw - k > N_pop - M_pop:
        return NEG_INF
    return (
        log_binomial(M_pop, k)
        + log_binomial(N_pop - M_pop, n_draw - k)
        - log_binomial(N_pop, n_draw)
    )


def p_first_block(n: int, k: int, inp: ModelInput) -> float:
    """Log-probability that exactly k primaries of length-n patterns land in the first block."""
    if not 1 <= n <= max(inp.L, 1):
        raise ValueError(f"pattern length {n} outside [1, {inp.L}]")
    if not 0 <= k <= inp.N - 1:
        raise ValueError(f"k must lie in [0, {inp.N - 1}]")
    return log_hypergeometric(k, inp.Q_size, inp.count(n), inp.N - 1)


def q_completion(n: int, k: int, M: int, inp: ModelInput) -> float:
    """Log-probability that all k(n-1) secondaries are among (M-1)(N-1) later dummies."""
    if n < 1 or k < 0 or M < n:
        raise ValueError("require n >= 1, k >= 0 and M >= n")
    need = (n - 1) * k
    draws = (M - 1) * (inp.N - 1)
    if need > inp.Q_size or draws > inp.Q_size:
        raise ValueError("required names or draws exceed the dummy database")
    if need > draws:
        return NEG_INF
    return log_binomial(inp.Q_size - need, draws - need) - log_binomial(inp.Q_size, draws)


def expected_detected(M: int, inp: ModelInput) -> float:
    """Expected number of detected patterns for an original pattern of length M.

    Random patterns longer than M contribute nothing. When the later blocks
    would need more dummies than the database holds, every name is drawn.
    """
    if not 1 <= M <= max(inp.L, 1):
        raise ValueError(f"pattern length {M} outside [1, {inp.L}]")
    Q = inp.Q_size
    draws = min((M - 1) * (inp.N - 1), Q)
    log_total = log_binomial(Q, draws)
    e = 1.0
    for n in range(1, M + 1):
        for k in range(1, min(inp.N - 1, inp.count(n)) + 1):
            lp = p_first_block(n, k, inp)
            need = (n - 1) * k
            if lp == NEG_INF or need > draws:
                continue
            lq = log_binomial(Q - need, draws - need) - log_total
            e += math.exp(lp + lq) * k
    return e


def _log_p_table(inp: ModelInput) -> np.ndarray:
    """logp[n, k] for n = 0..L and k = 0..N-1 (row 0 unused)."""
    Q, d = inp.Q_size, inp.N - 1
    lf = log_factorials(Q)
    ks = np.arange(d + 1)
    table = np.full((inp.L + 1, d + 1), -np.inf)
    log_total = lf[Q] - lf[d] - lf[Q - d]
    for n, c in inp.length_histogram.items():
        ok = (ks <= c) & (d - ks <= Q - c)
        kk = ks[ok]
        table[n, ok] = (
            lf[c] - lf[kk] - lf[c - kk]
            + lf[Q - c] - lf[d - kk] - lf[Q - c - d + kk]
            - log_total
        )
    return table


def expected_by_length(inp: ModelInput, lengths=None) -> dict[int, float]:
    """E(M) for every requested M (default 1..L), vectorized over n and k."""
    Q, d = inp.Q_size, inp.N - 1
    lengths = range(1, inp.L + 1) if lengths is None else lengths
    if d == 0:
        return {int(m): 1.0 for m in lengths}
    lf = log_factorials(Q)
    logp = _log_p_table(inp)
    ks = np.arange(1, d + 1)
    out = {}
    for M in lengths:
        M = int(M)
        draws = min((M - 1) * d, Q)
        need = np.arange(M)[:, None] * ks[None, :]  # rows: n-1 = 0..M-1
        ok = need <= draws
        safe = np.where(ok, need, 0)
        logq = lf[Q - safe] - lf[draws - safe] - lf[Q - draws] - (lf[Q] - lf[draws] - lf[Q - draws])
        terms = np.where(ok, np.exp(logp[1 : M + 1, 1:] + logq), 0.0)
        out[M] = 1.0 + float((terms * ks[None, :]).sum())
    return out


def expected_mean(inp: ModelInput) -> ModelOutput:
    """F(N): E(M) averaged over the pattern length histogram."""
    if inp.P_size == 0:
        raise ValueError("model input has no patterns")
    e = expected_by_length(inp)
    f = sum(e[m] * c for m, c in inp.length_histogram.items()) / inp.P_size
    return ModelOutput(f, e)
