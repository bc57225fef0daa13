"""Closed-form leakage probabilities and mergeable Monte-Carlo statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np
from scipy.stats import binomtest


@dataclass(frozen=True)
class ClosedFormInputs:
    p_ell: float = 1e-4
    p_lt: float = 0.1

    def __post_init__(self):
        for name in ("p_ell", "p_lt"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


def _first_hit_sum(p: float, n: int) -> float:
    return sum((1 - p) ** (k - 1) * p for k in range(1, n + 1))


def eq1_data_leak_given_parity(inputs: ClosedFormInputs) -> float:
    """Data qubit leaks in a round whose parity partner is leaked."""
    return inputs.p_lt + _first_hit_sum(inputs.p_ell, 4)


def eq2_parity_leak_given_data(inputs: ClosedFormInputs) -> float:
    """Parity qubit leaks during an LRC on a leaked data qubit.

    Nine CNOTs inject; the four before the data reset can transport.
    """
    return _first_hit_sum(inputs.p_ell, 9) + _first_hit_sum(inputs.p_lt, 4)


def eq3_invisible_probability(r: int) -> float:
    if r < 0:
        raise ValueError("r must be >= 0")
    return (15 / 16) * (1 / 16) ** r


def union_probability(which: str, inputs: ClosedFormInputs) -> float:
    """Exact probability that at least one of the micro-circuit's events fires."""
    if which == "eq1":
        return 1 - (1 - inputs.p_lt) * (1 - inputs.p_ell) ** 4
    if which == "eq2":
        return 1 - (1 - inputs.p_ell) ** 9 * (1 - inputs.p_lt) ** 4
    raise ValueError(f"unknown micro-circuit {which!r}")


def monte_carlo_eq_check(
    which: str,
    trials: int,
    rng: np.random.Generator,
    inputs: ClosedFormInputs = ClosedFormInputs(),
    chunk: int = 1_000_000,
) -> float:
    """Sample the isolated micro-circuit and return the empirical leak probability.

    ``eq1``: the parity qubit is leaked; the data qubit sees four CNOTs, each
    able to inject leakage, and one CNOT with the leaked parity that can
    transport it.  ``eq2``: the data qubit is leaked; the parity qubit sees
    nine injecting CNOTs, four of which (those before the data reset) can
    transport.  Only leakage channels are active.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if which == "eq1":
        n_inj, n_tr = 4, 1
    elif which == "eq2":
        n_inj, n_tr = 9, 4
    else:
        raise ValueError(f"unknown micro-circuit {which!r}")
    hits = 0
    left = trials
    while left:
        n = min(chunk, left)
        inj = (rng.random((n, n_inj)) < inputs.p_ell).any(axis=1)
        tr = (rng.random((n, n_tr)) < inputs.p_lt).any(axis=1)
        hits += int(np.count_nonzero(inj | tr))
        left -= n
    return hits / trials


# --- aggregation --------------------------------------------------------------


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ShotStats:
    """Per-block outcome counts.  All fields are integers so merging is exact."""

    n_qubits: int
    n_experiments: int = 0
    n_logical_errors: int = 0
    leaked_sum: List[int] = field(default_factory=list)  # per round, summed over shots
    leaked_sumsq: List[int] = field(default_factory=list)
    lrc_count_total: int = 0
    decisions: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    decoder_fallbacks: int = 0

    @classmethod
    def from_run(cls, n_qubits: int, logical_errors, leak_counts, audit=None, fallbacks: int = 0) -> "ShotStats":
        counts = np.asarray(leak_counts, dtype=np.int64)  # (rounds, batch)
        st = cls(
            n_qubits=n_qubits,
            n_experiments=counts.shape[1],
            n_logical_errors=int(np.count_nonzero(logical_errors)),
            leaked_sum=[int(v) for v in counts.sum(axis=1)],
            leaked_sumsq=[int(v) for v in (counts**2).sum(axis=1)],
            decoder_fallbacks=int(fallbacks),
        )
        if audit is not None:
            t, a = np.asarray(audit.truth, bool), np.asarray(audit.action, bool)
            st.tp = int(np.sum(a & t))
            st.fp = int(np.sum(a & ~t))
            st.fn = int(np.sum(~a & t))
            st.tn = int(np.sum(~a & ~t))
            st.lrc_count_total = st.tp + st.fp
            st.decisions = t.shape[0] * t.shape[1]
        return st


@dataclass
class AggregateStats:
    n_qubits: int
    n_experiments: int
    n_logical_errors: int
    leaked_sum: List[int]
    leaked_sumsq: List[int]
    lrc_count_total: int
    decisions: int
    tp: int
    fp: int
    fn: int
    tn: int
    decoder_fallbacks: int

    def merge(self, other: "AggregateStats") -> "AggregateStats":
        if self.n_qubits != other.n_qubits or len(self.leaked_sum) != len(other.leaked_sum):
            raise ValueError("cannot merge statistics of different experiments")
        return AggregateStats(
            n_qubits=self.n_qubits,
            n_experiments=self.n_experiments + other.n_experiments,
            n_logical_errors=self.n_logical_errors + other.n_logical_errors,
            leaked_sum=[a + b for a, b in zip(self.leaked_sum, other.leaked_sum)],
            leaked_sumsq=[a + b for a, b in zip(self.leaked_sumsq, other.leaked_sumsq)],
            lrc_count_total=self.lrc_count_total + other.lrc_count_total,
            decisions=self.decisions + other.decisions,
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
            decoder_fallbacks=self.decoder_fallbacks + other.decoder_fallbacks,
        )

    __add__ = merge

    @property
    def rounds(self) -> int:
        return len(self.leaked_sum)

    @property
    def ler(self) -> float:
        return self.n_logical_errors / self.n_experiments

    @property
    def ler_ci(self):
        return wilson_interval(self.n_logical_errors, self.n_experiments)

    @property
    def lpr_by_round(self) -> np.ndarray:
        return np.asarray(self.leaked_sum, dtype=float) / (self.n_experiments * self.n_qubits)

    def lpr_ci(self, z: float = 1.96):
        n = self.n_experiments
        mean = np.asarray(self.leaked_sum, float) / n
        var = np.maximum(np.asarray(self.leaked_sumsq, float) / n - mean**2, 0.0)
        half = z * np.sqrt(var / n)
        lo = np.clip((mean - half) / self.n_qubits, 0.0, 1.0)
        hi = np.clip((mean + half) / self.n_qubits, 0.0, 1.0)
        return lo, hi

    @property
    def accuracy(self) -> float:
        tot = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / tot if tot else float("nan")

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def fnr(self) -> float:
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    @property
    def lrcs_per_round(self) -> float:
        return self.lrc_count_total / (self.rounds * self.n_experiments)

    @property
    def fallback_rate(self) -> float:
        return self.decoder_fallbacks / self.n_experiments

    def summary(self) -> dict:
        lo, hi = self.ler_ci
        return {
            "shots": self.n_experiments,
            "logical_errors": self.n_logical_errors,
            "ler": self.ler,
            "ler_ci_lo": lo,
            "ler_ci_hi": hi,
            "accuracy": self.accuracy,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "lrcs_per_round": self.lrcs_per_round,
            "decoder_fallbacks": self.decoder_fallbacks,
        }


def aggregate(stream: Iterable[ShotStats]) -> AggregateStats:
    """Merge per-block statistics in iteration order."""
    acc: Optional[AggregateStats] = None
    for s in stream:
        cur = AggregateStats(
            n_qubits=s.n_qubits,
            n_experiments=s.n_experiments,
            n_logical_errors=s.n_logical_errors,
            leaked_sum=list(s.leaked_sum),
            leaked_sumsq=list(s.leaked_sumsq),
            lrc_count_total=s.lrc_count_total,
            decisions=s.decisions,
            tp=s.tp,
            fp=s.fp,
            fn=s.fn,
            tn=s.tn,
            decoder_fallbacks=s.decoder_fallbacks,
        )
        acc = cur if acc is None else acc.merge(cur)
    if acc is None or acc.n_experiments == 0:
        raise ValueError("cannot aggregate an empty stream")
    return acc
