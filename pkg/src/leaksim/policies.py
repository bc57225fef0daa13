"""LRC scheduling policies.

Every policy works on a batch of shots at once.  A decision is a
``(batch, n_data)`` array ``assign`` holding the partner parity id for each
data qubit in the next round, or -1.  Policies are consulted after each round
with that round's detection events and (for the oracle) the true leak flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .layout import (
    CodeLayout,
    RoundSchedule,
    SwapLookupTable,
    always_lrc_assignments,
    build_swap_lookup,
    lrc_round_schedule,
)
from .noise import NoiseParams, Readout, RngStreams

POLICY_NAMES = ("none", "always", "eraser", "eraser-m", "optimal")
LRC_KINDS = ("swap", "dqlr")
L_CLASS = 2


@dataclass
class Observation:
    round_index: int
    detection_row: np.ndarray  # (batch, n_parity) bool
    mld_row: Optional[np.ndarray]  # (batch, n_parity) class, multi-level only
    lrc_slots: np.ndarray  # (batch, n_parity) slot held an LRC data readout
    leaked_data: np.ndarray  # (batch, n_data) ground truth, oracle only


@dataclass
class LeakageTrackingTable:
    leaked_flag: np.ndarray
    lrc_last_round: np.ndarray

    @classmethod
    def empty(cls, batch: int, n_data: int) -> "LeakageTrackingTable":
        z = np.zeros((batch, n_data), dtype=bool)
        return cls(z, z.copy())


@dataclass
class ParityUsageTrackingTable:
    used_last_round: np.ndarray  # (batch, n_parity), indexed by record slot

    @classmethod
    def empty(cls, batch: int, n_parity: int) -> "ParityUsageTrackingTable":
        return cls(np.zeros((batch, n_parity), dtype=bool))


@dataclass
class PolicyDecision:
    assign: np.ndarray
    skipped: np.ndarray

    @classmethod
    def empty(cls, batch: int, n_data: int) -> "PolicyDecision":
        return cls(np.full((batch, n_data), -1, dtype=np.intp), np.zeros((batch, n_data), dtype=bool))

    @classmethod
    def from_map(cls, assignments: Dict[int, int], batch: int, n_data: int) -> "PolicyDecision":
        dec = cls.empty(batch, n_data)
        for d, p in assignments.items():
            dec.assign[:, d] = p
        return dec

    def assignments(self, shot: int = 0) -> Dict[int, int]:
        row = self.assign[shot]
        return {int(d): int(row[d]) for d in np.flatnonzero(row >= 0)}

    def skipped_list(self, shot: int = 0):
        return [int(d) for d in np.flatnonzero(self.skipped[shot])]

    @property
    def count(self) -> np.ndarray:
        return (self.assign >= 0).sum(axis=1)


# --- building blocks -----------------------------------------------------------


def _thresholds(layout: CodeLayout) -> np.ndarray:
    deg = np.array([len(layout.data_neighbors[q]) for q in layout.data_qubits])
    return (deg + 1) // 2


def lsb_speculate(
    ltt: LeakageTrackingTable, detection_row: np.ndarray, layout: CodeLayout
) -> LeakageTrackingTable:
    """Mark data qubits where at least half of the adjacent checks fired.

    Qubits that had an LRC in the round just observed are never marked.
    Flags are recomputed from scratch each round.
    """
    det = np.atleast_2d(np.asarray(detection_row, dtype=np.int32))
    counts = det @ layout.adjacency_matrix().astype(np.int32)
    marked = (counts >= _thresholds(layout)) & ~ltt.lrc_last_round
    return LeakageTrackingTable(marked, ltt.lrc_last_round.copy())


def lsb_speculate_multilevel(
    ltt: LeakageTrackingTable,
    mld_row: np.ndarray,
    layout: CodeLayout,
    detection_row: Optional[np.ndarray] = None,
    lrc_slots: Optional[np.ndarray] = None,
) -> LeakageTrackingTable:
    """Speculation with a multi-level discriminator.

    Adds every neighbour of a parity qubit read as L.  Slots that held an
    LRC data readout are not parity readouts and are ignored here.
    """
    mld = np.atleast_2d(mld_row)
    base = ltt if detection_row is None else lsb_speculate(ltt, detection_row, layout)
    is_l = mld == L_CLASS
    if lrc_slots is not None:
        is_l &= ~np.atleast_2d(lrc_slots)
    extra = (is_l.astype(np.int32) @ layout.adjacency_matrix().astype(np.int32)) > 0
    return LeakageTrackingTable(base.leaked_flag | extra, base.lrc_last_round.copy())


def dli_assign(
    ltt: LeakageTrackingTable,
    putt: ParityUsageTrackingTable,
    table: SwapLookupTable,
    layout: CodeLayout,
    exhaustive: bool = False,
):
    """Pair marked data qubits with free parities.

    Data qubits are visited in ascending index; each takes its primary, else
    its backup (``exhaustive`` tries every adjacent parity), skipping parities
    used last round or already taken.  Returns ``(decision, next_putt)``.
    """
    marked = np.atleast_2d(ltt.leaked_flag)
    batch, n_data = marked.shape
    dec = PolicyDecision.empty(batch, n_data)
    taken = putt.used_last_round.copy()
    fresh = np.zeros_like(taken)
    for q in range(n_data):
        want = marked[:, q]
        if not want.any():
            continue
        cands = layout.data_neighbors[q] if exhaustive else table.candidates(q)
        for p in cands:
            s = layout.slot(p)
            ok = want & (dec.assign[:, q] < 0) & ~taken[:, s]
            dec.assign[ok, q] = p
            taken[ok, s] = True
            fresh[ok, s] = True
        dec.skipped[:, q] = want & (dec.assign[:, q] < 0)
    return dec, ParityUsageTrackingTable(fresh)


def qsg_emit(layout: CodeLayout, decision: PolicyDecision, readout_mode=Readout.TWO_LEVEL, shot: int = 0) -> RoundSchedule:
    """Rewrite the base round with the LRCs of one shot's decision."""
    multi = Readout(readout_mode) is Readout.MULTI_LEVEL
    return lrc_round_schedule(layout, decision.assignments(shot), squash_on_leak=multi)


def optimal_policy(
    leak_flags: np.ndarray, table: SwapLookupTable, layout: CodeLayout
) -> PolicyDecision:
    """Oracle: schedule an LRC for every truly leaked data qubit."""
    flags = np.atleast_2d(np.asarray(leak_flags, dtype=bool))
    ltt = LeakageTrackingTable(flags, np.zeros_like(flags))
    putt = ParityUsageTrackingTable.empty(flags.shape[0], layout.n_parity)
    dec, _ = dli_assign(ltt, putt, table, layout, exhaustive=True)
    return dec


def dqlr_targets_to_plan(targets: np.ndarray, table: SwapLookupTable) -> np.ndarray:
    """Pair each DQLR target with its primary parity (repeats are layered)."""
    targets = np.atleast_2d(targets)
    prim = np.array([table.primary[q] for q in range(targets.shape[1])], dtype=np.intp)
    return np.where(targets, prim, -1)


def dqlr_round(layout: CodeLayout, targets: Iterable[int], params: NoiseParams, state, rng: RngStreams) -> None:
    """Apply the DQLR block (reset, LeakageISWAPs, reset) to every shot."""
    from .frame import RoundEngine

    mask = np.zeros((state.batch, layout.n_data), dtype=bool)
    mask[:, list(targets)] = True
    plan = dqlr_targets_to_plan(mask, build_swap_lookup(layout))
    RoundEngine(layout).dqlr(state, plan, params, rng, on=np.ones(state.batch, dtype=bool))


def score_decisions(audit) -> Dict[str, float]:
    truth = np.asarray(audit.truth, dtype=bool)
    action = np.asarray(audit.action, dtype=bool)
    if truth.size == 0:
        raise ValueError("empty audit")
    tp = int(np.sum(action & truth))
    fp = int(np.sum(action & ~truth))
    fn = int(np.sum(~action & truth))
    tn = int(np.sum(~action & ~truth))
    rounds, batch = truth.shape[0], truth.shape[1]
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
        "accuracy": (tp + tn) / truth.size,
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
        "fnr": fn / (fn + tp) if fn + tp else 0.0,
        "lrcs_per_round": (tp + fp) / (rounds * batch),
    }


# --- policies -------------------------------------------------------------------


@dataclass
class PolicyState:
    layout: CodeLayout
    table: SwapLookupTable
    ltt: LeakageTrackingTable
    putt: ParityUsageTrackingTable
    extra: dict = field(default_factory=dict)


class Policy:
    name = "base"
    squash_on_leak = False

    def __init__(self, lrc_kind: str = "swap"):
        if lrc_kind not in LRC_KINDS:
            raise ValueError(f"unknown lrc kind {lrc_kind!r}")
        self.lrc_kind = lrc_kind

    def new_state(self, layout: CodeLayout, batch: int) -> PolicyState:
        return PolicyState(
            layout=layout,
            table=build_swap_lookup(layout),
            ltt=LeakageTrackingTable.empty(batch, layout.n_data),
            putt=ParityUsageTrackingTable.empty(batch, layout.n_parity),
        )

    def initial(self, st: PolicyState) -> PolicyDecision:
        return PolicyDecision.empty(st.ltt.leaked_flag.shape[0], st.layout.n_data)

    def decide(self, st: PolicyState, obs: Observation) -> PolicyDecision:
        raise NotImplementedError


class NoLRC(Policy):
    name = "none"

    def decide(self, st, obs):
        return self.initial(st)


class AlwaysLRC(Policy):
    """Static schedule; with DQLR every data qubit is targeted every round."""

    name = "always"

    def decide(self, st, obs):
        batch = obs.detection_row.shape[0]
        if self.lrc_kind == "dqlr":
            plan = dqlr_targets_to_plan(np.ones((batch, st.layout.n_data), dtype=bool), st.table)
            return PolicyDecision(plan, np.zeros(plan.shape, dtype=bool))
        amap = always_lrc_assignments(st.layout, obs.round_index + 1, st.table)
        return PolicyDecision.from_map(amap, batch, st.layout.n_data)

    def initial(self, st):
        dec = super().initial(st)
        if self.lrc_kind == "dqlr":
            dec.assign[:] = dqlr_targets_to_plan(np.ones_like(dec.skipped), st.table)
        return dec


class EraserPolicy(Policy):
    name = "eraser"

    def _speculate(self, st: PolicyState, obs: Observation) -> LeakageTrackingTable:
        return lsb_speculate(st.ltt, obs.detection_row, st.layout)

    def decide(self, st, obs):
        ltt = self._speculate(st, obs)
        if self.lrc_kind == "dqlr":
            plan = dqlr_targets_to_plan(ltt.leaked_flag, st.table)
            dec = PolicyDecision(plan, np.zeros(plan.shape, dtype=bool))
        else:
            dec, st.putt = dli_assign(ltt, st.putt, st.table, st.layout)
        st.ltt = LeakageTrackingTable(ltt.leaked_flag, dec.assign >= 0)
        return dec


class EraserMPolicy(EraserPolicy):
    name = "eraser-m"
    squash_on_leak = True

    def _speculate(self, st, obs):
        ltt = lsb_speculate(st.ltt, obs.detection_row, st.layout)
        if obs.mld_row is None:
            return ltt
        return lsb_speculate_multilevel(ltt, obs.mld_row, st.layout, lrc_slots=obs.lrc_slots)


class OptimalPolicy(Policy):
    name = "optimal"

    def decide(self, st, obs):
        if self.lrc_kind == "dqlr":
            plan = dqlr_targets_to_plan(obs.leaked_data, st.table)
            return PolicyDecision(plan, np.zeros(plan.shape, dtype=bool))
        return optimal_policy(obs.leaked_data, st.table, st.layout)


_POLICIES = {
    "none": NoLRC,
    "always": AlwaysLRC,
    "eraser": EraserPolicy,
    "eraser-m": EraserMPolicy,
    "optimal": OptimalPolicy,
}


def make_policy(name: str, lrc_kind: str = "swap") -> Policy:
    try:
        cls = _POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}") from None
    return cls(lrc_kind)
