"""Pauli-frame simulation with leakage flags, vectorised over a batch of shots.

The state keeps, per physical qubit and shot, an X-frame bit, a Z-frame bit
(both relative to a noiseless reference run) and a leak flag.  Arrays are
qubit-major, shape ``(n_qubits, batch)``, so gathering the operands of a gate
layer is a contiguous row copy.

Gate primitives act on a whole layer of disjoint gates at once and accept an
optional ``active`` mask of shape ``(n_gates, batch)`` (or ``(batch,)`` for
all gates alike); this is how shots in one batch can run different LRC
schedules.  A leaked operand suppresses the frame action of H and CNOT; only
the disturbance and transport channels apply.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .layout import CodeLayout, RoundSchedule
from .noise import NoiseParams, Readout, RngStreams, TransportModel, depolarize1, depolarize2, pauli_bits


class MLDClass(enum.IntEnum):
    ZERO = 0
    ONE = 1
    L = 2


class ShotState:
    """Mutable simulation state for ``batch`` independent shots.

    Per-round logs (measurements, discriminator classes, LRC slot flags, leak
    flags) are stored shot-major, ``(batch, n)``.
    """

    def __init__(self, layout: CodeLayout, batch: int = 1, keep_flags: bool = True, log_shot: Optional[int] = None):
        n = layout.n_qubits
        self.layout = layout
        self.batch = batch
        self.x = np.zeros((n, batch), dtype=bool)
        self.z = np.zeros((n, batch), dtype=bool)
        self.leaked = np.zeros((n, batch), dtype=bool)
        self.round_index = 0
        self.measurement_log: List[np.ndarray] = []
        self.mld_log: List[np.ndarray] = []
        self.lrc_slot_log: List[np.ndarray] = []
        self.leak_counts: List[np.ndarray] = []
        self.leak_flags: List[np.ndarray] = []
        self.keep_flags = keep_flags
        self.cnots = np.zeros(batch, dtype=np.int64)
        self.resets = np.zeros(batch, dtype=np.int64)
        self.log: Optional[List[str]] = [] if log_shot is not None else None
        self.log_shot = log_shot
        self._gate = ""
        self._rec = np.zeros((layout.n_parity, batch), dtype=bool)
        self._cls = np.zeros((layout.n_parity, batch), dtype=np.int8)
        self._lrc = np.zeros((layout.n_parity, batch), dtype=bool)

    @property
    def leak_trace(self) -> "LeakTrace":
        flags = np.stack(self.leak_flags) if self.leak_flags else None
        counts = np.stack(self.leak_counts) if self.leak_counts else np.zeros((0, self.batch), dtype=np.int32)
        return LeakTrace(counts=counts, flags=flags)

    def _note(self, what: str, qubits, mask, col: Optional[int] = None) -> None:
        if self.log is None:
            return
        qs = np.atleast_1d(qubits)
        mask = np.asarray(mask)
        c = self.log_shot if col is None else col
        hit = mask[:, c] if mask.ndim == 2 else mask
        hit = np.broadcast_to(hit, qs.shape)
        for q in qs[hit]:
            self.log.append(f"round={self.round_index} gate={self._gate} qubit={int(q)} event={what}")


@dataclass
class LeakTrace:
    counts: np.ndarray  # (rounds, batch)
    flags: Optional[np.ndarray] = None  # (rounds, batch, n_qubits)


@dataclass
class DetectionEvents:
    """Detection events of a memory-Z experiment.

    ``rounds[b, r, s]`` is ``m(s, r) xor m(s, r-1)`` for every stabilizer
    slot; X-type entries of round 0 are forced to 0.  ``final[b, k]`` is the
    data-measurement layer for the k-th Z-type stabilizer.
    """

    rounds: np.ndarray
    final: np.ndarray
    z_slots: np.ndarray

    def z_sector(self) -> np.ndarray:
        """(batch, (rounds+1) * n_z) array in decoder node order."""
        b = self.rounds.shape[0]
        zs = self.rounds[:, :, self.z_slots]
        return np.concatenate([zs.reshape(b, -1), self.final], axis=1)


@dataclass
class PolicyAudit:
    truth: np.ndarray  # (rounds, batch, n_data) leak flag at decision time
    action: np.ndarray  # (rounds, batch, n_data) LRC scheduled
    skipped: np.ndarray  # (rounds, batch, n_data)


@dataclass
class MemoryResult:
    events: DetectionEvents
    final_data_bits: np.ndarray
    leak_trace: LeakTrace
    audit: PolicyAudit
    observed_flip: np.ndarray
    cnots: np.ndarray = field(default_factory=lambda: np.zeros(0))


# --- primitives --------------------------------------------------------------


def _idx(q) -> np.ndarray:
    return np.atleast_1d(np.asarray(q, dtype=np.intp))


def _mask(state: ShotState, active, n: int) -> np.ndarray:
    if active is None:
        return np.ones((n, state.batch), dtype=bool)
    a = np.asarray(active, dtype=bool)
    if a.ndim == 1:
        a = a[None, :]
    return np.broadcast_to(a, (n, state.batch))


def _cnot_kernel(x, z, lk, c, t, act, params: NoiseParams, rng: RngStreams, note=None) -> None:
    shape = (len(c), x.shape[1])
    lc, lt = lk[c], lk[t]
    ok = act & ~lc & ~lt
    one = act & (lc ^ lt)

    x[t] ^= x[c] & ok
    z[c] ^= z[t] & ok

    x1, z1, x2, z2 = depolarize2(rng.pauli, shape, params.p)
    x[c] ^= x1 & ok
    z[c] ^= z1 & ok
    x[t] ^= x2 & ok
    z[t] ^= z2 & ok

    p_leak = params.effective_p_leak
    if p_leak > 0:
        inj_c = ok & (rng.leak.random(shape) < p_leak)
        inj_t = ok & (rng.leak.random(shape) < p_leak)
        lk[c] |= inj_c
        lk[t] |= inj_t
        if note is not None:
            note("leak-injected", c, inj_c)
            note("leak-injected", t, inj_t)
    if not one.any():
        return
    # One operand leaked: uniform {I,X,Y,Z} on the other, then maybe transport.
    rp = rng.leak.integers(0, 4, size=shape, dtype=np.int8)
    tr = rng.leak.random(shape) < params.p_lt
    px, pz = pauli_bits(rp)
    hit_t, hit_c = one & lc, one & lt
    x[t] ^= px & hit_t
    z[t] ^= pz & hit_t
    x[c] ^= px & hit_c
    z[c] ^= pz & hit_c
    to_t, to_c = hit_t & tr, hit_c & tr
    lk[c] |= to_c
    lk[t] |= to_t
    if params.transport_model is TransportModel.EXCHANGE:
        # Source returns to a random computational state.
        rx = rng.leak.random(shape) < 0.5
        rz = rng.leak.random(shape) < 0.5
        lk[c] &= ~to_t
        lk[t] &= ~to_c
        x[c] = np.where(to_t, rx, x[c])
        z[c] = np.where(to_t, rz, z[c])
        x[t] = np.where(to_c, rx, x[t])
        z[t] = np.where(to_c, rz, z[t])
    if note is not None:
        note("transport-in", t, to_t)
        note("transport-in", c, to_c)


def apply_cnot(state: ShotState, control, target, params: NoiseParams, rng: RngStreams, active=None) -> None:
    """Noisy CNOT layer.  With a mask, only shots with an active gate draw randomness."""
    c, t = _idx(control), _idx(target)
    if np.any(c == t):
        raise ValueError("control and target must differ")
    act = _mask(state, active, len(c))
    state.cnots += act.sum(axis=0)
    cols = np.flatnonzero(act.any(axis=0)) if active is not None else None
    if cols is None or len(cols) == state.batch:
        note = state._note if state.log is not None else None
        _cnot_kernel(state.x, state.z, state.leaked, c, t, act, params, rng, note)
        return
    if len(cols) == 0:
        return
    note = None
    if state.log is not None and state.log_shot in cols:
        pos = int(np.searchsorted(cols, state.log_shot))
        note = lambda what, q, m: state._note(what, q, m, col=pos)  # noqa: E731
    x, z, lk = state.x[:, cols], state.z[:, cols], state.leaked[:, cols]
    _cnot_kernel(x, z, lk, c, t, act[:, cols], params, rng, note)
    state.x[:, cols], state.z[:, cols], state.leaked[:, cols] = x, z, lk


def apply_hadamard(state: ShotState, qubits, params: NoiseParams, rng: RngStreams, active=None) -> None:
    q = _idx(qubits)
    act = _mask(state, active, len(q))
    ok = act & ~state.leaked[q]
    xq, zq = state.x[q], state.z[q]
    state.x[q] = np.where(ok, zq, xq)
    state.z[q] = np.where(ok, xq, zq)
    fx, fz = depolarize1(rng.pauli, (len(q), state.batch), params.p)
    state.x[q] ^= fx & act
    state.z[q] ^= fz & act


def apply_reset(state: ShotState, qubits, params: NoiseParams, rng: RngStreams, active=None) -> None:
    q = _idx(qubits)
    act = _mask(state, active, len(q))
    err = rng.meas.random((len(q), state.batch)) < params.p_init
    state.leaked[q] &= ~act
    state.x[q] = np.where(act, err, state.x[q])
    state.z[q] &= ~act
    state.resets += act.sum(axis=0)


def apply_measure_reset(
    state: ShotState,
    qubits,
    slots,
    params: NoiseParams,
    rng: RngStreams,
    readout: Readout = Readout.TWO_LEVEL,
    active=None,
):
    """Measure in Z into record ``slots``, then reset.

    The syndrome bit always follows two-level physics: reference-relative
    X-frame with a ``p_meas`` flip, a fair coin if leaked.  In multi-level
    mode the discriminator additionally reports a class, replaced with
    probability ``p_mld_err`` by a uniformly random different class.
    Returns ``(bits, classes)`` shaped ``(n_gates, batch)``; ``classes`` is
    None in two-level mode.
    """
    q, s = _idx(qubits), _idx(slots)
    shape = (len(q), state.batch)
    act = _mask(state, active, len(q))
    lk = state.leaked[q]
    flip = rng.meas.random(shape) < params.p_meas
    coin = rng.leak.random(shape) < 0.5
    bits = np.where(lk, coin, state.x[q] ^ flip)
    state._rec[s] = np.where(act, bits, state._rec[s])
    cls = None
    if Readout(readout) is Readout.MULTI_LEVEL:
        true_cls = np.where(lk, MLDClass.L, state.x[q]).astype(np.int8)
        wrong = rng.meas.random(shape) < params.p_mld_err
        shift = rng.meas.integers(1, 3, size=shape, dtype=np.int8)
        cls = np.where(wrong, (true_cls + shift) % 3, true_cls).astype(np.int8)
        state._cls[s] = np.where(act, cls, state._cls[s])
    state._note("readout-flip", q, act & flip & ~lk)
    apply_reset(state, q, params, rng, act)
    return bits, cls


def apply_leakage_iswap(state: ShotState, data, parity, params: NoiseParams, rng: RngStreams, active=None) -> None:
    """LeakageISWAP between a data qubit and a freshly reset parity qubit.

    A leaked data qubit hands its leakage to the parity (whose reset comes
    next) and returns to a random computational state.  If the parity's
    reset failed (it sits in |1>), an unleaked data qubit is excited to |L>
    with probability 1/2.  Gate noise matches a CNOT.
    """
    d, p = _idx(data), _idx(parity)
    shape = (len(d), state.batch)
    act = _mask(state, active, len(d))
    ld, lp = state.leaked[d], state.leaked[p]
    failed = ~lp & state.x[p]
    coin = rng.leak.random(shape) < 0.5
    rx = rng.leak.random(shape) < 0.5
    rz = rng.leak.random(shape) < 0.5
    move = act & ld & ~lp & ~failed
    excite = act & ~ld & failed & coin
    state.leaked[d] = (ld & ~move) | excite
    state.leaked[p] = lp | move
    state.x[d] = np.where(move, rx, state.x[d])
    state.z[d] = np.where(move, rz, state.z[d])

    x1, z1, x2, z2 = depolarize2(rng.pauli, shape, params.p)
    ok = act & ~state.leaked[d] & ~state.leaked[p]
    state.x[d] ^= x1 & ok
    state.z[d] ^= z1 & ok
    state.x[p] ^= x2 & ok
    state.z[p] ^= z2 & ok
    p_leak = params.effective_p_leak
    if p_leak > 0:
        state.leaked[d] |= ok & (rng.leak.random(shape) < p_leak)
        state.leaked[p] |= ok & (rng.leak.random(shape) < p_leak)
    state.cnots += act.sum(axis=0)
    state._note("iswap-excite", d, excite)


def data_round_noise(state: ShotState, params: NoiseParams, rng: RngStreams) -> None:
    """Start-of-round channel on data qubits: depolarizing, injection, seepage."""
    n = state.layout.n_data
    shape = (n, state.batch)
    fx, fz = depolarize1(rng.pauli, shape, params.p)
    state.x[:n] ^= fx
    state.z[:n] ^= fz
    state._gate = "round-start"
    if not params.leakage_enabled:
        return
    u_inj = rng.leak.random(shape)
    u_seep = rng.leak.random(shape)
    was = state.leaked[:n]
    seep = was & (u_seep < params.effective_p_seep)
    inj = ~was & (u_inj < params.effective_p_leak)
    state.leaked[:n] = (was & ~seep) | inj
    if seep.any():
        rx = rng.leak.random(shape) < 0.5
        rz = rng.leak.random(shape) < 0.5
        state.x[:n] = np.where(seep, rx, state.x[:n])
        state.z[:n] = np.where(seep, rz, state.z[:n])
    state._note("leak-injected", np.arange(n), inj)
    state._note("seepage", np.arange(n), seep)


def measure_data_final(state: ShotState, params: NoiseParams, rng: RngStreams) -> np.ndarray:
    """Transversal Z readout of the data qubits, shot-major ``(batch, n_data)``."""
    n = state.layout.n_data
    shape = (n, state.batch)
    flip = rng.meas.random(shape) < params.p_meas
    coin = rng.leak.random(shape) < 0.5
    lk = state.leaked[:n]
    return np.where(lk, coin, state.x[:n] ^ flip).T.copy()


def _randomize(state: ShotState, qubits, mask, rng: RngStreams) -> None:
    q = _idx(qubits)
    m = _mask(state, mask, len(q))
    rx = rng.leak.random((len(q), state.batch)) < 0.5
    rz = rng.leak.random((len(q), state.batch)) < 0.5
    state.x[q] = np.where(m, rx, state.x[q])
    state.z[q] = np.where(m, rz, state.z[q])


# --- rounds -------------------------------------------------------------------


def _begin_round(state: ShotState) -> None:
    state._rec[:] = False
    state._cls[:] = MLDClass.ZERO
    state._lrc[:] = False


def _end_round(state: ShotState) -> None:
    state.measurement_log.append(state._rec.T.copy())
    state.mld_log.append(state._cls.T.copy())
    state.lrc_slot_log.append(state._lrc.T.copy())
    state.leak_counts.append(state.leaked.sum(axis=0).astype(np.int32))
    if state.keep_flags:
        state.leak_flags.append(state.leaked.T.copy())
    state.round_index += 1


def run_round(
    state: ShotState,
    schedule: RoundSchedule,
    params: NoiseParams,
    rng: RngStreams,
    readout: Readout = Readout.TWO_LEVEL,
) -> None:
    """Execute one explicit round schedule on every shot of ``state``."""
    lay = state.layout
    _begin_round(state)
    data_round_noise(state, params, rng)
    squash = {}
    for li, layer in enumerate(schedule.timesteps):
        state._gate = f"layer{li}"
        by_kind = {}
        for g in layer:
            by_kind.setdefault(g.kind, []).append(g)
        for kind, gates in by_kind.items():
            if kind == "R":
                apply_reset(state, [g.qubits[0] for g in gates], params, rng)
            elif kind == "H":
                apply_hadamard(state, [g.qubits[0] for g in gates], params, rng)
            elif kind == "CX":
                act = np.ones((len(gates), state.batch), dtype=bool)
                for i, g in enumerate(gates):
                    if g.squash_on >= 0 and g.squash_on in squash:
                        act[i] = ~squash[g.squash_on]
                apply_cnot(state, [g.qubits[0] for g in gates], [g.qubits[1] for g in gates], params, rng, act)
            elif kind == "M":
                qs = [g.qubits[0] for g in gates]
                slots = [g.slot for g in gates]
                _, cls = apply_measure_reset(state, qs, slots, params, rng, readout)
                for i, q in enumerate(qs):
                    if q < lay.n_data:
                        state._lrc[slots[i]] = True
                        if cls is not None:
                            squash[q] = cls[i] == MLDClass.L
            elif kind == "CR":
                for g in gates:
                    p, d = g.qubits
                    hit = squash.get(d, np.zeros(state.batch, dtype=bool))
                    apply_reset(state, [p], params, rng, hit)
                    _randomize(state, [d], hit, rng)
            elif kind == "LISWAP":
                apply_leakage_iswap(
                    state, [g.qubits[0] for g in gates], [g.qubits[1] for g in gates], params, rng
                )
            else:
                raise ValueError(f"unknown gate kind {kind!r}")
    _end_round(state)


class RoundEngine:
    """Precompiled round executor where each shot carries its own LRC plan.

    ``swap`` and ``dqlr`` plans are shot-major ``(batch, n_data)`` arrays
    holding the partner parity id of each data qubit, or -1.
    """

    def __init__(self, layout: CodeLayout):
        self.layout = layout
        lay = layout
        self.parities = np.array(lay.parity_qubits, dtype=np.intp)
        self.slots = self.parities - lay.n_data
        self.xs = np.array(lay.x_parities(), dtype=np.intp)
        self.cnot = []
        for layer in lay.cnot_layers:
            c, t = [], []
            for p, q in layer:
                if lay.parity_type[p] == "X":
                    c.append(p)
                    t.append(q)
                else:
                    c.append(q)
                    t.append(p)
            self.cnot.append((np.array(c, dtype=np.intp), np.array(t, dtype=np.intp)))
        self.classes = lay.edge_classes()

    def _class_masks(self, plan: np.ndarray) -> List[np.ndarray]:
        pt = plan.T
        return [pt[d] == p[:, None] for d, p in self.classes]

    def run(
        self,
        state: ShotState,
        params: NoiseParams,
        rng: RngStreams,
        readout: Readout = Readout.TWO_LEVEL,
        swap: Optional[np.ndarray] = None,
        dqlr: Optional[np.ndarray] = None,
        squash_on_leak: bool = False,
    ) -> None:
        lay = self.layout
        _begin_round(state)
        data_round_noise(state, params, rng)
        state._gate = "reset"
        apply_reset(state, self.parities, params, rng)
        state._gate = "h"
        apply_hadamard(state, self.xs, params, rng)
        for k, (c, t) in enumerate(self.cnot):
            state._gate = f"cx{k}"
            apply_cnot(state, c, t, params, rng)
        state._gate = "h"
        apply_hadamard(state, self.xs, params, rng)

        masks = None
        if swap is not None and np.any(swap >= 0):
            masks = self._class_masks(swap)
            for step, fwd in enumerate((True, False, True)):
                state._gate = f"swap{step}"
                for (d, p), m in zip(self.classes, masks):
                    if m.any():
                        apply_cnot(state, p if fwd else d, d if fwd else p, params, rng, m)

        state._gate = "measure"
        in_lrc = np.zeros((lay.n_parity, state.batch), dtype=bool)
        if masks is not None:
            for (d, p), m in zip(self.classes, masks):
                in_lrc[p - lay.n_data] |= m
        apply_measure_reset(state, self.parities, self.slots, params, rng, readout, ~in_lrc)

        if masks is not None:
            squashes = []
            for (d, p), m in zip(self.classes, masks):
                if not m.any():
                    squashes.append(np.zeros_like(m))
                    continue
                _, cls = apply_measure_reset(state, d, p - lay.n_data, params, rng, readout, m)
                state._lrc[p - lay.n_data] |= m
                if squash_on_leak and cls is not None:
                    squashes.append(m & (cls == MLDClass.L))
                else:
                    squashes.append(np.zeros_like(m))
            for step, fwd in enumerate((True, False)):
                state._gate = f"swapback{step}"
                for (d, p), m, sq in zip(self.classes, masks, squashes):
                    if m.any():
                        apply_cnot(state, p if fwd else d, d if fwd else p, params, rng, m & ~sq)
            state._gate = "squash"
            for (d, p), sq in zip(self.classes, squashes):
                if sq.any():
                    apply_reset(state, p, params, rng, sq)
                    _randomize(state, d, sq, rng)

        if dqlr is not None and np.any(dqlr >= 0):
            self.dqlr(state, dqlr, params, rng)
        _end_round(state)

    def dqlr(self, state: ShotState, plan: np.ndarray, params: NoiseParams, rng: RngStreams, on=None) -> None:
        """Reset parities, LeakageISWAP sub-layers, reset parities again.

        Data qubits sharing a parity go to successive sub-layers, each
        followed by a parity reset.  ``on`` selects the shots that run the
        block (default: shots with at least one target).
        """
        lay = self.layout
        if on is None:
            on = np.any(plan >= 0, axis=1)
        layer_of = np.full(plan.shape, -1, dtype=np.int8)
        uses = np.zeros((state.batch, lay.n_qubits), dtype=np.int8)
        rows = np.arange(state.batch)
        for q in range(lay.n_data):
            tgt = plan[:, q] >= 0
            if not tgt.any():
                continue
            p = plan[tgt, q]
            layer_of[tgt, q] = uses[rows[tgt], p]
            uses[rows[tgt], p] += 1
        state._gate = "dqlr-reset"
        apply_reset(state, self.parities, params, rng, on)
        pt, lt = plan.T, layer_of.T
        for sub in range(max(int(layer_of.max()) + 1, 1)):
            state._gate = f"dqlr-iswap{sub}"
            for d, p in self.classes:
                m = (pt[d] == p[:, None]) & (lt[d] == sub)
                if m.any():
                    apply_leakage_iswap(state, d, p, params, rng, m)
            state._gate = "dqlr-reset"
            apply_reset(state, self.parities, params, rng, on)


def detection_row(layout: CodeLayout, records: List[np.ndarray], r: int) -> np.ndarray:
    """Detection events of round ``r`` for every stabilizer slot, ``(batch, n_parity)``."""
    cur = records[r]
    if r == 0:
        ev = cur.copy()
        ev[:, [layout.slot(p) for p in layout.x_parities()]] = False
        return ev
    return cur ^ records[r - 1]


def detection_events(layout: CodeLayout, records: List[np.ndarray], final: np.ndarray) -> DetectionEvents:
    rounds = np.stack([detection_row(layout, records, r) for r in range(len(records))], axis=1)
    zs = layout.z_parities()
    z_slots = np.array([layout.slot(p) for p in zs], dtype=np.intp)
    last = records[-1]
    fin = np.zeros((final.shape[0], len(zs)), dtype=bool)
    for k, p in enumerate(zs):
        fin[:, k] = final[:, list(layout.stabilizer_support[p])].sum(axis=1) % 2 == 1
        fin[:, k] ^= last[:, layout.slot(p)]
    return DetectionEvents(rounds=rounds.astype(np.uint8), final=fin.astype(np.uint8), z_slots=z_slots)


def run_memory_experiment(
    layout: CodeLayout,
    params: NoiseParams,
    policy,
    rounds: int,
    rng: RngStreams,
    batch: int = 1,
    readout: Readout | str = Readout.TWO_LEVEL,
    keep_flags: bool = True,
    log_shot: Optional[int] = None,
    state: Optional[ShotState] = None,
) -> MemoryResult:
    """Run a memory-Z experiment for ``batch`` shots.

    ``policy`` is any object with ``new_state``, ``initial`` and ``decide``
    (see :mod:`leaksim.policies`), or None for no LRCs.  The policy is
    consulted after every round with that round's detection events; the
    audit pairs each per-qubit decision with the true leak flags at decision
    time.
    """
    from .policies import NoLRC, Observation

    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    readout = Readout(readout)
    policy = policy or NoLRC()
    engine = RoundEngine(layout)
    st = state or ShotState(layout, batch, keep_flags=keep_flags, log_shot=log_shot)
    batch = st.batch
    pst = policy.new_state(layout, batch)
    n_data = layout.n_data

    truth = np.zeros((rounds, batch, n_data), dtype=bool)
    action = np.zeros((rounds, batch, n_data), dtype=bool)
    skipped = np.zeros((rounds, batch, n_data), dtype=bool)
    decision = policy.initial(pst)
    for r in range(rounds):
        truth[r] = st.leaked[:n_data].T
        action[r] = decision.assign >= 0
        skipped[r] = decision.skipped
        swap = decision.assign if policy.lrc_kind == "swap" else None
        dq = decision.assign if policy.lrc_kind == "dqlr" else None
        engine.run(st, params, rng, readout, swap=swap, dqlr=dq, squash_on_leak=policy.squash_on_leak)
        if r + 1 < rounds:
            obs = Observation(
                round_index=r,
                detection_row=detection_row(layout, st.measurement_log, r),
                mld_row=st.mld_log[r] if readout is Readout.MULTI_LEVEL else None,
                lrc_slots=st.lrc_slot_log[r],
                leaked_data=st.leaked[:n_data].T.copy(),
            )
            decision = policy.decide(pst, obs)

    final = measure_data_final(st, params, rng)
    return MemoryResult(
        events=detection_events(layout, st.measurement_log, final),
        final_data_bits=final,
        leak_trace=st.leak_trace,
        audit=PolicyAudit(truth=truth, action=action, skipped=skipped),
        observed_flip=final[:, list(layout.logical_z_support)].sum(axis=1) % 2 == 1,
        cnots=st.cnots.copy(),
    )
