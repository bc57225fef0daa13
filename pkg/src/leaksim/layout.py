"""Rotated surface-code lattice, syndrome-extraction schedules and SWAP tables.

Coordinates follow the usual rotated-lattice picture: data qubits sit at odd
``(x, y)`` in ``[1, 2d-1]``, parity qubits at even coordinates.  ``y`` grows
downward.  X-type boundaries are the top and bottom edges, so logical X is a
vertical string and logical Z (the observable of a memory-Z experiment) is
the top data row.

Qubit ids are dense: data qubits ``0 .. d*d-1`` in row-major order, then the
``d*d-1`` parity qubits in row-major order of their coordinates.  A parity's
*local* index (``id - n_data``) doubles as its measurement record slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

# Data offset relative to its parity qubit, and the CNOT timestep order.
NW, NE, SW, SE = (-1, -1), (1, -1), (-1, 1), (1, 1)
DIRECTIONS = (NW, NE, SW, SE)
# Hook errors of X-type checks end up horizontal, perpendicular to logical X.
X_ORDER = (NW, NE, SW, SE)
Z_ORDER = (NW, SW, NE, SE)

MIN_DISTANCE = 3
MAX_DISTANCE = 13


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    """One instruction of a round schedule.

    ``kind`` is one of ``R`` (reset to |0>), ``H``, ``CX`` (qubits are
    ``(control, target)``), ``M`` (measure+reset into record ``slot``),
    ``CR`` (reset ``qubits[0]`` if the multi-level readout of ``qubits[1]``
    was L) and ``LISWAP`` (leakage iSWAP, qubits ``(data, parity)``).
    ``squash_on`` marks swap-back CNOTs that are skipped when the readout of
    that data qubit classifies L.
    """

    kind: str
    qubits: Tuple[int, ...]
    slot: int = -1
    squash_on: int = -1


@dataclass(frozen=True)
class RoundSchedule:
    timesteps: Tuple[Tuple[Gate, ...], ...]
    lrc_assignments: Mapping[int, int] = field(default_factory=dict)
    dqlr_enabled: bool = False

    def gates(self, kind: Optional[str] = None):
        for layer in self.timesteps:
            for g in layer:
                if kind is None or g.kind == kind:
                    yield g

    def count(self, kind: str) -> int:
        return sum(1 for _ in self.gates(kind))

    def cnot_count(self, qubit: int) -> int:
        return sum(1 for g in self.gates("CX") if qubit in g.qubits)

    def validate(self) -> None:
        for i, layer in enumerate(self.timesteps):
            seen = set()
            for g in layer:
                for q in g.qubits:
                    if q in seen:
                        raise LayoutError(f"qubit {q} used twice in layer {i}")
                    seen.add(q)


@dataclass(frozen=True)
class SwapLookupTable:
    primary: Dict[int, int]
    backup: Dict[int, int]
    # Data qubit left out of the d^2-1 perfect matching used by Always-LRCs.
    leftover: int

    def candidates(self, data: int) -> Tuple[int, ...]:
        p, b = self.primary[data], self.backup[data]
        return (p,) if p == b else (p, b)


@dataclass(frozen=True)
class CodeLayout:
    distance: int
    data_qubits: Tuple[int, ...]
    parity_qubits: Tuple[int, ...]
    parity_type: Dict[int, str]
    stabilizer_support: Dict[int, Tuple[int, ...]]
    data_neighbors: Dict[int, Tuple[int, ...]]
    logical_z_support: Tuple[int, ...]
    coords: Dict[int, Tuple[int, int]]
    # cnot_layers[k] lists (parity, data) pairs touched in CNOT timestep k.
    cnot_layers: Tuple[Tuple[Tuple[int, int], ...], ...]

    @property
    def n_data(self) -> int:
        return len(self.data_qubits)

    @property
    def n_parity(self) -> int:
        return len(self.parity_qubits)

    @property
    def n_qubits(self) -> int:
        return self.n_data + self.n_parity

    def slot(self, parity: int) -> int:
        return parity - self.n_data

    def x_parities(self) -> List[int]:
        return [p for p in self.parity_qubits if self.parity_type[p] == "X"]

    def z_parities(self) -> List[int]:
        return [p for p in self.parity_qubits if self.parity_type[p] == "Z"]

    def is_adjacent(self, data: int, parity: int) -> bool:
        return data in self.stabilizer_support.get(parity, ())

    def direction(self, data: int, parity: int) -> int:
        """Index into DIRECTIONS of ``data`` as seen from ``parity``."""
        (dx, dy), (px, py) = self.coords[data], self.coords[parity]
        return DIRECTIONS.index((dx - px, dy - py))

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean (n_parity, n_data) incidence matrix."""
        a = np.zeros((self.n_parity, self.n_data), dtype=bool)
        for p, sup in self.stabilizer_support.items():
            a[self.slot(p), list(sup)] = True
        return a

    def edge_classes(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Data/parity edges split by direction; each class is a matching."""
        out = []
        for k in range(4):
            ds, ps = [], []
            for p in self.parity_qubits:
                for d in self.stabilizer_support[p]:
                    if self.direction(d, p) == k:
                        ds.append(d)
                        ps.append(p)
            out.append((np.array(ds, dtype=np.intp), np.array(ps, dtype=np.intp)))
        return out

    def to_json(self) -> str:
        doc = {
            "distance": self.distance,
            "qubits": [
                {
                    "id": q,
                    "role": "data" if q < self.n_data else "parity",
                    "type": self.parity_type.get(q),
                    "coord": list(self.coords[q]),
                }
                for q in range(self.n_qubits)
            ],
            "stabilizers": {str(p): list(s) for p, s in self.stabilizer_support.items()},
            "data_neighbors": {str(d): list(n) for d, n in self.data_neighbors.items()},
            "cnot_layers": [[list(pair) for pair in layer] for layer in self.cnot_layers],
            "logical_z": list(self.logical_z_support),
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def _parity_kind(i: int, j: int, d: int) -> Optional[str]:
    """Type of the plaquette centred at (2i, 2j), or None if absent."""
    kind = "X" if (i + j) % 2 == 0 else "Z"
    interior_x = 0 < i < d
    interior_y = 0 < j < d
    if interior_x and interior_y:
        return kind
    if interior_x and j in (0, d):
        return kind if kind == "X" else None
    if interior_y and i in (0, d):
        return kind if kind == "Z" else None
    return None


def build_layout(distance: int) -> CodeLayout:
    d = distance
    if not isinstance(d, (int, np.integer)) or d % 2 == 0 or not MIN_DISTANCE <= d <= MAX_DISTANCE:
        raise LayoutError(f"distance must be odd and in [{MIN_DISTANCE}, {MAX_DISTANCE}], got {distance!r}")
    d = int(d)

    coords: Dict[int, Tuple[int, int]] = {}
    at: Dict[Tuple[int, int], int] = {}
    for r in range(d):
        for c in range(d):
            q = r * d + c
            coords[q] = (2 * c + 1, 2 * r + 1)
            at[coords[q]] = q

    parity_type: Dict[int, str] = {}
    nxt = d * d
    for j in range(d + 1):
        for i in range(d + 1):
            kind = _parity_kind(i, j, d)
            if kind is None:
                continue
            coords[nxt] = (2 * i, 2 * j)
            parity_type[nxt] = kind
            nxt += 1

    layers: List[List[Tuple[int, int]]] = [[] for _ in range(4)]
    support: Dict[int, Tuple[int, ...]] = {}
    for p, kind in parity_type.items():
        px, py = coords[p]
        order = X_ORDER if kind == "X" else Z_ORDER
        sup = []
        for k, (dx, dy) in enumerate(order):
            q = at.get((px + dx, py + dy))
            if q is not None:
                sup.append(q)
                layers[k].append((p, q))
        support[p] = tuple(sup)

    neighbors: Dict[int, List[int]] = {q: [] for q in range(d * d)}
    for p, sup in support.items():
        for q in sup:
            neighbors[q].append(p)

    return CodeLayout(
        distance=d,
        data_qubits=tuple(range(d * d)),
        parity_qubits=tuple(sorted(parity_type)),
        parity_type=parity_type,
        stabilizer_support=support,
        data_neighbors={q: tuple(sorted(n)) for q, n in neighbors.items()},
        logical_z_support=tuple(range(d)),
        coords=coords,
        cnot_layers=tuple(tuple(layer) for layer in layers),
    )


def _cx(layout: CodeLayout, parity: int, data: int) -> Gate:
    if layout.parity_type[parity] == "X":
        return Gate("CX", (parity, data))
    return Gate("CX", (data, parity))


def _check_assignments(layout: CodeLayout, assignments: Mapping[int, int]) -> None:
    used = set()
    for d, p in assignments.items():
        if p not in layout.parity_type or not layout.is_adjacent(d, p):
            raise LayoutError(f"parity {p} is not adjacent to data qubit {d}")
        if p in used:
            raise LayoutError(f"parity {p} assigned to more than one data qubit")
        used.add(p)


def lrc_round_schedule(
    layout: CodeLayout,
    assignments: Mapping[int, int],
    squash_on_leak: bool = False,
) -> RoundSchedule:
    """Syndrome-extraction round with SWAP-LRCs for the given (data -> parity) pairs.

    Each pair adds a 3-CNOT SWAP after the stabilizer CNOTs, measures the
    data qubit into the parity's record slot (measure includes reset), then
    swaps back with 2 CNOTs.  With ``squash_on_leak`` the swap-back is
    conditional on the data readout not being L, and a conditional reset of
    the parity qubit is appended.
    """
    _check_assignments(layout, assignments)
    xs = layout.x_parities()
    steps: List[Tuple[Gate, ...]] = [
        tuple(Gate("R", (p,)) for p in layout.parity_qubits),
        tuple(Gate("H", (p,)) for p in xs),
    ]
    for layer in layout.cnot_layers:
        steps.append(tuple(_cx(layout, p, q) for p, q in layer))
    steps.append(tuple(Gate("H", (p,)) for p in xs))

    pairs = sorted(assignments.items())
    if pairs:
        for fwd in (True, False, True):
            steps.append(tuple(Gate("CX", (p, d) if fwd else (d, p)) for d, p in pairs))

    lrc_parities = {p for _, p in pairs}
    meas = [Gate("M", (p,), slot=layout.slot(p)) for p in layout.parity_qubits if p not in lrc_parities]
    meas += [Gate("M", (d,), slot=layout.slot(p)) for d, p in pairs]
    steps.append(tuple(meas))

    if pairs:
        sq = (lambda d: d) if squash_on_leak else (lambda d: -1)
        steps.append(tuple(Gate("CX", (p, d), squash_on=sq(d)) for d, p in pairs))
        steps.append(tuple(Gate("CX", (d, p), squash_on=sq(d)) for d, p in pairs))
        if squash_on_leak:
            steps.append(tuple(Gate("CR", (p, d)) for d, p in pairs))

    sched = RoundSchedule(timesteps=tuple(steps), lrc_assignments=dict(pairs))
    sched.validate()
    return sched


def base_round_schedule(layout: CodeLayout) -> RoundSchedule:
    return lrc_round_schedule(layout, {})


def dqlr_round_schedule(layout: CodeLayout, pairs: Sequence[Tuple[int, int]]) -> RoundSchedule:
    """Base round followed by the DQLR block: reset, LeakageISWAP layer(s), reset.

    ``pairs`` are (data, parity) with a parity possibly repeated; repeated
    parities go into later sub-layers, each followed by a parity reset.
    """
    base = base_round_schedule(layout)
    steps = list(base.timesteps)
    resets = tuple(Gate("R", (p,)) for p in layout.parity_qubits)
    pending = list(pairs)
    if pending:
        steps.append(resets)
    while pending:
        used, layer, rest = set(), [], []
        for d, p in pending:
            if p in used or not layout.is_adjacent(d, p):
                if not layout.is_adjacent(d, p):
                    raise LayoutError(f"parity {p} is not adjacent to data qubit {d}")
                rest.append((d, p))
                continue
            used.add(p)
            layer.append(Gate("LISWAP", (d, p)))
        steps.append(tuple(layer))
        steps.append(resets)
        pending = rest
    sched = RoundSchedule(timesteps=tuple(steps), dqlr_enabled=True)
    sched.validate()
    return sched


def _max_matching(layout: CodeLayout) -> Dict[int, int]:
    """Kuhn augmenting-path matching data -> parity, data visited row-major."""
    owner: Dict[int, int] = {}

    def try_assign(q: int, seen: set) -> bool:
        for p in layout.data_neighbors[q]:
            if p in seen:
                continue
            seen.add(p)
            if p not in owner or try_assign(owner[p], seen):
                owner[p] = q
                return True
        return False

    for q in layout.data_qubits:
        try_assign(q, set())
    return {q: p for p, q in owner.items()}


def build_swap_lookup(layout: CodeLayout) -> SwapLookupTable:
    match = _max_matching(layout)
    unmatched = [q for q in layout.data_qubits if q not in match]
    # The rotated lattice always admits a d^2-1 matching.
    assert len(unmatched) == 1, unmatched
    leftover = unmatched[0]
    primary = dict(match)
    primary[leftover] = layout.data_neighbors[leftover][0]

    backup: Dict[int, int] = {}
    load: Dict[int, int] = {p: 0 for p in layout.parity_qubits}
    for q in layout.data_qubits:
        options = [p for p in layout.data_neighbors[q] if p != primary[q]]
        if not options:
            backup[q] = primary[q]
            continue
        best = min(options, key=lambda p: (load[p], p))
        backup[q] = best
        load[best] += 1
    return SwapLookupTable(primary=primary, backup=backup, leftover=leftover)


def always_lrc_assignments(
    layout: CodeLayout, round_index: int, table: Optional[SwapLookupTable] = None
) -> Dict[int, int]:
    """Static Always-LRC schedule.

    Round 0 has no LRCs.  Odd rounds swap every data qubit except the
    leftover one with its primary parity (d^2-1 LRCs); even rounds carry the
    leftover qubit's LRC, so each two-round window covers all d^2 data qubits.
    """
    if round_index < 0:
        raise ValueError("round_index must be >= 0")
    table = table or build_swap_lookup(layout)
    if round_index == 0:
        return {}
    if round_index % 2 == 1:
        return {q: p for q, p in table.primary.items() if q != table.leftover}
    return {table.leftover: table.primary[table.leftover]}
