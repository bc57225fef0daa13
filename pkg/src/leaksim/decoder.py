"""Circuit-level detector graph and exact matching decoder for memory-Z runs.

Only the Z-type detectors are decoded, so only the X component of each fault
matters.  Nodes are ``t * n_z + k`` for round ``t`` (the final data layer is
round ``rounds``) and Z stabilizer ``k``; the boundary is node ``n_det``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ._matching import MAX_EXACT, decode_many, match_defects
from .layout import CodeLayout, base_round_schedule
from .noise import NoiseParams

# Weights are rounded to multiples of this so path sums are exact in float64.
WEIGHT_QUANTUM = 2.0**-16
MAX_NODES = 8000


def merge_probability(q1: float, q2: float) -> float:
    return q1 + q2 - 2 * q1 * q2


def edge_weight(q: float) -> float:
    w = np.log((1 - q) / q)
    return max(WEIGHT_QUANTUM, round(w / WEIGHT_QUANTUM) * WEIGHT_QUANTUM)


@dataclass
class Mechanism:
    detectors: Tuple[Tuple[int, int], ...]  # (layer 0/1, z index)
    logical: bool
    probability: float


@dataclass
class DetectorGraph:
    n_z: int
    rounds: int
    edges: Dict[Tuple[int, int], Tuple[float, bool]]  # (u, v) -> (q, logical)
    dist: np.ndarray = field(repr=False)
    par: np.ndarray = field(repr=False)

    @property
    def n_detectors(self) -> int:
        return self.n_z * (self.rounds + 1)

    @property
    def boundary(self) -> int:
        return self.n_detectors

    def weight(self, u: int, v: int) -> float:
        return edge_weight(self.edges[(min(u, v), max(u, v))][0])

    def to_json(self) -> str:
        doc = {
            "n_detectors": self.n_detectors,
            "boundary": self.boundary,
            "nodes": [{"id": i, "round": i // self.n_z, "z_index": i % self.n_z} for i in range(self.n_detectors)],
            "edges": [
                {"u": u, "v": v, "probability": q, "weight": edge_weight(q), "logical": bool(lg)}
                for (u, v), (q, lg) in sorted(self.edges.items())
            ],
        }
        return json.dumps(doc, indent=1)


@dataclass
class MatchingResult:
    pairs: List[Tuple[int, int]]  # (detector, partner); partner == boundary for boundary matches
    total_weight: float
    logical_flip: bool


class GraphError(ValueError):
    pass


# --- fault enumeration ------------------------------------------------------------


def _x_injection_effect(layout: CodeLayout, steps, layer: int, qubit: int):
    """Inject X after gate layer ``layer`` of round 0 and run two noiseless rounds.

    ``layer == -1`` injects before the first layer.  Returns the set of fired
    (layer, z index) detectors and the logical flip of the residual data frame.
    """
    nq = layout.n_qubits
    x = np.zeros(nq, dtype=bool)
    z = np.zeros(nq, dtype=bool)
    recs = []
    if layer == -1:
        x[qubit] = True
    for rnd in range(2):
        rec = np.zeros(layout.n_parity, dtype=bool)
        for li, step in enumerate(steps):
            for g in step:
                if g.kind == "R":
                    (q,) = g.qubits
                    x[q] = z[q] = False
                elif g.kind == "H":
                    (q,) = g.qubits
                    x[q], z[q] = z[q], x[q]
                elif g.kind == "CX":
                    c, t = g.qubits
                    x[t] ^= x[c]
                    z[c] ^= z[t]
                elif g.kind == "M":
                    (q,) = g.qubits
                    rec[g.slot] = x[q]
                    x[q] = z[q] = False
            if rnd == 0 and li == layer:
                x[qubit] ^= True
        recs.append(rec)
    zslots = [layout.slot(p) for p in layout.z_parities()]
    fired = set()
    for k, s in enumerate(zslots):
        if recs[0][s]:
            fired.add((0, k))
        if recs[1][s] ^ recs[0][s]:
            fired.add((1, k))
    logical = bool(x[list(layout.logical_z_support)].sum() % 2)
    return fired, logical


def enumerate_round_mechanisms(layout: CodeLayout, params: NoiseParams) -> List[Mechanism]:
    """Single-fault mechanisms of one base round, in a two-layer window.

    Faults with more than two fired detectors are split into per-qubit
    components sharing the fault's probability.
    """
    p = params.p if params.p > 0 else 1e-3
    p_meas = params.p_meas if params.p_meas > 0 else p
    p_init = params.p_init if params.p_init > 0 else p
    steps = base_round_schedule(layout).timesteps
    cache: Dict[Tuple[int, int], Tuple[frozenset, bool]] = {}

    def effect(layer, q):
        key = (layer, q)
        if key not in cache:
            f, lg = _x_injection_effect(layout, steps, layer, q)
            cache[key] = (frozenset(f), lg)
        return cache[key]

    out: List[Mechanism] = []

    def add(layer, xq: List[int], prob: float):
        comps = [effect(layer, q) for q in xq]
        if not comps:
            return
        tot, lg = frozenset(), False
        for f, l in comps:
            tot = tot ^ f
            lg ^= l
        if len(tot) <= 2:
            if tot or lg:
                out.append(Mechanism(tuple(sorted(tot)), lg, prob))
            return
        for f, l in comps:
            if len(f) > 2:
                raise GraphError(f"fault component fires {len(f)} detectors")
            if f or l:
                out.append(Mechanism(tuple(sorted(f)), l, prob))

    for q in layout.data_qubits:
        for pauli in (1, 2):  # X and Y carry an X part; Z does not
            add(-1, [q], p / 3)
    for li, step in enumerate(steps):
        kinds = {g.kind for g in step}
        if kinds == {"R"}:
            for g in step:
                add(li, [g.qubits[0]], p_init)
        elif kinds == {"H"}:
            for g in step:
                for pauli in (1, 2):
                    add(li, [g.qubits[0]], p / 3)
        elif kinds == {"CX"}:
            for g in step:
                c, t = g.qubits
                for k in range(1, 16):
                    a, b = k >> 2, k & 3
                    xq = ([c] if a in (1, 2) else []) + ([t] if b in (1, 2) else [])
                    add(li, xq, p / 15)
        elif "M" in kinds:
            zset = {p_: i for i, p_ in enumerate(layout.z_parities())}
            for g in step:
                par = layout.parity_qubits[g.slot]
                if par in zset:
                    out.append(Mechanism(((0, zset[par]), (1, zset[par])), False, p_meas))
    return out


def final_measurement_mechanisms(layout: CodeLayout, params: NoiseParams) -> List[Mechanism]:
    p_meas = params.p_meas if params.p_meas > 0 else (params.p if params.p > 0 else 1e-3)
    zs = layout.z_parities()
    lz = set(layout.logical_z_support)
    out = []
    for q in layout.data_qubits:
        dets = tuple((1, k) for k, p_ in enumerate(zs) if q in layout.stabilizer_support[p_])
        out.append(Mechanism(dets, q in lz, p_meas))
    return out


def _add_edge(edges, meta, u, v, q, lg):
    key = (min(u, v), max(u, v))
    if key in edges:
        q0, lg0 = edges[key]
        best = meta[key]
        if lg != lg0 and q > best:
            lg0, meta[key] = lg, q
        elif lg == lg0:
            meta[key] = max(best, q)
        edges[key] = (merge_probability(q0, q), lg0)
    else:
        edges[key] = (q, lg)
        meta[key] = q


def build_detector_graph(layout: CodeLayout, params: NoiseParams, rounds: int) -> DetectorGraph:
    if rounds < 1:
        raise GraphError("rounds must be >= 1")
    n_z = len(layout.z_parities())
    n_det = n_z * (rounds + 1)
    if n_det + 1 > MAX_NODES:
        raise GraphError(f"graph with {n_det} detectors exceeds the dense-table limit {MAX_NODES}")
    boundary = n_det
    edges: Dict[Tuple[int, int], Tuple[float, bool]] = {}
    meta: Dict[Tuple[int, int], float] = {}
    template = enumerate_round_mechanisms(layout, params)
    for t in range(rounds):
        for m in template:
            nodes = [(t + lay) * n_z + k for lay, k in m.detectors]
            u, v = (nodes + [boundary])[:2] if len(nodes) == 1 else nodes
            _add_edge(edges, meta, u, v, m.probability, m.logical)
    for m in final_measurement_mechanisms(layout, params):
        nodes = [(rounds - 1 + lay) * n_z + k for lay, k in m.detectors]
        if len(nodes) == 1:
            nodes.append(boundary)
        _add_edge(edges, meta, nodes[0], nodes[1], m.probability, m.logical)
    dist, par = _all_pairs(n_det + 1, edges)
    if not np.all(np.isfinite(dist[:, boundary])):
        raise GraphError("detector graph is not connected to the boundary")
    return DetectorGraph(n_z=n_z, rounds=rounds, edges=edges, dist=dist, par=par)


def _all_pairs(n: int, edges) -> Tuple[np.ndarray, np.ndarray]:
    us = np.array([k[0] for k in edges], dtype=np.intp)
    vs = np.array([k[1] for k in edges], dtype=np.intp)
    ws = np.array([edge_weight(q) for q, _ in edges.values()])
    lg = np.array([l for _, l in edges.values()], dtype=bool)
    mat = csr_matrix((np.r_[ws, ws], (np.r_[us, vs], np.r_[vs, us])), shape=(n, n))
    dist, pred = dijkstra(mat, directed=False, return_predecessors=True)
    elog = np.zeros((n, n), dtype=bool)
    elog[us, vs] = lg
    elog[vs, us] = lg
    # Path parity by pointer jumping along the shortest-path trees.
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    anc = pred.astype(np.int64)
    valid = anc >= 0
    par = np.where(valid, elog[np.where(valid, anc, 0), cols], False)
    while valid.any():
        a = np.where(valid, anc, 0)
        par = par ^ (valid & par[rows, a])
        anc = np.where(valid, anc[rows, a], -1)
        valid = anc >= 0
    return dist, par.astype(np.uint8)


# --- decoding ---------------------------------------------------------------------


def _syndrome(graph: DetectorGraph, events) -> np.ndarray:
    if hasattr(events, "z_sector"):
        events = events.z_sector()
    s = np.atleast_2d(np.asarray(events, dtype=np.uint8))
    if s.shape[1] != graph.n_detectors:
        raise GraphError(f"expected {graph.n_detectors} detectors per shot, got {s.shape[1]}")
    return np.ascontiguousarray(s)


def decode(graph: DetectorGraph, events, shot: int = 0) -> MatchingResult:
    s = _syndrome(graph, events)[shot]
    defects = np.flatnonzero(s).astype(np.int64)
    bd = np.ascontiguousarray(graph.dist[:, graph.boundary])
    w, partner, _ = match_defects(defects, graph.dist, bd, MAX_EXACT)
    pairs, flip = [], False
    for i, j in enumerate(partner):
        if j < 0:
            pairs.append((int(defects[i]), graph.boundary))
            flip ^= bool(graph.par[defects[i], graph.boundary])
        elif j > i:
            pairs.append((int(defects[i]), int(defects[j])))
            flip ^= bool(graph.par[defects[i], defects[j]])
    return MatchingResult(pairs=pairs, total_weight=float(w), logical_flip=flip)


def decode_batch(graph: DetectorGraph, events) -> Tuple[np.ndarray, np.ndarray, int]:
    """Decode every shot; returns (logical flips, matching weights, shots that needed the greedy fallback)."""
    s = _syndrome(graph, events)
    bd = np.ascontiguousarray(graph.dist[:, graph.boundary])
    bpar = np.ascontiguousarray(graph.par[:, graph.boundary])
    flips, weights, fb = decode_many(s, graph.dist, bd, graph.par, bpar, MAX_EXACT)
    return flips, weights, int(fb)


def evaluate_shot(graph: DetectorGraph, events, final_data_bits, layout: Optional[CodeLayout] = None, shot: int = 0) -> bool:
    """True if decoding fails to restore the logical-Z value."""
    bits = np.atleast_2d(final_data_bits)[shot]
    if layout is not None:
        observed = bool(bits[list(layout.logical_z_support)].sum() % 2)
    else:
        observed = bool(bits[: int(round(np.sqrt(bits.size)))].sum() % 2)
    return decode(graph, events, shot).logical_flip != observed
