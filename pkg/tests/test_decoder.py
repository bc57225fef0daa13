import itertools
import json

import numpy as np
import pytest

from leaksim import frame
from leaksim.decoder import (
    MAX_NODES,
    GraphError,
    build_detector_graph,
    decode,
    decode_batch,
    edge_weight,
    evaluate_shot,
    merge_probability,
)
from leaksim.frame import ShotState, apply_cnot, apply_hadamard, apply_measure_reset, apply_reset, detection_events
from leaksim.layout import base_round_schedule, build_layout
from leaksim.noise import NoiseParams, RngStreams

QUIET = NoiseParams(p=0, p_leak=0, p_lt=0, p_seep=0, p_meas=0, p_init=0, p_mld_err=0)
P3 = NoiseParams.from_p(1e-3)


def _z_index(lay, parity):
    return lay.z_parities().index(parity)


def test_merge_probability():
    assert merge_probability(0.1, 0.2) == pytest.approx(0.1 * 0.8 + 0.2 * 0.9)
    assert merge_probability(0.0, 0.3) == 0.3


def test_edge_weight_positive_and_monotone():
    assert edge_weight(0.01) > edge_weight(0.1) > 0
    assert edge_weight(0.4999) > 0


def test_space_edge_for_bulk_data_x():
    lay = build_layout(3)
    g = build_detector_graph(lay, P3, 1)
    a, b = [_z_index(lay, p) for p in lay.data_neighbors[4] if lay.parity_type[p] == "Z"]
    assert (min(a, b), max(a, b)) in g.edges


def test_time_edge_for_measurement_flip():
    lay = build_layout(3)
    g = build_detector_graph(lay, P3, 3)
    for t in range(3):
        for k in range(g.n_z):
            assert (t * g.n_z + k, (t + 1) * g.n_z + k) in g.edges


def test_graph_weights_symmetric_positive_and_connected():
    g = build_detector_graph(build_layout(5), P3, 5)
    assert np.allclose(g.dist, g.dist.T)
    assert np.all(np.isfinite(g.dist[:, g.boundary]))
    for (u, v), (q, _) in g.edges.items():
        assert 0 < q < 0.5
        assert g.weight(u, v) == g.weight(v, u) > 0


def test_graph_json_export():
    g = build_detector_graph(build_layout(3), P3, 2)
    doc = json.loads(g.to_json())
    assert doc["n_detectors"] == g.n_detectors == 12
    assert len(doc["edges"]) == len(g.edges)


def test_oversized_graph_rejected():
    lay = build_layout(11)
    rounds = MAX_NODES // len(lay.z_parities()) + 1
    with pytest.raises(GraphError):
        build_detector_graph(lay, P3, rounds)
    with pytest.raises(GraphError):
        build_detector_graph(lay, P3, 0)


# --- independent single-fault oracle for the edge set -------------------------------


def _fault_sites(lay, rounds):
    """X-part patterns of every noise location of the circuit model."""
    sched = base_round_schedule(lay)
    sites = []
    for r in range(rounds):
        for q in lay.data_qubits:
            sites.append(("x", r, -1, (q,)))
        for li, layer in enumerate(sched.timesteps):
            kinds = {g.kind for g in layer}
            for g in layer:
                if g.kind in ("R", "H"):
                    sites.append(("x", r, li, (g.qubits[0],)))
                elif g.kind == "CX":
                    c, t = g.qubits
                    for pat in ((c,), (t,), (c, t)):
                        sites.append(("x", r, li, pat))
                elif g.kind == "M" and lay.parity_type[lay.parity_qubits[g.slot]] == "Z":
                    sites.append(("m", r, li, (g.slot,)))
            assert kinds
    for q in lay.data_qubits:
        sites.append(("f", rounds, 0, (q,)))
    return sites


def _simulate_sites(lay, rounds, sites):
    """Run the frame-simulator primitives with one fault pattern per shot column."""
    sched = base_round_schedule(lay)
    st = ShotState(lay, len(sites))
    rng = RngStreams(0)
    for r in range(rounds):
        frame._begin_round(st)
        for col, (kind, fr, fl, qs) in enumerate(sites):
            if kind == "x" and fr == r and fl == -1:
                st.x[list(qs), col] ^= True
        for li, layer in enumerate(sched.timesteps):
            for g in layer:
                if g.kind == "R":
                    apply_reset(st, [g.qubits[0]], QUIET, rng)
                elif g.kind == "H":
                    apply_hadamard(st, [g.qubits[0]], QUIET, rng)
                elif g.kind == "CX":
                    apply_cnot(st, g.qubits[0], g.qubits[1], QUIET, rng)
                elif g.kind == "M":
                    apply_measure_reset(st, [g.qubits[0]], [g.slot], QUIET, rng)
            for col, (kind, fr, fl, qs) in enumerate(sites):
                if fr == r and fl == li:
                    if kind == "x":
                        st.x[list(qs), col] ^= True
                    else:
                        st._rec[qs[0], col] ^= True
        frame._end_round(st)
    final = frame.measure_data_final(st, QUIET, rng)
    for col, (kind, _, _, qs) in enumerate(sites):
        if kind == "f":
            final[col, qs[0]] ^= True
    ev = detection_events(lay, st.measurement_log, final)
    logical = final[:, list(lay.logical_z_support)].sum(axis=1) % 2 == 1
    return ev.z_sector(), logical


def _oracle_edges(lay, rounds):
    sites = _fault_sites(lay, rounds)
    syn, logical = _simulate_sites(lay, rounds, sites)
    idx = {s: i for i, s in enumerate(sites)}
    edges = {}
    n_det = syn.shape[1]

    def add(dets, lg):
        if not dets and not lg:
            return
        assert len(dets) <= 2
        key = tuple(sorted(dets)) if len(dets) == 2 else (dets[0], n_det)
        edges.setdefault(key, set()).add(bool(lg))

    for i, (kind, r, li, qs) in enumerate(sites):
        dets = list(np.flatnonzero(syn[i]))
        if len(dets) <= 2:
            add(dets, logical[i])
            continue
        # Split patterns that fire more than two detectors into per-qubit components.
        for q in qs:
            j = idx[(kind, r, li, (q,))]
            add(list(np.flatnonzero(syn[j])), logical[j])
    return edges


@pytest.mark.parametrize("rounds", [1, 3])
def test_edge_set_matches_single_fault_oracle(rounds):
    lay = build_layout(3)
    g = build_detector_graph(lay, P3, rounds)
    oracle = _oracle_edges(lay, rounds)
    assert set(g.edges) == set(oracle)
    assert len(g.edges) == len(oracle)
    for key, (_, lg) in g.edges.items():
        assert lg in oracle[key]


# --- matching ------------------------------------------------------------------------


def _brute(defects, dist, bd):
    """Exhaustive minimum over all pairings with optional boundary matches."""
    if not defects:
        return 0.0
    a, rest = defects[0], defects[1:]
    best = bd[a] + _brute(rest, dist, bd)
    for i, b in enumerate(rest):
        best = min(best, dist[a, b] + _brute(rest[:i] + rest[i + 1:], dist, bd))
    return best


def test_zero_events():
    g = build_detector_graph(build_layout(3), P3, 3)
    res = decode(g, np.zeros((1, g.n_detectors), np.uint8))
    assert res.pairs == [] and res.total_weight == 0 and not res.logical_flip


def test_single_defect_goes_to_boundary():
    g = build_detector_graph(build_layout(3), P3, 3)
    for node in range(g.n_detectors):
        s = np.zeros((1, g.n_detectors), np.uint8)
        s[0, node] = 1
        res = decode(g, s)
        assert res.pairs == [(node, g.boundary)]
        assert res.total_weight == g.dist[node, g.boundary]


def test_exact_matching_against_brute_force_d3():
    g = build_detector_graph(build_layout(3), P3, 3)
    bd = g.dist[:, g.boundary]
    rng = np.random.default_rng(17)
    for _ in range(10_000):
        k = int(rng.integers(1, 7))
        defects = sorted(rng.choice(g.n_detectors, size=k, replace=False).tolist())
        s = np.zeros((1, g.n_detectors), np.uint8)
        s[0, defects] = 1
        assert decode(g, s).total_weight == _brute(defects, g.dist, bd)


def test_decode_batch_matches_single_decode_and_is_deterministic():
    g = build_detector_graph(build_layout(3), P3, 3)
    rng = np.random.default_rng(3)
    s = (rng.random((300, g.n_detectors)) < 0.08).astype(np.uint8)
    flips, weights, fb = decode_batch(g, s)
    flips2, weights2, _ = decode_batch(g, s)
    assert np.array_equal(flips, flips2) and np.array_equal(weights, weights2)
    for i in range(0, 300, 7):
        r = decode(g, s, i)
        assert r.logical_flip == bool(flips[i]) and r.total_weight == weights[i]
    assert fb == 0


def test_large_cluster_falls_back_to_greedy():
    g = build_detector_graph(build_layout(5), P3, 5)
    s = np.ones((1, g.n_detectors), np.uint8)
    _, _, fb = decode_batch(g, s)
    assert fb >= 1


def test_wrong_width_rejected():
    g = build_detector_graph(build_layout(3), P3, 1)
    with pytest.raises(GraphError):
        decode(g, np.zeros((1, 5), np.uint8))


# --- evaluate_shot -----------------------------------------------------------------


def _events_with_data_x(lay, rounds, qubits, at_round=0):
    st = ShotState(lay, 1)
    eng = frame.RoundEngine(lay)
    for r in range(rounds):
        if r == at_round:
            st.x[list(qubits), 0] ^= True
        eng.run(st, QUIET, RngStreams(0))
    final = frame.measure_data_final(st, QUIET, RngStreams(0))
    return detection_events(lay, st.measurement_log, final), final


def test_noiseless_shot_no_error():
    lay = build_layout(3)
    g = build_detector_graph(lay, P3, 3)
    ev, final = _events_with_data_x(lay, 3, [])
    assert not evaluate_shot(g, ev, final, lay)


@pytest.mark.parametrize("d", [3, 5])
def test_all_correctable_data_errors_decode(d):
    lay = build_layout(d)
    rounds = d
    g = build_detector_graph(lay, P3, rounds)
    t = (d - 1) // 2
    for size in range(1, t + 1):
        for qs in itertools.combinations(lay.data_qubits, size):
            for at in (0, rounds - 1):
                ev, final = _events_with_data_x(lay, rounds, qs, at)
                assert not evaluate_shot(g, ev, final, lay), (qs, at)


def test_logical_support_error_is_corrected():
    lay = build_layout(3)
    g = build_detector_graph(lay, P3, 3)
    ev, final = _events_with_data_x(lay, 3, [1])
    assert final[0, 1]
    assert not evaluate_shot(g, ev, final, lay)
