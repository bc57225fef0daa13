"""Density-matrix study of one Z stabilizer built from ququarts.

Four data ququarts q0..q3 and one parity ququart P (index 4).  Levels 2 and 3
form the leaked subspace.  The density matrix is stored as a rank-10 tensor
``rho[k0..k4, b0..b4]``; two-qudit unitaries are applied by tensor
contraction, so a full 1024 x 1024 matrix product is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

N_QUDITS = 5
PARITY = 4
DIM = 4**N_QUDITS
TOL = 1e-9


@dataclass(frozen=True)
class DmParams:
    p_t: float = 0.1
    rx_angle: float = 0.65 * np.pi
    p_ell: float = 1e-4
    q0_level: int = 2

    def __post_init__(self):
        for name in ("p_t", "p_ell"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.q0_level not in range(4):
            raise ValueError("q0_level must be 0..3")


# --- gate matrices (16 x 16, index 4*a + b) ------------------------------------------


def _perm(mapping: Dict[Tuple[int, int], Tuple[int, int]]) -> np.ndarray:
    u = np.eye(16, dtype=complex)
    for (a, b), (c, d) in mapping.items():
        u[4 * a + b, 4 * a + b] = 0
        u[4 * c + d, 4 * a + b] = 1
    return u


CNOT = _perm({(1, 0): (1, 1), (1, 1): (1, 0)})
TRANSPORT = _perm({**{(l, j): (j, l) for l in (2, 3) for j in (0, 1)}, **{(j, l): (l, j) for l in (2, 3) for j in (0, 1)}})
LEAK_SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]


def rx_block(theta: float) -> np.ndarray:
    """R_X(theta) on the {|0>,|1>} block of a ququart, identity on {|2>,|3>}."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    u = np.eye(4, dtype=complex)
    u[:2, :2] = [[c, -1j * s], [-1j * s, c]]
    return u


def conditioned_rx(theta: float, leaked_first: bool) -> np.ndarray:
    pl = np.diag([0, 0, 1, 1]).astype(complex)
    pc = np.eye(4) - pl
    rx = rx_block(theta)
    if leaked_first:
        return np.kron(pl, rx) + np.kron(pc, np.eye(4))
    return np.kron(rx, pl) + np.kron(np.eye(4), pc)


# --- density matrix -------------------------------------------------------------------


class DensityMatrix:
    def __init__(self, tensor: np.ndarray):
        self.t = tensor

    @classmethod
    def product(cls, levels: Sequence[int]) -> "DensityMatrix":
        psi = np.zeros((4,) * N_QUDITS, dtype=complex)
        psi[tuple(levels)] = 1
        return cls(np.multiply.outer(psi, psi.conj()))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "DensityMatrix":
        return cls(np.asarray(m, dtype=complex).reshape((4,) * (2 * N_QUDITS)))

    @property
    def matrix(self) -> np.ndarray:
        return self.t.reshape(DIM, DIM)

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.t.copy())

    def populations(self) -> np.ndarray:
        """Diagonal as a (4,)*5 probability tensor."""
        return np.real(np.diagonal(self.matrix)).reshape((4,) * N_QUDITS)

    def marginal(self, q: int) -> np.ndarray:
        pops = self.populations()
        return pops.sum(axis=tuple(i for i in range(N_QUDITS) if i != q))

    def leak_population(self, q: int) -> float:
        m = self.marginal(q)
        return float(m[2] + m[3])

    def check(self, tol: float = TOL) -> None:
        m = self.matrix
        if abs(np.trace(m) - 1) > tol:
            raise ValueError(f"trace drifted to {np.trace(m)}")
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ValueError("matrix is not Hermitian")
        try:
            np.linalg.cholesky(m + tol * np.eye(DIM))
        except np.linalg.LinAlgError:
            raise ValueError("matrix is not positive semidefinite") from None


def apply_unitary_2(rho: DensityMatrix, u: np.ndarray, a: int, b: int) -> DensityMatrix:
    u4 = u.reshape(4, 4, 4, 4)
    n = N_QUDITS
    t = np.tensordot(u4, rho.t, axes=([2, 3], [a, b]))
    t = np.moveaxis(t, [0, 1], [a, b])
    t = np.tensordot(u4.conj(), t, axes=([2, 3], [n + a, n + b]))
    t = np.moveaxis(t, [0, 1], [n + a, n + b])
    return DensityMatrix(t)


def apply_unitary_1(rho: DensityMatrix, u: np.ndarray, q: int) -> DensityMatrix:
    n = N_QUDITS
    t = np.moveaxis(np.tensordot(u, rho.t, axes=([1], [q])), 0, q)
    t = np.moveaxis(np.tensordot(u.conj(), t, axes=([1], [n + q])), 0, n + q)
    return DensityMatrix(t)


def _mix(rho: DensityMatrix, p: float, fn) -> DensityMatrix:
    if p == 0:
        return rho
    if p == 1:
        return fn(rho)
    return DensityMatrix((1 - p) * rho.t + p * fn(rho).t)


def dm_cnot_with_noise(rho: DensityMatrix, a: int, b: int, params: DmParams) -> DensityMatrix:
    """CNOT(a -> b) followed by transport, conditioned R_X and injection."""
    if a == b:
        raise ValueError("control and target must differ")
    rho = apply_unitary_2(rho, CNOT, a, b)
    rho = _mix(rho, params.p_t, lambda r: apply_unitary_2(r, TRANSPORT, a, b))
    rho = apply_unitary_2(rho, conditioned_rx(params.rx_angle, True), a, b)
    rho = apply_unitary_2(rho, conditioned_rx(params.rx_angle, False), a, b)
    for q in (a, b):
        rho = _mix(rho, params.p_ell, lambda r, q=q: apply_unitary_1(r, LEAK_SWAP, q))
    return rho


def measure_reset(rho: DensityMatrix, q: int) -> DensityMatrix:
    """Non-selective Z measurement followed by reset to |0>."""
    n = N_QUDITS
    reduced = np.trace(rho.t, axis1=q, axis2=n + q)  # drops both axes of q
    zero = np.zeros((4, 4), dtype=complex)
    zero[0, 0] = 1
    t = np.multiply.outer(reduced, zero)  # axes: others(ket), others(bra), q, q'
    order = list(range(2 * n - 2))
    ket = order[: n - 1]
    bra = order[n - 1 :]
    ket.insert(q, 2 * n - 2)
    bra.insert(q, 2 * n - 1)
    return DensityMatrix(np.transpose(t, ket + bra))


def correct_outcome_probability(rho: DensityMatrix, q: int = PARITY) -> float:
    """Probability that measuring ``q`` reads 0; leaked population reads 0 half the time."""
    m = rho.marginal(q)
    return float(m[0] + 0.5 * (m[2] + m[3]))


# --- the two-round study ----------------------------------------------------------


def study_sequence() -> List[Tuple[str, Tuple]]:
    """Operations of the LRC round on q0 followed by a plain round.

    q0 is the last data qubit in CNOT order, so its stabilizer CNOT is
    immediately followed by the SWAP.  The parity qubit is not reset between
    the rounds, so leakage it picked up carries into the plain round.
    """
    p = PARITY
    ops: List[Tuple[str, Tuple]] = []
    for q in (1, 2, 3, 0):
        ops.append((f"cx q{q}->P", ("cx", q, p)))
    ops += [
        ("swap1 P->q0", ("cx", p, 0)),
        ("swap2 q0->P", ("cx", 0, p)),
        ("swap3 P->q0", ("cx", p, 0)),
        ("measure-reset q0", ("mr", 0)),
        ("swapback1 P->q0", ("cx", p, 0)),
        ("swapback2 q0->P", ("cx", 0, p)),
    ]
    for q in (1, 2, 3, 0):
        ops.append((f"round2 cx q{q}->P", ("cx", q, p)))
    return ops


LRC_END_STEP = 9  # CNOT count at the end of the LRC round


@dataclass
class StudyRow:
    step: int
    gate: str
    leak: Tuple[float, ...]  # q0..q3
    p_leak: float
    p_correct_outcome: float


def run_stabilizer_study(params: DmParams = DmParams(), check: bool = True) -> List[StudyRow]:
    rho = DensityMatrix.product([params.q0_level, 0, 0, 0, 0])
    rows: List[StudyRow] = []
    step = 0
    for label, op in study_sequence():
        if op[0] == "cx":
            rho = dm_cnot_with_noise(rho, op[1], op[2], params)
            step += 1
        else:
            rho = measure_reset(rho, op[1])
        if check:
            rho.check()
        if op[0] == "cx":
            rows.append(
                StudyRow(
                    step=step,
                    gate=label,
                    leak=tuple(rho.leak_population(q) for q in range(4)),
                    p_leak=rho.leak_population(PARITY),
                    p_correct_outcome=correct_outcome_probability(rho),
                )
            )
    return rows


def rows_to_csv(rows: Sequence[StudyRow]) -> str:
    out = ["step,gate,q0_leak,q1_leak,q2_leak,q3_leak,p_leak,p_correct_outcome"]
    for r in rows:
        leak = ",".join(f"{v:.12g}" for v in r.leak)
        out.append(f"{r.step},{r.gate},{leak},{r.p_leak:.12g},{r.p_correct_outcome:.12g}")
    return "\n".join(out) + "\n"


# --- stochastic-trajectory cross-check ---------------------------------------------------


def _apply_vec_2(psi: np.ndarray, u: np.ndarray, a: int, b: int) -> np.ndarray:
    t = np.tensordot(u.reshape(4, 4, 4, 4), psi, axes=([2, 3], [a, b]))
    return np.moveaxis(t, [0, 1], [a, b])


def _apply_vec_1(psi: np.ndarray, u: np.ndarray, q: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(u, psi, axes=([1], [q])), 0, q)


def trajectory_parity_leak(
    params: DmParams, trajectories: int, rng: np.random.Generator, upto_step: int = LRC_END_STEP
) -> Tuple[float, float]:
    """Estimate P's leak population after ``upto_step`` CNOTs by unravelling.

    Each trajectory draws which transport and injection branches fire and,
    at the mid-round measurement, a Born-rule outcome.  Identical branch
    patterns share one pure-state evolution.  Returns (mean, standard error).
    """
    ops = study_sequence()
    n_cx = 0
    kept = []
    for label, op in ops:
        if op[0] == "cx":
            if n_cx == upto_step:
                break
            n_cx += 1
        kept.append(op)
    n = sum(op[0] == "cx" for op in kept)
    draws = np.concatenate(
        [rng.random((trajectories, n)) < params.p_t, rng.random((trajectories, 2 * n)) < params.p_ell], axis=1
    )
    patterns, counts = np.unique(draws, axis=0, return_counts=True)
    crx_a = conditioned_rx(params.rx_angle, True)
    crx_b = conditioned_rx(params.rx_angle, False)
    total = 0.0
    total_sq = 0.0

    def run(psi, op_index, k, pattern, weight):
        nonlocal total, total_sq
        for i in range(op_index, len(kept)):
            op = kept[i]
            if op[0] == "cx":
                _, a, b = op
                psi = _apply_vec_2(psi, CNOT, a, b)
                if pattern[k]:
                    psi = _apply_vec_2(psi, TRANSPORT, a, b)
                psi = _apply_vec_2(psi, crx_a, a, b)
                psi = _apply_vec_2(psi, crx_b, a, b)
                if pattern[n + 2 * k]:
                    psi = _apply_vec_1(psi, LEAK_SWAP, a)
                if pattern[n + 2 * k + 1]:
                    psi = _apply_vec_1(psi, LEAK_SWAP, b)
                k += 1
            else:
                q = op[1]
                probs = np.sum(np.abs(np.moveaxis(psi, q, 0).reshape(4, -1)) ** 2, axis=1)
                probs = probs / probs.sum()
                outs = rng.multinomial(weight, probs)
                for level, c in enumerate(outs):
                    if c == 0:
                        continue
                    proj = np.moveaxis(psi, q, 0)[level]
                    proj = proj / np.linalg.norm(proj)
                    new = np.zeros((4,) + proj.shape, dtype=complex)
                    new[0] = proj
                    run(np.moveaxis(new, 0, q), i + 1, k, pattern, int(c))
                return
        pops = np.abs(psi) ** 2
        val = float(np.moveaxis(pops, PARITY, 0)[2:].sum())
        total += weight * val
        total_sq += weight * val * val

    init = np.zeros((4,) * N_QUDITS, dtype=complex)
    init[(params.q0_level, 0, 0, 0, 0)] = 1
    for pattern, c in zip(patterns, counts):
        run(init, 0, 0, pattern, int(c))
    mean = total / trajectories
    var = max(total_sq / trajectories - mean**2, 0.0)
    return mean, float(np.sqrt(var / trajectories))
