"""Noise parameters and stochastic channel primitives.

Every random draw goes through :class:`RngStreams`, a bundle of counter-based
(Philox) generators keyed by ``(seed, block, channel)``.  Pauli noise,
leakage events and readout/reset noise draw from separate channels, so
toggling leakage never shifts the Pauli-error stream.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, replace
from typing import Tuple

import numpy as np


class TransportModel(str, enum.Enum):
    STICKY = "sticky"
    EXCHANGE = "exchange"


class Readout(str, enum.Enum):
    TWO_LEVEL = "two-level"
    MULTI_LEVEL = "multi-level"


class PauliError(enum.IntEnum):
    I = 0
    X = 1
    Y = 2
    Z = 3

    @property
    def x(self) -> bool:
        return self in (PauliError.X, PauliError.Y)

    @property
    def z(self) -> bool:
        return self in (PauliError.Y, PauliError.Z)

    @classmethod
    def from_bits(cls, x: bool, z: bool) -> "PauliError":
        return cls((1 if x else 0) ^ (3 if z else 0))

    def __mul__(self, other):
        if not isinstance(other, PauliError):
            return NotImplemented
        # Phase is irrelevant for frame simulation.
        return PauliError.from_bits(self.x ^ other.x, self.z ^ other.z)


def _check_prob(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must be a probability in [0, 1], got {v!r}")


@dataclass(frozen=True)
class NoiseParams:
    p: float = 1e-3
    p_leak: float = 1e-4
    p_lt: float = 0.1
    p_seep: float = 1e-4
    p_meas: float = 1e-3
    p_init: float = 1e-3
    p_mld_err: float = 1e-2
    transport_model: TransportModel = TransportModel.STICKY
    leakage_enabled: bool = True

    def __post_init__(self):
        for name in ("p", "p_leak", "p_lt", "p_seep", "p_meas", "p_init", "p_mld_err"):
            _check_prob(name, getattr(self, name))
        object.__setattr__(self, "transport_model", TransportModel(self.transport_model))

    @classmethod
    def from_p(
        cls,
        p: float,
        transport_model: TransportModel | str = TransportModel.STICKY,
        leakage_enabled: bool = True,
    ) -> "NoiseParams":
        """Standard scaling: leak/seep at 0.1p, transport 0.1, readout/reset at p, MLD at 10p."""
        _check_prob("p", p)
        return cls(
            p=p,
            p_leak=0.1 * p,
            p_lt=0.1,
            p_seep=0.1 * p,
            p_meas=p,
            p_init=p,
            p_mld_err=min(1.0, 10 * p),
            transport_model=TransportModel(transport_model),
            leakage_enabled=leakage_enabled,
        )

    @property
    def effective_p_leak(self) -> float:
        return self.p_leak if self.leakage_enabled else 0.0

    @property
    def effective_p_seep(self) -> float:
        return self.p_seep if self.leakage_enabled else 0.0

    def replace(self, **kw) -> "NoiseParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transport_model"] = self.transport_model.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseParams":
        return cls(**d)


def _philox(seed: int, block: int, channel: int) -> np.random.Generator:
    key = np.array([seed & (2**64 - 1), (block << 8) | channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class RngStreams:
    """Independent Philox streams for one block of shots."""

    def __init__(self, seed: int, block: int = 0):
        self.seed = int(seed)
        self.block = int(block)
        self.pauli = _philox(self.seed, self.block, 0)
        self.leak = _philox(self.seed, self.block, 1)
        self.meas = _philox(self.seed, self.block, 2)


# --- scalar samplers -------------------------------------------------------


def sample_depolarizing_1q(params: NoiseParams, rng: RngStreams) -> PauliError:
    u = rng.pauli.random()
    k = int(rng.pauli.integers(1, 4))
    return PauliError(k) if u < params.p else PauliError.I


def sample_depolarizing_2q(params: NoiseParams, rng: RngStreams) -> Tuple[PauliError, PauliError]:
    u = rng.pauli.random()
    k = int(rng.pauli.integers(1, 16))
    if u >= params.p:
        return PauliError.I, PauliError.I
    return PauliError(k >> 2), PauliError(k & 3)


def sample_leak_event(rate: float, rng: RngStreams) -> bool:
    _check_prob("rate", rate)
    return bool(rng.leak.random() < rate)


# --- vectorised samplers used by the frame simulator ------------------------


def pauli_bits(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(x, z) flip bits of Pauli indices 0=I, 1=X, 2=Y, 3=Z."""
    return (k == 1) | (k == 2), k >= 2


def depolarize1(gen: np.random.Generator, shape, p: float) -> Tuple[np.ndarray, np.ndarray]:
    hit = gen.random(shape) < p
    k = np.zeros(shape, dtype=np.int8)
    k[hit] = gen.integers(1, 4, size=int(hit.sum()), dtype=np.int8)
    return pauli_bits(k)


def depolarize2(gen: np.random.Generator, shape, p: float):
    """Uniform over the 15 non-identity two-qubit Paulis with probability p.

    Returns ``(x1, z1, x2, z2)`` flip arrays.
    """
    hit = gen.random(shape) < p
    k = np.zeros(shape, dtype=np.int8)
    k[hit] = gen.integers(1, 16, size=int(hit.sum()), dtype=np.int8)
    x1, z1 = pauli_bits(k >> 2)
    x2, z2 = pauli_bits(k & 3)
    return x1, z1, x2, z2
