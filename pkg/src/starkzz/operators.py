"""Truncated bosonic operators and Hamiltonian assembly for coupled transmons.

Conventions used throughout the package:

* Hamiltonian matrix entries are linear frequencies in GHz (h = 1).
* Times are in ns, so propagators are exp(-i 2 pi H t).
* Transmons are Duffing oscillators.  Bus resonators are harmonic modes
  appended after the transmons in the tensor-product ordering, in the order
  their couplings are declared.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse

from .errors import DimensionCapError, MultiFrequencyFrameError

TWO_PI = 2.0 * math.pi

#: Relative Frobenius tolerance below which a matrix counts as Hermitian.
HERMITICITY_TOL = 1e-12

DEFAULT_DIMENSION_CAP = 16384


class CouplingKind(enum.Enum):
    DIRECT = "direct"
    BUS = "bus"


class DriveRole(enum.Enum):
    CANCELLATION = "cancellation"
    GATE = "gate"


@dataclass(frozen=True)
class TransmonSpec:
    """One anharmonic oscillator.

    Attributes:
        frequency: bare 0-1 transition frequency in GHz.
        anharmonicity: bare anharmonicity in GHz, negative for transmons.
        levels: truncation dimension, at least 2 (3+ whenever the
            anharmonicity matters downstream).
    """

    frequency: float
    anharmonicity: float
    levels: int = 5

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        if self.anharmonicity == 0:
            raise ValueError("anharmonicity must be nonzero")


@dataclass(frozen=True)
class CouplingSpec:
    """Exchange element between two transmons, direct or bus-mediated.

    Direct couplings carry only `strength` (the exchange J in GHz).  Bus
    couplings carry the bus mode frequency, the two qubit-bus couplings
    (one per endpoint, in endpoint order) and the bus truncation.
    """

    kind: CouplingKind
    endpoints: tuple[int, int]
    strength: float | None = None
    bus_frequency: float | None = None
    bus_couplings: tuple[float, float] | None = None
    bus_levels: int = 3

    def __post_init__(self):
        p, q = self.endpoints
        if p == q:
            raise ValueError(f"coupling endpoints must be distinct, got {self.endpoints}")
        object.__setattr__(self, "endpoints", (int(p), int(q)))
        if self.kind is CouplingKind.DIRECT:
            if self.strength is None:
                raise ValueError("direct coupling requires strength")
            if self.bus_frequency is not None or self.bus_couplings is not None:
                raise ValueError("direct coupling must not carry bus fields")
        else:
            if self.strength is not None:
                raise ValueError("bus coupling must not carry a direct strength")
            if self.bus_frequency is None or self.bus_couplings is None:
                raise ValueError("bus coupling requires bus_frequency and bus_couplings")
            if len(self.bus_couplings) != 2:
                raise ValueError("bus_couplings must give one value per endpoint")
            if self.bus_levels < 2:
                raise ValueError(f"bus_levels must be >= 2, got {self.bus_levels}")
            object.__setattr__(self, "bus_couplings", tuple(float(g) for g in self.bus_couplings))


def direct_coupling(p: int, q: int, strength: float) -> CouplingSpec:
    return CouplingSpec(CouplingKind.DIRECT, (p, q), strength=strength)


def bus_coupling(p: int, q: int, bus_frequency: float,
                 bus_couplings: tuple[float, float], bus_levels: int = 3) -> CouplingSpec:
    return CouplingSpec(CouplingKind.BUS, (p, q), bus_frequency=bus_frequency,
                        bus_couplings=bus_couplings, bus_levels=bus_levels)


@dataclass(frozen=True)
class DriveTone:
    """One monochromatic drive on a transmon.

    The phase is stored normalized to [0, 2 pi).  Cancellation tones are CW
    and always on; gate tones are only meaningful to pulse-level propagation.
    """

    target: int
    amplitude: float
    frequency: float
    phase: float = 0.0
    role: DriveRole = DriveRole.CANCELLATION

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        object.__setattr__(self, "phase", float(self.phase) % TWO_PI)


@dataclass(frozen=True)
class SystemSpec:
    """Full device: transmons, coupling graph, drive set.

    The tensor ordering is transmons first (as listed), then one harmonic
    mode per bus coupling in declaration order.
    """

    transmons: tuple[TransmonSpec, ...]
    couplings: tuple[CouplingSpec, ...] = ()
    drives: tuple[DriveTone, ...] = ()
    dimension_cap: int | None = DEFAULT_DIMENSION_CAP

    def __post_init__(self):
        object.__setattr__(self, "transmons", tuple(self.transmons))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "drives", tuple(self.drives))
        n = len(self.transmons)
        if n == 0:
            raise ValueError("at least one transmon required")
        seen: set[tuple] = set()
        for c in self.couplings:
            p, q = c.endpoints
            if not (0 <= p < n and 0 <= q < n):
                raise ValueError(f"coupling endpoints {c.endpoints} out of range")
            key = (c.kind, frozenset(c.endpoints))
            if key in seen:
                raise ValueError(f"duplicate {c.kind.value} coupling on pair {c.endpoints}")
            seen.add(key)
        for d in self.drives:
            if not (0 <= d.target < n):
                raise ValueError(f"drive target {d.target} out of range")
        if self.dimension_cap is not None and self.total_dimension > self.dimension_cap:
            raise DimensionCapError(
                f"total dimension {self.total_dimension} exceeds cap {self.dimension_cap}; "
                "pass dimension_cap=None (or a larger cap) to override")

    @property
    def bus_couplings_in_order(self) -> tuple[CouplingSpec, ...]:
        return tuple(c for c in self.couplings if c.kind is CouplingKind.BUS)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(t.levels for t in self.transmons) + tuple(
            c.bus_levels for c in self.bus_couplings_in_order)

    @property
    def total_dimension(self) -> int:
        return math.prod(self.dims)

    @property
    def num_transmons(self) -> int:
        return len(self.transmons)

    def without_drives(self) -> "SystemSpec":
        return replace(self, drives=())

    def with_drives(self, drives) -> "SystemSpec":
        return replace(self, drives=tuple(drives))

    def cancellation_drives(self) -> tuple[DriveTone, ...]:
        return tuple(d for d in self.drives if d.role is DriveRole.CANCELLATION)

    def with_levels(self, levels: int) -> "SystemSpec":
        """Same system with every transmon truncated at `levels`."""
        return replace(self, transmons=tuple(replace(t, levels=levels) for t in self.transmons))


def ladder_ops(levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowering and raising operators on a `levels`-dimensional ladder.

    The lowering operator has sqrt(n) on the (n-1, n) superdiagonal; the
    raising operator is its conjugate transpose.
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    lowering = np.zeros((levels, levels), dtype=complex)
    n = np.arange(1, levels)
    lowering[n - 1, n] = np.sqrt(n)
    return lowering, lowering.conj().T


def number_op(levels: int) -> np.ndarray:
    return np.diag(np.arange(levels, dtype=float)).astype(complex)


def embed(op: np.ndarray, slot: int, dims: list[int] | tuple[int, ...]) -> np.ndarray:
    """Embed a single-mode operator into the tensor product of all modes.

    Returns I (x) ... (x) op (x) ... (x) I with `op` at position `slot`.
    Mode 0 is the most significant tensor factor.
    """
    if not (0 <= slot < len(dims)):
        raise ValueError(f"slot {slot} out of range for {len(dims)} modes")
    if op.shape != (dims[slot], dims[slot]):
        raise ValueError(f"operator shape {op.shape} does not match dims[{slot}]={dims[slot]}")
    left = int(np.prod(dims[:slot], dtype=np.int64)) if slot else 1
    right = int(np.prod(dims[slot + 1:], dtype=np.int64)) if slot + 1 < len(dims) else 1
    out = np.kron(np.kron(np.eye(left), np.asarray(op, dtype=complex)), np.eye(right))
    return out


def is_hermitian(h: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    norm = np.linalg.norm(h)
    if norm == 0:
        return True
    return np.linalg.norm(h - h.conj().T) / norm < tol


def _duffing_diagonal(t: TransmonSpec, frame_frequency: float = 0.0) -> np.ndarray:
    n = np.arange(t.levels, dtype=float)
    return (t.frequency - frame_frequency) * n + 0.5 * t.anharmonicity * n * (n - 1.0)


def _kron_chain(factors) -> scipy.sparse.csr_matrix:
    out = None
    for f in factors:
        out = f if out is None else scipy.sparse.kron(out, f, format="csr")
    return out.tocsr()


class _SparseBuilder:
    """Accumulates multi-mode operator terms as sparse matrices."""

    def __init__(self, dims):
        self.dims = tuple(dims)
        self.eyes = [scipy.sparse.identity(d, format="csr") for d in self.dims]
        self.terms = []

    def add_single(self, slot: int, op):
        factors = list(self.eyes)
        factors[slot] = scipy.sparse.csr_matrix(op)
        self.terms.append(_kron_chain(factors))

    def add_product(self, slot_a: int, op_a, slot_b: int, op_b, coefficient):
        factors = list(self.eyes)
        factors[slot_a] = scipy.sparse.csr_matrix(op_a)
        factors[slot_b] = scipy.sparse.csr_matrix(op_b)
        self.terms.append(coefficient * _kron_chain(factors))

    def result(self) -> scipy.sparse.csr_matrix:
        dim = math.prod(self.dims)
        if not self.terms:
            return scipy.sparse.csr_matrix((dim, dim), dtype=complex)
        return sum(self.terms).astype(complex)


def build_static_hamiltonian_sparse(system: SystemSpec) -> scipy.sparse.csr_matrix:
    """Sparse lab-frame Hamiltonian with full coupling terms (drives ignored)."""
    dims = system.dims
    builder = _SparseBuilder(dims)

    for i, t in enumerate(system.transmons):
        builder.add_single(i, np.diag(_duffing_diagonal(t)))

    def x_mat(slot: int) -> np.ndarray:
        a, adag = ladder_ops(dims[slot])
        return a + adag

    bus_slot = system.num_transmons
    for c in system.couplings:
        p, q = c.endpoints
        if c.kind is CouplingKind.DIRECT:
            builder.add_product(p, x_mat(p), q, x_mat(q), c.strength)
        else:
            builder.add_single(bus_slot, c.bus_frequency * number_op(c.bus_levels))
            for endpoint, g in zip((p, q), c.bus_couplings):
                builder.add_product(endpoint, x_mat(endpoint), bus_slot,
                                    x_mat(bus_slot), g)
            bus_slot += 1
    return builder.result()


def build_static_hamiltonian(system: SystemSpec) -> np.ndarray:
    """Lab-frame Hamiltonian with full (counter-rotating) coupling terms.

    Drives are ignored; the result is the sum of Duffing diagonals, direct
    exchange elements J (a_p^+ + a_p)(a_q^+ + a_q), and bus modes with their
    qubit-bus couplings in the same full form.  Entries are in GHz.
    """
    return build_static_hamiltonian_sparse(system).toarray()


def build_rwa_hamiltonian_sparse(system: SystemSpec,
                                 frame_frequency: float) -> scipy.sparse.csr_matrix:
    """Sparse rotating-frame Hamiltonian; see build_rwa_hamiltonian."""
    offending = sorted({d.frequency for d in system.drives if d.frequency != frame_frequency})
    if offending:
        raise MultiFrequencyFrameError(
            f"drives at {offending} GHz do not match frame {frame_frequency} GHz")

    dims = system.dims
    builder = _SparseBuilder(dims)

    for i, t in enumerate(system.transmons):
        builder.add_single(i, np.diag(_duffing_diagonal(t, frame_frequency)))

    def a_mat(slot: int) -> np.ndarray:
        return ladder_ops(dims[slot])[0]

    def add_exchange(p: int, q: int, g: float):
        builder.add_product(p, a_mat(p).conj().T, q, a_mat(q), g)
        builder.add_product(p, a_mat(p), q, a_mat(q).conj().T, g)

    bus_slot = system.num_transmons
    for c in system.couplings:
        p, q = c.endpoints
        if c.kind is CouplingKind.DIRECT:
            add_exchange(p, q, c.strength)
        else:
            builder.add_single(
                bus_slot, (c.bus_frequency - frame_frequency) * number_op(c.bus_levels))
            for endpoint, g in zip((p, q), c.bus_couplings):
                add_exchange(endpoint, bus_slot, g)
            bus_slot += 1

    for d in system.drives:
        half = 0.5 * d.amplitude
        a = a_mat(d.target)
        builder.add_single(d.target,
                           half * np.exp(1j * d.phase) * a.conj().T
                           + half * np.exp(-1j * d.phase) * a)
    return builder.result()


def build_rwa_hamiltonian(system: SystemSpec, frame_frequency: float) -> np.ndarray:
    """Time-independent Hamiltonian in the frame rotating at `frame_frequency`.

    Every drive in the system must share the frame frequency; mixed drive
    frequencies have no static single-frame representation and raise
    MultiFrequencyFrameError (use pulse-level propagation instead).
    Counter-rotating coupling terms are dropped; each drive contributes
    (Omega/2)(exp(i phi) a^+ + exp(-i phi) a).
    """
    return build_rwa_hamiltonian_sparse(system, frame_frequency).toarray()
