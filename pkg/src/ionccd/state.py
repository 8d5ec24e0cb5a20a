"""Dense state-vector and density-matrix register for a handful of qubits.

Qubit 0 is the most significant bit of a basis index, so the basis string
``|0011>`` reads left to right as qubits 0, 1, 2, 3 (ions A, B, C, D).

Measurement frames
------------------
A projective measurement in basis ``X`` or ``Y`` is realised by rotating the
qubit and reading it out in ``Z``:

* ``Z``: no rotation
* ``X``: ``R_y(-pi/2)``, so that ``R^dag Z R = sigma_x``
* ``Y``: ``R_x(+pi/2)``, so that ``R^dag Z R = sigma_y``

In every basis, outcome bit 0 corresponds to eigenvalue +1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence, Union

import numpy as np

MAX_QUBITS = 10

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _n_from_dim(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if dim < 2 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    n_qubits: int = field(default=None)

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        n = _n_from_dim(amps.size)
        if self.n_qubits is not None and self.n_qubits != n:
            raise ValueError(f"expected {2**self.n_qubits} amplitudes, got {amps.size}")
        norm = np.vdot(amps, amps).real
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state is not normalised (norm^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def basis(cls, bits: Union[str, Sequence[int]]) -> "PureState":
        """Computational basis state from a bit string such as ``"1111"``."""
        bits = [int(b) for b in bits]
        index = int("".join(map(str, bits)), 2)
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    @classmethod
    def from_vector(cls, vec) -> "PureState":
        vec = np.asarray(vec, dtype=complex)
        return cls(vec / np.linalg.norm(vec))

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def equal_up_to_phase(self, other: "PureState", atol: float = 1e-10) -> bool:
        return abs(abs(self.overlap(other)) - 1.0) <= atol


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace matrix.

    Positivity is *not* enforced on construction because linear-inversion
    estimates may carry small negative eigenvalues; use :meth:`is_physical`.
    """

    elements: np.ndarray
    n_qubits: int = field(default=None)

    def __post_init__(self):
        rho = _frozen(self.elements)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        n = _n_from_dim(rho.shape[0])
        if self.n_qubits is not None and self.n_qubits != n:
            raise ValueError(f"expected a {2**self.n_qubits}-dim matrix, got {rho.shape[0]}")
        if not np.allclose(rho, rho.conj().T, atol=1e-10, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-10:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        object.__setattr__(self, "elements", rho)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 2**n_qubits
        return cls(np.eye(d) / d)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.elements)

    def is_physical(self, tol: float = 1e-9) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def purity(self) -> float:
        return float(np.real(np.trace(self.elements @ self.elements)))


@dataclass(frozen=True)
class Operator:
    """A k-qubit matrix, optionally flagged unitary and/or observable."""

    matrix: np.ndarray
    unitary: bool = False
    observable: bool = False
    name: str = ""

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        _n_from_dim(m.shape[0])
        if self.unitary and not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=1e-12, rtol=0):
            raise ValueError(f"operator {self.name or ''} flagged unitary is not unitary")
        if self.observable and not np.allclose(m, m.conj().T, atol=1e-12, rtol=0):
            raise ValueError(f"operator {self.name or ''} flagged observable is not Hermitian")
        object.__setattr__(self, "matrix", m)

    @property
    def arity(self) -> int:
        return _n_from_dim(self.matrix.shape[0])

    def __matmul__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix @ other.matrix, unitary=self.unitary and other.unitary)

    def tensor(self, other: "Operator") -> "Operator":
        return Operator(
            np.kron(self.matrix, other.matrix),
            unitary=self.unitary and other.unitary,
            observable=self.observable and other.observable,
        )

    @property
    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, unitary=self.unitary, observable=self.observable)


def pauli(label: str) -> Operator:
    """Pauli string such as ``"XXXY"`` as an observable (qubit 0 leftmost)."""
    mats = [PAULI[c] for c in label.upper()]
    return Operator(reduce(np.kron, mats), unitary=True, observable=True, name=label.upper())


State = Union[PureState, DensityMatrix]


def _check_targets(targets: Sequence[int], n: int, arity: int) -> tuple:
    targets = tuple(int(t) for t in targets)
    if len(targets) != arity:
        raise ValueError(f"operator acts on {arity} qubits but {len(targets)} targets given")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate target index in {targets}")
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"target {t} out of range for {n} qubits")
    return targets


def _apply_to_axes(tensor: np.ndarray, matrix: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    k = len(axes)
    op = matrix.reshape([2] * (2 * k))
    out = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def apply_matrix(rho_or_psi: np.ndarray, matrix: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Embed ``matrix`` on ``targets`` and apply it to a raw array.

    1-D input is treated as a state vector, 2-D input as a density matrix
    (conjugated on both sides). No unitarity check; used by channels.
    """
    targets = list(targets)
    if rho_or_psi.ndim == 1:
        psi = rho_or_psi.reshape([2] * n)
        return _apply_to_axes(psi, matrix, targets).reshape(-1)
    rho = rho_or_psi.reshape([2] * (2 * n))
    rho = _apply_to_axes(rho, matrix, targets)
    rho = _apply_to_axes(rho, matrix.conj(), [t + n for t in targets])
    return rho.reshape(2**n, 2**n)


def sandwich(rho: np.ndarray, left: np.ndarray, right: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Compute ``L rho R^dag`` with ``L``/``R`` embedded on ``targets``."""
    targets = list(targets)
    t = rho.reshape([2] * (2 * n))
    t = _apply_to_axes(t, left, targets)
    t = _apply_to_axes(t, right.conj(), [q + n for q in targets])
    return t.reshape(2**n, 2**n)


def apply_unitary(state: State, op: Operator, targets: Sequence[int]) -> State:
    """Apply a unitary to ``targets`` (in the given order); input is untouched."""
    if not op.unitary:
        raise ValueError("apply_unitary requires an operator flagged unitary")
    targets = _check_targets(targets, state.n_qubits, op.arity)
    if isinstance(state, PureState):
        return PureState(apply_matrix(state.amplitudes, op.matrix, targets, state.n_qubits))
    out = apply_matrix(state.elements, op.matrix, targets, state.n_qubits)
    return DensityMatrix(0.5 * (out + out.conj().T))


def embed(op: Operator, targets: Sequence[int], n: int) -> np.ndarray:
    """Full ``2^n x 2^n`` matrix of ``op`` acting on ``targets``."""
    targets = _check_targets(targets, n, op.arity)
    eye = np.eye(2**n, dtype=complex)
    cols = [apply_matrix(eye[:, j], op.matrix, targets, n) for j in range(2**n)]
    return np.stack(cols, axis=1)


def expectation(state: State, obs: Operator, targets: Sequence[int] = None) -> float:
    if not obs.observable:
        raise ValueError("expectation requires an operator flagged observable")
    n = state.n_qubits
    targets = tuple(range(n)) if targets is None else targets
    targets = _check_targets(targets, n, obs.arity)
    if isinstance(state, PureState):
        phi = apply_matrix(state.amplitudes, obs.matrix, targets, n)
        val = np.vdot(state.amplitudes, phi)
    else:
        t = state.elements.reshape([2] * (2 * n))
        t = _apply_to_axes(t, obs.matrix, targets)
        val = np.trace(t.reshape(2**n, 2**n))
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"expectation has imaginary part {val.imag!r}")
    return float(val.real)


def _ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


MEASUREMENT_ROTATION = {
    "Z": np.eye(2, dtype=complex),
    "X": _ry(-np.pi / 2),
    "Y": _rx(np.pi / 2),
}


def setting_unitary(setting: str) -> np.ndarray:
    """Full pre-measurement rotation for a per-qubit basis string like ``"XXZY"``."""
    try:
        mats = [MEASUREMENT_ROTATION[c] for c in setting.upper()]
    except KeyError as err:
        raise ValueError(f"invalid basis label {err.args[0]!r} in setting {setting!r}") from None
    return reduce(np.kron, mats)


def outcome_probabilities(state: State, setting: str) -> np.ndarray:
    """Born probabilities of the ``2^n`` outcome bit strings in a setting."""
    if len(setting) != state.n_qubits:
        raise ValueError(f"setting {setting!r} does not match {state.n_qubits} qubits")
    u = setting_unitary(setting)
    if isinstance(state, PureState):
        probs = np.abs(u @ state.amplitudes) ** 2
    else:
        probs = np.einsum("ij,jk,ik->i", u, state.elements, u.conj()).real
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def born_sample(state: State, setting: str, shots: int, rng_seed=None) -> np.ndarray:
    """Sample ``shots`` i.i.d. outcomes; returns counts per bit string."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = outcome_probabilities(state, setting)
    rng = np.random.default_rng(rng_seed)
    return rng.multinomial(int(shots), probs)


def parity_signs(n: int, mask: int = None) -> np.ndarray:
    """(-1)^(number of set bits of ``index & mask``) for all basis indices."""
    mask = 2**n - 1 if mask is None else mask
    idx = np.arange(2**n)
    bits = np.zeros(2**n, dtype=int)
    m = idx & mask
    while np.any(m):
        bits += m & 1
        m = m >> 1
    return np.where(bits % 2 == 0, 1.0, -1.0)
