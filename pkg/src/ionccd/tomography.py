"""Tomography datasets, linear inversion, RrhoR maximum likelihood, SPAM correction.

Settings are strings over ``Z, X, Y`` (one letter per qubit, qubit 0 first)
enumerated in ``itertools.product("ZXY", repeat=n)`` order. Outcome ``i`` of a
setting is the bit string of ``i`` with qubit 0 as the most significant bit;
bit 0 means eigenvalue +1.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache, reduce
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .noise import apply_local_maps, spam_matrices
from .state import PAULI, DensityMatrix, PureState, parity_signs, setting_unitary

DEFAULT_SHOTS = 629
BASES = "ZXY"


def all_settings(n: int) -> List[str]:
    return ["".join(p) for p in itertools.product(BASES, repeat=n)]


def _check_setting(setting: str, n: int) -> str:
    setting = setting.upper()
    if len(setting) != n or set(setting) - set(BASES):
        raise ValueError(f"invalid setting {setting!r} for {n} qubits")
    return setting


@dataclass
class TomographyDataset:
    """Counts per setting (``2^n`` bins each). Pseudo-counts may be real-valued."""

    n_qubits: int
    counts: Dict[str, np.ndarray]
    shots: float
    spam_corrected: bool = False

    def __post_init__(self):
        d = 2**self.n_qubits
        clean = {}
        for s, c in self.counts.items():
            s = _check_setting(s, self.n_qubits)
            c = np.asarray(c, dtype=float)
            if c.shape != (d,):
                raise ValueError(f"setting {s}: expected {d} outcome bins, got shape {c.shape}")
            if not self.spam_corrected:
                if np.any(c < 0):
                    raise ValueError(f"setting {s}: negative counts")
                if abs(c.sum() - self.shots) > 1e-9 * max(1.0, self.shots):
                    raise ValueError(f"setting {s}: counts sum to {c.sum()}, expected {self.shots}")
            clean[s] = c
        self.counts = clean

    @property
    def settings(self) -> List[str]:
        return list(self.counts)

    @property
    def is_complete(self) -> bool:
        return set(all_settings(self.n_qubits)) <= set(self.counts)

    @property
    def total_measurements(self) -> float:
        return self.shots * len(self.counts)

    @property
    def has_negative(self) -> bool:
        return any(np.any(c < 0) for c in self.counts.values())

    def frequencies(self, setting: str) -> np.ndarray:
        return self.counts[setting] / self.shots

    def require_complete(self):
        missing = sorted(set(all_settings(self.n_qubits)) - set(self.counts))
        if missing:
            more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
            raise ValueError(f"incomplete dataset: missing settings {missing[:5]}{more}")

    def table(self) -> np.ndarray:
        """Counts as an ``(3^n, 2^n)`` array in canonical setting order."""
        self.require_complete()
        return np.stack([self.counts[s] for s in all_settings(self.n_qubits)])


# -- forward model ----------------------------------------------------------


@lru_cache(maxsize=None)
def projector_rows(n: int) -> np.ndarray:
    """Stacked setting unitaries: row ``s*2^n + i`` is ``<i| U_s``."""
    v = np.concatenate([setting_unitary(s) for s in all_settings(n)])
    v.setflags(write=False)
    return v


def _rho(state) -> np.ndarray:
    if isinstance(state, PureState):
        return np.outer(state.amplitudes, state.amplitudes.conj())
    if isinstance(state, DensityMatrix):
        return state.elements
    return np.asarray(state, dtype=complex)


def _n_of(rho: np.ndarray) -> int:
    n = int(round(np.log2(rho.shape[0])))
    if 2**n != rho.shape[0]:
        raise ValueError("dimension is not a power of two")
    return n


def born_table(state) -> np.ndarray:
    """Exact outcome probabilities, ``(3^n, 2^n)`` in canonical order."""
    rho = _rho(state)
    n = _n_of(rho)
    v = projector_rows(n)
    p = np.sum((v @ rho) * v.conj(), axis=1).real
    p = np.clip(p, 0.0, None).reshape(3**n, 2**n)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SpamModel:
    """Per-qubit readout confusion plus decay of the shelved level before detection."""

    confusion: tuple
    shelve_wait: tuple
    d_lifetime: float

    @classmethod
    def from_flips(cls, n: int, readout_flip: float, shelve_wait: float, d_lifetime: float) -> "SpamModel":
        from .noise import readout_confusion

        m = readout_confusion(readout_flip)
        return cls(tuple(m for _ in range(n)), (shelve_wait,) * n, d_lifetime)

    def matrices(self) -> list:
        return spam_matrices(self.confusion, self.shelve_wait, self.d_lifetime)

    def corrupt(self, probs: np.ndarray) -> np.ndarray:
        return apply_local_maps(np.asarray(probs, dtype=float), self.matrices())


def sample_table(probs: np.ndarray, shots: int, rng) -> np.ndarray:
    return rng.multinomial(int(shots), probs).astype(float)


def _table_to_dataset(table: np.ndarray, n: int, shots, spam_corrected=False) -> TomographyDataset:
    return TomographyDataset(n, dict(zip(all_settings(n), table)), shots, spam_corrected)


def simulate_dataset(
    state,
    shots_per_setting: int = DEFAULT_SHOTS,
    rng_seed=None,
    spam: Optional[SpamModel] = None,
) -> TomographyDataset:
    """Multinomial counts for all ``3^n`` settings, optionally SPAM-corrupted."""
    if shots_per_setting < 1:
        raise ValueError("shots_per_setting must be >= 1")
    probs = born_table(state)
    if spam is not None:
        probs = spam.corrupt(probs)
    rng = np.random.default_rng(rng_seed)
    n = _n_of(_rho(state))
    return _table_to_dataset(sample_table(probs, shots_per_setting, rng), n, int(shots_per_setting))


def exact_dataset(state, spam: Optional[SpamModel] = None) -> TomographyDataset:
    """Infinite-shot dataset: the counts are the outcome probabilities (shots = 1)."""
    probs = born_table(state)
    if spam is not None:
        probs = spam.corrupt(probs)
    return _table_to_dataset(probs, _n_of(_rho(state)), 1.0)


# -- linear inversion -------------------------------------------------------


def _mask_bits(n: int, positions: Sequence[int]) -> int:
    return sum(1 << (n - 1 - q) for q in positions)


@lru_cache(maxsize=None)
def _moment_plan(n: int):
    """For each setting, the Pauli strings it estimates and their sign vectors."""
    plan = []
    for s in all_settings(n):
        entries = []
        for keep in itertools.product((False, True), repeat=n):
            label = "".join(c if k else "I" for c, k in zip(s, keep))
            mask = _mask_bits(n, [q for q in range(n) if keep[q]])
            entries.append((label, parity_signs(n, mask)))
        plan.append((s, entries))
    return plan


def pauli_expectations(ds: TomographyDataset) -> Dict[str, float]:
    """Empirical Pauli-string means, averaged over every compatible setting."""
    ds.require_complete()
    sums: Dict[str, float] = {}
    hits: Dict[str, int] = {}
    for s, entries in _moment_plan(ds.n_qubits):
        f = ds.frequencies(s)
        for label, signs in entries:
            sums[label] = sums.get(label, 0.0) + float(f @ signs)
            hits[label] = hits.get(label, 0) + 1
    return {k: sums[k] / hits[k] for k in sums}


def pauli_string(label: str) -> np.ndarray:
    return reduce(np.kron, [PAULI[c] for c in label])


def model_expectations(rho, labels: Sequence[str]) -> Dict[str, float]:
    rho = _rho(rho)
    return {k: float(np.trace(rho @ pauli_string(k)).real) for k in labels}


def linear_inversion(ds: TomographyDataset) -> DensityMatrix:
    """``rho = 2^-n sum_P <P> P``; Hermitian and trace one, not necessarily positive."""
    moments = pauli_expectations(ds)
    n = ds.n_qubits
    rho = sum(v * pauli_string(k) for k, v in moments.items()) / 2**n
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real)


# -- maximum likelihood -----------------------------------------------------


WARM_MIX = 1e-6


def psd_project(rho: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and renormalize."""
    w, u = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    rho = (u * np.clip(w, 0.0, None)) @ u.conj().T
    return rho / np.trace(rho).real


@dataclass
class MLResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    history: Optional[List[float]] = None


def log_likelihood(ds: TomographyDataset, rho) -> float:
    counts = np.clip(ds.table().ravel(), 0.0, None)
    p = born_table(rho).ravel()
    mask = counts > 0
    return float(np.sum(counts[mask] * np.log(np.maximum(p[mask], 1e-300))))


def mle_reconstruct(
    ds: TomographyDataset,
    tol: float = 1e-10,
    max_iters: int = 5000,
    dilution: Optional[float] = None,
    init=None,
    track: bool = False,
) -> MLResult:
    """Iterative ``rho <- N[R rho R]`` with ``R = sum_j (n_j / p_j) Pi_j``.

    Stops when the relative change of the log-likelihood falls below ``tol``.
    Negative pseudo-counts are clipped to zero. ``dilution`` (0 < eps <= 1)
    uses ``(1 + eps R) rho (1 + eps R)`` instead; a plain step that would
    lower the likelihood is automatically replaced by diluted ones.

    The default start is the linear-inversion estimate with negative
    eigenvalues clipped, mixed with ``WARM_MIX`` of ``1/d`` so every outcome
    keeps nonzero probability. Starting from ``1/d`` (``init="mixed"``) is far
    slower to approach rank-deficient states.
    """
    n = ds.n_qubits
    d = 2**n
    v = projector_rows(n)
    counts = np.clip(ds.table().ravel(), 0.0, None)
    total = counts.sum()
    if total <= 0:
        raise ValueError("dataset has no counts")
    f = counts / total * 3**n  # R(rho_true) -> identity
    mask = f > 0
    if init is None:
        rho = (1 - WARM_MIX) * psd_project(linear_inversion(ds).elements) + WARM_MIX * np.eye(d) / d
    elif isinstance(init, str) and init == "mixed":
        rho = np.eye(d, dtype=complex) / d
    else:
        rho = _rho(init).astype(complex)

    def probs(r):
        return np.maximum(np.sum((v @ r) * v.conj(), axis=1).real, 1e-300)

    def loglik(p):
        return float(np.sum(f[mask] * np.log(p[mask])))

    def step(r, p, eps):
        big_r = (v.conj().T * (f / p)) @ v
        if eps is not None:
            big_r = (np.eye(d) + eps * big_r) / (1 + eps)
        new = big_r @ r @ big_r
        new = 0.5 * (new + new.conj().T)
        return new / np.trace(new).real

    p = probs(rho)
    ll = loglik(p)
    history = [ll] if track else None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new = step(rho, p, dilution)
        new_p = probs(new)
        new_ll = loglik(new_p)
        eps = 0.5 if dilution is None else dilution / 2
        while new_ll < ll - 1e-13 * abs(ll) and eps > 1e-6:
            new = step(rho, p, eps)
            new_p = probs(new)
            new_ll = loglik(new_p)
            eps /= 2
        if new_ll < ll:
            converged = True
            break
        change = abs(new_ll - ll)
        rho, p, ll = new, new_p, new_ll
        if track:
            history.append(ll)
        if change <= tol * max(abs(ll), 1e-12):
            converged = True
            break
    if not converged:
        warnings.warn(f"ML reconstruction not converged after {max_iters} iterations", RuntimeWarning)
    rho = DensityMatrix(psd_project(rho))
    return MLResult(rho, ll * total / 3**n, it, converged, history)


# -- SPAM correction --------------------------------------------------------


def spam_correct(ds: TomographyDataset, spam: SpamModel) -> TomographyDataset:
    """Apply the inverse per-qubit SPAM map to each setting's frequencies."""
    if len(spam.confusion) != ds.n_qubits:
        raise ValueError(f"need {ds.n_qubits} confusion matrices, got {len(spam.confusion)}")
    inverses = []
    for m in spam.matrices():
        if abs(np.linalg.det(m)) < 1e-12:
            raise np.linalg.LinAlgError("singular SPAM matrix, cannot correct")
        inverses.append(np.linalg.inv(m))
    table = ds.table() / ds.shots
    fixed = apply_local_maps(table, inverses) * ds.shots
    return _table_to_dataset(fixed, ds.n_qubits, ds.shots, spam_corrected=True)


# -- file format ------------------------------------------------------------


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int, column: Optional[int] = None):
        where = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


def _fmt_count(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dumps_dataset(ds: TomographyDataset) -> str:
    lines = [f"{ds.n_qubits},{_fmt_count(ds.shots)}"]
    for s, c in ds.counts.items():
        lines.append(",".join([s] + [_fmt_count(x) for x in c]))
    return "\n".join(lines) + "\n"


def _number(text: str, line: int, col: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetFormatError(f"not a number: {text!r}", line, col) from None


def loads_dataset(text: str, allow_incomplete: bool = False) -> TomographyDataset:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DatasetFormatError("missing header 'n_qubits,shots'", 1)
    head = lines[0].split(",")
    if len(head) != 2:
        raise DatasetFormatError("header must be 'n_qubits,shots'", 1)
    try:
        n = int(head[0])
    except ValueError:
        raise DatasetFormatError(f"n_qubits not an integer: {head[0]!r}", 1, 1) from None
    if n < 1:
        raise DatasetFormatError("n_qubits must be >= 1", 1, 1)
    shots = _number(head[1], 1, 2)
    counts = {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        setting = fields[0].strip().upper()
        if len(setting) != n or set(setting) - set(BASES):
            raise DatasetFormatError(f"bad setting {fields[0]!r}", lineno, 1)
        if setting in counts:
            raise DatasetFormatError(f"duplicate setting {setting}", lineno, 1)
        if len(fields) != 2**n + 1:
            raise DatasetFormatError(f"expected {2**n} counts, got {len(fields) - 1}", lineno, len(fields))
        vals = np.array([_number(x, lineno, j) for j, x in enumerate(fields[1:], 2)])
        if np.any(vals < 0):
            col = int(np.argmax(vals < 0)) + 2
            raise DatasetFormatError("negative count", lineno, col)
        if abs(vals.sum() - shots) > 1e-9 * max(1.0, shots):
            raise DatasetFormatError(f"counts sum to {vals.sum():g}, header says {shots:g}", lineno)
        counts[setting] = vals
    missing = len(all_settings(n)) - len(counts)
    if missing and not allow_incomplete:
        raise DatasetFormatError(f"incomplete dataset: {missing} of {3**n} settings missing", len(lines))
    return TomographyDataset(n, counts, shots)


def write_dataset(ds: TomographyDataset, path: Union[str, Path]):
    Path(path).write_text(dumps_dataset(ds))


def read_dataset(path: Union[str, Path], allow_incomplete: bool = False) -> TomographyDataset:
    return loads_dataset(Path(path).read_text(), allow_incomplete)
