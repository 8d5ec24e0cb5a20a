"""Stochastic error processes and the channels that apply them.

Dephasing is a common frequency offset ``delta(t)`` (rad/s) seen by every
qubit, plus optional per-ion static offsets. A trajectory stores cell
averages of ``delta`` on a uniform grid, so integrals of the piecewise
constant signal are exact, including across pulse times that fall inside a
cell.

Random streams are derived from a root seed with ``numpy.random.SeedSequence``:
work item ``k`` uses ``SeedSequence(root_seed, spawn_key=(k,))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .state import PAULI, DensityMatrix, PureState, sandwich

SINGLE_QUBIT_COHERENCE = 0.300  # s, Ramsey 1/e time of one ion


def child_seed(root_seed, counter: int) -> np.random.SeedSequence:
    """Seed of work item ``counter`` under ``root_seed``."""
    return np.random.SeedSequence(root_seed, spawn_key=(int(counter),))


# -- dephasing models -------------------------------------------------------


@dataclass(frozen=True)
class WhiteNoise:
    rate: float  # phase variance per unit time, rad^2/s

    kind = "white"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("white-noise rate must be >= 0")

    @classmethod
    def from_coherence_time(cls, t_coh: float, n_qubits: int = 1) -> "WhiteNoise":
        """Rate giving an n-qubit GHZ contrast of 1/e after ``t_coh``."""
        return cls(2.0 / (n_qubits**2 * t_coh))


@dataclass(frozen=True)
class QuasiStatic:
    sigma: float  # rad/s, standard deviation of a per-shot constant offset

    kind = "quasistatic"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("quasistatic sigma must be >= 0")


@dataclass(frozen=True)
class Tone:
    freq: float  # Hz
    amplitude: float  # rad/s

    kind = "tone"

    def __post_init__(self):
        if self.freq <= 0 or self.amplitude < 0:
            raise ValueError("tone needs freq > 0 and amplitude >= 0")


@dataclass(frozen=True)
class Composite:
    parts: tuple

    kind = "composite"


DephasingModel = Union[WhiteNoise, QuasiStatic, Tone, Composite]


def model_to_dict(model: Optional[DephasingModel]) -> dict:
    if model is None:
        return {"kind": "none"}
    if isinstance(model, Composite):
        return {"kind": "composite", "parts": [model_to_dict(p) for p in model.parts]}
    return {"kind": model.kind, **asdict(model)}


def model_from_dict(d: Optional[Mapping]) -> Optional[DephasingModel]:
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind")
    if kind == "none":
        return None
    if kind == "composite":
        return Composite(tuple(model_from_dict(p) for p in d["parts"]))
    cls = {"white": WhiteNoise, "quasistatic": QuasiStatic, "tone": Tone}.get(kind)
    if cls is None:
        raise ValueError(f"unknown dephasing model kind {kind!r}")
    return cls(**d)


@dataclass(frozen=True)
class FieldDrift:
    """Carrier-frequency deviation in Hz at servo cycle ``k``."""

    offset_hz: float = 0.0
    slope_hz_per_cycle: float = 0.05
    walk_hz: float = 0.5  # std of a per-cycle random-walk step

    def series(self, n_cycles: int, rng) -> np.ndarray:
        k = np.arange(n_cycles)
        walk = np.cumsum(rng.normal(0.0, self.walk_hz, n_cycles)) if self.walk_hz else 0.0
        return self.offset_hz + self.slope_hz_per_cycle * k + walk


def readout_confusion(flip: float) -> np.ndarray:
    """Symmetric column-stochastic confusion matrix ``M[observed, true]``."""
    return np.array([[1 - flip, flip], [flip, 1 - flip]])


@dataclass
class NoiseParams:
    dephasing: Optional[DephasingModel] = field(
        default_factory=lambda: WhiteNoise.from_coherence_time(SINGLE_QUBIT_COHERENCE)
    )
    static_offsets: Optional[tuple] = None  # rad/s per ion
    gate2_error: float = 0.010
    gate1_error: float = 5.1e-5
    d_lifetime: float = 1.2
    readout_flip: float = 0.0008
    confusion: Optional[tuple] = None  # per-qubit 2x2, overrides readout_flip
    shuttle_phase_bound: float = 0.6
    edge_phase_seed: int = 0
    edge_phases: Optional[tuple] = None  # rad per segment-to-segment step
    phase_calibration_error: float = 0.0  # rad, std per edge
    heating_rate: float = 10.0  # quanta/s
    transport_quanta: float = 0.01  # per segment step
    split_quanta: float = 0.05  # per separation or merge
    cooled_quanta: float = 0.05
    quanta_error_slope: float = 0.005  # gate-2 error per quantum
    b_drift: FieldDrift = field(default_factory=FieldDrift)

    def __post_init__(self):
        for name in ("gate2_error", "gate1_error", "readout_flip"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p!r}")
        if self.d_lifetime <= 0:
            raise ValueError("d_lifetime must be > 0")
        if self.heating_rate < 0 or self.quanta_error_slope < 0:
            raise ValueError("heating rate and quanta slope must be >= 0")
        for m in self.confusion_matrices(1 if self.confusion is None else len(self.confusion)):
            check_confusion(m)

    def confusion_matrices(self, n_qubits: int) -> list:
        if self.confusion is not None:
            if len(self.confusion) != n_qubits:
                raise ValueError(f"{len(self.confusion)} confusion matrices for {n_qubits} qubits")
            return [np.asarray(m, dtype=float) for m in self.confusion]
        return [readout_confusion(self.readout_flip) for _ in range(n_qubits)]

    def edge_profile(self, n_segments: int) -> np.ndarray:
        """Phase (rad) picked up by a qubit on each segment-to-segment step.

        Drawn once from ``edge_phase_seed`` uniformly in +-bound/6, so a
        six-segment transport stays within the configured bound.
        """
        if self.edge_phases is not None:
            prof = np.asarray(self.edge_phases, dtype=float)
            if prof.shape != (n_segments - 1,):
                raise ValueError(f"edge_phases needs {n_segments - 1} entries")
            return prof
        rng = np.random.default_rng(child_seed(self.edge_phase_seed, 0))
        b = self.shuttle_phase_bound / 6
        return rng.uniform(-b, b, n_segments - 1)

    def calibrated_profile(self, n_segments: int) -> np.ndarray:
        prof = self.edge_profile(n_segments)
        if self.phase_calibration_error == 0:
            return prof
        rng = np.random.default_rng(child_seed(self.edge_phase_seed, 1))
        return prof + rng.normal(0.0, self.phase_calibration_error, prof.shape)

    def to_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            if k == "dephasing":
                v = model_to_dict(v)
            elif k == "b_drift":
                v = asdict(v)
            elif isinstance(v, tuple):
                v = np.asarray(v).tolist()
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseParams":
        d = dict(d)
        kw = {}
        if "dephasing" in d:
            kw["dephasing"] = model_from_dict(d.pop("dephasing"))
        if "b_drift" in d:
            kw["b_drift"] = FieldDrift(**d.pop("b_drift"))
        for k in ("static_offsets", "edge_phases", "confusion"):
            if k in d:
                kw[k] = _to_tuple(d.pop(k))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown noise parameter(s): {sorted(unknown)}")
        return cls(**kw, **d)

    @classmethod
    def ideal(cls) -> "NoiseParams":
        return cls(
            dephasing=None,
            gate2_error=0.0,
            gate1_error=0.0,
            d_lifetime=math.inf,
            readout_flip=0.0,
            heating_rate=0.0,
            transport_quanta=0.0,
            split_quanta=0.0,
            cooled_quanta=0.0,
            quanta_error_slope=0.0,
        )


def _to_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(_to_tuple(x) for x in v)
    return v


def check_confusion(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2) or np.any(m < 0) or not np.allclose(m.sum(axis=0), 1.0, atol=1e-12):
        raise ValueError(f"malformed confusion matrix {m.tolist()}: needs 2x2, column-stochastic")
    return m


# -- dephasing trajectories -------------------------------------------------


@dataclass(frozen=True)
class DephasingTrajectory:
    """Cell-averaged common offset ``values[..., k]`` on ``edges[k]..edges[k+1]``.

    Leading axes of ``values`` index independent shots.
    """

    edges: np.ndarray
    values: np.ndarray
    offsets: Optional[np.ndarray] = None  # per-ion static offsets, rad/s

    @property
    def duration(self) -> float:
        return float(self.edges[-1])

    @property
    def n_shots(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def cumulative(self, t) -> np.ndarray:
        """``int_0^t delta`` for times ``t``; shape ``(shots..., len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        dt = np.diff(self.edges)
        cum = np.concatenate(
            [np.zeros(self.values.shape[:-1] + (1,)), np.cumsum(self.values * dt, axis=-1)], axis=-1
        )
        i = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, len(dt) - 1)
        return cum[..., i] + self.values[..., i] * (t - self.edges[i])

    def toggled_phase(self, pulse_times: Sequence[float]) -> np.ndarray:
        """``int s(t) delta(t) dt`` with ``s`` flipping sign at each pulse."""
        bounds = np.concatenate([[0.0], np.asarray(pulse_times, dtype=float), [self.duration]])
        signs = (-1.0) ** np.arange(len(bounds) - 1)
        f = self.cumulative(bounds)
        return np.sum(signs * np.diff(f, axis=-1), axis=-1)


def _cell_grid(duration: float, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if duration < dt * (1 - 1e-12):
        raise ValueError("duration must be >= dt")
    k = max(1, int(math.ceil(duration / dt - 1e-9)))
    return np.linspace(0.0, duration, k + 1)


def _sample_values(model, edges, n, seq: np.random.SeedSequence) -> np.ndarray:
    k = len(edges) - 1
    rng = np.random.default_rng(seq)
    dt = np.diff(edges)
    if isinstance(model, WhiteNoise):
        return np.sqrt(model.rate / dt) * rng.standard_normal((n, k))
    if isinstance(model, QuasiStatic):
        return np.repeat(model.sigma * rng.standard_normal((n, 1)), k, axis=1)
    if isinstance(model, Tone):
        w = 2 * np.pi * model.freq
        phi0 = rng.uniform(0, 2 * np.pi, (n, 1))
        c = np.cos(w * edges + phi0)
        return model.amplitude * (c[:, :-1] - c[:, 1:]) / (w * dt)
    if isinstance(model, Composite):
        total = np.zeros((n, k))
        for sub, part in zip(seq.spawn(len(model.parts)), model.parts):
            total += _sample_values(part, edges, n, sub)
        return total
    raise TypeError(f"unknown dephasing model {model!r}")


def sample_trajectory(
    model: Optional[DephasingModel],
    duration: float,
    dt: float,
    rng_seed=None,
    n_shots: Optional[int] = None,
    offsets: Optional[Sequence[float]] = None,
) -> DephasingTrajectory:
    """Sample one trajectory (``n_shots=None``) or a batch of them."""
    edges = _cell_grid(duration, dt)
    n = 1 if n_shots is None else int(n_shots)
    if model is None:
        values = np.zeros((n, len(edges) - 1))
    else:
        if not isinstance(rng_seed, np.random.SeedSequence):
            rng_seed = np.random.SeedSequence(rng_seed)
        values = _sample_values(model, edges, n, rng_seed)
    if n_shots is None:
        values = values[0]
    offs = None if offsets is None else np.asarray(offsets, dtype=float)
    return DephasingTrajectory(edges, values, offs)


def default_dt(duration: float, n_pulses: int) -> float:
    """(pulse spacing) / 100, never below 1 us."""
    spacing = duration / max(1, n_pulses)
    return max(spacing / 100.0, 1e-6)


def _qubit_phases(traj: DephasingTrajectory, pulse_times, sensitive: Sequence[int]) -> np.ndarray:
    phases = []
    for q in sensitive:
        times = pulse_times.get(q, ()) if isinstance(pulse_times, Mapping) else pulse_times
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) < 0):
            raise ValueError("pulse times must be sorted")
        if times.size and (times[0] < 0 or times[-1] > traj.duration):
            raise ValueError("pulse times must lie within the trajectory duration")
        phi = np.atleast_1d(traj.toggled_phase(times))
        if traj.offsets is not None and traj.offsets[q] != 0:
            bounds = np.concatenate([[0.0], times, [traj.duration]])
            signs = (-1.0) ** np.arange(len(bounds) - 1)
            phi = phi + traj.offsets[q] * np.sum(signs * np.diff(bounds))
        phases.append(phi)
    return np.stack(phases, axis=-1)  # (shots, len(sensitive))


def apply_collective_dephasing(
    state: Union[PureState, DensityMatrix],
    trajectory: DephasingTrajectory,
    pulse_times: Union[Sequence[float], Mapping[int, Sequence[float]]] = (),
    sensitive_qubits: Optional[Sequence[int]] = None,
):
    """Toggling-frame phase from ``trajectory``; ensembles are averaged.

    The refocusing pulses themselves are not applied here, only the sign
    changes they cause in the accumulated phase. ``pulse_times`` may be a
    single list shared by all qubits or a mapping ``qubit -> times``.
    """
    n = state.n_qubits
    sensitive = list(range(n)) if sensitive_qubits is None else list(sensitive_qubits)
    phis = _qubit_phases(trajectory, pulse_times, sensitive)
    idx = np.arange(2**n)
    bits = np.stack([(idx >> (n - 1 - q)) & 1 for q in sensitive], axis=0).astype(float)
    basis_phase = phis @ bits  # (shots, 2^n)
    if isinstance(state, PureState) and trajectory.n_shots == 1:
        return PureState(state.amplitudes * np.exp(1j * basis_phase[0]))
    rho = state.to_density().elements if isinstance(state, PureState) else state.elements
    e = np.exp(1j * basis_phase)
    factor = e.T @ e.conj() / e.shape[0]
    out = rho * factor
    return DensityMatrix(0.5 * (out + out.conj().T))


def white_dephasing_channel(rho: DensityMatrix, rate: float, duration: float, qubits=None) -> DensityMatrix:
    """Exact ensemble average of common white-noise dephasing over ``duration``."""
    n = rho.n_qubits
    qubits = range(n) if qubits is None else qubits
    idx = np.arange(2**n)
    w = sum(((idx >> (n - 1 - q)) & 1) for q in qubits).astype(float)
    diff = w[:, None] - w[None, :]
    return DensityMatrix(rho.elements * np.exp(-0.5 * rate * duration * diff**2))


# -- gate errors ------------------------------------------------------------


def _paulis(k: int):
    for labels in itertools.product("IXYZ", repeat=k):
        m = PAULI[labels[0]]
        for c in labels[1:]:
            m = np.kron(m, PAULI[c])
        yield m


def depolarize(rho: DensityMatrix, p: float, targets: Sequence[int]) -> DensityMatrix:
    """``(1-p) rho + p (1/d_T) x Tr_T rho`` via the Pauli twirl."""
    if p == 0:
        return rho
    n, k = rho.n_qubits, len(targets)
    twirl = sum(sandwich(rho.elements, m, m, targets, n) for m in _paulis(k)) / 4**k
    out = (1 - p) * rho.elements + p * twirl
    return DensityMatrix(0.5 * (out + out.conj().T))


def gate_error_probability(kind: str, params: NoiseParams, quanta: float = 0.0) -> float:
    if kind == "Gate1":
        return params.gate1_error
    if kind == "Gate2":
        return min(1.0, params.gate2_error + params.quanta_error_slope * quanta)
    raise ValueError(f"no gate error model for {kind!r}")


def apply_gate_error(
    state: Union[PureState, DensityMatrix],
    kind: str,
    targets: Sequence[int],
    params: NoiseParams,
    rng=None,
    quanta: float = 0.0,
):
    """Depolarize ``targets`` after a gate.

    With ``rng=None`` the exact channel is applied. Otherwise a uniformly
    random Pauli on the targets is applied with probability ``p`` (a
    single-trajectory unravelling of the same channel).
    """
    p = gate_error_probability(kind, params, quanta)
    if rng is None:
        rho = state.to_density() if isinstance(state, PureState) else state
        return depolarize(rho, p, targets)
    rng = np.random.default_rng(rng)
    if rng.random() >= p:
        return state
    k = len(targets)
    m = list(_paulis(k))[rng.integers(4**k)]
    n = state.n_qubits
    if isinstance(state, PureState):
        from .state import apply_matrix

        return PureState(apply_matrix(state.amplitudes, m, targets, n))
    return DensityMatrix(sandwich(state.elements, m, m, targets, n))


# -- SPAM -------------------------------------------------------------------


def decay_matrix(wait: float, lifetime: float) -> np.ndarray:
    """Shelved ``|1>`` decays during ``wait`` and is read as 0."""
    if wait < 0:
        raise ValueError("shelving wait must be >= 0")
    p = 0.0 if math.isinf(lifetime) else -math.expm1(-wait / lifetime)
    return np.array([[1.0, p], [0.0, 1.0 - p]])


def spam_matrices(confusion: Sequence, shelve_wait: Sequence[float], d_lifetime: float) -> list:
    """Per-qubit total map: decay during the wait, then readout confusion."""
    if len(confusion) != len(shelve_wait):
        raise ValueError("need one confusion matrix and one wait per qubit")
    return [check_confusion(c) @ decay_matrix(w, d_lifetime) for c, w in zip(confusion, shelve_wait)]


def apply_local_maps(vectors: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``kron(mats)`` to the last axis of ``vectors`` (length ``2^n``)."""
    n = len(mats)
    lead = vectors.shape[:-1]
    t = vectors.reshape(lead + (2,) * n)
    off = len(lead)
    for q, m in enumerate(mats):
        t = np.moveaxis(np.tensordot(m, t, axes=([1], [off + q])), 0, off + q)
    return t.reshape(vectors.shape)


def apply_spam(
    data: np.ndarray,
    confusion: Sequence,
    shelve_wait: Sequence[float],
    d_lifetime: float,
    rng=None,
) -> np.ndarray:
    """Corrupt outcome distributions or counts (last axis = ``2^n`` outcomes).

    With ``rng=None`` the map is applied linearly (probabilities or expected
    counts). With an ``rng``, integer counts are resampled shot by shot:
    the shots of each true outcome are redistributed by a multinomial draw.
    """
    mats = spam_matrices(confusion, shelve_wait, d_lifetime)
    data = np.asarray(data)
    if rng is None:
        return apply_local_maps(data.astype(float), mats)
    rng = np.random.default_rng(rng)
    d = 2 ** len(mats)
    eye = np.eye(d)
    columns = apply_local_maps(eye, mats)  # row b = distribution given true b
    flat = data.reshape(-1, d).astype(np.int64)
    out = np.zeros_like(flat)
    for r, row in enumerate(flat):
        for b in np.nonzero(row)[0]:
            out[r] += rng.multinomial(row[b], columns[b])
    return out.reshape(data.shape)


# -- field-tracking servo ---------------------------------------------------


@dataclass
class ServoResult:
    true_hz: np.ndarray
    estimates_hz: np.ndarray
    corrections_hz: np.ndarray
    residuals_hz: np.ndarray
    out_of_range: np.ndarray  # cycles whose residual exceeded the unambiguous range

    @property
    def flagged(self) -> bool:
        return bool(self.out_of_range.any())


def ramsey_signals(detuning_hz: float, interrogation: float) -> tuple:
    """Signed contrasts of the 0 and 90 degree Ramsey sequences."""
    a = 2 * np.pi * detuning_hz * interrogation
    return np.cos(a), np.sin(a)


def simulate_field_servo(
    drift: FieldDrift,
    n_cycles: int,
    rng_seed=None,
    shots: Optional[int] = 100,
    interrogation: float = 5e-3,
    gain: float = 0.5,
) -> ServoResult:
    """Closed-loop Ramsey tracking of the carrier frequency.

    Each cycle measures the residual detuning ``r`` (true minus applied
    correction) with a 0 degree and a 90 degree final pulse, estimates it as
    ``atan2(s90, s0) / (2 pi T)`` and adds ``gain * estimate`` to the
    correction for the next cycle. ``shots=None`` uses exact probabilities.
    """
    rng = np.random.default_rng(rng_seed)
    true = np.asarray(drift.series(n_cycles, rng), dtype=float)
    limit = 1.0 / (2 * interrogation)
    corr = 0.0
    est, corrs, res = np.zeros(n_cycles), np.zeros(n_cycles), np.zeros(n_cycles)
    for k in range(n_cycles):
        r = true[k] - corr
        s0, s90 = ramsey_signals(r, interrogation)
        if shots is not None:
            s0 = 2 * rng.binomial(shots, (1 + s0) / 2) / shots - 1
            s90 = 2 * rng.binomial(shots, (1 + s90) / 2) / shots - 1
        est[k] = np.arctan2(s90, s0) / (2 * np.pi * interrogation)
        corrs[k], res[k] = corr, r
        corr += gain * est[k]
    return ServoResult(true, est, corrs, res, np.abs(res) > limit)
