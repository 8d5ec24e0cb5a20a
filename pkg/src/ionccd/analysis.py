"""GHZ fidelity, parametric bootstrap, Hoeffding consistency test and the
Bayesian parity-contrast estimator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .state import DensityMatrix, outcome_probabilities, parity_signs
from .tomography import (
    SpamModel,
    TomographyDataset,
    _rho,
    _table_to_dataset,
    born_table,
    linear_inversion,
    mle_reconstruct,
    model_expectations,
    pauli_expectations,
    spam_correct,
)


@dataclass(frozen=True)
class GHZFidelity:
    fidelity: float
    theta_star: float


def ghz_fidelity(rho) -> GHZFidelity:
    """Best overlap with ``(|0..0> + e^{i theta}|1..1>)/sqrt2`` over theta."""
    r = _rho(rho)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("density matrix must be square")
    c = r[0, -1]
    f = 0.5 * (r[0, 0].real + r[-1, -1].real) + abs(c)
    return GHZFidelity(float(f), float(-np.angle(c) % (2 * np.pi)))


@dataclass
class BootstrapResult:
    mean: float
    std: float
    n_resamples: int
    samples: np.ndarray = field(repr=False)


@dataclass
class ReconstructionResult:
    rho: DensityMatrix
    method: str  # "linear" or "ml"
    fidelity: float
    theta_star: float
    bootstrap: Optional[BootstrapResult] = None
    spam_corrected: bool = False
    seed: Optional[int] = None

    @property
    def out_of_bounds(self) -> bool:
        return not 0.0 <= self.fidelity <= 1.0

    @property
    def genuinely_entangled(self) -> bool:
        return self.fidelity > 0.5


def reconstruct(ds: TomographyDataset, method: str = "ml", seed=None, **ml_kw) -> ReconstructionResult:
    if method == "linear":
        rho = linear_inversion(ds)
    elif method == "ml":
        rho = mle_reconstruct(ds, **ml_kw).rho
    else:
        raise ValueError(f"unknown reconstruction method {method!r}")
    g = ghz_fidelity(rho)
    return ReconstructionResult(rho, method, g.fidelity, g.theta_star, spam_corrected=ds.spam_corrected, seed=seed)


def bootstrap_ci(
    rho_ml,
    shots_per_setting: int,
    n_resamples: int = 250,
    rng_seed=None,
    spam: Optional[SpamModel] = None,
    exact: bool = False,
) -> BootstrapResult:
    """Parametric bootstrap of the ML GHZ fidelity.

    Each resample draws a full dataset from ``rho_ml`` at the original shot
    count (SPAM-corrupted and corrected again if ``spam`` is given) and is
    reconstructed by ML, warm-started at ``rho_ml``. ``exact=True`` uses the
    exact probabilities instead of sampling.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    r = _rho(rho_ml)
    n = int(round(np.log2(r.shape[0])))
    probs = born_table(r)
    if spam is not None:
        probs = spam.corrupt(probs)
    rng = np.random.default_rng(rng_seed)
    out = np.empty(n_resamples)
    for k in range(n_resamples):
        table = probs * shots_per_setting if exact else rng.multinomial(int(shots_per_setting), probs).astype(float)
        ds = _table_to_dataset(table, n, shots_per_setting)
        if spam is not None:
            ds = spam_correct(ds, spam)
        out[k] = ghz_fidelity(mle_reconstruct(ds, init=r).rho).fidelity
    return BootstrapResult(float(out.mean()), float(out.std(ddof=1)), n_resamples, out)


# -- Hoeffding consistency --------------------------------------------------


@dataclass(frozen=True)
class HoeffdingEntry:
    pauli: str
    empirical: float
    predicted: float
    n_samples: float
    deviation: float
    bound: float


@dataclass
class HoeffdingReport:
    entries: List[HoeffdingEntry]
    alpha: float
    threshold: float  # Bonferroni-corrected
    passed: bool

    @property
    def worst(self) -> HoeffdingEntry:
        return min(self.entries, key=lambda e: e.bound)


def hoeffding_consistency(ds: TomographyDataset, rho, alpha: float = 0.01) -> HoeffdingReport:
    """Tail bound ``2 exp(-2 N t^2 / 4)`` for every non-identity Pauli mean.

    ``N`` is the number of shots that contribute to the string (the shots of
    all compatible settings). The data are rejected if any bound is below
    ``alpha / (4^n - 1)``.
    """
    emp = pauli_expectations(ds)
    labels = [k for k in emp if set(k) != {"I"}]
    pred = model_expectations(rho, labels)
    entries = []
    for k in labels:
        n_eff = ds.shots * 3 ** k.count("I")
        t = abs(emp[k] - pred[k])
        bound = 2 * np.exp(-2 * n_eff * t**2 / 4)  # not clipped: 2 at zero deviation
        entries.append(HoeffdingEntry(k, emp[k], pred[k], n_eff, t, float(bound)))
    threshold = alpha / len(labels)
    passed = all(e.bound >= threshold for e in entries)
    return HoeffdingReport(entries, alpha, threshold, passed)


# -- parity contrast --------------------------------------------------------


@dataclass(frozen=True)
class ParityEstimate:
    contrast: float
    contrast_std: float
    phase: float
    interval: tuple
    level: float
    map_contrast: float


def parity_counts(counts: Sequence[float]) -> tuple:
    """``(even, odd)`` from either outcome counts (``2^n`` bins) or a pair."""
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or counts.size < 2 or counts.size & (counts.size - 1):
        raise ValueError("counts must have 2^n entries")
    n = int(np.log2(counts.size))
    signs = parity_signs(n)
    even = float(counts[signs > 0].sum())
    return even, float(counts.sum() - even)


def parity_probabilities(state, n_qubits: int) -> tuple:
    """P(even) for the all-X setting and for X...XY."""
    xs = "X" * n_qubits
    signs = parity_signs(n_qubits)
    out = []
    for s in (xs, xs[:-1] + "Y"):
        p = outcome_probabilities(state, s)
        out.append(float(p[signs > 0].sum()))
    return tuple(out)


def parity_contrast(
    counts_xxxx,
    counts_xxxy,
    level: float = 0.95,
    grid: tuple = (201, 400),
) -> ParityEstimate:
    """Posterior over contrast C and phase theta given the two parity records.

    P(even | all X) = (1 + C cos theta)/2 and P(even | last Y) = (1 + C sin theta)/2,
    uniform prior on ``C in [0, 1]`` and ``theta in [0, 2pi)``. The posterior
    is evaluated on a ``grid = (n_C, n_theta)`` grid.
    """
    ex, ox = parity_counts(counts_xxxx)
    ey, oy = parity_counts(counts_xxxy)
    if ex + ox < 1 or ey + oy < 1:
        raise ValueError("each parity record needs at least one shot")
    c = np.linspace(0.0, 1.0, grid[0])[:, None]
    th = np.arange(grid[1]) * 2 * np.pi / grid[1]
    cx, sy = c * np.cos(th), c * np.sin(th)
    logl = (
        xlogy(ex, (1 + cx) / 2)
        + xlogy(ox, (1 - cx) / 2)
        + xlogy(ey, (1 + sy) / 2)
        + xlogy(oy, (1 - sy) / 2)
    )
    post = np.exp(logl - logl.max())
    w = np.ones(grid[0])
    w[0] = w[-1] = 0.5  # trapezoid weights along C
    post *= w[:, None]
    post /= post.sum()
    pc = post.sum(axis=1)
    cv = c[:, 0]
    mean = float(pc @ cv)
    std = float(np.sqrt(max(pc @ cv**2 - mean**2, 0.0)))
    pt = post.sum(axis=0)
    phase = float(np.angle(pt @ np.exp(1j * th)) % (2 * np.pi))
    cdf = np.cumsum(pc)
    lo_q, hi_q = (1 - level) / 2, (1 + level) / 2
    interval = (float(np.interp(lo_q, cdf, cv)), float(np.interp(hi_q, cdf, cv)))
    return ParityEstimate(mean, std, phase, interval, level, float(cv[np.argmax(pc)]))
