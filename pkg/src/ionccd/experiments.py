"""End-to-end experiment runners and result files."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Union

import jsonschema
import numpy as np

from .analysis import (
    bootstrap_ci,
    ghz_fidelity,
    hoeffding_consistency,
    parity_contrast,
    parity_probabilities,
    reconstruct,
)
from .config import ExperimentConfig, _strip_inf
from .noise import child_seed, simulate_field_servo
from .simulate import execute_schedule, store_with_decoupling
from .tomography import (
    SpamModel,
    TomographyDataset,
    exact_dataset,
    read_dataset,
    simulate_dataset,
    spam_correct,
)
from .trap import (
    ValidationReport,
    compile_dd_storage,
    compile_full_sequence,
    compile_ghz_schedule,
    initial_ghz_ions,
    timing_report,
    validate_schedule,
)

# stream indices under the root seed
STREAM_DATA, STREAM_BOOTSTRAP, STREAM_SERVO = 0, 1, 2
STREAM_STORAGE, STREAM_PARITY = 100, 10_000


class ScheduleValidationError(RuntimeError):
    def __init__(self, report: ValidationReport):
        super().__init__(f"schedule validation failed: {report.violation}")
        self.report = report


@dataclass
class RunReport:
    experiment: str
    seed: int
    config: dict
    validation: dict
    timing: Optional[dict] = None
    fidelities: List[dict] = field(default_factory=list)
    dd_series: List[dict] = field(default_factory=list)
    servo_series: List[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    density_matrices: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    wall_clock_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "config": _strip_inf(self.config),
            "validation": self.validation,
            "timing": self.timing,
            "fidelities": self.fidelities,
            "dd_series": self.dd_series,
            "servo_series": self.servo_series,
            "diagnostics": self.diagnostics,
            "density_matrices": sorted(self.density_matrices),
            "wall_clock_s": self.wall_clock_s,
        }


def _validation_dict(report: ValidationReport, name: str) -> dict:
    return {
        "schedule": name,
        "passed": report.passed,
        "violation": None if report.violation is None else str(report.violation),
    }


def _checked(report: ValidationReport):
    if not report:
        raise ScheduleValidationError(report)


def _timing_dict(s) -> dict:
    t = timing_report(s)
    return {
        "total_s": t.total,
        "logic_s": t.logic_time,
        "gate_s": t.gate_time,
        "gate_fraction": t.gate_fraction,
        "per_kind_s": t.per_kind,
        "per_block_s": t.per_block,
    }


def _fid_entry(label, result, seed, stream, boot=None) -> dict:
    out = {
        "label": label,
        "method": result.method,
        "fidelity": result.fidelity,
        "theta_star": result.theta_star,
        "spam_corrected": result.spam_corrected,
        "out_of_bounds": result.out_of_bounds,
        "seed": seed,
        "stream": stream,
    }
    if boot is not None:
        out["bootstrap"] = {"mean": boot.mean, "std": boot.std, "n_resamples": boot.n_resamples}
    return out


def spam_model(cfg: ExperimentConfig, n: int = 4) -> SpamModel:
    noise = cfg.noise
    return SpamModel(tuple(noise.confusion_matrices(n)), (cfg.shelve_wait,) * n, noise.d_lifetime)


def prepare_ghz(cfg: ExperimentConfig):
    """Compile, validate and execute the GHZ creation; returns ``(rho, schedule, result)``."""
    layout, noise = cfg.layout, cfg.noise
    profile = noise.calibrated_profile(layout.n_segments)
    ghz = compile_ghz_schedule(layout, phase_profile=profile)
    init = initial_ghz_ions(layout)
    full = compile_full_sequence(layout, phase_profile=profile)
    report = validate_schedule(full, init)
    _checked(report)
    result = execute_schedule(ghz, init, noise, logic_dephasing=cfg.logic_dephasing)
    return result.rho, ghz, result, report


def _estimate(ds: TomographyDataset, cfg, stream_seed, spam: Optional[SpamModel], label: str, boot_spam=None,
              exact=False):
    seed = cfg.root_seed
    lin = reconstruct(ds, "linear", seed=seed)
    ml = reconstruct(ds, "ml", seed=seed)
    boot = bootstrap_ci(
        ml.rho,
        cfg.shots_per_setting if exact else int(round(ds.shots)),
        cfg.bootstrap_resamples,
        child_seed(seed, STREAM_BOOTSTRAP),
        spam=boot_spam,
        exact=exact,
    )
    entries = [
        _fid_entry(f"linear{label}", lin, seed, stream_seed),
        _fid_entry(f"ml{label}", ml, seed, stream_seed, boot),
    ]
    return lin, ml, boot, entries


def run_ghz_tomography(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    rho, ghz, result, report = prepare_ghz(cfg)
    spam = spam_model(cfg) if cfg.spam else None
    if cfg.exact_data:
        ds = exact_dataset(rho, spam)
    else:
        ds = simulate_dataset(rho, cfg.shots_per_setting, child_seed(cfg.root_seed, STREAM_DATA), spam)
    gen = ghz_fidelity(rho)
    out = RunReport("ghz_tomography", cfg.root_seed, cfg.to_dict(), _validation_dict(report, "ghz_full_cycle"))
    out.timing = _timing_dict(ghz)
    out.fidelities.append(
        {
            "label": "generative",
            "method": "exact",
            "fidelity": gen.fidelity,
            "theta_star": gen.theta_star,
            "spam_corrected": False,
            "out_of_bounds": False,
            "seed": cfg.root_seed,
            "stream": STREAM_DATA,
        }
    )
    out.density_matrices["generative"] = rho.elements
    if spam is None:
        lin, ml, boot, entries = _estimate(ds, cfg, STREAM_DATA, None, "", exact=cfg.exact_data)
        out.fidelities += entries
    else:
        lin_raw = reconstruct(ds, "linear", seed=cfg.root_seed)
        ml_raw = reconstruct(ds, "ml", seed=cfg.root_seed)
        out.fidelities += [
            _fid_entry("linear_raw", lin_raw, cfg.root_seed, STREAM_DATA),
            _fid_entry("ml_raw", ml_raw, cfg.root_seed, STREAM_DATA),
        ]
        out.density_matrices["ml_raw"] = ml_raw.rho.elements
        corrected = spam_correct(ds, spam)
        lin, ml, boot, entries = _estimate(
            corrected, cfg, STREAM_DATA, spam, "_spam_corrected", boot_spam=spam, exact=cfg.exact_data
        )
        out.fidelities += entries
        out.diagnostics["negative_pseudo_counts"] = corrected.has_negative
        out.diagnostics["spam_gain"] = lin.fidelity - lin_raw.fidelity
    out.density_matrices["linear"] = lin.rho.elements
    out.density_matrices["ml"] = ml.rho.elements
    hoeff = hoeffding_consistency(ds, reconstruct(ds, "ml").rho)
    out.diagnostics.update(
        {
            "hoeffding_passed": hoeff.passed,
            "hoeffding_worst_bound": hoeff.worst.bound,
            "hoeffding_worst_pauli": hoeff.worst.pauli,
            "hoeffding_threshold": hoeff.threshold,
            "gate2_quanta": result.gate2_quanta,
            "shuttle_phases": result.shuttle_phases,
            "total_measurements": ds.total_measurements,
            "genuine_multipartite_entanglement": ml.genuinely_entangled,
        }
    )
    out.wall_clock_s = time.perf_counter() - t0
    return out


def run_dd_sweep(cfg: ExperimentConfig) -> RunReport:
    """Contrast after storage for every (T, N_pi); N_pi = 0 is free evolution."""
    t0 = time.perf_counter()
    cfg.dd.validate()
    rho, ghz, result, report = prepare_ghz(cfg)
    init = initial_ghz_ions(cfg.layout)
    after_logic = list(validate_schedule(ghz, init).final_ions.values())
    out = RunReport("dd_sweep", cfg.root_seed, cfg.to_dict(), _validation_dict(report, "ghz_full_cycle"))
    out.timing = _timing_dict(ghz)
    row = 0
    for n_pi in cfg.dd.n_pi_list:
        for i_t, T in enumerate(cfg.dd.storage_times):
            storage = None
            if n_pi and T > 0:
                storage = compile_dd_storage(T, n_pi, cfg.layout, after_logic)
                rep = validate_schedule(storage, after_logic)
                if not rep:
                    out.validation = _validation_dict(rep, f"dd_storage T={T} N={n_pi}")
                    raise ScheduleValidationError(rep)
            # common random numbers: the same noise draws for every N_pi at a given T
            stored = store_with_decoupling(
                rho,
                storage,
                cfg.dd.dephasing,
                T,
                cfg.dd.mc_shots,
                child_seed(cfg.root_seed, STREAM_STORAGE + i_t),
                offsets=cfg.noise.static_offsets,
            )
            p_x, p_y = parity_probabilities(stored, 4)
            rng = np.random.default_rng(child_seed(cfg.root_seed, STREAM_PARITY + row))
            k = cfg.dd.parity_shots
            ex, ey = rng.binomial(k, p_x), rng.binomial(k, p_y)
            est = parity_contrast([ex, k - ex], [ey, k - ey])
            out.dd_series.append(
                {
                    "storage_time": float(T),
                    "n_pi": int(n_pi),
                    "contrast_exact": float(2 * abs(stored.elements[0, -1])),
                    "contrast": est.contrast,
                    "contrast_std": est.contrast_std,
                    "ci_low": est.interval[0],
                    "ci_high": est.interval[1],
                    "phase": est.phase,
                    "even_xxxx": int(ex),
                    "even_xxxy": int(ey),
                    "shots": int(k),
                }
            )
            row += 1
    out.wall_clock_s = time.perf_counter() - t0
    return out


def analyze_dataset(path: Union[str, Path], cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    ds = read_dataset(path)
    out = RunReport(
        "analyze_dataset",
        cfg.root_seed,
        cfg.to_dict(),
        {"schedule": "none", "passed": True, "violation": None},
    )
    lin, ml, boot, entries = _estimate(ds, cfg, STREAM_DATA, None, "")
    out.fidelities += entries
    hoeff = hoeffding_consistency(ds, ml.rho)
    out.diagnostics.update(
        {
            "source": str(path),
            "n_qubits": ds.n_qubits,
            "shots_per_setting": ds.shots,
            "hoeffding_passed": hoeff.passed,
            "hoeffding_worst_bound": hoeff.worst.bound,
            "hoeffding_worst_pauli": hoeff.worst.pauli,
            "hoeffding_threshold": hoeff.threshold,
            "genuine_multipartite_entanglement": ml.genuinely_entangled,
        }
    )
    out.density_matrices["linear"] = lin.rho.elements
    out.density_matrices["ml"] = ml.rho.elements
    out.wall_clock_s = time.perf_counter() - t0
    return out


def run_servo_demo(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    full = compile_full_sequence(cfg.layout)
    report = validate_schedule(full, initial_ghz_ions(cfg.layout))
    _checked(report)
    sv = cfg.servo
    res = simulate_field_servo(
        cfg.noise.b_drift, sv.cycles, child_seed(cfg.root_seed, STREAM_SERVO), sv.shots, sv.interrogation, sv.gain
    )
    out = RunReport("servo_demo", cfg.root_seed, cfg.to_dict(), _validation_dict(report, "ghz_full_cycle"))
    for k in range(sv.cycles):
        out.servo_series.append(
            {
                "cycle": k,
                "true_hz": float(res.true_hz[k]),
                "estimate_hz": float(res.estimates_hz[k]),
                "correction_hz": float(res.corrections_hz[k]),
                "residual_hz": float(res.residuals_hz[k]),
            }
        )
    out.diagnostics.update(
        {
            "rms_residual_hz": float(np.sqrt(np.mean(res.residuals_hz**2))),
            "rms_uncorrected_hz": float(np.sqrt(np.mean(res.true_hz**2))),
            "out_of_range_cycles": int(res.out_of_range.sum()),
            "flagged": res.flagged,
        }
    )
    out.wall_clock_s = time.perf_counter() - t0
    return out


def run(cfg: ExperimentConfig, dataset: Optional[str] = None) -> RunReport:
    if cfg.experiment == "ghz_tomography":
        return run_ghz_tomography(cfg)
    if cfg.experiment == "dd_sweep":
        return run_dd_sweep(cfg)
    if cfg.experiment == "analyze_dataset":
        path = dataset or cfg.dataset
        if path is None:
            raise ValueError("analyze_dataset needs a dataset path")
        return analyze_dataset(path, cfg)
    return run_servo_demo(cfg)


# -- outputs ----------------------------------------------------------------


def report_schema() -> dict:
    return json.loads(resources.files("ionccd").joinpath("report_schema.json").read_text())


def report_json(report: RunReport) -> str:
    doc = report.to_json_dict()
    jsonschema.validate(doc, report_schema())
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_matrix(m: np.ndarray, stem: Path) -> List[Path]:
    """``stem_re.csv`` and ``stem_im.csv``, one row per matrix row, repr floats."""
    paths = []
    for part, data in (("re", m.real), ("im", m.imag)):
        p = stem.with_name(f"{stem.name}_{part}.csv")
        p.write_text("\n".join(",".join(repr(float(x)) for x in row) for row in data) + "\n")
        paths.append(p)
    return paths


def read_matrix(stem: Union[str, Path]) -> np.ndarray:
    stem = Path(stem)
    parts = []
    for part in ("re", "im"):
        text = stem.with_name(f"{stem.name}_{part}.csv").read_text()
        parts.append(np.array([[float(x) for x in line.split(",")] for line in text.splitlines() if line]))
    return parts[0] + 1j * parts[1]


def _write_csv(path: Path, rows: List[dict]):
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def emit_outputs(report: RunReport, path: Union[str, Path]) -> List[Path]:
    """Write ``report.json`` plus CSV series and density-matrix grids under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(report_json(report))
    if report.fidelities:
        rows = [
            {
                "label": f["label"],
                "method": f["method"],
                "fidelity": f["fidelity"],
                "theta_star": f["theta_star"],
                "spam_corrected": f["spam_corrected"],
                "bootstrap_std": f.get("bootstrap", {}).get("std", ""),
                "seed": f["seed"],
            }
            for f in report.fidelities
        ]
        written.append(out / "fidelity.csv")
        _write_csv(written[-1], rows)
    if report.dd_series:
        written.append(out / "contrast.csv")
        _write_csv(written[-1], report.dd_series)
    if report.servo_series:
        written.append(out / "servo.csv")
        _write_csv(written[-1], report.servo_series)
    for name, m in sorted(report.density_matrices.items()):
        written += write_matrix(np.asarray(m), out / f"rho_{name}")
    return written
