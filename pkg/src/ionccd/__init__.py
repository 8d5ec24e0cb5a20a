"""Simulation and analysis toolkit for GHZ states in a segmented ion trap."""
from .state import DensityMatrix, Operator, PureState
from .gates import RotationSpec, compose_u1, compose_u2, ghz_circuit, ghz_target
from .noise import NoiseParams
from .trap import Schedule, ScheduleOp, TrapLayout, compile_ghz_schedule, validate_schedule
from .tomography import TomographyDataset, linear_inversion, mle_reconstruct, simulate_dataset
from .analysis import bootstrap_ci, ghz_fidelity, parity_contrast

__version__ = "0.1.0"
