"""Data-driven predictive setpoint control for a double-deck passenger coach HVAC system."""
from .config import SystemParams, load_params
from .data import HankelSet, RawRecordSet, Trajectory, build_hankel
from .ddpc import DdpcConfig, DdpcController, assemble_qp, compute_t_opt, jy_decomposition, solve_ocp
from .errors import ConfigurationError, IntegrationError, PipelineError, ValidationError
from .harness import ScenarioConfig, compare, energy_account, run_closed_loop
from .predictor import PredictorModel, evaluate_mae, fit, lq_decompose, predict
from .qp import QpStatus, solve_qp
from .sim import CoachState, DisturbanceSchedule, HeatDistribution, ThermalParams, step

__version__ = "0.1.0"

__all__ = [
    "CoachState", "ConfigurationError", "DdpcConfig", "DdpcController", "DisturbanceSchedule", "HankelSet",
    "HeatDistribution", "IntegrationError", "PipelineError", "PredictorModel", "QpStatus", "RawRecordSet",
    "ScenarioConfig", "SystemParams", "ThermalParams", "Trajectory", "ValidationError", "assemble_qp",
    "build_hankel", "compare", "compute_t_opt", "energy_account", "evaluate_mae", "fit", "jy_decomposition",
    "load_params", "lq_decompose", "predict", "run_closed_loop", "solve_ocp", "solve_qp", "step",
]
