"""Viscoelastic phase-field tumour growth: a P1/P2 finite element simulator
with mass lumping, interface-adaptive meshes and a decoupled time stepper."""

from .errors import DomainError, InvalidConfigError, InvalidStateError, NonConvergence, SolverFailure
from .initial import InitialSpec, initial_state
from .mesh import Mesh, RefinementSpec, build_macro_mesh
from .model import ModelParams, discrete_energy, validate_params
from .sim import RunConfig, load_configs, resume, run
from .solver import SolverConfig, StepMode, advance_step
from .state import State

__version__ = "0.1.0"

__all__ = [
    "DomainError", "InvalidConfigError", "InvalidStateError", "NonConvergence", "SolverFailure",
    "InitialSpec", "initial_state", "Mesh", "RefinementSpec", "build_macro_mesh", "ModelParams",
    "discrete_energy", "validate_params", "RunConfig", "load_configs", "resume", "run", "SolverConfig",
    "StepMode", "advance_step", "State",
]
