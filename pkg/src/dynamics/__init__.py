"""
Dynamical systems available to scenarios, keyed by the name used in `[system]`.
"""

from .base import (
    CostWeights,
    SystemModel,
    WorkspaceBody,
    eval_f,
    g_u,
    g_x,
    hamiltonian,
    hamiltonian_gradients,
    hamiltonian_hessians,
    linearize,
    optimal_control,
    residual_g,
    state_jacobian,
    wrap_angles,
)
from .diff_drive import DiffDrive
from .linear import DoubleIntegrator, LinearSystem
from .pendulum import Pendulum, PendulumParams
from .scara import Scara, ScaraParams
from src.utils.errors import ContractError

# name -> (model class, parameter dataclass or None)
SYSTEMS = {
    'double_integrator': (DoubleIntegrator, None),
    'linear': (LinearSystem, None),
    'pendulum': (Pendulum, PendulumParams),
    'diff_drive': (DiffDrive, None),
    'scara': (Scara, ScaraParams),
}


def build_system(name, parameters=None, state_bounds=None):
    """
    Instantiate a registered system.

    Args:
        name: Key of SYSTEMS
        parameters: Dict of physical parameters (matrices A, B, c for `linear`)
        state_bounds: Optional (n, 2) limits

    Returns:
        SystemModel instance

    Raises:
        ContractError: for an unknown name or parameter
    """
    if name not in SYSTEMS:
        raise ContractError(f"unknown system '{name}' (known: {', '.join(sorted(SYSTEMS))})")
    model_cls, params_cls = SYSTEMS[name]
    parameters = dict(parameters or {})
    if model_cls is LinearSystem:
        missing = {'A', 'B'} - set(parameters)
        if missing:
            raise ContractError(f"linear system needs {', '.join(sorted(missing))}")
        return LinearSystem(parameters['A'], parameters['B'], parameters.get('c'), state_bounds=state_bounds)
    if params_cls is None:
        if parameters:
            raise ContractError(f"system '{name}' takes no parameters, got {', '.join(sorted(parameters))}")
        return model_cls(state_bounds=state_bounds)
    try:
        params = params_cls(**parameters)
    except TypeError as e:
        raise ContractError(f"bad parameter for '{name}': {e}") from e
    return model_cls(params, state_bounds=state_bounds)
