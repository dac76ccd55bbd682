# Utilities package initialization file
from .logger import get_logger, configure_logging
from .errors import (
    KinoplanError,
    ContractError,
    IntegrationDiverged,
    SingularMatrixError,
    UnreachableStateError,
    SteerFailed,
    SamplingStarved,
    ScenarioError,
)
