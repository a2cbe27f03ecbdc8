"""GaBP receivers for joint data detection and over-the-air function computation."""
from .errors import (CombinerDivergence, ConfigurationError, DegenerateInputError, DomainError,
                     IccError, NumericalDivergence, OutputError, SingularSystemError)
from .model import Algorithm, ChannelRealization, Modulation, Role, SystemConfig, TransmitFrame
from .nomographic import NomographicKind, StreamSelector

__all__ = [
    "Algorithm", "ChannelRealization", "CombinerDivergence", "ConfigurationError",
    "DegenerateInputError", "DomainError", "IccError", "Modulation", "NomographicKind",
    "NumericalDivergence", "OutputError", "Role", "SingularSystemError", "StreamSelector",
    "SystemConfig", "TransmitFrame",
]
__version__ = "0.1.0"
