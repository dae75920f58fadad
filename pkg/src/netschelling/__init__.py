"""Homophilic tie formation on two-type networks: mean-field recurrences,
a seeded agent-based simulator, fragmentation metrics and a CLI."""

__version__ = "0.1.0"

from .config import ConfigError, Mode, SimConfig, derive_seed, parse_config  # noqa: E402
from .core import (  # noqa: E402
    DecayKernel,
    DecayMode,
    DomainError,
    EdgeClass,
    HomophilyFunction,
    KernelTriple,
    NodeType,
    ParameterError,
)

__all__ = [
    "ConfigError", "DecayKernel", "DecayMode", "DomainError", "EdgeClass",
    "HomophilyFunction", "KernelTriple", "Mode", "NodeType", "ParameterError",
    "SimConfig", "derive_seed", "parse_config",
]
