"""Exception taxonomy shared across the engine.

The CLI maps these onto exit codes: config -> 2, format -> 3, setup -> 4,
anything else -> 5.
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class ConfigError(EngineError):
    """Bad configuration value, unknown key, or type mismatch."""


class FormatError(EngineError):
    """Corrupt or inconsistent on-disk container (embeddings, checkpoints)."""


class SetupError(EngineError):
    """Violated precondition while assembling a run (splits, banks, pools)."""


class CapacityError(SetupError):
    """Text does not fit into the fixed context length."""


class ContractError(EngineError):
    """Internal API contract broken (shape mismatch, non-scalar program)."""


class FreezeViolationError(EngineError):
    """A parameter that must stay frozen changed during training."""


class UndefinedMetricError(EngineError):
    """Requested accuracy over an empty sample subset."""
