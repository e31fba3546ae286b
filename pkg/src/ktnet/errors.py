"""
Exception types raised by ktnet.

Every error carries a stable ``code`` so the command-line front end can emit a
single machine-parseable line for it.
"""


class KtnError(Exception):
    """Base class for all ktnet errors."""

    code = "E_KTN"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        """Render the error as ``error[<CODE>]: <message>`` on a single line."""
        text = " ".join(self.message.split())
        return f"error[{self.code}]: {text}"


class ShapeError(KtnError):
    code = "E_SHAPE"


class NonFiniteError(KtnError):
    code = "E_NONFINITE"


class GradientError(KtnError):
    code = "E_GRAD"


class ConfigError(KtnError):
    code = "E_CONFIG"


class DatasetError(KtnError):
    code = "E_DATASET"


class CheckpointError(KtnError):
    code = "E_CHECKPOINT"


class GraphError(KtnError):
    code = "E_GRAPH"


class SynthError(KtnError):
    code = "E_SYNTH"


class PipelineError(KtnError):
    code = "E_PIPELINE"


class MetricError(KtnError):
    code = "E_METRIC"


class InternalError(KtnError):
    """An exception ktnet did not anticipate, wrapped for reporting."""

    code = "E_INTERNAL"

    @classmethod
    def wrap(cls, error: Exception) -> "InternalError":
        return cls(f"{type(error).__name__}: {error}")
