"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class IngestError(PipelineError):
    """CSV could not be read into a well-formed table."""


class SchemaError(PipelineError):
    """Schema inference or schema/table agreement failed."""


class SplitError(PipelineError):
    """Train/test split preconditions violated."""


class CodecError(PipelineError):
    """Row encoding/decoding misuse (arity, descriptor set, order flag)."""


class ProtocolError(PipelineError):
    """Descriptor protocol input or response violates its contract."""


class ConfigError(PipelineError):
    """Invalid configuration value."""


class EndpointError(PipelineError):
    """Remote endpoint unreachable or returned a failure status."""

    def __init__(self, message, status=None, body=None):
        super().__init__(message)
        self.status = status
        self.body = body


class TrainError(PipelineError):
    """Backend training failed or got empty input."""


class StateError(PipelineError):
    """Backend used before it was trained."""


class MetricError(PipelineError):
    """Metric evaluated on empty or mismatched inputs."""


class FitError(PipelineError):
    """Model fitting received inconsistent shapes."""


class PredictError(PipelineError):
    """Prediction input does not match the fitted model."""


class CvError(PipelineError):
    """Cross-validation fold configuration is impossible."""


class EvalError(PipelineError):
    """MLE evaluation inputs are unusable."""


class SamplingExhausted(PipelineError):
    """Rejection sampling hit max_attempts before reaching n_target.

    Carries the accounting stats and whatever rows were accepted so far.
    """

    def __init__(self, message, stats, partial_rows):
        super().__init__(message)
        self.stats = stats
        self.partial_rows = partial_rows
