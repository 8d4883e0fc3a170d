"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, BackendError -> 3,
DataError -> 4. Everything else is a plain bug and surfaces as exit 1.
"""


class DearError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DearError):
    """Invalid configuration: bad keys, impossible values, missing files."""


class DataError(DearError):
    """Malformed input data: corpus records, run files, qrels, JSONL."""


class BackendError(DearError):
    """A remote scorer or chat backend failed after exhausting retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TrainingDiverged(DearError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, last_finite_loss: float | None = None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class SynthgenAborted(DearError):
    """Synthetic generation stopped because the teacher rejection rate was too high."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
