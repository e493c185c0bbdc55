"""Exception hierarchy shared across the pipeline."""


class RdmtError(Exception):
    """Base class for all package errors."""


class FatalFormat(RdmtError):
    """The input stream is not line-delimited structured objects at all."""


class InvalidChronology(RdmtError):
    """A pre-registration was created after the hospitalization record."""


class NoPositives(RdmtError):
    pass


class EmptyCorpus(RdmtError):
    pass


class FutureEvent(RdmtError):
    """An encoded datum is timestamped after the anchor (temporal leakage)."""


class ShapeMismatch(RdmtError, ValueError):
    pass


class NonFinite(RdmtError, FloatingPointError):
    pass


class EmptyInput(RdmtError, ValueError):
    pass


class Diverged(RdmtError, FloatingPointError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class VocabMismatch(RdmtError):
    pass


class SingleClass(RdmtError, ValueError):
    """Metric or fit requires both classes to be present."""


class IoFailure(RdmtError, OSError):
    pass


class ConfigInvalid(RdmtError):
    def __init__(self, field, reason):
        super().__init__(f"invalid config field {field!r}: {reason}")
        self.field = field


class MissingArtifact(RdmtError):
    def __init__(self, path):
        super().__init__(f"missing artifact: {path}")
        self.path = path


class DigestMismatch(RdmtError):
    def __init__(self, path, expected, actual):
        super().__init__(
            f"stale artifact {path}: expected digest {expected[:12]}, found {actual[:12]}"
        )
        self.path = path
