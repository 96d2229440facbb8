"""Exception hierarchy shared by every module; app.py maps them to exit codes."""


class WrenchCheckError(Exception):
    """Base class; `exit_code` is what the command-line app returns."""

    exit_code = 2


# --- Usage / configuration ---
class ConfigError(WrenchCheckError):
    exit_code = 1


# --- Data problems ---
class DataError(WrenchCheckError):
    exit_code = 2


class ShapeError(DataError):
    pass


class NoTransientError(DataError):
    """Energy profile never crosses a threshold (nothing touched the sensor)."""

    def __init__(self, record_id=None):
        self.record_id = record_id
        where = f" in record '{record_id}'" if record_id else ""
        super().__init__(f"no transient{where}: energy is zero everywhere")


class CheckpointError(DataError):
    pass


class ChecksumError(CheckpointError):
    pass


class FormatVersionError(CheckpointError):
    pass


class StaleCacheError(DataError):
    pass


# --- Numerical failures ---
class NumericError(WrenchCheckError):
    exit_code = 3


class DivergenceError(NumericError):
    def __init__(self, message, last_finite_epoch):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"{message} (last finite epoch: {last_finite_epoch})")
