"""Error hierarchy.  Every error has a short stable ``code`` and maps to a CLI exit code."""

from __future__ import annotations


class HspiError(Exception):
    exit_code = 5

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class UsageError(HspiError):
    exit_code = 2


class ConfigError(UsageError):
    def __init__(self, code: str, message: str = "", line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(code, message)
        self.line = line


class Indistinguishable(HspiError):
    exit_code = 3


class BorderSearchExhausted(HspiError):
    exit_code = 1


class ProtocolError(HspiError):
    exit_code = 4

    def __init__(self, code: str, message: str = "", status: int = 400) -> None:
        super().__init__(code, message)
        self.status = status


class NumericsError(HspiError):
    pass


class ShapeError(HspiError):
    pass


class TrainingDiverged(HspiError):
    def __init__(self, seed: int, epoch: int) -> None:
        super().__init__("training-diverged", f"loss became NaN at epoch {epoch} (seed={seed})")
        self.seed = seed
