# app/core/errors.py
from __future__ import annotations


class OjaError(ValueError):
    """Base class for invalid inputs to the estimation library."""


class DegenerateInputError(OjaError):
    pass


class DimensionMismatchError(OjaError):
    pass


class OrthogonalityError(OjaError):
    pass


class SpectrumError(OjaError):
    pass


class ScheduleError(OjaError):
    pass


class PhaseError(OjaError):
    """A bound or schedule was queried outside the phase it is defined on."""


class TrialError(RuntimeError):
    def __init__(self, trial_index: int, cause: BaseException) -> None:
        super().__init__(f"trial {trial_index} failed: {cause}")
        self.trial_index = trial_index


class ExportError(OSError):
    def __init__(self, path: str, cause: BaseException) -> None:
        super().__init__(f"could not write/read series at '{path}': {cause}")
        self.path = path
