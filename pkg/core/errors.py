from __future__ import annotations

from typing import Iterable, Optional


class RoadsimError(Exception):
    """Base class for every error raised by the pipeline."""


class ScenarioSchemaError(RoadsimError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class ScenarioReferenceError(RoadsimError):
    def __init__(self, kind: str, ids: Iterable[str]):
        self.kind = kind
        self.ids = sorted(set(str(i) for i in ids))
        super().__init__(f"dangling {kind} reference(s): {', '.join(self.ids)}")


class DegenerateGeometryError(RoadsimError):
    pass


class ArcLengthRangeError(RoadsimError):
    def __init__(self, s: float, length: float):
        self.s = s
        self.length = length
        super().__init__(f"arc length {s:.6f} outside [0, {length:.6f}]")


class ConversionError(RoadsimError):
    def __init__(self, stage: str, message: str, lane_ids: Optional[Iterable[str]] = None):
        self.stage = stage
        self.lane_ids = sorted(set(str(i) for i in (lane_ids or ())))
        suffix = f" (lanes: {', '.join(self.lane_ids)})" if self.lane_ids else ""
        super().__init__(f"[{stage}] {message}{suffix}")


class ExportError(RoadsimError):
    pass


class RolloutMismatchError(RoadsimError):
    def __init__(self, message: str, ids: Iterable[str] = ()):
        self.ids = sorted(set(str(i) for i in ids))
        suffix = f": {', '.join(self.ids)}" if self.ids else ""
        super().__init__(f"{message}{suffix}")


class ConfigError(RoadsimError):
    pass


def error_info(exc: BaseException) -> dict:
    """Compact error object for batch results."""
    return {"type": type(exc).__name__, "message": str(exc)}
