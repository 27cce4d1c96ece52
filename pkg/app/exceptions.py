# app/exceptions.py
from typing import Iterable, Optional

# Exit codes used by the command surface
EXIT_INPUT_ERROR = 1
EXIT_INTERNAL_ERROR = 2


class ClickLabelError(Exception):
    """Base class for every error the labeling engine raises on purpose"""

    exit_code: int = EXIT_INPUT_ERROR

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DegenerateCluster(ClickLabelError):
    """Fewer than 3 points, or all points collinear in BEV"""


class NoClusterFound(ClickLabelError):
    """No density cluster survives near a click"""


class FrameNotFound(ClickLabelError):
    def __init__(self, frame_id: int):
        super().__init__(f"frame {frame_id} not found in sequence")
        self.frame_id = frame_id


class InsufficientScores(ClickLabelError):
    def __init__(self, count: int):
        super().__init__(f"dual thresholds need at least 3 alignment scores, got {count}")
        self.count = count


class NegativeLambda(ClickLabelError):
    def __init__(self, value: float):
        super().__init__(f"lambda must be >= 0, got {value}")
        self.value = value


class ParseError(ClickLabelError):
    """Malformed input file; carries the file and the line or byte offset"""

    def __init__(self, path: str, position: Optional[str], reason: str):
        where = f"{path}:{position}" if position else str(path)
        super().__init__(f"{where}: {reason}")
        self.path = str(path)
        self.position = position
        self.reason = reason


class MissingPose(ClickLabelError):
    def __init__(self, poses: int, frames: int):
        super().__init__(f"pose count {poses} does not match frame count {frames}")


class ScopeMismatch(ClickLabelError):
    def __init__(self, what: str, frames: Iterable[int]):
        offending = sorted(set(frames))
        super().__init__(f"{what}: offending frames {offending}")
        self.frames = offending


class ConfigError(ClickLabelError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"invalid config field '{field}': {reason}")
        self.field = field


class InvariantViolation(ClickLabelError):
    exit_code = EXIT_INTERNAL_ERROR
