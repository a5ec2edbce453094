from __future__ import annotations

from dataclasses import asdict, dataclass

from .exceptions import ArgumentError


@dataclass(frozen=True)
class DetectionEvent:
    """A predicted action instance ``[start_frame, end_frame)``."""

    class_id: int
    start_frame: int
    end_frame: int
    confidence: float
    stream_id: str = ""

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ArgumentError(f"event end {self.end_frame} must exceed start {self.start_frame}")

    def to_json(self) -> dict:
        return {"class": self.class_id, "start": self.start_frame, "end": self.end_frame,
                "confidence": self.confidence}

    def as_dict(self) -> dict:
        return asdict(self)
