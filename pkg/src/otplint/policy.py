"""Renewal policies shared by the harness, the collector's probe and the classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

PROBE_GAPS = (120, 1200, 3600)
PROBE_REQUESTS = 6
POLICY_KINDS = ("per_request", "on_consume", "after_duration")


@dataclass(frozen=True)
class RenewalPolicy:
    kind: str = "per_request"
    seconds: Optional[int] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown renewal policy {self.kind!r}")
        if self.kind == "after_duration":
            if self.seconds is None or self.seconds <= 0:
                raise ValueError("after_duration needs a positive duration")
        elif self.seconds is not None:
            raise ValueError(f"{self.kind} takes no duration")

    def __str__(self):
        if self.kind == "after_duration":
            return f"after_duration({self.seconds})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "RenewalPolicy":
        text = text.strip()
        if text.startswith("after_duration"):
            inner = text[len("after_duration"):].strip("():= ")
            return cls("after_duration", int(inner))
        return cls(text)


@dataclass
class RenewalProbeResult:
    """Codes observed per (gap seconds, consumed?) cell of the renewal probe."""

    cells: Dict[Tuple[int, bool], list] = field(default_factory=dict)
    complete: Dict[Tuple[int, bool], bool] = field(default_factory=dict)

    def arm(self, gap: int, consume: bool) -> list:
        return self.cells.get((gap, consume), [])

    @property
    def is_complete(self) -> bool:
        return bool(self.cells) and all(self.complete.get(k, False) for k in self.cells)
