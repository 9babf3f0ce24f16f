from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Optional


class ExitCode(IntEnum):
    OK = 0
    CHECK_FAILED = 1
    USAGE = 2
    IO = 3


@dataclass
class CheckResult:
    """Outcome of one verification suite."""

    name: str
    tolerance: Optional[float] = None
    cases: int = 0
    failures: int = 0
    max_error: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.cases > 0

    def observe(self, error: float, ok: Optional[bool] = None) -> None:
        """Record one case; without `ok` the error is compared against the tolerance."""
        self.cases += 1
        self.max_error = max(self.max_error, float(error))
        if ok is None:
            ok = self.tolerance is None or error <= self.tolerance
        if not ok:
            self.failures += 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "cases": self.cases,
            "failures": self.failures,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            **self.details,
        }
