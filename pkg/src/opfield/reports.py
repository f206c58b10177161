"""Machine-readable results of verification checks."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CheckReport:
    """Outcome of one verification: named residuals against one tolerance.

    Status is "pass" iff every residual is at or below the tolerance,
    "degenerate" for flagged edge cases (e.g. zero-momentum gauge modes)
    where pass/fail is not meaningful, "fail" otherwise.  ``details`` holds
    auxiliary data: spectra, null-space bases, which residual path ran.
    """

    name: str
    status: str
    residuals: dict[str, float]
    tolerance: float
    details: dict = field(default_factory=dict)
    wall_ms: float | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def make_report(
    name: str,
    residuals: dict[str, float],
    tolerance: float,
    *,
    degenerate: bool = False,
    details: dict | None = None,
) -> CheckReport:
    """Build a report, deriving status from residuals vs tolerance."""
    residuals = {k: float(v) for k, v in residuals.items()}
    if degenerate:
        status = "degenerate"
    elif all(v <= tolerance for v in residuals.values()):
        status = "pass"
    else:
        status = "fail"
    return CheckReport(name, status, residuals, float(tolerance), details or {})
