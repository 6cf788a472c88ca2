"""
Assumption audit reports and their file representation.

A report is stored as a Markdown document whose YAML front matter carries
every fitted number, so the document can be read back into an identical
report. The Markdown body is a human-readable rendering of the same data.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import frontmatter

from quench.core.manifest import jsonable

logger = logging.getLogger(__name__)

ASSUMPTION_IDS = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX")

# Relative margin below which a satisfied inequality is only a warning
PASS_MARGIN = 0.10


class ReportError(ValueError):
    """Raised for incomplete reports or unreadable report documents."""
    pass


class Status(str, Enum):
    PASS = "pass"
    WARN = "warn"
    FAIL = "fail"


def grade(lhs: float, rhs: float) -> Status:
    """
    Grade the inequality lhs < rhs.

    Satisfied with a relative margin of at least 10% passes, satisfied with
    less warns, violated fails.
    """
    if not lhs < rhs:
        return Status.FAIL
    if math.isinf(lhs) or math.isinf(rhs):
        return Status.PASS
    margin = (rhs - lhs) / max(abs(lhs), abs(rhs), 1e-300)
    return Status.PASS if margin >= PASS_MARGIN else Status.WARN


def _plain(value: Any) -> Any:
    """Convert tuples and numpy scalars to plain YAML-safe Python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return int(value)
    if hasattr(value, "item"):
        return value.item()
    return float(value) if isinstance(value, float) else value


@dataclass(frozen=True)
class AssumptionEntry:
    """Audit outcome of one assumption."""

    id: str
    status: Status
    quantities: Dict[str, float] = field(default_factory=dict)
    fit_range: Optional[Tuple[float, float]] = None
    evidence: str = ""
    note: str = ""

    def __post_init__(self):
        if self.id not in ASSUMPTION_IDS:
            raise ReportError(f"Unknown assumption id: {self.id}")
        object.__setattr__(self, "status", Status(self.status))
        object.__setattr__(self, "quantities", {k: float(v) for k, v in self.quantities.items()})
        if self.fit_range is not None:
            object.__setattr__(self, "fit_range", tuple(float(v) for v in self.fit_range))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "status": self.status.value,
            "quantities": _plain(self.quantities),
            "fit_range": _plain(self.fit_range),
            "evidence": self.evidence,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AssumptionEntry":
        fit_range = data.get("fit_range")
        return cls(
            id=data["id"],
            status=Status(data["status"]),
            quantities=dict(data.get("quantities") or {}),
            fit_range=tuple(fit_range) if fit_range is not None else None,
            evidence=data.get("evidence", ""),
            note=data.get("note", ""),
        )


@dataclass(frozen=True)
class AssumptionReport:
    """
    One entry per assumption plus the fitted exponents the case check consumes.

    ``system`` describes the audited map family; ``exponents`` may hold
    ``inf`` for super-polynomial decay.
    """

    system: Dict[str, Any]
    entries: Tuple[AssumptionEntry, ...]
    exponents: Dict[str, float]
    budgets: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [entry.id for entry in self.entries]
        if sorted(ids, key=ASSUMPTION_IDS.index) != list(ASSUMPTION_IDS) or len(ids) != len(set(ids)):
            raise ReportError(f"Report must list each assumption exactly once, got {ids}")
        object.__setattr__(self, "exponents", {k: float(v) for k, v in self.exponents.items()})

    def entry(self, assumption_id: str) -> AssumptionEntry:
        for entry in self.entries:
            if entry.id == assumption_id:
                return entry
        raise ReportError(f"No entry for assumption {assumption_id}")

    def exponent(self, name: str) -> float:
        if name not in self.exponents:
            raise ReportError(f"Report is missing the fitted exponent '{name}'")
        return self.exponents[name]

    @property
    def all_pass(self) -> bool:
        return all(entry.status == Status.PASS for entry in self.entries)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "system": _plain(self.system),
            "entries": [entry.to_dict() for entry in self.entries],
            "exponents": _plain(self.exponents),
            "budgets": _plain(self.budgets),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AssumptionReport":
        try:
            return cls(
                system=_thaw(data["system"]),
                entries=tuple(AssumptionEntry.from_dict(e) for e in data["entries"]),
                exponents=dict(data["exponents"]),
                budgets=_thaw(data.get("budgets") or {}),
            )
        except KeyError as e:
            raise ReportError(f"Report document is missing the key {e}")


def _thaw(value: Any) -> Any:
    """Lists back to tuples so a loaded report compares equal to the original."""
    if isinstance(value, dict):
        return {k: _thaw(v) for k, v in value.items()}
    if isinstance(value, list):
        return tuple(_thaw(v) for v in value)
    return value


def _format(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.4g}"


def render_markdown(report: AssumptionReport, ledger: Optional[Dict[str, Any]] = None) -> str:
    """Markdown body: assumption table, exponents and the case ledger when given."""
    lines = ["# Assumption audit", ""]
    family = report.system.get("family", "?")
    lines.append(f"System: `{family}` with parameters `{report.system.get('parameters', ())}`.")
    lines += ["", "| Assumption | Status | Quantities | Fit range | Evidence |", "|---|---|---|---|---|"]
    for entry in report.entries:
        quantities = ", ".join(f"{k}={_format(v)}" for k, v in entry.quantities.items())
        fit_range = "" if entry.fit_range is None else f"[{_format(entry.fit_range[0])}, {_format(entry.fit_range[1])}]"
        lines.append(f"| {entry.id} | {entry.status.value} | {quantities} | {fit_range} | {entry.evidence} |")
    notes = [entry for entry in report.entries if entry.note]
    if notes:
        lines += ["", "## Notes", ""]
        lines += [f"- {entry.id}: {entry.note}" for entry in notes]
    lines += ["", "## Fitted exponents", ""]
    lines += [f"- {name} = {_format(value)}" for name, value in report.exponents.items()]
    if ledger is not None:
        lines += ["", f"## Case check: {ledger['verdict']}", ""]
        lines += ["| Case | Inequality | Left | Right | Holds |", "|---|---|---|---|---|"]
        for line in ledger["ledger"]:
            lines.append(
                f"| {line['case']} | {line['label']} | {_format(line['lhs'])} | {_format(line['rhs'])} | {line['holds']} |"
            )
    return "\n".join(lines) + "\n"


def dumps_report(report: AssumptionReport, ledger: Optional[Dict[str, Any]] = None) -> str:
    post = frontmatter.Post(render_markdown(report, ledger), **report.to_dict())
    if ledger is not None:
        post.metadata["case_check"] = _plain(ledger)
    return frontmatter.dumps(post)


def loads_report(text: str) -> AssumptionReport:
    """
    Rebuild a report from its document text.

    Raises:
        ReportError: If the front matter is missing or incomplete
    """
    post = frontmatter.loads(text)
    if not post.metadata:
        raise ReportError("Report document has no front matter")
    return AssumptionReport.from_dict(post.metadata)


def write_report(report: AssumptionReport, path: Union[str, Path], ledger: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.write_text(dumps_report(report, ledger), encoding="utf-8")
    logger.debug(f"Wrote audit report to {path}")
    return path


def read_report(path: Union[str, Path]) -> AssumptionReport:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportError(f"Cannot read report {path}: {e}")
    return loads_report(text)


def summary_json(report: AssumptionReport, ledger: Optional[Dict[str, Any]] = None) -> str:
    """
    Machine-readable summary of statuses, exponents and the verdict.

    Non-finite numbers are written as the strings "inf", "-inf" or "nan".
    """
    summary = {
        "statuses": {entry.id: entry.status.value for entry in report.entries},
        "exponents": _plain(report.exponents),
        "case_check": _plain(ledger) if ledger is not None else None,
    }
    return json.dumps(jsonable(summary), indent=2, sort_keys=True, allow_nan=False)
