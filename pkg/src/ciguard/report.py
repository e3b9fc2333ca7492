"""Human-readable error reports built from decision paths."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dtree import DecisionPath, path_keywords
from .features import RepoSummary
from .ingest import BuildStatus

FAILURE_HEADER = "Predicted build failure based on potential error locations:"
SUCCESS_LINE = "Predicted build success."
NOT_FOUND = "(not found in current snapshot)"
MULTI_FILE_THRESHOLD = 3
KEYWORD_INDENT = "   "


@dataclass(frozen=True)
class Finding:
    keyword: str
    locations: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Explanation:
    prediction: BuildStatus
    findings: tuple[Finding, ...] = ()
    source_models: tuple[str, ...] = ()
    paths: tuple[DecisionPath, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if (self.prediction is BuildStatus.ERR) != bool(self.findings):
            raise ValueError("findings must be non-empty exactly when the prediction is Err")
        names = [f.keyword for f in self.findings]
        if len(names) != len(set(names)):
            raise ValueError("each keyword may appear in only one finding")

    @property
    def keywords(self) -> list[str]:
        return [f.keyword for f in self.findings]


def localize(keyword: str, summary: RepoSummary) -> list[tuple[str, str]]:
    """Where ``keyword`` sits in the snapshot behind ``summary``.

    One line in a file renders ``Line N``, several render ``Multiple Lines``;
    three or more files collapse into one ``Multiple Files`` entry.
    """
    per_file: dict[str, set[int]] = {}
    for _, fv in summary.by_name(keyword):
        for loc in fv.locations:
            per_file.setdefault(loc.path, set()).add(loc.start)
    if not per_file:
        return []
    if len(per_file) >= MULTI_FILE_THRESHOLD:
        return [("Multiple Files", "Multiple Lines")]
    out = []
    for path in sorted(per_file):
        lines = per_file[path]
        out.append((path, f"Line {min(lines)}" if len(lines) == 1 else "Multiple Lines"))
    return out


def explain(
    prediction: BuildStatus,
    contributions: Sequence[tuple[str, DecisionPath, RepoSummary]],
) -> Explanation:
    """Collect findings from the decision paths of the models that predicted Err.

    ``contributions`` holds (model name, path, summary the model saw).  Keywords
    keep decision-path order, models in the order given.
    """
    if prediction is BuildStatus.PASS:
        return Explanation(prediction)
    findings: dict[str, Finding] = {}
    sources = []
    paths = []
    for name, path, summary in contributions:
        sources.append(name)
        paths.append(path)
        for kw in path_keywords(path):
            if kw not in findings:
                findings[kw] = Finding(kw, tuple(localize(kw, summary)))
    if not findings:
        # A single-leaf Err model has no path to point at.
        findings["(no distinguishing keyword)"] = Finding("(no distinguishing keyword)")
    return Explanation(prediction, tuple(findings.values()), tuple(sources), tuple(paths))


def render(e: Explanation) -> str:
    if e.prediction is BuildStatus.PASS:
        return SUCCESS_LINE
    lines = [FAILURE_HEADER]
    for f in e.findings:
        if f.locations:
            lines.extend(f"{path}:{desc}" for path, desc in f.locations)
        else:
            lines.append(NOT_FOUND)
        lines.append(f"{KEYWORD_INDENT}{f.keyword}")
    return "\n".join(lines)


def to_json_dict(e: Explanation) -> dict:
    return {
        "prediction": "Err" if e.prediction is BuildStatus.ERR else "Pass",
        "findings": [
            {"keyword": f.keyword, "locations": [list(loc) for loc in f.locations]}
            for f in e.findings
        ],
        "source_models": list(e.source_models),
    }


def render_json(e: Explanation) -> str:
    return json.dumps(to_json_dict(e), sort_keys=True, indent=1)


def from_json_dict(d: dict) -> Explanation:
    pred = BuildStatus.ERR if d["prediction"] == "Err" else BuildStatus.PASS
    findings = tuple(
        Finding(f["keyword"], tuple(tuple(loc) for loc in f["locations"])) for f in d["findings"]
    )
    return Explanation(pred, findings, tuple(d.get("source_models", ())))


def keyword_tokens(keywords: Iterable[str]) -> set[str]:
    """Diff feature names ``old/new`` count as both of their tokens."""
    out: set[str] = set()
    for kw in keywords:
        out.add(kw)
        out.update(part for part in kw.split("/") if part)
    return out
