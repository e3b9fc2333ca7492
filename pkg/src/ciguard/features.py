"""Lexical code features and the repository summaries built from them.

Two extractor families exist.  A *magic* feature binds a keyword to the
numeric constant written next to it (``PATCH = 35``, ``import Tweet V1.0``).
A *diff* feature records that one token replaced another between two adjacent
commits; on any snapshot it evaluates to -1 (old token present), +1 (new token
present) or 0 (neither).
"""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .ingest import RepoSnapshot

MAGIC = "magic"
DIFF = "diff"

VERSION_BASE = 10_000
MAX_COMPONENTS = 4
# Embeddings above 2**53 lose integer precision and with it strict monotonicity.
_MAX_EXACT = 2**53

_TOKEN = re.compile(r"[\w./]+")
_HAS_LETTER = re.compile(r"[A-Za-z_]")
_VERSION = re.compile(r"\d+(?:\.\d+)*")
_MAGIC_LINE = re.compile(
    r"(?<![\w./])(?P<key>[A-Za-z_][\w./]*)"
    r"['\"]?\s*,?\s*['\"]?"
    r"(?:\s*(?P<sep>~>|>=|<=|==|=|:)\s*|\s+)"
    r"['\"(]?\s*[vV]?(?P<num>\d+(?:\.\d+)*)"
    r"(?![\w])"
)


def tokenize(text: str) -> list[str]:
    """Split on whitespace and punctuation, keeping ``.``, ``_`` and ``/`` inside tokens."""
    return _TOKEN.findall(text)


@dataclass(frozen=True, order=True)
class CodeFeature:
    kind: str
    keywords: tuple[str, ...]

    def __post_init__(self):
        if self.kind == MAGIC:
            if len(self.keywords) != 1 or not self.keywords[0].strip():
                raise ValueError("magic feature needs one non-empty keyword")
        elif self.kind == DIFF:
            if len(self.keywords) != 2 or not all(k.strip() for k in self.keywords):
                raise ValueError("diff feature needs two non-empty keywords")
            if self.keywords[0] == self.keywords[1]:
                raise ValueError(f"diff keywords must differ, got {self.keywords[0]!r} twice")
        else:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @classmethod
    def magic(cls, keyword: str) -> "CodeFeature":
        return cls(MAGIC, (keyword,))

    @classmethod
    def diff(cls, removed: str, added: str) -> "CodeFeature":
        return cls(DIFF, (removed, added))

    @property
    def name(self) -> str:
        return "/".join(self.keywords)

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.name, self.kind)

    def __str__(self) -> str:
        return self.name


def sorted_features(features: Iterable[CodeFeature]) -> list[CodeFeature]:
    return sorted(set(features), key=lambda f: f.sort_key)


@dataclass(frozen=True)
class Location:
    path: str
    start: int
    end: int


@dataclass(frozen=True)
class FeatureValue:
    value: float
    locations: tuple[Location, ...] = ()
    text: str = ""
    anomaly: bool = False

    @property
    def present(self) -> bool:
        return bool(self.locations)


ABSENT = FeatureValue(0.0)


@dataclass(frozen=True)
class MagicHit:
    value: float
    text: str
    location: Location
    prefix: str


def version_to_real(text: str) -> float:
    """Embed a dotted version into the reals, preserving component-wise order.

    Each component occupies four decimal digits, most significant first, so
    ``"1.0"`` is ``1e12`` and ``"3.4.35"`` is ``3_0004_0035_0000``.
    """
    if not _VERSION.fullmatch(text):
        raise ValueError(f"not a version: {text!r}")
    parts = [int(p) for p in text.split(".")]
    if len(parts) > MAX_COMPONENTS:
        raise ValueError(f"more than {MAX_COMPONENTS} components: {text!r}")
    if any(p >= VERSION_BASE for p in parts):
        raise ValueError(f"component out of range in {text!r}")
    value = 0
    for i, p in enumerate(parts):
        value += p * VERSION_BASE ** (MAX_COMPONENTS - 1 - i)
    if value >= _MAX_EXACT:
        raise ValueError(f"version {text!r} too large to embed exactly")
    return float(value)


def version_components(text: str) -> tuple[int, ...]:
    """``"1.0"`` -> ``(1, 0)``; used where readable values are compared."""
    return tuple(int(p) for p in text.split("."))


def scan_magic(snapshot: RepoSnapshot) -> dict[str, list[MagicHit]]:
    """Every keyword/constant binding in ``snapshot``, in file-then-line order."""
    hits: dict[str, list[MagicHit]] = {}
    for path, line in snapshot.lines():
        for m in _MAGIC_LINE.finditer(line.text):
            try:
                value = version_to_real(m.group("num"))
            except ValueError:
                continue
            key = m.group("key")
            prefix = " ".join(line.text[: m.end("key")].split())
            loc = Location(path, line.start, line.end)
            hits.setdefault(key, []).append(MagicHit(value, m.group("num"), loc, prefix))
    return hits


def _magic_value(hits: Sequence[MagicHit]) -> FeatureValue:
    last = hits[-1]
    locs = tuple(dict.fromkeys(h.location for h in hits))
    return FeatureValue(last.value, locs, last.text)


def extract_magic_candidates(snapshot: RepoSnapshot) -> dict[CodeFeature, FeatureValue]:
    """Magic features observed in ``snapshot`` with their value and locations."""
    return {
        CodeFeature.magic(key): _magic_value(hits)
        for key, hits in snapshot.magic_matches.items()
    }


def _occurrences(snapshot: RepoSnapshot, token: str) -> tuple[Location, ...]:
    return tuple(Location(*o) for o in snapshot.token_index.get(token, ()))


def evaluate_diff_feature(f: CodeFeature, snapshot: RepoSnapshot) -> FeatureValue:
    removed, added = f.keywords
    old = _occurrences(snapshot, removed)
    new = _occurrences(snapshot, added)
    if old and not new:
        return FeatureValue(-1.0, old, removed)
    if new and not old:
        return FeatureValue(1.0, new, added)
    if old and new:
        return FeatureValue(0.0, (), "", anomaly=True)
    return ABSENT


def _changed_pairs(a: Sequence[str], b: Sequence[str]) -> Iterable[tuple[str, str]]:
    sm = difflib.SequenceMatcher(a=a, b=b, autojunk=False)
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag == "replace":
            yield from zip(a[i1:i2], b[j1:j2])


def extract_diff_features(snap_t: RepoSnapshot, snap_t1: RepoSnapshot) -> set[CodeFeature]:
    """Token replacements between two adjacent snapshots.

    Removed and added lines are paired positionally inside each replaced hunk
    and compared token by token.  Purely numeric tokens are left to the magic
    family.  A pair is kept only when it evaluates to -1 on the older snapshot
    and +1 on the newer one, so both keywords never co-occur in its source pair.
    """
    found: set[CodeFeature] = set()
    for path in sorted(set(snap_t.files) | set(snap_t1.files)):
        a = [ln.text for ln in snap_t.files.get(path, ())]
        b = [ln.text for ln in snap_t1.files.get(path, ())]
        if a == b:
            continue
        for old_line, new_line in _changed_pairs(a, b):
            for x, y in zip(tokenize(old_line), tokenize(new_line)):
                if x != y and _HAS_LETTER.search(x) and _HAS_LETTER.search(y):
                    found.add(CodeFeature.diff(x, y))
    return {
        f
        for f in found
        if evaluate_diff_feature(f, snap_t).value == -1.0
        and evaluate_diff_feature(f, snap_t1).value == 1.0
    }


@dataclass(frozen=True)
class RepoSummary:
    """Feature vector of one snapshot, total over the extractor set it was built with."""

    entries: Mapping[CodeFeature, FeatureValue] = field(default_factory=dict)

    @property
    def features(self) -> list[CodeFeature]:
        return sorted_features(self.entries)

    def __getitem__(self, f: CodeFeature) -> FeatureValue:
        return self.entries[f]

    def __contains__(self, f: CodeFeature) -> bool:
        return f in self.entries

    def value(self, f: CodeFeature) -> float:
        return self.entries[f].value

    def vector(self) -> tuple[float, ...]:
        return tuple(self.entries[f].value for f in self.features)

    def same_values(self, other: "RepoSummary") -> bool:
        """Equality of the abstraction, ignoring where features were found."""
        if set(self.entries) != set(other.entries):
            return False
        return all(self.entries[f].value == other.entries[f].value for f in self.entries)

    def by_name(self, name: str) -> list[tuple[CodeFeature, FeatureValue]]:
        return [(f, v) for f, v in self.entries.items() if f.name == name]

    @property
    def anomalies(self) -> list[CodeFeature]:
        return [f for f, v in self.entries.items() if v.anomaly]


def summarize(snapshot: RepoSnapshot, extractors: Iterable[CodeFeature]) -> RepoSummary:
    """Apply every extractor to ``snapshot``.

    A magic keyword bound on several lines takes the value of the last one
    (file-then-line order) and keeps all locations.
    """
    extractors = list(extractors)
    if not extractors:
        raise ValueError("summarize needs at least one extractor")
    hits = snapshot.magic_matches
    entries: dict[CodeFeature, FeatureValue] = {}
    for f in extractors:
        if f.kind == MAGIC:
            found = hits.get(f.keywords[0])
            entries[f] = _magic_value(found) if found else ABSENT
        else:
            entries[f] = evaluate_diff_feature(f, snapshot)
    return RepoSummary(entries)


def is_present(f: CodeFeature, fv: FeatureValue) -> bool:
    if f.kind == MAGIC:
        return fv.present
    return fv.value != 0.0


def support(f: CodeFeature, summaries: Sequence[RepoSummary]) -> float:
    """Fraction of summaries in which ``f`` occurs."""
    if not summaries:
        raise ValueError("support over an empty training set is undefined")
    return sum(is_present(f, s[f]) for s in summaries) / len(summaries)


def prune_by_support(
    candidates: Iterable[CodeFeature], summaries: Sequence[RepoSummary], threshold: float = 0.10
) -> set[CodeFeature]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"support threshold must lie in [0, 1], got {threshold}")
    return {f for f in candidates if support(f, summaries) >= threshold}


def candidate_support(snapshots: Sequence[RepoSnapshot]) -> dict[CodeFeature, float]:
    """Support of every magic keyword seen in ``snapshots``.

    Equivalent to ``support`` over summaries built from all candidates, but
    reads each snapshot's scan once.
    """
    if not snapshots:
        raise ValueError("support over an empty training set is undefined")
    counts: dict[str, int] = {}
    for snap in snapshots:
        for key in snap.magic_matches:
            counts[key] = counts.get(key, 0) + 1
    n = len(snapshots)
    return {CodeFeature.magic(k): c / n for k, c in counts.items()}


# --- serialization -----------------------------------------------------------

EXTRACTOR_FORMAT = 1


def feature_to_dict(f: CodeFeature) -> dict:
    return {"kind": f.kind, "keywords": list(f.keywords)}


def feature_from_dict(d: Mapping) -> CodeFeature:
    return CodeFeature(str(d["kind"]), tuple(str(k) for k in d["keywords"]))


def dump_extractors(
    features: Iterable[CodeFeature], metadata: Mapping[CodeFeature, Mapping] | None = None
) -> str:
    metadata = metadata or {}
    items = []
    for f in sorted_features(features):
        d = feature_to_dict(f)
        d["meta"] = dict(metadata.get(f, {}))
        items.append(d)
    return json.dumps({"format_version": EXTRACTOR_FORMAT, "extractors": items}, sort_keys=True, indent=1)


def load_extractors(text: str) -> tuple[list[CodeFeature], dict[CodeFeature, dict]]:
    doc = json.loads(text)
    if doc.get("format_version") != EXTRACTOR_FORMAT:
        raise ValueError(f"unsupported extractor format {doc.get('format_version')!r}")
    feats, meta = [], {}
    for d in doc["extractors"]:
        f = feature_from_dict(d)
        feats.append(f)
        meta[f] = dict(d.get("meta", {}))
    return feats, meta
