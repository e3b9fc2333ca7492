"""Turning a repository plus its CI build records into a labeled commit sequence.

Histories arrive as local data: either a git repository (read through its
object store with the ``git`` executable) or a directory holding one exported
checkout per commit.  A build manifest (CSV or JSON lines) gives the CI build
number and raw status of every commit that was built.
"""

from __future__ import annotations

import csv
import difflib
import enum
import fnmatch
import json
import logging
import os
import subprocess
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

MAX_JOIN_LINES = 5
_OPENERS = "([{"
_CLOSERS = ")]}"


class IngestError(Exception):
    """Raised when a history cannot be turned into a labeled sequence."""


class RawStatus(enum.Enum):
    PASS = "passed"
    FAIL = "failed"
    ERR = "errored"

    @classmethod
    def parse(cls, text: str) -> "RawStatus":
        key = text.strip().lower()
        aliases = {"pass": "passed", "fail": "failed", "err": "errored", "error": "errored"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise IngestError(f"unknown build status {text!r}") from None


class BuildStatus(enum.Enum):
    PASS = "P"
    ERR = "E"

    def __str__(self) -> str:
        return self.value


class Transition(enum.Enum):
    PP = "PP"
    PE = "PE"
    EP = "EP"
    EE = "EE"


def collapse_status(raw: RawStatus) -> BuildStatus:
    """Test failures still mean the build itself worked, so only ``ERR`` survives."""
    return BuildStatus.ERR if raw is RawStatus.ERR else BuildStatus.PASS


def status_transition(s_t: BuildStatus, s_t1: BuildStatus) -> Transition:
    return Transition(s_t.value + s_t1.value)


@dataclass(frozen=True)
class LogicalLine:
    """A source line after continuation joining; ``start``/``end`` are 1-based."""

    text: str
    start: int
    end: int


@dataclass(frozen=True)
class FilterPolicy:
    patterns: tuple[str, ...] = (
        "*.rb",
        "Gemfile",
        "Gemfile.*",
        "*.gemspec",
        ".travis.yml",
        "*.yml",
        "*.lock",
    )

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("filter policy needs at least one pattern")

    def admits(self, path: str) -> bool:
        name = path.replace(os.sep, "/").rsplit("/", 1)[-1]
        return any(fnmatch.fnmatchcase(name, pat) for pat in self.patterns)


DEFAULT_POLICY = FilterPolicy()


@dataclass(frozen=True, eq=False)
class RepoSnapshot:
    """Filtered contents of one commit: relative path -> logical lines."""

    files: Mapping[str, tuple[LogicalLine, ...]]
    warnings: tuple[str, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, RepoSnapshot):
            return NotImplemented
        return dict(self.files) == dict(other.files)

    def __hash__(self):
        return hash(tuple(sorted((p, lines) for p, lines in self.files.items())))

    @property
    def paths(self) -> list[str]:
        return sorted(self.files)

    def lines(self) -> Iterable[tuple[str, LogicalLine]]:
        """All logical lines in file-then-line order."""
        for path in self.paths:
            for line in self.files[path]:
                yield path, line

    @property
    def line_count(self) -> int:
        return sum(len(v) for v in self.files.values())

    # Lexical indexes are computed lazily and cached; snapshots are immutable.
    @cached_property
    def token_index(self) -> dict[str, tuple[tuple[str, int, int], ...]]:
        from .features import tokenize

        index: dict[str, list[tuple[str, int, int]]] = {}
        for path, line in self.lines():
            for tok in dict.fromkeys(tokenize(line.text)):
                index.setdefault(tok, []).append((path, line.start, line.end))
        return {k: tuple(v) for k, v in index.items()}

    @cached_property
    def magic_matches(self):
        from .features import scan_magic

        return scan_magic(self)


EMPTY_SNAPSHOT = RepoSnapshot(files={})


@dataclass(frozen=True)
class LabeledCommit:
    index: int
    commit_id: str
    status: BuildStatus
    snapshot: RepoSnapshot = field(repr=False)
    commit_size: int = 0
    raw_status: RawStatus | None = None


@dataclass(frozen=True)
class ManifestRow:
    build_number: int
    commit_id: str
    raw_status: RawStatus
    timestamp: str = ""


def join_continuations(raw_lines: Sequence[str]) -> list[LogicalLine]:
    """Merge backslash continuations and unbalanced bracket runs into logical lines.

    A bracket run is merged until balanced or until ``MAX_JOIN_LINES`` physical
    lines have been consumed.  Blank logical lines are dropped.
    """
    out: list[LogicalLine] = []
    i = 0
    n = len(raw_lines)
    while i < n:
        start = i
        parts: list[str] = []
        depth = 0
        while True:
            text = raw_lines[i].rstrip("\r\n")
            backslash = text.rstrip().endswith("\\")
            if backslash:
                text = text.rstrip()[:-1]
            parts.append(text.strip())
            depth += sum(text.count(c) for c in _OPENERS) - sum(text.count(c) for c in _CLOSERS)
            consumed = i - start + 1
            i += 1
            if i >= n or consumed >= MAX_JOIN_LINES:
                break
            if not backslash and depth <= 0:
                break
        joined = " ".join(p for p in parts if p)
        if joined:
            out.append(LogicalLine(joined, start + 1, i))
    return out


def _is_binary(data: bytes) -> bool:
    return b"\x00" in data[:8192]


def filter_repository(
    checkout: Mapping[str, str | bytes] | RepoSnapshot, policy: FilterPolicy = DEFAULT_POLICY
) -> RepoSnapshot:
    """Keep only configuration-relevant files, split into logical lines.

    ``checkout`` values may be text or bytes; binary and undecodable files are
    dropped with a warning.  Passing a snapshot re-applies the path filter.
    """
    if isinstance(checkout, RepoSnapshot):
        kept = {p: v for p, v in checkout.files.items() if policy.admits(p)}
        return RepoSnapshot(files=kept, warnings=checkout.warnings)

    files: dict[str, tuple[LogicalLine, ...]] = {}
    warnings: list[str] = []
    for path in sorted(checkout):
        if not policy.admits(path):
            continue
        content = checkout[path]
        if isinstance(content, bytes):
            if _is_binary(content):
                continue
            try:
                content = content.decode("utf-8")
            except UnicodeDecodeError:
                warnings.append(f"{path}: not valid UTF-8, skipped")
                continue
        elif "\x00" in content:
            continue
        files[path.replace(os.sep, "/")] = tuple(join_continuations(content.splitlines()))
    return RepoSnapshot(files=files, warnings=tuple(warnings))


def commit_size(prev: RepoSnapshot | None, cur: RepoSnapshot) -> int:
    """Lines added plus lines deleted between two snapshots."""
    if prev is None:
        return cur.line_count
    total = 0
    for path in sorted(set(prev.files) | set(cur.files)):
        a = [ln.text for ln in prev.files.get(path, ())]
        b = [ln.text for ln in cur.files.get(path, ())]
        if a == b:
            continue
        sm = difflib.SequenceMatcher(a=a, b=b, autojunk=False)
        for tag, i1, i2, j1, j2 in sm.get_opcodes():
            if tag != "equal":
                total += (i2 - i1) + (j2 - j1)
    return total


def build_history(
    entries: Iterable[tuple[str, RawStatus | BuildStatus, RepoSnapshot]],
) -> list[LabeledCommit]:
    """Index already-ordered (commit id, status, snapshot) triples."""
    out: list[LabeledCommit] = []
    prev = None
    for idx, (cid, status, snap) in enumerate(entries):
        raw = status if isinstance(status, RawStatus) else None
        label = collapse_status(status) if isinstance(status, RawStatus) else status
        out.append(LabeledCommit(idx, cid, label, snap, commit_size(prev, snap), raw))
        prev = snap
    return out


# --- manifests ---------------------------------------------------------------


def load_manifest(path: str | os.PathLike) -> list[ManifestRow]:
    """Read a build manifest in CSV (with header) or JSON-lines form."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows: list[dict] = []
    stripped = text.lstrip()
    if path.suffix in (".jsonl", ".json") or stripped.startswith("{"):
        for n, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise IngestError(f"{path}:{n}: bad JSON line ({exc})") from None
    else:
        rows = list(csv.DictReader(text.splitlines()))
    out = []
    for n, row in enumerate(rows, 1):
        try:
            out.append(
                ManifestRow(
                    build_number=int(row["build_number"]),
                    commit_id=str(row["commit_id"]).strip(),
                    raw_status=RawStatus.parse(str(row["raw_status"])),
                    timestamp=str(row.get("timestamp") or ""),
                )
            )
        except KeyError as exc:
            raise IngestError(f"{path}: row {n} lacks field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise IngestError(f"{path}: row {n}: {exc}") from None
    return out


def write_manifest(rows: Iterable[ManifestRow], path: str | os.PathLike) -> None:
    """CSV with a header, or JSON lines when ``path`` ends in ``.jsonl``."""
    if Path(path).suffix == ".jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for r in rows:
                d = {"build_number": r.build_number, "commit_id": r.commit_id,
                     "raw_status": r.raw_status.value, "timestamp": r.timestamp}
                fh.write(json.dumps(d, sort_keys=True) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["build_number", "commit_id", "raw_status", "timestamp"])
        for r in rows:
            writer.writerow([r.build_number, r.commit_id, r.raw_status.value, r.timestamp])


# --- checkout readers --------------------------------------------------------


class _DirectoryReader:
    """One exported checkout per commit: ``<root>/<commit_id>/...``."""

    def __init__(self, root: Path):
        self.root = root

    def has(self, commit_id: str) -> bool:
        return (self.root / commit_id).is_dir()

    def checkout(self, commit_id: str) -> dict[str, bytes]:
        return read_checkout(self.root / commit_id)


def read_checkout(base: str | os.PathLike) -> dict[str, bytes]:
    """Every file under ``base`` keyed by POSIX relative path; ``.git`` is skipped."""
    base = Path(base)
    if not base.is_dir():
        raise IngestError(f"{base} is not a directory")
    files = {}
    for dirpath, dirnames, names in os.walk(base):
        dirnames[:] = sorted(d for d in dirnames if d != ".git")
        for name in names:
            full = Path(dirpath) / name
            rel = full.relative_to(base).as_posix()
            try:
                files[rel] = full.read_bytes()
            except OSError as exc:
                logger.warning("skipping unreadable %s: %s", full, exc)
    return files


class _GitReader:
    """Reads blobs straight from the object store; no worktree is touched."""

    def __init__(self, root: Path):
        self.root = root

    def _git(self, *args: str) -> bytes:
        res = subprocess.run(
            ["git", "-C", str(self.root), *args], capture_output=True, check=False
        )
        if res.returncode != 0:
            raise IngestError(res.stderr.decode(errors="replace").strip())
        return res.stdout

    def has(self, commit_id: str) -> bool:
        try:
            self._git("cat-file", "-e", f"{commit_id}^{{commit}}")
        except IngestError:
            return False
        return True

    def checkout(self, commit_id: str, policy: FilterPolicy | None = None) -> dict[str, bytes]:
        listing = self._git("ls-tree", "-r", "-z", "--name-only", commit_id)
        files = {}
        for raw in listing.split(b"\0"):
            if not raw:
                continue
            path = raw.decode("utf-8", errors="replace")
            if policy is not None and not policy.admits(path):
                continue
            files[path] = self._git("show", f"{commit_id}:{path}")
        return files


def _reader_for(repo_root: Path):
    if (repo_root / ".git").exists() or (repo_root / "HEAD").is_file():
        return _GitReader(repo_root)
    return _DirectoryReader(repo_root)


def linearize_history(
    repo_root: str | os.PathLike,
    build_manifest: Sequence[ManifestRow] | str | os.PathLike,
    policy: FilterPolicy = DEFAULT_POLICY,
) -> list[LabeledCommit]:
    """Order built commits by CI build number and label each filtered checkout.

    Ties cannot occur on the build number itself (duplicates are rejected);
    the timestamp and commit id only fix the order of rows read from the
    manifest before that check.
    """
    rows = (
        load_manifest(build_manifest)
        if isinstance(build_manifest, (str, os.PathLike))
        else list(build_manifest)
    )
    rows.sort(key=lambda r: (r.build_number, r.timestamp, r.commit_id))
    seen: dict[int, str] = {}
    for r in rows:
        if r.build_number in seen:
            raise IngestError(
                f"duplicate build number {r.build_number} "
                f"({seen[r.build_number]} and {r.commit_id}); order is ambiguous"
            )
        seen[r.build_number] = r.commit_id

    root = Path(repo_root)
    reader = _reader_for(root)
    entries = []
    for r in rows:
        if not reader.has(r.commit_id):
            raise IngestError(f"commit {r.commit_id} not found under {root}")
        if isinstance(reader, _GitReader):
            checkout = reader.checkout(r.commit_id, policy)
        else:
            checkout = reader.checkout(r.commit_id)
        entries.append((r.commit_id, r.raw_status, filter_repository(checkout, policy)))
    return build_history(entries)


def load_repository(
    repo_dir: str | os.PathLike, policy: FilterPolicy = DEFAULT_POLICY
) -> list[LabeledCommit]:
    """Load a repository directory laid out as ``manifest.csv`` + ``commits/``.

    A manifest next to a git repository (``repo_dir`` itself holding ``.git``)
    is also accepted.
    """
    repo_dir = Path(repo_dir)
    for name in ("manifest.csv", "manifest.jsonl"):
        manifest = repo_dir / name
        if manifest.is_file():
            break
    else:
        raise IngestError(f"no manifest.csv or manifest.jsonl in {repo_dir}")
    root = repo_dir / "commits" if (repo_dir / "commits").is_dir() else repo_dir
    return linearize_history(root, manifest, policy)
