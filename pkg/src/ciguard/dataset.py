"""Training-set hygiene: abstraction-based relabelling and CI-aware undersampling."""

from __future__ import annotations

import heapq
import io
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .features import RepoSummary
from .ingest import BuildStatus

logger = logging.getLogger(__name__)

P, E = BuildStatus.PASS, BuildStatus.ERR

DEFAULT_TARGET_ERROR_RATE = 0.30


@dataclass(frozen=True)
class LabeledSummary:
    index: int
    summary: RepoSummary
    status: BuildStatus
    relabeled: bool = False
    original_status: BuildStatus | None = None

    def __post_init__(self):
        if self.original_status is None:
            object.__setattr__(self, "original_status", self.status)
        if self.relabeled and self.status == self.original_status:
            raise ValueError("a relabeled entry must differ from its original status")


def abr_relabel(seq: Sequence[LabeledSummary]) -> list[LabeledSummary]:
    """Relabel errors that the abstraction cannot distinguish from a passing neighbour.

    Whenever two adjacent entries have equal summaries but different statuses,
    the erroring one becomes a pass.  This repeats until no such pair is left,
    since a relabel can expose a new one (``E, E, P`` with equal summaries).
    """
    seq = list(seq)
    if not seq:
        return []
    domain = set(seq[0].summary.entries)
    for item in seq[1:]:
        if set(item.summary.entries) != domain:
            raise ValueError("all summaries must be built over the same extractor set")

    status = [s.status for s in seq]
    equal_next = [seq[i].summary.same_values(seq[i + 1].summary) for i in range(len(seq) - 1)]
    # An Err entry flips iff it is connected to some Pass through a chain of equal summaries.
    changed = True
    while changed:
        changed = False
        for i, eq in enumerate(equal_next):
            if eq and status[i] != status[i + 1]:
                j = i if status[i] is E else i + 1
                status[j] = P
                changed = True
    return [
        replace(s, status=st, relabeled=st != s.original_status)
        for s, st in zip(seq, status)
    ]


def nonadjacent_conflicts(seq: Sequence[LabeledSummary]) -> list[tuple[int, int]]:
    """Pairs with equal summaries but different statuses that relabelling leaves alone."""
    seen: dict[tuple[float, ...], list[LabeledSummary]] = {}
    for s in seq:
        seen.setdefault(s.summary.vector(), []).append(s)
    out = []
    for group in seen.values():
        passes = [s.index for s in group if s.status is P]
        errs = [s.index for s in group if s.status is E]
        out.extend((p, e) for p in passes for e in errs)
    if out:
        logger.warning("%d equal-summary pairs still carry different labels", len(out))
    return sorted(out)


@dataclass
class UndersampleResult:
    samples: list[LabeledSummary]
    removed: list[int]
    reached: bool

    @property
    def error_rate(self) -> float:
        return error_rate(s.status for s in self.samples)


def error_rate(statuses: Iterable[BuildStatus]) -> float:
    statuses = list(statuses)
    if not statuses:
        return 0.0
    return sum(s is E for s in statuses) / len(statuses)


def removable_runs(statuses: Sequence[BuildStatus]) -> list[list[int]]:
    """Maximal runs of Pass positions whose neighbours are all Pass too."""
    n = len(statuses)
    runs: list[list[int]] = []
    cur: list[int] = []
    for i, s in enumerate(statuses):
        ok = (
            s is P
            and (i == 0 or statuses[i - 1] is P)
            and (i == n - 1 or statuses[i + 1] is P)
        )
        if ok:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def _centre_out(run: list[int]) -> list[int]:
    """Order run members from the middle outwards, lower index first on ties."""
    mid = (len(run) - 1) / 2
    return [i for _, i in sorted((abs(pos - mid), i) for pos, i in enumerate(run))]


def undersample(
    seq: Sequence[LabeledSummary], target_error_rate: float = DEFAULT_TARGET_ERROR_RATE
) -> UndersampleResult:
    """Drop Pass entries until the error rate reaches ``target_error_rate``.

    Only entries whose neighbours are both Pass may go, so every P-E-P pattern
    survives.  The longest remaining removable run loses its middle entry
    first.  With no Err entries at all the input is returned unchanged and
    ``reached`` is False.
    """
    if not 0.0 < target_error_rate < 1.0:
        raise ValueError("target error rate must lie strictly between 0 and 1")
    seq = list(seq)
    statuses = [s.status for s in seq]
    n_err = sum(s is E for s in statuses)
    n = len(seq)
    if n_err == 0:
        if n:
            logger.warning("no erroring builds; undersampling cannot reach %.2f", target_error_rate)
        return UndersampleResult(seq, [], reached=n == 0)
    if n_err / n >= target_error_rate:
        return UndersampleResult(seq, [], reached=True)

    heap = []
    for order, run in enumerate(removable_runs(statuses)):
        heapq.heappush(heap, (-len(run), run[0], order, _centre_out(run)))
    removed: list[int] = []
    kept = n
    while n_err / kept < target_error_rate and heap:
        neg_len, first, order, members = heapq.heappop(heap)
        removed.append(members[0])
        kept -= 1
        rest = members[1:]
        if rest:
            heapq.heappush(heap, (neg_len + 1, first, order, rest))
    drop = set(removed)
    out = [s for i, s in enumerate(seq) if i not in drop]
    reached = n_err / kept >= target_error_rate
    if not reached:
        logger.warning(
            "undersampling stopped at error rate %.3f (< %.2f): nothing left to remove",
            n_err / kept,
            target_error_rate,
        )
    return UndersampleResult(out, sorted(removed), reached)


def debug_dump(
    original: Sequence[LabeledSummary], relabeled: Sequence[LabeledSummary], removed: Iterable[int] = ()
) -> str:
    """TSV of index, original status, relabelled status and undersampling removal."""
    removed = set(removed)
    buf = io.StringIO()
    buf.write("index\toriginal\tabr\tremoved\n")
    for pos, (a, b) in enumerate(zip(original, relabeled)):
        buf.write(f"{a.index}\t{a.status}\t{b.status}\t{int(pos in removed)}\n")
    return buf.getvalue()
