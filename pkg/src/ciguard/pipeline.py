"""Global and local model training, misclassification-guided refinement, and evaluation.

The global model sees magic-constant features from every training repository.
The local model starts from the magic features of one repository and is then
refined: commits around status flips that the model gets wrong are diffed
against their predecessor, and the token replacements found there become new
features.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .dataset import LabeledSummary, abr_relabel, undersample
from .dtree import DecisionPath, DecisionTree, Leaf, TreeParams, fit, majority, predict
from .features import (
    CodeFeature,
    RepoSummary,
    candidate_support,
    extract_diff_features,
    feature_from_dict,
    feature_to_dict,
    sorted_features,
    summarize,
)
from .ingest import BuildStatus, LabeledCommit, Transition, status_transition
from .report import Explanation, explain

logger = logging.getLogger(__name__)

P, E = BuildStatus.PASS, BuildStatus.ERR
GLOBAL = "global"


class FeatureSetError(Exception):
    """No candidate feature survived support pruning."""


class Policy(enum.Enum):
    CONSERVATIVE = "conservative"
    GLOBAL_PRIORITY = "global_priority"
    LOCAL_PRIORITY = "local_priority"
    EITHER = "either"


@dataclass(frozen=True)
class PipelineConfig:
    global_support: float = 0.10
    local_support: float = 0.10
    target_error_rate: float = 0.30
    tree: TreeParams = field(default_factory=TreeParams)
    budget: int = 10
    patience: int = 2
    policy: Policy = Policy.CONSERVATIVE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["tree"] = TreeParams(**d.get("tree", {}))
        d["policy"] = Policy(d.get("policy", Policy.CONSERVATIVE.value))
        return cls(**d)


@dataclass(frozen=True)
class Model:
    tree: DecisionTree
    extractors: tuple[CodeFeature, ...]
    scope: str
    provenance: str = ""
    training_ids: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if set(self.tree.features) != set(self.extractors):
            raise ValueError("tree features must equal the model's extractor set")

    @property
    def is_global(self) -> bool:
        return self.scope == GLOBAL

    def summarize(self, commit_or_snapshot) -> RepoSummary:
        snap = getattr(commit_or_snapshot, "snapshot", commit_or_snapshot)
        return summaries_for([snap], self.extractors)[0]

    def predict(self, summary: RepoSummary) -> tuple[BuildStatus, DecisionPath]:
        return predict(self.tree, summary)

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "provenance": self.provenance,
            "extractors": [feature_to_dict(f) for f in self.extractors],
            "tree": self.tree.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        return cls(
            tree=DecisionTree.from_dict(d["tree"]),
            extractors=tuple(feature_from_dict(f) for f in d["extractors"]),
            scope=d["scope"],
            provenance=d.get("provenance", ""),
        )


@dataclass(frozen=True)
class CombinedModel:
    global_model: Model
    local_model: Model
    policy: Policy = Policy.CONSERVATIVE

    def __post_init__(self):
        if not self.global_model.is_global:
            raise ValueError("global slot holds a local model")
        if self.local_model.is_global:
            raise ValueError("local slot holds the global model")

    def predict_snapshot(self, snapshot) -> tuple[BuildStatus, Explanation]:
        return combine_predict(
            self, self.global_model.summarize(snapshot), self.local_model.summarize(snapshot)
        )


@dataclass
class MigarState:
    iteration: int
    extractors: tuple[CodeFeature, ...]
    last_accuracy: float
    candidate_queue: list[int]
    refined_on: int | None = None


# --- shared helpers ----------------------------------------------------------


def summaries_for(snapshots, extractors: Sequence[CodeFeature]) -> list[RepoSummary]:
    if not extractors:
        return [RepoSummary({}) for _ in snapshots]
    return [summarize(s, extractors) for s in snapshots]


def digest(commits: Sequence[LabeledCommit]) -> str:
    h = hashlib.sha256()
    for c in commits:
        h.update(f"{c.commit_id}:{c.status.value};".encode())
    return h.hexdigest()[:16]


def prepare(
    commits: Sequence[LabeledCommit], extractors: Sequence[CodeFeature], target_error_rate: float
) -> tuple[list[LabeledSummary], list[LabeledSummary]]:
    """Summaries with relabelled statuses, before and after undersampling."""
    sums = summaries_for([c.snapshot for c in commits], extractors)
    seq = [LabeledSummary(c.index, s, c.status) for c, s in zip(commits, sums)]
    relabeled = abr_relabel(seq)
    return relabeled, undersample(relabeled, target_error_rate).samples


def constant_model(commits: Sequence[LabeledCommit], scope: str) -> Model:
    """A featureless model predicting the majority label of ``commits``."""
    n_err = sum(c.status is E for c in commits)
    counts = (len(commits) - n_err, n_err)
    label = majority(*counts) if commits else P
    tree = DecisionTree(Leaf(label, counts), ())
    return Model(tree, (), scope, digest(commits), tuple(c.commit_id for c in commits))


# --- global rules -------------------------------------------------------------


def train_global(
    training_repos: Sequence[Sequence[LabeledCommit]],
    support_threshold: float = 0.10,
    tree_params: TreeParams | None = None,
    target_error_rate: float = 0.30,
) -> Model:
    """Fit one tree on magic features shared widely enough across all repositories.

    Support is measured against the total number of commits over every
    repository; relabelling and undersampling run per repository before the
    samples are pooled.
    """
    repos = [list(r) for r in training_repos if r]
    commits = [c for r in repos for c in r]
    if not repos or len(commits) < 2:
        raise ValueError("global training needs at least one repository and two commits")
    sup = candidate_support([c.snapshot for c in commits])
    extractors = sorted_features(f for f, s in sup.items() if s >= support_threshold)
    if not extractors:
        raise FeatureSetError(
            f"no magic feature reaches support {support_threshold:.2f}; try a lower threshold"
        )
    samples = []
    for repo in repos:
        _, kept = prepare(repo, extractors, target_error_rate)
        samples += [(s.summary, s.status) for s in kept]
    tree = fit(samples, tree_params)
    return Model(tree, tuple(extractors), GLOBAL, digest(commits), tuple(c.commit_id for c in commits))


# --- local rules --------------------------------------------------------------


def rank_misclassified(
    commits: Sequence[LabeledCommit],
    predictions: Sequence[BuildStatus],
    actual: Sequence[BuildStatus] | None = None,
) -> list[int]:
    """Status-flip commits next to a misclassification, smallest commit first.

    Index ``t+1`` is kept when the transition ``t -> t+1`` is PE or EP and the
    model got ``t`` or ``t+1`` wrong.  Ties in commit size go to the lower index.
    """
    if len(commits) != len(predictions):
        raise ValueError("one prediction per commit is required")
    actual = [c.status for c in commits] if actual is None else list(actual)
    wrong = [p is not a for p, a in zip(predictions, actual)]
    keep = []
    for t1 in range(1, len(commits)):
        tr = status_transition(actual[t1 - 1], actual[t1])
        if tr in (Transition.PE, Transition.EP) and (wrong[t1] or wrong[t1 - 1]):
            keep.append(t1)
    return sorted(keep, key=lambda i: (commits[i].commit_size, i))


def _fit_local(commits, extractors, params, target_error_rate):
    if not extractors:
        return DecisionTree(Leaf(majority(*_counts(commits)), _counts(commits)), ())
    _, kept = prepare(commits, extractors, target_error_rate)
    return fit([(s.summary, s.status) for s in kept], params)


def _counts(commits):
    n_err = sum(c.status is E for c in commits)
    return (len(commits) - n_err, n_err)


def _training_predictions(tree, commits, extractors):
    sums = summaries_for([c.snapshot for c in commits], extractors)
    return [predict(tree, s)[0] for s in sums]


def migar_refine(
    repo_commits: Sequence[LabeledCommit],
    initial_extractors: Sequence[CodeFeature],
    global_model: Model | None = None,
    budget: int = 10,
    tree_params: TreeParams | None = None,
    target_error_rate: float = 0.30,
    patience: int = 2,
    scope: str = "local",
    trace: list | None = None,
) -> Model:
    """Grow the extractor set with diff features until the local model stops improving.

    Each refinement takes the best-ranked status flip the model misclassifies
    (skipping flips the global model already gets right) and adds every diff
    feature between that commit and its predecessor.  Flips that yield no new
    feature are skipped without spending budget.  Accuracy is measured against
    the recorded build statuses.  The best model seen is returned.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    commits = list(repo_commits)
    actual = [c.status for c in commits]
    extractors = sorted_features(initial_extractors)
    oracle = None
    if global_model is not None and commits:
        oracle = _training_predictions(global_model.tree, commits, global_model.extractors)

    tried: set[int] = set()
    best = None
    stall = 0
    last_acc = -1.0
    iteration = 0
    while True:
        tree = _fit_local(commits, extractors, tree_params, target_error_rate)
        preds = _training_predictions(tree, commits, extractors)
        acc = sum(p is a for p, a in zip(preds, actual)) / len(commits) if commits else 1.0
        if best is None or acc > best[0]:
            best = (acc, tree, tuple(extractors))
        stall = stall + 1 if acc <= last_acc else 0
        last_acc = max(last_acc, acc)

        queue = [] if acc == 1.0 else rank_misclassified(commits, preds)
        if oracle is not None:
            queue = [
                i for i in queue
                if any(preds[j] is not actual[j] and oracle[j] is not actual[j] for j in (i - 1, i))
            ]
        queue = [i for i in queue if i not in tried]
        state = MigarState(iteration, tuple(extractors), acc, list(queue))
        if trace is not None:
            trace.append(state)
        if acc == 1.0 or stall >= patience or iteration >= budget:
            break

        new: set[CodeFeature] = set()
        while queue and not new:
            cand = queue.pop(0)
            tried.add(cand)
            new = extract_diff_features(commits[cand - 1].snapshot, commits[cand].snapshot)
            new -= set(extractors)
            state.refined_on = cand
        if not new:
            break
        extractors = sorted_features(set(extractors) | new)
        iteration += 1

    acc, tree, feats = best
    return Model(tree, feats, scope, digest(commits), tuple(c.commit_id for c in commits))


def train_local(
    repo_commits: Sequence[LabeledCommit],
    global_model: Model | None = None,
    config: PipelineConfig | None = None,
    repo_id: str = "user",
    trace: list | None = None,
) -> Model:
    """Local magic features (support within this repository only), then refinement."""
    config = config or PipelineConfig()
    commits = list(repo_commits)
    if not commits:
        raise ValueError("local training needs at least one commit")
    sup = candidate_support([c.snapshot for c in commits])
    initial = [f for f, s in sup.items() if s >= config.local_support]
    return migar_refine(
        commits,
        initial,
        global_model,
        budget=config.budget,
        tree_params=config.tree,
        target_error_rate=config.target_error_rate,
        patience=config.patience,
        scope=f"local:{repo_id}",
        trace=trace,
    )


def train_combined(
    user_commits: Sequence[LabeledCommit],
    other_repos: Sequence[Sequence[LabeledCommit]] = (),
    config: PipelineConfig | None = None,
    repo_id: str = "user",
) -> CombinedModel:
    """Both models for one user repository; a featureless global model stands in
    when no magic feature clears the support threshold."""
    config = config or PipelineConfig()
    repos = [list(user_commits)] + [list(r) for r in other_repos if r]
    try:
        g = train_global(repos, config.global_support, config.tree, config.target_error_rate)
    except FeatureSetError as exc:
        logger.info("global model falls back to majority label: %s", exc)
        g = constant_model([c for r in repos for c in r], GLOBAL)
    local = train_local(user_commits, g, config, repo_id)
    return CombinedModel(g, local, config.policy)


# --- combination ---------------------------------------------------------------


def combine_predict(
    cm: CombinedModel, summary_global: RepoSummary, summary_local: RepoSummary
) -> tuple[BuildStatus, Explanation]:
    g_label, g_path = cm.global_model.predict(summary_global)
    l_label, l_path = cm.local_model.predict(summary_local)
    if g_label is l_label:
        final = g_label
    elif cm.policy is Policy.CONSERVATIVE:
        final = P
    elif cm.policy is Policy.EITHER:
        final = E
    elif cm.policy is Policy.GLOBAL_PRIORITY:
        final = g_label
    else:
        final = l_label
    contributions = []
    if final is E:
        if g_label is E:
            contributions.append(("global", g_path, summary_global))
        if l_label is E:
            contributions.append(("local", l_path, summary_local))
    return final, explain(final, contributions)


# --- rolling evaluation ---------------------------------------------------------


@dataclass
class StepRecord:
    train_until: int
    predicted_index: int
    actual: BuildStatus
    predicted: BuildStatus
    train_digest: str
    train_max_index: int
    keywords: list[str] = field(default_factory=list)
    explanation: Explanation | None = field(default=None, repr=False)
    train_seconds: float = 0.0


@dataclass
class MetricsReport:
    name: str = ""
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    steps: list[StepRecord] = field(default_factory=list)
    train_seconds: float = 0.0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    def record(self, step: StepRecord) -> None:
        self.steps.append(step)
        if step.actual is E:
            if step.predicted is E:
                self.tp += 1
            else:
                self.fn += 1
        elif step.predicted is E:
            self.fp += 1
        else:
            self.tn += 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "train_seconds": round(self.train_seconds, 6),
            "steps": [
                {
                    "train_until": s.train_until,
                    "predicted_index": s.predicted_index,
                    "actual": s.actual.value,
                    "predicted": s.predicted.value,
                    "train_digest": s.train_digest,
                    "keywords": s.keywords,
                }
                for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _fmt_ratio(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


TABLE_COLUMNS = ("Repository", "Accuracy", "Precision", "Recall", "TP", "TN", "FP", "FN")


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Per-repository rows plus an average row; '-' where a ratio has no denominator."""
    rows = [
        [
            r.name,
            f"{100 * r.accuracy:.0f}%",
            _fmt_ratio(r.precision),
            _fmt_ratio(r.recall),
            str(r.tp),
            str(r.tn),
            str(r.fp),
            str(r.fn),
        ]
        for r in reports
    ]
    if reports:
        n = len(reports)
        precs = [r.precision for r in reports if r.precision is not None]
        recs = [r.recall for r in reports if r.recall is not None]
        rows.append(
            [
                "Average",
                f"{100 * sum(r.accuracy for r in reports) / n:.1f}%",
                _fmt_ratio(sum(precs) / len(precs) if precs else None),
                _fmt_ratio(sum(recs) / len(recs) if recs else None),
                f"{sum(r.tp for r in reports) / n:.3f}",
                f"{sum(r.tn for r in reports) / n:.3f}",
                f"{sum(r.fp for r in reports) / n:.3f}",
                f"{sum(r.fn for r in reports) / n:.3f}",
            ]
        )
    widths = [max(len(str(x)) for x in col) for col in zip(TABLE_COLUMNS, *rows)]
    fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    out = [fmt(TABLE_COLUMNS), "-+-".join("-" * w for w in widths)]
    out += [fmt(r) for r in rows]
    return "\n".join(out)


def evaluate_rolling(
    repo_commits: Sequence[LabeledCommit],
    config: PipelineConfig | None = None,
    other_repos: Sequence[Sequence[LabeledCommit]] = (),
    name: str = "",
) -> MetricsReport:
    """Retrain-then-predict over the second half of a history.

    With commits ``0..t``, models trained on ``0..k`` predict commit ``k+1`` for
    ``k`` from ``t // 2`` to ``t - 1``.  Other repositories contribute only
    their first ``k + 1`` commits to the global model at step ``k``.
    """
    config = config or PipelineConfig()
    commits = list(repo_commits)
    if len(commits) < 4:
        raise ValueError(f"rolling evaluation needs at least 4 commits, got {len(commits)}")
    t = len(commits) - 1
    report = MetricsReport(name=name)
    for k in range(t // 2, t):
        train = commits[: k + 1]
        others = [list(r)[: k + 1] for r in other_repos]
        start = time.perf_counter()
        cm = train_combined(train, others, config, name or "user")
        elapsed = time.perf_counter() - start
        report.train_seconds += elapsed
        target = commits[k + 1]
        label, expl = cm.predict_snapshot(target.snapshot)
        report.record(
            StepRecord(
                train_until=k,
                predicted_index=target.index,
                actual=target.status,
                predicted=label,
                train_digest=digest(train),
                train_max_index=max(c.index for c in train),
                keywords=expl.keywords,
                explanation=expl,
                train_seconds=elapsed,
            )
        )
    return report


@dataclass(frozen=True)
class TimingRow:
    repos: int
    commits_per_repo: int
    total_commits: int
    seconds: float


def time_training(
    repos: Sequence[Sequence[LabeledCommit]],
    sizes: Sequence[tuple[int, int]],
    config: PipelineConfig | None = None,
) -> list[TimingRow]:
    """Wall time to train a global model plus one local model per repository.

    Each size ``(r, c)`` uses the first ``r`` repositories cut to their first
    ``c`` commits.
    """
    config = config or PipelineConfig()
    rows = []
    for n_repos, n_commits in sizes:
        if n_repos > len(repos):
            raise ValueError(f"size {n_repos}x{n_commits} needs {n_repos} repositories, have {len(repos)}")
        subset = [list(r)[:n_commits] for r in repos[:n_repos]]
        start = time.perf_counter()
        try:
            g = train_global(subset, config.global_support, config.tree, config.target_error_rate)
        except FeatureSetError:
            g = constant_model([c for r in subset for c in r], GLOBAL)
        for i, r in enumerate(subset):
            train_local(r, g, config, f"r{i}")
        elapsed = time.perf_counter() - start
        rows.append(TimingRow(n_repos, n_commits, sum(len(r) for r in subset), elapsed))
    return rows


def format_timing(rows: Sequence[TimingRow]) -> str:
    head = ("Repositories", "Commits/repo", "Total commits", "Seconds")
    body = [(str(r.repos), str(r.commits_per_repo), str(r.total_commits), f"{r.seconds:.3f}") for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(b) for b in body])
