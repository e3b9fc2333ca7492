"""Greedy Gini decision trees whose predictions carry their decision path."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import CodeFeature, RepoSummary, feature_from_dict, feature_to_dict, sorted_features
from .ingest import BuildStatus

P, E = BuildStatus.PASS, BuildStatus.ERR

TREE_FORMAT = 1
# Two impurities closer than this are treated as equal, so tie-breaking stays deterministic.
_TIE_EPS = 1e-12


class TreeError(Exception):
    pass


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 8
    min_leaf: int = 2
    min_impurity_decrease: float = 0.0


@dataclass(frozen=True)
class Leaf:
    label: BuildStatus
    counts: tuple[int, int]  # (pass, err)


@dataclass(frozen=True)
class Internal:
    feature: CodeFeature
    threshold: float
    left: "Node"  # value <= threshold
    right: "Node"  # value > threshold
    counts: tuple[int, int]


Node = Leaf | Internal


@dataclass(frozen=True)
class PathStep:
    feature: CodeFeature
    threshold: float
    branch: str  # "le" or "gt"
    value: float

    def holds(self) -> bool:
        return (self.value <= self.threshold) == (self.branch == "le")


@dataclass(frozen=True)
class DecisionPath:
    steps: tuple[PathStep, ...]
    label: BuildStatus


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    features: tuple[CodeFeature, ...]
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def depth(self) -> int:
        def d(node):
            return 0 if isinstance(node, Leaf) else 1 + max(d(node.left), d(node.right))

        return d(self.root)

    def used_features(self) -> list[CodeFeature]:
        out, stack = set(), [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Internal):
                out.add(node.feature)
                stack += [node.left, node.right]
        return sorted_features(out)

    def predict(self, summary: RepoSummary) -> tuple[BuildStatus, DecisionPath]:
        return predict(self, summary)

    def to_dict(self) -> dict:
        return {
            "format_version": TREE_FORMAT,
            "features": [feature_to_dict(f) for f in self.features],
            "params": asdict(self.params),
            "root": _node_to_dict(self.root),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecisionTree":
        if d.get("format_version") != TREE_FORMAT:
            raise TreeError(f"unsupported tree format {d.get('format_version')!r}")
        features = tuple(feature_from_dict(f) for f in d["features"])
        tree = cls(_node_from_dict(d["root"]), features, TreeParams(**d["params"]))
        stray = set(tree.used_features()) - set(features)
        if stray:
            raise TreeError(f"tree splits on undeclared features: {sorted(map(str, stray))}")
        return tree

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))


def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.label.value, "counts": list(node.counts)}
    return {
        "feature": feature_to_dict(node.feature),
        # repr round-trips floats exactly
        "threshold": repr(node.threshold),
        "counts": list(node.counts),
        "le": _node_to_dict(node.left),
        "gt": _node_to_dict(node.right),
    }


def _node_from_dict(d: Mapping) -> Node:
    counts = tuple(int(c) for c in d["counts"])
    if "leaf" in d:
        return Leaf(BuildStatus(d["leaf"]), counts)
    return Internal(
        feature_from_dict(d["feature"]),
        float(d["threshold"]),
        _node_from_dict(d["le"]),
        _node_from_dict(d["gt"]),
        counts,
    )


def gini(n_pass: int, n_err: int) -> float:
    n = n_pass + n_err
    if n == 0:
        return 0.0
    p = n_err / n
    return 2.0 * p * (1.0 - p)


def majority(n_pass: int, n_err: int) -> BuildStatus:
    """Majority label; errors win ties."""
    return E if n_err >= n_pass else P


def _best_split(X: np.ndarray, y: np.ndarray, order: Sequence[int]):
    """Best (weighted child impurity, column, threshold) over all midpoint splits.

    Columns are visited in feature-name order and thresholds in increasing
    order, and only strictly better candidates replace the incumbent.
    """
    n = len(y)
    best = None
    for col in order:
        x = X[:, col]
        idx = np.argsort(x, kind="stable")
        xs, ys = x[idx], y[idx]
        distinct = np.nonzero(xs[1:] != xs[:-1])[0]
        if distinct.size == 0:
            continue
        err_left = np.cumsum(ys)[distinct]
        n_left = distinct + 1
        n_right = n - n_left
        err_right = ys.sum() - err_left
        p_l = err_left / n_left
        p_r = err_right / n_right
        weighted = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
        k = int(np.argmin(weighted))
        score = float(weighted[k])
        if best is None or score < best[0] - _TIE_EPS:
            cut = distinct[k]
            threshold = (float(xs[cut]) + float(xs[cut + 1])) / 2.0
            best = (score, col, threshold)
    return best


def fit(
    samples: Sequence[tuple[RepoSummary, BuildStatus]], params: TreeParams | None = None
) -> DecisionTree:
    """Grow a tree top-down, each node taking the split with the lowest weighted Gini.

    A node becomes a leaf when it is pure, at ``max_depth``, holds fewer than
    ``min_leaf`` samples, has no feature that separates its samples, or its best
    split lowers impurity by less than ``min_impurity_decrease``.
    """
    params = params or TreeParams()
    if not samples:
        raise TreeError("cannot fit a tree on zero samples")
    domain = set(samples[0][0].entries)
    for s, _ in samples[1:]:
        if set(s.entries) != domain:
            raise TreeError("all summaries must be built over the same extractor set")
    features = tuple(sorted_features(domain))
    X = np.array([[s.value(f) for f in features] for s, _ in samples], dtype=float).reshape(
        len(samples), len(features)
    )
    y = np.array([lbl is E for _, lbl in samples], dtype=np.int64)
    order = list(range(len(features)))

    def grow(rows: np.ndarray, depth: int) -> Node:
        ys = y[rows]
        n_err = int(ys.sum())
        n_pass = len(rows) - n_err
        counts = (n_pass, n_err)
        leaf = Leaf(majority(n_pass, n_err), counts)
        if n_err == 0 or n_pass == 0 or depth >= params.max_depth or len(rows) < params.min_leaf:
            return leaf
        best = _best_split(X[rows], ys, order)
        if best is None:
            return leaf
        score, col, threshold = best
        if gini(n_pass, n_err) - score < params.min_impurity_decrease - _TIE_EPS:
            return leaf
        go_left = X[rows, col] <= threshold
        return Internal(
            features[col],
            threshold,
            grow(rows[go_left], depth + 1),
            grow(rows[~go_left], depth + 1),
            counts,
        )

    return DecisionTree(grow(np.arange(len(samples)), 0), features, params)


def predict(tree: DecisionTree, summary: RepoSummary) -> tuple[BuildStatus, DecisionPath]:
    for f in tree.features:
        if f not in summary:
            raise TreeError(f"summary lacks feature {f.name!r} required by the tree")
    node, steps = tree.root, []
    while isinstance(node, Internal):
        v = summary.value(node.feature)
        if v <= node.threshold:
            steps.append(PathStep(node.feature, node.threshold, "le", v))
            node = node.left
        else:
            steps.append(PathStep(node.feature, node.threshold, "gt", v))
            node = node.right
    return node.label, DecisionPath(tuple(steps), node.label)


def path_keywords(path: DecisionPath) -> list[str]:
    """Feature names along the path, first occurrence order, without repeats."""
    return list(dict.fromkeys(step.feature.name for step in path.steps))


def training_accuracy(tree: DecisionTree, samples: Sequence[tuple[RepoSummary, BuildStatus]]) -> float:
    if not samples:
        return 1.0
    return sum(predict(tree, s)[0] is lbl for s, lbl in samples) / len(samples)


def dump_text(tree: DecisionTree, value_text=None) -> str:
    """Indented if/else rendering with thresholds and leaf counts."""
    lines: list[str] = []

    def walk(node: Node, indent: str):
        if isinstance(node, Leaf):
            lines.append(f"{indent}{'Err' if node.label is E else 'Pass'} (pass={node.counts[0]}, err={node.counts[1]})")
            return
        t = value_text(node.feature, node.threshold) if value_text else f"{node.threshold:g}"
        lines.append(f"{indent}if {node.feature.name} <= {t}:")
        walk(node.left, indent + "    ")
        lines.append(f"{indent}else:  # {node.feature.name} > {t}")
        walk(node.right, indent + "    ")

    walk(tree.root, "")
    return "\n".join(lines)
