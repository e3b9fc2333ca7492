"""Model bundles: one versioned JSON document holding every trained model."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig
from .dtree import TreeError
from .ingest import LabeledCommit, load_repository
from .pipeline import GLOBAL, CombinedModel, FeatureSetError, Model, Policy, constant_model, train_global, train_local

BUNDLE_FORMAT = 1


class BundleError(Exception):
    """A bundle file that cannot be read back."""


@dataclass(frozen=True)
class Bundle:
    config: RunConfig
    global_model: Model
    local_models: dict[str, Model]

    def combined(self, repo_id: str | None = None) -> CombinedModel:
        if repo_id is None:
            if len(self.local_models) != 1:
                raise BundleError(
                    "bundle holds local models for "
                    f"{', '.join(sorted(self.local_models)) or 'no repository'}; choose one with --repo"
                )
            repo_id = next(iter(self.local_models))
        if repo_id not in self.local_models:
            raise BundleError(f"no local model for repository {repo_id!r}")
        return CombinedModel(self.global_model, self.local_models[repo_id], Policy(self.config.policy))

    def to_dict(self) -> dict:
        return {
            "format_version": BUNDLE_FORMAT,
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "global": self.global_model.to_dict(),
            "local": {rid: m.to_dict() for rid, m in sorted(self.local_models.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Bundle":
        if not isinstance(d, dict):
            raise BundleError("bundle must be a JSON object")
        if d.get("format_version") != BUNDLE_FORMAT:
            raise BundleError(f"unsupported bundle format {d.get('format_version')!r}")
        try:
            config = RunConfig.from_dict(d["config"])
            if d.get("config_digest") != config.digest():
                raise BundleError("config digest does not match the stored config")
            g = Model.from_dict(d["global"])
            local = {rid: Model.from_dict(m) for rid, m in d["local"].items()}
        except KeyError as exc:
            raise BundleError(f"bundle lacks field {exc.args[0]!r}") from None
        except (ConfigError, TreeError, TypeError, ValueError) as exc:
            # Model rejects trees whose features differ from its extractor set
            raise BundleError(f"invalid bundle content: {exc}") from None
        if not g.is_global:
            raise BundleError("global slot holds a non-global model")
        return cls(config, g, local)


def save_bundle(bundle: Bundle, path: str | Path) -> None:
    Path(path).write_text(bundle.to_json(), encoding="utf-8")


def load_bundle(path: str | Path) -> Bundle:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleError(f"cannot read bundle {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    return Bundle.from_dict(data)


def discover_repositories(paths: Sequence[str | Path]) -> list[tuple[str, Path]]:
    """Repository directories named by ``paths``.

    A path holding a manifest is one repository; otherwise each immediate
    subdirectory holding a manifest counts (a generated corpus directory).
    """
    out: list[tuple[str, Path]] = []
    for p in map(Path, paths):
        if _has_manifest(p):
            out.append((p.resolve().name, p))
            continue
        subs = sorted(d for d in p.iterdir() if d.is_dir() and _has_manifest(d)) if p.is_dir() else []
        if not subs:
            raise FileNotFoundError(f"{p} holds no manifest.csv or manifest.jsonl")
        out += [(d.name, d) for d in subs]
    names = [n for n, _ in out]
    if len(names) != len(set(names)):
        raise ValueError("repository names must be unique across training paths")
    return out


def _has_manifest(p: Path) -> bool:
    return (p / "manifest.csv").is_file() or (p / "manifest.jsonl").is_file()


def train_bundle(repos: Sequence[tuple[str, Sequence[LabeledCommit]]], config: RunConfig) -> Bundle:
    """One global model over every repository and one refined local model each."""
    if not repos:
        raise ValueError("training needs at least one repository")
    pc = config.pipeline()
    histories = [list(h) for _, h in repos]
    try:
        g = train_global(histories, pc.global_support, pc.tree, pc.target_error_rate)
    except FeatureSetError:
        g = constant_model([c for h in histories for c in h], GLOBAL)
    local = {rid: train_local(h, g, pc, rid) for rid, h in zip((r for r, _ in repos), histories)}
    return Bundle(config, g, local)


def load_training_repos(paths: Sequence[str | Path], config: RunConfig) -> list[tuple[str, list[LabeledCommit]]]:
    return [
        (rid, load_repository(d, config.filter_policy)) for rid, d in discover_repositories(paths)
    ]
