"""Run configuration: one TOML document covering ingestion, training and combination."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dtree import TreeParams
from .ingest import DEFAULT_POLICY, FilterPolicy
from .pipeline import PipelineConfig, Policy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    filter_patterns: tuple[str, ...] = DEFAULT_POLICY.patterns
    global_support: float = 0.10
    local_support: float = 0.10
    target_error_rate: float = 0.30
    budget: int = 10
    patience: int = 2
    policy: str = Policy.CONSERVATIVE.value
    seed: int = 0
    tree: TreeParams = field(default_factory=TreeParams)

    def __post_init__(self):
        for name in ("global_support", "local_support", "target_error_rate"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v!r}")
        if self.target_error_rate >= 1.0:
            raise ConfigError("target_error_rate must be below 1")
        if self.budget < 0 or self.patience < 1:
            raise ConfigError("budget must be >= 0 and patience >= 1")
        if self.tree.max_depth < 0 or self.tree.min_leaf < 1:
            raise ConfigError("tree.max_depth must be >= 0 and tree.min_leaf >= 1")
        try:
            Policy(self.policy)
        except ValueError:
            names = ", ".join(p.value for p in Policy)
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {names}") from None
        if not self.filter_patterns:
            raise ConfigError("filter_patterns must not be empty")

    @property
    def filter_policy(self) -> FilterPolicy:
        return FilterPolicy(tuple(self.filter_patterns))

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            global_support=self.global_support,
            local_support=self.local_support,
            target_error_rate=self.target_error_rate,
            tree=self.tree,
            budget=self.budget,
            patience=self.patience,
            policy=Policy(self.policy),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_patterns"] = list(self.filter_patterns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        tree = d.pop("tree", {})
        tree_known = {f.name for f in fields(TreeParams)}
        if set(tree) - tree_known:
            raise ConfigError(f"unknown tree key(s): {', '.join(sorted(set(tree) - tree_known))}")
        if "filter_patterns" in d:
            d["filter_patterns"] = tuple(d["filter_patterns"])
        return cls(tree=TreeParams(**tree), **d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_toml(self) -> str:
        d = self.to_dict()
        tree = d.pop("tree")
        lines = [f"{k} = {_toml_value(v)}" for k, v in d.items()]
        lines += ["", "[tree]"]
        lines += [f"{k} = {_toml_value(v)}" for k, v in tree.items()]
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        # repr keeps floats exact and always carries a decimal point or exponent
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v).__name__} as TOML")


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))
