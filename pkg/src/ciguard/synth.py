"""Synthetic commit histories with planted configuration rules and known causes.

Every repository is a small Ruby-flavoured project.  Rules say which states
break the build; each commit makes a few line edits, sometimes introducing or
fixing a violation.  A ground-truth log records for every erroring commit the
violated rule and the responsible lines, or marks it as an impure failure.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .ingest import (
    DEFAULT_POLICY,
    FilterPolicy,
    LabeledCommit,
    ManifestRow,
    RawStatus,
    build_history,
    filter_repository,
    write_manifest,
)
from .report import keyword_tokens

VERSION_EQUALITY = "version_equality"
VERSION_BOUND = "version_bound"
FORBIDDEN_TOKEN = "forbidden_token"
RENAME_PAIR = "rename_pair"

_WORDS = (
    "alpha", "beta", "gamma", "delta", "omega", "kappa", "sigma", "theta", "lambda",
    "orbit", "ember", "quartz", "falcon", "harbor", "meadow", "cinder", "lumen",
)
_CALLS = ("render", "fetch", "notify", "persist", "index", "sync", "audit", "queue")


class CorpusSpecError(ValueError):
    pass


@dataclass(frozen=True)
class RuleSpec:
    """One planted rule.

    ``version_equality``: two keywords' constants must match.
    ``version_bound``: the keyword's constant must be at least ``minimum``.
    ``forbidden_token``: the token must not appear.
    ``rename_pair``: from commit ``cutover`` on, ``library`` is at 2.0 and using
    ``keywords[0]`` instead of ``keywords[1]`` errors.
    """

    kind: str
    keywords: tuple[str, ...]
    scope: str = "global"
    minimum: str = ""
    cutover: int = 0
    library: str = ""
    repos: tuple[int, ...] = ()  # empty: every repository

    @classmethod
    def version_equality(cls, k1: str, k2: str, scope: str = "global", repos=()) -> "RuleSpec":
        return cls(VERSION_EQUALITY, (k1, k2), scope, repos=tuple(repos))

    @classmethod
    def version_bound(cls, k: str, minimum: str, scope: str = "global", repos=()) -> "RuleSpec":
        return cls(VERSION_BOUND, (k,), scope, minimum=minimum, repos=tuple(repos))

    @classmethod
    def forbidden_token(cls, k: str, scope: str = "global", repos=()) -> "RuleSpec":
        return cls(FORBIDDEN_TOKEN, (k,), scope, repos=tuple(repos))

    @classmethod
    def rename_pair(
        cls, k1: str, k2: str, cutover: int, library: str = "", scope: str = "local", repos=()
    ) -> "RuleSpec":
        return cls(
            RENAME_PAIR, (k1, k2), scope, cutover=cutover,
            library=library or k1[:1].upper() + k1[1:], repos=tuple(repos),
        )

    def applies_to(self, repo_index: int) -> bool:
        return not self.repos or repo_index in self.repos

    @property
    def responsible_tokens(self) -> tuple[str, ...]:
        return self.keywords + ((self.library,) if self.library else ())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["keywords"] = list(self.keywords)
        d["repos"] = list(self.repos)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSpec":
        d = dict(d)
        d["keywords"] = tuple(d["keywords"])
        d["repos"] = tuple(d.get("repos", ()))
        if d["kind"] == RENAME_PAIR and not d.get("library"):
            k1 = d["keywords"][0]
            d["library"] = k1[:1].upper() + k1[1:]
        return cls(**d)


def default_rules() -> list[RuleSpec]:
    return [
        RuleSpec.version_equality("MAJOR", "gem_major"),
        RuleSpec.version_bound("libA", "2.0"),
        RuleSpec.rename_pair("tweet", "sendTweet", cutover=20),
    ]


@dataclass(frozen=True)
class CorpusSpec:
    repo_count: int = 10
    commits_per_repo: int = 50
    rules: tuple[RuleSpec, ...] = field(default_factory=lambda: tuple(default_rules()))
    violation_rate: float = 0.2
    impure_error_rate: float = 0.05
    seed: int = 0
    test_failure_rate: float = 0.05
    # share of benign edits that land in admitted source files rather than docs
    code_edit_rate: float = 0.5

    def validate(self) -> None:
        if self.repo_count < 1 or self.commits_per_repo < 1:
            raise CorpusSpecError("need at least one repository with one commit")
        for name in ("violation_rate", "impure_error_rate", "test_failure_rate", "code_edit_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CorpusSpecError(f"{name} must lie in [0, 1], got {v}")
        bounded = {r.keywords[0] for r in self.rules if r.kind == VERSION_BOUND}
        forbidden = {r.keywords[0] for r in self.rules if r.kind == FORBIDDEN_TOKEN}
        clash = bounded & forbidden
        if clash:
            raise CorpusSpecError(
                f"keyword(s) {sorted(clash)} are both version-bounded and forbidden"
            )
        for r in self.rules:
            if r.kind not in (VERSION_EQUALITY, VERSION_BOUND, FORBIDDEN_TOKEN, RENAME_PAIR):
                raise CorpusSpecError(f"unknown rule kind {r.kind!r}")
            if not all(k and k.replace("_", "a").isalnum() for k in r.keywords):
                raise CorpusSpecError(f"rule keywords must be identifier tokens: {r.keywords}")
            if r.kind == RENAME_PAIR and not 0 < r.cutover < self.commits_per_repo:
                raise CorpusSpecError(
                    f"cutover {r.cutover} outside history of {self.commits_per_repo} commits"
                )
            if r.kind == VERSION_BOUND and not r.minimum:
                raise CorpusSpecError(f"version bound on {r.keywords[0]} lacks a minimum")
            if r.scope not in ("global", "local"):
                raise CorpusSpecError(f"scope must be global or local, got {r.scope!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rules"] = [r.to_dict() for r in self.rules]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        if "rules" in d:
            d["rules"] = tuple(RuleSpec.from_dict(r) for r in d["rules"])
        return cls(**d)


@dataclass
class SynthCommit:
    commit_id: str
    build_number: int
    timestamp: str
    raw_status: RawStatus
    files: dict[str, str | bytes] = field(repr=False)


@dataclass
class SynthRepo:
    name: str
    commits: list[SynthCommit]
    truth: list[dict]

    def history(self, policy: FilterPolicy = DEFAULT_POLICY) -> list[LabeledCommit]:
        return build_history(
            (c.commit_id, c.raw_status, filter_repository(c.files, policy)) for c in self.commits
        )

    def manifest(self) -> list[ManifestRow]:
        return [ManifestRow(c.build_number, c.commit_id, c.raw_status, c.timestamp) for c in self.commits]


@dataclass
class Corpus:
    spec: CorpusSpec
    repos: list[SynthRepo]

    @property
    def truth(self) -> dict[str, list[dict]]:
        return {r.name: r.truth for r in self.repos}


# --- per-repository state ------------------------------------------------------


class _RepoState:
    """Mutable file model for one synthetic repository."""

    def __init__(self, name: str, rules: Sequence[RuleSpec], rng: random.Random):
        self.name = name
        self.rng = rng
        self.rules = list(rules)
        self.consts: dict[str, str] = {"MAJOR": "3", "MINOR": "4", "PATCH": "1"}
        self.const_file: dict[str, str] = {}
        self.gem_consts: dict[str, str] = {}
        self.tokens: dict[str, str] = {}  # forbidden-token slot -> current token
        self.calls: dict[str, str] = {}  # rename rule -> current call name
        self.libs: dict[str, str] = {}
        self.body = [f"{rng.choice(_CALLS)}_{rng.choice(_WORDS)}(payload)" for _ in range(6)]
        self.notes: list[str] = []
        self.violations: dict[int, RuleSpec] = {}
        for r in self.rules:
            if r.kind == VERSION_EQUALITY:
                for k in r.keywords:
                    self.consts.setdefault(k, "3")
            elif r.kind == VERSION_BOUND:
                self.gem_consts[r.keywords[0]] = self._above(r.minimum)
            elif r.kind == FORBIDDEN_TOKEN:
                self.tokens[r.keywords[0]] = f"stable_{r.keywords[0]}"
            elif r.kind == RENAME_PAIR:
                self.calls[r.keywords[0]] = r.keywords[0]
                self.libs[r.library] = "1.0"

    def _above(self, minimum: str) -> str:
        major = int(minimum.split(".")[0])
        return f"{major + self.rng.randint(0, 1)}.{self.rng.randint(0, 9)}"

    def _below(self, minimum: str) -> str:
        major = int(minimum.split(".")[0])
        return f"{max(major - 1, 0)}.{self.rng.randint(0, 9)}"

    # -- rendering

    def files(self) -> dict[str, str | bytes]:
        vr = ["module Version"]
        for k in ("MAJOR", "MINOR", "PATCH"):
            vr.append(f"  {k} = {self.consts[k]}")
        vr.append("end")
        spec = [
            "Gem::Specification.new do |s|",
            f'  s.name = "{self.name}"',
            '  s.add_runtime_dependency "rails", ">= 4.0"',
        ]
        for k, v in self.consts.items():
            if k not in ("MAJOR", "MINOR", "PATCH"):
                spec.append(f"  {k} = {v}")
        spec.append("end")
        gemfile = ['source "https://rubygems.org"', "gemspec"]
        gemfile += [f"gem '{k}', '~> {v}'" for k, v in self.gem_consts.items()]
        app = [f"import {lib} V{v}" for lib, v in self.libs.items()]
        app += ["", "payload = build_payload()"]
        app += [f"{call}(payload)" for call in self.calls.values()]
        app += self.body
        backend = [f"use_backend {tok}" for tok in self.tokens.values()] or ["use_backend default"]
        travis = ["language: ruby", "rvm:", "  - 2.3", "script: bundle exec rake"]
        return {
            f"lib/{self.name}/version.rb": "\n".join(vr) + "\n",
            f"{self.name}.gemspec": "\n".join(spec) + "\n",
            "Gemfile": "\n".join(gemfile) + "\n",
            f"lib/{self.name}/app.rb": "\n".join(app) + "\n",
            f"lib/{self.name}/backend.rb": "\n".join(backend) + "\n",
            ".travis.yml": "\n".join(travis) + "\n",
            "README.md": "\n".join([f"# {self.name}", "", "Synthetic repository.", ""] + self.notes) + "\n",
            "data/sample.csv": "a,b\n1,2\n",
            "logo.png": b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR",
        }

    def lines_of(self, path: str, needle: str) -> list[int]:
        text = self.files()[path]
        assert isinstance(text, str)
        return [i for i, ln in enumerate(text.splitlines(), 1) if needle in ln]

    # -- edits

    def benign_edit(self, code_rate: float = 1.0) -> None:
        rng = self.rng
        if rng.random() >= code_rate:
            self.notes.append(f"- {rng.choice(_WORDS)} {rng.choice(_WORDS)}")
            del self.notes[:-8]
            return
        op = rng.random()
        line = f"{rng.choice(_CALLS)}_{rng.choice(_WORDS)}(payload)"
        if op < 0.5 or len(self.body) >= 10:
            self.body[rng.randrange(len(self.body))] = line
        elif op < 0.8 or len(self.body) <= 3:
            self.body.insert(rng.randrange(len(self.body) + 1), line)
        else:
            del self.body[rng.randrange(len(self.body))]

    def cutover(self, rule: RuleSpec) -> None:
        self.libs[rule.library] = "2.0"

    def violate(self, rule: RuleSpec) -> None:
        rng = self.rng
        if rule.kind == VERSION_EQUALITY:
            k = rule.keywords[rng.randrange(2)]
            base = int(self.consts[k])
            self.consts[k] = str(base + rng.choice((-1, 1)))
        elif rule.kind == VERSION_BOUND:
            self.gem_consts[rule.keywords[0]] = self._below(rule.minimum)
        elif rule.kind == FORBIDDEN_TOKEN:
            self.tokens[rule.keywords[0]] = rule.keywords[0]
        elif rule.kind == RENAME_PAIR:
            self.calls[rule.keywords[0]] = rule.keywords[0]

    def fix(self, rule: RuleSpec) -> None:
        if rule.kind == VERSION_EQUALITY:
            k1, k2 = rule.keywords
            # the constant that drifted goes back to the shared value
            target = "3"
            self.consts[k1] = target
            self.consts[k2] = target
        elif rule.kind == VERSION_BOUND:
            self.gem_consts[rule.keywords[0]] = self._above(rule.minimum)
        elif rule.kind == FORBIDDEN_TOKEN:
            self.tokens[rule.keywords[0]] = f"stable_{rule.keywords[0]}"
        elif rule.kind == RENAME_PAIR:
            self.calls[rule.keywords[0]] = rule.keywords[1]

    def violated(self, index: int) -> list[RuleSpec]:
        out = []
        for r in self.rules:
            if r.kind == VERSION_EQUALITY:
                if self.consts[r.keywords[0]] != self.consts[r.keywords[1]]:
                    out.append(r)
            elif r.kind == VERSION_BOUND:
                if _vkey(self.gem_consts[r.keywords[0]]) < _vkey(r.minimum):
                    out.append(r)
            elif r.kind == FORBIDDEN_TOKEN:
                if self.tokens[r.keywords[0]] == r.keywords[0]:
                    out.append(r)
            elif r.kind == RENAME_PAIR:
                if index >= r.cutover and self.calls[r.keywords[0]] == r.keywords[0]:
                    out.append(r)
        return out

    def responsible_lines(self, rule: RuleSpec) -> list[list]:
        app = f"lib/{self.name}/app.rb"
        if rule.kind == VERSION_EQUALITY:
            return [
                [f"lib/{self.name}/version.rb", n] for n in self.lines_of(f"lib/{self.name}/version.rb", rule.keywords[0])
            ] + [[f"{self.name}.gemspec", n] for n in self.lines_of(f"{self.name}.gemspec", rule.keywords[1])]
        if rule.kind == VERSION_BOUND:
            return [["Gemfile", n] for n in self.lines_of("Gemfile", f"'{rule.keywords[0]}'")]
        if rule.kind == FORBIDDEN_TOKEN:
            path = f"lib/{self.name}/backend.rb"
            return [[path, n] for n in self.lines_of(path, f" {rule.keywords[0]}")]
        return [[app, n] for n in self.lines_of(app, f"{rule.keywords[0]}(")] + [
            [app, n] for n in self.lines_of(app, f"import {rule.library} ")
        ]


def _vkey(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split("."))


def _generate_repo(spec: CorpusSpec, repo_index: int, seed: int) -> SynthRepo:
    rng = random.Random(seed)
    name = f"repo{repo_index:02d}"
    rules = [r for r in spec.rules if r.applies_to(repo_index)]
    state = _RepoState(name, rules, rng)
    commits: list[SynthCommit] = []
    truth: list[dict] = []
    build = rng.randint(1, 50)
    active: RuleSpec | None = None
    used_ids: set[str] = set()
    for i in range(spec.commits_per_repo):
        for r in rules:
            if r.kind == RENAME_PAIR and i == r.cutover:
                state.cutover(r)
        want_violation = i > 0 and rng.random() < spec.violation_rate
        if want_violation:
            if active is None or active not in state.violated(i):
                candidates = [
                    r for r in rules
                    if r not in state.violated(i) and (r.kind != RENAME_PAIR or i > r.cutover)
                ]
                if candidates:
                    active = rng.choice(candidates)
                    state.violate(active)
        else:
            for r in state.violated(i):
                # rename breakage at the cutover itself stays until a later commit
                if not (r.kind == RENAME_PAIR and i == r.cutover):
                    state.fix(r)
            active = None
        if rng.random() < 0.6 or not want_violation:
            state.benign_edit(spec.code_edit_rate)

        violated = state.violated(i)
        impure = not violated and rng.random() < spec.impure_error_rate
        if violated or impure:
            raw = RawStatus.ERR
        elif rng.random() < spec.test_failure_rate:
            raw = RawStatus.FAIL
        else:
            raw = RawStatus.PASS

        cid = "%040x" % rng.getrandbits(160)
        while cid in used_ids:
            cid = "%040x" % rng.getrandbits(160)
        used_ids.add(cid)
        commits.append(
            SynthCommit(cid, build, f"2020-01-01T00:00:00+{i:04d}", raw, state.files())
        )
        build += rng.randint(1, 3)
        if raw is RawStatus.ERR:
            truth.append(
                {
                    "index": i,
                    "commit_id": cid,
                    "impure": impure,
                    "rules": [r.to_dict() for r in violated],
                    "lines": [ln for r in violated for ln in state.responsible_lines(r)],
                    "tokens": sorted({t for r in violated for t in r.responsible_tokens}),
                }
            )
    return SynthRepo(name, commits, truth)


def generate(spec: CorpusSpec) -> Corpus:
    """Build every repository from its own sub-seed derived from ``spec.seed``."""
    spec.validate()
    master = random.Random(spec.seed)
    seeds = [master.getrandbits(64) for _ in range(spec.repo_count)]
    return Corpus(spec, [_generate_repo(spec, i, s) for i, s in enumerate(seeds)])


def write_corpus(corpus: Corpus, out_dir: str | os.PathLike) -> Path:
    """``<out>/<repo>/{manifest.csv, ground_truth.json, commits/<id>/...}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.json").write_text(json.dumps(corpus.spec.to_dict(), sort_keys=True, indent=1) + "\n")
    for repo in corpus.repos:
        rdir = out / repo.name
        for c in repo.commits:
            for rel, content in c.files.items():
                p = rdir / "commits" / c.commit_id / rel
                p.parent.mkdir(parents=True, exist_ok=True)
                if isinstance(content, bytes):
                    p.write_bytes(content)
                else:
                    p.write_text(content, encoding="utf-8")
        write_manifest(repo.manifest(), rdir / "manifest.csv")
        (rdir / "ground_truth.json").write_text(json.dumps(repo.truth, sort_keys=True, indent=1) + "\n")
    return out


def load_truth(repo_dir: str | os.PathLike) -> list[dict]:
    path = Path(repo_dir) / "ground_truth.json"
    return json.loads(path.read_text()) if path.is_file() else []


@dataclass(frozen=True)
class ScoredPrediction:
    commit_id: str
    predicted_err: bool
    actual_err: bool
    keywords: tuple[str, ...] = ()


def score_explanations(predictions: Iterable[ScoredPrediction], truth: Iterable[dict]) -> float:
    """Share of true-positive error predictions whose keywords hit a responsible token.

    Diff feature names ``old/new`` match on either token.  Impure failures have
    no responsible tokens, so a true positive on one never counts as a hit.
    Returns NaN when there are no true positives.
    """
    by_id = {t["commit_id"]: set(t.get("tokens", ())) for t in truth}
    hits = total = 0
    for p in predictions:
        if not (p.predicted_err and p.actual_err):
            continue
        total += 1
        if keyword_tokens(p.keywords) & by_id.get(p.commit_id, set()):
            hits += 1
    return hits / total if total else float("nan")
