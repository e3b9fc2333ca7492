"""Command-line entry point.

Exit codes: 0 predicted pass (or a command that succeeded), 10 predicted
error, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bundle import BundleError, load_bundle, load_training_repos, save_bundle, train_bundle
from .config import ConfigError, RunConfig, load_config, tomllib
from .dtree import TreeError, dump_text
from .features import MAGIC, VERSION_BASE
from .ingest import BuildStatus, IngestError, filter_repository, read_checkout
from .pipeline import evaluate_rolling, format_table, format_timing, time_training
from .report import render, render_json
from .synth import CorpusSpec, CorpusSpecError, ScoredPrediction, generate, load_truth, score_explanations, write_corpus

EXIT_PASS = 0
EXIT_ERR = 10
EXIT_USAGE = 2

DEFAULT_SIZES = "1x10,1x30,1x50,5x50,10x50"


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    if not args.paths:
        raise UsageError("train needs at least one repository or corpus path")
    cfg = _config(args)
    repos = load_training_repos(args.paths, cfg)
    bundle = train_bundle(repos, cfg)
    save_bundle(bundle, args.output)
    print(f"trained {len(repos)} repositories -> {args.output}", file=sys.stderr)
    return EXIT_PASS


def cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    cm = bundle.combined(args.repo)
    snapshot = filter_repository(read_checkout(args.snapshot), bundle.config.filter_policy)
    label, explanation = cm.predict_snapshot(snapshot)
    print(render_json(explanation) if args.json else render(explanation))
    return EXIT_ERR if label is BuildStatus.ERR else EXIT_PASS


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        try:
            r, c = part.lower().split("x")
            out.append((int(r), int(c)))
        except ValueError:
            raise UsageError(f"bad size {part!r}; expected REPOSxCOMMITS such as 5x50") from None
    return out


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    repos = load_training_repos([args.corpus], cfg)
    pc = cfg.pipeline()
    result: dict = {"config_digest": cfg.digest()}
    if not args.timing_only:
        histories = [h for _, h in repos]
        reports, preds, truth = [], [], []
        for i, (rid, hist) in enumerate(repos):
            others = histories[:i] + histories[i + 1:]
            rep = evaluate_rolling(hist, pc, others, rid)
            reports.append(rep)
            preds += [
                ScoredPrediction(
                    hist[s.predicted_index].commit_id,
                    s.predicted is BuildStatus.ERR,
                    s.actual is BuildStatus.ERR,
                    tuple(s.keywords),
                )
                for s in rep.steps
            ]
            truth += load_truth(Path(args.corpus) / rid) if (Path(args.corpus) / rid).is_dir() else []
        result["repositories"] = [r.to_dict() for r in reports]
        lengths = [len(p.keywords) for p in preds if p.predicted_err]
        result["average_keywords"] = sum(lengths) / len(lengths) if lengths else None
        if truth:
            score = score_explanations(preds, truth)
            result["explanation_score"] = None if math.isnan(score) else score
        if not args.json:
            print(format_table(reports))
            if "explanation_score" in result:
                s = result["explanation_score"]
                print(f"\nExplanation score: {'-' if s is None else f'{s:.3f}'}")
            if result["average_keywords"] is not None:
                print(f"Average keywords per error report: {result['average_keywords']:.2f}")
    if args.timing or args.timing_only:
        rows = time_training([h for _, h in repos], _parse_sizes(args.sizes), pc)
        result["timing"] = [r.__dict__ for r in rows]
        if not args.json:
            print("\n" + format_timing(rows))
    if args.json:
        print(json.dumps(result, sort_keys=True, indent=1))
    return EXIT_PASS


def _load_spec(path: str | None) -> CorpusSpec:
    if path is None:
        return CorpusSpec()
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.endswith(".json") else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise CorpusSpecError(f"cannot parse corpus spec {path}: {exc}") from None
    try:
        return CorpusSpec.from_dict(data)
    except (TypeError, KeyError) as exc:
        raise CorpusSpecError(f"invalid corpus spec {path}: {exc}") from None


def cmd_gen_corpus(args) -> int:
    spec = _load_spec(args.spec)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.repos is not None:
        overrides["repo_count"] = args.repos
    if args.commits is not None:
        overrides["commits_per_repo"] = args.commits
    spec = replace(spec, **overrides)
    corpus = generate(spec)
    write_corpus(corpus, args.output)
    n_err = sum(len(r.truth) for r in corpus.repos)
    print(f"wrote {len(corpus.repos)} repositories ({n_err} erroring commits) -> {args.output}", file=sys.stderr)
    return EXIT_PASS


def _threshold_text(feature, threshold: float) -> str:
    if feature.kind == MAGIC:
        # leading version component, so 2.5e+12 reads as "between 2 and 3"
        return f"{threshold:g} (major {threshold / VERSION_BASE ** 3:.4g})"
    return f"{threshold:g}"


def format_model(title: str, model) -> str:
    lines = [f"== {title} ==", f"features ({len(model.extractors)}):"]
    lines += [f"  {f.kind} {f.name}" for f in model.extractors]
    lines += ["tree:", dump_text(model.tree, _threshold_text)]
    return "\n".join(lines)


def parse_inspect_features(text: str) -> dict[str, set[tuple[str, str]]]:
    """Feature sets per model title, read back from ``inspect`` output."""
    out: dict[str, set[tuple[str, str]]] = {}
    title = None
    in_features = False
    for line in text.splitlines():
        if line.startswith("== ") and line.endswith(" =="):
            title = line[3:-3]
            out[title] = set()
            in_features = False
        elif line.startswith("features ("):
            in_features = True
        elif line == "tree:":
            in_features = False
        elif in_features and title is not None and line.startswith("  "):
            kind, name = line.strip().split(" ", 1)
            out[title].add((kind, name))
    return out


def cmd_inspect(args) -> int:
    bundle = load_bundle(args.bundle)
    parts = [f"policy: {bundle.config.policy}", format_model("global", bundle.global_model)]
    for rid, m in sorted(bundle.local_models.items()):
        if args.repo is None or args.repo == rid:
            parts.append(format_model(f"local {rid}", m))
    print("\n\n".join(parts))
    return EXIT_PASS


def cmd_config(args) -> int:
    if args.defaults:
        cfg = RunConfig()
    elif args.file:
        cfg = load_config(args.file)
    else:
        raise UsageError("config needs --defaults or a config file to check")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sys.stdout.write(cfg.to_toml())
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="ciguard", description="Predict CI build errors from repository contents.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model bundle")
    t.add_argument("paths", nargs="*", help="repository directories or corpus directories")
    t.add_argument("-o", "--output", default="bundle.json")
    t.add_argument("-c", "--config")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="predict the build status of a checkout")
    pr.add_argument("bundle")
    pr.add_argument("snapshot", help="directory holding the checkout to judge")
    pr.add_argument("--repo", help="which local model to use when the bundle holds several")
    pr.add_argument("--json", action="store_true")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common], help="rolling evaluation over a corpus")
    e.add_argument("corpus")
    e.add_argument("-c", "--config")
    e.add_argument("--json", action="store_true")
    e.add_argument("--timing", action="store_true", help="also time training at several corpus sizes")
    e.add_argument("--timing-only", action="store_true", help="skip the rolling evaluation")
    e.add_argument("--sizes", default=DEFAULT_SIZES, help=f"REPOSxCOMMITS list (default {DEFAULT_SIZES})")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus")
    g.add_argument("output")
    g.add_argument("--spec", help="corpus spec as TOML or JSON")
    g.add_argument("--repos", type=int)
    g.add_argument("--commits", type=int)
    g.set_defaults(func=cmd_gen_corpus)

    i = sub.add_parser("inspect", parents=[common], help="print the trees in a bundle")
    i.add_argument("bundle")
    i.add_argument("--repo")
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("config", parents=[common], help="print or check a run configuration")
    c.add_argument("file", nargs="?")
    c.add_argument("--defaults", action="store_true")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ciguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BundleError, ConfigError, CorpusSpecError, IngestError, TreeError, OSError, ValueError) as exc:
        print(f"ciguard {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
