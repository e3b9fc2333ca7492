"""Train on a synthetic corpus with planted rules and check the explanations.

The generator plants three rules: ``MAJOR`` in version.rb must match
``gem_major`` in the gemspec, the Gemfile must pin ``libA`` at 2.0 or later,
and after a cutover ``tweet(`` must become ``sendTweet(``.  Every erroring
commit comes with the rule and lines that caused it, so predictions and
explanations can be graded against ground truth.

Run with ``python demos/synthetic_corpus.py [OUTPUT_DIR]``.
"""

import sys
import tempfile
from pathlib import Path

from ciguard.bundle import load_training_repos, save_bundle, load_bundle, train_bundle
from ciguard.config import RunConfig
from ciguard.ingest import filter_repository, read_checkout
from ciguard.pipeline import evaluate_rolling, format_table
from ciguard.report import render
from ciguard.synth import CorpusSpec, generate, write_corpus


def main(out: Path):
    corpus = generate(CorpusSpec(repo_count=5, commits_per_repo=50, seed=0))
    write_corpus(corpus, out / "corpus")
    print(f"Corpus: {len(corpus.repos)} repositories under {out / 'corpus'}")
    for repo in corpus.repos:
        impure = sum(t["impure"] for t in repo.truth)
        print(f"  {repo.name}: {len(repo.truth)} erroring commits ({impure} impure)")

    config = RunConfig(policy="either")
    repos = load_training_repos([out / "corpus"], config)
    save_bundle(train_bundle(repos, config), out / "bundle.json")
    bundle = load_bundle(out / "bundle.json")
    print(f"\nGlobal features: {', '.join(f.name for f in bundle.global_model.extractors)}")

    # judge the latest planted violation in repo00 with the model for repo00
    repo = corpus.repos[0]
    truth = next(t for t in reversed(repo.truth) if not t["impure"])
    checkout = out / "corpus" / repo.name / "commits" / truth["commit_id"]
    label, explanation = bundle.combined(repo.name).predict_snapshot(
        filter_repository(read_checkout(checkout), config.filter_policy)
    )
    print(f"\nCommit {truth['commit_id'][:10]} violates {[r['kind'] for r in truth['rules']]}")
    print(f"planted at {truth['lines']}")
    print(render(explanation))

    # rolling evaluation: predict commit k+1 from commits 0..k only
    histories = [h for _, h in repos]
    reports = [
        evaluate_rolling(h, config.pipeline(), histories[:i] + histories[i + 1:], name)
        for i, (name, h) in enumerate(repos)
    ]
    print("\n" + format_table(reports))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
