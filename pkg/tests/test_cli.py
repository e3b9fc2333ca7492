import json
import shutil

import pytest

from ciguard.bundle import load_bundle
from ciguard.cli import EXIT_ERR, EXIT_PASS, EXIT_USAGE, main, parse_inspect_features
from ciguard.ingest import BuildStatus, load_manifest
from ciguard.synth import load_truth


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-corpus", str(out), "--repos", "2", "--commits", "30", "--seed", "3"]) == EXIT_PASS
    return out


@pytest.fixture(scope="module")
def bundle_path(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "b.json"
    assert main(["train", str(corpus), "-o", str(out)]) == EXIT_PASS
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def commit_dir(corpus, repo, index):
    rows = load_manifest(corpus / repo / "manifest.csv")
    row = sorted(rows, key=lambda r: r.build_number)[index]
    return corpus / repo / "commits" / row.commit_id, row


def test_gen_corpus_layout(corpus):
    repos = sorted(p.name for p in corpus.iterdir() if p.is_dir())
    assert repos == ["repo00", "repo01"]
    assert (corpus / "corpus.json").is_file()
    assert isinstance(load_truth(corpus / "repo00"), list)


def test_train_deterministic(corpus, bundle_path, tmp_path):
    again = tmp_path / "b2.json"
    assert main(["train", str(corpus), "-o", str(again)]) == EXIT_PASS
    assert again.read_bytes() == bundle_path.read_bytes()


def test_predict_matches_bundle(corpus, bundle_path, capsys):
    bundle = load_bundle(bundle_path)
    cm = bundle.combined("repo00")
    from ciguard.ingest import filter_repository, read_checkout

    for i in (0, 5, 17, 29):
        d, _ = commit_dir(corpus, "repo00", i)
        expected, _ = cm.predict_snapshot(filter_repository(read_checkout(d)))
        code, out, _ = run(capsys, "predict", bundle_path, d, "--repo", "repo00")
        assert code == (EXIT_ERR if expected is BuildStatus.ERR else EXIT_PASS)
        assert out.startswith("Predicted build")


def test_predict_json(corpus, bundle_path, capsys):
    d, _ = commit_dir(corpus, "repo01", 3)
    code, out, _ = run(capsys, "predict", bundle_path, d, "--repo", "repo01", "--json")
    assert json.loads(out)["prediction"] in ("Pass", "Err")
    assert code in (EXIT_PASS, EXIT_ERR)


def test_predict_needs_repo(corpus, bundle_path, capsys):
    d, _ = commit_dir(corpus, "repo00", 0)
    code, _, err = run(capsys, "predict", bundle_path, d)
    assert code == EXIT_USAGE and "error" in err


def test_predict_corrupt_bundle(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    d, _ = commit_dir(corpus, "repo00", 0)
    code, _, err = run(capsys, "predict", bad, d, "--repo", "repo00")
    assert code == EXIT_USAGE and "line 1" in err


def test_predict_missing_snapshot(bundle_path, tmp_path, capsys):
    code, _, _ = run(capsys, "predict", bundle_path, tmp_path / "nope", "--repo", "repo00")
    assert code == EXIT_USAGE


def test_train_without_paths(capsys):
    code, _, err = run(capsys, "train")
    assert code == EXIT_USAGE and "at least one" in err


def test_inspect_features_match_bundle(bundle_path, capsys):
    code, out, _ = run(capsys, "inspect", bundle_path)
    assert code == EXIT_PASS
    parsed = parse_inspect_features(out)
    bundle = load_bundle(bundle_path)
    assert parsed["global"] == {(f.kind, f.name) for f in bundle.global_model.extractors}
    for rid, m in bundle.local_models.items():
        assert parsed[f"local {rid}"] == {(f.kind, f.name) for f in m.extractors}


def test_inspect_single_leaf(tmp_path, capsys):
    # a history with no errors trains to one leaf, dumped on one line
    src = tmp_path / "c"
    assert main(["gen-corpus", str(src), "--repos", "1", "--commits", "25", "--spec", str(_quiet_spec(tmp_path))]) == 0
    b = tmp_path / "b.json"
    assert main(["train", str(src), "-o", str(b)]) == 0
    capsys.readouterr()
    _, out, _ = run(capsys, "inspect", b)
    blocks = out.split("\n\n")
    assert blocks[1].splitlines()[-1] == "Pass (pass=25, err=0)"
    assert blocks[1].splitlines()[-2] == "tree:"


def _quiet_spec(tmp_path):
    p = tmp_path / "spec.toml"
    p.write_text("rules = []\nviolation_rate = 0.0\nimpure_error_rate = 0.0\ntest_failure_rate = 0.0\n")
    return p


def test_config_defaults(capsys, tmp_path):
    code, out, _ = run(capsys, "config", "--defaults", "--seed", "4")
    assert code == EXIT_PASS and "seed = 4" in out
    p = tmp_path / "c.toml"
    p.write_text(out)
    code, again, _ = run(capsys, "config", p)
    assert code == EXIT_PASS and again == out


def test_config_errors(capsys, tmp_path):
    assert run(capsys, "config")[0] == EXIT_USAGE
    p = tmp_path / "c.toml"
    p.write_text("budget = -3\n")
    assert run(capsys, "config", p)[0] == EXIT_USAGE


def test_bad_spec(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text('{"violation_rate": 3}')
    assert run(capsys, "gen-corpus", tmp_path / "o", "--spec", p)[0] == EXIT_USAGE


def test_evaluate_json(corpus, capsys):
    code, out, _ = run(capsys, "evaluate", corpus, "--json")
    assert code == EXIT_PASS
    d = json.loads(out)
    assert [r["name"] for r in d["repositories"]] == ["repo00", "repo01"]
    for r in d["repositories"]:
        assert r["tp"] + r["tn"] + r["fp"] + r["fn"] == 15


def test_evaluate_table_and_timing(corpus, capsys):
    code, out, _ = run(capsys, "evaluate", corpus, "--timing", "--sizes", "1x10,2x20")
    assert code == EXIT_PASS
    assert out.splitlines()[0].startswith("Repository")
    assert "Average keywords" in out or "Explanation score" in out or "repo01" in out


def test_evaluate_bad_sizes(corpus, capsys):
    assert run(capsys, "evaluate", corpus, "--timing-only", "--sizes", "ten")[0] == EXIT_USAGE


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_single_repo_dir(corpus, tmp_path, capsys):
    repo = tmp_path / "only"
    shutil.copytree(corpus / "repo00", repo)
    b = tmp_path / "b.json"
    assert main(["train", str(repo), "-o", str(b)]) == EXIT_PASS
    d, _ = commit_dir(corpus, "repo00", 2)
    assert run(capsys, "predict", b, d)[0] in (EXIT_PASS, EXIT_ERR)


def test_planted_violation_exits_10(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "repo_count": 5, "commits_per_repo": 40, "impure_error_rate": 0.0,
        "rules": [{"kind": "version_bound", "keywords": ["libA"], "minimum": "2.0"}],
    }))
    corpus, b = tmp_path / "c", tmp_path / "b.json"
    assert main(["gen-corpus", str(corpus), "--spec", str(spec)]) == EXIT_PASS
    assert main(["train", str(corpus), "-o", str(b)]) == EXIT_PASS
    truth = load_truth(corpus / "repo00")[-1]
    d = corpus / "repo00" / "commits" / truth["commit_id"]
    code, out, _ = run(capsys, "predict", b, d, "--repo", "repo00")
    assert code == EXIT_ERR
    assert any(tok in out for tok in truth["tokens"])


def test_clean_commit_exits_0(corpus, bundle_path, capsys):
    d, _ = commit_dir(corpus, "repo00", 0)
    code, out, _ = run(capsys, "predict", bundle_path, d, "--repo", "repo00")
    assert code == EXIT_PASS and out.strip() == "Predicted build success."


def test_inspect_rename_history(tmp_path, capsys):
    from conftest import RENAME_STATUSES, RENAME_TEXTS
    from ciguard.ingest import ManifestRow, RawStatus, write_manifest

    repo = tmp_path / "rename"
    rows = []
    for i, (text, status) in enumerate(zip(RENAME_TEXTS, RENAME_STATUSES)):
        cid = f"{i:040x}"
        (repo / "commits" / cid).mkdir(parents=True)
        (repo / "commits" / cid / "app.rb").write_text(text)
        raw = RawStatus.ERR if status is BuildStatus.ERR else RawStatus.PASS
        rows.append(ManifestRow(i + 1, cid, raw, f"2020-01-0{i + 1}T00:00:00"))
    write_manifest(rows, repo / "manifest.csv")
    b = tmp_path / "b.json"
    assert main(["train", str(repo), "-o", str(b)]) == EXIT_PASS
    capsys.readouterr()
    _, out, _ = run(capsys, "inspect", b)
    names = {name for feats in parse_inspect_features(out).values() for _, name in feats}
    assert names <= {"Tweet", "RndMsg", "tweet/sendTweet"}
    assert "tweet/sendTweet" in out
