import itertools

import pytest
from hypothesis import given, strategies as st

from ciguard.features import (
    ABSENT,
    CodeFeature,
    candidate_support,
    dump_extractors,
    evaluate_diff_feature,
    extract_diff_features,
    extract_magic_candidates,
    load_extractors,
    prune_by_support,
    summarize,
    support,
    tokenize,
    version_components,
    version_to_real,
)
from ciguard.ingest import filter_repository

from conftest import RENAME_TEXTS, snap

M, D = CodeFeature.magic, CodeFeature.diff
TWEET_DIFF = D("tweet", "sendTweet")
PAIR_CF = [M("Tweet"), M("RndMsg"), TWEET_DIFF]


def oracle_real(parts):
    return float(sum(c * 10_000 ** (3 - i) for i, c in enumerate(parts)))


class TestVersion:
    def test_zero(self):
        assert version_to_real("0") == 0.0

    def test_formula(self):
        assert version_to_real("1.0") == oracle_real((1, 0)) == 1e12
        assert version_to_real("3.4.35") == oracle_real((3, 4, 35))

    def test_patch_order(self):
        assert version_to_real("3.4.34") < version_to_real("3.4.35")
        assert version_to_real("1.0") < version_to_real("2.0")

    def test_monotone_exhaustive(self):
        versions = [
            p for depth in (1, 2, 3) for p in itertools.product(range(7), repeat=depth)
        ]
        padded = lambda p: p + (0,) * (4 - len(p))
        for a, b in itertools.combinations(versions, 2):
            ra, rb = (version_to_real(".".join(map(str, v))) for v in (a, b))
            assert (ra < rb) == (padded(a) < padded(b))
            assert (ra == rb) == (padded(a) == padded(b))

    @pytest.mark.parametrize("bad", ["1.10000", "1.2.3.4.5", "v1", "", "1..2", "99999999.0"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            version_to_real(bad)

    @given(st.lists(st.integers(0, 9999), min_size=1, max_size=4))
    def test_matches_oracle(self, parts):
        text = ".".join(map(str, parts))
        try:
            got = version_to_real(text)
        except ValueError:
            assert oracle_real(parts) >= 2**53
            return
        assert got == oracle_real(parts)
        assert version_components(text) == tuple(parts)


class TestMagic:
    def test_import_line(self):
        c = extract_magic_candidates(snap("import Tweet V1.0\n"))
        fv = c[M("Tweet")]
        assert version_components(fv.text) == (1, 0)
        assert fv.locations[0].start == 1

    def test_assignment(self):
        c = extract_magic_candidates(snap("module V\n  PATCH = 35\nend\n"))
        assert c[M("PATCH")].value == version_to_real("35")

    def test_no_numeric_tail(self):
        assert extract_magic_candidates(snap("msg = RndMsg()\n")) == {}

    @pytest.mark.parametrize(
        "line,key,text",
        [
            ("gem 'libA', '~> 2.1'", "libA", "2.1"),
            ('s.add_runtime_dependency "rails", ">= 4.0"', "rails", "4.0"),
            ("  - 2.3", None, None),
            ("VERSION: 1.2.3", "VERSION", "1.2.3"),
        ],
    )
    def test_forms(self, line, key, text):
        c = extract_magic_candidates(snap(line + "\n"))
        if key is None:
            assert c == {}
        else:
            assert c[M(key)].text == text

    def test_last_match_wins(self):
        s = snap("X = 1\nX = 2\n")
        fv = summarize(s, [M("X")])[M("X")]
        assert fv.text == "2" and len(fv.locations) == 2


class TestDiff:
    def test_rename_pair_diff(self, r4, r6):
        assert TWEET_DIFF in extract_diff_features(r4, r6)

    def test_identical(self, r4):
        assert extract_diff_features(r4, r4) == set()

    def test_pure_insertion(self):
        a = snap("x = run()\n")
        b = snap("x = run()\nfoo(bar)\n")
        assert extract_diff_features(a, b) == set()

    def test_numeric_tokens_skipped(self):
        assert extract_diff_features(snap("X = 1\n"), snap("X = 2\n")) == set()

    def test_values(self, r4, r6):
        assert evaluate_diff_feature(TWEET_DIFF, r4).value == -1
        assert evaluate_diff_feature(TWEET_DIFF, r6).value == 1
        assert evaluate_diff_feature(TWEET_DIFF, snap(RENAME_TEXTS[0])) == ABSENT

    def test_both_present_is_anomaly(self):
        fv = evaluate_diff_feature(TWEET_DIFF, snap("tweet(a)\nsendTweet(b)\n"))
        assert fv.value == 0 and fv.anomaly

    @given(
        st.lists(st.sampled_from(["a(x)", "b(x)", "c = d", "e f", "a b"]), max_size=6),
        st.lists(st.sampled_from(["a(x)", "b(x)", "c = g", "e h", "z b"]), max_size=6),
    )
    def test_invariants(self, old, new):
        s0 = filter_repository({"f.rb": "\n".join(old)})
        s1 = filter_repository({"f.rb": "\n".join(new)})
        for f in extract_diff_features(s0, s1):
            assert evaluate_diff_feature(f, s0).value == -1
            assert evaluate_diff_feature(f, s1).value == 1
            for s in (s0, s1):
                assert evaluate_diff_feature(f, s).value in (-1, 0, 1)


class TestSummary:
    def test_rename_pair_summaries(self, r4, r6):
        s4, s6 = summarize(r4, PAIR_CF), summarize(r6, PAIR_CF)
        assert version_components(s4[M("Tweet")].text) == (1, 0)
        assert version_components(s4[M("RndMsg")].text) == (2, 0)
        assert s4.value(TWEET_DIFF) == -1
        assert version_components(s6[M("Tweet")].text) == (2, 0)
        assert version_components(s6[M("RndMsg")].text) == (2, 0)
        assert s6.value(TWEET_DIFF) == 1

    def test_empty_cf_rejected(self, r4):
        with pytest.raises(ValueError):
            summarize(r4, [])

    def test_deterministic(self, r4):
        assert summarize(r4, PAIR_CF) == summarize(r4, list(reversed(PAIR_CF)))

    def test_absent_magic_is_zero(self, r4):
        assert summarize(r4, [M("Nope")]).value(M("Nope")) == 0


class TestSupport:
    def test_rename_history_tweet(self):
        sums = [summarize(snap(t), PAIR_CF) for t in RENAME_TEXTS]
        assert support(M("Tweet"), sums) == 1.0

    def test_none_and_one_in_ten(self):
        snaps = [snap("X = 1\n")] + [snap("y = z\n")] * 9
        sums = [summarize(s, [M("X"), M("Q")]) for s in snaps]
        assert support(M("Q"), sums) == 0.0
        assert support(M("X"), sums) == pytest.approx(0.1)
        assert candidate_support(snaps)[M("X")] == pytest.approx(0.1)

    def test_prune_count_oracle(self):
        keys = [f"K{i}" for i in range(20)]
        snaps = []
        for n in range(20):
            lines = [f"{k} = 1" for i, k in enumerate(keys) if i < 3 or (i == 3 and n == 0)]  # K3 at 5%
            snaps.append(snap("\n".join(lines) + "\n"))
        cands = [M(k) for k in keys]
        sums = [summarize(s, cands) for s in snaps]
        expected = {f for f in cands if sum(s[f].present for s in sums) / len(sums) >= 0.10}
        assert prune_by_support(cands, sums, 0.10) == expected == {M("K0"), M("K1"), M("K2")}
        assert prune_by_support(cands, sums, 0.0) == set(cands)

    @given(st.lists(st.booleans(), min_size=1, max_size=20))
    def test_monotone_when_appending(self, flags):
        snaps = [snap("X = 1\n" if f else "y = z\n") for f in flags]
        sums = [summarize(s, [M("X")]) for s in snaps]
        before = support(M("X"), sums)
        after = support(M("X"), sums + [summarize(snap("X = 3\n"), [M("X")])])
        assert 0.0 <= before <= after <= 1.0


def test_tokenize():
    assert tokenize("s.add_runtime_dependency 'rails', '>= 4.0'") == ["s.add_runtime_dependency", "rails", "4.0"]


def test_extractor_round_trip():
    text = dump_extractors(PAIR_CF, {M("Tweet"): {"prefix": "import Tweet"}})
    feats, meta = load_extractors(text)
    assert set(feats) == set(PAIR_CF)
    assert meta[M("Tweet")] == {"prefix": "import Tweet"}


@pytest.mark.parametrize("bad", [("magic", ()), ("diff", ("a",)), ("diff", ("a", "a")), ("other", ("a",))])
def test_feature_identity_checks(bad):
    with pytest.raises(ValueError):
        CodeFeature(*bad)
