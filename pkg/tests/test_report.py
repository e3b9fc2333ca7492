import pytest
from hypothesis import given, strategies as st

from ciguard.dtree import DecisionPath, PathStep
from ciguard.features import CodeFeature, FeatureValue, Location, RepoSummary, summarize
from ciguard.ingest import BuildStatus, filter_repository
from ciguard.report import (
    FAILURE_HEADER,
    NOT_FOUND,
    Explanation,
    Finding,
    explain,
    from_json_dict,
    keyword_tokens,
    localize,
    render,
    render_json,
    to_json_dict,
)

P, E = BuildStatus.PASS, BuildStatus.ERR
M = CodeFeature.magic

# The report shown for the CSV-converter pull request, without the listing's
# trailing blank after "Line 7".
LISTING = """Predicted build failure based on potential error locations:
lib/rails_admin/support/csv_converter.rb:Line 7
   TARGET_ENCODINGS=
.travis.yml:Multiple Lines
   -rvm"""


def fv(*locs, value=1.0):
    return FeatureValue(value, tuple(Location(p, n, n) for p, n in locs))


def listing_inputs():
    enc, rvm = M("TARGET_ENCODINGS="), M("-rvm")
    s = RepoSummary(
        {
            enc: fv(("lib/rails_admin/support/csv_converter.rb", 7)),
            rvm: fv((".travis.yml", 3), (".travis.yml", 4), (".travis.yml", 5), (".travis.yml", 6)),
        }
    )
    path = DecisionPath((PathStep(enc, 0.5, "gt", 1.0), PathStep(rvm, 0.5, "gt", 1.0)), E)
    return s, path


def test_listing_byte_for_byte():
    s, path = listing_inputs()
    assert render(explain(E, [("global", path, s)])) == LISTING


def test_localize_multiple_lines():
    s, _ = listing_inputs()
    assert localize("-rvm", s) == [(".travis.yml", "Multiple Lines")]


def test_localize_patch_from_real_file():
    text = "module ActiveScaffold\n  module Version\n    MAJOR = 3\n    MINOR = 4\n    PATCH = 35\n  end\nend\n"
    s = summarize(filter_repository({"lib/active_scaffold/version.rb": text}), [M("PATCH")])
    assert localize("PATCH", s) == [("lib/active_scaffold/version.rb", "Line 5")]


def test_localize_absent():
    s, _ = listing_inputs()
    assert localize("nothing", s) == []
    e = Explanation(E, (Finding("nothing"),))
    assert render(e).splitlines()[1:] == [NOT_FOUND, "   nothing"]


def test_multiple_files():
    rails = M("rails")
    s = RepoSummary({rails: fv(("a.gemspec", 1), ("Gemfile", 2), ("Gemfile.lock", 9))})
    path = DecisionPath((PathStep(rails, 0.5, "gt", 1.0),), E)
    out = render(explain(E, [("global", path, s)]))
    assert out.splitlines() == [FAILURE_HEADER, "Multiple Files:Multiple Lines", "   rails"]


def test_two_files_listed_separately():
    k = M("k")
    s = RepoSummary({k: fv(("b.rb", 2), ("a.rb", 1))})
    assert localize("k", s) == [("a.rb", "Line 1"), ("b.rb", "Line 2")]


def test_pass():
    assert render(explain(P, [])) == "Predicted build success."


def test_keywords_merge_across_models():
    s, path = listing_inputs()
    e = explain(E, [("global", path, s), ("local", path, s)])
    assert e.keywords == ["TARGET_ENCODINGS=", "-rvm"]
    assert e.source_models == ("global", "local")


def test_single_leaf_err_still_reports():
    e = explain(E, [("local", DecisionPath((), E), RepoSummary({}))])
    assert len(e.findings) == 1 and e.findings[0].locations == ()


def test_invariants():
    with pytest.raises(ValueError):
        Explanation(E, ())
    with pytest.raises(ValueError):
        Explanation(P, (Finding("x"),))
    with pytest.raises(ValueError):
        Explanation(E, (Finding("x"), Finding("x")))


def test_json_round_trip():
    s, path = listing_inputs()
    e = explain(E, [("global", path, s)])
    assert from_json_dict(to_json_dict(e)) == e
    assert '"prediction": "Err"' in render_json(e)


def test_keyword_tokens():
    assert keyword_tokens(["tweet/sendTweet", "libA"]) == {"tweet/sendTweet", "tweet", "sendTweet", "libA"}


names = st.text(alphabet="abcXYZ_=-", min_size=1, max_size=6)
locs = st.lists(st.tuples(st.sampled_from(["a.rb", "b.rb"]), st.sampled_from(["Line 1", "Multiple Lines"])), max_size=2)


@given(
    st.lists(st.tuples(names, locs), min_size=1, max_size=3, unique_by=lambda t: t[0]),
    st.lists(st.tuples(names, locs), min_size=1, max_size=3, unique_by=lambda t: t[0]),
)
def test_render_injective(a, b):
    ea = Explanation(E, tuple(Finding(k, tuple(l)) for k, l in a))
    eb = Explanation(E, tuple(Finding(k, tuple(l)) for k, l in b))
    if ea.findings != eb.findings:
        assert render(ea) != render(eb)
