import sys

import pytest

from ciguard.ingest import BuildStatus, build_history, filter_repository
from ciguard.synth import CorpusSpec, generate

P, E = BuildStatus.PASS, BuildStatus.ERR

# The two listings of the rename example, as app files.
R4_TEXT = """import Tweet V1.0
import RndMsg V2.0

msg = RndMsg()
tweet(msg)
"""

R6_TEXT = """import Tweet V2.0
import RndMsg V2.0

msg = RndMsg()
sendTweet(msg)
"""


def snap(text, path="app.rb"):
    return filter_repository({path: text})


def app_text(tweet_v, rnd_v, call=None):
    body = [f"import Tweet V{tweet_v}", f"import RndMsg V{rnd_v}", "", "msg = RndMsg()"]
    if call:
        body.append(f"{call}(msg)")
    return "\n".join(body) + "\n"


# Six revisions consistent with the ABR walk-through table: the first three
# share one abstraction, R4 adds the deprecated call, R5 bumps Tweet, R6
# switches to the new call.
RENAME_TEXTS = [
    app_text("1.0", "1.0"),
    app_text("1.0", "1.0"),
    app_text("1.0", "1.0"),
    app_text("1.0", "2.0", "tweet"),
    app_text("2.0", "2.0", "tweet"),
    app_text("2.0", "2.0", "sendTweet"),
]
RENAME_STATUSES = [P, E, P, E, E, P]


@pytest.fixture
def r4():
    return snap(R4_TEXT)


@pytest.fixture
def r6():
    return snap(R6_TEXT)


@pytest.fixture
def rename_commits():
    return build_history(
        (f"r{i + 1}", st, snap(text)) for i, (text, st) in enumerate(zip(RENAME_TEXTS, RENAME_STATUSES))
    )


@pytest.fixture(scope="session")
def small_corpus():
    return generate(CorpusSpec(repo_count=3, commits_per_repo=30, seed=7))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda l: int(l.split()[1].rstrip("."))):
        terminalreporter.write_line(line)
