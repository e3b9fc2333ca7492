"""A library renames ``tweet`` to ``sendTweet`` at version 2.0.

Six revisions of one app file, three of them erroring.  The initial
abstraction only sees import versions, so ABR explains away one error and the
tree cannot tell R5 (still calling ``tweet``) from R6.  One round of
misclassification-guided refinement mines the rename from the R5 -> R6 flip
and the final model reports the offending call.

Run with ``python demos/rename_refinement.py``.
"""

from ciguard.dataset import LabeledSummary, abr_relabel
from ciguard.dtree import dump_text
from ciguard.features import CodeFeature, summarize
from ciguard.ingest import BuildStatus, build_history, filter_repository
from ciguard.pipeline import migar_refine
from ciguard.report import explain, render

P, E = BuildStatus.PASS, BuildStatus.ERR


def app(tweet_v, rnd_v, call=None):
    body = [f"import Tweet V{tweet_v}", f"import RndMsg V{rnd_v}", "", "msg = RndMsg()"]
    if call:
        body.append(f"{call}(msg)")
    return "\n".join(body) + "\n"


REVISIONS = [
    (app("1.0", "1.0"), P),
    (app("1.0", "1.0"), E),  # impure: nothing in the code changed
    (app("1.0", "1.0"), P),
    (app("1.0", "2.0", "tweet"), E),
    (app("2.0", "2.0", "tweet"), E),  # deprecated call against Tweet 2.0
    (app("2.0", "2.0", "sendTweet"), P),
]


def main():
    commits = build_history(
        (f"r{i + 1}", status, filter_repository({"app.rb": text}))
        for i, (text, status) in enumerate(REVISIONS)
    )
    initial = [CodeFeature.magic("Tweet"), CodeFeature.magic("RndMsg")]

    print("Recorded statuses:  ", " ".join(c.status.value for c in commits))
    items = [LabeledSummary(c.index, summarize(c.snapshot, initial), c.status) for c in commits]
    print("After ABR (imports):", " ".join(s.status.value for s in abr_relabel(items)))

    trace = []
    model = migar_refine(commits, initial, budget=5, trace=trace)
    print("\nRefinement trace:")
    for step in trace:
        names = ", ".join(f.name for f in step.extractors)
        where = f", refined on r{step.refined_on + 1}" if step.refined_on is not None else ""
        print(f"  iteration {step.iteration}: accuracy {step.last_accuracy:.3f} with [{names}]{where}")

    refined = [*initial, CodeFeature.diff("tweet", "sendTweet")]
    items = [LabeledSummary(c.index, summarize(c.snapshot, refined), c.status) for c in commits]
    print("\nAfter ABR (refined):", " ".join(s.status.value for s in abr_relabel(items)))

    print("\nLearned tree:")
    print(dump_text(model.tree))

    # R5's content, edited once more, still calls the old name
    candidate = filter_repository({"app.rb": app("2.0", "2.0", "tweet") + "log(msg)\n"})
    label, path = model.predict(model.summarize(candidate))
    print("\nChecking a new revision that still calls tweet():")
    print(render(explain(label, [("local", path, model.summarize(candidate))])))


if __name__ == "__main__":
    main()
