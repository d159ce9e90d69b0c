from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from simsched.ensemble import build_meta_dataset
from simsched.errors import InvalidInput, OperatorFailure
from simsched.meta import (
    BaselineReference,
    LLMRevisionOperator,
    MetaConfig,
    RevisionHistory,
    RevisionOperator,
    collect_baseline_reference,
    init_schedule,
    learn_schedule,
    llm_revision_operator,
    repair_schedule,
    run_epoch,
    scripted_revision_operator,
)
from simsched.metrics import (
    PointSystem,
    ReferenceBank,
    ScoreResult,
    SeedPolicy,
    ensure_references,
)
from simsched.llmclient import ChatClient, RetryPolicy
from simsched.rng import stream
from simsched.schedule import Schedule

from conftest import Bowl


# ---------------------------------------------------------------------------
# Repair rules
# ---------------------------------------------------------------------------


def test_repair_extends_final_segment():
    out = repair_schedule([("BO-EI", 47), ("GA", 50)], budget=100)
    assert out.segments == [("BO-EI", 47), ("GA", 53)]


def test_repair_absorbs_exact_example():
    out = repair_schedule([("GA", 30), ("GA", 30)], budget=100)
    assert out.segments == [("GA", 30), ("GA", 70)]


def test_repair_clamps_nonpositive_budgets():
    out = repair_schedule([("GA", -5), ("PSO", 0), ("BO-EI", 10)], budget=20)
    assert all(t >= 1 for _, t in out.segments)
    assert out.total == 20


def test_repair_rescales_when_final_segment_collapses():
    out = repair_schedule([("GA", 60), ("PSO", 60), ("BO-EI", 60)], budget=100)
    assert out.total == 100
    assert [a for a, _ in out.segments] == ["GA", "PSO", "BO-EI"]
    assert all(t >= 1 for _, t in out.segments)


def test_repair_drops_segments_beyond_budget():
    out = repair_schedule([("GA", 1)] * 10, budget=4)
    assert len(out.segments) == 4 and out.total == 4


# ---------------------------------------------------------------------------
# Baseline reference
# ---------------------------------------------------------------------------


def _points(n):
    return [PointSystem(i, Bowl(d=2, noise=0.02, lo=-1.0, hi=2.0), 1.0 / n) for i in range(n)]


def _prepared(n_points=2, budget=8, seed=0):
    pts = _points(n_points)
    seeds = SeedPolicy(seed)
    refs = ensure_references(pts, budget, ReferenceBank(), seeds, multiplier=2)
    return pts, seeds, refs


def test_baseline_reference_single_entry():
    pts, seeds, refs = _prepared(n_points=1)
    ref = collect_baseline_reference(["GA"], pts, 8, refs=refs, seeds=seeds, multiplier=2)
    assert set(ref.entries) == {"GA"}
    assert len(ref.entries["GA"]["per_point"]) == 1


def test_baseline_reference_render_sorted_descending():
    pts, seeds, refs = _prepared()
    ref = collect_baseline_reference(
        ["GA", "PSO", "BO-EI"], pts, 8, refs=refs, seeds=seeds, multiplier=2
    )
    text = ref.render()
    scores = {a: e["S"] for a, e in ref.entries.items()}
    ranked = sorted(scores, key=lambda a: -scores[a])
    positions = [text.index(f" {a}:") for a in ranked]
    assert positions == sorted(positions)


def test_baseline_reference_recollection_byte_identical():
    pts, seeds, refs = _prepared()
    a = collect_baseline_reference(["GA", "PSO"], pts, 8, refs=refs, seeds=seeds, multiplier=2)
    b = collect_baseline_reference(["GA", "PSO"], pts, 8, refs=refs, seeds=seeds, multiplier=2)
    assert a.render() == b.render()


def test_baseline_reference_from_table_matches_rerun():
    pts, seeds, refs = _prepared()
    live = collect_baseline_reference(["GA"], pts, 8, refs=refs, seeds=seeds, multiplier=2)
    table = {
        "GA": {
            str(r["id"]): {"u": r["u"], "s": r["s"]}
            for r in live.entries["GA"]["per_point"]
        }
    }
    cached = collect_baseline_reference(
        ["GA"], pts, 8, refs=refs, seeds=seeds, multiplier=2, table=table
    )
    assert cached.entries["GA"]["S"] == pytest.approx(live.entries["GA"]["S"])


# ---------------------------------------------------------------------------
# Initial schedule
# ---------------------------------------------------------------------------


class BestBaselineOperator(RevisionOperator):
    def propose_initial(self, reference, budget):
        return Schedule([(reference.best(), budget)])

    def propose(self, schedule, trajectories, history):
        return schedule


class FailingOperator(RevisionOperator):
    def propose_initial(self, reference, budget):
        raise OperatorFailure("no endpoint")

    def propose(self, schedule, trajectories, history):
        raise OperatorFailure("no endpoint")


def _reference(entries):
    return BaselineReference(
        {a: {"S": s, "per_point": []} for a, s in entries.items()}
    )


def test_init_schedule_picks_best_baseline():
    ref = _reference({"GA": 0.4, "BO-EI": 0.7, "PSO": 0.2})
    out = init_schedule(ref, BestBaselineOperator(), budget=60)
    assert out.segments == [("BO-EI", 60)]


def test_init_schedule_fallback_on_failure():
    ref = _reference({"GA": 0.4, "BO-EI": 0.7})
    out = init_schedule(ref, FailingOperator(), budget=50)
    assert out.segments == [("BO-EI", 50)]


def test_init_schedule_repairs_underfull_proposal():
    class ShortOperator(RevisionOperator):
        def propose_initial(self, reference, budget):
            return Schedule([("GA", budget - 3)])

        def propose(self, schedule, trajectories, history):
            return schedule

    ref = _reference({"GA": 0.5})
    out = init_schedule(ref, ShortOperator(), budget=40)
    assert out.total == 40


# ---------------------------------------------------------------------------
# Epochs with a stub scorer
# ---------------------------------------------------------------------------


def _stub_scorer(score_of):
    """Deterministic scorer: looks up a schedule's score by its text form."""

    def scorer(schedule):
        s = score_of(str(schedule))
        return ScoreResult(S=s, per_point=[{"id": 0, "u": [s] * 4, "s": s, "omega": 1.0}],
                           trajectories={})

    return scorer


def test_run_epoch_noop_operator_appends_records():
    scorer = _stub_scorer(lambda text: 0.5)
    history = RevisionHistory(_reference({"GA": 0.5}))
    pi = Schedule([("GA", 10)])
    out, s, history, rounds = run_epoch(
        pi, [], BestBaselineOperator(), t_rev=3, budget=10, scorer=scorer,
        early_stop=None,
    )
    assert out == pi and s == 0.5
    assert len(history.records) == 3
    assert all(not r.accepted for r in history.records)


def test_run_epoch_accepts_strict_improvement_only():
    class OneShotImprover(RevisionOperator):
        def __init__(self):
            self.calls = 0

        def propose(self, schedule, trajectories, history):
            self.calls += 1
            if self.calls == 1:
                return Schedule([("BO-EI", schedule.total)])
            return schedule  # equal score afterwards: never re-accepted

    scores = {"GA(10)": 0.4, "BO-EI(10)": 0.9}
    scorer = _stub_scorer(lambda text: scores[text])
    out, s, history, rounds = run_epoch(
        Schedule([("GA", 10)]), [], OneShotImprover(), t_rev=3, budget=10,
        scorer=scorer, early_stop=None,
    )
    assert out.segments == [("BO-EI", 10)]
    assert s == 0.9
    assert [r.accepted for r in history.records] == [True, False, False]


def test_run_epoch_train_scores_nondecreasing():
    rng = stream(5)

    class Jitter(RevisionOperator):
        def propose(self, schedule, trajectories, history):
            return Schedule([("GA", schedule.total)]) if rng.random() < 0.5 else Schedule(
                [("PSO", schedule.total)]
            )

    values = {"GA(12)": 0.3, "PSO(12)": 0.6, "BO-EI(12)": 0.1}
    scorer = _stub_scorer(lambda text: values[text])
    _, _, _, rounds = run_epoch(
        Schedule([("BO-EI", 12)]), [], Jitter(), t_rev=6, budget=12,
        scorer=scorer, early_stop=None,
    )
    s_seq = [r["S_train"] for r in rounds]
    assert all(s_seq[i + 1] >= s_seq[i] - 1e-12 for i in range(len(s_seq) - 1))


def test_run_epoch_operator_failure_leaves_note():
    scorer = _stub_scorer(lambda text: 0.5)
    out, s, history, rounds = run_epoch(
        Schedule([("GA", 10)]), [], FailingOperator(), t_rev=2, budget=10,
        scorer=scorer, early_stop=None,
    )
    assert out.segments == [("GA", 10)]
    assert [r.kind for r in history.records] == ["failure", "failure"]
    assert all(r["failed"] for r in rounds)


def test_run_epoch_early_stop_after_stale_rounds():
    scorer = _stub_scorer(lambda text: 0.5)
    _, _, history, rounds = run_epoch(
        Schedule([("GA", 10)]), [], BestBaselineOperator(), t_rev=10, budget=10,
        scorer=scorer, early_stop=3,
    )
    assert len(rounds) == 3  # stopped after three consecutive non-improvements


# ---------------------------------------------------------------------------
# Full learning loop on real (tiny) ensembles
# ---------------------------------------------------------------------------


def _meta_inputs(n_points=6, seed=0):
    dataset = build_meta_dataset([0.04, 0.07], M=n_points, params={"strata": 1},
                                 rng=stream(seed, "ds"))
    pts = [
        PointSystem(i, Bowl(d=2, noise=0.02, lo=-1.0, hi=2.0), dataset.points[i].omega)
        for i in range(n_points)
    ]
    return dataset, pts


def test_learn_schedule_degenerate_returns_initial():
    dataset, pts = _meta_inputs()
    config = MetaConfig(budget=8, runs=1, epochs=1, t_rev=0, baselines=("GA", "PSO"),
                        multiplier=2, seed=3)
    operator = scripted_revision_operator("segment-swap", stream(4))
    pi, report = learn_schedule(dataset, pts, config, operator)
    assert len(pi.segments) == 1  # the initial best-baseline schedule survives
    assert report["runs"][0]["epochs"][0]["rounds"] == []


def test_learn_schedule_epoch_gap_rejection():
    dataset, pts = _meta_inputs()

    class Improver(RevisionOperator):
        def propose_initial(self, reference, budget):
            return Schedule([(reference.best(), budget)])

        def propose(self, schedule, trajectories, history):
            return Schedule([("BO-EI", schedule.total)])

    config = MetaConfig(budget=8, runs=1, epochs=2, t_rev=1, eps_gap=1e-12,
                        baselines=("GA",), multiplier=2, seed=5)
    pi, report = learn_schedule(dataset, pts, config, Improver())
    epochs = report["runs"][0]["epochs"]
    rejected = [e for e in epochs if not e["accepted"]]
    for e in rejected:
        assert abs(e["S_train"] - e["S_val"]) > config.eps_gap
    if all(not e["accepted"] for e in epochs):
        assert pi.segments == [("GA", 8)]  # initial schedule retained


def test_learn_schedule_argmax_over_runs():
    dataset, pts = _meta_inputs(seed=7)
    config = MetaConfig(budget=8, runs=2, epochs=1, t_rev=1, eps_gap=1.0,
                        baselines=("GA", "PSO"), multiplier=2, seed=9)
    operator = scripted_revision_operator("cycle", stream(10))
    pi, report = learn_schedule(dataset, pts, config, operator)
    best = max(report["runs"], key=lambda r: r["S_test"])
    assert report["pi_star"] == best["final_schedule"] == str(pi)
    assert report["S_test"] == pytest.approx(best["S_test"])


def test_learn_schedule_reproducible():
    dataset, pts = _meta_inputs(seed=11)
    config = MetaConfig(budget=8, runs=1, epochs=1, t_rev=2, baselines=("GA", "PSO"),
                        multiplier=2, seed=13)
    a = learn_schedule(dataset, pts, config, scripted_revision_operator("cycle", stream(14)))
    b = learn_schedule(dataset, pts, config, scripted_revision_operator("cycle", stream(14)))
    assert json.dumps(a[1], sort_keys=True) == json.dumps(b[1], sort_keys=True)


def test_learn_schedule_validates_point_coverage():
    dataset, pts = _meta_inputs()
    config = MetaConfig(budget=8, multiplier=2)
    with pytest.raises(InvalidInput):
        learn_schedule(dataset, pts[:-1], config, scripted_revision_operator())


def test_meta_config_validation():
    with pytest.raises(InvalidInput):
        MetaConfig(budget=10, runs=0)
    with pytest.raises(InvalidInput):
        MetaConfig(budget=10, eps_gap=0.0)
    MetaConfig(budget=10, t_rev=0)  # degenerate revision count is allowed


# ---------------------------------------------------------------------------
# Scripted operator moves
# ---------------------------------------------------------------------------


def test_scripted_boundary_shift_example():
    op = scripted_revision_operator("boundary-shift", stream(1))
    out = op._boundary_shift(Schedule([("BO-EI", 50), ("GA", 50)]), delta=10)
    assert out.segments == [("BO-EI", 60), ("GA", 40)]


def test_scripted_moves_preserve_total():
    history = RevisionHistory(_reference({"GA": 0.3, "BO-EI": 0.8}))
    for strategy in ("segment-swap", "boundary-shift", "best-baseline-splice", "cycle"):
        op = scripted_revision_operator(strategy, stream(2))
        sched = Schedule([("GA", 30), ("PSO", 30), ("BO-EI", 40)])
        for _ in range(10):
            out = op.propose(sched, {}, history)
            assert out.total == 100


def test_scripted_segment_swap_single_segment_noop():
    op = scripted_revision_operator("segment-swap", stream(3))
    sched = Schedule([("GA", 20)])
    assert op.propose(sched, {}, RevisionHistory(_reference({"GA": 0.5}))) == sched


def test_scripted_splice_replaces_worst_segment():
    op = scripted_revision_operator("best-baseline-splice", stream(4))
    history = RevisionHistory(_reference({"GA": 0.2, "BO-EI": 0.9, "PSO": 0.5}))
    out = op.propose(Schedule([("GA", 50), ("PSO", 50)]), {}, history)
    assert out.segments == [("BO-EI", 50), ("PSO", 50)]


# ---------------------------------------------------------------------------
# Endpoint-backed operator against a stub server
# ---------------------------------------------------------------------------


class StubHandler(BaseHTTPRequestHandler):
    replies: list[str] = []

    def do_POST(self):
        self.rfile.read(int(self.headers["Content-Length"]))
        reply = type(self).replies.pop(0) if type(self).replies else "GA(10)"
        payload = json.dumps({"choices": [{"message": {"content": reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_endpoint():
    server = HTTPServer(("127.0.0.1", 0), StubHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    StubHandler.replies = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def _llm_op(endpoint):
    client = ChatClient(endpoint=endpoint, model_name="stub",
                        retry=RetryPolicy(max_retries=1, base_delay=0.01))
    return LLMRevisionOperator(client)


def test_llm_operator_parses_schedule(stub_endpoint):
    StubHandler.replies = ["BO-EI(50)->GA(50)"]
    op = _llm_op(stub_endpoint)
    out = op.propose(Schedule([("GA", 100)]), {}, RevisionHistory(_reference({"GA": 0.5})))
    assert out.segments == [("BO-EI", 50), ("GA", 50)]


def test_llm_operator_repairs_budget(stub_endpoint):
    StubHandler.replies = ["GA(30)->GA(30)"]
    op = _llm_op(stub_endpoint)
    out = op.propose(Schedule([("GA", 100)]), {}, RevisionHistory(_reference({"GA": 0.5})))
    assert out.segments == [("GA", 30), ("GA", 70)]


def test_llm_operator_prose_falls_back_to_input(stub_endpoint):
    StubHandler.replies = ["I would explore more and exploit less."]
    op = _llm_op(stub_endpoint)
    current = Schedule([("PSO", 40)])
    out = op.propose(current, {}, RevisionHistory(_reference({"GA": 0.5})))
    assert out == current


def test_llm_operator_transport_error_is_operator_failure():
    op = llm_revision_operator("http://127.0.0.1:9/unreachable", "m")
    op.client.retry = RetryPolicy(max_retries=0, base_delay=0.01)
    with pytest.raises(OperatorFailure):
        op.propose(Schedule([("GA", 10)]), {}, RevisionHistory(_reference({"GA": 0.5})))


def test_llm_operator_unknown_algorithm_rejected(stub_endpoint):
    StubHandler.replies = ["CMA-ES(100)"]
    op = _llm_op(stub_endpoint)
    current = Schedule([("GA", 100)])
    out = op.propose(current, {}, RevisionHistory(_reference({"GA": 0.5})))
    assert out == current
