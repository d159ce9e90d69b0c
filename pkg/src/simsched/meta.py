"""Epoch-based schedule learning: baseline reference collection, initial
schedule proposal, intra-epoch trajectory-guided revisions with strict
accept-if-better, gap-checked epoch acceptance, outer runs, and final
selection on the fixed test split.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .ensemble import MetaDataset, partition_train_val
from .errors import InvalidInput, OperatorFailure
from .llmclient import ChatClient
from .metrics import (
    DEFAULT_LAMBDA,
    DEFAULT_MULTIPLIER,
    PointSystem,
    ReferenceBank,
    ScoreResult,
    SeedPolicy,
    check_metric_weights,
    ensure_references,
    score_and_log,
)
from .optimizers import BASELINE_IDS
from .rng import stream
from .schedule import Schedule, format_schedule, parse_schedule

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

_SCHEDULE_PATTERN = re.compile(
    r"[A-Za-z][A-Za-z0-9_-]*\s*\(\s*\d+\s*\)(?:\s*->\s*[A-Za-z][A-Za-z0-9_-]*\s*\(\s*\d+\s*\))*"
)


# ---------------------------------------------------------------------------
# Schedule repair
# ---------------------------------------------------------------------------


def repair_schedule(segments, budget: int) -> Schedule:
    """Normalize a proposed segment list so budgets are >= 1 and sum to
    ``budget``: clamp, let the final segment absorb the residual, and fall
    back to proportional rescaling with largest-remainder rounding."""
    segs = [(str(a).upper(), int(t)) for a, t in segments]
    if not segs:
        raise InvalidInput("cannot repair an empty schedule")
    if len(segs) > budget:
        segs = segs[:budget]
    budgets = [max(1, t) for _, t in segs]
    head = sum(budgets[:-1])
    if budget - head >= 1:
        budgets[-1] = budget - head
    else:
        raw = np.maximum(np.array([t for _, t in segs], dtype=float), 1.0)
        scaled = raw * budget / raw.sum()
        base = np.maximum(np.floor(scaled).astype(int), 1)
        remainder = scaled - np.floor(scaled)
        diff = budget - int(base.sum())
        order = np.argsort(-remainder, kind="stable")
        i = 0
        while diff != 0:
            j = order[i % len(segs)]
            if diff > 0:
                base[j] += 1
                diff -= 1
            elif base[j] > 1:
                base[j] -= 1
                diff += 1
            i += 1
        budgets = [int(b) for b in base]
    return Schedule([(a, t) for (a, _), t in zip(segs, budgets)])


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------


@dataclass
class RevisionRecord:
    schedule: Schedule
    per_point: list[dict]
    train_score: float
    accepted: bool
    rationale: str = ""
    kind: str = "candidate"  # or "failure"

    def to_dict(self) -> dict:
        return {
            "schedule": str(self.schedule),
            "per_point": self.per_point,
            "train_score": self.train_score,
            "accepted": self.accepted,
            "rationale": self.rationale,
            "kind": self.kind,
        }


@dataclass
class BaselineReference:
    """Per-baseline scores and metric tables plus a rendered summary block."""

    entries: dict[str, dict]  # algo id -> {"S": float, "per_point": [...]}

    def best(self) -> str:
        return max(self.entries, key=lambda a: (self.entries[a]["S"], a))

    def render(self) -> str:
        lines = ["Baseline reference (importance-weighted scores, higher is better):"]
        ranked = sorted(self.entries.items(), key=lambda kv: -kv[1]["S"])
        for rank, (algo, entry) in enumerate(ranked, start=1):
            lines.append(f"  {rank}. {algo}: S={entry['S']:.6f}")
            for row in entry["per_point"]:
                u = ", ".join(f"{v:.4f}" for v in row["u"])
                lines.append(f"      point {row['id']}: u=[{u}] s={row['s']:.6f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"entries": self.entries}


@dataclass
class RevisionHistory:
    """Within-epoch memory: the baseline reference survives epoch resets,
    candidate records do not."""

    baseline_reference: BaselineReference
    records: list[RevisionRecord] = field(default_factory=list)
    current_schedule: Schedule | None = None
    current_score: float | None = None

    def reset_for_epoch(self) -> "RevisionHistory":
        return RevisionHistory(baseline_reference=self.baseline_reference)

    def render(self, max_records: int = 20) -> str:
        parts = [self.baseline_reference.render()]
        if self.current_schedule is not None:
            parts.append(
                f"Current schedule: {self.current_schedule} "
                f"(train score {self.current_score:.6f})"
            )
        for rec in self.records[-max_records:]:
            verdict = "accepted" if rec.accepted else "rejected"
            if rec.kind == "failure":
                parts.append(f"Attempt failed: {rec.rationale}")
            else:
                parts.append(
                    f"Candidate {rec.schedule}: score {rec.train_score:.6f} ({verdict})"
                )
        return "\n".join(parts)


class RevisionOperator:
    """Abstract proposer of revised schedules."""

    def propose(
        self,
        schedule: Schedule,
        trajectories: dict,
        history: RevisionHistory,
    ) -> Schedule:
        raise NotImplementedError

    def propose_initial(self, reference: BaselineReference, budget: int) -> Schedule:
        raise OperatorFailure("operator does not propose initial schedules")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def collect_baseline_reference(
    baselines,
    split: list[PointSystem],
    budget: int,
    lam=DEFAULT_LAMBDA,
    refs: ReferenceBank | None = None,
    seeds: SeedPolicy | None = None,
    multiplier: int = DEFAULT_MULTIPLIER,
    jobs: int = 1,
    table: dict | None = None,
) -> BaselineReference:
    """Score every baseline as a single-segment schedule on the split.

    With a precomputed per-point ``table`` (as written by the baselines
    pipeline stage) the scores are aggregated instead of re-run; evaluation
    seeds are per point, so both paths agree.
    """
    if not baselines:
        raise InvalidInput("need at least one baseline")
    entries: dict[str, dict] = {}
    for algo in baselines:
        if table is not None and algo in table:
            rows = [dict(table[algo][str(p.point_id)], id=p.point_id, omega=p.omega)
                    for p in sorted(split, key=lambda q: q.point_id)]
            num = sum(r["omega"] * r["s"] for r in rows)
            den = sum(r["omega"] for r in rows)
            entries[algo] = {"S": num / den, "per_point": rows}
        else:
            result = score_and_log(
                Schedule([(algo, budget)]), split, budget, lam, refs, seeds,
                multiplier=multiplier, jobs=jobs,
            )
            entries[algo] = {"S": result.S, "per_point": result.per_point}
    return BaselineReference(entries)


def init_schedule(reference: BaselineReference, operator: RevisionOperator, budget: int) -> Schedule:
    """Ask the operator for an opening schedule; fall back to a single
    segment of the best baseline when it cannot deliver."""
    try:
        proposed = operator.propose_initial(reference, budget)
        return repair_schedule(proposed.segments, budget)
    except OperatorFailure as exc:
        log.warning("initial proposal failed (%s); using best baseline", exc)
        return Schedule([(reference.best(), budget)])


def run_epoch(
    pi_in: Schedule,
    split: list[PointSystem],
    operator: RevisionOperator,
    t_rev: int,
    budget: int,
    lam=DEFAULT_LAMBDA,
    refs: ReferenceBank | None = None,
    seeds: SeedPolicy | None = None,
    history: RevisionHistory | None = None,
    multiplier: int = DEFAULT_MULTIPLIER,
    early_stop: int | None = 3,
    jobs: int = 1,
    scorer=None,
) -> tuple[Schedule, float, RevisionHistory, list[dict]]:
    """One epoch of trajectory-guided revisions with strict accept-if-better.

    Every candidate (accepted or not) lands in the history; operator
    failures are logged as failure notes and the round is skipped.  With
    ``early_stop`` set, the epoch ends after that many consecutive
    non-improvements.
    """
    if t_rev < 0:
        raise InvalidInput("revision count must be non-negative")
    if scorer is None:
        def scorer(sched: Schedule) -> ScoreResult:
            return score_and_log(sched, split, budget, lam, refs, seeds,
                                 multiplier=multiplier, jobs=jobs)
    if history is None:
        history = RevisionHistory(BaselineReference(entries={}))

    current = scorer(pi_in)
    pi_cur, s_cur, traj_cur = pi_in, current.S, current.trajectories
    history.current_schedule = pi_cur
    history.current_score = s_cur
    rounds: list[dict] = []
    stale = 0

    for t in range(1, t_rev + 1):
        try:
            raw = operator.propose(pi_cur, traj_cur, history)
            candidate = repair_schedule(raw.segments, budget)
        except OperatorFailure as exc:
            log.warning("revision round %d skipped: %s", t, exc)
            history.records.append(
                RevisionRecord(pi_cur, [], s_cur, False, rationale=str(exc), kind="failure")
            )
            rounds.append({"round": t, "failed": True, "S_train": s_cur})
            continue
        result = scorer(candidate)
        accepted = result.S > s_cur
        history.records.append(
            RevisionRecord(candidate, result.per_point, result.S, accepted)
        )
        rounds.append(
            {"round": t, "candidate": str(candidate), "S_cand": result.S,
             "accepted": accepted, "S_train": result.S if accepted else s_cur}
        )
        if accepted:
            pi_cur, s_cur, traj_cur = candidate, result.S, result.trajectories
            history.current_schedule = pi_cur
            history.current_score = s_cur
            stale = 0
        else:
            stale += 1
            if early_stop is not None and stale >= early_stop:
                break
    return pi_cur, s_cur, history, rounds


@dataclass
class MetaConfig:
    budget: int
    runs: int = 2  # outer runs (fresh train/val partitions)
    epochs: int = 3
    t_rev: int = 5  # revision rounds per epoch
    eps_gap: float = 0.05  # train/validation generalization gap
    baselines: tuple = BASELINE_IDS
    lam: tuple = DEFAULT_LAMBDA
    seed: int = 0
    early_stop: int | None = 3
    multiplier: int = DEFAULT_MULTIPLIER
    strata: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.runs < 1 or self.epochs < 1 or self.t_rev < 0 or self.budget < 1:
            raise InvalidInput("runs and epochs must be >= 1, t_rev >= 0")
        if self.eps_gap <= 0:
            raise InvalidInput("eps_gap must be positive")
        check_metric_weights(self.lam)


def learn_schedule(
    dataset: MetaDataset,
    point_systems: list[PointSystem],
    config: MetaConfig,
    operator: RevisionOperator,
    refs: ReferenceBank | None = None,
    baseline_table: dict | None = None,
    history_sink=None,
) -> tuple[Schedule, dict]:
    """Outer learning loop over the meta-dataset.

    The test split stays fixed; each outer run re-partitions the remaining
    points into train/validation (importance-weight aware), collects its
    baseline reference, runs epochs of revisions, and accepts an epoch only
    when the train and validation scores agree within ``eps_gap``.  The
    schedule scoring best on the test split across runs is returned with a
    full report."""
    by_id = {p.point_id: p for p in point_systems}
    if sorted(by_id) != list(range(len(dataset.points))):
        raise InvalidInput("point systems must cover the dataset's point ids")
    seeds = SeedPolicy(config.seed)
    refs = refs if refs is not None else ReferenceBank()
    ensure_references(point_systems, config.budget, refs, seeds, config.multiplier)

    def emit(record: dict) -> None:
        if history_sink is not None:
            history_sink(record)

    test_idx = list(dataset.splits["test"])
    pool = sorted(set(range(len(dataset.points))) - set(test_idx))
    omegas = np.array([p.omega for p in dataset.points])
    kls = np.array([p.kl for p in dataset.points])
    ratio_train = len(dataset.splits["train"]) / max(1, len(pool))
    ratio_train = min(max(ratio_train, 0.5), 0.95)
    test_pts = [by_id[i] for i in test_idx]

    runs_report = []
    best_run, best_test, pi_star = None, -np.inf, None
    for r in range(1, config.runs + 1):
        rng_r = stream(config.seed, "partition", r)
        train_idx, val_idx = partition_train_val(
            pool, omegas, ratio_train, rng_r, n_strata=config.strata, kls=kls
        )
        train_pts = [by_id[i] for i in train_idx]
        val_pts = [by_id[i] for i in val_idx]

        reference = collect_baseline_reference(
            config.baselines, train_pts, config.budget, config.lam, refs, seeds,
            config.multiplier, config.jobs, table=baseline_table,
        )
        emit({"event": "baseline_reference", "run": r,
              "entries": {a: e["S"] for a, e in reference.entries.items()}})

        pi_acc = init_schedule(reference, operator, config.budget)
        emit({"event": "init_schedule", "run": r, "schedule": str(pi_acc)})

        epochs_report = []
        for e in range(1, config.epochs + 1):
            history = RevisionHistory(baseline_reference=reference)
            start_schedule = pi_acc
            pi_out, s_train, history, rounds = run_epoch(
                pi_acc, train_pts, operator, config.t_rev, config.budget,
                config.lam, refs, seeds, history, config.multiplier,
                config.early_stop, config.jobs,
            )
            s_val = score_and_log(
                pi_out, val_pts, config.budget, config.lam, refs, seeds,
                multiplier=config.multiplier, jobs=config.jobs,
            ).S
            accepted = abs(s_train - s_val) <= config.eps_gap
            if accepted:
                pi_acc = pi_out
            epochs_report.append(
                {"epoch": e, "S_train": s_train, "S_val": s_val,
                 "accepted": accepted, "schedule": str(pi_out),
                 "start_schedule": str(start_schedule), "rounds": rounds,
                 "history_records": [rec.to_dict() for rec in history.records]}
            )
            emit({"event": "epoch", "run": r, "epoch": e, "S_train": s_train,
                  "S_val": s_val, "accepted": accepted, "schedule": str(pi_out)})

        s_test = score_and_log(
            pi_acc, test_pts, config.budget, config.lam, refs, seeds,
            multiplier=config.multiplier, jobs=config.jobs,
        ).S
        runs_report.append(
            {"run": r, "train_points": train_idx, "val_points": val_idx,
             "epochs": epochs_report, "final_schedule": str(pi_acc), "S_test": s_test}
        )
        emit({"event": "run_done", "run": r, "final_schedule": str(pi_acc),
              "S_test": s_test})
        if s_test > best_test:
            best_test, best_run, pi_star = s_test, r, pi_acc

    report = {
        "schema_version": SCHEMA_VERSION,
        "pi_star": str(pi_star),
        "best_run": best_run,
        "S_test": best_test,
        "runs": runs_report,
        "test_points": test_idx,
        "config": {
            "budget": config.budget, "runs": config.runs, "epochs": config.epochs,
            "t_rev": config.t_rev, "eps_gap": config.eps_gap,
            "baselines": list(config.baselines), "lam": list(config.lam),
            "seed": config.seed, "multiplier": config.multiplier,
        },
    }
    return pi_star, report


# ---------------------------------------------------------------------------
# Revision operators
# ---------------------------------------------------------------------------

SCRIPTED_STRATEGIES = ("segment-swap", "boundary-shift", "best-baseline-splice", "cycle")


class ScriptedRevisionOperator(RevisionOperator):
    """Deterministic neighborhood moves on the current schedule; a fully
    offline stand-in for a language-model reviser."""

    def __init__(self, strategy: str = "cycle", rng: np.random.Generator | None = None):
        if strategy not in SCRIPTED_STRATEGIES:
            raise InvalidInput(f"unknown strategy {strategy!r}")
        self.strategy = strategy
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._calls = 0

    def propose_initial(self, reference: BaselineReference, budget: int) -> Schedule:
        return Schedule([(reference.best(), budget)])

    def propose(self, schedule: Schedule, trajectories, history: RevisionHistory) -> Schedule:
        strategy = self.strategy
        if strategy == "cycle":
            strategy = SCRIPTED_STRATEGIES[self._calls % 3]
        self._calls += 1
        if strategy == "segment-swap":
            return self._segment_swap(schedule)
        if strategy == "boundary-shift":
            return self._boundary_shift(schedule)
        return self._best_baseline_splice(schedule, history)

    def _segment_swap(self, schedule: Schedule) -> Schedule:
        segs = list(schedule.segments)
        if len(segs) < 2:
            return schedule
        i, j = sorted(self.rng.choice(len(segs), size=2, replace=False))
        segs[i], segs[j] = (segs[j][0], segs[i][1]), (segs[i][0], segs[j][1])
        return Schedule(segs)

    def _boundary_shift(self, schedule: Schedule, delta: int | None = None) -> Schedule:
        segs = list(schedule.segments)
        total = schedule.total
        if len(segs) < 2:
            # give a single segment a second phase to move budget into
            algo = segs[0][0]
            other = "GA" if algo != "GA" else "BO-EI"
            half = max(1, total // 2)
            return repair_schedule([(algo, total - half), (other, half)], total)
        k = int(self.rng.integers(0, len(segs) - 1))
        if delta is None:
            step = max(1, round(0.1 * total))
            delta = step if self.rng.random() < 0.5 else -step
        left, right = segs[k], segs[k + 1]
        moved = max(1 - left[1], min(delta, right[1] - 1))
        segs[k] = (left[0], left[1] + moved)
        segs[k + 1] = (right[0], right[1] - moved)
        return Schedule(segs)

    def _best_baseline_splice(self, schedule: Schedule, history: RevisionHistory) -> Schedule:
        entries = history.baseline_reference.entries
        if not entries:
            return schedule
        best = history.baseline_reference.best()
        segs = list(schedule.segments)
        scored = [
            (entries[a]["S"] if a in entries else -np.inf, i)
            for i, (a, _) in enumerate(segs)
        ]
        worst_i = min(scored)[1]
        segs[worst_i] = (best, segs[worst_i][1])
        return Schedule(segs)


def scripted_revision_operator(
    strategy: str = "cycle", rng: np.random.Generator | None = None
) -> ScriptedRevisionOperator:
    return ScriptedRevisionOperator(strategy, rng)


DEFAULT_REVISION_PROMPT = (
    "You revise phased schedules of simulation-optimization algorithms. "
    "A schedule is written as ALGO(T)->ALGO(T) with budgets summing to {budget}. "
    "Available algorithms: {algorithms}. Reply with one schedule on a single "
    "line and nothing else."
)


class LLMRevisionOperator(RevisionOperator):
    """Chat-endpoint-backed reviser.

    The prompt carries the baseline reference, the within-epoch history, and
    capped trajectory digests.  Unparseable replies fall back to the input
    schedule; transport errors surface as operator failures so the round is
    skipped."""

    def __init__(
        self,
        client: ChatClient,
        prompt_template: str = DEFAULT_REVISION_PROMPT,
        algorithms=BASELINE_IDS,
        max_points: int = 8,
        max_samples: int = 20,
    ):
        self.client = client
        self.prompt_template = prompt_template
        self.algorithms = tuple(a.upper() for a in algorithms)
        self.max_points = max_points
        self.max_samples = max_samples

    def _digest(self, trajectories: dict) -> str:
        lines = []
        for pid in sorted(trajectories)[: self.max_points]:
            ys = trajectories[pid].ys()
            best = np.minimum.accumulate(ys)
            idx = np.linspace(0, len(best) - 1, min(self.max_samples, len(best))).astype(int)
            series = ", ".join(f"{best[i]:.4g}" for i in idx)
            lines.append(f"point {pid}: best-so-far [{series}]")
        return "\n".join(lines)

    def _parse_reply(self, reply: str, fallback: Schedule, budget: int) -> Schedule:
        matches = _SCHEDULE_PATTERN.findall(reply)
        for text in reversed(matches):
            try:
                proposed = parse_schedule(text)
            except InvalidInput:
                continue
            if all(a in self.algorithms for a, _ in proposed.segments):
                return repair_schedule(proposed.segments, budget)
        log.warning("revision reply had no usable schedule; keeping current")
        return fallback

    def propose(self, schedule: Schedule, trajectories, history: RevisionHistory) -> Schedule:
        budget = schedule.total
        system_msg = self.prompt_template.format(
            budget=budget, algorithms=", ".join(self.algorithms)
        )
        user_msg = "\n\n".join(
            [
                history.render(),
                "Recent trajectories:\n" + self._digest(trajectories),
                f"Propose a revision of {format_schedule(schedule)}.",
            ]
        )
        try:
            reply = self.client.complete(
                [{"role": "system", "content": system_msg},
                 {"role": "user", "content": user_msg}]
            )
        except Exception as exc:  # transport or protocol failure
            raise OperatorFailure(f"revision endpoint unavailable: {exc}") from exc
        return self._parse_reply(reply, schedule, budget)

    def propose_initial(self, reference: BaselineReference, budget: int) -> Schedule:
        system_msg = self.prompt_template.format(
            budget=budget, algorithms=", ".join(self.algorithms)
        )
        user_msg = reference.render() + "\n\nPropose an initial schedule."
        try:
            reply = self.client.complete(
                [{"role": "system", "content": system_msg},
                 {"role": "user", "content": user_msg}]
            )
        except Exception as exc:
            raise OperatorFailure(f"revision endpoint unavailable: {exc}") from exc
        matches = _SCHEDULE_PATTERN.findall(reply)
        for text in reversed(matches):
            try:
                proposed = parse_schedule(text)
            except InvalidInput:
                continue
            if all(a in self.algorithms for a, _ in proposed.segments):
                return repair_schedule(proposed.segments, budget)
        raise OperatorFailure("initial proposal reply had no usable schedule")


def llm_revision_operator(
    endpoint: str,
    model_name: str,
    api_key_env: str = "ADVISOR_API_KEY",
    prompt_template: str = DEFAULT_REVISION_PROMPT,
    algorithms=BASELINE_IDS,
) -> LLMRevisionOperator:
    return LLMRevisionOperator(
        ChatClient(endpoint=endpoint, model_name=model_name, api_key_env=api_key_env),
        prompt_template,
        algorithms,
    )


def save_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
