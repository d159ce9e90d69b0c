"""Causal-structure discovery over a variable catalog.

A directed acyclic graph is grown by breadth-first expansion queries against
a pluggable advisor (an LLM endpoint in production, a scripted double in
tests).  Admissibility checks keep the objective a sink, inputs exogenous,
and the graph acyclic regardless of what the advisor proposes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AdvisorUnavailable, DiscoveryTruncated, InvalidInput, UnknownVariable
from .llmclient import ChatClient, RetryPolicy, parse_json_name_list

log = logging.getLogger(__name__)

KINDS = ("input", "latent", "objective")
DEFAULT_CHAR_BUDGET = 20_000


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class VariableSpec:
    name: str
    description: str = ""
    kind: str = "latent"
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown variable kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidInput("variable dim must be >= 1")


def validate_catalog(catalog: list[VariableSpec]) -> None:
    names = [v.name for v in catalog]
    if len(set(names)) != len(names):
        raise InvalidInput("variable names must be unique")
    objectives = [v for v in catalog if v.kind == "objective"]
    if len(objectives) != 1:
        raise InvalidInput("catalog needs exactly one objective variable")


@dataclass
class CausalSkeleton:
    """DAG over the cataloged variables; the structural prior for learning."""

    variables: list[VariableSpec]
    edges: set[tuple[str, str]] = field(default_factory=set)
    incomplete: bool = False

    def __post_init__(self):
        validate_catalog(self.variables)
        self.edges = set(tuple(e) for e in self.edges)
        self._assert_valid()

    def _assert_valid(self):
        names = {v.name for v in self.variables}
        obj = self.objective
        inputs = set(self.input_names)
        for u, v in self.edges:
            if u not in names or v not in names:
                raise UnknownVariable(f"edge ({u}, {v}) names an uncataloged variable")
            if u == obj:
                raise InvalidInput("objective must be a sink")
            if v in inputs:
                raise InvalidInput("inputs must stay exogenous")
        if self.topological_order() is None:
            raise InvalidInput("edge set contains a cycle")

    @property
    def objective(self) -> str:
        return next(v.name for v in self.variables if v.kind == "objective")

    @property
    def input_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == "input"]

    @property
    def latent_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == "latent"]

    def spec(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise UnknownVariable(name)

    def parents(self, name: str) -> list[str]:
        order = {v.name: i for i, v in enumerate(self.variables)}
        return sorted((u for u, v in self.edges if v == name), key=order.__getitem__)

    def children(self, name: str) -> list[str]:
        order = {v.name: i for i, v in enumerate(self.variables)}
        return sorted((v for u, v in self.edges if u == name), key=order.__getitem__)

    def topological_order(self) -> list[str] | None:
        """Kahn's algorithm; ``None`` when a cycle is present."""
        names = [v.name for v in self.variables]
        indeg = {n: 0 for n in names}
        for _, v in self.edges:
            indeg[v] += 1
        queue = [n for n in names if indeg[n] == 0]
        out: list[str] = []
        while queue:
            n = queue.pop(0)
            out.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        return out if len(out) == len(names) else None

    def reachable_from_inputs(self) -> set[str]:
        seen = set(self.input_names)
        frontier = list(seen)
        while frontier:
            n = frontier.pop()
            for c in self.children(n):
                if c not in seen:
                    seen.add(c)
                    frontier.append(c)
        return seen

    def to_dict(self) -> dict:
        doc = {
            "variables": [
                {"name": v.name, "description": v.description, "kind": v.kind, "dim": v.dim}
                for v in self.variables
            ],
            "edges": sorted([list(e) for e in self.edges]),
        }
        if self.incomplete:
            doc["incomplete"] = True
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CausalSkeleton":
        variables = [
            VariableSpec(v["name"], v.get("description", ""), v.get("kind", "latent"), v.get("dim", 1))
            for v in doc["variables"]
        ]
        skel = cls(variables, {tuple(e) for e in doc.get("edges", [])})
        skel.incomplete = bool(doc.get("incomplete", False))
        return skel


def save_skeleton(skel: CausalSkeleton, path) -> None:
    with open(path, "w") as fh:
        json.dump(skel.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_skeleton(path) -> CausalSkeleton:
    with open(path) as fh:
        return CausalSkeleton.from_dict(json.load(fh))


def load_catalog(path) -> list[VariableSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    catalog = [
        VariableSpec(v["name"], v.get("description", ""), v.get("kind", "latent"), v.get("dim", 1))
        for v in doc["variables"]
    ]
    validate_catalog(catalog)
    return catalog


@dataclass
class DiscoveryHistory:
    """Running prompt context for a discovery session."""

    instructions: str = ""
    catalog_digest: str = ""
    accepted_edges: list[tuple[str, str]] = field(default_factory=list)
    prose: list[str] = field(default_factory=list)
    turn_count: int = 0
    char_budget: int = DEFAULT_CHAR_BUDGET

    def note(self, line: str) -> None:
        self.prose.append(line)

    def render(self) -> str:
        parts = [self.instructions, self.catalog_digest]
        parts.append("Accepted edges so far: " + json.dumps([list(e) for e in self.accepted_edges]))
        parts.extend(self.prose)
        return "\n".join(p for p in parts if p)


class Advisor:
    """Abstract structure advisor.

    ``expand`` proposes the children of a node, ``select_exogenous`` picks
    root variables, ``compact`` shortens a history's prose.  Replies are
    always filtered to cataloged names by the discovery loop.
    """

    def expand(self, node: str, history: DiscoveryHistory) -> list[str]:
        raise NotImplementedError

    def select_exogenous(self, catalog: list[VariableSpec]) -> list[str]:
        return [v.name for v in catalog if v.kind == "input"]

    def compact(self, history: DiscoveryHistory) -> DiscoveryHistory:
        raise AdvisorUnavailable("advisor does not support compaction")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

_REJECTION_REASONS = ("SinkViolation", "ExogeneityViolation", "CycleViolation", "Duplicate")


@dataclass
class InsertResult:
    accepted: bool
    reason: str | None = None  # one of _REJECTION_REASONS when rejected


def _creates_cycle(edges: set[tuple[str, str]], u: str, v: str) -> bool:
    # Cycle iff u is reachable from v under the tentative edge set.
    adjacency: dict[str, list[str]] = {}
    for a, b in edges | {(u, v)}:
        adjacency.setdefault(a, []).append(b)
    frontier, seen = [v], {v}
    while frontier:
        n = frontier.pop()
        if n == u:
            return True
        for c in adjacency.get(n, ()):
            if c not in seen:
                seen.add(c)
                frontier.append(c)
    return False


def try_insert_edge(skel: CausalSkeleton, u: str, v: str) -> InsertResult:
    """Admissibility-checked edge insertion; mutates ``skel`` only on accept."""
    edges = skel.edges
    names = {s.name for s in skel.variables}
    if u not in names or v not in names:
        raise UnknownVariable(f"({u}, {v}) references an uncataloged variable")
    if u == skel.objective:
        return InsertResult(False, "SinkViolation")
    if v in skel.input_names:
        return InsertResult(False, "ExogeneityViolation")
    if (u, v) in edges:
        return InsertResult(False, "Duplicate")
    if u == v or _creates_cycle(edges, u, v):
        return InsertResult(False, "CycleViolation")
    edges.add((u, v))
    return InsertResult(True)


def discover_skeleton(
    catalog: list[VariableSpec],
    advisor: Advisor,
    max_turns: int | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    instructions: str = "",
) -> tuple[CausalSkeleton, DiscoveryHistory]:
    """Breadth-first structure discovery with per-edge admissibility checks.

    The FIFO queue is seeded with all input variables; each node is expanded
    at most once and the objective is never expanded, so the advisor is
    queried O(|V|) times.  Raises :class:`DiscoveryTruncated` (carrying the
    partial skeleton, flagged incomplete) when ``max_turns`` is exceeded.
    """
    validate_catalog(catalog)
    if max_turns is None:
        max_turns = len(catalog)
    if max_turns < len(catalog):
        log.warning("max_turns %d below catalog size %d; discovery may truncate",
                    max_turns, len(catalog))

    skel = CausalSkeleton(list(catalog), set())
    names = [v.name for v in catalog]
    name_order = {n: i for i, n in enumerate(names)}
    history = DiscoveryHistory(
        instructions=instructions,
        catalog_digest="Variables: "
        + "; ".join(f"{v.name} ({v.kind}): {v.description}" for v in catalog),
        char_budget=char_budget,
    )

    # the queue is seeded with the controllable inputs, never advisor output
    queue: list[str] = [v.name for v in catalog if v.kind == "input"]
    enqueued = set(queue)
    visited: set[str] = set()

    while queue:
        node = queue.pop(0)
        if node in visited or node == skel.objective:
            continue
        if history.turn_count >= max_turns:
            skel.incomplete = True
            raise DiscoveryTruncated(
                f"discovery truncated after {history.turn_count} turns", skel, history
            )
        visited.add(node)
        history.turn_count += 1
        proposals = advisor.expand(node, history)
        kept = []
        for child in proposals:
            if child not in name_order:
                log.warning("advisor proposed uncataloged name %r; dropped", child)
                continue
            kept.append(child)
        kept.sort(key=name_order.__getitem__)  # catalog order for determinism
        for child in kept:
            result = try_insert_edge(skel, node, child)
            if result.accepted:
                history.accepted_edges.append((node, child))
                history.note(f"Accepted edge {node} -> {child}.")
                if child not in enqueued and child not in visited and child != skel.objective:
                    queue.append(child)
                    enqueued.add(child)
            else:
                history.note(f"Rejected edge {node} -> {child} ({result.reason}).")
        history = compact_history(history, advisor)

    if skel.objective not in skel.reachable_from_inputs():
        skel.incomplete = True
        log.warning("objective unreachable from inputs; skeleton flagged incomplete")
    return skel, history


def compact_history(h: DiscoveryHistory, advisor: Advisor) -> DiscoveryHistory:
    """Shrink over-budget prose via the advisor; the edge list is never touched."""
    if len(h.render()) <= h.char_budget:
        return h
    try:
        compacted = advisor.compact(h)
        if compacted.accepted_edges != h.accepted_edges:
            raise AdvisorUnavailable("compaction altered the edge list")
        return compacted
    except AdvisorUnavailable:
        out = DiscoveryHistory(
            instructions=h.instructions,
            catalog_digest=h.catalog_digest,
            accepted_edges=list(h.accepted_edges),
            prose=list(h.prose),
            turn_count=h.turn_count,
            char_budget=h.char_budget,
        )
        while out.prose and len(out.render()) > out.char_budget:
            out.prose.pop(0)
        return out


# ---------------------------------------------------------------------------
# Advisors
# ---------------------------------------------------------------------------


class ScriptedAdvisor(Advisor):
    """Deterministic oracle over a ground-truth skeleton, with optional noise.

    With probability ``noise_rate`` per candidate, membership of that
    candidate in the returned child set is flipped (true children dropped,
    non-children injected), which exercises every admissibility check.
    """

    def __init__(self, truth: CausalSkeleton, noise_rate: float = 0.0, rng=None):
        if not 0.0 <= noise_rate <= 1.0:
            raise InvalidInput("noise_rate must be a probability")
        self.truth = truth
        self.noise_rate = noise_rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def expand(self, node: str, history: DiscoveryHistory) -> list[str]:
        true_children = set(self.truth.children(node))
        out = []
        for var in self.truth.variables:
            if var.name == node:
                continue
            member = var.name in true_children
            if self.noise_rate > 0 and self.rng.random() < self.noise_rate:
                member = not member
            if member:
                out.append(var.name)
        return out

    def select_exogenous(self, catalog: list[VariableSpec]) -> list[str]:
        return [v.name for v in catalog if v.kind == "input"]

    def compact(self, history: DiscoveryHistory) -> DiscoveryHistory:
        return DiscoveryHistory(
            instructions=history.instructions,
            catalog_digest=history.catalog_digest,
            accepted_edges=list(history.accepted_edges),
            prose=[f"(summarized {len(history.prose)} discovery notes)"],
            turn_count=history.turn_count,
            char_budget=history.char_budget,
        )


def scripted_advisor(truth: CausalSkeleton, noise_rate: float = 0.0, rng=None) -> ScriptedAdvisor:
    return ScriptedAdvisor(truth, noise_rate, rng)


class RemoteAdvisor(Advisor):
    """Advisor backed by a chat-completion endpoint."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key_source: str = "ADVISOR_API_KEY",
        retry: RetryPolicy | None = None,
        timeout: float = 60.0,
    ):
        self.client = ChatClient(
            endpoint=endpoint,
            model_name=model_name,
            api_key_env=api_key_source,
            retry=retry or RetryPolicy(),
            timeout=timeout,
        )

    def expand(self, node: str, history: DiscoveryHistory) -> list[str]:
        messages = [
            {
                "role": "system",
                "content": history.render()
                + "\nAnswer with a JSON list of variable names and nothing else.",
            },
            {
                "role": "user",
                "content": f"Select ALL variables that are caused by {node}.",
            },
        ]
        return self.client.complete(messages, parse=parse_json_name_list)

    def select_exogenous(self, catalog: list[VariableSpec]) -> list[str]:
        digest = "; ".join(f"{v.name} ({v.kind}): {v.description}" for v in catalog)
        messages = [
            {
                "role": "system",
                "content": "You identify root causes in a variable catalog. "
                "Answer with a JSON list of variable names and nothing else.",
            },
            {
                "role": "user",
                "content": f"Catalog: {digest}\nSelect the exogenous variables "
                "(not caused by any other variable).",
            },
        ]
        return self.client.complete(messages, parse=parse_json_name_list)

    def compact(self, history: DiscoveryHistory) -> DiscoveryHistory:
        messages = [
            {
                "role": "system",
                "content": "Summarize the following discovery notes in under "
                f"{history.char_budget // 4} characters. Keep every fact needed to "
                "continue the session. Reply with the summary only.",
            },
            {"role": "user", "content": "\n".join(history.prose)},
        ]
        summary = self.client.complete(messages)
        return DiscoveryHistory(
            instructions=history.instructions,
            catalog_digest=history.catalog_digest,
            accepted_edges=list(history.accepted_edges),
            prose=[summary],
            turn_count=history.turn_count,
            char_budget=history.char_budget,
        )


def remote_advisor(
    endpoint: str,
    model_name: str,
    api_key_source: str = "ADVISOR_API_KEY",
    retry: RetryPolicy | None = None,
    timeout: float = 60.0,
) -> RemoteAdvisor:
    return RemoteAdvisor(endpoint, model_name, api_key_source, retry, timeout)
