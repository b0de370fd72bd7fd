"""Decision model at a subgoal: case classification and discounted,
depth-limited search over the learned graph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .knowledge import KnowledgeBase, connected_nodes

AGGREGATORS = {
    "min": min,
    "max": max,
    "mean": lambda s: float(np.mean(s)),
    "median": lambda s: float(np.median(s)),
}


class NoExperiencedEdge(ValueError):
    pass


@dataclass(frozen=True)
class DecisionParams:
    gamma: float = 1.0
    d_max: int | None = None  # None means unlimited depth
    aggregator: str = "min"

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.d_max is not None and self.d_max < 1:
            raise ValueError("d_max must be a positive integer or None")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {sorted(AGGREGATORS)}")

    @property
    def f(self):
        return AGGREGATORS[self.aggregator]


@dataclass
class DecisionRecord:
    run: int
    node: int
    case: str
    chosen: int
    predicted: int | None = None
    vis: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "node": self.node,
            "case": self.case,
            "chosen": self.chosen,
            "predicted": self.predicted,
            "vis": sorted(self.vis),
        }


def classify_case(kb: KnowledgeBase, k: int) -> str:
    n = len(connected_nodes(kb, k))
    return "A" if n == 0 else ("B" if n == 1 else "C")


def candidate_values(kb: KnowledgeBase, k: int, params: DecisionParams = DecisionParams()) -> dict[int, float]:
    """Best discounted path value through each experienced child of ``k``.

    A path is a simple path over edges with ``q_counts > 0``. Its value is
    ``sum_d gamma**d * f(dc)`` over its edges (first edge at depth 0), plus
    ``gamma**D * f(ctg[leaf])`` when it is cut at depth ``D = d_max`` before
    reaching the goal. Paths that dead-end short of the goal and of ``d_max``
    are not evaluated. Children with no evaluable path get ``inf``.
    """
    f = params.f
    gamma = params.gamma
    d_max = params.d_max if params.d_max is not None else math.inf
    q = kb.q_counts
    children = [np.flatnonzero(q[i] > 0) for i in range(kb.n_nodes)]
    edge = {}

    def cost(a, b):
        c = edge.get((a, b))
        if c is None:
            c = edge[(a, b)] = float(f(kb.dc_lists[(a, b)]))
        return c

    def leaf(i):
        return float(f(kb.ctg_lists[i])) if kb.ctg_lists[i] else None

    out = {}
    for first in children[k]:
        first = int(first)
        best = [math.inf]
        visited = {k, first}

        def dfs(node, depth, acc, disc):
            # depth = number of edges taken so far; disc = gamma**depth
            if acc >= best[0]:
                return
            if node == 0:
                best[0] = acc
                return
            if depth >= d_max:
                est = leaf(node)
                if est is not None and acc + disc * est < best[0]:
                    best[0] = acc + disc * est
                return
            for nxt in children[node]:
                nxt = int(nxt)
                if nxt in visited:
                    continue
                visited.add(nxt)
                dfs(nxt, depth + 1, acc + disc * cost(node, nxt), disc * gamma)
                visited.discard(nxt)

        dfs(first, 1, cost(k, first), gamma)
        out[first] = best[0]
    return out


def predict_next_node(kb: KnowledgeBase, k: int, params: DecisionParams = DecisionParams()) -> int:
    values = candidate_values(kb, k, params)
    if not values:
        raise NoExperiencedEdge(f"node {k} has no experienced outgoing edge")
    return min(values, key=lambda i: (values[i], i))


def score_model_accuracy(records, kb_before_run, params: DecisionParams = DecisionParams()) -> float | None:
    """Fraction of case-C decisions the model predicts correctly.

    ``kb_before_run`` maps a run id to the knowledge base learned from the
    preceding runs only. Returns None when there is no case-C record.
    """
    hits = total = 0
    for r in records:
        if r.case != "C":
            continue
        kb = kb_before_run[r.run]
        total += 1
        hits += predict_next_node(kb, r.node, params) == r.chosen
    return hits / total if total else None


def records_from_parsed_runs(
    parsed_runs, n_nodes: int, params: DecisionParams = DecisionParams()
) -> tuple[list[DecisionRecord], dict[int, KnowledgeBase]]:
    """Decision records for every node transition in a series of parsed runs,
    classified against the knowledge learned from earlier runs."""
    kb = KnowledgeBase(n_nodes)
    records = []
    history = {}
    for run_id, pr in enumerate(parsed_runs):
        history[run_id] = kb.copy()
        snapshot = history[run_id]
        seq = pr.sequence
        for (k, _, _), (i, _, _) in zip(seq[:-1], seq[1:]):
            if k == 0 or k == i:
                continue
            case = classify_case(snapshot, k)
            pred = predict_next_node(snapshot, k, params) if case == "C" else None
            records.append(DecisionRecord(run_id, k, case, i, pred))
        kb.update(pr, allow_partial=True)
    return records, history
