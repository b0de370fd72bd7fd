"""Learned subgoal-graph knowledge: cost samples, traversal counts and node sets."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .analysis import ParsedRun
    from .benchmark import SubgoalGraph

KB_SCHEMA = "knowledge-base/1"


class IncompleteRun(ValueError):
    """A parsed run that never reached the goal was offered as a complete run."""


@dataclass
class KnowledgeBase:
    n_nodes: int
    ctg_lists: list[list[float]] = field(default_factory=list)
    dc_lists: dict[tuple[int, int], list[float]] = field(default_factory=dict)
    q_counts: np.ndarray | None = None
    run_count: int = 0
    flight_times: list[float | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.ctg_lists:
            self.ctg_lists = [[] for _ in range(self.n_nodes)]
        if self.q_counts is None:
            self.q_counts = np.zeros((self.n_nodes, self.n_nodes), dtype=int)

    def copy(self) -> "KnowledgeBase":
        return copy.deepcopy(self)

    def dc_samples(self, k: int, i: int) -> list[float]:
        return self.dc_lists.get((k, i), [])

    def update(self, parsed: "ParsedRun", allow_partial: bool = False) -> "KnowledgeBase":
        """Fold one parsed run into this knowledge base, in place.

        Incomplete runs raise :class:`IncompleteRun` unless ``allow_partial``;
        then their completed segments add counts and segment times but no
        cost-to-go samples.
        """
        seq = parsed.sequence
        completed = bool(seq) and seq[-1][0] == 0
        if not completed and not allow_partial:
            raise IncompleteRun("run does not end at the goal node")
        for (k, tk, _), (i, ti, _) in zip(seq[:-1], seq[1:]):
            if k == 0 or k == i:
                continue
            self.q_counts[k, i] += 1
            self.dc_lists.setdefault((k, i), []).append(float(ti - tk))
        if completed:
            t0 = seq[-1][1]
            for k, tk, _ in seq[:-1]:
                if k != 0 and t0 - tk > 0:
                    self.ctg_lists[k].append(float(t0 - tk))
        self.run_count += 1
        self.flight_times.append(parsed.t_0 if completed else None)
        return self

    # -- serialization -------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": KB_SCHEMA,
            "n_nodes": self.n_nodes,
            "run_count": self.run_count,
            "ctg_lists": [list(map(float, c)) for c in self.ctg_lists],
            "dc_lists": [
                {"from": k, "to": i, "samples": list(map(float, s))} for (k, i), s in sorted(self.dc_lists.items())
            ],
            "q_counts": self.q_counts.astype(int).tolist(),
            "flight_times": list(self.flight_times),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeBase":
        kb = cls(
            n_nodes=int(d["n_nodes"]),
            ctg_lists=[list(map(float, c)) for c in d["ctg_lists"]],
            dc_lists={(int(e["from"]), int(e["to"])): list(map(float, e["samples"])) for e in d["dc_lists"]},
            q_counts=np.asarray(d["q_counts"], dtype=int).reshape(int(d["n_nodes"]), int(d["n_nodes"])),
            run_count=int(d.get("run_count", 0)),
            flight_times=list(d.get("flight_times", [])),
        )
        kb.check()
        return kb

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def check(self) -> None:
        for (k, i), samples in self.dc_lists.items():
            if len(samples) != self.q_counts[k, i]:
                raise ValueError(f"dc list ({k},{i}) length does not match traversal count")
        if np.any(self.q_counts[0] != 0) or np.any(self.q_counts < 0):
            raise ValueError("invalid traversal counts")
        for (k, i), samples in self.dc_lists.items():
            if any(not (math.isfinite(s) and s > 0) for s in samples):
                raise ValueError("segment samples must be finite and positive")
        for c in self.ctg_lists:
            if any(not (math.isfinite(s) and s > 0) for s in c):
                raise ValueError("cost-to-go samples must be finite and positive")


def update_from_run(kb: KnowledgeBase, parsed: "ParsedRun", allow_partial: bool = False) -> KnowledgeBase:
    """Return a new knowledge base with ``parsed`` folded in."""
    return kb.copy().update(parsed, allow_partial=allow_partial)


def from_benchmark(graph: "SubgoalGraph") -> KnowledgeBase:
    """A fully learned knowledge base holding exactly the benchmark graph."""
    n = len(graph.nodes)
    kb = KnowledgeBase(n)
    for k in range(1, n):
        if math.isfinite(graph.CTG[k]):
            kb.ctg_lists[k].append(float(graph.CTG[k]))
    for k, child in enumerate(graph.children):
        if child is not None:
            kb.q_counts[k, child] = 1
            kb.dc_lists[(k, child)] = [float(graph.DC[k, child])]
    return kb


def node_sets(kb: KnowledgeBase) -> tuple[set[int], set[int]]:
    """(unknown, known) non-goal nodes."""
    ukn = {k for k in range(1, kb.n_nodes) if not kb.ctg_lists[k]}
    kn = set(range(1, kb.n_nodes)) - ukn
    return ukn, kn


def connected_nodes(kb: KnowledgeBase, k: int) -> set[int]:
    return {int(i) for i in np.flatnonzero(kb.q_counts[k] > 0)}


def prior_transition_probabilities(kb: KnowledgeBase, V: np.ndarray, k: int) -> np.ndarray:
    """Child distribution of node k: uniform over visible neighbours before any
    experience, empirical traversal frequencies afterwards."""
    counts = kb.q_counts[k].astype(float)
    total = counts.sum()
    if total > 0:
        return counts / total
    vis = np.asarray(V[k], dtype=bool).copy()
    vis[k] = False
    m = int(vis.sum())
    if m == 0:
        raise ValueError(f"node {k} has no visible neighbour and no experience")
    return vis.astype(float) / m


def segment_frequency_histogram(kb: KnowledgeBase) -> dict[int, int]:
    """M_h: number of distinct segments traversed exactly h times, for h >= 1."""
    counts = kb.q_counts[kb.q_counts > 0]
    hs, ms = np.unique(counts, return_counts=True)
    return {int(h): int(m) for h, m in zip(hs, ms)}


def exploration_metric(kb: KnowledgeBase) -> float:
    return float(sum(m / h for h, m in segment_frequency_histogram(kb).items()))
