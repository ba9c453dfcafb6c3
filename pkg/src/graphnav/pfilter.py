"""Discrete Bayes filter over map nodes.

The state is the current node. Motion: stay with probability 0.8, otherwise
move to one of the out-neighbors with equal probability; sinks keep their
mass. The measurement is the GLN edge distribution summed per source node.
The state space is small, so the filter is run densely instead of sampling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topomap import TopoMap

STAY_PROB = 0.8
LIKELIHOOD_FLOOR = 1e-6
DEGENERATE_MASS = 1e-15


@dataclass(frozen=True)
class Belief:
    """Probability per node, indexed in ``node_ids`` order."""

    node_ids: tuple[int, ...]
    prob: np.ndarray

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=float)
        if prob.shape != (len(self.node_ids),):
            raise ValueError("one probability per node")
        if np.any(prob < 0) or abs(prob.sum() - 1.0) > 1e-9:
            raise ValueError("belief must be non-negative and sum to one")
        object.__setattr__(self, "prob", prob)

    def __getitem__(self, node: int) -> float:
        return float(self.prob[self.node_ids.index(node)])

    @classmethod
    def delta(cls, topo: TopoMap, node: int) -> "Belief":
        ids = tuple(topo.node_ids)
        prob = np.zeros(len(ids))
        prob[ids.index(node)] = 1.0
        return cls(ids, prob)

    @classmethod
    def uniform(cls, topo: TopoMap) -> "Belief":
        ids = tuple(topo.node_ids)
        return cls(ids, np.full(len(ids), 1.0 / len(ids)))


def predict(b: Belief, topo: TopoMap, stay: float = STAY_PROB) -> Belief:
    index = {v: i for i, v in enumerate(b.node_ids)}
    out = np.zeros_like(b.prob)
    for w, mass in zip(b.node_ids, b.prob):
        if mass == 0.0:
            continue
        nbrs = topo.successors(w)
        if not nbrs:
            out[index[w]] += mass
            continue
        out[index[w]] += stay * mass
        share = (1.0 - stay) * mass / len(nbrs)
        for v in nbrs:
            out[index[v]] += share
    return Belief(b.node_ids, out)


def node_likelihood(edge_prob: dict[int, float], topo: TopoMap, floor: float = LIKELIHOOD_FLOOR) -> dict[int, float]:
    """Per-node score: summed probability of the node's outgoing crop edges."""
    score = {v: 0.0 for v in topo.node_ids}
    for edge_id, q in edge_prob.items():
        score[topo.edge(edge_id).src] += q
    return {v: (s if s > 0.0 else floor) for v, s in score.items()}


def update(b: Belief, likelihood: dict[int, float]) -> tuple[Belief, bool]:
    """Bayes update; returns the prior unchanged and ``True`` if the mass vanishes."""
    like = np.array([likelihood[v] for v in b.node_ids], dtype=float)
    if np.any(like < 0):
        raise ValueError("likelihoods must be non-negative")
    post = b.prob * like
    total = post.sum()
    if total < DEGENERATE_MASS:
        return b, True
    return Belief(b.node_ids, post / total), False


def map_estimate(b: Belief) -> int:
    """Most probable node; ties go to the lowest id."""
    best = b.prob.max()
    return min(v for v, q in zip(b.node_ids, b.prob) if q == best)


class NodeFilter:
    """Stateful wrapper used inside the navigation loop."""

    def __init__(self, topo: TopoMap, start: int):
        self.topo = topo
        self.belief = Belief.delta(topo, start)
        self.degenerate_steps = 0

    def step(self, edge_prob: dict[int, float]) -> int:
        self.belief = predict(self.belief, self.topo)
        self.belief, degenerate = update(self.belief, node_likelihood(edge_prob, self.topo))
        self.degenerate_steps += int(degenerate)
        return map_estimate(self.belief)
