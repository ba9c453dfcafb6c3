"""Random small graph-network instances shared by the gradient checks."""
from __future__ import annotations

import numpy as np

from _oracles import fd_gradients, relu_margin
from graphnav.gnn import GraphInput, backward, init_gnn

OBS_DIM = 12
KINK_MARGIN = 1e-4  # instances with a pre-activation closer than this to zero are redrawn


def random_instance(rng: np.random.Generator, dim: int = 8, max_nodes: int = 8, max_edges: int = 12):
    """Parameters plus a batch of one or two random graphs (self-loops and multi-edges allowed)."""
    p = init_gnn(rng, OBS_DIM, dim, dim, (8, 8))
    batch, raw = [], []
    for _ in range(int(rng.integers(1, 3))):
        n = int(rng.integers(1, max_nodes + 1))
        m = int(rng.integers(1, max_edges + 1))
        gi = GraphInput(rng.integers(0, 3, n), rng.integers(0, 5, m), rng.integers(0, n, m), rng.integers(0, n, m),
                        rng.uniform(0, 1, OBS_DIM))
        y = int(rng.integers(0, m))
        batch.append((gi, y))
        raw.append((gi.node_kinds, gi.edge_kinds, gi.senders, gi.receivers, gi.obs, y))
    return p, batch, raw


def screened_instances(count: int, seed: int = 0):
    """``count`` instances whose ReLUs are all farther than KINK_MARGIN from the kink."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p, batch, raw = random_instance(rng)
        if relu_margin(dict(p.named()), raw) > KINK_MARGIN:
            out.append((p, batch, raw))
    return out


def gradient_rel_error(p, batch, raw, h: float = 1e-5) -> float:
    """Largest elementwise relative error of the analytic gradient against central differences."""
    _, grads = backward(p, batch)
    fd = fd_gradients(dict(p.named()), raw, h)
    worst = 0.0
    for (name, _), g in zip(p.named(), grads.arrays()):
        f = fd[name].astype(float)
        denom = np.maximum(np.maximum(np.abs(f), np.abs(g)), 1e-8)
        worst = max(worst, float((np.abs(f - g) / denom).max()))
    return worst


def random_topomap(rng: np.random.Generator, max_nodes: int = 20, name: str = "random"):
    """Random simple digraph (no self loops); sinks and isolated nodes included."""
    from graphnav.topomap import BehaviorKind, NodeKind, TopoEdge, TopoMap, TopoNode

    n = int(rng.integers(1, max_nodes + 1))
    density = rng.uniform(0.05, 0.4)
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b and rng.random() < density]
    nodes = [TopoNode(i, NodeKind.HALLWAY, False, (float(i), 0.0), 0.0, "h") for i in range(n)]
    edges = [TopoEdge(k, a, b, BehaviorKind.CORRIDOR_FOLLOW) for k, (a, b) in enumerate(pairs)]
    return TopoMap(nodes, edges, name)


def random_edge_distribution(rng: np.random.Generator, topo, max_edges: int = 12) -> dict[int, float]:
    """A softmax-like distribution over a random subset of the map's edges."""
    ids = [e.id for e in topo.edges]
    if not ids:
        return {}
    k = int(rng.integers(1, min(len(ids), max_edges) + 1))
    chosen = rng.choice(ids, size=k, replace=False)
    w = rng.exponential(size=k)
    return {int(e): float(q) for e, q in zip(chosen, w / w.sum())}
