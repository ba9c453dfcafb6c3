"""Graph-network core: MLPs, GN blocks, edge logits, loss, exact gradients, Adam.

Everything is float64 numpy. Graphs can be batched by concatenation: node and
edge arrays are stacked and ``node_graph`` / ``edge_graph`` give the owning
graph of each row, so one forward pass handles a whole mini-batch. Sums use
``np.add.at``, whose accumulation order is fixed, so results are bit-stable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class GraphShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    """Layers of ``(W, b)`` with ``W`` of shape (fan_in, fan_out); ReLU between layers."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def named(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        for k, (w, b) in enumerate(self.layers):
            yield f"{prefix}.{k}.W", w
            yield f"{prefix}.{k}.b", b


def init_mlp(rng: np.random.Generator, sizes: Sequence[int]) -> MlpParams:
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)))
    return MlpParams(layers)


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.in_dim:
        raise GraphShapeError(f"mlp expects input dim {p.in_dim}, got {x.shape[-1]}")
    for k, (w, b) in enumerate(p.layers):
        x = x @ w + b
        if k < len(p.layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def _mlp_forward_cached(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that keeps the input of every layer for the backward pass."""
    if x.shape[-1] != p.in_dim:
        raise GraphShapeError(f"mlp expects input dim {p.in_dim}, got {x.shape[-1]}")
    inputs = []
    for k, (w, b) in enumerate(p.layers):
        inputs.append(x)
        x = x @ w + b
        if k < len(p.layers) - 1:
            x = np.maximum(x, 0.0)
    return x, inputs


def _mlp_backward(p: MlpParams, inputs: list[np.ndarray], gy: np.ndarray,
                  grads: MlpParams) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return the input gradient."""
    g = gy
    for k in range(len(p.layers) - 1, -1, -1):
        w, _ = p.layers[k]
        x = inputs[k]
        gw, gb = grads.layers[k]
        gw += x.T @ g
        gb += g.sum(axis=0)
        g = g @ w.T
        if k > 0:
            g = g * (inputs[k] > 0)  # inputs[k] is relu output of layer k-1
    return g


# ---------------------------------------------------------------------------
# graphs


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 2 else x.reshape(len(x), -1)


@dataclass
class GraphTensors:
    """A graph (or a batch of graphs) with node, edge and global features.

    ``u`` has one row per graph. For a single graph ``node_graph`` and
    ``edge_graph`` may be omitted.
    """

    u: np.ndarray
    V: np.ndarray
    E: np.ndarray
    receivers: np.ndarray
    senders: np.ndarray
    node_graph: np.ndarray | None = None
    edge_graph: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.V = _rows(self.V)
        self.E = _rows(self.E)
        self.receivers = np.asarray(self.receivers, dtype=np.int64).reshape(-1)
        self.senders = np.asarray(self.senders, dtype=np.int64).reshape(-1)
        n, m = len(self.V), len(self.E)
        if self.node_graph is None:
            self.node_graph = np.zeros(n, dtype=np.int64)
        if self.edge_graph is None:
            self.edge_graph = np.zeros(m, dtype=np.int64)
        if len(self.receivers) != m or len(self.senders) != m:
            raise GraphShapeError("one receiver and one sender per edge")
        if m and (self.receivers.max() >= n or self.senders.max() >= n or min(self.receivers.min(), self.senders.min()) < 0):
            raise GraphShapeError("edge endpoint out of range")

    @property
    def n_graphs(self) -> int:
        return len(self.u)


@dataclass
class GnBlockParams:
    phi_e: MlpParams
    phi_v: MlpParams
    phi_u: MlpParams

    def named(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.phi_e.named(prefix + ".phi_e")
        yield from self.phi_v.named(prefix + ".phi_v")
        yield from self.phi_u.named(prefix + ".phi_u")


def init_block(rng: np.random.Generator, d_e: int, d_v: int, d_u: int, out_e: int, out_v: int, out_u: int,
               hidden: Sequence[int]) -> GnBlockParams:
    return GnBlockParams(
        init_mlp(rng, [d_e + 2 * d_v + d_u, *hidden, out_e]),
        init_mlp(rng, [out_e + d_v + d_u, *hidden, out_v]),
        init_mlp(rng, [out_e + out_v + d_u, *hidden, out_u]),
    )


def _segment_sum(x: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, x.shape[1]))
    np.add.at(out, index, x)
    return out


def gn_block_forward(p: GnBlockParams, G: GraphTensors) -> GraphTensors:
    """Edge update, incoming-edge sum, node update, then the global update."""
    n, B = len(G.V), G.n_graphs
    x_e = np.concatenate([G.E, G.V[G.receivers], G.V[G.senders], G.u[G.edge_graph]], axis=1)
    e_new = mlp_forward(p.phi_e, x_e) if len(x_e) else np.zeros((0, p.phi_e.out_dim))
    e_bar = _segment_sum(e_new, G.receivers, n)
    v_new = mlp_forward(p.phi_v, np.concatenate([e_bar, G.V, G.u[G.node_graph]], axis=1)) if n else np.zeros((0, p.phi_v.out_dim))
    e_all = _segment_sum(e_new, G.edge_graph, B)
    v_all = _segment_sum(v_new, G.node_graph, B)
    u_new = mlp_forward(p.phi_u, np.concatenate([e_all, v_all, G.u], axis=1))
    return GraphTensors(u_new, v_new, e_new, G.receivers, G.senders, G.node_graph, G.edge_graph)


class _BlockCache:
    pass


def _block_forward_cached(p: GnBlockParams, G: GraphTensors, edges_only: bool = False):
    c = _BlockCache()
    c.G = G
    n, B = len(G.V), G.n_graphs
    x_e = np.concatenate([G.E, G.V[G.receivers], G.V[G.senders], G.u[G.edge_graph]], axis=1)
    e_new, c.e_in = _mlp_forward_cached(p.phi_e, x_e)
    c.edges_only = edges_only
    if edges_only:
        return e_new, None, None, c
    e_bar = _segment_sum(e_new, G.receivers, n)
    v_new, c.v_in = _mlp_forward_cached(p.phi_v, np.concatenate([e_bar, G.V, G.u[G.node_graph]], axis=1))
    e_all = _segment_sum(e_new, G.edge_graph, B)
    v_all = _segment_sum(v_new, G.node_graph, B)
    u_new, c.u_in = _mlp_forward_cached(p.phi_u, np.concatenate([e_all, v_all, G.u], axis=1))
    return e_new, v_new, u_new, c


def _block_backward(p: GnBlockParams, c, g_e: np.ndarray, g_v, g_u, grads: GnBlockParams):
    """Gradients w.r.t. the block inputs (E, V, u) given output gradients."""
    G = c.G
    n, B = len(G.V), G.n_graphs
    d_e_out = p.phi_e.out_dim
    g_e = g_e.copy()
    g_V = np.zeros_like(G.V)
    g_U = np.zeros_like(G.u)
    if not c.edges_only:
        d_v_out = p.phi_v.out_dim
        gx_u = _mlp_backward(p.phi_u, c.u_in, g_u, grads.phi_u)
        g_eall, g_vall = gx_u[:, :d_e_out], gx_u[:, d_e_out:d_e_out + d_v_out]
        g_U += gx_u[:, d_e_out + d_v_out:]
        g_e += g_eall[G.edge_graph]
        g_v = g_v + g_vall[G.node_graph]
        gx_v = _mlp_backward(p.phi_v, c.v_in, g_v, grads.phi_v)
        g_ebar = gx_v[:, :d_e_out]
        g_V += gx_v[:, d_e_out:d_e_out + G.V.shape[1]]
        np.add.at(g_U, G.node_graph, gx_v[:, d_e_out + G.V.shape[1]:])
        g_e += g_ebar[G.receivers]
    gx_e = _mlp_backward(p.phi_e, c.e_in, g_e, grads.phi_e)
    d_e, d_v = G.E.shape[1], G.V.shape[1]
    g_E = gx_e[:, :d_e]
    np.add.at(g_V, G.receivers, gx_e[:, d_e:d_e + d_v])
    np.add.at(g_V, G.senders, gx_e[:, d_e + d_v:d_e + 2 * d_v])
    np.add.at(g_U, G.edge_graph, gx_e[:, d_e + 2 * d_v:])
    return g_E, g_V, g_U


# ---------------------------------------------------------------------------
# full network


@dataclass
class GnnParams:
    node_embed: np.ndarray
    edge_embed: np.ndarray
    encoder: MlpParams
    block1: GnBlockParams
    block2: GnBlockParams
    config: dict = field(default_factory=dict)

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "node_embed", self.node_embed
        yield "edge_embed", self.edge_embed
        yield from self.encoder.named("encoder")
        yield from self.block1.named("block1")
        yield from self.block2.named("block2")

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named()]

    def map(self, fn) -> "GnnParams":
        def mlp(m):
            return MlpParams([(fn(w), fn(b)) for w, b in m.layers])

        def block(b):
            return GnBlockParams(mlp(b.phi_e), mlp(b.phi_v), mlp(b.phi_u))

        return GnnParams(fn(self.node_embed), fn(self.edge_embed), mlp(self.encoder),
                         block(self.block1), block(self.block2), dict(self.config))

    def copy(self) -> "GnnParams":
        return self.map(np.array)

    def zeros_like(self) -> "GnnParams":
        return self.map(np.zeros_like)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


GradientSet = GnnParams


def init_gnn(rng: np.random.Generator, obs_dim: int, dim: int = 32, global_dim: int = 32,
             hidden: Sequence[int] = (64, 64, 64), n_node_kinds: int = 3, n_behaviors: int = 5) -> GnnParams:
    """Random parameters: embeddings ~ N(0, 1), MLPs uniform(+-1/sqrt(fan_in))."""
    node_embed = rng.normal(size=(n_node_kinds, dim))
    edge_embed = rng.normal(size=(n_behaviors, dim))
    encoder = init_mlp(rng, [obs_dim, *hidden, global_dim])
    block1 = init_block(rng, dim, dim, global_dim, dim, dim, global_dim, hidden)
    block2 = init_block(rng, dim, dim, global_dim, 1, dim, global_dim, hidden)
    config = {"obs_dim": obs_dim, "dim": dim, "global_dim": global_dim, "hidden": list(hidden),
              "n_node_kinds": n_node_kinds, "n_behaviors": n_behaviors}
    return GnnParams(node_embed, edge_embed, encoder, block1, block2, config)


@dataclass
class GraphInput:
    """Discrete graph plus the raw observation, before embedding/encoding."""

    node_kinds: np.ndarray
    edge_kinds: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    obs: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edge_kinds)


def collate(inputs: Sequence[GraphInput]):
    """Concatenate graphs into one disconnected graph with offset indices."""
    node_kinds, edge_kinds, senders, receivers, node_graph, edge_graph = [], [], [], [], [], []
    offset = 0
    for g, gi in enumerate(inputs):
        n = len(gi.node_kinds)
        node_kinds.append(np.asarray(gi.node_kinds, dtype=np.int64))
        edge_kinds.append(np.asarray(gi.edge_kinds, dtype=np.int64))
        senders.append(np.asarray(gi.senders, dtype=np.int64) + offset)
        receivers.append(np.asarray(gi.receivers, dtype=np.int64) + offset)
        node_graph.append(np.full(n, g, dtype=np.int64))
        edge_graph.append(np.full(len(gi.edge_kinds), g, dtype=np.int64))
        offset += n
    cat = np.concatenate
    obs = np.stack([np.asarray(gi.obs, dtype=float).reshape(-1) for gi in inputs])
    return (cat(node_kinds), cat(edge_kinds), cat(senders), cat(receivers), cat(node_graph), cat(edge_graph), obs)


def initial_graph(p: GnnParams, inputs: Sequence[GraphInput]) -> GraphTensors:
    node_kinds, edge_kinds, senders, receivers, node_graph, edge_graph, obs = collate(inputs)
    u = mlp_forward(p.encoder, obs)
    return GraphTensors(u, p.node_embed[node_kinds], p.edge_embed[edge_kinds], receivers, senders,
                        node_graph, edge_graph)


def edge_logits(p: GnnParams, G0: GraphTensors) -> np.ndarray:
    """Per-edge scalar scores from two GN blocks, in input edge order."""
    if len(G0.E) == 0:
        return np.zeros(0)
    G1 = gn_block_forward(p.block1, G0)
    G2 = gn_block_forward(p.block2, G1)
    return G2.E[:, 0]


def softmax_ce_loss(logits: np.ndarray, y: int) -> float:
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise ValueError("cross-entropy over zero edges: the true edge is not in the graph")
    if not 0 <= y < logits.size:
        raise ValueError(f"target index {y} outside [0, {logits.size})")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def segment_softmax(logits: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, segments, logits)
    ex = np.exp(logits - peak[segments])
    total = np.zeros(n_segments)
    np.add.at(total, segments, ex)
    return ex / total[segments]


def forward_batch(p: GnnParams, inputs: Sequence[GraphInput]) -> tuple[np.ndarray, np.ndarray]:
    """Logits for a batch of graphs plus the owning graph of every logit."""
    G0 = initial_graph(p, inputs)
    if len(G0.E) == 0:
        return np.zeros(0), G0.edge_graph
    G1 = gn_block_forward(p.block1, G0)
    x_e = np.concatenate([G1.E, G1.V[G1.receivers], G1.V[G1.senders], G1.u[G1.edge_graph]], axis=1)
    return mlp_forward(p.block2.phi_e, x_e)[:, 0], G0.edge_graph


def backward(p: GnnParams, batch: Sequence[tuple[GraphInput, int]]) -> tuple[float, GradientSet]:
    """Mean softmax cross-entropy over the batch and its exact gradient.

    ``y`` is the local index of the true edge within each graph. Block 2's node
    and global updates do not reach the logits, so their gradients are zero.
    """
    if not batch:
        raise ValueError("empty batch")
    inputs = [gi for gi, _ in batch]
    B = len(inputs)
    for gi, y in batch:
        if not 0 <= y < gi.n_edges:
            raise ValueError(f"target index {y} outside [0, {gi.n_edges})")
    node_kinds, edge_kinds, senders, receivers, node_graph, edge_graph, obs = collate(inputs)
    grads = p.zeros_like()

    u0, enc_in = _mlp_forward_cached(p.encoder, obs)
    G0 = GraphTensors(u0, p.node_embed[node_kinds], p.edge_embed[edge_kinds], receivers, senders,
                      node_graph, edge_graph)
    e1, v1, u1, c1 = _block_forward_cached(p.block1, G0)
    G1 = GraphTensors(u1, v1, e1, receivers, senders, node_graph, edge_graph)
    e2, _, _, c2 = _block_forward_cached(p.block2, G1, edges_only=True)
    logits = e2[:, 0]

    first = np.zeros(B, dtype=np.int64)
    counts = np.bincount(edge_graph, minlength=B)
    first[1:] = np.cumsum(counts)[:-1]
    target = first + np.array([y for _, y in batch], dtype=np.int64)

    prob = segment_softmax(logits, edge_graph, B)
    loss = float(np.mean(-np.log(prob[target])))
    g_logits = prob.copy()
    g_logits[target] -= 1.0
    g_logits /= B

    g_E1, g_V1, g_U1 = _block_backward(p.block2, c2, g_logits[:, None], None, None, grads.block2)
    g_E0, g_V0, g_U0 = _block_backward(p.block1, c1, g_E1, g_V1, g_U1, grads.block1)
    _mlp_backward(p.encoder, enc_in, g_U0, grads.encoder)
    np.add.at(grads.node_embed, node_kinds, g_V0)
    np.add.at(grads.edge_embed, edge_kinds, g_E0)
    return loss, grads


def batch_loss(p: GnnParams, batch: Sequence[tuple[GraphInput, int]]) -> float:
    """Mean loss without gradients (used by finite-difference checks)."""
    logits, edge_graph = forward_batch(p, [gi for gi, _ in batch])
    total = 0.0
    start = 0
    for g, (gi, y) in enumerate(batch):
        total += softmax_ce_loss(logits[start:start + gi.n_edges], y)
        start += gi.n_edges
    return total / len(batch)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def scheduled_lr(lr: float, schedule: str, epoch: int, epochs: int) -> float:
    """Constant rate, or cosine decay from ``lr`` towards zero."""
    if schedule == "constant":
        return lr
    if schedule == "cosine":
        return lr * 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
    raise ValueError(f"unknown schedule {schedule!r}")


def adam_init(params) -> AdamState:
    arrays = params.arrays()
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float = 1e-4,
                betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """One Adam step on a single array; returns new (p, m, v)."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = betas
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def adam_step(params, grads, state: AdamState, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam update of every parameter array; advances ``state.t``."""
    state.t += 1
    for k, (a, g) in enumerate(zip(params.arrays(), grads.arrays())):
        new, state.m[k], state.v[k] = adam_update(a, g, state.m[k], state.v[k], state.t, lr, betas, eps)
        a[...] = new


# ---------------------------------------------------------------------------
# checkpoints


def params_to_dict(params) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": params.config,
        "tensors": {name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()} for name, a in params.named()},
    }


def load_arrays_into(params, data: dict) -> None:
    """Copy tensors from a checkpoint dict into ``params``, checking shapes."""
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
    tensors = data["tensors"]
    names = [name for name, _ in params.named()]
    if sorted(names) != sorted(tensors):
        raise CheckpointError("checkpoint tensor names do not match the architecture")
    for name, a in params.named():
        t = tensors[name]
        if tuple(t["shape"]) != a.shape:
            raise CheckpointError(f"{name}: shape {tuple(t['shape'])} != expected {a.shape}")
        a[...] = np.asarray(t["data"], dtype=float).reshape(a.shape)


def gnn_from_dict(data: dict) -> GnnParams:
    cfg = data.get("config") or {}
    try:
        params = init_gnn(np.random.default_rng(0), cfg["obs_dim"], cfg["dim"], cfg["global_dim"], tuple(cfg["hidden"]),
                          cfg["n_node_kinds"], cfg["n_behaviors"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint config lacks {exc}") from None
    load_arrays_into(params, data)
    return params


def save_checkpoint(params, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)) + "\n")


def load_gnn(path: str | Path) -> GnnParams:
    return gnn_from_dict(json.loads(Path(path).read_text()))
