"""Independent reference implementations used as test oracles.

None of these import the code under test's internals; they re-derive results
with the most literal algorithm available (explicit loops, dense matrices,
extended precision).
"""
from __future__ import annotations

from collections import deque

import numpy as np

LD = np.longdouble


# ---------------------------------------------------------------------------
# graph network


def mlp_loops(layers, x):
    """MLP with explicit dot products per output unit."""
    x = [float(v) for v in x]
    for k, (w, b) in enumerate(layers):
        out = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += x[i] * float(w[i, j])
            out.append(acc)
        if k < len(layers) - 1:
            out = [max(v, 0.0) for v in out]
        x = out
    return x


def gn_block_loops(phi_e, phi_v, phi_u, u, V, E, receivers, senders):
    """Single-graph GN block with every concatenation materialized as a list."""
    u = list(map(float, u))
    V = [list(map(float, v)) for v in V]
    E = [list(map(float, e)) for e in E]
    e_new = []
    for k in range(len(E)):
        e_new.append(mlp_loops(phi_e, E[k] + V[receivers[k]] + V[senders[k]] + u))
    d_e = len(phi_e[-1][1])
    v_new = []
    for i in range(len(V)):
        agg = [0.0] * d_e
        for k in range(len(E)):
            if receivers[k] == i:
                agg = [a + b for a, b in zip(agg, e_new[k])]
        v_new.append(mlp_loops(phi_v, agg + V[i] + u))
    d_v = len(phi_v[-1][1])
    e_sum = [0.0] * d_e
    for e in e_new:
        e_sum = [a + b for a, b in zip(e_sum, e)]
    v_sum = [0.0] * d_v
    for v in v_new:
        v_sum = [a + b for a, b in zip(v_sum, v)]
    u_new = mlp_loops(phi_u, e_sum + v_sum + u)
    return np.array(u_new), np.array(v_new).reshape(len(V), d_v), np.array(e_new).reshape(len(E), d_e)


def _mlp_k(P, prefix, n_layers, x, margins=None):
    """MLP over a leading parameter-copy axis K; x has shape (K, rows, in)."""
    for k in range(n_layers):
        x = np.matmul(x, P[f"{prefix}.{k}.W"]) + P[f"{prefix}.{k}.b"][:, None, :]
        if k < n_layers - 1:
            if margins is not None and x.size:
                margins.append(float(np.abs(x).min()))
            x = np.maximum(x, 0)
    return x


def _n_layers(P, prefix):
    k = 0
    while f"{prefix}.{k}.W" in P:
        k += 1
    return k


def _bcast_cat(parts):
    K = max(p.shape[0] for p in parts)
    return np.concatenate([np.broadcast_to(p, (K,) + p.shape[1:]) for p in parts], axis=-1)


def _block_k(P, prefix, u, V, E, r, s, edges_only, margins=None):
    """u: (K,1,Du), V: (K,n,D), E: (K,m,D)."""
    m, n = E.shape[1], V.shape[1]
    ue = np.broadcast_to(u, (u.shape[0], m, u.shape[2]))
    e_new = _mlp_k(P, prefix + ".phi_e", _n_layers(P, prefix + ".phi_e"), _bcast_cat([E, V[:, r], V[:, s], ue]), margins)
    if edges_only:
        return None, None, e_new
    K = e_new.shape[0]
    agg = np.zeros((K, n, e_new.shape[2]), dtype=e_new.dtype)
    for k in range(m):
        agg[:, r[k]] += e_new[:, k]
    un = np.broadcast_to(u, (u.shape[0], n, u.shape[2]))
    v_new = _mlp_k(P, prefix + ".phi_v", _n_layers(P, prefix + ".phi_v"), _bcast_cat([agg, V, un]), margins)
    glob = _bcast_cat([e_new.sum(axis=1, keepdims=True), v_new.sum(axis=1, keepdims=True), u])
    u_new = _mlp_k(P, prefix + ".phi_u", _n_layers(P, prefix + ".phi_u"), glob, margins)
    return u_new, v_new, e_new


def loss_many(P: dict, batch, margins: list | None = None) -> np.ndarray:
    """Mean softmax cross-entropy for K parameter copies at once.

    ``P`` maps tensor name to an array with a leading copy axis (size K or 1).
    ``batch`` is a list of (node_kinds, edge_kinds, senders, receivers, obs, y).
    ``margins`` collects the smallest |pre-activation| of every hidden layer.
    """
    total = 0
    for kinds, beh, s, r, obs, y in batch:
        obs = np.asarray(obs, dtype=LD)[None, None, :]
        u = _mlp_k(P, "encoder", _n_layers(P, "encoder"), obs, margins)
        V = P["node_embed"][:, kinds]
        E = P["edge_embed"][:, beh]
        u1, V1, E1 = _block_k(P, "block1", u, V, E, r, s, False, margins)
        _, _, E2 = _block_k(P, "block2", u1, V1, E1, r, s, True, margins)
        z = E2[:, :, 0]
        peak = z.max(axis=1, keepdims=True)
        total = total + (np.log(np.exp(z - peak).sum(axis=1)) + peak[:, 0] - z[:, y])
    K = max(a.shape[0] for a in P.values())
    return np.broadcast_to(total / len(batch), (K,))  # copies of unused tensors all give the same loss


def relu_margin(named: dict, batch) -> float:
    """Distance of the nearest hidden pre-activation to the ReLU kink.

    Central differences are meaningless for a unit whose pre-activation is
    within the step size of zero, so gradient checks screen instances by this.
    """
    margins: list[float] = []
    loss_many({k: np.asarray(v, dtype=LD)[None] for k, v in named.items()}, batch, margins)
    return min(margins) if margins else np.inf


def fd_gradients(named: dict, batch, h: float = 1e-5) -> dict:
    """Central differences in extended precision, one tensor at a time."""
    base = {k: np.asarray(v, dtype=LD)[None] for k, v in named.items()}
    out = {}
    for name, a in named.items():
        size = a.size
        pert = np.repeat(base[name], 2 * size, axis=0).reshape(2 * size, -1)
        idx = np.arange(size)
        pert[idx, idx] += LD(h)
        pert[size + idx, idx] -= LD(h)
        P = dict(base)
        P[name] = pert.reshape((2 * size,) + a.shape)
        losses = loss_many(P, batch)
        out[name] = ((losses[:size] - losses[size:]) / (2 * LD(h))).reshape(a.shape)
    return out


# ---------------------------------------------------------------------------
# filtering


def transition_matrix(n: int, out_neighbors: list[list[int]], stay: float = 0.8) -> np.ndarray:
    """Column-stochastic T[to, from] for the stay/move-to-neighbor model."""
    T = np.zeros((n, n))
    for w in range(n):
        nb = out_neighbors[w]
        if not nb:
            T[w, w] = 1.0
            continue
        T[w, w] += stay
        for v in nb:
            T[v, w] += (1.0 - stay) / len(nb)
    return T


def hmm_forward(prior: np.ndarray, T: np.ndarray, emissions: list[np.ndarray]) -> np.ndarray:
    alpha = prior.copy()
    for e in emissions:
        alpha = e * (T @ alpha)
        alpha = alpha / alpha.sum()
    return alpha


# ---------------------------------------------------------------------------
# graphs


def bfs_oracle(succ: dict[int, list[int]], src: int) -> dict[int, int]:
    dist = {src: 0}
    q = deque([src])
    while q:
        a = q.popleft()
        for b in succ[a]:
            if b not in dist:
                dist[b] = dist[a] + 1
                q.append(b)
    return dist


def keep_set(succ: dict[int, list[int]], pred: dict[int, list[int]], center: int, ahead: int, behind: int) -> set[int]:
    fwd = {v for v, d in bfs_oracle(succ, center).items() if d <= ahead}
    bwd = {v for v, d in bfs_oracle(pred, center).items() if d <= behind}
    return fwd | bwd
