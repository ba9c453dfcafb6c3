"""Graph localization network: scan stacks in, current map edge out."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gnn
from .oracle_nav import Trajectory
from .topomap import SubGraph, TopoMap, crop_subgraph
from .worldsim import MAX_RANGE, N_RAYS

N_FRAMES = 5


class LocalizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# observations


def stack_at(scans: Sequence[np.ndarray], i: int, n_frames: int = N_FRAMES) -> np.ndarray:
    """The ``n_frames`` scans ending at ``i``, most recent last, front-padded with scan 0."""
    idx = [max(0, j) for j in range(i - n_frames + 1, i + 1)]
    return np.stack([np.asarray(scans[j], dtype=float) for j in idx])


class ScanStack:
    """Rolling window of the most recent scans."""

    def __init__(self, n_frames: int = N_FRAMES):
        self.n_frames = n_frames
        self._scans: list[np.ndarray] = []

    def push(self, scan: np.ndarray) -> "ScanStack":
        scan = np.asarray(scan, dtype=float)
        if not self._scans:
            self._scans = [scan] * self.n_frames
        else:
            self._scans = self._scans[1:] + [scan]
        return self

    def array(self) -> np.ndarray:
        if not self._scans:
            raise LocalizationError("scan stack is empty")
        return np.stack(self._scans)


def normalize_stack(stack: np.ndarray) -> np.ndarray:
    return np.asarray(stack, dtype=float).reshape(-1) / MAX_RANGE


def encode_observation(encoder: gnn.MlpParams, stack: np.ndarray) -> np.ndarray:
    return gnn.mlp_forward(encoder, normalize_stack(stack))


# ---------------------------------------------------------------------------
# graphs


def graph_input(sub: SubGraph, stack: np.ndarray) -> gnn.GraphInput:
    m = sub.map
    return gnn.GraphInput(
        np.array([n.kind.index for n in m.nodes], dtype=np.int64),
        np.array([e.behavior.index for e in m.edges], dtype=np.int64),
        np.array([e.src for e in m.edges], dtype=np.int64),
        np.array([e.dst for e in m.edges], dtype=np.int64),
        normalize_stack(stack),
    )


def build_tensors(sub: SubGraph, p: gnn.GnnParams, u: np.ndarray) -> gnn.GraphTensors:
    m = sub.map
    kinds = [n.kind.index for n in m.nodes]
    behaviors = [e.behavior.index for e in m.edges]
    return gnn.GraphTensors(u, p.node_embed[kinds], p.edge_embed[behaviors].reshape(len(behaviors), -1),
                            [e.dst for e in m.edges], [e.src for e in m.edges])


class CropCache:
    """Memoized ``crop_subgraph`` per (map, center)."""

    def __init__(self, ahead: int = 3, behind: int = 2):
        self.ahead, self.behind = ahead, behind
        self._cache: dict[tuple[int, int], SubGraph] = {}
        self._maps: dict[int, TopoMap] = {}  # keeps the maps alive so ids stay unique

    def __call__(self, topo: TopoMap, center: int) -> SubGraph:
        key = (id(topo), center)
        sub = self._cache.get(key)
        if sub is None:
            sub = crop_subgraph(topo, center, self.ahead, self.behind)
            self._cache[key] = sub
            self._maps[id(topo)] = topo
        return sub


@dataclass(frozen=True)
class LocEstimate:
    edge: int
    node: int
    prob: dict[int, float]


def _argmax_lowest(prob: np.ndarray, ids: Sequence[int]) -> int:
    best = prob.max()
    return min(k for k, q in zip(ids, prob) if q == best)


def predict_edge(p: gnn.GnnParams, topo: TopoMap, last: int, stack: np.ndarray,
                 crops: CropCache | None = None) -> LocEstimate:
    if not topo.has_node(last):
        raise LocalizationError(f"unknown crop center {last}")
    sub = crops(topo, last) if crops is not None else crop_subgraph(topo, last)
    if not sub.edge_ids:
        raise LocalizationError(f"crop around node {last} has no edges")
    logits, _ = gnn.forward_batch(p, [graph_input(sub, stack)])
    z = np.exp(logits - logits.max())
    prob = z / z.sum()
    edge = _argmax_lowest(prob, sub.edge_ids)
    return LocEstimate(edge, topo.edge(edge).src, {k: float(q) for k, q in zip(sub.edge_ids, prob)})


# ---------------------------------------------------------------------------
# datasets


@dataclass
class LocExample:
    topo: TopoMap
    center: int
    stack: np.ndarray
    edge: int


def nodes_within(topo: TopoMap, node: int, hops: int) -> list[int]:
    """Nodes at undirected hop distance 1..hops from ``node``, sorted."""
    seen = {node: 0}
    frontier = [node]
    for d in range(1, hops + 1):
        nxt = []
        for v in frontier:
            for w in topo.successors(v) + topo.predecessors(v):
                if w not in seen:
                    seen[w] = d
                    nxt.append(w)
        frontier = nxt
    return sorted(v for v, d in seen.items() if d > 0)


def make_training_examples(traj: Trajectory, topo: TopoMap, rng: np.random.Generator, samples_per_frame: int = 1,
                           own_source_prob: float = 0.5, hops: int = 2, n_frames: int = N_FRAMES,
                           crops: CropCache | None = None) -> list[LocExample]:
    """Crop-center augmentation: own source half the time, else a nearby node.

    Centers are resampled until the crop contains the true edge; the true
    source always qualifies, so the loop terminates.
    """
    crops = crops or CropCache()
    scans = [f.scan for f in traj.frames]
    out = []
    for i, f in enumerate(traj.frames):
        if f.labels is None or f.labels.edge is None:
            continue
        edge = f.labels.edge
        src = topo.edge(edge).src
        near = nodes_within(topo, src, hops)
        stack = stack_at(scans, i, n_frames)
        for _ in range(samples_per_frame):
            while True:
                if rng.random() < own_source_prob or not near:
                    center = src
                else:
                    center = near[int(rng.integers(len(near)))]
                if crops(topo, center).contains_edge(edge):
                    break
            out.append(LocExample(topo, center, stack, edge))
    return out


def evaluation_examples(traj: Trajectory, topo: TopoMap, n_frames: int = N_FRAMES) -> list[LocExample]:
    """Every edge-labeled frame with the crop centered at its true source."""
    scans = [f.scan for f in traj.frames]
    return [LocExample(topo, topo.edge(f.labels.edge).src, stack_at(scans, i, n_frames), f.labels.edge)
            for i, f in enumerate(traj.frames) if f.labels is not None and f.labels.edge is not None]


def _encode_examples(examples: Sequence[LocExample], crops: CropCache):
    inputs, targets, subs = [], [], []
    for ex in examples:
        sub = crops(ex.topo, ex.center)
        y = sub.local_edge(ex.edge)
        if y is None:
            raise LocalizationError(f"edge {ex.edge} lies outside the crop around {ex.center}")
        inputs.append(graph_input(sub, ex.stack))
        targets.append(y)
        subs.append(sub)
    return inputs, targets, subs


# ---------------------------------------------------------------------------
# training


@dataclass
class GlnConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    dim: int = 32
    global_dim: int = 32
    hidden: tuple[int, ...] = (64, 64, 64)
    n_frames: int = N_FRAMES
    schedule: str = "constant"  # or "cosine": decay to zero over the run

    def lr_at(self, epoch: int) -> float:
        return gnn.scheduled_lr(self.lr, self.schedule, epoch, self.epochs)


@dataclass
class TrainingCurve:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "val_accuracy": self.val_accuracy}


def _scores(p: gnn.GnnParams, inputs, targets, chunk: int = 256) -> tuple[float, float]:
    """Mean loss and argmax accuracy (ties to the lowest edge id)."""
    loss, correct = 0.0, 0
    for k in range(0, len(inputs), chunk):
        part = inputs[k:k + chunk]
        logits, seg = gnn.forward_batch(p, part)
        start = 0
        for gi, y in zip(part, targets[k:k + chunk]):
            z = logits[start:start + gi.n_edges]
            start += gi.n_edges
            loss += gnn.softmax_ce_loss(z, y)
            correct += int(np.argmax(z) == y)  # local edge order follows parent ids
    return loss / len(inputs), correct / len(inputs)


def train_gln(examples: Sequence[LocExample], config: GlnConfig = GlnConfig(),
              validation: Sequence[LocExample] | None = None, params: gnn.GnnParams | None = None,
              crops: CropCache | None = None, log=None) -> tuple[gnn.GnnParams, TrainingCurve]:
    """Shuffled mini-batch Adam on the edge cross-entropy."""
    if not examples:
        raise LocalizationError("no training examples")
    crops = crops or CropCache()
    rng = np.random.default_rng(config.seed)
    inputs, targets, _ = _encode_examples(examples, crops)
    val = _encode_examples(validation, crops)[:2] if validation else None
    if params is None:
        params = gnn.init_gnn(rng, len(inputs[0].obs), config.dim, config.global_dim, config.hidden)
    state = gnn.adam_init(params)
    curve = TrainingCurve()
    n = len(inputs)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for k in range(0, n, config.batch_size):
            idx = order[k:k + config.batch_size]
            loss, grads = gnn.backward(params, [(inputs[i], targets[i]) for i in idx])
            gnn.adam_step(params, grads, state, lr=lr)
            total += loss * len(idx)
        curve.train_loss.append(total / n)
        if val:
            vl, va = _scores(params, *val)
            curve.val_loss.append(vl)
            curve.val_accuracy.append(va)
        if log is not None:
            log(epoch, curve)
    return params, curve


def eval_localization_accuracy(p: gnn.GnnParams, examples: Sequence[LocExample],
                               crops: CropCache | None = None) -> float:
    if not examples:
        raise LocalizationError("cannot evaluate on an empty dataset")
    crops = crops or CropCache()
    centered = [LocExample(ex.topo, ex.topo.edge(ex.edge).src, ex.stack, ex.edge) for ex in examples]
    inputs, targets, _ = _encode_examples(centered, crops)
    return _scores(p, inputs, targets)[1]


# ---------------------------------------------------------------------------
# estimator wrapper


class GraphLocalizer(BaseEstimator):
    """Estimator interface over the GLN.

    ``fit`` takes ``LocExample`` lists (or trajectories via
    ``fit_trajectories``); ``predict`` takes ``(map, last node, stack)``
    triples and returns parent edge ids.
    """

    def __init__(self, dim: int = 32, global_dim: int = 32, hidden: tuple[int, ...] = (64, 64, 64),
                 n_frames: int = N_FRAMES, epochs: int = 30, batch_size: int = 32, lr: float = 1e-4,
                 schedule: str = "constant", own_source_prob: float = 0.5, center_hops: int = 2,
                 samples_per_frame: int = 1, random_state: int = 0):
        self.dim = dim
        self.global_dim = global_dim
        self.hidden = hidden
        self.n_frames = n_frames
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.own_source_prob = own_source_prob
        self.center_hops = center_hops
        self.samples_per_frame = samples_per_frame
        self.random_state = random_state

    def _config(self) -> GlnConfig:
        return GlnConfig(self.epochs, self.batch_size, self.lr, self.random_state, self.dim, self.global_dim,
                         tuple(self.hidden), self.n_frames, self.schedule)

    def _validate(self):
        if not 0.0 <= self.own_source_prob <= 1.0:
            raise ValueError(f"own_source_prob must lie in [0, 1], got {self.own_source_prob}")
        for name in ("dim", "global_dim", "n_frames", "epochs", "batch_size", "samples_per_frame"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def fit(self, X: Sequence[LocExample], y=None, validation: Sequence[LocExample] | None = None):
        self._validate()
        self._crops = CropCache()
        self.params_, self.curve_ = train_gln(X, self._config(), validation, crops=self._crops)
        return self

    def fit_trajectories(self, trajectories: Sequence[tuple[Trajectory, TopoMap]], validation=None):
        self._validate()
        rng = np.random.default_rng([self.random_state, 1])
        crops = CropCache()
        examples = []
        for traj, topo in trajectories:
            examples += make_training_examples(traj, topo, rng, self.samples_per_frame, self.own_source_prob,
                                               self.center_hops, self.n_frames, crops)
        return self.fit(examples, validation=validation)

    def predict_estimate(self, topo: TopoMap, last: int, stack: np.ndarray) -> LocEstimate:
        check_is_fitted(self, "params_")
        return predict_edge(self.params_, topo, last, stack, getattr(self, "_crops", None))

    def predict(self, X: Sequence[tuple[TopoMap, int, np.ndarray]]) -> np.ndarray:
        return np.array([self.predict_estimate(topo, last, stack).edge for topo, last, stack in X], dtype=np.int64)

    def score(self, X: Sequence[LocExample], y=None) -> float:
        check_is_fitted(self, "params_")
        return eval_localization_accuracy(self.params_, X, getattr(self, "_crops", None))

    @classmethod
    def from_params(cls, params: gnn.GnnParams, n_frames: int | None = None) -> "GraphLocalizer":
        cfg = params.config
        obs_frames = cfg["obs_dim"] // N_RAYS
        est = cls(dim=cfg["dim"], global_dim=cfg["global_dim"], hidden=tuple(cfg["hidden"]),
                  n_frames=n_frames or obs_frames)
        est.params_ = params
        est._crops = CropCache()
        return est


def uniform_accuracy_expectation(examples: Sequence[LocExample]) -> float:
    """Expected accuracy of a uniform guess: mean of 1/m over the crops."""
    crops = CropCache()
    return float(np.mean([1.0 / len(crops(ex.topo, ex.topo.edge(ex.edge).src).edge_ids) for ex in examples]))


__all__ = [
    "N_FRAMES", "LocalizationError", "ScanStack", "stack_at", "encode_observation", "graph_input", "build_tensors",
    "CropCache", "LocEstimate", "predict_edge", "LocExample", "make_training_examples", "evaluation_examples",
    "GlnConfig", "TrainingCurve", "train_gln", "eval_localization_accuracy", "GraphLocalizer",
]
