"""Per-behavior visuo-motor policies (behavioral cloning) and behavior selection."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gnn
from .gln import N_FRAMES, normalize_stack, stack_at
from .oracle_nav import Trajectory
from .topomap import BehaviorKind, NavPlan
from .worldsim import N_RAYS, V_MAX, W_MAX, VelocityCmd

ARRIVED = "arrived"
SPARSE_BEHAVIOR_FRAMES = 50


class BehaviorTrainingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class PlanCursor:
    plan: NavPlan
    last_valid_index: int = 0

    def __post_init__(self):
        if not 0 <= self.last_valid_index < len(self.plan.node_seq):
            raise ValueError("cursor outside the plan")


def select_behavior(cursor: PlanCursor, loc: int) -> tuple[BehaviorKind | str, PlanCursor]:
    """Behavior for the localized node, or ``ARRIVED`` at the destination.

    Off-plan locations repeat the behavior at the last valid position. Nodes
    that occur twice resolve to the first occurrence at or after the cursor,
    and the cursor never moves backwards.
    """
    nodes = cursor.plan.node_seq
    if loc == nodes[-1]:
        return ARRIVED, replace(cursor, last_valid_index=len(nodes) - 1)
    hits = [i for i, v in enumerate(nodes[:-1]) if v == loc]
    if not hits:
        i = min(cursor.last_valid_index, len(nodes) - 2)
        return cursor.plan.behavior_seq[i], cursor
    later = [i for i in hits if i >= cursor.last_valid_index]
    i = later[0] if later else hits[0]
    return cursor.plan.behavior_seq[i], replace(cursor, last_valid_index=max(i, cursor.last_valid_index))


# ---------------------------------------------------------------------------
# policies


def clamp_command(raw: np.ndarray) -> VelocityCmd:
    return VelocityCmd(float(np.clip(raw[0], 0.0, V_MAX)), float(np.clip(raw[1], -W_MAX, W_MAX)))


def policy_forward(p: "PolicySet | dict", behavior: BehaviorKind, stack: np.ndarray) -> VelocityCmd:
    nets = p.nets if isinstance(p, PolicySet) else p
    return clamp_command(gnn.mlp_forward(nets[behavior], normalize_stack(stack)))


def bc_loss(pred: VelocityCmd, target: VelocityCmd) -> float:
    return ((pred.v_p - target.v_p) ** 2 + (pred.v_theta - target.v_theta) ** 2) / 2.0


def behavior_dataset(trajectories: Sequence[Trajectory], kind: BehaviorKind,
                     n_frames: int = N_FRAMES) -> tuple[np.ndarray, np.ndarray]:
    """Stacks and pre-noise expert commands of every frame tagged ``kind``."""
    X, Y = [], []
    for traj in trajectories:
        scans = [f.scan for f in traj.frames]
        for i, f in enumerate(traj.frames):
            if f.labels is not None and f.labels.behavior == kind:
                X.append(stack_at(scans, i, n_frames))
                Y.append(f.cmd_expert.as_array())
    if not X:
        return np.zeros((0, n_frames, N_RAYS)), np.zeros((0, 2))
    return np.stack(X), np.stack(Y)


@dataclass
class BehaviorConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 64)
    schedule: str = "constant"


@dataclass
class _MlpSet:
    """Adapter so the gnn Adam helpers can update a single MLP."""

    mlp: gnn.MlpParams

    def arrays(self):
        return [a for _, a in self.mlp.named("")]


def _mse_backward(p: gnn.MlpParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, gnn.MlpParams]:
    out, cache = gnn._mlp_forward_cached(p, X)
    diff = out - Y
    loss = float(np.mean(diff ** 2))
    grads = gnn.MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in p.layers])
    gnn._mlp_backward(p, cache, 2.0 * diff / diff.size, grads)
    return loss, grads


def train_behavior(kind: BehaviorKind, X: np.ndarray, Y: np.ndarray, config: BehaviorConfig = BehaviorConfig(),
                   log=None) -> tuple[gnn.MlpParams, list[float]]:
    """Adam on the two-component MSE; returns the network and per-epoch loss."""
    if len(X) == 0:
        raise BehaviorTrainingError(f"no frames tagged {kind.value!r}")
    if len(X) < SPARSE_BEHAVIOR_FRAMES:
        warnings.warn(f"behavior {kind.value!r} has only {len(X)} frames", stacklevel=2)
    rng = np.random.default_rng([config.seed, kind.index])
    Xf = np.stack([normalize_stack(x) for x in X])
    Y = np.asarray(Y, dtype=float)
    net = gnn.init_mlp(rng, [Xf.shape[1], *config.hidden, 2])
    holder = _MlpSet(net)
    state = gnn.adam_init(holder)
    curve = []
    for epoch in range(config.epochs):
        lr = gnn.scheduled_lr(config.lr, config.schedule, epoch, config.epochs)
        order = rng.permutation(len(Xf))
        total = 0.0
        for k in range(0, len(Xf), config.batch_size):
            idx = order[k:k + config.batch_size]
            loss, grads = _mse_backward(net, Xf[idx], Y[idx])
            gnn.adam_step(holder, _MlpSet(grads), state, lr=lr)
            total += loss * len(idx)
        curve.append(total / len(Xf))
        if log is not None:
            log(kind, epoch, curve[-1])
    return net, curve


@dataclass
class PolicySet:
    nets: dict[BehaviorKind, gnn.MlpParams]
    curves: dict[BehaviorKind, list[float]] = field(default_factory=dict)

    def command(self, behavior: BehaviorKind, stack: np.ndarray) -> VelocityCmd:
        return policy_forward(self, behavior, stack)

    def to_dict(self) -> dict:
        out = {"version": gnn.CHECKPOINT_VERSION, "behaviors": {}}
        for kind, net in self.nets.items():
            sizes = [net.in_dim] + [w.shape[1] for w, _ in net.layers]
            out["behaviors"][kind.value] = {
                "sizes": sizes,
                "tensors": {name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()} for name, a in net.named("mlp")},
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PolicySet":
        if data.get("version") != gnn.CHECKPOINT_VERSION:
            raise gnn.CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
        nets = {}
        for value, entry in data["behaviors"].items():
            net = gnn.init_mlp(np.random.default_rng(0), entry["sizes"])
            tensors = entry["tensors"]
            for name, a in net.named("mlp"):
                if name not in tensors or tuple(tensors[name]["shape"]) != a.shape:
                    raise gnn.CheckpointError(f"{value}/{name}: missing tensor or wrong shape")
                a[...] = np.asarray(tensors[name]["data"], dtype=float).reshape(a.shape)
            nets[BehaviorKind(value)] = net
        return cls(nets)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolicySet":
        return cls.from_dict(json.loads(Path(path).read_text()))


class BehaviorPolicy(BaseEstimator):
    """Estimator interface: one behavior, stacks in, clamped commands out.

    ``X`` holds scan stacks of shape (n, n_frames, 64) in meters; ``y`` holds
    expert commands of shape (n, 2).
    """

    def __init__(self, behavior: str = "cf", hidden: tuple[int, ...] = (64, 64, 64), epochs: int = 30,
                 batch_size: int = 32, lr: float = 1e-4, schedule: str = "constant", random_state: int = 0):
        self.behavior = behavior
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.random_state = random_state

    def _kind(self) -> BehaviorKind:
        try:
            return BehaviorKind(self.behavior)
        except ValueError:
            raise ValueError(f"unknown behavior {self.behavior!r}") from None

    def fit(self, X, y):
        kind = self._kind()
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 3 or X.shape[2] != N_RAYS:
            raise ValueError(f"X must have shape (n, n_frames, {N_RAYS}), got {X.shape}")
        if y.shape != (len(X), 2):
            raise ValueError(f"y must have shape ({len(X)}, 2), got {y.shape}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        config = BehaviorConfig(self.epochs, self.batch_size, self.lr, self.random_state, tuple(self.hidden),
                                self.schedule)
        self.net_, self.loss_curve_ = train_behavior(kind, X, y, config)
        self.n_frames_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.n_frames_, N_RAYS):
            raise ValueError(f"expected stacks of shape ({self.n_frames_}, {N_RAYS}), got {X.shape[1:]}")
        raw = gnn.mlp_forward(self.net_, np.stack([normalize_stack(x) for x in X]))
        return np.column_stack([np.clip(raw[:, 0], 0.0, V_MAX), np.clip(raw[:, 1], -W_MAX, W_MAX)])

    def score(self, X, y) -> float:
        """Negative mean squared error (higher is better)."""
        return -float(np.mean((self.predict(X) - np.asarray(y, dtype=float)) ** 2))


def train_policy_set(trajectories: Sequence[Trajectory], kinds: Sequence[BehaviorKind] | None = None,
                     config: BehaviorConfig = BehaviorConfig(), n_frames: int = N_FRAMES, log=None) -> PolicySet:
    nets, curves = {}, {}
    for kind in kinds or list(BehaviorKind):
        X, Y = behavior_dataset(trajectories, kind, n_frames)
        nets[kind], curves[kind] = train_behavior(kind, X, Y, config, log)
    return PolicySet(nets, curves)
