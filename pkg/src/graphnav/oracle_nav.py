"""Scripted expert: grid shortest paths, pure pursuit, and trajectory recording.

The expert plans a metric path through the plan's node positions on the
inflated occupancy grid and tracks it with a pure-pursuit controller. Noise
is injected into the executed command only; the pre-noise command is what
downstream behavior cloning trains on.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import dijkstra

from .topomap import BehaviorKind, NavPlan, TopoMap, difficulty, shortest_plan
from .worldsim import (DT, ROBOT_RADIUS, V_MAX, W_MAX, CollisionEvent, NoiseState, RobotState, VelocityCmd,
                       WorldModel, ZERO_CMD, inject_noise, raycast_scan, step, wrap_angle)

INFLATION = ROBOT_RADIUS + 0.05
LOOKAHEAD = 0.5
GOAL_TOLERANCE = 0.25
TIMEOUT = 120.0
STEER_GAIN = 2.0
CUSP_RADIUS = 0.3
CLEARANCE_SCALE = 0.4  # metres; larger values push paths harder toward free-space medial axes


class CollectionError(RuntimeError):
    pass


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class NavTask:
    map_id: str
    start: int
    goal: int
    plan: NavPlan

    @property
    def difficulty(self):
        return difficulty(self.plan)

    @classmethod
    def between(cls, topo: TopoMap, start: int, goal: int) -> "NavTask":
        return cls(topo.name, start, goal, shortest_plan(topo, start, goal))

    def to_dict(self) -> dict:
        return {"map": self.map_id, "start": self.start, "goal": self.goal, "edges": list(self.plan.edge_seq)}

    @classmethod
    def from_dict(cls, data: dict, topo: TopoMap) -> "NavTask":
        plan = NavPlan.from_edges(topo, int(data["start"]), [int(k) for k in data["edges"]])
        if plan.node_seq[-1] != int(data["goal"]):
            raise ValueError("task plan does not end at its goal")
        return cls(data.get("map", topo.name), int(data["start"]), int(data["goal"]), plan)


@dataclass(frozen=True)
class AnnotationLabels:
    behavior: BehaviorKind | None = None
    node: int | None = None
    edge: int | None = None
    room: str | None = None


@dataclass(frozen=True)
class Frame:
    t: float
    pose: RobotState
    scan: np.ndarray
    cmd_expert: VelocityCmd
    cmd_executed: VelocityCmd
    labels: AnnotationLabels = field(default_factory=AnnotationLabels)


@dataclass
class Trajectory:
    frames: list[Frame]
    task: NavTask
    world_id: str
    map_id: str
    outcome: str = "success"  # success | collision | timeout
    seed: int | None = None

    def __post_init__(self):
        if not self.frames:
            raise ValueError("trajectory needs at least one frame")

    def __len__(self):
        return len(self.frames)

    @property
    def poses(self) -> np.ndarray:
        return np.array([[f.pose.x, f.pose.y, f.pose.theta] for f in self.frames])

    def with_labels(self, labels: list[AnnotationLabels]) -> "Trajectory":
        frames = [replace(f, labels=lab) for f, lab in zip(self.frames, labels, strict=True)]
        return Trajectory(frames, self.task, self.world_id, self.map_id, self.outcome, self.seed)


# ---------------------------------------------------------------------------
# metric planning


class MetricPlanner:
    """Shortest paths on the inflated grid with a clearance-weighted cost.

    The cost of a cell is ``1 + (CLEARANCE_SCALE / d)**2`` where ``d`` is the
    distance to the nearest obstacle, so paths keep to the middle of doors
    and corridors. Searches are Dijkstra on an 8-connected sparse graph.
    """

    def __init__(self, world: WorldModel):
        self.world = world
        res = world.resolution
        dist = ndimage.distance_transform_edt(~world.occupancy) * res
        self.free = dist > INFLATION
        h, w = self.free.shape
        cost = 1.0 + (CLEARANCE_SCALE / np.maximum(dist, res)) ** 2
        index = np.full((h, w), -1, dtype=np.int64)
        iy, ix = np.nonzero(self.free)
        index[iy, ix] = np.arange(iy.size)
        self._cells = np.stack([iy, ix], axis=1)
        self._index = index
        rows, cols, weights = [], [], []
        for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
            ys = slice(0, h - dy)
            xs = slice(max(0, -dx), w - max(0, dx))
            a = index[ys, xs]
            b = index[dy:h, max(0, dx):w - max(0, -dx)]
            ca = cost[ys, xs]
            cb = cost[dy:h, max(0, dx):w - max(0, -dx)]
            ok = (a >= 0) & (b >= 0)
            step_len = res * math.hypot(dx, dy)
            rows.append(a[ok])
            cols.append(b[ok])
            weights.append(step_len * 0.5 * (ca[ok] + cb[ok]))
        r, c, wt = np.concatenate(rows), np.concatenate(cols), np.concatenate(weights)
        n = iy.size
        self._graph = sparse.csr_matrix((np.concatenate([wt, wt]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                                        shape=(n, n))
        self._pred_cache: dict[int, np.ndarray] = {}

    def _cell_index(self, x: float, y: float) -> int:
        iy, ix = self.world.cell_of(x, y)
        h, w = self.free.shape
        if 0 <= iy < h and 0 <= ix < w and self._index[iy, ix] >= 0:
            return int(self._index[iy, ix])
        # snap to the nearest traversable cell
        d2 = (self._cells[:, 0] - iy) ** 2 + (self._cells[:, 1] - ix) ** 2
        k = int(np.argmin(d2))
        if d2[k] * self.world.resolution ** 2 > 0.5 ** 2:
            raise CollectionError(f"no traversable cell near ({x:.2f}, {y:.2f})")
        return k

    def path(self, start: tuple[float, float], goal: tuple[float, float]) -> np.ndarray:
        """Waypoints from ``start`` to ``goal`` (both included), shape (k, 2)."""
        s, g = self._cell_index(*start), self._cell_index(*goal)
        if s not in self._pred_cache:
            _, pred = dijkstra(self._graph, indices=s, return_predecessors=True)
            self._pred_cache[s] = pred
        pred = self._pred_cache[s]
        if g != s and pred[g] < 0:
            raise CollectionError(f"no metric path from {start} to {goal}")
        chain = [g]
        while chain[-1] != s:
            chain.append(int(pred[chain[-1]]))
        cells = self._cells[chain[::-1]]
        pts = (cells[:, ::-1] + 0.5) * self.world.resolution
        return np.vstack([np.asarray(start, float), pts[1:-1], np.asarray(goal, float)])

    def plan_path(self, topo: TopoMap, plan: NavPlan) -> np.ndarray:
        pieces = [np.asarray(topo.node(plan.node_seq[0]).position, float)[None]]
        for a, b in zip(plan.node_seq[:-1], plan.node_seq[1:]):
            seg = self.path(topo.node(a).position, topo.node(b).position)
            pieces.append(seg[1:])
        return np.vstack(pieces)


# ---------------------------------------------------------------------------
# control


class PathFollower:
    """Pure pursuit along a fixed polyline with a monotone progress index."""

    def __init__(self, path: np.ndarray, lookahead: float = LOOKAHEAD, window: float = 0.5):
        path = np.asarray(path, dtype=float)
        if path.ndim != 2 or len(path) == 0:
            raise ControllerError("empty metric path")
        self.path = path
        seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
        self.arc = np.concatenate([[0.0], np.cumsum(seg)])
        self.lookahead = lookahead
        self.window = window
        self.progress = 0
        self._cusps = _cusp_indices(path, self.arc)

    def _horizon(self) -> int:
        """Last index the follower may look at: the next unvisited cusp."""
        while self._cusps and self._cusps[0] < self.progress:
            self._cusps.pop(0)
        return self._cusps[0] + 1 if self._cusps else len(self.path)

    @property
    def goal(self) -> np.ndarray:
        return self.path[-1]

    def _advance(self, x: float, y: float) -> None:
        hi = np.searchsorted(self.arc, self.arc[self.progress] + self.window, side="right")
        if self._cusps:
            c = self._cusps[0]
            if math.hypot(self.path[c, 0] - x, self.path[c, 1] - y) <= CUSP_RADIUS:
                self._cusps.pop(0)
                self.progress = max(self.progress, c)
                hi = np.searchsorted(self.arc, self.arc[c] + self.window, side="right")
            else:
                hi = min(hi, c + 1)
        cand = self.path[self.progress:hi]
        d = np.hypot(cand[:, 0] - x, cand[:, 1] - y)
        # where a path retraces itself, the later pass wins exact ties
        self.progress += int(np.nonzero(d <= d.min() + 1e-6)[0][-1])

    def target(self, state: RobotState) -> np.ndarray:
        """First path point past the progress index at least one lookahead away."""
        self._advance(state.x, state.y)
        rest = self.path[self.progress:self._horizon()]
        far = np.hypot(rest[:, 0] - state.x, rest[:, 1] - state.y) >= self.lookahead
        if not far.any():
            return rest[-1]
        return rest[int(np.argmax(far))]

    def at_goal(self, state: RobotState, tol: float = GOAL_TOLERANCE) -> bool:
        near_end = self.arc[-1] - self.arc[self.progress] <= self.lookahead + tol
        return near_end and math.hypot(state.x - self.goal[0], state.y - self.goal[1]) <= tol

    def command(self, state: RobotState) -> VelocityCmd:
        tx, ty = self.target(state)
        return pursuit_command(state, (tx, ty))


def _cusp_indices(path: np.ndarray, arc: np.ndarray, reach: float = 0.25) -> list[int]:
    """Indices where the path doubles back on itself (direction change > 120 deg)."""
    out = []
    for i in range(1, len(path) - 1):
        a = np.searchsorted(arc, arc[i] - reach)
        b = min(len(path) - 1, np.searchsorted(arc, arc[i] + reach))
        u, v = path[i] - path[a], path[b] - path[i]
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu > 0 and nv > 0 and u @ v < -0.5 * nu * nv:
            if not out or arc[i] - arc[out[-1]] > 2 * reach:
                out.append(i)
    return out


def pursuit_command(state: RobotState, point: tuple[float, float]) -> VelocityCmd:
    alpha = wrap_angle(math.atan2(point[1] - state.y, point[0] - state.x) - state.theta)
    v_p = V_MAX * max(0.0, math.cos(alpha))
    if abs(alpha) > math.radians(160):
        v_t = W_MAX  # nearly behind: commit to one turning direction
    elif abs(alpha) > math.pi / 2:
        v_t = math.copysign(W_MAX, alpha)
    else:
        v_t = min(max(STEER_GAIN * math.sin(alpha), -W_MAX), W_MAX)
    return VelocityCmd(v_p, v_t)


def oracle_velocity(world: WorldModel, state: RobotState, metric_path) -> VelocityCmd:
    """Stateless pure-pursuit command toward the lookahead point of ``metric_path``."""
    return PathFollower(metric_path).command(state)


# ---------------------------------------------------------------------------
# collection

_PLANNERS: dict[int, MetricPlanner] = {}


def planner_for(world: WorldModel) -> MetricPlanner:
    key = id(world)
    planner = _PLANNERS.get(key)
    if planner is None or planner.world is not world:
        planner = MetricPlanner(world)
        _PLANNERS[key] = planner
    return planner


def start_state(topo: TopoMap, node_id: int, rng: np.random.Generator) -> RobotState:
    node = topo.node(node_id)
    theta = node.orientation if node.orientation is not None else float(rng.uniform(-math.pi, math.pi))
    return RobotState(node.position[0], node.position[1], wrap_angle(theta), 0.0)


def collect_trajectory(world: WorldModel, topo: TopoMap, task: NavTask, rng: np.random.Generator,
                       noise: bool = True, timeout: float = TIMEOUT) -> Trajectory:
    path = planner_for(world).plan_path(topo, task.plan)
    follower = PathFollower(path)
    state = start_state(topo, task.start, rng)
    z = NoiseState()
    frames: list[Frame] = []
    outcome = "timeout"
    n_steps = int(round(timeout / DT))
    for k in range(n_steps + 1):
        t = round(k * DT, 10)
        state = replace(state, time=t)
        scan = raycast_scan(world, state)
        if follower.at_goal(state):
            frames.append(Frame(t, state, scan, ZERO_CMD, ZERO_CMD))
            outcome = "success"
            break
        if k == n_steps:
            frames.append(Frame(t, state, scan, ZERO_CMD, ZERO_CMD))
            break
        raw = follower.command(state)
        if noise:
            z, executed = inject_noise(z, raw, rng)
        else:
            executed = raw
        frames.append(Frame(t, state, scan, raw, executed))
        nxt = step(world, state, executed)
        if isinstance(nxt, CollisionEvent):
            outcome = "collision"
            break
        state = nxt
    return Trajectory(frames, task, world.name, topo.name, outcome)


# ---------------------------------------------------------------------------
# dataset files


def _labels_to_dict(lab: AnnotationLabels) -> dict:
    return {
        "behavior": lab.behavior.value if lab.behavior is not None else None,
        "node": lab.node,
        "edge": lab.edge,
        "room": lab.room,
    }


def _labels_from_dict(d: dict | None) -> AnnotationLabels:
    if not d:
        return AnnotationLabels()
    b = d.get("behavior")
    return AnnotationLabels(BehaviorKind(b) if b is not None else None, d.get("node"), d.get("edge"), d.get("room"))


def frame_to_record(f: Frame) -> dict:
    return {
        "t": f.t,
        "x": f.pose.x,
        "y": f.pose.y,
        "theta": f.pose.theta,
        "scan": [float(r) for r in f.scan],
        "vr": [f.cmd_expert.v_p, f.cmd_expert.v_theta],
        "vx": [f.cmd_executed.v_p, f.cmd_executed.v_theta],
        "labels": _labels_to_dict(f.labels),
    }


def frame_from_record(rec: dict) -> Frame:
    t = float(rec["t"])
    return Frame(t, RobotState(float(rec["x"]), float(rec["y"]), float(rec["theta"]), t),
                 np.asarray(rec["scan"], dtype=float), VelocityCmd(*map(float, rec["vr"])),
                 VelocityCmd(*map(float, rec["vx"])), _labels_from_dict(rec.get("labels")))


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for f in traj.frames:
            fh.write(json.dumps(frame_to_record(f)) + "\n")
    meta = {"task": traj.task.to_dict(), "world": traj.world_id, "map": traj.map_id,
            "outcome": traj.outcome, "seed": traj.seed, "frames": len(traj.frames)}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_trajectory(path: str | Path, topo: TopoMap) -> Trajectory:
    path = Path(path)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    frames = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                frames.append(frame_from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad frame record ({exc})") from exc
    task = NavTask.from_dict(meta["task"], topo)
    return Trajectory(frames, task, meta["world"], meta["map"], meta.get("outcome", "success"), meta.get("seed"))
