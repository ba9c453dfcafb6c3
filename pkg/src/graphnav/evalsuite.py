"""Task sampling, the closed-loop navigation runner, and the metric battery."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .annotate import GroundTruthLocalizer, NodeMatcher
from .behaviors import ARRIVED, PlanCursor, PolicySet, select_behavior
from .gln import CropCache, ScanStack, predict_edge
from .gnn import GnnParams
from .oracle_nav import TIMEOUT, NavTask, PathFollower, planner_for, start_state
from .pfilter import NodeFilter
from .topomap import BEHAVIORS, BehaviorKind, Difficulty, PlanningError, TopoMap, bfs_distances, shortest_plan
from .worldsim import DT, CollisionEvent, RobotState, VelocityCmd, WorldModel, raycast_scan, step

DEVIATION_FRAMES = 25


class Variant(enum.Enum):
    GRAPHNAV = "GraphNav"
    GRAPHNAV_PF = "GraphNavPF"
    GTL = "GTL"


class Outcome(enum.Enum):
    SUCCESS = "Success"
    COLLISION = "Collision"
    DEVIATION = "Deviation"
    TIMEOUT = "Timeout"


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tasks


def reachable_pairs(topo: TopoMap, min_nodes: int = 2, band: Difficulty | None = None) -> list[tuple[int, int]]:
    pairs = []
    for a in topo.node_ids:
        for b, d in sorted(bfs_distances(topo, a).items()):
            if b == a or d + 1 < min_nodes:
                continue
            if band is not None and Difficulty(_band(d + 1)) != band:
                continue
            pairs.append((a, b))
    return pairs


def _band(n_nodes: int) -> str:
    return "I" if n_nodes <= 10 else "II" if n_nodes <= 20 else "III"


def sample_tasks(topo: TopoMap, n: int, rng: np.random.Generator, min_nodes: int = 2,
                 band: Difficulty | None = None) -> list[NavTask]:
    """``n`` distinct reachable (start, goal) pairs drawn uniformly without replacement."""
    pairs = reachable_pairs(topo, min_nodes, band)
    if len(pairs) < n:
        raise PlanningError(f"map {topo.name!r} has {len(pairs)} eligible pairs, {n} requested")
    pick = rng.choice(len(pairs), size=n, replace=False)
    return [NavTask(topo.name, a, b, shortest_plan(topo, a, b)) for a, b in (pairs[i] for i in pick)]


# ---------------------------------------------------------------------------
# controllers

Controller = Callable[[BehaviorKind, np.ndarray, RobotState], VelocityCmd]


class LearnedController:
    def __init__(self, policies: PolicySet):
        self.policies = policies

    def __call__(self, behavior: BehaviorKind, stack: np.ndarray, state: RobotState) -> VelocityCmd:
        return self.policies.command(behavior, stack)


class OracleController:
    """Noise-free expert tracking the whole plan's metric path; ignores the behavior."""

    def __init__(self, world: WorldModel, topo: TopoMap, task: NavTask):
        self.follower = PathFollower(planner_for(world).plan_path(topo, task.plan))

    def __call__(self, behavior: BehaviorKind, stack: np.ndarray, state: RobotState) -> VelocityCmd:
        return self.follower.command(state)


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunFrame:
    t: float
    pose: RobotState
    behavior: str
    loc_node: int
    gt_node: int
    gt_behavior: str | None
    off_plan: bool


@dataclass
class RunRecord:
    task: NavTask
    variant: Variant
    frames: list[RunFrame]
    outcome: Outcome
    nodes_reached: int
    seed: int = 0
    task_id: int = 0

    @property
    def plan_completion(self) -> float:
        return self.nodes_reached / len(self.task.plan.node_seq)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "task": self.task.to_dict(),
            "variant": self.variant.value,
            "outcome": self.outcome.value,
            "nodes_reached": self.nodes_reached,
            "seed": self.seed,
            "frames": [
                {"t": f.t, "x": f.pose.x, "y": f.pose.y, "theta": f.pose.theta, "behavior": f.behavior,
                 "loc": f.loc_node, "gt": f.gt_node, "gt_behavior": f.gt_behavior, "off_plan": f.off_plan}
                for f in self.frames
            ],
        }


class _PrefixCounter:
    """Longest prefix of the plan visited in order."""

    def __init__(self, node_seq: Sequence[int]):
        self.node_seq = node_seq
        self.count = 1

    def visit(self, node: int) -> int:
        if self.count < len(self.node_seq) and node == self.node_seq[self.count]:
            self.count += 1
        return self.count


def run_navigation(world: WorldModel, topo: TopoMap, task: NavTask, variant: Variant | str,
                   controller: Controller | PolicySet | str = "oracle", gln_params: GnnParams | None = None,
                   seed: int = 0, timeout: float = TIMEOUT, matcher: NodeMatcher | None = None,
                   crops: CropCache | None = None, n_frames: int | None = None,
                   start: RobotState | None = None) -> RunRecord:
    """Closed loop at 5 Hz: localize, select a behavior, act, step.

    ``start`` overrides the pose drawn at the start node (used for scripted trials).
    """
    variant = Variant(variant)
    if variant is not Variant.GTL and gln_params is None:
        raise ConfigurationError(f"{variant.value} needs GLN parameters")
    if isinstance(controller, str):
        if controller != "oracle":
            raise ConfigurationError(f"unknown controller {controller!r}")
        controller = OracleController(world, topo, task)
    elif isinstance(controller, PolicySet):
        controller = LearnedController(controller)
    if n_frames is None:
        n_frames = gln_params.config["obs_dim"] // 64 if gln_params is not None else 5
    crops = crops or CropCache()
    rng = np.random.default_rng([seed, task.start, task.goal])
    state = start_state(topo, task.start, rng) if start is None else start
    gt = GroundTruthLocalizer(world, topo, task.plan, matcher)
    prefix = _PrefixCounter(task.plan.node_seq)
    cursor = PlanCursor(task.plan)
    stack = ScanStack(n_frames)
    node_filter = NodeFilter(topo, task.start) if variant is Variant.GRAPHNAV_PF else None
    last = task.start
    frames: list[RunFrame] = []
    off_run = 0
    outcome = Outcome.TIMEOUT
    n_steps = int(round(timeout / DT))
    for k in range(n_steps + 1):
        t = round(k * DT, 10)
        state = RobotState(state.x, state.y, state.theta, t)
        stack.push(raycast_scan(world, state))
        fix = gt.update(state.x, state.y, state.theta)
        prefix.visit(fix.node)
        if k == 0 or variant is Variant.GTL:
            loc = fix.node if variant is Variant.GTL else task.start
        else:
            est = predict_edge(gln_params, topo, last, stack.array(), crops)
            loc = node_filter.step(est.prob) if node_filter is not None else est.node
        last = loc
        behavior, cursor = select_behavior(cursor, loc)
        off_run = off_run + 1 if fix.off_plan else 0
        frames.append(RunFrame(t, state, behavior if behavior == ARRIVED else behavior.value, loc, fix.node,
                               fix.behavior.value if fix.behavior is not None else None, fix.off_plan))
        if behavior == ARRIVED:
            done = prefix.count == len(task.plan.node_seq)
            outcome = Outcome.SUCCESS if done else Outcome.DEVIATION
            break
        if off_run > DEVIATION_FRAMES:
            outcome = Outcome.DEVIATION
            break
        if k == n_steps:
            break
        nxt = step(world, state, controller(behavior, stack.array(), state).clamped())
        if isinstance(nxt, CollisionEvent):
            outcome = Outcome.COLLISION
            break
        state = nxt
    return RunRecord(task, variant, frames, outcome, prefix.count, seed)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    per_behavior: dict[str, dict[str, int]]
    per_difficulty: dict[str, dict[str, float]]
    total: dict[str, float]
    behavior_accuracy: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {"per_behavior": self.per_behavior, "per_difficulty": self.per_difficulty, "total": self.total,
                "behavior_accuracy": self.behavior_accuracy}

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(data["per_behavior"], data["per_difficulty"], data["total"], data["behavior_accuracy"])


def edge_attempts(record: RunRecord) -> list[tuple[BehaviorKind, bool]]:
    """(behavior, succeeded) for every plan edge whose source node was reached."""
    plan = record.task.plan
    k = record.nodes_reached
    return [(plan.behavior_seq[i], i + 1 < k) for i in range(min(k, len(plan.edge_seq)))]


def compute_metrics(records: Sequence[RunRecord]) -> EvalReport:
    if not records:
        raise ValueError("no run records")
    per_behavior = {b.value: {"attempts": 0, "successes": 0} for b in BEHAVIORS}
    for r in records:
        for kind, ok in edge_attempts(r):
            per_behavior[kind.value]["attempts"] += 1
            per_behavior[kind.value]["successes"] += int(ok)

    def summary(rs):
        n = len(rs)
        succ = sum(r.outcome is Outcome.SUCCESS for r in rs)
        return {"runs": n, "successes": succ, "success_rate": succ / n if n else None,
                "plan_completion": float(np.mean([r.plan_completion for r in rs])) if n else None}

    per_difficulty = {band.value: summary([r for r in records if r.task.difficulty is band]) for band in Difficulty}
    total = summary(list(records))

    accuracy = {b.value: {"frames": 0, "correct": 0} for b in BEHAVIORS}
    for r in records:
        for f in r.frames:
            if f.gt_behavior is None:
                continue
            accuracy[f.gt_behavior]["frames"] += 1
            accuracy[f.gt_behavior]["correct"] += int(f.behavior == f.gt_behavior)
    for entry in accuracy.values():
        entry["accuracy"] = entry["correct"] / entry["frames"] if entry["frames"] else None
    return EvalReport(per_behavior, per_difficulty, total, accuracy)


# ---------------------------------------------------------------------------
# rendering


def _rate(num: int, den: int) -> str:
    return "-" if den == 0 else f"{num / den:.2f} ({den})"


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


def report_table(report: EvalReport, label: str = "") -> str:
    beh = [b.value for b in BEHAVIORS]
    bands = [d.value for d in Difficulty]
    head = ["model"] + beh + [f"{d} SR/PC" for d in bands] + ["total SR/PC"]
    row = [label or "-"]
    for b in beh:
        e = report.per_behavior[b]
        row.append(_rate(e["successes"], e["attempts"]))
    for d in bands:
        e = report.per_difficulty[d]
        row.append(f"{_fmt(e['success_rate'])}/{_fmt(e['plan_completion'])}")
    row.append(f"{_fmt(report.total['success_rate'])}/{_fmt(report.total['plan_completion'])}")
    acc = ["behavior accuracy"] + [_fmt(report.behavior_accuracy[b]["accuracy"]) for b in beh]
    widths = [max(len(head[i]), len(row[i]), len(acc[i]) if i < len(acc) else 0) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in (head, row)]
    lines.append("")
    lines.append("  ".join(c.ljust(w) for c, w in zip(acc, widths)).rstrip())
    return "\n".join(lines) + "\n"


def run_svg(world: WorldModel, topo: TopoMap, record: RunRecord, scale: float = 20.0) -> str:
    w, h = world.extent
    W, H = w * scale, h * scale

    def px(x, y):
        return f"{x * scale:.1f},{H - y * scale:.1f}"

    res = world.resolution * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" viewBox="0 0 {W:.1f} {H:.1f}">',
             f'<rect width="{W:.1f}" height="{H:.1f}" fill="white"/>', '<g fill="#444">']
    for i, row in enumerate(world.occupancy):
        edges = np.flatnonzero(np.diff(np.concatenate([[0], row.astype(np.int8), [0]])))
        for j0, j1 in zip(edges[::2], edges[1::2]):  # one rect per horizontal run of walls
            parts.append(f'<rect x="{j0 * res:.1f}" y="{H - (i + 1) * res:.1f}" '
                         f'width="{(j1 - j0) * res:.1f}" height="{res:.1f}"/>')
    parts.append("</g>")
    for v in record.task.plan.node_seq:
        x, y = topo.node(v).position
        cx, cy = px(x, y).split(",")
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="4" fill="#1f77b4"/>')
    pts = " ".join(px(f.pose.x, f.pose.y) for f in record.frames)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(report: EvalReport, runs: Sequence[RunRecord], out_dir: str | Path,
                  world: WorldModel | None = None, topo: TopoMap | None = None, label: str = "") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.txt", out / "report.json"]
    written[0].write_text(report_table(report, label))
    written[1].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if world is not None and topo is not None:
        for r in runs:
            p = out / f"run_{r.task_id:04d}.svg"
            p.write_text(run_svg(world, topo, r))
            written.append(p)
    return written


__all__ = [
    "Variant", "Outcome", "ConfigurationError", "sample_tasks", "reachable_pairs", "LearnedController",
    "OracleController", "RunFrame", "RunRecord", "run_navigation", "EvalReport", "compute_metrics",
    "edge_attempts", "report_table", "render_report", "run_svg",
]
