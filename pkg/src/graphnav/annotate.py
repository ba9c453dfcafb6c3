"""Heuristic trajectory labeling: rooms, behaviors, node and edge localization.

The node localizer is causal, so the same code doubles as the online
ground-truth localizer used by the GTL evaluation variant.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .oracle_nav import AnnotationLabels, Trajectory
from .topomap import BehaviorKind, NavPlan, TopoMap
from .worldsim import REAL_ROOM_CLASSES, OCCUPIED, WorldModel, room_at

TURN_ANGLE = math.radians(40.0)
TURN_TRAVEL = 2.0
TAG_RADIUS = 2.0
ORIENT_TOL = math.radians(36.0)
_EPS = 1e-9


def label_rooms(traj: Trajectory, world: WorldModel) -> list[str]:
    return [room_at(world, f.pose.x, f.pose.y)[0] for f in traj.frames]


def _semantic(world: WorldModel, label: str) -> str:
    return OCCUPIED if label == OCCUPIED else world.semantic_of(label)


def _is_real_room(world: WorldModel, label: str) -> bool:
    return _semantic(world, label) in REAL_ROOM_CLASSES


def _path_length(xy: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])


def turn_delta(heading: np.ndarray, arc: np.ndarray, i: int, travel: float = TURN_TRAVEL) -> float:
    """Signed heading change around transition frame ``i``.

    ``heading`` must be unwrapped. Both the forward and the backward scan stop
    once the cumulative travel from frame ``i`` reaches ``travel``; the scan
    with the larger peak ``|delta|`` decides. Positive values are left turns.
    """
    best = 0.0
    j = i + 1
    while j < len(heading) and arc[j] - arc[i] < travel:
        d = heading[j] - heading[i]
        if abs(d) > abs(best):
            best = d
        j += 1
    j = i - 1
    while j >= 0 and arc[i] - arc[j] < travel:
        d = heading[i] - heading[j]
        if abs(d) > abs(best):
            best = d
        j -= 1
    return best


def detect_behaviors(traj: Trajectory, world: WorldModel, rooms: list[str] | None = None) -> list[BehaviorKind | None]:
    rooms = label_rooms(traj, world) if rooms is None else rooms
    poses = traj.poses
    heading = np.unwrap(poses[:, 2])
    arc = _path_length(poses[:, :2])
    n = len(rooms)
    tags: list[BehaviorKind | None] = [None] * n

    transitions = [i for i in range(1, n) if rooms[i] != rooms[i - 1]]
    for i in transitions:  # later transitions overwrite earlier ones
        before, after = rooms[i - 1], rooms[i]
        delta = turn_delta(heading, arc, i)
        if abs(delta) > TURN_ANGLE + _EPS:
            kind = BehaviorKind.TURN_LEFT if delta > 0 else BehaviorKind.TURN_RIGHT
        elif _is_real_room(world, after):
            kind = BehaviorKind.STRAIGHT
        else:
            kind = BehaviorKind.CORRIDOR_FOLLOW
        near = np.nonzero(np.abs(arc - arc[i]) <= TAG_RADIUS + _EPS)[0]
        for j in near:
            if rooms[j] in (before, after):
                tags[j] = kind

    if n and _is_real_room(world, rooms[0]):
        first_exit = next((i for i in transitions
                           if _is_real_room(world, rooms[i - 1]) and not _is_real_room(world, rooms[i])), n)
        for j in range(first_exit):  # applied after the transition windows, so it wins
            tags[j] = BehaviorKind.FIND_DOOR

    for j in range(n):
        if tags[j] is None and rooms[j] != OCCUPIED and not _is_real_room(world, rooms[j]):
            tags[j] = BehaviorKind.CORRIDOR_FOLLOW
    return tags


# ---------------------------------------------------------------------------
# node / edge localization


class NodeMatcher:
    """Precomputed per-node geometry for the nearest-eligible-node rule."""

    def __init__(self, topo: TopoMap):
        self.topo = topo
        self.ids = np.array(topo.node_ids)
        self.xy = np.array([topo.node(v).position for v in self.ids], dtype=float)
        self.rooms = [topo.node(v).room_label for v in self.ids]
        self.any_heading = np.array([topo.node(v).is_room_node for v in self.ids])
        bearings = [[topo.edge_bearing(e) for e in topo.out_edges(v) + topo.in_edges(v)] for v in self.ids]
        width = max(1, max(len(b) for b in bearings))
        self.bearings = np.full((len(self.ids), width), np.nan)
        for k, b in enumerate(bearings):
            self.bearings[k, :len(b)] = b

    def eligible(self, heading: float, room: str) -> np.ndarray:
        diff = np.abs(np.angle(np.exp(1j * (self.bearings - heading))))
        oriented = np.any(diff <= ORIENT_TOL + _EPS, axis=1) | self.any_heading
        same_room = np.array([r == room for r in self.rooms])
        return oriented & same_room

    def candidate(self, x: float, y: float, heading: float, room: str) -> int | None:
        ok = self.eligible(heading, room)
        if not ok.any():
            return None
        d = np.hypot(self.xy[:, 0] - x, self.xy[:, 1] - y)
        d[~ok] = np.inf
        return int(self.ids[int(np.argmin(d))])  # argmin keeps the lowest id on ties


class NodeTracker:
    """Causal node localizer: accept the candidate only if it continues the track."""

    def __init__(self, topo: TopoMap, start: int | None = None, matcher: NodeMatcher | None = None):
        self.topo = topo
        self.matcher = matcher or NodeMatcher(topo)
        self.current = start
        self._seeded = start is not None

    def update(self, x: float, y: float, heading: float, room: str) -> int | None:
        """Return the node label for this frame (``None`` when rejected)."""
        if self._seeded:
            self._seeded = False
            return self.current
        cand = self.matcher.candidate(x, y, heading, room)
        if cand is None:
            return None
        if self.current is None or cand == self.current or cand in self.topo.successors(self.current):
            self.current = cand
            return cand
        return None


def localize_nodes(traj: Trajectory, topo: TopoMap, rooms: list[str], start: int | None = None) -> list[int | None]:
    tracker = NodeTracker(topo, start)
    return [tracker.update(f.pose.x, f.pose.y, f.pose.theta, room) for f, room in zip(traj.frames, rooms)]


def localize_edges(nodes: list[int | None], topo: TopoMap) -> tuple[list[int | None], list[str]]:
    """Edge tags from node runs, plus diagnostics for runs with no connecting edge."""
    edges: list[int | None] = [None] * len(nodes)
    diagnostics = []
    labeled = [(i, v) for i, v in enumerate(nodes) if v is not None]
    k = 0
    while k < len(labeled):
        a = labeled[k][1]
        run = []
        while k < len(labeled) and labeled[k][1] == a:
            run.append(labeled[k][0])
            k += 1
        if k == len(labeled):
            break
        b = labeled[k][1]
        edge = topo.find_edge(a, b)
        if edge is None:
            diagnostics.append(f"frames {run[0]}-{run[-1]}: no edge {a}->{b}")
            continue
        for i in run:
            edges[i] = edge.id
    return edges, diagnostics


@dataclass
class AnnotationSummary:
    behavior_counts: dict[str, int]
    unlabeled_node_fraction: float
    diagnostics: list[str]

    def to_dict(self) -> dict:
        return {"behavior_counts": self.behavior_counts, "unlabeled_node_fraction": self.unlabeled_node_fraction,
                "diagnostics": self.diagnostics}


def annotate_trajectory(traj: Trajectory, world: WorldModel, topo: TopoMap,
                        seed_start: bool = True) -> tuple[Trajectory, AnnotationSummary]:
    rooms = label_rooms(traj, world)
    behaviors = detect_behaviors(traj, world, rooms)
    nodes = localize_nodes(traj, topo, rooms, traj.task.start if seed_start else None)
    edges, diagnostics = localize_edges(nodes, topo)
    labels = [AnnotationLabels(b, v, e, r) for b, v, e, r in zip(behaviors, nodes, edges, rooms)]
    counts = Counter(b.value for b in behaviors if b is not None)
    summary = AnnotationSummary({b.value: counts.get(b.value, 0) for b in BehaviorKind},
                                sum(v is None for v in nodes) / len(nodes), diagnostics)
    return traj.with_labels(labels), summary


# ---------------------------------------------------------------------------
# online ground-truth localizer


@dataclass(frozen=True)
class GtFix:
    node: int
    edge: int | None
    behavior: BehaviorKind | None
    off_plan: bool
    room: str


class GroundTruthLocalizer:
    """Online node localization against a plan, one pose at a time."""

    def __init__(self, world: WorldModel, topo: TopoMap, plan: NavPlan, matcher: NodeMatcher | None = None):
        self.world = world
        self.topo = topo
        self.plan = plan
        self.tracker = NodeTracker(topo, plan.node_seq[0], matcher)
        self._plan_nodes = set(plan.node_seq)
        self._plan_rooms = {topo.node(v).room_label for v in plan.node_seq}
        self.cursor = 0  # last on-plan index, never decreases

    def _plan_index(self, node: int) -> int | None:
        idx = [i for i, v in enumerate(self.plan.node_seq) if v == node]
        if not idx:
            return None
        later = [i for i in idx if i >= self.cursor]
        return later[0] if later else idx[0]

    def update(self, x: float, y: float, heading: float) -> GtFix:
        room = room_at(self.world, x, y)[0]
        self.tracker.update(x, y, heading, room)
        node = self.tracker.current
        i = self._plan_index(node)
        if i is not None:
            self.cursor = max(self.cursor, i)
        edge = behavior = None
        if i is not None and i < len(self.plan.edge_seq):
            edge, behavior = self.plan.edge_seq[i], self.plan.behavior_seq[i]
        off_plan = node not in self._plan_nodes or room not in self._plan_rooms
        return GtFix(node, edge, behavior, off_plan, room)
