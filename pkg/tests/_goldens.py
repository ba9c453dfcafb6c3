"""Scripted synthetic trajectories with labels fixed by construction.

The world is a flat label raster (no walls needed, annotation only looks at
poses): an east-west hallway band 4 <= y < 6 that becomes open space at
x >= 20, an office above and another office below. Paths are sampled every
0.1 m of travel and start off the 0.1 m lattice so no sample sits on a room
boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from graphnav.oracle_nav import Frame, NavTask, Trajectory
from graphnav.topomap import BehaviorKind, NavPlan, NodeKind, TopoEdge, TopoMap, TopoNode
from graphnav.worldsim import N_RAYS, ZERO_CMD, RobotState, RoomInfo, WorldModel

CF, FD, TL, TR, S = (BehaviorKind.CORRIDOR_FOLLOW, BehaviorKind.FIND_DOOR, BehaviorKind.TURN_LEFT,
                     BehaviorKind.TURN_RIGHT, BehaviorKind.STRAIGHT)
A, B, C, D = 0, 1, 2, 3
REAL_ROOMS = {"office_0", "office_1"}


def golden_world() -> WorldModel:
    res = 0.1
    h, w = 120, 300
    iy, ix = np.mgrid[0:h, 0:w]
    labels = np.where(iy < 40, 2, np.where(iy < 60, np.where(ix >= 200, 3, 0), 1))
    rooms = [RoomInfo("hall_0", "hallway"), RoomInfo("office_0", "office"), RoomInfo("office_1", "office"),
             RoomInfo("open_0", "open space")]
    return WorldModel(np.zeros((h, w), bool), labels, rooms, res, "golden")


def golden_map() -> TopoMap:
    nodes = [
        TopoNode(A, NodeKind.HALLWAY, False, (4.0, 5.0), 0.0, "hall_0"),
        TopoNode(B, NodeKind.HALLWAY, False, (8.0, 5.0), 0.0, "hall_0"),
        TopoNode(C, NodeKind.HALLWAY, False, (12.0, 5.0), 0.0, "hall_0"),
        TopoNode(D, NodeKind.ROOM, False, (8.0, 9.0), None, "office_0"),
    ]
    edges = [TopoEdge(0, A, B, CF), TopoEdge(1, B, C, CF), TopoEdge(2, B, D, TL)]
    return TopoMap(nodes, edges, "golden")


def room_of(x: float, y: float) -> str:
    if y < 4:
        return "office_1"
    if y < 6:
        return "open_0" if x >= 20 else "hall_0"
    return "office_0"


def script(x, y, heading_deg, segments, step=0.1, heading_override=None):
    """Poses along lines and circular arcs; returns (poses, travelled distance)."""
    th = math.radians(heading_deg)
    poses = [(x, y, th)]
    for seg in segments:
        if seg[0] == "line":
            n = round(seg[1] / step)
            for _ in range(n):
                x, y = x + step * math.cos(th), y + step * math.sin(th)
                poses.append((x, y, th))
        elif seg[0] == "arc":
            ang, r = math.radians(seg[1]), seg[2]
            n = max(1, math.ceil(abs(ang) * r / step))
            d = ang / n
            chord = 2 * r * math.sin(abs(d) / 2)
            for _ in range(n):
                x, y = x + chord * math.cos(th + d / 2), y + chord * math.sin(th + d / 2)
                th = th + d
                poses.append((x, y, th))
        elif seg[0] == "jump":
            x, y = seg[1], seg[2]
            poses.append((x, y, th))
    poses = np.array(poses)
    if heading_override is not None:
        poses[:, 2] = [math.radians(heading_override(px, py)) for px, py, _ in poses]
    travel = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poses[:, :2], axis=0).T))])
    return poses, travel


def to_trajectory(poses: np.ndarray, topo: TopoMap) -> Trajectory:
    frames = []
    for k, (x, y, th) in enumerate(poses):
        t = round(0.2 * k, 10)
        frames.append(Frame(t, RobotState(float(x), float(y), float(th), t), np.zeros(N_RAYS), ZERO_CMD, ZERO_CMD))
    task = NavTask(topo.name, A, C, NavPlan((A, B, C), (0, 1), (CF, CF)))
    return Trajectory(frames, task, "golden", topo.name)


def expected_behaviors(rooms, travel, transition_kinds):
    """Tags from hand-assigned transition kinds: 2 m windows, find-door prefix, cf fill."""
    n = len(rooms)
    tags = [None] * n
    transitions = [i for i in range(1, n) if rooms[i] != rooms[i - 1]]
    assert len(transitions) == len(transition_kinds), (transitions, transition_kinds)
    for i, kind in zip(transitions, transition_kinds):
        for j in range(n):
            if abs(travel[j] - travel[i]) <= 2.0 + 1e-6 and rooms[j] in (rooms[i - 1], rooms[i]):
                tags[j] = kind
    if rooms[0] in REAL_ROOMS:
        exit_i = next((i for i in transitions if rooms[i - 1] in REAL_ROOMS and rooms[i] not in REAL_ROOMS), n)
        for j in range(exit_i):
            tags[j] = FD
    for j in range(n):
        if tags[j] is None and rooms[j] not in REAL_ROOMS:
            tags[j] = CF
    return tags


def expected_edges(nodes, topo):
    """Edge of each labeled frame: from its node run to the next labeled node."""
    out = [None] * len(nodes)
    labeled = [i for i, v in enumerate(nodes) if v is not None]
    runs = []
    for i in labeled:
        if runs and nodes[runs[-1][-1]] == nodes[i]:
            runs[-1].append(i)
        else:
            runs.append([i])
    for run, nxt in zip(runs, runs[1:]):
        e = topo.find_edge(nodes[run[0]], nodes[nxt[0]])
        for i in run:
            out[i] = e.id
    return out


def _oriented(theta_deg, bearings):
    return any(abs((theta_deg - b + 180) % 360 - 180) <= 36.0 for b in bearings)


_BEARINGS = {A: [0.0], B: [0.0, 90.0], C: [0.0]}


def _hall_node(x, theta_deg):
    """Nearest oriented hallway node, or None if none is oriented."""
    ok = [v for v in (A, B, C) if _oriented(theta_deg, _BEARINGS[v])]
    if not ok:
        return None
    return min(ok, key=lambda v: (abs(x - (4.0, 8.0, 12.0)[v]), v))


def track(poses, start, accept):
    """Reference causal tracker over hand-written candidate rules."""
    out, cur = [], start
    for k, (x, y, th) in enumerate(poses):
        if k == 0 and start is not None:
            out.append(start)
            continue
        cand = accept(x, y, math.degrees(th))
        succ = {A: {B}, B: {C, D}, C: set(), D: set()}
        if cand is not None and (cur is None or cand == cur or cand in succ[cur]):
            cur = cand
            out.append(cand)
        else:
            out.append(None)
    return out


def _candidate(x, y, th):
    room = room_of(x, y)
    if room == "hall_0":
        return _hall_node(x, th)
    if room == "office_0":
        return D
    return None


@dataclass
class GoldenCase:
    name: str
    poses: np.ndarray
    travel: np.ndarray
    start: int | None
    transition_kinds: list

    def rooms(self):
        return [room_of(x, y) for x, y, _ in self.poses]

    def behaviors(self):
        return expected_behaviors(self.rooms(), self.travel, self.transition_kinds)

    def nodes(self):
        return track(self.poses, self.start, _candidate)


def golden_cases() -> list[GoldenCase]:
    cases = []

    def add(name, start_xy, heading, segs, start, kinds, override=None):
        poses, travel = script(*start_xy, heading, segs, heading_override=override)
        cases.append(GoldenCase(name, poses, travel, start, kinds))

    # plain hallway traversal A -> B -> C
    add("corridor_follow", (3.05, 5.03), 0, [("line", 10.0)], A, [])
    # 90 deg left turn through the office door: turn rule fires
    add("left_into_office", (3.05, 4.97), 0, [("line", 4.0), ("arc", 90, 0.5), ("line", 3.0)], A, [TL])
    # 90 deg right turn into the lower office
    add("right_into_office", (3.05, 5.03), 0, [("line", 4.0), ("arc", -90, 0.5), ("line", 2.0)], A, [TR])
    # just above the turn threshold
    add("turn_41_deg", (3.05, 5.27), 0, [("line", 3.5), ("arc", 41, 0.5), ("line", 1.5)], A, [TL])
    # exactly at the threshold: not a turn, so entering a real room is straight
    add("turn_40_deg", (3.05, 5.27), 0, [("line", 3.5), ("arc", 40, 0.5), ("line", 1.5)], A, [S])
    # leaving the office: the right turn ends 4.5 m before the door, outside the 2 m window
    add("exit_turn_far", (15.05, 10.53), 0, [("line", 0.3), ("arc", -90, 0.1), ("line", 6.0)], None, [CF])
    # same exit with the turn ending 1.5 m before the door
    add("exit_turn_near", (15.05, 7.53), 0, [("line", 0.3), ("arc", -90, 0.1), ("line", 3.0)], None, [TR])
    # hallway into open space without turning
    add("into_open_space", (16.05, 5.03), 0, [("line", 8.0)], None, [CF])
    # heading 35.9 deg off every edge: still oriented
    add("orientation_35_9", (3.05, 5.03), 0, [("line", 10.0)], A, [], override=lambda x, y: 35.9)
    # heading 36.1 deg on a stretch, then a jump to C (not a successor of A) that stays
    # unlabeled until B is seen
    add("orientation_36_1_and_skip", (3.05, 5.03), 0,
        [("line", 2.0), ("line", 1.9), ("jump", 11.05, 5.03), ("line", 0.5), ("jump", 8.05, 5.03), ("line", 4.0)], A, [],
        override=lambda x, y: 36.1 if 5.1 <= x < 7.0 else 0.0)
    return cases
