"""Procedural indoor fixture worlds with aligned, rule-conforming topological maps.

Three families are available: a straight corridor with four offices, a
T-junction with six rooms and an open space, and a rectangular loop corridor
with eight rooms. Every corridor carries two directed node chains, one per
travel direction, with nodes just before each door or junction (where an
entering turn starts) and just after it (where an exiting turn ends).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .topomap import BehaviorKind, NodeKind, TopoEdge, TopoMap, TopoNode
from .worldsim import RESOLUTION, RoomInfo, WorldModel

WALL = 0.15
CORRIDOR_WIDTH = 2.0
APPROACH = 1.8
AFTER = 2.2
DOOR_NODE_DEPTH = WALL / 2  # door nodes sit in the middle of the door gap
ROOM_NODE_INSET = 0.8
MARGIN = 0.4
MIN_NODE_SPACING = 0.5


class FixtureKind(enum.Enum):
    CORRIDOR = "corridor"
    TEE = "tee"
    LOOP = "loop"


Rect = tuple[float, float, float, float]


@dataclass
class _Room:
    label: str
    semantic: str
    rect: Rect
    door_center: tuple[float, float]  # on the corridor-side face of the wall
    door_width: float
    normal: tuple[float, float]  # unit vector pointing out of the room
    corridor: int = 0
    s: float = 0.0
    clutter: list[Rect] = field(default_factory=list)

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    @property
    def anchor(self) -> tuple[float, float]:
        """Room node position: on the door axis, a fixed distance into the room."""
        cx, cy = self.door_center
        nx, ny = self.normal
        depth = WALL + ROOM_NODE_INSET
        return (cx - nx * depth, cy - ny * depth)

    @property
    def door_node(self) -> tuple[float, float]:
        cx, cy = self.door_center
        nx, ny = self.normal
        depth = DOOR_NODE_DEPTH
        return (cx - nx * depth, cy - ny * depth)

    def gap_rect(self) -> Rect:
        cx, cy = self.door_center
        nx, ny = self.normal
        half = self.door_width / 2
        # spans the wall from the corridor face back into the room
        xa, ya = cx - nx * (WALL + 0.05), cy - ny * (WALL + 0.05)
        xb, yb = cx, cy
        if abs(nx) > 0.5:
            return (min(xa, xb), cy - half, max(xa, xb), cy + half)
        return (cx - half, min(ya, yb), cx + half, max(ya, yb))


@dataclass
class _Corridor:
    points: list[tuple[float, float]]
    closed: bool = False
    parent: int | None = None  # stems attach to a parent corridor at s = 0
    parent_s: float = 0.0
    after: float = AFTER

    def __post_init__(self):
        pts = self.points + ([self.points[0]] if self.closed else [])
        self._segments = []
        s = 0.0
        for p, q in zip(pts[:-1], pts[1:]):
            length = math.hypot(q[0] - p[0], q[1] - p[1])
            self._segments.append((s, p, q, length))
            s += length
        self.length = s

    def vertices_s(self) -> list[float]:
        return [seg[0] for seg in self._segments] if self.closed else []

    def _locate(self, s: float):
        if self.closed:
            s %= self.length
        for start, p, q, length in self._segments:
            if s <= start + length + 1e-9:
                return start, p, q, length, s
        start, p, q, length = self._segments[-1]
        return start, p, q, length, s

    def position(self, s: float) -> tuple[float, float]:
        start, p, q, length, s = self._locate(s)
        f = (s - start) / length
        return (p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1]))

    def tangent(self, s: float) -> tuple[float, float]:
        start, p, q, length, s = self._locate(s)
        return ((q[0] - p[0]) / length, (q[1] - p[1]) / length)

    def heading(self, s: float, direction: int) -> float:
        """Travel heading at ``s``; bisector of the two legs at loop corners."""
        if self.closed:
            s_mod = s % self.length
            for vs in self.vertices_s():
                if abs(s_mod - vs) < 1e-9 or abs(s_mod - vs - self.length) < 1e-9:
                    t_in = self.tangent(vs - 1e-6)
                    t_out = self.tangent(vs + 1e-6)
                    bx, by = t_in[0] + t_out[0], t_in[1] + t_out[1]
                    return math.atan2(direction * by, direction * bx)
        tx, ty = self.tangent(s)
        return math.atan2(direction * ty, direction * tx)

    def project(self, point: tuple[float, float]) -> float:
        best, best_s = float("inf"), 0.0
        for start, p, q, length in self._segments:
            dx, dy = q[0] - p[0], q[1] - p[1]
            f = ((point[0] - p[0]) * dx + (point[1] - p[1]) * dy) / (length * length)
            f = min(max(f, 0.0), 1.0)
            d = math.hypot(p[0] + f * dx - point[0], p[1] + f * dy - point[1])
            if d < best - 1e-12:
                best, best_s = d, start + f * length
        return best_s


def _cross(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


class _Canvas:
    def __init__(self, bounds: Rect, resolution: float = RESOLUTION):
        x0, y0, x1, y1 = bounds
        self.res = resolution
        self.w = int(math.ceil((x1 - x0) / resolution))
        self.h = int(math.ceil((y1 - y0) / resolution))
        self.occ = np.ones((self.h, self.w), dtype=bool)
        self.labels = np.full((self.h, self.w), -1, dtype=np.int16)
        self.rooms: list[RoomInfo] = []
        self._xc = (np.arange(self.w) + 0.5) * resolution
        self._yc = (np.arange(self.h) + 0.5) * resolution

    def _mask(self, rect: Rect):
        x0, y0, x1, y1 = rect
        cols = (self._xc >= x0) & (self._xc < x1)
        rows = (self._yc >= y0) & (self._yc < y1)
        return np.ix_(rows, cols)

    def label_index(self, label: str, semantic: str) -> int:
        for i, r in enumerate(self.rooms):
            if r.label == label:
                return i
        self.rooms.append(RoomInfo(label, semantic))
        return len(self.rooms) - 1

    def carve(self, rect: Rect, label: str, semantic: str):
        idx = self.label_index(label, semantic)
        m = self._mask(rect)
        self.occ[m] = False
        self.labels[m] = idx

    def fill(self, rect: Rect):
        m = self._mask(rect)
        self.occ[m] = True
        self.labels[m] = -1


@dataclass
class _Layout:
    corridors: list[_Corridor]
    regions: list[tuple[Rect, str, str]]  # free corridor/open areas, carved in order
    rooms: list[_Room]


# ---------------------------------------------------------------------------
# layouts (local coordinates; shifted into the grid afterwards)


def _clutter(rng: np.random.Generator, room: _Room) -> list[Rect]:
    x0, y0, x1, y1 = room.rect
    nx, ny = room.normal
    out = []
    for corner in rng.permutation(2)[: 1 + int(rng.integers(0, 2))]:
        along = rng.uniform(0.5, 0.9)
        deep = rng.uniform(0.4, 0.7)
        if abs(ny) > 0.5:  # door on a horizontal wall, back wall opposite
            bx0, bx1 = (x0, x0 + along) if corner == 0 else (x1 - along, x1)
            by0, by1 = (y1 - deep, y1) if ny < 0 else (y0, y0 + deep)
        else:
            by0, by1 = (y0, y0 + along) if corner == 0 else (y1 - along, y1)
            bx0, bx1 = (x1 - deep, x1) if nx < 0 else (x0, x0 + deep)
        out.append((bx0, by0, bx1, by1))
    return out


def _room_on_wall(label: str, semantic: str, door_xy: tuple[float, float], normal: tuple[float, float],
                  width: float, depth: float, offset: float, door_width: float) -> _Room:
    """Room behind a corridor wall; ``door_xy`` is on the corridor face of that wall."""
    dx, dy = door_xy
    nx, ny = normal
    if abs(ny) > 0.5:
        cx = dx + offset
        face = dy - ny * WALL  # room-side face of the wall
        y_near, y_far = face, face - ny * depth
        rect = (cx - width / 2, min(y_near, y_far), cx + width / 2, max(y_near, y_far))
    else:
        cy = dy + offset
        face = dx - nx * WALL
        x_near, x_far = face, face - nx * depth
        rect = (min(x_near, x_far), cy - width / 2, max(x_near, x_far), cy + width / 2)
    return _Room(label, semantic, rect, door_xy, door_width, normal)


def _door_offset(rng, width):
    return rng.uniform(-1, 1) * max(0.0, width / 2 - 0.8)


def _corridor_layout(rng: np.random.Generator) -> _Layout:
    c_top = CORRIDOR_WIDTH
    rooms = []
    x_cursor = 1.0
    door_xs = []
    names = iter(["office_0", "office_1", "office_2", "office_3"])
    for pair in range(2):
        wn, ws = rng.uniform(3.0, 4.0, size=2)
        start_n = x_cursor + rng.uniform(0.0, 0.4)
        start_s = x_cursor + rng.uniform(0.0, 0.4)
        lo = max(start_n, start_s) + 0.8
        hi = min(start_n + wn, start_s + ws) - 0.8
        xd = rng.uniform(lo, hi)
        if pair == 0:
            xd = max(xd, AFTER + 0.8)
        door_xs.append(xd)
        for start, width, normal, y_face in ((start_n, wn, (0.0, -1.0), c_top), (start_s, ws, (0.0, 1.0), 0.0)):
            offset = (start + width / 2) - xd
            depth = rng.uniform(2.8, 3.4)
            room = _room_on_wall(next(names), "office", (xd, y_face), normal, width, depth, offset,
                                 rng.uniform(0.9, 1.1))
            rooms.append(room)
        x_cursor = max(start_n + wn, start_s + ws) + WALL + rng.uniform(0.5, 1.5)
        # leave room for the next door's approach node after this door's exit nodes
        x_cursor = max(x_cursor, xd + AFTER + APPROACH + MIN_NODE_SPACING + 0.1 - 0.8)
    length = max(door_xs[-1] + AFTER + 0.6, x_cursor) + rng.uniform(0.0, 1.0)
    corridor = _Corridor([(0.0, 1.0), (length, 1.0)])
    regions = [((0.0, 0.0, length, c_top), "hallway_0", "hallway")]
    return _Layout([corridor], regions, rooms)


def _loop_layout(rng: np.random.Generator) -> _Layout:
    width = rng.uniform(15.0, 17.0)
    height = rng.uniform(12.8, 13.8)
    cw = CORRIDOR_WIDTH
    corridor = _Corridor([(1.0, 1.0), (width - 1.0, 1.0), (width - 1.0, height - 1.0), (1.0, height - 1.0)],
                         closed=True)
    regions = [
        ((0.0, 0.0, width, cw), "hallway_0", "hallway"),
        ((0.0, height - cw, width, height), "hallway_0", "hallway"),
        ((0.0, 0.0, cw, height), "hallway_0", "hallway"),
        ((width - cw, 0.0, width, height), "hallway_0", "hallway"),
    ]
    labels = iter(["office_0", "office_1", "conference_0", "office_2", "office_3", "storage_0",
                   "office_4", "office_5"])
    semantic = {"office": "office", "conference": "conference", "storage": "storage"}
    rooms = []
    # bottom, right, top, left sides: (axis, fixed coordinate of the outer face, outward normal of rooms)
    sides = [
        ("x", 0.0, (0.0, 1.0), width),
        ("y", width, (-1.0, 0.0), height),
        ("x", height, (0.0, -1.0), width),
        ("y", 0.0, (1.0, 0.0), height),
    ]
    for axis, fixed, normal, side_len in sides:
        first = 1.0 + 2.9 + rng.uniform(0.0, 0.3)
        second = first + rng.uniform(4.6, 4.9)
        second = min(second, side_len - 1.0 - 2.9)
        for along in (first, second):
            label = next(labels)
            w = rng.uniform(3.0, 3.6)
            depth = rng.uniform(2.8, 3.4)
            offset = rng.uniform(-0.2, 0.2)
            door_xy = (along, fixed) if axis == "x" else (fixed, along)
            rooms.append(_room_on_wall(label, semantic[label.split("_")[0]], door_xy, normal, w, depth, offset,
                                       rng.uniform(0.9, 1.1)))
    return _Layout([corridor], regions, rooms)


def _tee_layout(rng: np.random.Generator) -> _Layout:
    cw = CORRIDOR_WIDTH
    rooms = []
    # west pair (straight-across offices) on the bar
    wn, ws = rng.uniform(3.0, 3.6, size=2)
    xd1 = rng.uniform(2.6, 3.0)
    for label, width, normal, y_face in (("office_0", wn, (0.0, -1.0), cw), ("office_1", ws, (0.0, 1.0), 0.0)):
        rooms.append(_room_on_wall(label, "office", (xd1, y_face), normal, width, rng.uniform(2.8, 3.3),
                                   rng.uniform(-0.2, 0.2), rng.uniform(0.9, 1.1)))
    xs = 10.0 + rng.uniform(-0.3, 0.3)
    xd2 = xs + 4.5 + rng.uniform(0.0, 0.5)
    rooms.append(_room_on_wall("conference_0", "conference", (xd2, cw), (0.0, -1.0), rng.uniform(3.0, 3.6),
                               rng.uniform(2.8, 3.3), rng.uniform(-0.2, 0.2), rng.uniform(0.9, 1.1)))
    bar_end = xd2 + 2.4 + rng.uniform(0.0, 0.5)
    open_len = 8.0
    open_lo, open_hi = -0.5, 3.0
    xo = bar_end + 3.8 + rng.uniform(-0.3, 0.3)
    rooms.append(_room_on_wall("office_2", "office", (xo, open_hi), (0.0, -1.0), rng.uniform(3.0, 3.6),
                               rng.uniform(2.8, 3.3), rng.uniform(-0.2, 0.2), rng.uniform(0.9, 1.1)))
    stem_len = 9.0
    sd = rng.uniform(5.2, 5.8)
    for label, normal, x_face in (("office_3", (-1.0, 0.0), xs + 1.0), ("storage_0", (1.0, 0.0), xs - 1.0)):
        rooms.append(_room_on_wall(label, "office" if label.startswith("office") else "storage",
                                   (x_face, -sd), normal, rng.uniform(3.0, 3.4), rng.uniform(2.8, 3.3),
                                   rng.uniform(-0.2, 0.2), rng.uniform(0.9, 1.1)))
    bar = _Corridor([(0.0, 1.0), (bar_end + open_len - 0.5, 1.0)])
    open_door_dy = (open_hi + DOOR_NODE_DEPTH) - 1.0
    stem = _Corridor([(xs, 0.0), (xs, -stem_len + 0.5)], parent=0, parent_s=xs, after=2.0)
    regions = [
        ((0.0, 0.0, bar_end, cw), "hallway_0", "hallway"),
        ((bar_end, open_lo, bar_end + open_len, open_hi), "open_0", "open space"),
        ((xs - 1.0, -stem_len, xs + 1.0, 0.0), "hallway_1", "hallway"),
    ]
    layout = _Layout([bar, stem], regions, rooms)
    layout.rooms[3].door_after = max(AFTER, 1.3 * open_door_dy)  # type: ignore[attr-defined]
    return layout


# ---------------------------------------------------------------------------
# map construction


@dataclass
class _ChainNode:
    corridor: int
    direction: int
    s: float
    node_id: int = -1


def _build(layout: _Layout, rng: np.random.Generator, name: str) -> tuple[WorldModel, TopoMap]:
    # shift everything so the lowest wall sits inside the margin
    boxes = [r for r, _, _ in layout.regions] + [room.rect for room in layout.rooms]
    min_x = min(b[0] for b in boxes) - WALL - MARGIN
    min_y = min(b[1] for b in boxes) - WALL - MARGIN
    max_x = max(b[2] for b in boxes) + WALL + MARGIN
    max_y = max(b[3] for b in boxes) + WALL + MARGIN
    # whole-cell offsets keep wall thickness identical across seeds
    ox = math.ceil(-min_x / RESOLUTION) * RESOLUTION
    oy = math.ceil(-min_y / RESOLUTION) * RESOLUTION

    def sh(p):
        return (p[0] + ox, p[1] + oy)

    def sh_rect(r):
        return (r[0] + ox, r[1] + oy, r[2] + ox, r[3] + oy)

    for c in layout.corridors:
        c.points = [sh(p) for p in c.points]
        c.__post_init__()
        if c.parent is not None:
            c.parent_s = layout.corridors[c.parent].project(c.points[0])
    for room in layout.rooms:
        room.rect = sh_rect(room.rect)
        room.door_center = sh(room.door_center)
        room.clutter = _clutter(rng, room)

    canvas = _Canvas((0.0, 0.0, max_x + ox, max_y + oy))
    for rect, label, semantic in layout.regions:
        canvas.carve(sh_rect(rect), label, semantic)
    for room in layout.rooms:
        canvas.carve(room.rect, room.label, room.semantic)
        canvas.carve(room.gap_rect(), room.label, room.semantic)
    for room in layout.rooms:
        for obstacle in room.clutter:
            canvas.fill(obstacle)
    world = WorldModel(canvas.occ, canvas.labels, canvas.rooms, RESOLUTION, name=name)

    def label_at(p):
        iy, ix = world.cell_of(*p)
        return world.rooms[int(world.labels[iy, ix])]

    nodes: list[TopoNode] = []
    edges: list[tuple[int, int, BehaviorKind]] = []

    room_ids = {}
    for room in layout.rooms:
        room.corridor = _owning_corridor(layout, room)
        room.s = layout.corridors[room.corridor].project(room.door_center)
        rid = len(nodes)
        nodes.append(TopoNode(rid, NodeKind.ROOM, False, room.anchor, None, room.label))
        did = len(nodes)
        facing = math.atan2(room.normal[1], room.normal[0])
        nodes.append(TopoNode(did, NodeKind.ROOM, True, room.door_node, facing, room.label))
        room_ids[room.label] = (rid, did)
        edges.append((rid, did, BehaviorKind.FIND_DOOR))

    # events per corridor: (s, after_distance)
    events: dict[int, list[tuple[float, float]]] = {i: [] for i in range(len(layout.corridors))}
    for room in layout.rooms:
        events[room.corridor].append((room.s, getattr(room, "door_after", AFTER)))
    for ci, c in enumerate(layout.corridors):
        if c.parent is not None:
            events[c.parent].append((c.parent_s, c.after))
            events[ci].append((0.0, c.after))

    chains: dict[tuple[int, int], list[_ChainNode]] = {}
    for ci, c in enumerate(layout.corridors):
        for d in (1, -1):
            positions = []
            for s_e, b in events[ci]:
                positions += [s_e - d * APPROACH, s_e + d * b]
            positions += c.vertices_s()
            if c.closed:
                positions = [p % c.length for p in positions]
            else:
                positions = [p for p in positions if 0.0 <= p <= c.length]
            positions = sorted(set(round(p, 9) for p in positions), key=lambda p: d * p)
            chain = []
            for p in positions:
                if chain and abs(p - chain[-1].s) < 1e-6:
                    continue
                chain.append(_ChainNode(ci, d, p))
            for a_node, b_node in zip(chain, chain[1:] + (chain[:1] if c.closed else [])):
                gap = (d * (b_node.s - a_node.s)) % c.length if c.closed else abs(b_node.s - a_node.s)
                if gap < MIN_NODE_SPACING:
                    raise RuntimeError(f"fixture {name}: chain nodes {gap:.2f} m apart")
            for cn in chain:
                pos = c.position(cn.s)
                info = label_at(pos)
                kind = NodeKind.OPEN if info.semantic == "open space" else NodeKind.HALLWAY
                cn.node_id = len(nodes)
                nodes.append(TopoNode(cn.node_id, kind, False, pos, c.heading(cn.s, d), info.label))
            chains[(ci, d)] = chain
            links = zip(chain, chain[1:] + (chain[:1] if c.closed else []))
            for a_node, b_node in links:
                edges.append((a_node.node_id, b_node.node_id, BehaviorKind.CORRIDOR_FOLLOW))

    def chain_node(ci, d, s):
        c = layout.corridors[ci]
        for cn in chains[(ci, d)]:
            delta = abs(cn.s - s) if not c.closed else min(abs(cn.s - s % c.length),
                                                              c.length - abs(cn.s - s % c.length))
            if delta < 1e-6:
                return cn.node_id
        return None

    def turn(heading_from, heading_to) -> BehaviorKind:
        return BehaviorKind.TURN_LEFT if _cross(heading_from, heading_to) > 0 else BehaviorKind.TURN_RIGHT

    for room in layout.rooms:
        rid, did = room_ids[room.label]
        c = layout.corridors[room.corridor]
        b = getattr(room, "door_after", AFTER)
        inward = (-room.normal[0], -room.normal[1])
        for d in (1, -1):
            tx, ty = c.tangent(room.s)
            travel = (d * tx, d * ty)
            approach = chain_node(room.corridor, d, room.s - d * APPROACH)
            if approach is not None:
                edges.append((approach, rid, turn(travel, inward)))
            after = chain_node(room.corridor, d, room.s + d * b)
            if after is not None:
                edges.append((did, after, turn(room.normal, travel)))
    for a in layout.rooms:
        for b in layout.rooms:
            if a is b or a.corridor != b.corridor or abs(a.s - b.s) > 1e-6:
                continue
            if _cross(a.normal, b.normal) == 0 and a.normal != b.normal:
                edges.append((room_ids[a.label][1], room_ids[b.label][0], BehaviorKind.STRAIGHT))
    for ci, c in enumerate(layout.corridors):
        if c.parent is None:
            continue
        parent = layout.corridors[c.parent]
        out_dir = c.tangent(0.0)
        in_dir = (-out_dir[0], -out_dir[1])
        stem_after = chain_node(ci, 1, c.after)
        stem_approach = chain_node(ci, -1, APPROACH)
        for d in (1, -1):
            tx, ty = parent.tangent(c.parent_s)
            travel = (d * tx, d * ty)
            approach = chain_node(c.parent, d, c.parent_s - d * APPROACH)
            after = chain_node(c.parent, d, c.parent_s + d * c.after)
            if approach is not None:
                edges.append((approach, stem_after, turn(travel, out_dir)))
            if after is not None:
                edges.append((stem_approach, after, turn(in_dir, travel)))

    topo = TopoMap(nodes, [TopoEdge(k, s, t, beh) for k, (s, t, beh) in enumerate(edges)], name=name)
    return world, topo


def _owning_corridor(layout: _Layout, room: _Room) -> int:
    best, best_d = 0, float("inf")
    for ci, c in enumerate(layout.corridors):
        s = c.project(room.door_center)
        px, py = c.position(s)
        d = math.hypot(px - room.door_center[0], py - room.door_center[1])
        if d < best_d - 1e-9:
            best, best_d = ci, d
    return best


def gen_fixture_world(kind: FixtureKind | str, seed: int) -> tuple[WorldModel, TopoMap]:
    """Build a fixture world and its aligned topological map from ``seed``."""
    kind = FixtureKind(kind)
    rng = np.random.default_rng([seed, list(FixtureKind).index(kind)])
    layout = {
        FixtureKind.CORRIDOR: _corridor_layout,
        FixtureKind.TEE: _tee_layout,
        FixtureKind.LOOP: _loop_layout,
    }[kind](rng)
    return _build(layout, rng, f"{kind.value}-{seed}")
