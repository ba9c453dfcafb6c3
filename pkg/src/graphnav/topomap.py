"""Directed, behavior-labeled topological maps.

A map is a set of semantic locations (nodes) anchored in metric coordinates
and connected by directed edges, each labeled with the behavior that moves
the robot from the source to the target location.
"""
from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class MapStructureError(ValueError):
    """Raised for maps whose ids do not resolve (dangling or duplicate ids)."""


class MapParseError(ValueError):
    """Raised when a map file cannot be parsed."""


class PlanningError(RuntimeError):
    pass


class NodeKind(enum.Enum):
    ROOM = "room"
    HALLWAY = "hallway"
    OPEN = "open"

    @property
    def index(self) -> int:
        return _NODE_KIND_ORDER.index(self)


class BehaviorKind(enum.Enum):
    CORRIDOR_FOLLOW = "cf"
    FIND_DOOR = "fd"
    TURN_LEFT = "tl"
    TURN_RIGHT = "tr"
    STRAIGHT = "s"

    @property
    def index(self) -> int:
        return _BEHAVIOR_ORDER.index(self)


_NODE_KIND_ORDER = (NodeKind.ROOM, NodeKind.HALLWAY, NodeKind.OPEN)
_BEHAVIOR_ORDER = (
    BehaviorKind.CORRIDOR_FOLLOW,
    BehaviorKind.FIND_DOOR,
    BehaviorKind.TURN_LEFT,
    BehaviorKind.TURN_RIGHT,
    BehaviorKind.STRAIGHT,
)
NODE_KINDS = _NODE_KIND_ORDER
BEHAVIORS = _BEHAVIOR_ORDER


@dataclass(frozen=True)
class TopoNode:
    id: int
    kind: NodeKind
    is_door: bool
    position: tuple[float, float]
    orientation: float | None
    room_label: str

    @property
    def is_room_node(self) -> bool:
        return self.kind is NodeKind.ROOM and not self.is_door


@dataclass(frozen=True)
class TopoEdge:
    id: int
    src: int
    dst: int
    behavior: BehaviorKind


class TopoMap:
    """Immutable directed topological map with adjacency indices.

    Construction checks structural well-formedness only (ids resolve, no
    self loops, unique ``(src, dst, behavior)`` triples). The design rules are
    checked separately by :func:`validate_map`.
    """

    def __init__(self, nodes: Iterable[TopoNode], edges: Iterable[TopoEdge], name: str = ""):
        self.nodes: tuple[TopoNode, ...] = tuple(nodes)
        self.edges: tuple[TopoEdge, ...] = tuple(edges)
        self.name = name
        if not self.nodes:
            raise MapStructureError("empty map")
        self._node_by_id: dict[int, TopoNode] = {}
        for node in self.nodes:
            if node.id in self._node_by_id:
                raise MapStructureError(f"duplicate node id {node.id}")
            self._node_by_id[node.id] = node
        self._edge_by_id: dict[int, TopoEdge] = {}
        self._out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        self._in: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        triples = set()
        for edge in self.edges:
            if edge.id in self._edge_by_id:
                raise MapStructureError(f"duplicate edge id {edge.id}")
            for end in (edge.src, edge.dst):
                if end not in self._node_by_id:
                    raise MapStructureError(f"edge {edge.id} references missing node {end}")
            if edge.src == edge.dst:
                raise MapStructureError(f"edge {edge.id} is a self loop")
            key = (edge.src, edge.dst, edge.behavior)
            if key in triples:
                raise MapStructureError(f"edge {edge.id} duplicates {key}")
            triples.add(key)
            self._edge_by_id[edge.id] = edge
            self._out[edge.src].append(edge.id)
            self._in[edge.dst].append(edge.id)
        for adj in (self._out, self._in):
            for ids in adj.values():
                ids.sort()

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TopoMap):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self) -> str:
        return f"TopoMap(name={self.name!r}, nodes={len(self.nodes)}, edges={len(self.edges)})"

    def node(self, node_id: int) -> TopoNode:
        return self._node_by_id[node_id]

    def edge(self, edge_id: int) -> TopoEdge:
        return self._edge_by_id[edge_id]

    def has_node(self, node_id: int) -> bool:
        return node_id in self._node_by_id

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def out_edges(self, node_id: int) -> list[TopoEdge]:
        return [self._edge_by_id[k] for k in self._out[node_id]]

    def in_edges(self, node_id: int) -> list[TopoEdge]:
        return [self._edge_by_id[k] for k in self._in[node_id]]

    def successors(self, node_id: int) -> list[int]:
        return sorted({self._edge_by_id[k].dst for k in self._out[node_id]})

    def predecessors(self, node_id: int) -> list[int]:
        return sorted({self._edge_by_id[k].src for k in self._in[node_id]})

    def find_edge(self, src: int, dst: int) -> TopoEdge | None:
        """Lowest-id edge from ``src`` to ``dst``, or None."""
        for k in self._out[src]:
            if self._edge_by_id[k].dst == dst:
                return self._edge_by_id[k]
        return None

    def edge_bearing(self, edge: TopoEdge) -> float:
        """Bearing of the straight chord from the edge's source to its target."""
        (x0, y0), (x1, y1) = self.node(edge.src).position, self.node(edge.dst).position
        return math.atan2(y1 - y0, x1 - x0)


@dataclass(frozen=True)
class NavPlan:
    node_seq: tuple[int, ...]
    edge_seq: tuple[int, ...]
    behavior_seq: tuple[BehaviorKind, ...]

    def __post_init__(self):
        if not self.node_seq:
            raise ValueError("plan needs at least one node")
        if len(self.edge_seq) != len(self.node_seq) - 1 or len(self.behavior_seq) != len(self.edge_seq):
            raise ValueError("plan sequences have inconsistent lengths")

    @classmethod
    def from_edges(cls, topo: TopoMap, start: int, edge_ids: Sequence[int]) -> "NavPlan":
        nodes = [start]
        for k in edge_ids:
            edge = topo.edge(k)
            if edge.src != nodes[-1]:
                raise ValueError(f"edge {k} does not continue the plan at node {nodes[-1]}")
            nodes.append(edge.dst)
        behaviors = tuple(topo.edge(k).behavior for k in edge_ids)
        return cls(tuple(nodes), tuple(edge_ids), behaviors)

    def __len__(self) -> int:
        return len(self.node_seq)


@dataclass(frozen=True)
class SubGraph:
    """A cropped map with local ids ``0..n-1`` mapped back to parent ids."""

    map: TopoMap
    node_ids: tuple[int, ...]
    edge_ids: tuple[int, ...]
    center: int
    _local_edge: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_local_edge", {k: i for i, k in enumerate(self.edge_ids)})

    def local_edge(self, parent_edge_id: int) -> int | None:
        return self._local_edge.get(parent_edge_id)

    def contains_edge(self, parent_edge_id: int) -> bool:
        return parent_edge_id in self._local_edge


@dataclass(frozen=True)
class Violation:
    rule: int
    message: str


# ---------------------------------------------------------------------------
# validation


def _angle_diff(a: float, b: float) -> float:
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def _weakly_connected(topo: TopoMap) -> bool:
    seen = {topo.nodes[0].id}
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        for w in topo.successors(v) + topo.predecessors(v):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(topo.nodes)


def validate_map(topo: TopoMap) -> list[Violation]:
    """Check the six map design rules; returns an empty list for conforming maps.

    Rule 0 is used for the connectivity invariant.
    """
    report: list[Violation] = []
    if not _weakly_connected(topo):
        report.append(Violation(0, "map is not weakly connected"))

    rooms: dict[str, list[TopoNode]] = {}
    doors: dict[str, list[TopoNode]] = {}
    for node in topo.nodes:
        if node.kind is NodeKind.ROOM:
            (doors if node.is_door else rooms).setdefault(node.room_label, []).append(node)
    labels = sorted(set(rooms) | set(doors))
    room_labels = set(labels)

    for label in labels:
        count = len(rooms.get(label, []))
        if count != 1:
            report.append(Violation(1, f"room {label!r} has {count} room nodes"))
    for label in labels:
        if not doors.get(label):
            report.append(Violation(2, f"room {label!r} has no door node"))
    for label in labels:
        for room in rooms.get(label, []):
            for door in doors.get(label, []):
                fd = any(
                    e.dst == door.id and e.behavior is BehaviorKind.FIND_DOOR for e in topo.out_edges(room.id)
                )
                if not fd:
                    report.append(Violation(3, f"no find-door edge {room.id}->{door.id} in {label!r}"))

    corridor_nodes: dict[str, list[TopoNode]] = {}
    for node in topo.nodes:
        if node.kind is not NodeKind.ROOM:
            corridor_nodes.setdefault(node.room_label, []).append(node)
    for label, nodes in sorted(corridor_nodes.items()):
        for node in nodes:
            if node.orientation is None:
                report.append(Violation(4, f"corridor node {node.id} has no orientation"))
                continue
            opposite = any(
                other.orientation is not None
                and _angle_diff(other.orientation, node.orientation + math.pi) < math.radians(10)
                for other in nodes
            )
            if not opposite:
                report.append(
                    Violation(4, f"corridor {label!r} lacks an opposite-direction chain at node {node.id}")
                )

    for edge in topo.edges:
        src, dst = topo.node(edge.src), topo.node(edge.dst)
        if src.room_label == dst.room_label:
            continue
        if dst.room_label in room_labels and not dst.is_room_node:
            report.append(Violation(5, f"edge {edge.id} enters {dst.room_label!r} at non-room node {dst.id}"))
        if src.room_label in room_labels and not (src.kind is NodeKind.ROOM and src.is_door):
            report.append(Violation(6, f"edge {edge.id} exits {src.room_label!r} from non-door node {src.id}"))

    for node in topo.nodes:
        if node.is_room_node and node.orientation is not None:
            report.append(Violation(1, f"room node {node.id} must not carry an orientation"))
        if not node.is_room_node and node.orientation is None:
            report.append(Violation(4 if node.kind is not NodeKind.ROOM else 2,
                                    f"node {node.id} needs an orientation"))
    return report


# ---------------------------------------------------------------------------
# planning and cropping


def bfs_distances(topo: TopoMap, source: int, reverse: bool = False) -> dict[int, int]:
    """Directed hop distances from ``source`` (to ``source`` if ``reverse``)."""
    step = topo.predecessors if reverse else topo.successors
    dist = {source: 0}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in step(v):
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def shortest_plan(topo: TopoMap, src: int, dst: int) -> NavPlan:
    """Minimum-hop plan; ties go to the lexicographically smallest node sequence."""
    for v in (src, dst):
        if not topo.has_node(v):
            raise PlanningError(f"unknown node {v}")
    to_dst = bfs_distances(topo, dst, reverse=True)
    if src not in to_dst:
        raise PlanningError(f"node {dst} is unreachable from {src}")
    nodes, edges = [src], []
    current = src
    while current != dst:
        # smallest-id successor one hop closer keeps the sequence lexicographically minimal
        nxt = min(w for w in topo.successors(current) if to_dst.get(w) == to_dst[current] - 1)
        edges.append(topo.find_edge(current, nxt).id)
        nodes.append(nxt)
        current = nxt
    return NavPlan(tuple(nodes), tuple(edges), tuple(topo.edge(k).behavior for k in edges))


def crop_subgraph(topo: TopoMap, center: int, ahead: int = 3, behind: int = 2) -> SubGraph:
    """Keep nodes within ``ahead`` hops from ``center`` or ``behind`` hops to it."""
    fwd = bfs_distances(topo, center)
    bwd = bfs_distances(topo, center, reverse=True)
    keep = sorted({v for v, d in fwd.items() if d <= ahead} | {v for v, d in bwd.items() if d <= behind})
    local = {v: i for i, v in enumerate(keep)}
    nodes = []
    for v in keep:
        n = topo.node(v)
        nodes.append(TopoNode(local[v], n.kind, n.is_door, n.position, n.orientation, n.room_label))
    kept_edges = [e for e in topo.edges if e.src in local and e.dst in local]
    edges = [TopoEdge(i, local[e.src], local[e.dst], e.behavior) for i, e in enumerate(kept_edges)]
    sub_map = TopoMap(nodes, edges, name=f"{topo.name}@{center}")
    return SubGraph(sub_map, tuple(keep), tuple(e.id for e in kept_edges), center)


class Difficulty(enum.Enum):
    I = "I"
    II = "II"
    III = "III"


def difficulty(plan: NavPlan) -> Difficulty:
    n = len(plan.node_seq)
    if n <= 10:
        return Difficulty.I
    if n <= 20:
        return Difficulty.II
    return Difficulty.III


# ---------------------------------------------------------------------------
# file io

_KIND_FROM_STR = {k.value: k for k in NodeKind}
_BEHAVIOR_FROM_STR = {b.value: b for b in BehaviorKind}


def map_to_dict(topo: TopoMap) -> dict:
    return {
        "name": topo.name,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "is_door": n.is_door,
                "x": n.position[0],
                "y": n.position[1],
                "theta": n.orientation,
                "room": n.room_label,
            }
            for n in topo.nodes
        ],
        "edges": [
            {"id": e.id, "src": e.src, "dst": e.dst, "behavior": e.behavior.value} for e in topo.edges
        ],
    }


def map_from_dict(data: dict, name: str = "") -> TopoMap:
    if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
        raise MapParseError("map file needs top-level 'nodes' and 'edges'")
    nodes = []
    for i, rec in enumerate(data["nodes"]):
        try:
            theta = rec["theta"]
            nodes.append(
                TopoNode(
                    id=int(rec["id"]),
                    kind=_KIND_FROM_STR[rec["kind"]],
                    is_door=bool(rec["is_door"]),
                    position=(float(rec["x"]), float(rec["y"])),
                    orientation=None if theta is None else float(theta),
                    room_label=str(rec["room"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MapParseError(f"node record {i}: bad or missing field {exc}") from exc
    ids = {n.id for n in nodes}
    edges = []
    for i, rec in enumerate(data["edges"]):
        try:
            edge = TopoEdge(int(rec["id"]), int(rec["src"]), int(rec["dst"]), _BEHAVIOR_FROM_STR[rec["behavior"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise MapParseError(f"edge record {i}: bad or missing field {exc}") from exc
        for end in (edge.src, edge.dst):
            if end not in ids:
                raise MapParseError(f"edge {edge.id}: endpoint {end} is not a node")
        edges.append(edge)
    if not nodes:
        raise MapStructureError("empty map")
    return TopoMap(nodes, edges, name=data.get("name") or name)


def dumps_map(topo: TopoMap) -> str:
    return json.dumps(map_to_dict(topo), indent=1) + "\n"


def write_map(topo: TopoMap, path: str | Path) -> None:
    Path(path).write_text(dumps_map(topo))


def read_map(path: str | Path) -> TopoMap:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MapParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return map_from_dict(data, name=path.stem)
