"""2D occupancy-grid world with unicycle kinematics and planar depth scans."""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RESOLUTION = 0.05
ROBOT_RADIUS = 0.18
DT = 0.2
SUBSTEP = 0.02
V_MAX = 0.5
W_MAX = 1.5
N_RAYS = 64
FOV = math.radians(150.0)
MAX_RANGE = 3.5
NOISE_DECAY = 0.95
NOISE_GAIN = 0.05
NOISE_VAR = (0.2, 1.0)

SEMANTIC_CLASSES = ("office", "hallway", "open space", "conference", "storage")
REAL_ROOM_CLASSES = frozenset({"office", "conference", "storage"})
OCCUPIED = "occupied"


class QueryError(ValueError):
    pass


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class RoomInfo:
    label: str
    semantic: str


class WorldModel:
    """Occupancy grid with per-cell room instance labels.

    Cell ``(iy, ix)`` covers ``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)``.
    ``labels`` holds ``-1`` for occupied cells and an index into ``rooms``
    otherwise.
    """

    def __init__(self, occupancy: np.ndarray, labels: np.ndarray, rooms: list[RoomInfo],
                 resolution: float = RESOLUTION, name: str = ""):
        occupancy = np.asarray(occupancy, dtype=bool)
        labels = np.asarray(labels, dtype=np.int16)
        if occupancy.shape != labels.shape or occupancy.ndim != 2:
            raise ValueError("occupancy and label rasters must share a 2D shape")
        occupancy = occupancy.copy()
        occupancy[0, :] = occupancy[-1, :] = True
        occupancy[:, 0] = occupancy[:, -1] = True
        labels = labels.copy()
        labels[occupancy] = -1
        if np.any(labels[~occupancy] < 0):
            raise ValueError("every free cell needs a room label")
        occupancy.setflags(write=False)
        labels.setflags(write=False)
        self.occupancy = occupancy
        self.labels = labels
        self.rooms = list(rooms)
        self.resolution = float(resolution)
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @property
    def extent(self) -> tuple[float, float]:
        h, w = self.occupancy.shape
        return w * self.resolution, h * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def in_bounds(self, x: float, y: float) -> bool:
        w, h = self.extent
        return 0.0 <= x < w and 0.0 <= y < h

    def semantic_of(self, label: str) -> str:
        for room in self.rooms:
            if room.label == label:
                return room.semantic
        raise KeyError(label)

    def __eq__(self, other):
        if not isinstance(other, WorldModel):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.rooms == other.rooms
            and np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float
    time: float = 0.0


@dataclass(frozen=True)
class VelocityCmd:
    v_p: float
    v_theta: float

    def clamped(self) -> "VelocityCmd":
        return VelocityCmd(min(max(self.v_p, -V_MAX), V_MAX), min(max(self.v_theta, -W_MAX), W_MAX))

    def as_array(self) -> np.ndarray:
        return np.array([self.v_p, self.v_theta])


ZERO_CMD = VelocityCmd(0.0, 0.0)


@dataclass(frozen=True)
class CollisionEvent:
    state: RobotState
    time: float


@dataclass(frozen=True)
class NoiseState:
    z_p: float = 0.0
    z_theta: float = 0.0


def footprint_collides(world: WorldModel, x: float, y: float, radius: float = ROBOT_RADIUS) -> bool:
    """True if the disc at ``(x, y)`` overlaps any occupied cell."""
    res = world.resolution
    h, w = world.shape
    j0, j1 = int(math.floor((x - radius) / res)), int(math.floor((x + radius) / res))
    i0, i1 = int(math.floor((y - radius) / res)), int(math.floor((y + radius) / res))
    if i0 < 0 or j0 < 0 or i1 >= h or j1 >= w:
        return True
    block = world.occupancy[i0:i1 + 1, j0:j1 + 1]
    if not block.any():
        return False
    iy, ix = np.nonzero(block)
    cx0 = (ix + j0) * res
    cy0 = (iy + i0) * res
    dx = np.maximum(np.maximum(cx0 - x, x - (cx0 + res)), 0.0)
    dy = np.maximum(np.maximum(cy0 - y, y - (cy0 + res)), 0.0)
    return bool(np.any(dx * dx + dy * dy < radius * radius))


def step(world: WorldModel, state: RobotState, cmd: VelocityCmd, dt: float = DT) -> RobotState | CollisionEvent:
    """Integrate one control period; the swept footprint is checked every 0.02 s."""
    if abs(cmd.v_p) > V_MAX + 1e-12 or abs(cmd.v_theta) > W_MAX + 1e-12:
        raise ValueError(f"command {cmd} exceeds velocity caps")
    x1 = state.x + cmd.v_p * math.cos(state.theta) * dt
    y1 = state.y + cmd.v_p * math.sin(state.theta) * dt
    n_sub = max(1, int(math.ceil(dt / SUBSTEP - 1e-9)))
    for k in range(1, n_sub + 1):
        f = k / n_sub
        xs = state.x + f * (x1 - state.x)
        ys = state.y + f * (y1 - state.y)
        if footprint_collides(world, xs, ys):
            t = state.time + f * dt
            return CollisionEvent(RobotState(xs, ys, wrap_angle(state.theta + cmd.v_theta * f * dt), t), t)
    return RobotState(x1, y1, wrap_angle(state.theta + cmd.v_theta * dt), state.time + dt)


def ray_bearings(theta: float) -> np.ndarray:
    return theta - FOV / 2 + np.arange(N_RAYS) * (FOV / (N_RAYS - 1))


def raycast(world: WorldModel, x: float, y: float, angles: np.ndarray, max_range: float = MAX_RANGE) -> np.ndarray:
    """Exact grid traversal: distance to the first occupied cell boundary per ray."""
    res = world.resolution
    occ = world.occupancy
    h, w = occ.shape
    dx, dy = np.cos(angles), np.sin(angles)
    n = len(angles)
    ix = np.full(n, int(math.floor(x / res)))
    iy = np.full(n, int(math.floor(y / res)))
    if not (0 <= ix[0] < w and 0 <= iy[0] < h) or occ[iy[0], ix[0]]:
        return np.zeros(n)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    next_x = np.where(dx > 0, (ix + 1) * res - x, x - ix * res)
    next_y = np.where(dy > 0, (iy + 1) * res - y, y - iy * res)
    with np.errstate(divide="ignore", invalid="ignore"):  # axis-parallel rays never step on that axis
        inv_dx = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        inv_dy = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        t_max_x = np.where(dx != 0, next_x * inv_dx, np.inf)
        t_max_y = np.where(dy != 0, next_y * inv_dy, np.inf)
    t_dx, t_dy = res * inv_dx, res * inv_dy
    ranges = np.full(n, max_range)
    active = np.ones(n, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        go_x = t_max_x[idx] < t_max_y[idx]
        t_hit = np.where(go_x, t_max_x[idx], t_max_y[idx])
        far = t_hit >= max_range
        active[idx[far]] = False
        keep = ~far
        idx, go_x, t_hit = idx[keep], go_x[keep], t_hit[keep]
        if idx.size == 0:
            break
        gx, gy = idx[go_x], idx[~go_x]
        ix[gx] += step_x[gx]
        t_max_x[gx] += t_dx[gx]
        iy[gy] += step_y[gy]
        t_max_y[gy] += t_dy[gy]
        cx, cy = ix[idx], iy[idx]
        outside = (cx < 0) | (cx >= w) | (cy < 0) | (cy >= h)
        hit = outside.copy()
        inside = ~outside
        hit[inside] = occ[cy[inside], cx[inside]]
        ranges[idx[hit]] = t_hit[hit]
        active[idx[hit]] = False
    return np.clip(ranges, 0.0, max_range)


def raycast_scan(world: WorldModel, state: RobotState) -> np.ndarray:
    """64 clipped ranges evenly spanning 150 degrees, rightmost ray first."""
    return raycast(world, state.x, state.y, ray_bearings(state.theta))


def inject_noise(noise: NoiseState, cmd_raw: VelocityCmd, rng: np.random.Generator,
                 sample: tuple[float, float] | None = None) -> tuple[NoiseState, VelocityCmd]:
    """Advance the persistent noise offsets and apply them to ``cmd_raw``.

    The Gaussian parameters are variances, so ``n_p`` has standard deviation
    ``sqrt(0.2)``. ``sample`` forces the draw ``n`` (for tests).
    """
    if sample is None:
        n_p = rng.normal(0.0, math.sqrt(NOISE_VAR[0]))
        n_t = rng.normal(0.0, math.sqrt(NOISE_VAR[1]))
    else:
        n_p, n_t = sample
    z = NoiseState(NOISE_DECAY * noise.z_p + NOISE_GAIN * n_p, NOISE_DECAY * noise.z_theta + NOISE_GAIN * n_t)
    noisy = VelocityCmd(cmd_raw.v_p + z.z_p, cmd_raw.v_theta + z.z_theta).clamped()
    return z, noisy


def room_at(world: WorldModel, x: float, y: float) -> tuple[str, str]:
    if not world.in_bounds(x, y):
        raise QueryError(f"point ({x}, {y}) lies outside the world")
    iy, ix = world.cell_of(x, y)
    idx = int(world.labels[iy, ix])
    if idx < 0:
        return OCCUPIED, OCCUPIED
    room = world.rooms[idx]
    return room.label, room.semantic


# ---------------------------------------------------------------------------
# world file


def world_to_dict(world: WorldModel) -> dict:
    h, w = world.shape
    occ = np.packbits(world.occupancy.astype(np.uint8), axis=None)
    return {
        "name": world.name,
        "width": w,
        "height": h,
        "resolution": world.resolution,
        "rooms": [{"label": r.label, "class": r.semantic} for r in world.rooms],
        "occupancy": base64.b64encode(occ.tobytes()).decode("ascii"),
        "labels": base64.b64encode(world.labels.astype("<i2").tobytes()).decode("ascii"),
    }


def world_from_dict(data: dict) -> WorldModel:
    h, w = int(data["height"]), int(data["width"])
    occ = np.unpackbits(np.frombuffer(base64.b64decode(data["occupancy"]), dtype=np.uint8))[: h * w]
    labels = np.frombuffer(base64.b64decode(data["labels"]), dtype="<i2").reshape(h, w)
    rooms = [RoomInfo(r["label"], r["class"]) for r in data["rooms"]]
    return WorldModel(occ.reshape(h, w).astype(bool), labels, rooms, float(data["resolution"]), data.get("name", ""))


def write_world(world: WorldModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world_to_dict(world)) + "\n")


def read_world(path: str | Path) -> WorldModel:
    return world_from_dict(json.loads(Path(path).read_text()))
