"""Deterministic 2D world: maps, unicycle kinematics, moving obstacles,
collision checks and raycast LiDAR.

Coordinates are meters and radians. The map occupies the rectangle
``[0, width] x [0, height]`` and its boundary is a solid wall.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MapFormatError(ValueError):
    """A map or scenario file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field_name = field_name


class MapValidationError(ValueError):
    """A map violates a structural invariant."""


class MapTooDenseError(RuntimeError):
    """Rejection sampling could not find free start/goal placements."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


# ----------------------------------------------------------------------
# Shapes and map
# ----------------------------------------------------------------------

def rect_polygon(cx: float, cy: float, w: float, h: float, theta: float = 0.0) -> np.ndarray:
    """Corners of a rotated rectangle, counter-clockwise."""
    hw, hh = 0.5 * w, 0.5 * h
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


@dataclass(frozen=True)
class WorldMap:
    width: float
    height: float
    obstacles: tuple[np.ndarray, ...] = ()
    resolution: float = 0.05

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise MapValidationError(f"bounds must be positive, got {self.width} x {self.height}")
        if self.resolution <= 0:
            raise MapValidationError("resolution must be positive")
        polys = []
        for i, poly in enumerate(self.obstacles):
            poly = np.asarray(poly, dtype=float)
            if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
                raise MapValidationError(f"obstacle {i}: polygon needs at least 3 vertices")
            if (poly[:, 0].min() < 0 or poly[:, 0].max() > self.width
                    or poly[:, 1].min() < 0 or poly[:, 1].max() > self.height):
                raise MapValidationError(f"obstacle {i}: vertex outside map bounds")
            poly.setflags(write=False)
            polys.append(poly)
        object.__setattr__(self, "obstacles", tuple(polys))
        segs = np.concatenate([self.boundary_segments()] + [_polygon_segments(p) for p in polys], axis=0)
        segs.setflags(write=False)
        object.__setattr__(self, "_segments", segs)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def boundary_segments(self) -> np.ndarray:
        w, h = self.width, self.height
        corners = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
        return np.stack([corners, np.roll(corners, -1, axis=0)], axis=1)

    def static_segments(self) -> np.ndarray:
        """All wall and obstacle edges as a read-only (M, 2, 2) array."""
        return self._segments


def _polygon_segments(poly: np.ndarray) -> np.ndarray:
    return np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)


# ----------------------------------------------------------------------
# Robot, goal, sensor
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    omega: float = 0.0
    radius: float = 0.2

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class GoalSpec:
    x: float
    y: float
    tolerance: float = 0.3

    def __post_init__(self):
        if self.tolerance <= 0:
            raise MapValidationError("goal tolerance must be positive")


@dataclass(frozen=True)
class LidarConfig:
    fov_deg: float = 270.0
    beam_count: int = 1080
    max_range: float = 30.0
    mount: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.beam_count <= 0:
            raise ValueError("beam_count must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not 0 < self.fov_deg <= 360:
            raise ValueError("fov must lie in (0, 360]")

    @property
    def resolution_deg(self) -> float:
        return self.fov_deg / self.beam_count

    def relative_angles(self) -> np.ndarray:
        """Beam angles relative to the sensor axis, ascending.

        Beam ``i`` sits at ``-fov/2 + i * resolution`` so the beam at index
        ``beam_count // 2`` points straight ahead when the count is even.
        """
        fov = math.radians(self.fov_deg)
        return -0.5 * fov + np.arange(self.beam_count) * (fov / self.beam_count)

    def index_range_for_sector(self, half_width_deg: float) -> tuple[int, int]:
        """Inclusive beam index range covering ``|angle| <= half_width_deg``."""
        ang = np.degrees(self.relative_angles())
        idx = np.nonzero(np.abs(ang) <= half_width_deg + 1e-9)[0]
        return int(idx[0]), int(idx[-1])


# ----------------------------------------------------------------------
# Moving obstacles
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MovingObstacle:
    """Constant-speed waypoint follower with a rectangle or disc footprint.

    ``size`` is ``(radius,)`` for a disc and ``(width, length)`` for a
    rectangle whose long side follows the direction of travel. With
    ``loop`` the path is closed back to its first waypoint; otherwise the
    obstacle parks on the final waypoint.
    """

    shape: str
    size: tuple[float, ...]
    path: tuple[tuple[float, float], ...]
    speed: float
    loop: bool = False
    travelled: float = 0.0

    def __post_init__(self):
        if self.shape not in ("disc", "rect"):
            raise MapValidationError(f"unknown moving shape '{self.shape}'")
        if self.speed < 0:
            raise MapValidationError("moving obstacle speed must be >= 0")
        if len(self.path) < 2:
            raise MapValidationError("moving obstacle path needs >= 2 waypoints")
        if len(self.size) != (1 if self.shape == "disc" else 2):
            raise MapValidationError(f"bad size for {self.shape}: {self.size}")

    def _vertices(self) -> np.ndarray:
        pts = np.asarray(self.path, dtype=float)
        return np.vstack([pts, pts[:1]]) if self.loop else pts

    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self._vertices(), axis=0), axis=1).sum())

    def pose(self) -> tuple[float, float, float]:
        pts = self._vertices()
        seg = np.diff(pts, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        total = lengths.sum()
        s = self.travelled
        if total <= 0:
            return float(pts[0, 0]), float(pts[0, 1]), 0.0
        if self.loop:
            s = math.fmod(s, total)
        else:
            s = min(s, total)
        for (p, d, L) in zip(pts[:-1], seg, lengths):
            if L <= 0:
                continue
            if s <= L:
                q = p + d * (s / L)
                return float(q[0]), float(q[1]), math.atan2(d[1], d[0])
            s -= L
        last = int(np.nonzero(lengths > 0)[0][-1])
        d = seg[last]
        return float(pts[-1, 0]), float(pts[-1, 1]), math.atan2(d[1], d[0])

    def polygon(self) -> np.ndarray | None:
        if self.shape != "rect":
            return None
        x, y, th = self.pose()
        width, length = self.size
        return rect_polygon(x, y, length, width, th)


def advance_obstacles(obstacles: Sequence[MovingObstacle], dt: float) -> list[MovingObstacle]:
    """Move every obstacle ``speed * dt`` along its path."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return [replace(o, travelled=o.travelled + o.speed * dt) for o in obstacles]


# ----------------------------------------------------------------------
# Kinematics and goal geometry
# ----------------------------------------------------------------------

def step_kinematics(state: RobotState, v: float, omega: float, dt: float) -> RobotState:
    """Explicit Euler unicycle step. Commands must already be within limits."""
    assert dt > 0, "dt must be positive"
    x = state.x + v * math.cos(state.theta) * dt
    y = state.y + v * math.sin(state.theta) * dt
    theta = normalize_angle(state.theta + omega * dt)
    return replace(state, x=x, y=y, theta=theta, v=v, omega=omega)


def relative_goal(state: RobotState, goal: GoalSpec) -> tuple[float, float]:
    """Distance and robot-frame bearing to the goal."""
    dx, dy = goal.x - state.x, goal.y - state.y
    return math.hypot(dx, dy), normalize_angle(math.atan2(dy, dx) - state.theta)


# ----------------------------------------------------------------------
# Collision
# ----------------------------------------------------------------------

def point_segment_distance(p: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (..., 2) to each segment in ``segs`` (M, 2, 2).

    Returns an array of shape (..., M).
    """
    a = segs[:, 0]
    ab = segs[:, 1] - a
    ap = p[..., None, :] - a
    denom = np.einsum("mj,mj->m", ab, ab)
    t = np.einsum("...mj,mj->...m", ap, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p[..., None, :] - closest, axis=-1)


def point_in_polygon(p: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule containment for points (..., 2)."""
    x, y = p[..., 0], p[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def disc_hits_polygon(center: np.ndarray, radius: float, poly: np.ndarray) -> bool:
    if point_in_polygon(center, poly):
        return True
    return bool(point_segment_distance(center, _polygon_segments(poly)).min() < radius)


def check_collision(state: RobotState, world_map: WorldMap,
                    obstacles: Sequence[MovingObstacle] = ()) -> bool:
    """True iff the robot disc overlaps a wall, a static shape or a moving obstacle.

    Exact tangency is not a collision.
    """
    r = state.radius
    if (state.x - r < 0 or state.x + r > world_map.width
            or state.y - r < 0 or state.y + r > world_map.height):
        return True
    c = state.position
    for poly in world_map.obstacles:
        if disc_hits_polygon(c, r, poly):
            return True
    for ob in obstacles:
        if ob.shape == "disc":
            ox, oy, _ = ob.pose()
            if math.hypot(state.x - ox, state.y - oy) < r + ob.size[0]:
                return True
        elif disc_hits_polygon(c, r, ob.polygon()):
            return True
    return False


def clearance(point: np.ndarray, world_map: WorldMap) -> np.ndarray:
    """Distance from points (..., 2) to the nearest wall or static obstacle.

    Points inside an obstacle or outside the bounds get zero.
    """
    p = np.asarray(point, dtype=float)
    d = point_segment_distance(p, world_map.static_segments()).min(axis=-1)
    outside = (p[..., 0] < 0) | (p[..., 0] > world_map.width) | (p[..., 1] < 0) | (p[..., 1] > world_map.height)
    d = np.where(outside, 0.0, d)
    for poly in world_map.obstacles:
        d = np.where(point_in_polygon(p, poly), 0.0, d)
    return d


# ----------------------------------------------------------------------
# LiDAR
# ----------------------------------------------------------------------

MIN_RANGE = 1e-4


@dataclass(frozen=True)
class Scan:
    ranges: np.ndarray
    timestamp: int = 0
    max_range: float = 30.0

    def __len__(self) -> int:
        return len(self.ranges)


def _ray_segment_hits(origin: np.ndarray, dirs: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Nearest positive hit distance for each ray, ``inf`` when nothing is hit."""
    a = segs[:, 0]
    e = segs[:, 1] - a
    ao = a - origin
    denom = dirs[:, None, 0] * e[None, :, 1] - dirs[:, None, 1] * e[None, :, 0]
    t_num = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
    u_num = ao[None, :, 0] * dirs[:, None, 1] - ao[None, :, 1] * dirs[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    ok = (denom != 0) & (t >= 0) & (u >= 0) & (u <= 1)
    return np.where(ok, t, np.inf).min(axis=1)


def _ray_disc_hits(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t1, t2 = -b - root, -b + root
    t = np.where(t1 >= 0, t1, np.where(t2 >= 0, t2, np.inf))
    return np.where(disc >= 0, t, np.inf)


def beam_directions(state: RobotState, cfg: LidarConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sensor origin and unit beam directions in the world frame."""
    mx, my, mth = cfg.mount
    c, s = math.cos(state.theta), math.sin(state.theta)
    origin = np.array([state.x + c * mx - s * my, state.y + s * mx + c * my])
    ang = state.theta + mth + cfg.relative_angles()
    return origin, np.stack([np.cos(ang), np.sin(ang)], axis=1)


def raycast_scan(state: RobotState, world_map: WorldMap, obstacles: Sequence[MovingObstacle],
                 cfg: LidarConfig, timestamp: int = 0,
                 static_segments: np.ndarray | None = None) -> Scan:
    """Analytic range to the nearest surface along every beam, clamped to max range."""
    origin, dirs = beam_directions(state, cfg)
    segs = world_map.static_segments() if static_segments is None else static_segments
    moving = [ob.polygon() for ob in obstacles if ob.shape == "rect"]
    if moving:
        segs = np.concatenate([segs] + [_polygon_segments(p) for p in moving], axis=0)
    ranges = _ray_segment_hits(origin, dirs, segs)
    for ob in obstacles:
        if ob.shape == "disc":
            ox, oy, _ = ob.pose()
            ranges = np.minimum(ranges, _ray_disc_hits(origin, dirs, np.array([ox, oy]), ob.size[0]))
    ranges = np.clip(ranges, MIN_RANGE, cfg.max_range)
    return Scan(ranges=ranges, timestamp=timestamp, max_range=cfg.max_range)


# ----------------------------------------------------------------------
# Episode placement
# ----------------------------------------------------------------------

def reset_episode(world_map: WorldMap, rng: np.random.Generator, radius: float = 0.2,
                  goal_tolerance: float = 0.3, min_separation: float = 1.0,
                  obstacles: Sequence[MovingObstacle] = (),
                  max_tries: int = 10_000) -> tuple[RobotState, GoalSpec]:
    """Sample a collision-free start pose and goal at least ``min_separation`` apart."""

    def free(x: float, y: float) -> bool:
        return not check_collision(RobotState(x, y, 0.0, radius=radius), world_map, obstacles)

    def draw() -> tuple[float, float]:
        return (float(rng.uniform(radius, world_map.width - radius)),
                float(rng.uniform(radius, world_map.height - radius)))

    for _ in range(max_tries):
        sx, sy = draw()
        gx, gy = draw()
        theta = normalize_angle(float(rng.uniform(-math.pi, math.pi)))
        if math.hypot(gx - sx, gy - sy) < min_separation:
            continue
        if free(sx, sy) and free(gx, gy):
            return RobotState(sx, sy, theta, radius=radius), GoalSpec(gx, gy, goal_tolerance)
    raise MapTooDenseError(f"no free start/goal pair after {max_tries} tries")


# ----------------------------------------------------------------------
# Map and scenario files
# ----------------------------------------------------------------------

@dataclass
class Scenario:
    """A map plus optional fixed start, goal and moving obstacles."""

    world_map: WorldMap
    start: RobotState | None = None
    goal: GoalSpec | None = None
    moving: tuple[MovingObstacle, ...] = ()
    name: str = "scenario"
    meta: dict = field(default_factory=dict)


def _floats(tokens: Iterable[str], line: int, what: str) -> list[float]:
    out = []
    for tok in tokens:
        try:
            out.append(float(tok))
        except ValueError:
            raise MapFormatError(f"expected a number, got '{tok}'", line, what) from None
    return out


def _parse_moving(tokens: list[str], lineno: int) -> MovingObstacle:
    if len(tokens) < 4:
        raise MapFormatError("expected: moving shape speed loop x1 y1 x2 y2 ...", lineno, "moving")
    shape_tok, speed_tok, loop_tok, *coords = tokens
    kind, *dims = shape_tok.split(":")
    size = tuple(_floats(dims, lineno, "moving.shape"))
    speed = _floats([speed_tok], lineno, "moving.speed")[0]
    if loop_tok.lower() in ("1", "true", "yes", "loop"):
        loop = True
    elif loop_tok.lower() in ("0", "false", "no", "stop"):
        loop = False
    else:
        raise MapFormatError(f"loop flag must be 0/1, got '{loop_tok}'", lineno, "moving.loop")
    xy = _floats(coords, lineno, "moving.path")
    if len(xy) % 2:
        raise MapFormatError("odd number of path coordinates", lineno, "moving.path")
    path = tuple((xy[i], xy[i + 1]) for i in range(0, len(xy), 2))
    try:
        return MovingObstacle(kind, size, path, speed, loop)
    except MapValidationError as exc:
        raise MapValidationError(f"line {lineno}: {exc}") from None


def parse_world_text(text: str, allow_scenario: bool = True, name: str = "scenario") -> Scenario:
    """Parse the line-oriented map/scenario format.

    Map lines: ``bounds w h``, ``resolution r``, ``rect cx cy w h theta``,
    ``poly x1 y1 x2 y2 ...``. Scenario lines: ``start x y [theta]``,
    ``goal x y [tolerance]``, ``moving shape speed loop x1 y1 ...`` where
    shape is ``disc:R`` or ``rect:W:L``. ``#`` starts a comment.
    """
    bounds = None
    resolution = 0.05
    polys: list[np.ndarray] = []
    start = goal = None
    moving: list[MovingObstacle] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        key = key.lower()
        if key == "bounds":
            vals = _floats(rest, lineno, "bounds")
            if len(vals) != 2:
                raise MapFormatError("expected: bounds w h", lineno, "bounds")
            bounds = vals
        elif key == "resolution":
            vals = _floats(rest, lineno, "resolution")
            if len(vals) != 1:
                raise MapFormatError("expected: resolution r", lineno, "resolution")
            resolution = vals[0]
        elif key == "rect":
            vals = _floats(rest, lineno, "rect")
            if len(vals) != 5:
                raise MapFormatError("expected: rect cx cy w h theta", lineno, "rect")
            if vals[2] <= 0 or vals[3] <= 0:
                raise MapValidationError(f"line {lineno}: rect sides must be positive")
            polys.append(rect_polygon(*vals))
        elif key == "poly":
            vals = _floats(rest, lineno, "poly")
            if len(vals) % 2:
                raise MapFormatError("odd number of polygon coordinates", lineno, "poly")
            if len(vals) < 6:
                raise MapValidationError(f"line {lineno}: polygon needs at least 3 vertices")
            polys.append(np.array(vals, dtype=float).reshape(-1, 2))
        elif key in ("start", "goal", "moving"):
            if not allow_scenario:
                raise MapFormatError(f"'{key}' lines belong in scenario files", lineno, key)
            if key == "start":
                vals = _floats(rest, lineno, "start")
                if len(vals) not in (2, 3):
                    raise MapFormatError("expected: start x y [theta]", lineno, "start")
                start = RobotState(vals[0], vals[1], normalize_angle(vals[2] if len(vals) == 3 else 0.0))
            elif key == "goal":
                vals = _floats(rest, lineno, "goal")
                if len(vals) not in (2, 3):
                    raise MapFormatError("expected: goal x y [tolerance]", lineno, "goal")
                goal = GoalSpec(*vals)
            else:
                moving.append(_parse_moving(rest, lineno))
        else:
            raise MapFormatError(f"unknown keyword '{key}'", lineno, key)
    if bounds is None:
        raise MapFormatError("missing 'bounds' line", None, "bounds")
    wmap = WorldMap(bounds[0], bounds[1], tuple(polys), resolution)
    if goal is not None:
        g = np.array([goal.x, goal.y])
        if not (0 <= goal.x <= wmap.width and 0 <= goal.y <= wmap.height):
            raise MapValidationError("goal outside map bounds")
        if any(point_in_polygon(g, p) for p in wmap.obstacles):
            raise MapValidationError("goal inside a static obstacle")
    return Scenario(wmap, start, goal, tuple(moving), name=name)


def load_map(path: str | Path) -> WorldMap:
    """Read a map file (``bounds``/``rect``/``poly`` lines only)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"map file not found: {path}")
    return parse_world_text(path.read_text(), allow_scenario=False).world_map


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    return parse_world_text(path.read_text(), allow_scenario=True, name=path.stem)


def format_world_text(scn: Scenario) -> str:
    """Serialize a scenario back to the text format (polygons as ``poly``)."""
    m = scn.world_map
    lines = [f"bounds {m.width!r} {m.height!r}", f"resolution {m.resolution!r}"]
    for poly in m.obstacles:
        lines.append("poly " + " ".join(repr(float(v)) for v in poly.ravel()))
    if scn.start is not None:
        s = scn.start
        lines.append(f"start {s.x!r} {s.y!r} {s.theta!r}")
    if scn.goal is not None:
        g = scn.goal
        lines.append(f"goal {g.x!r} {g.y!r} {g.tolerance!r}")
    for ob in scn.moving:
        shape = ob.shape + "".join(f":{v!r}" for v in ob.size)
        coords = " ".join(f"{x!r} {y!r}" for x, y in ob.path)
        lines.append(f"moving {shape} {ob.speed!r} {int(ob.loop)} {coords}")
    return "\n".join(lines) + "\n"


def empty_room(width: float = 8.0, height: float = 8.0) -> WorldMap:
    return WorldMap(width, height, ())
