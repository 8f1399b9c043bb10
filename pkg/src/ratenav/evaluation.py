"""Scenario rollouts, BARN-style scoring, suite aggregation, paired
change-rate comparisons and procedural cluttered maps.

Scores follow the usual local-planner benchmark rule: a successful episode
earns ``OT / clip(AT, 2 OT, 8 OT)`` where ``OT`` is the optimal traversal
time (shortest inflated path over maximum speed) and ``AT`` the time the
robot actually took; failures earn zero.
"""
from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import reward as rw
from .config import ConfigError, RunConfig
from .env import NavEnv
from .nn import MlpSpec, ParameterStore, load_checkpoint
from .sac import SacHyper, sample_action
from .world import (GoalSpec, RobotState, Scenario, WorldMap, clearance, empty_room, point_segment_distance,
                    rect_polygon)

log = logging.getLogger(__name__)

SUCCESS, COLLISION, TIMEOUT = "success", "collision", "timeout"
OUTCOMES = (SUCCESS, COLLISION, TIMEOUT)
_OUTCOME_OF = {rw.REACHED: SUCCESS, rw.COLLIDED: COLLISION, rw.TIMEOUT: TIMEOUT}

TRACE_FIELDS = ["t", "x", "y", "theta", "v", "omega", "v_c", "r_nav", "r_env", "r_speed",
                "r_all", "min_range"]
SCORE_FIELDS = ["scenario", "outcome", "AT", "OT", "score"]


# extra start/goal clearance so the endpoints never pinch the measured passage
ENDPOINT_MARGIN = 0.05


class ScenarioInvalidError(ValueError):
    """No collision-free path between start and goal."""


class GeneratorError(RuntimeError):
    """The map generator could not produce a feasible map."""


class CheckpointMismatchError(ConfigError):
    """Checkpoint was trained for a different observation or network layout."""


# ----------------------------------------------------------------------
# Policies
# ----------------------------------------------------------------------

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConstantPolicy:
    """Always emits the same normalized action."""

    action: tuple[float, float] = (1.0, 0.0)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return np.array(self.action, dtype=float)


def stationary_policy() -> ConstantPolicy:
    """Zero linear and angular velocity."""
    return ConstantPolicy((-1.0, 0.0))


@dataclass
class CheckpointPolicy:
    """Deterministic head ``tanh(mu)`` of a saved policy network."""

    spec: MlpSpec
    params: ParameterStore
    hyper: SacHyper
    header: dict
    path: str = ""

    @classmethod
    def load(cls, path: str | Path, expected_hash: str | None = None) -> "CheckpointPolicy":
        stores, header = load_checkpoint(path)
        if "policy" not in stores or "policy_spec" not in header:
            raise ConfigError(f"{path}: checkpoint has no policy network")
        if expected_hash is not None and header.get("spec_hash") != expected_hash:
            raise CheckpointMismatchError(
                f"{path}: checkpoint layout {header.get('spec_hash')} does not match the configured "
                f"observation layout {expected_hash}; check lidar beams, pool window and network sizes")
        ps = dict(header["policy_spec"])
        ps["hidden"] = tuple(ps["hidden"])
        lo, hi = header.get("log_std", (-20.0, 2.0))
        return cls(MlpSpec(**ps), stores["policy"], SacHyper(log_std_min=lo, log_std_max=hi),
                   header, str(path))

    @property
    def reward_mode(self) -> str:
        return self.header.get("reward_mode", "nsuo")

    @property
    def obs_diag(self) -> float | None:
        return self.header.get("obs_diag")

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        a, _, _ = sample_action(self.spec, self.params, obs, "deterministic", None, self.hyper)
        return a


# ----------------------------------------------------------------------
# Episodes
# ----------------------------------------------------------------------

@dataclass
class EpisodeLog:
    scenario: str
    dt: float
    start: tuple[float, float, float]
    goal: tuple[float, float]
    rows: list[dict]
    outcome: str

    @property
    def steps(self) -> int:
        return len(self.rows)

    @property
    def at(self) -> float:
        return self.steps * self.dt

    @property
    def path_length(self) -> float:
        if not self.rows:
            return 0.0
        xy = np.array([self.start[:2]] + [(r["x"], r["y"]) for r in self.rows])
        return float(np.hypot(*np.diff(xy, axis=0).T).sum())

    @property
    def vc(self) -> np.ndarray:
        return np.array([r["v_c"] for r in self.rows])

    def vc_absdev(self) -> float:
        """Mean ``|v_c - 1|`` over the traversal (zero for an empty log)."""
        vc = self.vc
        return float(np.abs(vc - 1.0).mean()) if len(vc) else 0.0


def run_episode(policy: Policy, env: NavEnv, start: RobotState | None = None, goal: GoalSpec | None = None,
                seed: int = 0, c: float = 1.5, name: str = "episode") -> EpisodeLog:
    """Roll ``policy`` out until success, collision or the env's step limit.

    Missing start or goal are drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    env.reset(rng, start, goal)
    obs = env.observe()
    s0 = env.state
    head = (s0.x, s0.y, s0.theta)
    goal_xy = (env.goal.x, env.goal.y)
    if env.at_goal():
        return EpisodeLog(name, env.cfg.dt, head, goal_xy, [], SUCCESS)
    rows: list[dict] = []
    while True:
        res = env.step(np.asarray(policy(obs), dtype=float), c)
        s = env.state
        r = res.reward
        rows.append({"t": env.t, "x": s.x, "y": s.y, "theta": s.theta, "v": s.v, "omega": s.omega,
                     "v_c": r.v_c, "r_nav": r.r_nav, "r_env": r.r_env, "r_speed": r.r_speed,
                     "r_all": r.r_all, "min_range": float(res.scan.ranges.min())})
        obs = res.obs
        if res.done:
            return EpisodeLog(name, env.cfg.dt, head, goal_xy, rows, _OUTCOME_OF[r.cause])


# ----------------------------------------------------------------------
# Shortest paths on an inflated grid
# ----------------------------------------------------------------------

_NEIGHBORS = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]


@dataclass(frozen=True)
class ClearanceGrid:
    """Clearance to the nearest static surface at every cell center."""

    cell: float
    values: np.ndarray  # (nx, ny)

    @classmethod
    def build(cls, world_map: WorldMap, cell: float = 0.05) -> "ClearanceGrid":
        nx = max(1, int(round(world_map.width / cell)))
        ny = max(1, int(round(world_map.height / cell)))
        xs = (np.arange(nx) + 0.5) * cell
        ys = (np.arange(ny) + 0.5) * cell
        pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        return cls(cell, clearance(pts, world_map))

    def index(self, x: float, y: float) -> tuple[int, int]:
        nx, ny = self.values.shape
        return (min(max(int(x / self.cell), 0), nx - 1), min(max(int(y / self.cell), 0), ny - 1))

    def center(self, ij: tuple[int, int]) -> tuple[float, float]:
        return ((ij[0] + 0.5) * self.cell, (ij[1] + 0.5) * self.cell)


def _astar(free: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]] | None:
    """8-connected A* with the octile heuristic; diagonals may not cut corners."""
    nx, ny = free.shape
    gx, gy = goal

    def h(i: int, j: int) -> float:
        dx, dy = abs(i - gx), abs(j - gy)
        return max(dx, dy) + (math.sqrt(2) - 1) * min(dx, dy)

    best = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    heap = [(h(*start), 0.0, start)]
    closed = set()
    while heap:
        _, g, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while node in parent:
                node = parent[node]
                path.append(node)
            return path[::-1]
        closed.add(node)
        i, j = node
        for di, dj, cost in _NEIGHBORS:
            a, b = i + di, j + dj
            if not (0 <= a < nx and 0 <= b < ny) or not free[a, b]:
                continue
            if di and dj and not (free[i + di, j] and free[i, j + dj]):
                continue
            ng = g + cost
            if ng < best.get((a, b), math.inf):
                best[(a, b)] = ng
                parent[(a, b)] = node
                heapq.heappush(heap, (ng + h(a, b), ng, (a, b)))
    return None


def segment_distance(p: Sequence[float], q: Sequence[float], segs: np.ndarray) -> np.ndarray:
    """Exact distance from segment ``pq`` to each segment in ``segs`` (M, 2, 2)."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    a, b = segs[:, 0], segs[:, 1]

    def cross(o, u, v):
        return (u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1]) - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0])

    d1, d2 = cross(a, b, p), cross(a, b, q)
    d3, d4 = cross(p, q, a), cross(p, q, b)
    crossing = (d1 * d2 < 0) & (d3 * d4 < 0)
    ends = np.minimum(point_segment_distance(np.stack([p, q]), segs).min(axis=0),
                      point_segment_distance(np.stack([a, b], axis=1), np.array([[p, q]]))[..., 0].min(axis=1))
    return np.where(crossing, 0.0, ends)


def segment_clear(world_map: WorldMap, p: Sequence[float], q: Sequence[float], radius: float,
                  check_start: bool = True) -> bool:
    """True if a disc of ``radius`` can slide from ``p`` to ``q`` without touching anything.

    Pass ``check_start=False`` when ``p`` is already known to be clear.
    """
    if check_start and clearance(np.asarray(p, dtype=float), world_map) < radius:
        return False
    return bool(segment_distance(p, q, world_map.static_segments()).min() >= radius)


def shortest_path(world_map: WorldMap, start: Sequence[float], goal: Sequence[float], radius: float = 0.2,
                  cell: float = 0.05, grid: ClearanceGrid | None = None) -> np.ndarray:
    """Waypoints of a short collision-free path for a disc robot.

    Grid A* over cells whose clearance is at least ``radius``, then greedy
    line-of-sight shortcutting and vertex sliding on the continuous map.
    """
    start = (float(start[0]), float(start[1]))
    goal = (float(goal[0]), float(goal[1]))
    ends = clearance(np.array([start, goal]), world_map)
    if ends[0] < radius or ends[1] < radius:
        raise ScenarioInvalidError("start or goal is in collision")
    if segment_clear(world_map, start, goal, radius):
        return np.array([start, goal])
    grid = grid or ClearanceGrid.build(world_map, cell)
    free = grid.values >= radius
    si, gi = grid.index(*start), grid.index(*goal)
    free[si] = free[gi] = True
    cells = _astar(free, si, gi)
    if cells is None:
        raise ScenarioInvalidError("no collision-free path between start and goal")
    pts = [start] + [grid.center(c) for c in cells[1:-1]] + [goal]
    pts = _tighten(world_map, _shortcut(world_map, pts, radius), radius, cell)
    # one vertex per bend circumscribes the inflated corner; subdividing lets the path follow the arc
    for _ in range(3):
        pts = _tighten(world_map, _subdivide(pts), radius, cell / 2, prune=False)
    return np.array(pts)


def _shortcut(world_map: WorldMap, pts: list, radius: float) -> list:
    """Greedy line-of-sight pruning: from each kept point jump to the farthest visible one."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and segment_clear(world_map, pts[i], pts[j + 1], radius, False):
            j += 1
        out.append(pts[j])
        i = j
    return out


_DIRS = [(math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)) for k in range(8)]


def _subdivide(pts: list) -> list:
    out = [pts[0]]
    for p, q in zip(pts[:-1], pts[1:]):
        out += [((p[0] + q[0]) / 2, (p[1] + q[1]) / 2), q]
    return out


def _tighten(world_map: WorldMap, pts: list, radius: float, step: float, min_step: float = 1e-3,
             max_moves: int = 5000, prune: bool = True) -> list:
    """Slide interior vertices while the path shrinks and stays clear.

    Grid vertices sit up to a cell away from the obstacles they wrap
    around; sliding them with a halving step pulls the path taut.
    """
    pts = [tuple(map(float, p)) for p in pts]
    moves = 0
    while step >= min_step and moves < max_moves:
        moved = False
        for i in range(1, len(pts) - 1):
            a, p, b = pts[i - 1], pts[i], pts[i + 1]
            cur = math.dist(a, p) + math.dist(p, b)
            for dx, dy in _DIRS:
                q = (p[0] + step * dx, p[1] + step * dy)
                if (math.dist(a, q) + math.dist(q, b) < cur - 1e-9 and segment_clear(world_map, a, q, radius, False)
                        and segment_clear(world_map, b, q, radius, False)):
                    pts[i] = q
                    moved = True
                    moves += 1
                    break
        if moved and prune:
            pts = _shortcut(world_map, pts, radius)
        elif not moved:
            step /= 2
    return pts


def path_length(points: np.ndarray) -> float:
    return float(np.hypot(*np.diff(np.asarray(points), axis=0).T).sum()) if len(points) > 1 else 0.0


def optimal_time(scenario: Scenario, v_max: float = 0.5, radius: float = 0.2, cell: float = 0.05) -> float:
    """Shortest inflated path length over ``v_max``, in seconds."""
    if scenario.start is None or scenario.goal is None:
        raise ScenarioInvalidError(f"scenario '{scenario.name}' has no start/goal")
    s, g = scenario.start, scenario.goal
    if (s.x, s.y) == (g.x, g.y):
        return 0.0
    return path_length(shortest_path(scenario.world_map, (s.x, s.y), (g.x, g.y), radius, cell)) / v_max


def narrowest_passage(world_map: WorldMap, start: Sequence[float], goal: Sequence[float],
                      cell: float = 0.05) -> float:
    """Width of the tightest gap the widest start-goal route has to squeeze through.

    Maximizes the minimum cell clearance over 8-connected routes (a
    bottleneck shortest path) and reports twice that clearance.
    """
    grid = ClearanceGrid.build(world_map, cell)
    vals = grid.values
    nx, ny = vals.shape
    si, gi = grid.index(*start), grid.index(*goal)
    best = np.full(vals.shape, -1.0)
    best[si] = vals[si]
    heap = [(-vals[si], si)]
    while heap:
        neg, node = heapq.heappop(heap)
        w = -neg
        if node == gi:
            return 2.0 * w
        if w < best[node]:
            continue
        i, j = node
        for di, dj, _ in _NEIGHBORS:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny:
                cand = min(w, vals[a, b])
                if cand > best[a, b]:
                    best[a, b] = cand
                    heapq.heappush(heap, (-cand, (a, b)))
    raise ScenarioInvalidError("goal unreachable")


# ----------------------------------------------------------------------
# Scoring
# ----------------------------------------------------------------------

def barn_score(outcome: str, at: float, ot: float) -> float:
    """``OT / clip(AT, 2 OT, 8 OT)`` on success, else 0. A zero ``OT`` scores 0.5."""
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome '{outcome}'")
    if outcome != SUCCESS:
        return 0.0
    if ot <= 0.0:
        return 0.5
    return ot / min(max(at, 2.0 * ot), 8.0 * ot)


@dataclass(frozen=True)
class ScoreRecord:
    scenario: str
    outcome: str
    at: float
    ot: float
    score: float


@dataclass
class ScoreReport:
    records: list[ScoreRecord]
    faults: list[tuple[str, str]] = field(default_factory=list)
    speed: float | None = None

    def _pct(self, outcome: str) -> float:
        n = len(self.records)
        return 100.0 * sum(r.outcome == outcome for r in self.records) / n if n else 0.0

    @property
    def metric(self) -> float:
        return float(np.mean([r.score for r in self.records])) if self.records else 0.0

    @property
    def sr(self) -> float:
        return self._pct(SUCCESS)

    @property
    def cr(self) -> float:
        return self._pct(COLLISION)

    @property
    def to(self) -> float:
        return self._pct(TIMEOUT)

    def summary_text(self, label: str = "") -> str:
        lines = []
        if label:
            lines.append(f"policy: {label}")
        if self.speed is not None:
            lines.append(f"speed: {self.speed:g} m/s")
        lines += [f"episodes: {len(self.records)}",
                  f"Metric: {self.metric:.4f}",
                  f"SR: {self.sr:.1f}%",
                  f"CR: {self.cr:.1f}%",
                  f"TO: {self.to:.1f}%",
                  f"faults: {len(self.faults)}"]
        lines += [f"  fault {name}: {msg}" for name, msg in self.faults]
        return "\n".join(lines) + "\n"


def score_records(rows: Iterable[tuple[str, str, float, float]]) -> ScoreReport:
    """Score ``(scenario, outcome, AT, OT)`` tuples."""
    return ScoreReport([ScoreRecord(n, o, at, ot, barn_score(o, at, ot)) for n, o, at, ot in rows])


def write_scores(report: ScoreReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_FIELDS)
        for r in report.records:
            w.writerow([r.scenario, r.outcome, repr(r.at), repr(r.ot), repr(r.score)])


def read_scores(path: str | Path) -> ScoreReport:
    """Re-score a ``scores.csv`` from its outcome, AT and OT columns."""
    with open(path, newline="") as fh:
        rows = [(r["scenario"], r["outcome"], float(r["AT"]), float(r["OT"])) for r in csv.DictReader(fh)]
    return score_records(rows)


def write_trace(ep: EpisodeLog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, TRACE_FIELDS)
        w.writeheader()
        for row in ep.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# ----------------------------------------------------------------------
# Plots
# ----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_trajectories(world_map: WorldMap, logs: dict[str, EpisodeLog], path: str | Path,
                      reference: np.ndarray | None = None) -> None:
    """Map outline, obstacles and each log's driven path as an SVG."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5 * world_map.height / world_map.width))
    ax.plot([0, world_map.width, world_map.width, 0, 0], [0, 0, world_map.height, world_map.height, 0], "k-")
    for poly in world_map.obstacles:
        ax.fill(poly[:, 0], poly[:, 1], color="0.6")
    if reference is not None:
        ax.plot(reference[:, 0], reference[:, 1], ":", color="0.3", label="shortest path")
    for label, ep in logs.items():
        xy = np.array([ep.start[:2]] + [(r["x"], r["y"]) for r in ep.rows])
        ax.plot(xy[:, 0], xy[:, 1], label=f"{label} ({ep.outcome})")
    if logs:
        first = next(iter(logs.values()))
        ax.plot(*first.start[:2], "go")
        ax.plot(*first.goal, "r*", markersize=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_vc(logs: dict[str, EpisodeLog], path: str | Path) -> None:
    """Change-rate trace of each log over time as an SVG."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3))
    for label, ep in logs.items():
        t = np.arange(1, ep.steps + 1) * ep.dt
        ax.plot(t, ep.vc, label=f"{label} (mean |v_c-1| {ep.vc_absdev():.3f})")
    ax.axhline(1.0, color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("v_c")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ----------------------------------------------------------------------
# Suites and comparisons
# ----------------------------------------------------------------------

def _eval_env(cfg: RunConfig, scenario: Scenario, speed: float, t_max: int, obs_diag: float | None) -> NavEnv:
    from .train import build_env
    return build_env(cfg, scenario.world_map, scenario.moving, v_max=speed, t_max=t_max, obs_diag=obs_diag)


def eval_steps(ot: float, cfg: RunConfig) -> int:
    """Step budget for one evaluation episode: ``timeout_factor * OT + timeout_margin`` seconds."""
    return max(1, int(math.ceil((cfg.eval.timeout_factor * ot + cfg.eval.timeout_margin) / cfg.world.dt)))


def evaluate_scenario(policy: Policy, scenario: Scenario, speed: float, cfg: RunConfig,
                      c: float = 1.5, obs_diag: float | None = None) -> tuple[EpisodeLog, float]:
    ot = optimal_time(scenario, speed, cfg.world.footprint_radius, cfg.eval.astar_cell)
    env = _eval_env(cfg, scenario, speed, eval_steps(ot, cfg), obs_diag)
    ep = run_episode(policy, env, scenario.start, scenario.goal, c=c, name=scenario.name)
    return ep, ot


def evaluate_suite(policy: Policy, scenarios: Sequence[Scenario], speeds: Sequence[float], cfg: RunConfig,
                   out_dir: str | Path | None = None, c: float = 1.5, obs_diag: float | None = None,
                   label: str = "", plots: bool = True) -> dict[float, ScoreReport]:
    """Run every scenario once per speed and aggregate.

    A scenario that raises is recorded as a fault and skipped. With
    ``out_dir`` each speed gets ``speed_<v>/`` holding ``scores.csv``,
    ``summary.txt``, one ``trace_<id>.csv`` per episode and SVG plots.
    """
    if not scenarios:
        raise ValueError("empty scenario set")
    reports = {}
    for speed in speeds:
        report = ScoreReport([], speed=speed)
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / f"speed_{speed:g}"
            sub.mkdir(parents=True, exist_ok=True)
        for scn in scenarios:
            try:
                ep, ot = evaluate_scenario(policy, scn, speed, cfg, c, obs_diag)
            except Exception as exc:  # keep the suite going
                log.warning("scenario %s failed at %g m/s: %s", scn.name, speed, exc)
                report.faults.append((scn.name, f"{type(exc).__name__}: {exc}"))
                continue
            report.records.append(ScoreRecord(scn.name, ep.outcome, ep.at, ot, barn_score(ep.outcome, ep.at, ot)))
            if sub is not None:
                write_trace(ep, sub / f"trace_{scn.name}.csv")
                if plots:
                    ref = shortest_path(scn.world_map, (scn.start.x, scn.start.y), (scn.goal.x, scn.goal.y),
                                        cfg.world.footprint_radius, cfg.eval.astar_cell)
                    plot_trajectories(scn.world_map, {label or "policy": ep}, sub / f"traj_{scn.name}.svg", ref)
                    plot_vc({label or "policy": ep}, sub / f"vc_{scn.name}.svg")
        if sub is not None:
            write_scores(report, sub / "scores.csv")
            (sub / "summary.txt").write_text(report.summary_text(label))
        reports[speed] = report
    return reports


@dataclass
class CornerComparison:
    log_a: EpisodeLog
    log_b: EpisodeLog

    @property
    def absdev_a(self) -> float:
        return self.log_a.vc_absdev()

    @property
    def absdev_b(self) -> float:
        return self.log_b.vc_absdev()

    @property
    def difference(self) -> float:
        """``absdev_a - absdev_b``; negative when A disturbs its scan less."""
        return self.absdev_a - self.absdev_b

    @property
    def partial(self) -> bool:
        return self.log_a.outcome != SUCCESS or self.log_b.outcome != SUCCESS

    def summary_text(self, label_a: str = "A", label_b: str = "B") -> str:
        lines = [f"{label_a}: outcome {self.log_a.outcome}, steps {self.log_a.steps}, "
                 f"mean |v_c-1| {self.absdev_a:.6f}",
                 f"{label_b}: outcome {self.log_b.outcome}, steps {self.log_b.steps}, "
                 f"mean |v_c-1| {self.absdev_b:.6f}",
                 f"difference ({label_a} - {label_b}): {self.difference:.6f}"]
        if self.partial:
            lines.append("partial: at least one policy did not reach the goal")
        return "\n".join(lines) + "\n"


def corner_comparison(policy_a: Policy, policy_b: Policy, scenario: Scenario, cfg: RunConfig,
                      speed: float | None = None, c: float = 1.5,
                      obs_diag: float | None = None) -> CornerComparison:
    """Drive both policies from the scenario's start to its goal and pair their change-rate traces."""
    speed = cfg.world.v_max if speed is None else speed
    ep_a, _ = evaluate_scenario(policy_a, scenario, speed, cfg, c, obs_diag)
    ep_b, _ = evaluate_scenario(policy_b, scenario, speed, cfg, c, obs_diag)
    out = CornerComparison(ep_a, ep_b)
    if out.partial:
        log.warning("corner comparison is partial: A %s, B %s", ep_a.outcome, ep_b.outcome)
    return out


def write_paired_trace(cmp: CornerComparison, path: str | Path) -> None:
    """Step-aligned ``v_c`` columns; the shorter episode is padded with blanks."""
    va, vb = cmp.log_a.vc, cmp.log_b.vc
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "vc_a", "vc_b"])
        for k in range(max(len(va), len(vb))):
            w.writerow([k + 1, repr(float(va[k])) if k < len(va) else "",
                        repr(float(vb[k])) if k < len(vb) else ""])


# ----------------------------------------------------------------------
# Procedural maps
# ----------------------------------------------------------------------

def _box_gap(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Distance between axis-aligned boxes given as ``(cx, cy, w, h)``."""
    dx = max(0.0, abs(a[0] - b[0]) - (a[2] + b[2]) / 2)
    dy = max(0.0, abs(a[1] - b[1]) - (a[3] + b[3]) / 2)
    return math.hypot(dx, dy)


def _draw_free_point(world_map: WorldMap, rng: np.random.Generator, x_lo: float, x_hi: float,
                     min_clear: float, tries: int = 2000) -> tuple[float, float] | None:
    for _ in range(tries):
        x = float(rng.uniform(x_lo, x_hi))
        y = float(rng.uniform(min_clear, world_map.height - min_clear))
        if clearance(np.array([x, y]), world_map) >= min_clear:
            return x, y
    return None


def generate_cluttered_maps(count: int, density: float, rng: np.random.Generator, clearance_m: float = 0.6,
                            width: float = 8.0, height: float = 8.0, radius: float = 0.2,
                            goal_tolerance: float = 0.3, size_range: tuple[float, float] = (0.3, 1.0),
                            wall_thickness: float = 0.1, max_retries: int = 50,
                            cell: float = 0.05) -> list[Scenario]:
    """Random rooms with a narrow passage of width ``clearance_m``.

    ``density`` is the fraction of the room covered by random boxes. Any
    nonzero density also adds a wall across the room with one gap of
    ``clearance_m``; start and goal lie on opposite sides, so every route
    passes the gap. Boxes keep at least ``clearance_m`` from each other,
    the walls and the gap, so the gap is the narrowest passage. Density
    zero gives empty rooms. Draws without a feasible path are redrawn.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 0.0 <= density < 0.6:
        raise ValueError("density must lie in [0, 0.6)")
    if clearance_m <= 2 * radius:
        raise GeneratorError(f"clearance {clearance_m} m leaves no room for a {radius} m robot")
    out = []
    for k in range(count):
        for attempt in range(max_retries):
            scn = _draw_map(k, density, rng, clearance_m, width, height, radius, goal_tolerance,
                            size_range, wall_thickness)
            if scn is None:
                continue
            try:
                optimal_time(scn, 1.0, radius, cell)
            except ScenarioInvalidError:
                continue
            out.append(scn)
            break
        else:
            raise GeneratorError(f"map {k}: no feasible layout after {max_retries} draws")
    return out


def _draw_map(k: int, density: float, rng: np.random.Generator, gap: float, width: float, height: float,
              radius: float, tol: float, size_range: tuple[float, float], thick: float) -> Scenario | None:
    name = f"gen_{k:03d}"
    meta = {"density": repr(density), "clearance": repr(gap)}
    if density == 0.0:
        world_map = empty_room(width, height)
        s = _draw_free_point(world_map, rng, radius, width - radius, radius)
        g = _draw_free_point(world_map, rng, radius, width - radius, radius)
        if s is None or g is None or math.dist(s, g) < 1.0:
            return None
        theta = float(rng.uniform(-math.pi, math.pi))
        return Scenario(world_map, RobotState(*s, theta, radius=radius), GoalSpec(*g, tol), (), name, meta)

    wx = float(rng.uniform(0.4, 0.6)) * width
    gy = float(rng.uniform(gap / 2 + 0.5, height - gap / 2 - 0.5))
    lo, hi = gy - gap / 2, gy + gap / 2
    boxes = [(wx, lo / 2, thick, lo), (wx, (hi + height) / 2, thick, height - hi)]
    fixed = len(boxes)
    target = density * width * height
    area = 0.0
    for _ in range(500):
        if area >= target:
            break
        w, h = (float(v) for v in rng.uniform(*size_range, size=2))
        cx = float(rng.uniform(w / 2, width - w / 2))
        cy = float(rng.uniform(h / 2, height - h / 2))
        box = (cx, cy, w, h)
        if (cx - w / 2 < gap or cx + w / 2 > width - gap or cy - h / 2 < gap or cy + h / 2 > height - gap):
            continue
        if any(_box_gap(box, b) < gap for b in boxes):
            continue
        boxes.append(box)
        area += w * h
    if len(boxes) == fixed and target > 0:
        return None
    world_map = WorldMap(width, height, tuple(rect_polygon(*b) for b in boxes))
    need = max(radius, gap / 2) + ENDPOINT_MARGIN
    s = _draw_free_point(world_map, rng, radius, wx - thick, need)
    g = _draw_free_point(world_map, rng, wx + thick, width - radius, need)
    if s is None or g is None:
        return None
    if rng.random() < 0.5:
        s, g = g, s
    theta = float(rng.uniform(-math.pi, math.pi))
    return Scenario(world_map, RobotState(*s, theta, radius=radius), GoalSpec(*g, tol), (), name, meta)
