"""Episodic navigation environment: world stepping, scan processing and
reward assembly for one robot."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import reward as rw
from .sac import scale_action
from .sensing import ChangeRateParams, ObservationLayout, build_observation, change_rate, min_pool
from .world import (GoalSpec, LidarConfig, MovingObstacle, RobotState, Scan, WorldMap,
                    advance_obstacles, check_collision, raycast_scan, relative_goal,
                    reset_episode, step_kinematics)


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.2
    t_max: int = 200
    radius: float = 0.2
    v_max: float = 0.5
    w_max: float = math.pi / 2
    goal_tolerance: float = 0.3
    min_separation: float = 1.0
    pool_window: int = 36


@dataclass
class StepResult:
    obs: np.ndarray
    reward: rw.RewardBreakdown
    terminal: bool     # reached or collided; stops bootstrapping
    truncated: bool    # ran out of steps
    scan: Scan

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class NavEnv:
    """One robot in a :class:`WorldMap`, stepped at a fixed control period.

    ``reset`` either samples start/goal from ``rng`` or takes them fixed.
    ``step`` consumes a normalized action in [-1, 1]^2 and the current
    curriculum factor ``c`` and returns the transition with its reward
    breakdown. ``obs_diag`` overrides the map diagonal used to normalize
    the goal distance.
    """

    def __init__(self, world_map: WorldMap, cfg: EnvConfig = EnvConfig(), lidar: LidarConfig = LidarConfig(),
                 rate_params: ChangeRateParams | None = None, reward_params: rw.RewardParams = rw.RewardParams(),
                 moving: Sequence[MovingObstacle] = (), obs_diag: float | None = None):
        self.map = world_map
        self.cfg = cfg
        self.lidar = lidar
        self.rate_params = rate_params or ChangeRateParams(n1=0, n2=lidar.beam_count - 1)
        self.reward_params = reward_params
        self.initial_moving = tuple(moving)
        if lidar.beam_count % cfg.pool_window:
            raise ValueError(f"beam count {lidar.beam_count} not divisible by pool window {cfg.pool_window}")
        # obs_diag pins the goal-distance scale, e.g. to the training map's
        self.layout = ObservationLayout(lidar.beam_count // cfg.pool_window,
                                        obs_diag or world_map.diagonal, cfg.v_max, cfg.w_max)
        self._segments = world_map.static_segments()
        self.state: RobotState | None = None
        self.goal: GoalSpec | None = None
        self.moving: list[MovingObstacle] = list(self.initial_moving)
        self.scan: Scan | None = None
        self.t = 0

    def _scan(self) -> Scan:
        return raycast_scan(self.state, self.map, self.moving, self.lidar, self.t, self._segments)

    def observe(self) -> np.ndarray:
        pooled = min_pool(self.scan, self.cfg.pool_window)
        return build_observation(pooled, relative_goal(self.state, self.goal),
                                 (self.state.v, self.state.omega), self.layout)

    def reset(self, rng: np.random.Generator | None = None, start: RobotState | None = None,
              goal: GoalSpec | None = None) -> np.ndarray:
        self.moving = list(self.initial_moving)
        if start is None or goal is None:
            s, g = reset_episode(self.map, rng, self.cfg.radius, self.cfg.goal_tolerance,
                                 self.cfg.min_separation, self.moving)
            start = start or s
            goal = goal or g
        self.state = RobotState(start.x, start.y, start.theta, 0.0, 0.0, self.cfg.radius)
        self.goal = goal
        self.t = 0
        self.scan = self._scan()
        return self.observe()

    def goal_distance(self) -> float:
        return relative_goal(self.state, self.goal)[0]

    def at_goal(self) -> bool:
        return self.goal_distance() < self.goal.tolerance

    def collided(self) -> bool:
        return check_collision(self.state, self.map, self.moving)

    def step(self, action: np.ndarray, c: float) -> StepResult:
        v, w = scale_action(action, self.cfg.v_max, self.cfg.w_max)
        d_prev = self.goal_distance()
        prev_scan = self.scan
        self.state = step_kinematics(self.state, v, w, self.cfg.dt)
        if self.moving:
            self.moving = advance_obstacles(self.moving, self.cfg.dt)
        self.t += 1
        self.scan = self._scan()
        d_next = self.goal_distance()
        if self.collided():
            cause = rw.COLLIDED
        elif d_next < self.goal.tolerance:
            cause = rw.REACHED
        elif self.t >= self.cfg.t_max:
            cause = rw.TIMEOUT
        else:
            cause = rw.RUNNING
        v_c = change_rate(prev_scan, self.scan, self.rate_params)
        breakdown = rw.step_reward(d_prev, d_next, v_c, v, c, cause, self.reward_params)
        return StepResult(self.observe(), breakdown, cause in (rw.REACHED, rw.COLLIDED),
                          cause == rw.TIMEOUT, self.scan)
