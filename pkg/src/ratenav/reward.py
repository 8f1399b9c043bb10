"""Per-step reward terms and the success-rate driven curriculum."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

REACHED = "reached"
COLLIDED = "collided"
TIMEOUT = "timeout"
RUNNING = "running"


@dataclass(frozen=True)
class RewardParams:
    r_reach: float = 20.0
    r_crash: float = -20.0
    progress_scale: float = 10.0
    k1: float = 2.0
    k2: float = 1.9
    speed_beta: float = 0.5
    speed_gate_c: float = 1.5
    env_terms: bool = True  # False gives the distance-only baseline

    def __post_init__(self):
        if not self.r_reach > 0 > self.r_crash:
            raise ValueError("need r_reach > 0 > r_crash")
        if not self.k1 > self.k2 > 0:
            raise ValueError("need k1 > k2 > 0")
        if self.speed_beta < 0:
            raise ValueError("speed_beta must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    r_nav: float
    r_env: float
    r_speed: float
    r_all: float
    v_c: float
    cause: str = RUNNING

    @property
    def terminal(self) -> bool:
        return self.cause in (REACHED, COLLIDED)


def nav_reward(d_t: float, d_next: float, cause: str, params: RewardParams = RewardParams()) -> float:
    if cause == REACHED:
        return params.r_reach
    if cause == COLLIDED:
        return params.r_crash
    return params.progress_scale * (d_t - d_next)


def env_reward(v_c: float, c: float, params: RewardParams = RewardParams()) -> float:
    """Change-rate reward, mirror-symmetric about ``v_c = 1``.

    Positive only while ``v_c`` stays close to 1; the curriculum factor ``c``
    scales both the bonus and the penalty.
    """
    k1, k2 = params.k1, params.k2
    if v_c > 1.0:
        return c * (k1 / v_c - k2)
    return c * (k1 / (k1 - v_c) - k2)


def speed_reward(v: float, c: float, params: RewardParams = RewardParams()) -> float:
    return params.speed_beta * v if c == params.speed_gate_c else 0.0


def combine(r_nav: float, r_env: float, r_speed: float, v_c: float = 1.0, cause: str = RUNNING) -> RewardBreakdown:
    return RewardBreakdown(r_nav, r_env, r_speed, r_nav + r_env + r_speed, v_c, cause)


def step_reward(d_t: float, d_next: float, v_c: float, v: float, c: float, cause: str,
                params: RewardParams = RewardParams()) -> RewardBreakdown:
    """All three terms for one transition. The baseline zeroes the last two."""
    r_nav = nav_reward(d_t, d_next, cause, params)
    if params.env_terms:
        r_env = env_reward(v_c, c, params)
        r_speed = speed_reward(v, c, params)
    else:
        r_env = r_speed = 0.0
    return combine(r_nav, r_env, r_speed, v_c, cause)


# ----------------------------------------------------------------------
# Curriculum
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchEvent:
    """Emitted when the learning factor steps up; ``old_c`` tags the checkpoint."""

    old_c: float
    new_c: float
    episode: int
    rho: float


@dataclass(frozen=True)
class CurriculumState:
    c: float = 1.5
    window: tuple[bool, ...] = ()
    window_size: int = 100
    threshold: float = 0.9
    step: float = 0.5
    c_max: float = 4.0
    episodes: int = 0
    switches: tuple[SwitchEvent, ...] = ()

    @property
    def rho(self) -> float:
        return sum(self.window) / len(self.window) if self.window else 0.0

    @property
    def window_full(self) -> bool:
        return len(self.window) >= self.window_size


def record_episode(cur: CurriculumState, success: bool) -> tuple[CurriculumState, SwitchEvent | None]:
    """Push one episode outcome and step ``c`` when the full window clears the threshold.

    A switch clears the window. ``c`` never exceeds ``c_max``.
    """
    window = (cur.window + (bool(success),))[-cur.window_size:]
    nxt = replace(cur, window=window, episodes=cur.episodes + 1)
    can_grow = cur.c + cur.step <= cur.c_max + 1e-12
    if nxt.window_full and nxt.rho >= cur.threshold and can_grow:
        event = SwitchEvent(cur.c, cur.c + cur.step, nxt.episodes, nxt.rho)
        nxt = replace(nxt, c=event.new_c, window=(), switches=cur.switches + (event,))
        return nxt, event
    return nxt, None


@dataclass(frozen=True)
class CheckpointRecord:
    ident: str
    step: int
    kind: str  # "switch", "periodic", "initial" or "final"
    c: float
    rho: float = 0.0


def select_final_policy(cur: CurriculumState, checkpoints: Sequence[CheckpointRecord]) -> str:
    """Checkpoint taken at the most recent curriculum switch.

    Without any switch, fall back to the checkpoint with the best rolling
    success rate and warn.
    """
    switched = [ck for ck in checkpoints if ck.kind == "switch"]
    if switched:
        return max(switched, key=lambda ck: ck.step).ident
    if not checkpoints:
        raise ValueError("no checkpoints to choose from")
    warnings.warn("no curriculum switch occurred; using best success-rate checkpoint", RuntimeWarning)
    return max(checkpoints, key=lambda ck: (ck.rho, ck.step)).ident
