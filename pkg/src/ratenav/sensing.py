"""Scan preprocessing: min-pooling, change rate, inverse perception and
observation assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import LidarConfig, Scan

IP_EPS = 0.01


class SensingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PooledScan:
    values: np.ndarray
    window: int


@dataclass(frozen=True)
class ChangeRateParams:
    c1: float = 1.0
    c2: float = 10.0
    n1: int = 0
    n2: int = 1079

    def __post_init__(self):
        if not 0 <= self.n1 <= self.n2:
            raise SensingConfigError(f"need 0 <= n1 <= n2, got [{self.n1}, {self.n2}]")
        if self.c2 <= 0:
            raise SensingConfigError("c2 must be positive")

    @classmethod
    def preset(cls, name: str, lidar: LidarConfig, c1: float = 1.0, c2: float = 10.0) -> "ChangeRateParams":
        """``full`` for every beam, ``front180`` for beams within 90 deg of the heading,
        or an explicit ``"n1,n2"`` pair."""
        name = name.strip().lower()
        if name == "full":
            n1, n2 = 0, lidar.beam_count - 1
        elif name == "front180":
            n1, n2 = lidar.index_range_for_sector(90.0)
        else:
            try:
                n1, n2 = (int(v) for v in name.split(","))
            except ValueError:
                raise SensingConfigError(f"unknown change-rate range '{name}'") from None
        if n2 >= lidar.beam_count:
            raise SensingConfigError(f"n2={n2} outside a {lidar.beam_count}-beam scan")
        return cls(c1, c2, n1, n2)


def min_pool(scan: Scan | np.ndarray, k: int) -> PooledScan:
    """Minimum over each window of ``k`` consecutive beams."""
    ranges = np.asarray(scan.ranges if isinstance(scan, Scan) else scan, dtype=float)
    if k <= 0 or len(ranges) % k:
        raise SensingConfigError(f"scan length {len(ranges)} not divisible by window {k}")
    return PooledScan(ranges.reshape(-1, k).min(axis=1), k)


def change_rate(prev: Scan | np.ndarray, curr: Scan | np.ndarray, params: ChangeRateParams) -> float:
    """Affine-scaled ratio of range sums between two consecutive scans.

    Equals ``c1`` exactly when the two scans are identical.
    """
    p = np.asarray(prev.ranges if isinstance(prev, Scan) else prev, dtype=float)
    c = np.asarray(curr.ranges if isinstance(curr, Scan) else curr, dtype=float)
    if p.shape != c.shape:
        raise SensingConfigError("scans differ in length")
    if params.n2 >= len(p):
        raise SensingConfigError(f"index range [{params.n1}, {params.n2}] exceeds scan length {len(p)}")
    sl = slice(params.n1, params.n2 + 1)
    den = np.abs(p[sl]).sum()
    assert den > 0, "degenerate scan: zero range sum"
    num = np.abs(c[sl]).sum()
    return (num / den - params.c1) * params.c2 + params.c1


@dataclass
class InversePerception:
    """Reciprocal transform ``1 / (d - beta)`` with per-slot offsets.

    The denominator is floored at ``eps``; every floored entry is counted in
    ``clamp_events``.
    """

    beta: np.ndarray
    eps: float = IP_EPS
    clamp_events: int = 0

    def __call__(self, pooled: PooledScan | np.ndarray) -> np.ndarray:
        return self.forward(pooled)[0]

    def forward(self, pooled: PooledScan | np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(p, dp/dbeta, dp/dd)``; derivatives vanish on clamped entries."""
        d = np.asarray(pooled.values if isinstance(pooled, PooledScan) else pooled, dtype=float)
        den = d - self.beta
        clamped = den < self.eps
        self.clamp_events += int(clamped.sum())
        den = np.where(clamped, self.eps, den)
        p = 1.0 / den
        g = np.where(clamped, 0.0, p * p)
        return p, g, -g


def inverse_perception(pooled: PooledScan | np.ndarray, beta: np.ndarray | float = 0.0,
                       eps: float = IP_EPS) -> np.ndarray:
    d = np.asarray(pooled.values if isinstance(pooled, PooledScan) else pooled, dtype=float)
    return InversePerception(np.broadcast_to(np.asarray(beta, dtype=float), d.shape), eps)(d)


@dataclass(frozen=True)
class ObservationLayout:
    """Slices and scales of the flat observation vector.

    Order: ``N`` pooled ranges, goal distance / map diagonal, goal bearing / pi,
    v / v_max, omega / omega_max. The pooled ranges stay in meters; each
    network applies its own inverse-perception front end to them.
    """

    n_scan: int = 30
    diag: float = 8.0 * math.sqrt(2.0)
    v_max: float = 0.5
    w_max: float = math.pi / 2

    @property
    def dim(self) -> int:
        return self.n_scan + 4

    @property
    def scan(self) -> slice:
        return slice(0, self.n_scan)

    def split(self, obs: np.ndarray) -> dict[str, np.ndarray]:
        n = self.n_scan
        return {
            "scan": obs[..., :n],
            "goal_distance": obs[..., n] * self.diag,
            "goal_bearing": obs[..., n + 1] * math.pi,
            "v": obs[..., n + 2] * self.v_max,
            "omega": obs[..., n + 3] * self.w_max,
        }


def build_observation(pooled: PooledScan | np.ndarray, goal: tuple[float, float],
                      vel: tuple[float, float], layout: ObservationLayout) -> np.ndarray:
    values = np.asarray(pooled.values if isinstance(pooled, PooledScan) else pooled, dtype=float)
    if values.shape != (layout.n_scan,):
        raise SensingConfigError(f"expected {layout.n_scan} scan values, got {values.shape}")
    d, phi = goal
    v, w = vel
    tail = np.array([d / layout.diag, phi / math.pi, v / layout.v_max, w / layout.w_max])
    obs = np.concatenate([values, tail])
    if not np.all(np.isfinite(obs)):
        raise SensingConfigError("observation contains non-finite entries")
    return obs
