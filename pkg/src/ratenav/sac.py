"""Soft actor-critic on top of :mod:`ratenav.nn`: squashed Gaussian policy,
twin Q critics with Polyak targets, uniform replay."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import Adam, MlpSpec, NumericFault, ParameterStore, backward, forward, init_params

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


@dataclass(frozen=True)
class SacHyper:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = False
    target_entropy: float = -2.0
    batch_size: int = 256
    buffer_size: int = 1_000_000
    lr: float = 3e-4
    warmup_steps: int = 2000
    updates_per_step: int = 1
    hidden: tuple[int, ...] = (64, 64, 64)
    policy_dropout: float = 0.1
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    dtype: str = "float64"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size <= 0 or self.buffer_size <= 0:
            raise ValueError("batch and buffer sizes must be positive")


# ----------------------------------------------------------------------
# Actions
# ----------------------------------------------------------------------

def scale_action(a: np.ndarray, v_max: float = 0.5, w_max: float = math.pi / 2) -> tuple[float, float]:
    """Map a normalized action in [-1, 1]^2 to (v, omega) with v in [0, v_max]."""
    a1 = min(max(float(a[0]), -1.0), 1.0)
    a2 = min(max(float(a[1]), -1.0), 1.0)
    return v_max * (a1 + 1.0) / 2.0, w_max * a2


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log density of ``tanh(u)`` where ``u ~ N(mu, exp(log_std)^2)``, summed over the last axis."""
    z = (u - mu) * np.exp(-log_std)
    per_dim = -0.5 * z * z - log_std - 0.5 * LOG_2PI - log1m_tanh_sq(u)
    return per_dim.sum(axis=-1)


def split_heads(out: np.ndarray, hyper: SacHyper) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, clamped log-std and the mask of unclamped log-std entries."""
    k = out.shape[-1] // 2
    mu, raw = out[..., :k], out[..., k:]
    inside = (raw > hyper.log_std_min) & (raw < hyper.log_std_max)
    return mu, np.clip(raw, hyper.log_std_min, hyper.log_std_max), inside


def sample_action(spec: MlpSpec, params: ParameterStore, obs: np.ndarray, mode: str,
                  rng: np.random.Generator | None, hyper: SacHyper = SacHyper()
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``(action, log_prob, pre_squash)`` from the policy in eval mode.

    ``mode="stochastic"`` samples ``tanh(mu + sigma * zeta)``;
    ``mode="deterministic"`` returns ``tanh(mu)`` with the density at the mode.
    """
    out, _ = forward(spec, params, obs, "eval")
    mu, log_std, _ = split_heads(out, hyper)
    if mode == "deterministic":
        u = mu
    elif mode == "stochastic":
        u = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    else:
        raise ValueError(f"unknown sampling mode '{mode}'")
    a = np.tanh(u)
    if not np.all(np.isfinite(a)):
        raise NumericFault("non-finite policy action")
    return a, squashed_log_prob(u, mu, log_std), u


# ----------------------------------------------------------------------
# Replay
# ----------------------------------------------------------------------

class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling.

    Storage grows by doubling up to ``capacity`` so small runs stay small.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 2):
        self.capacity = capacity
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.size = 0
        self.inserted = 0
        self._alloc(min(capacity, 4096))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "obs", None)
        new = {
            "obs": np.zeros((n, self.obs_dim)),
            "act": np.zeros((n, self.act_dim)),
            "pre": np.zeros((n, self.act_dim)),
            "rew": np.zeros(n),
            "obs2": np.zeros((n, self.obs_dim)),
            "done": np.zeros(n),
        }
        if old is not None:
            for k, arr in new.items():
                arr[:self.size] = getattr(self, k)[:self.size]
        for k, arr in new.items():
            setattr(self, k, arr)

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, pre, rew: float, obs2, done: bool) -> None:
        i = self.inserted % self.capacity
        if i >= len(self.rew):
            self._alloc(min(self.capacity, 2 * len(self.rew)))
        self.obs[i] = obs
        self.act[i] = act
        self.pre[i] = pre
        self.rew[i] = rew
        self.obs2[i] = obs2
        self.done[i] = float(done)
        self.inserted += 1
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n > self.size:
            raise ValueError(f"batch {n} larger than buffer contents {self.size}")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = self.sample_indices(n, rng)
        return {k: getattr(self, k)[idx] for k in ("obs", "act", "pre", "rew", "obs2", "done")}


# ----------------------------------------------------------------------
# Agent
# ----------------------------------------------------------------------

QFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def policy_objective(spec: MlpSpec, params: ParameterStore, obs: np.ndarray, zeta: np.ndarray,
                     alpha: float, q_fn: QFn, rng: np.random.Generator | None,
                     hyper: SacHyper) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Reparameterized policy loss ``mean(alpha * log_pi - Q)`` and its gradient.

    ``q_fn(obs, a)`` returns ``(Q, dQ/da)`` per sample. Returns the loss,
    parameter gradients and the per-sample log-probabilities.
    """
    out, tape = forward(spec, params, obs, "train", rng)
    mu, log_std, inside = split_heads(out, hyper)
    std = np.exp(log_std)
    u = mu + std * zeta
    a = np.tanh(u)
    logp = squashed_log_prob(u, mu, log_std)
    q, dq_da = q_fn(obs, a)
    n = obs.shape[0]
    loss = float(np.mean(alpha * logp - q))
    # log_pi depends on u only through the squash term once zeta is fixed
    dl_du = (alpha * 2.0 * a - dq_da * (1.0 - a * a)) / n
    dl_dmu = dl_du
    dl_dlogstd = (dl_du * std * zeta - alpha / n) * inside
    grads, _ = backward(tape, np.concatenate([dl_dmu, dl_dlogstd], axis=-1))
    return loss, grads, logp


class SacAgent:
    """Policy, twin critics, their targets, optimizers and the entropy weight.

    Every network has its own inverse-perception offsets over the first
    ``n_scan`` observation entries.
    """

    def __init__(self, obs_dim: int, n_scan: int, hyper: SacHyper, rng: np.random.Generator,
                 act_dim: int = 2, ip_eps: float = 0.01, beta_init: float = 0.0):
        self.hyper = hyper
        self.act_dim = act_dim
        self.policy_spec = MlpSpec(obs_dim, 2 * act_dim, hyper.hidden, hyper.policy_dropout, n_scan, ip_eps)
        self.critic_spec = MlpSpec(obs_dim + act_dim, 1, hyper.hidden, 0.0, n_scan, ip_eps)
        self.policy = init_params(self.policy_spec, rng, beta_init, hyper.dtype)
        self.q1 = init_params(self.critic_spec, rng, beta_init, hyper.dtype)
        self.q2 = init_params(self.critic_spec, rng, beta_init, hyper.dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = ParameterStore({"log_alpha": np.array([math.log(hyper.alpha)])})
        self.opt_policy = Adam(self.policy, hyper.lr)
        self.opt_q1 = Adam(self.q1, hyper.lr)
        self.opt_q2 = Adam(self.q2, hyper.lr)
        self.opt_alpha = Adam(self.log_alpha, hyper.lr)
        self.updates = 0
        self.ip_clamp_events = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"][0]))

    def stores(self) -> dict[str, ParameterStore]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target,
                "log_alpha": self.log_alpha}

    def act(self, obs: np.ndarray, rng: np.random.Generator | None, deterministic: bool = False):
        return sample_action(self.policy_spec, self.policy, obs,
                             "deterministic" if deterministic else "stochastic", rng, self.hyper)

    def _q_eval(self, store: ParameterStore, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        out, _ = forward(self.critic_spec, store, np.concatenate([obs, act], axis=-1), "eval")
        return out[..., 0]

    def critic_targets(self, batch: dict, rng: np.random.Generator) -> np.ndarray:
        h = self.hyper
        a2, logp2, _ = sample_action(self.policy_spec, self.policy, batch["obs2"], "stochastic", rng, h)
        q_next = np.minimum(self._q_eval(self.q1_target, batch["obs2"], a2),
                            self._q_eval(self.q2_target, batch["obs2"], a2))
        return batch["rew"] + h.gamma * (1.0 - batch["done"]) * (q_next - self.alpha * logp2)

    def critic_update(self, batch: dict, rng: np.random.Generator) -> tuple[float, float]:
        y = self.critic_targets(batch, rng)
        x = np.concatenate([batch["obs"], batch["act"]], axis=-1)
        losses = []
        pending = []
        for store in (self.q1, self.q2):
            q, tape = forward(self.critic_spec, store, x, "train")
            err = q[:, 0] - y
            losses.append(0.5 * float(np.mean(err * err)))
            self.ip_clamp_events += tape.clamp_events
            grads, _ = backward(tape, (err / len(y))[:, None])
            pending.append(grads)
        if not all(np.isfinite(losses)):
            log.warning("non-finite critic loss, update skipped")
            return tuple(losses)
        self.opt_q1.step(pending[0])
        self.opt_q2.step(pending[1])
        self.q1_target.polyak_from(self.q1, self.hyper.tau)
        self.q2_target.polyak_from(self.q2, self.hyper.tau)
        return losses[0], losses[1]

    def twin_q(self, obs: np.ndarray, act: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``min(Q1, Q2)`` and its gradient with respect to the action."""
        x = np.concatenate([obs, act], axis=-1)
        q1, t1 = forward(self.critic_spec, self.q1, x, "train")
        q2, t2 = forward(self.critic_spec, self.q2, x, "train")
        pick1 = (q1[:, 0] <= q2[:, 0])[:, None]
        _, g1 = backward(t1, pick1.astype(float), param_grads=False)
        _, g2 = backward(t2, (~pick1).astype(float), param_grads=False)
        grad_a = g1[:, -self.act_dim:] + g2[:, -self.act_dim:]
        return np.where(pick1[:, 0], q1[:, 0], q2[:, 0]), grad_a

    def policy_update(self, batch: dict, rng: np.random.Generator) -> float:
        h = self.hyper
        obs = batch["obs"]
        zeta = rng.standard_normal((obs.shape[0], self.act_dim))
        loss, grads, logp = policy_objective(self.policy_spec, self.policy, obs, zeta,
                                             self.alpha, self.twin_q, rng, h)
        if not np.isfinite(loss):
            log.warning("non-finite policy loss, update skipped")
            return loss
        self.opt_policy.step(grads)
        if h.auto_alpha:
            self.alpha_step(logp)
        return loss

    def alpha_step(self, logp: np.ndarray) -> None:
        """Dual step on ``log_alpha``; alpha grows when entropy is below target."""
        g = -float(np.mean(logp + self.hyper.target_entropy))
        self.opt_alpha.step({"log_alpha": np.array([g])})

    def update(self, batch: dict, rng: np.random.Generator) -> dict[str, float]:
        l1, l2 = self.critic_update(batch, rng)
        lp = self.policy_update(batch, rng)
        self.updates += 1
        return {"critic1_loss": l1, "critic2_loss": l2, "policy_loss": lp, "alpha": self.alpha}
