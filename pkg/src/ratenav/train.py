"""Training loop: SAC with change-rate rewards and the curriculum schedule.

A run directory holds ``config.resolved.cfg``, ``metrics.csv`` (one row
per episode), ``curriculum.csv``, ``checkpoints/`` and ``resume.pkl``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import pickle
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import reward as rw
from .config import RunConfig, format_config, substream
from .env import EnvConfig, NavEnv
from .nn import MlpSpec, save_checkpoint, spec_hash
from .sac import ReplayBuffer, SacAgent, SacHyper
from .sensing import ChangeRateParams
from .world import LidarConfig, WorldMap, empty_room, load_scenario

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

METRIC_FIELDS = [
    "step", "episode", "outcome", "length", "return", "r_nav", "r_env", "r_speed",
    "vc_mean", "vc_std", "vc_absdev", "rho", "c", "critic1_loss", "critic2_loss",
    "policy_loss", "alpha", "ip_clamps",
]


# ----------------------------------------------------------------------
# Construction from a RunConfig
# ----------------------------------------------------------------------

def resolve_world(cfg: RunConfig, base_dir: Path | None = None):
    """Map and moving obstacles named by ``world.map``.

    ``builtin:empty`` is an empty room of ``room_width x room_height``;
    ``builtin:<name>`` loads a packaged scenario; anything else is a path
    to a map or scenario file.
    """
    spec = cfg.world.map
    if spec == "builtin:empty":
        return empty_room(cfg.world.room_width, cfg.world.room_height), ()
    if spec.startswith("builtin:"):
        path = DATA_DIR / f"{spec.split(':', 1)[1]}.scn"
    else:
        path = Path(spec)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
    scn = load_scenario(path)
    return scn.world_map, scn.moving


def lidar_config(cfg: RunConfig) -> LidarConfig:
    L = cfg.lidar
    return LidarConfig(L.fov_deg, L.beam_count, L.max_range, (L.mount_x, L.mount_y, L.mount_theta))


def env_config(cfg: RunConfig, v_max: float | None = None, t_max: int | None = None) -> EnvConfig:
    w = cfg.world
    return EnvConfig(w.dt, w.t_max if t_max is None else t_max, w.footprint_radius,
                     w.v_max if v_max is None else v_max, w.w_max, w.goal_tolerance,
                     w.min_separation, cfg.sensing.pool_window)


def reward_params(cfg: RunConfig) -> rw.RewardParams:
    r = cfg.reward
    return rw.RewardParams(r.r_reach, r.r_crash, r.progress_scale, r.k1, r.k2, r.speed_beta,
                           cfg.curriculum.c_init, env_terms=(r.mode == "nsuo"))


def rate_params(cfg: RunConfig) -> ChangeRateParams:
    s = cfg.sensing
    return ChangeRateParams.preset(s.rate_range, lidar_config(cfg), s.rate_c1, s.rate_c2)


def build_env(cfg: RunConfig, world_map: WorldMap | None = None, moving=(), v_max: float | None = None,
              t_max: int | None = None, base_dir: Path | None = None,
              obs_diag: float | None = None) -> NavEnv:
    if world_map is None:
        world_map, moving = resolve_world(cfg, base_dir)
    return NavEnv(world_map, env_config(cfg, v_max, t_max), lidar_config(cfg), rate_params(cfg),
                  reward_params(cfg), moving, obs_diag)


def sac_hyper(cfg: RunConfig) -> SacHyper:
    s = cfg.sac
    return SacHyper(s.gamma, s.tau, s.alpha, s.auto_alpha, s.target_entropy, s.batch_size,
                    s.buffer_size, s.lr, s.warmup_steps, s.updates_per_step,
                    (s.hidden_width,) * s.hidden_layers, s.policy_dropout, s.log_std_min, s.log_std_max,
                    s.dtype)


def build_agent(cfg: RunConfig, obs_dim: int, n_scan: int) -> SacAgent:
    return SacAgent(obs_dim, n_scan, sac_hyper(cfg), substream(cfg.run.seed, "policy-init"),
                    ip_eps=cfg.sensing.ip_eps, beta_init=cfg.sensing.ip_beta_init)


def network_specs(cfg: RunConfig) -> tuple[MlpSpec, MlpSpec]:
    """Policy and critic layouts implied by the lidar, pooling and network keys."""
    n_scan = cfg.lidar.beam_count // cfg.sensing.pool_window
    obs_dim = n_scan + 4
    h = sac_hyper(cfg)
    return (MlpSpec(obs_dim, 4, h.hidden, h.policy_dropout, n_scan, cfg.sensing.ip_eps),
            MlpSpec(obs_dim + 2, 1, h.hidden, 0.0, n_scan, cfg.sensing.ip_eps))


def layout_hash(cfg: RunConfig) -> str:
    """Identifies the observation and network layout a checkpoint was made for."""
    policy, critic = network_specs(cfg)
    return spec_hash({"policy": policy, "critic": critic, "pool_window": cfg.sensing.pool_window,
                      "lidar": lidar_config(cfg)})


# ----------------------------------------------------------------------
# Trainer
# ----------------------------------------------------------------------

class Trainer:
    """Owns the environment, agent, replay buffer, curriculum and logs of one run."""

    def __init__(self, cfg: RunConfig, run_dir: str | Path, base_dir: Path | None = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.env = build_env(cfg, base_dir=base_dir)
        self.agent = build_agent(cfg, self.env.layout.dim, self.env.layout.n_scan)
        self.buffer = ReplayBuffer(cfg.sac.buffer_size, self.env.layout.dim)
        cur = cfg.curriculum
        self.curriculum = rw.CurriculumState(c=cur.c_init, window_size=cur.window, threshold=cur.threshold,
                                             step=cur.c_step, c_max=cur.c_max)
        seed = cfg.run.seed
        self.rng = {name: substream(seed, name) for name in ("world", "action", "update", "replay")}
        self.step = 0
        self.episode = 0
        self.obs: np.ndarray | None = None
        self.ep: dict | None = None
        self.metrics: list[dict] = []
        self.checkpoints: list[rw.CheckpointRecord] = []
        self.obs_hash = layout_hash(cfg)

    # -- persistence ------------------------------------------------------

    def prepare_dir(self) -> None:
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.run_dir / "config.resolved.cfg").write_text(format_config(self.cfg))

    def rng_state(self) -> dict:
        return {k: g.bit_generator.state for k, g in self.rng.items()}

    def save_checkpoint(self, kind: str, c: float | None = None) -> rw.CheckpointRecord:
        c = self.curriculum.c if c is None else c
        ident = f"step{self.step:07d}_{kind}_c{c:.1f}"
        header = {
            "spec_hash": self.obs_hash,
            "rng_state": self.rng_state(),
            "step": self.step,
            "episode": self.episode,
            "kind": kind,
            "c": c,
            "rho": self.curriculum.rho,
            "reward_mode": self.cfg.reward.mode,
            "policy_spec": asdict(self.agent.policy_spec),
            "critic_spec": asdict(self.agent.critic_spec),
            "log_std": [self.agent.hyper.log_std_min, self.agent.hyper.log_std_max],
            "obs_diag": self.env.layout.diag,
        }
        save_checkpoint(self.run_dir / "checkpoints" / f"{ident}.ckpt", self.agent.stores(), header)
        rec = rw.CheckpointRecord(ident, self.step, kind, c, self.curriculum.rho)
        self.checkpoints.append(rec)
        self._write_index()
        return rec

    def _write_index(self) -> None:
        rows = [asdict(ck) for ck in self.checkpoints]
        (self.run_dir / "checkpoints" / "index.json").write_text(json.dumps(rows, indent=1))

    def write_logs(self) -> None:
        with open(self.run_dir / "metrics.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, METRIC_FIELDS)
            w.writeheader()
            for row in self.metrics:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        with open(self.run_dir / "curriculum.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "old_c", "new_c", "rho"])
            for ev in self.curriculum.switches:
                w.writerow([ev.episode, ev.old_c, ev.new_c, repr(ev.rho)])

    def save_resume(self) -> None:
        self.write_logs()
        tmp = self.run_dir / "resume.pkl.tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(self.run_dir / "resume.pkl")

    @staticmethod
    def load_resume(run_dir: str | Path) -> "Trainer":
        with open(Path(run_dir) / "resume.pkl", "rb") as fh:
            trainer = pickle.load(fh)
        trainer.run_dir = Path(run_dir)
        return trainer

    # -- episodes ---------------------------------------------------------

    def _begin_episode(self) -> None:
        self.obs = self.env.reset(self.rng["world"])
        self.ep = {"ret": 0.0, "nav": 0.0, "env": 0.0, "speed": 0.0, "vc": [], "losses": [], "len": 0}

    def _end_episode(self, cause: str) -> None:
        ep = self.ep
        self.episode += 1
        success = cause == rw.REACHED
        self.curriculum, event = rw.record_episode(self.curriculum, success)
        vc = np.array(ep["vc"])
        losses = ep["losses"]

        def mean_loss(key):
            return float(np.mean([l[key] for l in losses])) if losses else math.nan

        self.metrics.append({
            "step": self.step, "episode": self.episode, "outcome": cause, "length": ep["len"],
            "return": ep["ret"], "r_nav": ep["nav"], "r_env": ep["env"], "r_speed": ep["speed"],
            "vc_mean": float(vc.mean()), "vc_std": float(vc.std()),
            "vc_absdev": float(np.abs(vc - 1.0).mean()),
            "rho": self.curriculum.rho, "c": self.curriculum.c,
            "critic1_loss": mean_loss("critic1_loss"), "critic2_loss": mean_loss("critic2_loss"),
            "policy_loss": mean_loss("policy_loss"), "alpha": self.agent.alpha,
            "ip_clamps": self.agent.ip_clamp_events,
        })
        if event is not None:
            log.info("episode %d: curriculum switch c %.1f -> %.1f (rho %.2f)",
                     self.episode, event.old_c, event.new_c, event.rho)
            self.save_checkpoint("switch", c=event.old_c)
        self.obs = None
        self.ep = None

    def _random_action(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.rng["action"].uniform(-1.0, 1.0, size=2)
        return a, np.arctanh(np.clip(a, -1 + 1e-6, 1 - 1e-6))

    # -- main loop --------------------------------------------------------

    def run(self, until: int | None = None) -> None:
        """Advance training to ``until`` environment steps (default: ``run.total_steps``)."""
        total = self.cfg.run.total_steps
        target = total if until is None else min(until, total)
        if self.step == 0 and not self.checkpoints:
            self.prepare_dir()
            self.save_checkpoint("initial")
        h = self.agent.hyper
        run_cfg = self.cfg.run
        try:
            while self.step < target:
                if self.obs is None:
                    self._begin_episode()
                if self.step < h.warmup_steps:
                    a, pre = self._random_action()
                else:
                    a, _, pre = self.agent.act(self.obs, self.rng["action"])
                res = self.env.step(a, self.curriculum.c)
                r = res.reward
                self.buffer.add(self.obs, a, pre, r.r_all, res.obs, res.terminal)
                ep = self.ep
                ep["ret"] += r.r_all
                ep["nav"] += r.r_nav
                ep["env"] += r.r_env
                ep["speed"] += r.r_speed
                ep["vc"].append(r.v_c)
                ep["len"] += 1
                self.obs = res.obs
                self.step += 1
                if self.step > h.warmup_steps and len(self.buffer) >= h.batch_size:
                    for _ in range(h.updates_per_step):
                        batch = self.buffer.sample(h.batch_size, self.rng["replay"])
                        ep["losses"].append(self.agent.update(batch, self.rng["update"]))
                if res.done:
                    self._end_episode(r.cause)
                if run_cfg.checkpoint_interval and self.step % run_cfg.checkpoint_interval == 0:
                    self.save_checkpoint("periodic")
                if run_cfg.resume_interval and self.step % run_cfg.resume_interval == 0:
                    self.save_resume()
        except BaseException:
            log.error("training interrupted at step %d; resumable state saved", self.step)
            self.save_resume()
            raise
        if self.step >= total:
            self.finish()
        else:
            self.save_resume()

    def finish(self) -> dict:
        if not any(ck.kind == "final" for ck in self.checkpoints):
            self.save_checkpoint("final")
        self.write_logs()
        self.save_resume()
        summary = self.summary()
        (self.run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
        return summary

    def summary(self) -> dict:
        last = [m["outcome"] for m in self.metrics[-100:]]
        final = rw.select_final_policy(self.curriculum, self.checkpoints) if self.checkpoints else None
        return {
            "steps": self.step,
            "episodes": self.episode,
            "final_success_rate": (last.count(rw.REACHED) / len(last)) if last else None,
            "switches": len(self.curriculum.switches),
            "c": self.curriculum.c,
            "final_policy": final,
            "latest_checkpoint": self.checkpoints[-1].ident if self.checkpoints else None,
            "reward_mode": self.cfg.reward.mode,
        }


def train(cfg: RunConfig, run_dir: str | Path, base_dir: Path | None = None) -> Trainer:
    trainer = Trainer(cfg, run_dir, base_dir)
    trainer.run()
    return trainer


def resume(run_dir: str | Path, until: int | None = None) -> Trainer:
    trainer = Trainer.load_resume(run_dir)
    trainer.run(until)
    return trainer
