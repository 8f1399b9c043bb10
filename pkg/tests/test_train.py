import csv
import json

import numpy as np
import pytest

from ratenav.config import parse_config
from ratenav.env import NavEnv
from ratenav.nn import load_checkpoint
from ratenav.train import Trainer, layout_hash, resume, train

pytestmark = pytest.mark.filterwarnings("ignore:no curriculum switch:RuntimeWarning")

SMALL = """
[world]
t_max = 40
[sac]
hidden_width = 16
hidden_layers = 1
batch_size = 32
warmup_steps = 100
dtype = float64
[run]
seed = 4
total_steps = {steps}
checkpoint_interval = 200
resume_interval = 100
"""


def small_cfg(steps=400, extra=""):
    return parse_config(SMALL.format(steps=steps) + extra)


def final_ckpt(run_dir):
    return next((run_dir / "checkpoints").glob("*_final_*.ckpt"))


def test_training_is_deterministic(tmp_path):
    a = train(small_cfg(), tmp_path / "a")
    b = train(small_cfg(), tmp_path / "b")
    assert (tmp_path / "a/metrics.csv").read_text() == (tmp_path / "b/metrics.csv").read_text()
    assert final_ckpt(tmp_path / "a").read_bytes() == final_ckpt(tmp_path / "b").read_bytes()
    assert a.summary() == b.summary()
    assert a.episode > 0 and a.metrics[-1]["critic1_loss"] == a.metrics[-1]["critic1_loss"]  # not nan


def test_resume_matches_an_uninterrupted_run(tmp_path):
    full = train(small_cfg(), tmp_path / "full")
    part = Trainer(small_cfg(), tmp_path / "part")
    part.run(until=230)
    assert part.step == 230 and (tmp_path / "part/resume.pkl").exists()
    del part
    done = resume(tmp_path / "part")
    assert done.step == 400
    assert (tmp_path / "full/metrics.csv").read_text() == (tmp_path / "part/metrics.csv").read_text()
    fa, _ = load_checkpoint(final_ckpt(tmp_path / "full"))
    fb, _ = load_checkpoint(final_ckpt(tmp_path / "part"))
    for k in fa:
        np.testing.assert_array_equal(fa[k].flat(), fb[k].flat())
    assert [c.ident for c in full.checkpoints] == [c.ident for c in done.checkpoints]


def test_interrupt_saves_resumable_state(tmp_path, monkeypatch):
    t = Trainer(small_cfg(), tmp_path / "r")
    real = NavEnv.step
    calls = {"n": 0}

    def flaky(self, a, c):
        calls["n"] += 1
        if calls["n"] == 151:
            raise KeyboardInterrupt
        return real(self, a, c)

    monkeypatch.setattr(NavEnv, "step", flaky)
    with pytest.raises(KeyboardInterrupt):
        t.run()
    monkeypatch.undo()
    back = Trainer.load_resume(tmp_path / "r")
    assert back.step == 150
    back.run()
    assert back.step == 400


def test_zero_steps_writes_initial_and_final(tmp_path):
    t = train(small_cfg(steps=0), tmp_path / "z")
    kinds = [c.kind for c in t.checkpoints]
    assert kinds == ["initial", "final"]
    summary = json.loads((tmp_path / "z/summary.json").read_text())
    assert summary["episodes"] == 0 and summary["final_success_rate"] is None
    with open(tmp_path / "z/metrics.csv") as fh:
        assert list(csv.reader(fh))[1:] == []


def test_switch_writes_a_checkpoint_at_the_old_factor(tmp_path):
    extra = "[curriculum]\nwindow = 1\nthreshold = 0.0\n"
    t = train(small_cfg(steps=120, extra=extra), tmp_path / "s")
    switches = [c for c in t.checkpoints if c.kind == "switch"]
    assert switches and switches[0].c == 1.5
    assert t.curriculum.c == min(4.0, 1.5 + 0.5 * len(switches))
    with open(tmp_path / "s/curriculum.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(switches)
    assert float(rows[0]["old_c"]) == 1.5 and float(rows[0]["new_c"]) == 2.0


def test_checkpoint_header_identifies_the_layout(tmp_path):
    cfg = small_cfg(steps=0)
    train(cfg, tmp_path / "h")
    stores, header = load_checkpoint(final_ckpt(tmp_path / "h"))
    assert header["spec_hash"] == layout_hash(cfg)
    assert header["reward_mode"] == "nsuo"
    assert set(stores) >= {"policy", "q1", "q2"}
    other = parse_config("[sensing]\npool_window = 40\n")
    assert layout_hash(other) != layout_hash(cfg)
    # scales that only change normalization do not change the layout
    assert layout_hash(parse_config("[world]\nv_max = 0.3\n")) == layout_hash(parse_config(""))
