import math

import numpy as np
import pytest

from ratenav.config import ConfigError, RunConfig, format_config, load_config, parse_config, substream


def test_defaults():
    cfg = parse_config("")
    assert cfg.reward.mode == "nsuo"
    assert (cfg.reward.k1, cfg.reward.k2) == (2.0, 1.9)
    assert (cfg.curriculum.c_init, cfg.curriculum.c_step, cfg.curriculum.c_max) == (1.5, 0.5, 4.0)
    assert (cfg.sac.gamma, cfg.sac.tau, cfg.sac.batch_size, cfg.sac.lr) == (0.99, 0.005, 256, 3e-4)
    assert cfg.lidar.beam_count == 1080 and cfg.sensing.pool_window == 36
    assert cfg.world.w_max == pytest.approx(math.pi / 2)


def test_resolved_config_round_trips_exactly():
    cfg = parse_config("[world]\nv_max = 0.1\n[sac]\nlr = 0.000123456789\nauto_alpha = yes\n[run]\nseed = 9\n")
    text = format_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert format_config(again) == text
    assert again.sac.auto_alpha is True and again.world.v_max == 0.1


def test_unknown_keys_and_sections_are_errors():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[wrold]\nmap = x\n")
    with pytest.raises(ConfigError, match="sac.gama"):
        parse_config("[sac]\ngama = 0.9\n")


def test_bad_values_are_reported_with_their_key():
    with pytest.raises(ConfigError, match="run.seed"):
        parse_config("[run]\nseed = one\n")
    with pytest.raises(ConfigError, match="sac.auto_alpha"):
        parse_config("[sac]\nauto_alpha = maybe\n")
    with pytest.raises(ConfigError, match="reward.mode"):
        parse_config("[reward]\nmode = shaped\n")
    with pytest.raises(ConfigError, match="pool_window"):
        parse_config("[sensing]\npool_window = 7\n")
    with pytest.raises(ConfigError, match="dtype"):
        parse_config("[sac]\ndtype = float16\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file")


def test_overrides_leave_the_base_untouched():
    base = RunConfig()
    cfg = parse_config("[run]\nseed = 5\n", base)
    assert cfg.run.seed == 5 and base.run.seed == 0
    assert parse_config("[run]\ntotal_steps = 1_000\n").run.total_steps == 1000


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_substreams_are_reproducible_and_independent():
    a = substream(3, "world").random(5)
    np.testing.assert_array_equal(a, substream(3, "world").random(5))
    assert not np.allclose(a, substream(3, "action").random(5))
    assert not np.allclose(a, substream(4, "world").random(5))
