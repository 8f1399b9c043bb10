import csv
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from shapely.geometry import LineString

from ratenav import reward as rw
from ratenav.config import parse_config
from ratenav.evaluation import (COLLISION, SUCCESS, TIMEOUT, CheckpointMismatchError, CheckpointPolicy,
                                ConstantPolicy, GeneratorError, ScenarioInvalidError, barn_score,
                                corner_comparison, eval_steps, evaluate_scenario, evaluate_suite,
                                generate_cluttered_maps, narrowest_passage, optimal_time, path_length,
                                read_scores, run_episode, score_records, segment_distance, shortest_path,
                                stationary_policy, write_paired_trace, write_scores)
from ratenav.train import DATA_DIR, build_env, layout_hash, train
from ratenav.world import GoalSpec, RobotState, Scenario, WorldMap, empty_room, load_scenario, rect_polygon

from oracles import shapely_clearance, visibility_path_length

CFG = parse_config("[sac]\ndtype = float64\n")


def scenario(world_map, start, goal, name="s"):
    return Scenario(world_map, RobotState(*start), GoalSpec(*goal), (), name)


def u_shape():
    obstacles = (rect_polygon(4.0, 2.15, 4.0, 0.3), rect_polygon(2.15, 4.0, 0.3, 4.0),
                 rect_polygon(5.85, 4.0, 0.3, 4.0))
    return WorldMap(8.0, 8.0, obstacles)


# -- scoring ------------------------------------------------------------

def test_barn_score_reference_values():
    assert barn_score(SUCCESS, 10.0, 5.0) == pytest.approx(0.5)
    assert barn_score(SUCCESS, 20.0, 5.0) == pytest.approx(0.25)
    assert barn_score(SUCCESS, 100.0, 5.0) == pytest.approx(0.125)
    assert barn_score(SUCCESS, 3.0, 5.0) == pytest.approx(0.5)
    assert barn_score(COLLISION, 10.0, 5.0) == 0.0
    assert barn_score(TIMEOUT, 10.0, 5.0) == 0.0
    assert barn_score(SUCCESS, 0.0, 0.0) == 0.5
    with pytest.raises(ValueError):
        barn_score("crashed", 1.0, 1.0)


@given(st.floats(0.1, 100.0), st.floats(0.0, 1000.0), st.floats(0.0, 1000.0))
def test_barn_score_range_and_monotonicity(ot, at1, at2):
    lo, hi = sorted((at1, at2))
    s_lo, s_hi = barn_score(SUCCESS, lo, ot), barn_score(SUCCESS, hi, ot)
    assert 0.125 - 1e-12 <= s_hi <= s_lo <= 0.5 + 1e-12


def test_aggregate_over_ten_synthetic_episodes(tmp_path):
    rows = [(f"m{i}", SUCCESS, 10.0, 5.0) for i in range(4)]          # 0.5 each
    rows += [(f"m{i}", SUCCESS, 20.0, 5.0) for i in range(4, 6)]      # 0.25 each
    rows += [("m6", COLLISION, 3.0, 5.0), ("m7", COLLISION, 4.0, 5.0)]
    rows += [("m8", TIMEOUT, 50.0, 5.0), ("m9", SUCCESS, 1e6, 5.0)]    # last clips to 1/8
    rep = score_records(rows)
    assert rep.metric == pytest.approx((4 * 0.5 + 2 * 0.25 + 0.125) / 10)
    assert (rep.sr, rep.cr, rep.to) == (70.0, 20.0, 10.0)
    write_scores(rep, tmp_path / "scores.csv")
    back = read_scores(tmp_path / "scores.csv")
    assert back.metric == rep.metric and back.records == rep.records
    text = rep.summary_text("x")
    assert "Metric: 0.2625" in text and "SR: 70.0%" in text


# -- episodes -----------------------------------------------------------

def test_goal_at_start_is_an_immediate_success():
    env = build_env(CFG, empty_room())
    ep = run_episode(ConstantPolicy(), env, RobotState(3, 3, 0), GoalSpec(3.1, 3, 0.3))
    assert ep.outcome == SUCCESS and ep.steps == 0 and ep.at == 0.0
    scn = scenario(empty_room(), (3, 3, 0), (3, 3, 0.3))
    assert optimal_time(scn) == 0.0
    assert barn_score(ep.outcome, ep.at, 0.0) == 0.5


def test_driving_into_a_wall_is_a_collision():
    scn = scenario(empty_room(), (7.05, 4.0, 0.0), (1.0, 4.0, 0.3))
    ep, ot = evaluate_scenario(ConstantPolicy((1.0, 0.0)), scn, 0.5, CFG)
    assert ep.outcome == COLLISION
    assert ep.steps == 8  # 0.75 m to contact at 0.1 m per step
    assert ot == pytest.approx(12.1, rel=1e-9)


def test_stationary_policy_times_out_at_the_budget():
    scn = scenario(empty_room(), (1.0, 1.0, 0.0), (5.0, 1.0, 0.3))
    ep, ot = evaluate_scenario(stationary_policy(), scn, 0.5, CFG)
    assert ep.outcome == TIMEOUT and ep.steps == eval_steps(ot, CFG)
    assert eval_steps(8.0, CFG) == math.ceil((8 * 8.0 + 10) / 0.2)


def test_straight_drive_reaches_goal_in_expected_time():
    scn = scenario(empty_room(), (1.0, 1.0, 0.0), (5.05, 1.0, 0.3))
    ep, ot = evaluate_scenario(ConstantPolicy(), scn, 0.5, CFG)
    assert ot == pytest.approx(8.1)
    assert ep.outcome == SUCCESS and ep.steps == 38  # 3.75 m to the tolerance disc at 0.1 m per step
    assert ep.path_length == pytest.approx(3.8)


def test_evaluation_is_deterministic(tmp_path):
    scns = [scenario(empty_room(), (1.0, 1.0, 0.3), (5.0, 4.0, 0.3), "a"),
            scenario(u_shape(), (4.0, 3.0, 0.0), (4.0, 1.0, 0.3), "b")]
    policy = ConstantPolicy((0.5, 0.2))
    r1 = evaluate_suite(policy, scns, [0.5], CFG, tmp_path / "1", plots=False)
    r2 = evaluate_suite(policy, scns, [0.5], CFG, tmp_path / "2", plots=False)
    assert r1[0.5].records == r2[0.5].records
    for name in ("scores.csv", "trace_a.csv", "trace_b.csv"):
        assert (tmp_path / "1/speed_0.5" / name).read_bytes() == (tmp_path / "2/speed_0.5" / name).read_bytes()


def test_suite_records_faults_and_writes_outputs(tmp_path):
    bad = scenario(WorldMap(8, 8, (rect_polygon(4, 4, 2, 2),)), (1, 1, 0), (4, 4, 0.3), "inside")
    good = scenario(empty_room(), (1.0, 1.0, 0.0), (5.0, 1.0, 0.3), "ok")
    reps = evaluate_suite(ConstantPolicy(), [bad, good], [0.5, 0.25], CFG, tmp_path, label="const")
    for speed in (0.5, 0.25):
        rep = reps[speed]
        assert [r.scenario for r in rep.records] == ["ok"]
        assert rep.faults and rep.faults[0][0] == "inside"
        sub = tmp_path / f"speed_{speed:g}"
        for name in ("scores.csv", "summary.txt", "trace_ok.csv", "traj_ok.svg", "vc_ok.svg"):
            assert (sub / name).exists(), name
        assert "faults: 1" in (sub / "summary.txt").read_text()
    # OT scales with the evaluation speed
    assert reps[0.25].records[0].ot == pytest.approx(2 * reps[0.5].records[0].ot)
    with pytest.raises(ValueError):
        evaluate_suite(ConstantPolicy(), [], [0.5], CFG)


# -- optimal time and passages --------------------------------------------

def test_empty_room_optimal_time():
    scn = scenario(empty_room(8, 8), (2.0, 4.0, 0.0), (6.0, 4.0, 0.3))
    assert optimal_time(scn, 0.5) == pytest.approx(8.0, rel=1e-12)


@pytest.mark.parametrize("start,goal", [((4.0, 3.0), (4.0, 1.0)), ((3.0, 5.5), (1.0, 1.0)),
                                        ((5.0, 2.7), (7.2, 7.0))])
def test_u_shape_optimal_time_matches_visibility_graph(start, goal):
    wmap = u_shape()
    ours = path_length(shortest_path(wmap, start, goal, 0.2))
    ref = visibility_path_length(wmap, start, goal, 0.2)
    assert ours == pytest.approx(ref, rel=0.02)
    assert ours >= ref * (1 - 1e-3)  # the inflated arcs make the oracle the lower bound
    scn = scenario(wmap, (*start, 0.0), (*goal, 0.3))
    assert optimal_time(scn, 0.5) == pytest.approx(ours / 0.5)


@given(st.lists(st.floats(0.0, 5.0), min_size=4, max_size=4), st.integers(0, 2**31))
def test_segment_distance_matches_shapely(pq, seed):
    segs = np.random.default_rng(seed).uniform(0.0, 5.0, (12, 2, 2))
    p, q = pq[:2], pq[2:]
    assume(math.dist(p, q) > 1e-6)
    ours = segment_distance(p, q, segs)
    line = LineString([p, q])
    ref = [line.distance(LineString(s)) for s in segs]
    np.testing.assert_allclose(ours, ref, atol=1e-9)


def test_path_keeps_the_robot_clear():
    wmap = u_shape()
    pts = shortest_path(wmap, (4.0, 3.0), (4.0, 1.0), 0.2)
    samples = np.concatenate([np.linspace(a, b, 200) for a, b in zip(pts[:-1], pts[1:])])
    assert shapely_clearance(wmap, samples).min() >= 0.2 - 1e-9


def test_unreachable_goal_is_reported():
    sealed = WorldMap(8, 8, (rect_polygon(4.0, 4.0, 0.2, 8.0),))
    with pytest.raises(ScenarioInvalidError):
        optimal_time(scenario(sealed, (1, 4, 0), (7, 4, 0.3)))
    with pytest.raises(ScenarioInvalidError):
        optimal_time(Scenario(empty_room()))


def test_narrowest_passage_of_a_slot():
    wall = WorldMap(8, 8, (rect_polygon(4.0, 1.75, 0.2, 3.5), rect_polygon(4.0, 6.0, 0.2, 4.0)))
    width = narrowest_passage(wall, (1.0, 4.0), (7.0, 4.0))
    assert width == pytest.approx(0.5, abs=0.1)


# -- generator ----------------------------------------------------------

def test_generator_density_zero_gives_empty_rooms():
    maps = generate_cluttered_maps(5, 0.0, np.random.default_rng(0))
    assert len(maps) == 5
    for scn in maps:
        assert scn.world_map.obstacles == ()
        assert math.dist((scn.start.x, scn.start.y), (scn.goal.x, scn.goal.y)) >= 1.0


def test_generator_is_reproducible():
    a = generate_cluttered_maps(3, 0.15, np.random.default_rng(7))
    b = generate_cluttered_maps(3, 0.15, np.random.default_rng(7))
    for x, y in zip(a, b):
        assert x.name == y.name and x.start == y.start and x.goal == y.goal
        assert len(x.world_map.obstacles) == len(y.world_map.obstacles)
        for p, q in zip(x.world_map.obstacles, y.world_map.obstacles):
            np.testing.assert_array_equal(p, q)


def test_generated_passages_match_the_requested_clearance():
    maps = generate_cluttered_maps(6, 0.2, np.random.default_rng(3), clearance_m=0.6)
    for scn in maps:
        assert len(scn.world_map.obstacles) > 2
        w = narrowest_passage(scn.world_map, (scn.start.x, scn.start.y), (scn.goal.x, scn.goal.y))
        assert 0.5 <= w <= 0.7, (scn.name, w)
        optimal_time(scn)  # feasible


def test_generator_rejects_impossible_requests():
    with pytest.raises(GeneratorError):
        generate_cluttered_maps(1, 0.2, np.random.default_rng(0), clearance_m=0.35)
    with pytest.raises(ValueError):
        generate_cluttered_maps(1, 0.9, np.random.default_rng(0))


# -- paired comparison ----------------------------------------------------

CORNER = load_scenario(DATA_DIR / "corner.scn")


def test_identical_policies_have_zero_difference(tmp_path):
    p = ConstantPolicy((0.8, 0.1))
    cmp = corner_comparison(p, p, CORNER, CFG)
    assert cmp.difference == 0.0
    np.testing.assert_array_equal(cmp.log_a.vc, cmp.log_b.vc)
    write_paired_trace(cmp, tmp_path / "p.csv")
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "vc_a", "vc_b"] and len(rows) == cmp.log_a.steps + 1


def test_stationary_robot_has_constant_change_rate():
    cmp = corner_comparison(stationary_policy(), ConstantPolicy((1.0, 0.0)), CORNER, CFG)
    assert np.all(cmp.log_a.vc == 1.0) and cmp.absdev_a == 0.0
    assert cmp.partial
    assert cmp.difference == pytest.approx(-cmp.absdev_b)
    assert "partial" in cmp.summary_text()


# -- checkpoints and baseline --------------------------------------------

@pytest.mark.filterwarnings("ignore:no curriculum switch:RuntimeWarning")
def test_checkpoint_policy_checks_the_layout(tmp_path):
    cfg = parse_config("[run]\ntotal_steps = 0\n[sac]\nhidden_width = 8\nhidden_layers = 1\n")
    t = train(cfg, tmp_path / "r")
    path = tmp_path / "r/checkpoints" / f"{t.checkpoints[-1].ident}.ckpt"
    pol = CheckpointPolicy.load(path, layout_hash(cfg))
    assert pol.reward_mode == "nsuo" and pol.obs_diag == pytest.approx(math.hypot(8, 8))
    a = pol(np.ones(34))
    assert a.shape == (2,) and np.all(np.abs(a) < 1)
    np.testing.assert_array_equal(a, pol(np.ones(34)))
    with pytest.raises(CheckpointMismatchError):
        CheckpointPolicy.load(path, layout_hash(parse_config("[sensing]\npool_window = 40\n")))


def test_distance_only_equals_nsuo_with_extra_terms_zeroed(tmp_path, monkeypatch):
    text = ("[world]\nt_max = 40\n[sac]\nhidden_width = 16\nhidden_layers = 1\nbatch_size = 32\n"
            "warmup_steps = 100\ndtype = float64\n[run]\nseed = 2\ntotal_steps = 300\n")
    with pytest.warns(RuntimeWarning):
        train(parse_config(text + "[reward]\nmode = distance-only\n"), tmp_path / "base")
    monkeypatch.setattr(rw, "env_reward", lambda v_c, c, params=None: 0.0)
    monkeypatch.setattr(rw, "speed_reward", lambda v, c, params=None: 0.0)
    with pytest.warns(RuntimeWarning):
        train(parse_config(text), tmp_path / "zeroed")
    assert (tmp_path / "base/metrics.csv").read_text() == (tmp_path / "zeroed/metrics.csv").read_text()
