import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsdistill.data import BatterySpec, TimeSeriesBundle, synth_bundle
from emsdistill.env import (BatteryEnv, EnvConfig, cost_to_go, observe, read_jsonl, reset, rollout,
                            step, write_jsonl, zero_policy)
from emsdistill.errors import DataError, NumericError

from helpers import check_rollout_invariants


def make_bundle(pros, price, pv=None):
    pros = np.asarray(pros, dtype=float)
    n = len(pros)
    ts = np.datetime64("2024-01-01T00:00") + np.arange(n) * np.timedelta64(30, "m")
    load = np.maximum(pros, 0.0)
    pv = np.maximum(-pros, 0.0)
    return TimeSeriesBundle("t", ts, load, pv, np.asarray(price, dtype=float))


def single(pros, price, cap, power, soe0=0.0, feed_in=0.1):
    return EnvConfig(make_bundle([pros], [price]), BatterySpec(cap, power, soe0), horizon_h=0, feed_in_tariff=feed_in)


def test_reset_examples():
    cfg = EnvConfig(synth_bundle(0, 2), BatterySpec(4.0, 1.0), episode_start=5)
    s = reset(cfg)
    assert s.soe == 0.0 and s.t == 5
    s = reset(EnvConfig(synth_bundle(0, 2), BatterySpec(4.0, 1.0, initial_soe=4.0)))
    assert s.soe == 4.0
    with pytest.raises(DataError):
        EnvConfig(synth_bundle(0, 2), BatterySpec(4.0, 1.0), episode_len=0)
    with pytest.raises(DataError):
        EnvConfig(synth_bundle(0, 2), BatterySpec(4.0, 1.0), episode_start=90, episode_len=10)


def test_observe_shapes_and_padding():
    b = synth_bundle(1, 2)
    cfg = EnvConfig(b, BatterySpec(4.0, 1.0))
    assert observe(reset(cfg)).shape == (53,)
    assert observe(reset(EnvConfig(b, BatterySpec(4.0, 1.0), horizon_h=0))).shape == (5,)
    s = reset(cfg.replace(episode_start=95, episode_len=1))
    o = observe(s)
    assert np.all(o[1:27] == b.prosumption[-1]) and np.all(o[27:] == b.price[-1])
    s = reset(cfg)
    o = observe(s)
    assert np.array_equal(o[1:27], b.prosumption[:26]) and np.array_equal(o[27:], b.price[:26])


def test_step_examples():
    r = step(reset(single(0.0, 0.3, 10.0, 4.0)), -2.0)
    assert (r.effective_action, r.grid_exchange, r.cost, r.reward) == (0.0, 0.0, 0.0, -2.0)
    r = step(reset(single(0.0, 0.3, 10.0, 10.0, soe0=8.0)), 5.0)
    assert r.effective_action == 2.0 and r.penalty == 3.0 and r.next_soe == 10.0
    r = step(reset(single(-2.0, 0.3, 10.0, 4.0)), 0.0)
    assert r.grid_exchange == -2.0 and math.isclose(r.cost, -0.2)


def test_over_bound_action_is_clamped_and_penalised():
    r = step(reset(single(1.0, 0.3, 10.0, 2.0)), 3.0)
    assert r.effective_action == 1.0 and r.penalty == 2.0


def test_nan_action_and_finished_episode():
    s = reset(single(0.0, 0.3, 1.0, 1.0))
    with pytest.raises(NumericError):
        step(s, float("nan"))
    step(s, 0.0)
    with pytest.raises(DataError):
        step(s, 0.0)


def test_cost_to_go_examples():
    assert cost_to_go([1, 2, 3]).tolist() == [6, 5, 3]
    assert cost_to_go([]).tolist() == []
    assert cost_to_go([-1, 2]).tolist() == [1, 2]


def test_flat_zero_policy_cost():
    b = synth_bundle(0, 2, "flat")
    cfg = EnvConfig(b, BatterySpec(4.0, 2.0))
    tr = rollout(cfg, zero_policy)
    assert math.isclose(tr.total_cost, 0.2 * len(b), rel_tol=1e-12)


def test_nan_policy_aborts_with_step():
    cfg = EnvConfig(synth_bundle(0, 1), BatterySpec(4.0, 2.0))
    calls = iter(range(100))
    with pytest.raises(NumericError, match="step 3"):
        rollout(cfg, lambda o: float("nan") if next(calls) == 3 else 0.0)


def _random_config(rng, n):
    pros = rng.normal(0, 1.5, n)
    price = rng.uniform(-0.1, 0.5, n)
    cap = float(rng.uniform(0.5, 10))
    return EnvConfig(make_bundle(pros, price), BatterySpec(cap, float(rng.uniform(0.2, 4)),
                                                             float(rng.uniform(0, cap))),
                     horizon_h=int(rng.integers(0, 4)), feed_in_tariff=float(rng.uniform(0, 0.2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_rollout_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    cfg = _random_config(rng, n)
    bound = cfg.action_bound
    check_rollout_invariants(cfg, rng.uniform(-2 * bound, 2 * bound, n))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_feasible_actions_have_no_penalty_and_clip_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    cfg = _random_config(rng, 20)
    s = reset(cfg)
    while not s.done:
        probe = copy.copy(s)
        r = step(probe, float(rng.uniform(-1.5, 1.5) * cfg.action_bound))
        again = step(copy.copy(s), r.effective_action)
        assert again.effective_action == r.effective_action and again.penalty == 0.0
        assert again.reward == -again.cost
        step(s, r.effective_action)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_feed_in_monotonicity(seed, f1, f2):
    lo, hi = sorted((f1, f2))
    rng = np.random.default_rng(seed)
    cfg = _random_config(rng, 30)
    acts = rng.uniform(-1, 1, 30) * cfg.action_bound
    c_lo = rollout(cfg.replace(feed_in_tariff=lo), lambda o, a=iter(acts): next(a))
    c_hi = rollout(cfg.replace(feed_in_tariff=hi), lambda o, a=iter(acts): next(a))
    assert c_hi.total_cost <= c_lo.total_cost


def test_trajectory_jsonl_roundtrip(tmp_path):
    cfg = EnvConfig(synth_bundle(0, 1), BatterySpec(4.0, 2.0))
    tr = rollout(cfg, lambda o: 0.3, "const", seed=9)
    write_jsonl(tmp_path / "d.jsonl", [tr, tr])
    back = read_jsonl(tmp_path / "d.jsonl")
    assert len(back) == 2 and back[0].policy == "const" and back[0].seed == 9
    assert np.array_equal(back[0].states, tr.states)
    np.testing.assert_allclose(back[0].ctg, tr.ctg, rtol=1e-6)
    (tmp_path / "bad.jsonl").write_text('{"building_id": "x"}\n')
    with pytest.raises(DataError, match="bad.jsonl:1"):
        read_jsonl(tmp_path / "bad.jsonl")


def test_battery_env_wrapper():
    env = BatteryEnv(EnvConfig(synth_bundle(0, 1), BatterySpec(4.0, 2.0), episode_len=3))
    obs = env.reset()
    assert obs.shape == (53,)
    for _ in range(3):
        env.step(0.1)
    assert env.done
