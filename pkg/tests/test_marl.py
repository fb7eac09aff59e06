"""Team learning: reward, action selection, encoding, replay, training."""

import math

import numpy as np
import pytest

from uansim import qnet
from uansim.engine import NodeView, Scenario, WAIT_DECISION
from uansim.channel import ChannelParams
from uansim.loadinfo import NeighborLoadTable
from uansim.marl import (
    EpisodeTrace,
    MarlPolicy,
    ObservationEncoder,
    ReplayBuffer,
    RewardConfig,
    TrainConfig,
    Trainer,
    epsilon_schedule,
    load_policy_bundle,
    mix_team_value,
    save_policy_checkpoint,
    select_action,
    team_reward,
)
from uansim.modem import DEFAULT_MODES, FramingParams, Modem
from uansim.pareto import ParetoSolution
from uansim.world import PhyStatus, ring_positions


def make_scenario(**overrides) -> Scenario:
    base = dict(
        channel=ChannelParams(),
        modem=Modem(DEFAULT_MODES, FramingParams()),
        positions=ring_positions([3000.0, 4000.0, 5000.0]),
        sink_position=np.zeros(3),
        payload_bytes=200,
        per_node_rate=0.99,
        horizon_slots=30,
        fading="rayleigh",
    )
    base.update(overrides)
    return Scenario(**base)


ACTIONS = [
    None,
    ParetoSolution(5, 4.5, 0.6707, 3.01815),
    ParetoSolution(3, 1.5, 0.8914, 1.3371),
    ParetoSolution(2, 1.0, 1.1121, 1.1121),
]


def test_team_reward_golden():
    cfg = RewardConfig(alpha=1.0, lambda_net=0.99, slot_s=1.0, horizon_slots=200)
    assert team_reward(3, 1, cfg) == pytest.approx(2.0 / 198.0, rel=1e-12)
    assert team_reward(0, 0, cfg) == 0.0
    # doubling alpha doubles the reward exactly
    cfg2 = RewardConfig(alpha=2.0, lambda_net=0.99, slot_s=1.0, horizon_slots=200)
    assert team_reward(3, 1, cfg2) == pytest.approx(4.0 / 198.0, rel=1e-12)


def test_team_reward_sign_convention():
    cfg = RewardConfig()
    assert team_reward(2, 0, cfg) > 0
    assert team_reward(0, 2, cfg) < 0
    with pytest.raises(ValueError):
        team_reward(-1, 0, cfg)


def test_mix_team_value_is_sum():
    assert mix_team_value([0.2, -0.1, 0.4]) == pytest.approx(0.5)
    assert mix_team_value([1.25]) == 1.25
    assert mix_team_value([3.0, -1.0, 2.0]) == mix_team_value([2.0, 3.0, -1.0])


def test_select_action_greedy_tie_breaks_low():
    rng = np.random.default_rng(0)
    assert select_action(np.array([1.0, 0.5, 1.0]), 0.0, rng) == 0
    assert select_action(np.array([0.1, 0.9, 0.2]), 0.0, rng) == 1


def test_select_action_uniform_when_exploring():
    rng = np.random.default_rng(123)
    counts = np.zeros(4)
    draws = 10_000
    for _ in range(draws):
        counts[select_action(np.array([9.0, 0.0, 0.0, 0.0]), 1.0, rng)] += 1
    expected = draws / 4
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # chi-square with 3 dof: 16.3 is the 0.1% tail
    assert chi2 < 16.3


def test_epsilon_schedule_endpoints_and_midpoint():
    assert epsilon_schedule(1, 10000) == 1.0
    assert epsilon_schedule(10000, 10000) == pytest.approx(0.05)
    assert epsilon_schedule(20000, 10000) == pytest.approx(0.05)
    # halfway point of the anneal
    mid = (1 + 10000) // 2 + 1
    assert epsilon_schedule(5001, 10001) == pytest.approx(0.525)
    with pytest.raises(ValueError):
        epsilon_schedule(0, 100)


def make_view(agent=0, n=3, phy=PhyStatus.IDLE, queue=5, est=1.0, now=40.0):
    table = NeighborLoadTable()
    table.ingest(1 if agent != 1 else 2, t_acquire=10.0, queue_len=4, est=2.0)
    return NodeView(
        agent_index=agent,
        slot=int(now),
        now=now,
        phy_status=phy,
        position=np.array([3000.0, 0.0, 0.0]),
        queue_len=queue,
        busy=False,
        est=est,
        table=table,
        neighbor_ids=[k for k in range(n) if k != agent],
    )


def test_encoder_widths_by_mode():
    positions = ring_positions([3000.0, 4000.0, 5000.0])
    full = ObservationEncoder(3, "full", positions)
    li = ObservationEncoder(3, "local_load", positions)
    bare = ObservationEncoder(3, "bare", positions)
    assert full.width == 24
    assert li.width == 12
    assert bare.width == 9


def test_encoder_layout_full():
    positions = ring_positions([3000.0, 4000.0, 5000.0])
    enc = ObservationEncoder(3, "full", positions, position_scale_m=5000.0,
                             queue_cap=50, est_cap=5.0, confidence_time_scale_s=30.0)
    v = make_view(agent=0, queue=5, est=1.0, now=40.0)
    out = enc.encode(v)
    assert out.shape == (24,)
    assert list(out[0:3]) == [1.0, 0.0, 0.0]              # idle one-hot
    assert out[3:6] == pytest.approx([0.6, 0.0, 0.0])      # own position / 5 km
    assert out[6] == 0.0                                   # own load is fresh
    assert out[7] == pytest.approx(5 / 50)
    assert out[8] == pytest.approx(1.0 / 5.0)
    # neighbor 1 (heard at t=10, age 30): position, then CF, queue, est
    assert out[9:12] == pytest.approx(list(positions[1] / 5000.0))
    assert out[12] == pytest.approx(math.tanh(1.0))
    assert out[13] == pytest.approx(4 / 50)
    assert out[14] == pytest.approx(2.0 / 5.0, abs=1e-4)
    # neighbor 2 was never heard: placeholder CF=1, zeros
    assert out[15:18] == pytest.approx(list(positions[2] / 5000.0))
    assert out[18] == 1.0 and out[19] == 0.0 and out[20] == 0.0
    # agent one-hot tail
    assert list(out[21:24]) == [1.0, 0.0, 0.0]


def test_encoder_clips_to_caps():
    enc = ObservationEncoder(3, "local_load", queue_cap=50, est_cap=5.0)
    v = make_view(queue=500, est=50.0)
    out = enc.encode(v)
    assert out[7] == 1.0
    assert out[8] == 1.0


def test_encoder_phy_one_hot():
    enc = ObservationEncoder(3, "bare")
    v = make_view(phy=PhyStatus.SEND)
    assert list(enc.encode(v)[0:3]) == [0.0, 1.0, 0.0]
    v = make_view(phy=PhyStatus.RECV)
    assert list(enc.encode(v)[0:3]) == [0.0, 0.0, 1.0]


def test_encoder_agent_one_hot_position():
    enc = ObservationEncoder(3, "bare")
    v = make_view(agent=2)
    out = enc.encode(v)
    assert list(out[-3:]) == [0.0, 0.0, 1.0]


def make_trace(T, n=2, width=4, hidden=3, seed=0):
    rng = np.random.default_rng(seed)
    return EpisodeTrace(
        obs=rng.normal(size=(T + 1, n, width)),
        actions=rng.integers(0, 3, size=(T, n)),
        rewards=rng.normal(size=T),
        hiddens=rng.normal(size=(T, n, hidden)),
    )


def test_replay_capacity_evicts_oldest():
    buf = ReplayBuffer(capacity_transitions=50)
    for k in range(6):
        buf.add(make_trace(20, seed=k))
    # 6 x 20 = 120 transitions; eviction leaves at most 50 (here 40)
    assert buf.total_transitions <= 50
    assert len(buf.episodes) == 2
    # the survivors are the newest traces
    assert buf.episodes[0].rewards == pytest.approx(make_trace(20, seed=4).rewards)


def test_replay_sample_window_shapes_and_done():
    buf = ReplayBuffer(1000)
    T, W = 10, 4
    buf.add(make_trace(T))
    rng = np.random.default_rng(3)
    batch = buf.sample_windows(batch_size=8, window=W, rng=rng)
    assert batch["obs"].shape == (8, W + 1, 2, 4)
    assert batch["actions"].shape == (8, W, 2)
    assert batch["rewards"].shape == (8, W)
    assert batch["done"].shape == (8, W)
    assert batch["h0"].shape == (8, 2, 3)
    for b in range(8):
        done = batch["done"][b]
        assert set(done[:-1]) <= {0.0}
        # the last step is terminal iff the window ends the episode
        ends = np.allclose(batch["obs"][b, -1], buf.episodes[0].obs[T])
        assert done[-1] == (1.0 if ends else 0.0)


def test_replay_window_h0_matches_episode_storage():
    buf = ReplayBuffer(1000)
    trace = make_trace(10)
    buf.add(trace)
    rng = np.random.default_rng(9)
    batch = buf.sample_windows(4, 3, rng)
    for b in range(4):
        # find the start index by matching the first observation
        starts = [
            s for s in range(8)
            if np.allclose(trace.obs[s], batch["obs"][b, 0])
        ]
        assert starts
        assert np.allclose(batch["h0"][b], trace.hiddens[starts[0]])


def test_replay_rejects_short_episode():
    buf = ReplayBuffer(1000)
    buf.add(make_trace(3))
    with pytest.raises(ValueError):
        buf.sample_windows(2, window=8, rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def micro_result():
    sc = make_scenario()
    tc = TrainConfig(episodes=30, anneal_episodes=20, eval_interval=10,
                     eval_episodes=3, target_sync_interval=10, batch_size=8,
                     window=6, hidden_width=16, recurrent_width=16)
    trainer = Trainer(sc, ACTIONS, "full", tc, RewardConfig(), seed=42)
    return sc, tc, trainer, trainer.train()


def test_training_log_cadence_and_schedule(micro_result):
    _, tc, _, result = micro_result
    assert [row["episode"] for row in result.log] == [10, 20, 30]
    for row in result.log:
        assert row["epsilon"] == pytest.approx(
            epsilon_schedule(row["episode"], tc.anneal_episodes)
        )
        assert np.isfinite(row["loss"])
    assert result.sync_episodes == [10, 20, 30]


def test_training_is_reproducible(micro_result):
    sc, tc, _, result = micro_result
    again = Trainer(sc, ACTIONS, "full", tc, RewardConfig(), seed=42).train()
    assert [r["mean_eval_reward"] for r in again.log] == [
        r["mean_eval_reward"] for r in result.log
    ]
    assert [r["loss"] for r in again.log] == [r["loss"] for r in result.log]
    for name in qnet.PARAM_ORDER:
        assert np.array_equal(result.params[name], again.params[name])


def test_best_checkpoint_is_argmax_of_eval(micro_result):
    _, _, _, result = micro_result
    best_logged = max(result.log, key=lambda r: r["mean_eval_reward"])
    assert result.best_episode == best_logged["episode"]
    assert result.best_eval_reward == best_logged["mean_eval_reward"]


def test_trainer_uses_annex_only_in_full_mode():
    sc = make_scenario()
    tc = TrainConfig(episodes=1, anneal_episodes=2, eval_interval=5,
                     eval_episodes=1, hidden_width=8, recurrent_width=8,
                     batch_size=2, window=4)
    full = Trainer(sc, ACTIONS, "full", tc, RewardConfig(), seed=0)
    bare = Trainer(sc, ACTIONS, "bare", tc, RewardConfig(), seed=0)
    assert full.annex_flags == [True, True, True]
    assert bare.annex_flags == [False, False, False]


def test_checkpoint_roundtrip_to_executable_policies(tmp_path, micro_result):
    sc, _, _, result = micro_result
    path = tmp_path / "policy.ckpt"
    save_policy_checkpoint(path, result, seed=42, scenario=sc)
    bundle = load_policy_bundle(path, n_agents=3)
    assert len(bundle) == 3
    assert all(p.uses_load_annex for p in bundle)
    # all agents share one parameter dict
    assert bundle[0].params is bundle[1].params
    from uansim.engine import run_episode

    r1 = run_episode(sc, bundle, seed=5)
    r2 = run_episode(sc, load_policy_bundle(path, 3), seed=5)
    assert [e.t_send for e in r1.events] == [e.t_send for e in r2.events]


def test_checkpoint_agent_count_guard(tmp_path, micro_result):
    sc, _, _, result = micro_result
    path = tmp_path / "policy.ckpt"
    save_policy_checkpoint(path, result, seed=42, scenario=sc)
    with pytest.raises(ValueError):
        load_policy_bundle(path, n_agents=4)


def test_policy_repeats_last_decision_on_stale_input(micro_result):
    sc, _, trainer, result = micro_result
    policy = MarlPolicy(result.spec, result.params, trainer.encoder, ACTIONS)
    policy.begin_episode(0, sc, np.random.default_rng(0))
    assert policy.act(None) == WAIT_DECISION  # nothing decided yet
    from uansim.engine import Simulation

    sim = Simulation(sc, seed=3, annex_flags=[True] * 3)
    view = sim.node_view(0)
    first = policy.act(view)
    repeated = policy.act(None)
    assert repeated == first
