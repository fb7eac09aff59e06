"""Release acceptance suite.

One test per release criterion, run against the installed package with no
fixtures from the unit suites. Every test prints a single CRITERION line so
the verdicts can be read off the run log. Criterion 5 is expected to fail
at the default operating point; its body prints the analysis of why before
failing (the optimizer output itself is verified correct).

Budget: criterion 8 trains the cooperative policy from scratch (about
fifteen to twenty minutes); criterion 5 runs the genetic search twice at
full scale (about one minute). Everything else is seconds.
"""

import dataclasses
import itertools

import numpy as np
import pytest

from uansim.channel import (
    ChannelParams,
    LinkGain,
    sample_fading,
    thorp_absorption,
    transmission_loss,
)
from uansim.config import (
    build_reward_config,
    build_scenario,
    build_train_config,
    parse_config,
    preset_config,
)
from uansim.engine import (
    EventOutcome,
    TransmissionEvent,
    detect_conflicts,
    run_episode,
    write_event_log,
)
from uansim.experiments import baseline_front, run_sweep, write_results_csv
from uansim.marl import MarlPolicy, RewardConfig, Trainer, mix_team_value, team_reward
from uansim.modem import Modem
from uansim.pareto import (
    DesignProblem,
    FrontError,
    GAParams,
    brute_force_front,
    build_action_space,
    dominates,
    evolve,
)
from uansim.policies import (
    NfTdmaPolicy,
    RandomPolicy,
    WaitPolicy,
    aloha_min_delay,
    aloha_min_energy,
    aloha_plain,
    build_nf_tdma_schedule,
)
from uansim.qnet import (
    PARAM_ORDER,
    NetworkSpec,
    flatten_params,
    forward,
    init_params,
    loss_and_grad,
    unflatten_params,
)


def report(criterion: int, ok: bool, detail: str) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"CRITERION {criterion:02d}: {verdict} - {detail}", flush=True)
    assert ok, detail


@pytest.fixture(scope="module")
def channel():
    return ChannelParams()


@pytest.fixture(scope="module")
def modem():
    return Modem()


@pytest.fixture(scope="module")
def design_front(channel, modem):
    problem = DesignProblem(modem, channel, design_distance_km=5.0, payload_bytes=200)
    return problem, brute_force_front(problem, power_step_w=0.5)


def test_criterion_01_channel_golden_values(channel):
    alpha = thorp_absorption(24.0)
    h = transmission_loss(4.0, channel)
    ok = abs(alpha - 5.6912) <= 1e-3 and abs(h - 3.305e-10) <= 0.01 * 3.305e-10
    report(1, ok, f"thorp(24 kHz)={alpha:.6f} dB/km, loss(4 km)={h:.4e}")


def test_criterion_02_fading_distribution():
    rng = np.random.default_rng(np.random.SeedSequence(424242))
    n = 100_000
    samples = np.sort([sample_fading(rng) for _ in range(n)])
    cdf = 1.0 - np.exp(-np.pi * samples**2 / 4.0)
    steps = np.arange(1, n + 1) / n
    ks = max(np.max(np.abs(steps - cdf)), np.max(np.abs(steps - 1.0 / n - cdf)))
    mean = float(np.mean(samples))
    ok = ks < 0.01 and abs(mean - 1.0) <= 0.01
    report(2, ok, f"KS={ks:.5f} (<0.01), mean={mean:.5f} (1 +/- 0.01)")


def _fake_event(sender: int, t_arrive: float, t_complete: float) -> TransmissionEvent:
    return TransmissionEvent(
        sender=sender,
        t_send=t_arrive - 1.0,
        t_arrive=t_arrive,
        t_complete=t_complete,
        mode_index=1,
        power_w=1.0,
        wire_bytes=210,
        gen_time=0.0,
        gain=LinkGain(1e-10, 1.0),
        energy_j=0.0,
    )


def test_criterion_03_conflict_oracle_equivalence():
    rng = np.random.default_rng(31007)
    trials = 1000
    for trial in range(trials):
        n = int(rng.integers(3, 7))
        starts = rng.uniform(0.0, 50.0, n)
        durations = rng.uniform(0.05, 4.0, n)
        ends = starts + durations
        if trial % 10 == 0:
            # force exact boundary contact to pin closed-interval semantics
            starts[1] = ends[0]
            ends[1] = starts[1] + durations[1]
        events = [_fake_event(i, s, e) for i, (s, e) in enumerate(zip(starts, ends))]
        got = detect_conflicts(events)
        oracle = [
            any(
                starts[i] <= ends[j] and starts[j] <= ends[i]
                for j in range(n)
                if j != i
            )
            for i in range(n)
        ]
        assert got == oracle, f"divergence on trial {trial}: {got} vs {oracle}"
    report(3, True, f"{trials} randomized sender sets, 3-6 senders, exact match")


def test_criterion_04_nf_tdma_zero_conflicts():
    cfg = preset_config("desk")
    rows = run_sweep(cfg, kind="rate", policies=["nf_tdma"])
    conflicts = {row.value: row.counts["conflicts"] for row in rows}
    total_sent = sum(row.counts["sent"] for row in rows)
    # per-episode counts are non-negative, so a zero mean means every
    # episode was conflict-free
    ok = all(c == 0.0 for c in conflicts.values()) and total_sent > 0
    worst = max(conflicts.values())
    report(
        4,
        ok,
        f"{len(rows)} rate points x {rows[0].replications} episodes, "
        f"max mean conflicts {worst:g}",
    )


def test_criterion_05_front_oracle_and_action_space(design_front):
    problem, grid_front = design_front
    snapped = evolve(
        problem,
        GAParams(population=500, generations=500, power_grid_w=0.5),
        rng=np.random.default_rng(np.random.SeedSequence((1, 0xF0))),
    )
    got = sorted((s.mode_index, s.power_w, s.delay_s, s.energy_j) for s in snapped.solutions)
    want = sorted((s.mode_index, s.power_w, s.delay_s, s.energy_j) for s in grid_front)
    assert got == want, f"snapped front {got} != exhaustive grid front {want}"

    continuous = evolve(
        problem,
        GAParams(population=500, generations=500),
        rng=np.random.default_rng(np.random.SeedSequence((1, 0xF1))),
    )
    for a, b in itertools.combinations(continuous.solutions, 2):
        assert not dominates(a, b) and not dominates(b, a)

    try:
        space = build_action_space(snapped.solutions, u_target=6)
    except FrontError as err:
        print(
            "CRITERION 05 analysis: the search itself is correct (the snapped\n"
            "front equals the exhaustive 5x81 grid front and the continuous\n"
            "front is mutually non-dominated). The action-space size target is\n"
            "not attainable at this operating point: transmission delay is\n"
            "fully determined by the mode, so the front holds at most five\n"
            "points (one per mode), and at 200 bytes over 5 km only modes 2,\n"
            "3, and 5 survive domination - mode 4 needs the same airtime as\n"
            "mode 3 at a higher threshold power, and mode 1 is slower and\n"
            "costlier than mode 2 even at its cheapest feasible power. A\n"
            "seven-entry action set (wait + six designs) cannot be drawn from\n"
            "a three-point front; wait + three is the attainable maximum here.",
            flush=True,
        )
        report(5, False, f"front matches oracle but |A|=7 unreachable: {err}")
    else:
        report(5, len(space) == 7, f"front matches oracle, |A|={len(space)}")


def test_criterion_06_gradient_check():
    spec = NetworkSpec(input_width=4, hidden_width=5, recurrent_width=6, output_width=3)
    rng = np.random.default_rng(1123)
    worst = 0.0
    for _ in range(100):
        params = init_params(spec, rng)
        target = init_params(spec, rng)
        batch = {
            "obs": rng.normal(size=(2, 4, 3, spec.input_width)),
            "actions": rng.integers(0, spec.output_width, size=(2, 3, 3)),
            "rewards": rng.normal(size=(2, 3)),
            "done": np.zeros((2, 3)),
            "h0": rng.normal(size=(2, 3, spec.recurrent_width)) * 0.1,
        }
        batch["done"][rng.integers(0, 2), -1] = 1.0
        _, grads = loss_and_grad(params, target, batch, gamma=0.97)
        flat = flatten_params(spec, params)
        grad_flat = flatten_params(spec, grads)
        # eps large enough that roundoff in the loss difference stays well
        # below the smallest gradient components probed
        eps = 1e-5
        for idx in rng.choice(flat.size, size=6, replace=False):
            probe = flat.copy()
            probe[idx] += eps
            up, _ = loss_and_grad(unflatten_params(spec, probe), target, batch, 0.97)
            probe[idx] -= 2 * eps
            down, _ = loss_and_grad(unflatten_params(spec, probe), target, batch, 0.97)
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(grad_flat[idx]), 1e-8)
            worst = max(worst, abs(numeric - grad_flat[idx]) / denom)
    ok = worst < 1e-4
    report(6, ok, f"max relative error {worst:.3e} over 100 draws (<1e-4)")


def test_criterion_07_reward_and_mixing():
    cfg = RewardConfig(alpha=1.0, lambda_net=0.99, slot_s=1.0, horizon_slots=200)
    r = team_reward(3, 1, cfg)
    assert r == 2 / 198, f"team_reward(3, 1) = {r!r}, want 2/198 exactly"

    spec = NetworkSpec(input_width=6, hidden_width=8, recurrent_width=6, output_width=7)
    rng = np.random.default_rng(815)
    params = init_params(spec, rng)
    joints = list(itertools.product(range(7), repeat=3))
    for _ in range(20):
        obs = rng.normal(size=(3, spec.input_width))
        hidden = rng.normal(size=(3, spec.recurrent_width)) * 0.1
        q, _ = forward(params, obs, hidden)
        best_joint = max(
            joints, key=lambda a: mix_team_value(np.array([q[i, a[i]] for i in range(3)]))
        )
        greedy = tuple(int(np.argmax(q[i])) for i in range(3))
        assert best_joint == greedy
        assert mix_team_value(q[np.arange(3), greedy]) == pytest.approx(
            sum(q[i].max() for i in range(3)), abs=1e-12
        )
    report(7, True, "team_reward(3,1)=2/198 exactly; 7^3 joint enumeration matches "
                    "per-agent greedy decomposition on 20 draws")


@pytest.fixture(scope="module")
def trained_run():
    cfg = preset_config("desk")
    scenario = build_scenario(cfg)
    front = baseline_front(cfg, scenario.payload_bytes)
    space = build_action_space(front, cfg.front.u_target)
    trainer = Trainer(
        scenario,
        space,
        cfg.training.obs_mode,
        build_train_config(cfg),
        build_reward_config(cfg),
        seed=8,
    )
    return cfg, scenario, front, space, trainer.train()


def test_criterion_08_training_beats_baselines(trained_run, modem):
    cfg, scenario, front, space, result = trained_run
    assert result.best_eval_reward > 0.0

    bundles = {
        "marl": [
            MarlPolicy(result.spec, result.params, result.encoder, result.action_space)
            for _ in range(scenario.n_nodes)
        ],
        "random": [RandomPolicy(space) for _ in range(scenario.n_nodes)],
        "aloha": [aloha_plain(modem)] * scenario.n_nodes,
        "aloha_min_energy": [aloha_min_energy(front)] * scenario.n_nodes,
        "aloha_min_delay": [aloha_min_delay(front)] * scenario.n_nodes,
    }
    throughput = {}
    for name, bundle in bundles.items():
        throughput[name] = np.array([
            run_episode(scenario, bundle, np.random.SeedSequence((77, k))).metrics.throughput_pkt_s
            for k in range(10)
        ])
    marl = throughput["marl"]
    ratio = marl.mean() / throughput["random"].mean()
    best_aloha = np.max(
        [throughput[n] for n in ("aloha", "aloha_min_energy", "aloha_min_delay")], axis=0
    )
    wins = int(np.sum(marl > best_aloha))
    ok = ratio >= 1.5 and wins >= 8
    report(
        8,
        ok,
        f"20000-episode run: learned mean {marl.mean():.3f} pkt/s, "
        f"{ratio:.1f}x uniform-random (>=1.5x), beats best aloha on "
        f"{wins}/10 eval seeds (>=8)",
    )


def test_criterion_09_determinism(tmp_path, channel, modem, design_front):
    _, front = design_front
    cfg = preset_config("desk")
    scenario = build_scenario(cfg)

    # one episode, stochastic policies, byte-identical event log
    logs = []
    for run in range(2):
        bundle = [RandomPolicy(build_action_space(front, 3)) for _ in range(3)]
        result = run_episode(scenario, bundle, 123)
        path = tmp_path / f"episode-{run}.log"
        write_event_log(path, result.events)
        logs.append(path.read_bytes())
    episode_ok = logs[0] == logs[1]

    # a small sweep, byte-identical results table
    tiny = parse_config({
        "scenario": {"horizon_slots": 40},
        "experiments": {"policies": ["aloha"], "rate_sweep": [0.5, 1.5],
                        "replications": 2, "master_seed": 5},
    })
    tables = []
    for run in range(2):
        path = tmp_path / f"sweep-{run}.csv"
        write_results_csv(run_sweep(tiny, kind="rate"), path)
        tables.append(path.read_bytes())
    sweep_ok = tables[0] == tables[1]

    # a training micro-run, identical parameters and log
    short = dataclasses.replace(scenario, horizon_slots=40)
    train_cfg = dataclasses.replace(
        build_train_config(cfg),
        episodes=24, anneal_episodes=12, eval_interval=8, eval_episodes=2,
        buffer_transitions=2000,
    )
    runs = [
        Trainer(short, build_action_space(front, 3), "full", train_cfg,
                build_reward_config(cfg), seed=5).train()
        for _ in range(2)
    ]
    train_ok = runs[0].log == runs[1].log and all(
        np.array_equal(runs[0].params[k], runs[1].params[k]) for k in PARAM_ORDER
    )
    ok = episode_ok and sweep_ok and train_ok
    report(
        9,
        ok,
        f"episode log identical: {episode_ok}, sweep table identical: "
        f"{sweep_ok}, training run identical: {train_ok}",
    )


def test_criterion_10_metric_identities(channel, modem, design_front):
    _, front = design_front
    cfg = preset_config("desk")
    scenario = build_scenario(cfg)
    schedule = build_nf_tdma_schedule(scenario, modem, channel)
    bundles = {
        "aloha": lambda: [aloha_plain(modem)] * 3,
        "aloha_min_delay": lambda: [aloha_min_delay(front)] * 3,
        "random": lambda: [RandomPolicy(build_action_space(front, 3)) for _ in range(3)],
        "nf_tdma": lambda: [NfTdmaPolicy(schedule) for _ in range(3)],
        "wait": lambda: [WaitPolicy() for _ in range(3)],
    }
    episodes = 0
    for name, make in bundles.items():
        for rep in range(3):
            result = run_episode(scenario, make(), np.random.SeedSequence((91, rep)))
            m, ledger = result.metrics, result.ledger
            assert m.sent == len(result.events)
            outcomes = [e.outcome for e in result.events]
            assert m.received == outcomes.count(EventOutcome.RECEIVED)
            assert m.conflicts == outcomes.count(EventOutcome.CONFLICT)
            assert sum(r for r, _ in result.slot_counts) == m.received
            if m.sent:
                assert m.delivery_ratio * m.sent == pytest.approx(m.received, abs=1e-9)
            else:
                assert m.delivery_ratio is None
            assert 0.0 <= m.utilization <= 1.0
            for i in range(3):
                tx = sum(e.energy_j for e in result.events if e.sender == i)
                assert ledger.tx_j[i] == pytest.approx(tx, abs=1e-9)
                assert ledger.recv_j[i] >= 0.0 and ledger.idle_j[i] >= 0.0
                assert ledger.node_total(i) == pytest.approx(
                    ledger.tx_j[i] + ledger.recv_j[i] + ledger.idle_j[i], abs=0.0
                )
            # the sink is either receiving or idle for the whole window
            sink_s = (
                ledger.sink_recv_j / scenario.recv_power_w
                + ledger.sink_idle_j / scenario.idle_power_w
            )
            assert sink_s == pytest.approx(scenario.horizon_s, abs=1e-6)
            episodes += 1
    report(
        10,
        True,
        f"delivery*sent=received, utilization in [0,1], energy partition "
        f"over {episodes} episodes, 5 policies",
    )
