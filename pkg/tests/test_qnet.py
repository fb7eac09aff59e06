"""Recurrent value network: forward pass, gradients, optimizer, checkpoints."""

import numpy as np
import pytest

from uansim import qnet


TINY = qnet.NetworkSpec(input_width=4, hidden_width=5, recurrent_width=6, output_width=3)


def tiny_batch(rng, spec=TINY, B=2, W=3, N=2):
    return {
        "obs": rng.normal(size=(B, W + 1, N, spec.input_width)),
        "actions": rng.integers(0, spec.output_width, size=(B, W, N)),
        "rewards": rng.normal(size=(B, W)),
        "done": (rng.random(size=(B, W)) < 0.25).astype(float),
        "h0": rng.normal(size=(B, N, spec.recurrent_width)),
    }


def test_init_shapes_and_ranges():
    params = qnet.init_params(TINY, np.random.default_rng(0))
    shapes = TINY.shapes()
    assert set(params) == set(qnet.PARAM_ORDER)
    for name, arr in params.items():
        assert arr.shape == shapes[name]
        assert arr.dtype == np.float64
        if name.startswith("b"):
            assert np.all(arr == 0.0)
        else:
            bound = 1.0 / np.sqrt(arr.shape[1])
            assert np.all(np.abs(arr) <= bound)


def test_forward_shapes_and_hidden_propagation():
    rng = np.random.default_rng(1)
    params = qnet.init_params(TINY, rng)
    x = rng.normal(size=(3, TINY.input_width))
    h = np.zeros((3, TINY.recurrent_width))
    q, h1 = qnet.forward(params, x, h)
    assert q.shape == (3, TINY.output_width)
    assert h1.shape == (3, TINY.recurrent_width)
    # feeding the new hidden state back changes the output
    q2, _ = qnet.forward(params, x, h1)
    assert not np.allclose(q, q2)


def test_forward_accepts_single_row():
    rng = np.random.default_rng(2)
    params = qnet.init_params(TINY, rng)
    q, h = qnet.forward(params, rng.normal(size=TINY.input_width),
                        np.zeros((1, TINY.recurrent_width)))
    assert q.shape == (1, TINY.output_width)


def test_gru_state_is_bounded():
    rng = np.random.default_rng(3)
    params = qnet.init_params(TINY, rng)
    h = np.zeros((1, TINY.recurrent_width))
    for _ in range(200):
        _, h = qnet.forward(params, rng.normal(size=(1, TINY.input_width)) * 10, h)
    # the gating keeps the state inside the tanh band
    assert np.all(np.abs(h) <= 1.0 + 1e-9)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        params = qnet.init_params(TINY, rng)
        target = qnet.init_params(TINY, rng)
        batch = tiny_batch(rng)
        _, grads = qnet.loss_and_grad(params, target, batch, gamma=0.99)
        flat = qnet.flatten_params(TINY, params)
        gflat = qnet.flatten_params(TINY, grads)
        for j in rng.choice(flat.size, size=6, replace=False):
            eps = 1e-6
            fp = flat.copy(); fp[j] += eps
            fm = flat.copy(); fm[j] -= eps
            lp, _ = qnet.loss_and_grad(qnet.unflatten_params(TINY, fp), target, batch, 0.99)
            lm, _ = qnet.loss_and_grad(qnet.unflatten_params(TINY, fm), target, batch, 0.99)
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num), abs(gflat[j]), 1e-8)
            worst = max(worst, abs(num - gflat[j]) / denom)
    assert worst < 1e-4


def test_td_targets_bootstrap_masking():
    rng = np.random.default_rng(4)
    target = qnet.init_params(TINY, rng)
    B, W, N = 1, 2, 2
    obs = rng.normal(size=(B, W + 1, N, TINY.input_width))
    rewards = np.array([[1.0, 2.0]])
    h0 = np.zeros((B, N, TINY.recurrent_width))
    y_open = qnet.td_targets(target, obs, rewards, np.zeros((B, W)), h0, gamma=0.9)
    y_done = qnet.td_targets(target, obs, rewards, np.array([[0.0, 1.0]]), h0, gamma=0.9)
    # terminal step: the bootstrap term vanishes, leaving the raw reward
    assert y_done[0, 1] == pytest.approx(2.0)
    assert y_open[0, 1] != pytest.approx(2.0)
    # non-terminal steps are unaffected by the final done flag
    assert y_open[0, 0] == pytest.approx(y_done[0, 0])


def test_td_targets_use_summed_agent_maxima():
    rng = np.random.default_rng(5)
    target = qnet.init_params(TINY, rng)
    B, W, N = 1, 1, 2
    obs = rng.normal(size=(B, W + 1, N, TINY.input_width))
    h0 = np.zeros((B, N, TINY.recurrent_width))
    rewards = np.zeros((B, W))
    y = qnet.td_targets(target, obs, rewards, np.zeros((B, W)), h0, gamma=1.0)
    # replicate by hand: unroll the target net over both steps
    q0, h1 = qnet.forward(target, obs[0, 0], h0[0])
    q1, _ = qnet.forward(target, obs[0, 1], h1)
    assert y[0, 0] == pytest.approx(q1.max(axis=1).sum())


def test_loss_is_squared_td_error():
    rng = np.random.default_rng(6)
    params = qnet.init_params(TINY, rng)
    batch = tiny_batch(rng)
    loss, _ = qnet.loss_and_grad(params, params, batch, gamma=0.99)
    y = qnet.td_targets(params, batch["obs"], batch["rewards"], batch["done"],
                        batch["h0"], 0.99)
    # recompute Q_team by hand
    B, W, N = batch["actions"].shape
    deltas = []
    h = batch["h0"].reshape(B * N, -1)
    for t in range(W):
        q, h = qnet.forward(params, batch["obs"][:, t].reshape(B * N, -1), h)
        chosen = q[np.arange(B * N), batch["actions"][:, t].ravel()]
        deltas.append(chosen.reshape(B, N).sum(axis=1) - y[:, t])
    want = np.mean(np.concatenate(deltas) ** 2)
    assert loss == pytest.approx(want, rel=1e-12)


def test_rmsprop_matches_reference_formula():
    spec = qnet.NetworkSpec(1, 1, 1, 1)
    opt = qnet.RmsProp(spec, smoothing=0.9, eps=1e-8)
    params = {name: np.ones(shape) for name, shape in spec.shapes().items()}
    grads = {name: np.full(shape, 0.5) for name, shape in spec.shapes().items()}
    before = params["w1"].copy()
    opt.apply(params, grads, lr=0.1)
    sq = 0.1 * 0.5**2
    want = before - 0.1 * 0.5 / (np.sqrt(sq) + 1e-8)
    assert params["w1"] == pytest.approx(want, rel=1e-12)
    # second step accumulates the square average
    opt.apply(params, grads, lr=0.1)
    sq2 = 0.9 * sq + 0.1 * 0.25
    want2 = want - 0.1 * 0.5 / (np.sqrt(sq2) + 1e-8)
    assert params["w1"] == pytest.approx(want2, rel=1e-12)


def test_td_update_reduces_loss_on_fixed_batch():
    rng = np.random.default_rng(8)
    params = qnet.init_params(TINY, rng)
    target = qnet.sync_target(params)
    opt = qnet.RmsProp(TINY)
    batch = tiny_batch(rng)
    losses = [qnet.td_update(params, target, opt, batch, 0.99, lr=5e-3) for _ in range(60)]
    assert losses[-1] < losses[0] * 0.5


def test_sync_target_detaches_storage():
    rng = np.random.default_rng(9)
    params = qnet.init_params(TINY, rng)
    target = qnet.sync_target(params)
    params["w1"][0, 0] += 1.0
    assert target["w1"][0, 0] != params["w1"][0, 0]


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    params = qnet.init_params(TINY, rng)
    path = tmp_path / "net.ckpt"
    qnet.save_checkpoint(path, TINY, params, meta={"note": "x", "k": 3})
    spec2, params2, meta = qnet.load_checkpoint(path)
    assert spec2 == TINY
    assert meta == {"note": "x", "k": 3}
    for name in qnet.PARAM_ORDER:
        assert np.array_equal(params[name], params2[name])
    with open(path, "rb") as fh:
        assert fh.read(8) == qnet.CHECKPOINT_MAGIC


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTAQNET" + b"\x00" * 64)
    with pytest.raises(ValueError):
        qnet.load_checkpoint(path)


def test_flatten_unflatten_roundtrip():
    rng = np.random.default_rng(11)
    params = qnet.init_params(TINY, rng)
    flat = qnet.flatten_params(TINY, params)
    back = qnet.unflatten_params(TINY, flat)
    for name in qnet.PARAM_ORDER:
        assert np.array_equal(params[name], back[name])
