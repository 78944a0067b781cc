import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etdgrid.qnet import (DEFAULT_SIZES, AdamState, Batch, Checkpoint, CheckpointError, QNetworkParams,
                          ReplayBuffer, ReplayTransition, TrainingError, etd_target, forward, init_params,
                          load_checkpoint, loss_and_grad, save_checkpoint, select_action, sync_target,
                          td_target, train_batch)

from oracles import fd_gradient, loop_forward


def _random_batch(rng, n=64, dim=22, g1=None):
    return Batch(rng.uniform(0, 1, (n, dim)), rng.integers(0, 5, n), rng.normal(0, 5, n),
                 rng.uniform(0, 1, (n, dim)), rng.random(n) < 0.1,
                 np.ones(n) if g1 is None else np.full(n, g1))


def test_zero_network():
    assert np.all(forward(QNetworkParams.zeros(), np.ones(22)) == 0)


def test_relu_pass_through_chain():
    p = QNetworkParams.zeros()
    for w in p.weights:
        w[3 if w is p.weights[0] else 0, 0] = 1.0
    state = np.zeros(22)
    state[3] = 0.734
    assert forward(p, state)[0] == 0.734


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(4)
    p = init_params(DEFAULT_SIZES, rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    s = rng.uniform(-1, 1, 22)
    np.testing.assert_allclose(forward(p, s), loop_forward(p.weights, p.biases, s), rtol=0, atol=1e-12)
    batch = rng.uniform(-1, 1, (3, 22))
    np.testing.assert_allclose(forward(p, batch)[1], forward(p, batch[1]), rtol=0, atol=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(QNetworkParams.zeros(), np.ones(21))


def test_td_targets():
    q = np.array([0.1, 2.0, -1.0, 0.5, 1.9])
    assert td_target(0.5, q, 0.99, True) == 0.5
    assert td_target(0.5, q, 0.99, False) == pytest.approx(2.48, abs=1e-12)
    assert td_target(0.5, q, 0.0, False) == 0.5


def test_etd_targets():
    q = np.array([0.1, 2.0, -1.0, 0.5, 1.9])
    assert etd_target(0.5, q, 0.99, 1.0, False) == td_target(0.5, q, 0.99, False)
    assert etd_target(0.5, q, 0.99, 0.9, False) == pytest.approx(2.282, abs=1e-12)
    assert etd_target(0.0, np.array([1.0, 0, 0, 0, 0]), 0.99, 0.941044, False) == pytest.approx(0.931634, abs=1e-6)
    assert etd_target(0.7, q, 0.99, 0.8, True) == 0.7
    with pytest.raises(ValueError):
        etd_target(0.0, q, 0.99, 0.4, False)


@given(st.floats(-100, 100), st.lists(st.floats(0, 100), min_size=5, max_size=5), st.floats(0.5, 1.0))
def test_etd_target_no_larger_than_td_for_nonnegative_bootstrap(r, q, g1):
    q = np.array(q)
    etd = etd_target(r, q, 0.99, g1, False)
    td = td_target(r, q, 0.99, False)
    assert abs(etd - r) <= abs(td - r) + 1e-12
    assert abs(td) <= abs(r) + 0.99 * np.max(np.abs(q)) + 1e-9


def test_fixed_point_batch_leaves_params():
    rng = np.random.default_rng(0)
    p = init_params(DEFAULT_SIZES, rng)
    target = sync_target(p)
    b = _random_batch(rng)
    # terminal transitions whose reward equals the current prediction: target == Q(s, a) exactly
    q = forward(p, b.states)[np.arange(64), b.actions]
    b = b._replace(rewards=q, terminals=np.ones(64, dtype=bool))
    adam = AdamState.for_params(p)
    before = p.copy()
    train_batch(p, target, adam, b, 0.99, 1e-3)
    assert max(np.max(np.abs(x - y)) for x, y in zip(p.arrays(), before.arrays())) < 1e-12


def test_exact_zero_gradient_skips_adam_step():
    p = QNetworkParams.zeros()
    adam = AdamState.for_params(p)
    b = _random_batch(np.random.default_rng(1), 8)._replace(rewards=np.zeros(8))
    train_batch(p, p.copy(), adam, b, 0.99, 1e-3)
    assert adam.step == 0 and all(np.all(a == 0) for a in p.arrays())


def test_etd_with_unit_discount_is_bitwise_td():
    rng = np.random.default_rng(7)
    p1 = init_params(DEFAULT_SIZES, rng)
    p2 = p1.copy()
    t = sync_target(p1)
    a1, a2 = AdamState.for_params(p1), AdamState.for_params(p2)
    for _ in range(5):
        b = _random_batch(rng)
        train_batch(p1, t, a1, b, 0.99, 1e-3, mode="td")
        train_batch(p2, t, a2, b, 0.99, 1e-3, mode="etd")
    assert p1.digest() == p2.digest()


def test_etd_discount_changes_update():
    rng = np.random.default_rng(8)
    p1 = init_params(DEFAULT_SIZES, rng)
    p2 = p1.copy()
    t = sync_target(p1)
    b = _random_batch(rng, g1=0.9)
    train_batch(p1, t, AdamState.for_params(p1), b, 0.99, 1e-3, mode="td")
    train_batch(p2, t, AdamState.for_params(p2), b, 0.99, 1e-3, mode="etd")
    assert p1.digest() != p2.digest()


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    p = init_params((22, 7, 6, 5), rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    states = rng.uniform(0, 1, (4, 22))
    actions = rng.integers(0, 5, 4)
    targets = rng.normal(0, 2, 4)
    _, gw, gb = loss_and_grad(p, states, actions, targets)
    analytic = np.concatenate([g.ravel() for pair in zip(gw, gb) for g in pair])
    numeric = fd_gradient(p, states, actions, targets)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    assert rel.max() < 1e-4


def test_non_finite_loss_raises():
    p = init_params(DEFAULT_SIZES, np.random.default_rng(0))
    b = _random_batch(np.random.default_rng(0))._replace(rewards=np.full(64, np.inf))
    with pytest.raises(TrainingError, match="non-finite"):
        train_batch(p, p.copy(), AdamState.for_params(p), b, 0.99, 1e-3)


def test_select_action():
    p = QNetworkParams.zeros((22, 5))
    p.biases[0][:] = [1, 3, 3, 0, 2]
    rng = np.random.default_rng(0)
    assert all(select_action(p, np.zeros(22), 0.0, rng) == 1 for _ in range(20))
    counts = np.bincount([select_action(p, np.zeros(22), 1.0, rng) for _ in range(100_000)], minlength=5)
    expected = 100_000 / 5
    sd = np.sqrt(100_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - expected) < 3 * sd)
    with pytest.raises(ValueError):
        select_action(p, np.zeros(22), 1.5, rng)


def test_sync_target_copies():
    rng = np.random.default_rng(3)
    p = init_params(DEFAULT_SIZES, rng)
    t = sync_target(p)
    s = rng.uniform(0, 1, 22)
    np.testing.assert_array_equal(forward(p, s), forward(t, s))
    digest = t.digest()
    adam = AdamState.for_params(p)
    for _ in range(10):
        train_batch(p, t, adam, _random_batch(rng), 0.99, 1e-3)
    p.weights[0][0, 0] += 1.0
    assert t.digest() == digest and p.digest() != digest


def test_replay_fifo_and_sampling():
    buf = ReplayBuffer(3, 2)
    for i in range(5):
        buf.push([i, i], i % 5, float(i), [i + 1, i + 1], False, 1.0)
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.contents().rewards, [2.0, 3.0, 4.0])
    s1 = buf.sample(16, np.random.default_rng(9))
    s2 = buf.sample(16, np.random.default_rng(9))
    np.testing.assert_array_equal(s1.rewards, s2.rewards)
    assert set(s1.rewards) <= {2.0, 3.0, 4.0}
    with pytest.raises(ValueError):
        buf.push([0, 0], 5, 0.0, [0, 0], False)
    with pytest.raises(ValueError):
        buf.push([0, 0], 1, 0.0, [0, 0], False, gamma_prime_1=0.3)
    with pytest.raises(ValueError):
        ReplayTransition(np.zeros(2), 0, 0.0, np.zeros(2), False, 1.2)


def test_replay_sampling_uniform():
    buf = ReplayBuffer(10, 1)
    for i in range(10):
        buf.push([i], 0, float(i), [i], False)
    counts = np.bincount(buf.sample(100_000, np.random.default_rng(0)).rewards.astype(int), minlength=10)
    assert np.all(np.abs(counts - 10_000) < 3 * np.sqrt(100_000 * 0.1 * 0.9))


def test_transition_list_batch():
    rng = np.random.default_rng(2)
    p = init_params(DEFAULT_SIZES, rng)
    ts = [ReplayTransition(rng.uniform(0, 1, 22), int(rng.integers(5)), 1.0, rng.uniform(0, 1, 22), False, 0.95)
          for _ in range(4)]
    _, _, loss = train_batch(p, p.copy(), AdamState.for_params(p), ts, 0.99, 1e-3, mode="etd")
    assert np.isfinite(loss)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    p = init_params(DEFAULT_SIZES, rng)
    adam = AdamState.for_params(p)
    train_batch(p, p.copy(), adam, _random_batch(rng), 0.99, 1e-3)
    ck = Checkpoint(p, sync_target(p), adam, rng.bit_generator.state, {"note": "x"})
    save_checkpoint(tmp_path / "c.json", ck)
    back = load_checkpoint(tmp_path / "c.json", DEFAULT_SIZES)
    assert back.params.digest() == p.digest() and back.target.digest() == p.digest()
    assert back.adam.step == 1
    for a, b in zip(back.adam.v, adam.v):
        np.testing.assert_array_equal(a, b)
    r2 = np.random.default_rng()
    r2.bit_generator.state = back.rng_state
    assert r2.random() == rng.random()
    save_checkpoint(tmp_path / "d.json", ck)
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    save_checkpoint(tmp_path / "c.json", Checkpoint(QNetworkParams.zeros((22, 8, 5))))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.json", DEFAULT_SIZES)
    text = (tmp_path / "c.json").read_text().replace('"layer_sizes": [\n  22,\n  8,', '"layer_sizes": [\n  22,\n  9,')
    (tmp_path / "e.json").write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "e.json")
