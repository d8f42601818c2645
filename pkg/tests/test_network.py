import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vampnet import network, vampscore
from vampnet.dataset import lagged_pairs, split
from vampnet.errors import DimensionError, ParseError
from vampnet.network import NetworkModel, Topology, TrainConfig


def test_build_topology_rule():
    assert network.build_topology(30, 6, 5).layer_sizes == [30, 22, 16, 12, 9, 6]
    assert network.build_topology(8, 2, 2).layer_sizes == [8, 4, 2]


def test_build_topology_explicit_and_dropout_default():
    t = network.build_topology(1, 5, explicit=[1, 5, 10, 5])
    assert t.layer_sizes == [1, 5, 10, 5]
    assert t.dropout_rates == [0.1, 0.1]
    t = network.build_topology(30, 6, 5)
    assert t.dropout_rates == [0.1, 0.1, 0.0, 0.0]


def test_topology_errors():
    with pytest.raises(ValueError):
        network.build_topology(1, 1, explicit=[3])
    with pytest.raises(ValueError):
        Topology([2, 0, 2])
    with pytest.raises(ValueError):
        Topology([2, 3, 2], [1.0])


def test_zero_weights_uniform_output():
    m = NetworkModel.initialize(Topology([3, 4, 5]))
    m.weights = [np.zeros_like(w) for w in m.weights]
    out = network.forward(m, np.random.default_rng(0).standard_normal((7, 3)))
    np.testing.assert_allclose(out, 0.2, atol=1e-15)


def test_softmax_saturates_to_one_hot():
    m = NetworkModel.initialize(Topology([4, 4]))
    m.weights = [1000.0 * np.eye(4)]
    x = np.random.default_rng(1).standard_normal((20, 4))
    out = network.forward(m, x)
    np.testing.assert_allclose(out, np.eye(4)[np.argmax(x, axis=1)], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_rows_sum_to_one(seed, scale):
    m = NetworkModel.initialize(Topology([3, 8, 6, 4], [0.2, 0.0]), seed=seed)
    x = scale * np.random.default_rng(seed).standard_normal((50, 3))
    for mode, rng in (("infer", None), ("train", np.random.default_rng(seed))):
        out = network.forward(m, x, mode, rng)
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=1) - 1)) <= 1e-12


def test_infer_is_pure_and_dropout_only_in_train():
    m = NetworkModel.initialize(Topology([2, 10, 3], [0.5]), seed=3)
    x = np.random.default_rng(0).standard_normal((30, 2))
    a, b = network.forward(m, x), network.forward(m, x)
    assert a.tobytes() == b.tobytes()
    t = network.forward(m, x, "train", np.random.default_rng(1))
    assert not np.allclose(a, t)


def test_forward_width_mismatch():
    m = NetworkModel.initialize(Topology([2, 3]))
    with pytest.raises(DimensionError):
        network.forward(m, np.zeros((4, 3)))


def _grad_setup(sizes, seed, t=100):
    rng = np.random.default_rng(seed)
    m = NetworkModel.initialize(Topology(sizes), seed=seed)
    for b in m.biases:
        b[:] = rng.normal(0, 0.3, b.shape)  # move away from ReLU kinks at zero bias
    x0 = rng.standard_normal((t, sizes[0]))
    x1 = 0.8 * x0 + 0.6 * rng.standard_normal((t, sizes[0]))
    return m, x0, x1


def _analytic_grads(m, x0, x1, cfg, power, l2h, l2o):
    y0, c0 = network.forward(m, x0, return_cache=True)
    y1, c1 = network.forward(m, x1, return_cache=True)
    _, up = vampscore.score_and_gradients(y0.T, y1.T, cfg, power)
    return network.backward(m, c0, c1, up, l2h, l2o)


def _fd_grads(m, x0, x1, cfg, power, l2h, l2o, h=1e-6):
    out = []
    for p in m.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = network.objective(m, x0, x1, cfg, power, l2h, l2o)
            p[idx] = old - h
            fm = network.objective(m, x0, x1, cfg, power, l2h, l2o)
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def _rel(a, b):
    scale = max(max(np.max(np.abs(x)) for x in b), 1e-12)
    return max(np.max(np.abs(x - y)) for x, y in zip(a, b)) / scale


def test_backward_matches_finite_differences_153():
    m, x0, x1 = _grad_setup([1, 5, 3], 0)
    cfg = vampscore.ScoreConfig()
    a = _analytic_grads(m, x0, x1, cfg, 2, 1e-3, 1e-4)
    f = _fd_grads(m, x0, x1, cfg, 2, 1e-3, 1e-4)
    assert _rel(a, f) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_backward_random_small_nets(seed):
    sizes = [[2, 4, 3], [3, 5, 3], [1, 5, 10, 5], [2, 6, 4, 3]][seed % 4]
    power, k = [(2, None), (1, None), (2, 2)][seed % 3]
    m, x0, x1 = _grad_setup(sizes, seed)
    cfg = vampscore.ScoreConfig(k=k)
    a = _analytic_grads(m, x0, x1, cfg, power, 0.0, 0.0)
    f = _fd_grads(m, x0, x1, cfg, power, 0.0, 0.0)
    assert _rel(a, f) < 1e-5


def test_zero_upstream_zero_gradient():
    m, x0, x1 = _grad_setup([2, 4, 3], 1)
    _, c0 = network.forward(m, x0, return_cache=True)
    _, c1 = network.forward(m, x1, return_cache=True)
    z = vampscore.GradientPair(np.zeros((3, 100)), np.zeros((3, 100)))
    assert all(not np.any(g) for g in network.backward(m, c0, c1, z))
    grads = network.backward(m, c0, c1, z, l2_hidden=0.1, l2_output=0.01)
    np.testing.assert_allclose(grads[0], 2 * 0.1 * m.weights[0])
    np.testing.assert_allclose(grads[1], 2 * 0.01 * m.weights[1])
    assert not np.any(grads[2]) and not np.any(grads[3])


def test_adam_zero_gradient_fixed_point():
    p = [np.array([1.0, -2.0])]
    st_ = network.AdamState.zeros_like(p)
    network.adam_step(p, [np.zeros(2)], st_, 0.1)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_hand_computed():
    p = [np.array([1.0, -2.0, 0.5])]
    g = np.array([0.3, -4.0, 1e-3])
    st_ = network.AdamState.zeros_like(p)
    network.adam_step(p, [g], st_, 0.01)
    # m_hat = g, v_hat = g^2 after bias correction
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p[0], expected, rtol=1e-12)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(4)
        p = [np.zeros(3)]
        s = network.AdamState.zeros_like(p)
        for _ in range(50):
            network.adam_step(p, [rng.standard_normal(3)], s, 0.05)
        return p[0]

    assert run().tobytes() == run().tobytes()


def test_checkpoint_round_trip(tmp_path):
    m = NetworkModel.initialize(Topology([5, 7, 4, 2], [0.1, 0.0]), seed=2 ** 63 + 5)
    m.input_shift0 = np.arange(5.0)
    m.input_shift1 = -np.arange(5.0)
    path = tmp_path / "m.vnet"
    network.save_checkpoint(m, path)
    raw = path.read_bytes()
    assert raw[:5] == b"VNET1"
    back = network.load_checkpoint(path)
    assert back.topology == m.topology and back.rng_seed == m.rng_seed
    for a, b in zip(m.params + [m.input_shift0, m.input_shift1],
                    back.params + [back.input_shift0, back.input_shift1]):
        assert a.tobytes() == b.tobytes()
    x = np.random.default_rng(0).standard_normal((10, 5))
    assert m(x).tobytes() == back(x).tobytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ParseError):
        network.load_checkpoint(path)
    path.write_bytes(b"VNET2" + raw[5:])
    with pytest.raises(ParseError):
        network.load_checkpoint(path)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(pretrain_fraction=1.5)
    with pytest.raises(ValueError):
        TrainConfig(schedule_unit="step")


# training on double-well data

@pytest.fixture(scope="module")
def dw_setup(dw_traj):
    ds = lagged_pairs([dw_traj], 1)
    sp = split(ds, 0.1, seed=123)
    topo = Topology([1, 5, 10, 5], [0.0, 0.0])
    return ds, sp, topo


@pytest.fixture(scope="module")
def dw_trained(dw_setup):
    ds, sp, topo = dw_setup
    return network.train(ds, sp, topo, TrainConfig(k=4, epochs=40, seed=5))


def _two_state_score(ds, idx, cfg):
    s0 = (ds.frames0(idx)[:, 0] >= 0).astype(float)
    s1 = (ds.frames1(idx)[:, 0] >= 0).astype(float)
    x = np.vstack([s0, 1 - s0])
    y = np.vstack([s1, 1 - s1])
    return vampscore.vamp2_score(vampscore.covariances(x, y), cfg)


def test_trained_beats_sign_discretization(dw_setup, dw_trained):
    ds, sp, _ = dw_setup
    model, report = dw_trained
    cfg = vampscore.ScoreConfig(k=4)
    assert report.completed and not report.diverged
    assert len(report.val_scores) == len(report.train_scores) == len(report.learning_rates) == 40
    assert report.final_val_score > _two_state_score(ds, sp.validation, cfg)
    v = sp.validation
    y0 = model.transform(ds.frames0(v), lobe=0)
    y1 = model.transform(ds.frames1(v), lobe=1)
    assert report.final_val_score == pytest.approx(vampscore.vamp2_score(vampscore.covariances(y0.T, y1.T), cfg), abs=1e-12)


def test_training_ascends(dw_trained):
    _, report = dw_trained
    assert report.train_scores[-1] > report.train_scores[0]
    assert any(e["event"] == "switch_to_vamp2" for e in report.events)


def test_validation_close_to_training_on_fresh_split(dw_setup, dw_trained):
    ds, _, _ = dw_setup
    model, _ = dw_trained
    fresh = split(ds, 0.1, seed=999)
    cfg = vampscore.ScoreConfig(k=4)
    v = vampscore.validation_score(model, ds, cfg, fresh.validation)
    t = vampscore.validation_score(model, ds, cfg, fresh.train)
    assert abs(v - t) <= 0.1 * t


def test_training_deterministic(dw_setup):
    ds, sp, topo = dw_setup
    cfg = TrainConfig(k=4, epochs=3, seed=8)
    a, ra = network.train(ds, sp, topo, cfg)
    b, rb = network.train(ds, sp, topo, cfg)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params, b.params))
    assert ra.val_scores == rb.val_scores


@pytest.mark.parametrize("frac", [0.0, 1.0])
def test_pretrain_boundaries(dw_setup, frac):
    ds, sp, topo = dw_setup
    model, report = network.train(ds, sp, topo, TrainConfig(k=4, epochs=3, pretrain_fraction=frac))
    assert report.completed and report.best_epoch >= 0


def test_dropout_training_runs(dw_setup):
    ds, sp, _ = dw_setup
    _, report = network.train(ds, sp, Topology([1, 5, 10, 5], [0.1, 0.1]), TrainConfig(k=4, epochs=2))
    assert report.completed


def test_lr_decays_after_ten_stagnant_checks(dw_setup):
    ds, sp, topo = dw_setup
    # a vanishing step size keeps the validation score frozen
    cfg = TrainConfig(k=4, epochs=12, lr0=1e-300, pretrain_fraction=0.0)
    _, report = network.train(ds, sp, topo, cfg)
    assert report.learning_rates[:10] == [1e-300] * 10
    assert report.learning_rates[10] == pytest.approx(1e-301)
    assert {"epoch": 10, "event": "lr_decay", "lr": report.learning_rates[10]} in report.events


def test_train_rejects_tiny_sets(dw_setup):
    ds, _, topo = dw_setup
    from vampnet.dataset import SplitIndices
    with pytest.raises(ValueError):
        network.train(ds, SplitIndices(np.arange(10), np.array([10]), 0, 0.1), topo, TrainConfig())


def test_divergence_is_reported_not_raised(dw_setup, monkeypatch):
    ds, sp, topo = dw_setup
    calls = {"n": 0}
    real = vampscore.score_and_gradients

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] > 30:
            raise network.NumericalError("injected")
        return real(*a, **kw)

    monkeypatch.setattr(vampscore, "score_and_gradients", flaky)
    model, report = network.train(ds, sp, topo, TrainConfig(k=4, epochs=10, pretrain_fraction=0.0))
    assert report.diverged and not report.completed
    assert len(report.val_scores) == 2  # 12 batches per epoch
    assert report.events[-1]["event"] == "diverged"
