import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdflow.datagen import Dataset
from vdflow.dynamics import DivergenceError
from vdflow.fml import (
    FlowMapNet,
    MlpArchitecture,
    TrainConfig,
    dataset_loss,
    fml_predict,
    forward,
    grad_check,
    init_net,
    load_fml,
    save_fml,
    train_fml,
    transfer_correct,
)
from vdflow.localparam import BasisSpec, GlobalParams


def _dataset(s_in, p, s_out):
    return Dataset(model="test", dt=0.01, s_in=np.asarray(s_in, dtype=float),
                   p=np.asarray(p, dtype=float), s_out=np.asarray(s_out, dtype=float),
                   group_id=np.arange(len(s_in)))


def _affine_dataset(rng, n=600):
    A = np.array([[0.9, 0.1], [-0.05, 1.02]])
    c = np.array([0.01, -0.02])
    s_in = rng.uniform(-1, 1, size=(n, 2))
    p = rng.uniform(-1, 1, size=(n, 1))
    s_out = s_in @ A.T + c + 0.3 * p
    return _dataset(s_in, p, s_out)


def test_zero_net_is_identity():
    arch = MlpArchitecture(n_s=3, n_par=2, hidden_layers=2, hidden_width=8)
    net = init_net(arch, seed=0)
    for W in net.weights:
        W[:] = 0.0
    s = np.array([[0.4, -1.2, 7.0], [0.0, 0.0, 0.0]])
    p = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert np.array_equal(forward(net, s, p), s)


def test_forward_hand_value():
    # 1-1-1 tanh net with unit weights, zero bias: out = s + tanh(s)
    arch = MlpArchitecture(n_s=1, n_par=1, hidden_layers=1, hidden_width=1)
    net = init_net(arch, seed=0)
    net.weights[0][:] = [[1.0], [0.0]]  # hidden sees only the state input
    net.weights[1][:] = [[1.0]]
    out = forward(net, np.array([0.5]), np.array([0.0]))
    assert out[0] == pytest.approx(0.5 + math.tanh(0.5), abs=1e-12)


def test_glorot_init_bounds_and_determinism():
    arch = MlpArchitecture(n_s=2, n_par=2, hidden_layers=2, hidden_width=16)
    a = init_net(arch, seed=5)
    b = init_net(arch, seed=5)
    for Wa, Wb in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb)
        bound = math.sqrt(6.0 / sum(Wa.shape))
        assert np.all(np.abs(Wa) <= bound)
    c = init_net(arch, seed=6)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_train_learns_affine_map():
    rng = np.random.default_rng(0)
    ds = _affine_dataset(rng, n=4096)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=3, hidden_width=20)
    net = train_fml(ds, arch, TrainConfig(epochs=2000, lr=1e-5, lr_max=3e-3,
                                          cycle_epochs=1000, seed=0))
    assert net.final_loss <= 1e-6


def test_training_halves_initial_loss():
    rng = np.random.default_rng(1)
    ds = _affine_dataset(rng)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=2, hidden_width=12)
    start = train_fml(ds, arch, TrainConfig(epochs=0, seed=0))
    loss0 = dataset_loss(start, ds.s_in, ds.p, ds.s_out)
    net = train_fml(ds, arch, TrainConfig(epochs=200, lr=2e-3, seed=0))
    assert net.final_loss <= 0.5 * loss0


def test_single_pair_memorized():
    ds = _dataset([[1.0, 2.0]] * 4, [[0.5]] * 4, [[1.5, 1.0]] * 4)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=1, hidden_width=8)
    net = train_fml(ds, arch, TrainConfig(epochs=3000, lr=5e-3, seed=0))
    assert net.final_loss < 1e-10


def test_train_determinism():
    rng = np.random.default_rng(2)
    ds = _affine_dataset(rng, n=1500)  # above the full-batch cutoff
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=2, hidden_width=10)
    cfg = TrainConfig(epochs=30, batch_size=256, lr=1e-3, seed=11)
    a = train_fml(ds, arch, cfg)
    b = train_fml(ds, arch, cfg)
    for Wa, Wb in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb)
    assert a.final_loss == b.final_loss


def test_cyclic_lr_schedule():
    cfg = TrainConfig(lr=1e-4, lr_max=3e-3, cycle_epochs=100)
    assert cfg.lr_at(0) == pytest.approx(1e-4)
    assert cfg.lr_at(50) == pytest.approx(3e-3)
    assert cfg.lr_at(25) == pytest.approx((1e-4 + 3e-3) / 2)
    assert cfg.lr_at(100) == pytest.approx(1e-4)
    assert TrainConfig(lr=1e-3).lr_at(123) == 1e-3


def test_predict_constant_for_zero_net():
    arch = MlpArchitecture(n_s=2, n_par=2, hidden_layers=1, hidden_width=4)
    net = init_net(arch, seed=0)
    for W in net.weights:
        W[:] = 0.0
    segs = GlobalParams(coeffs=np.ones((10, 2)), dt=0.01,
                        basis=BasisSpec(degree=0, channels=2))
    traj = fml_predict(net, np.array([3.0, -1.0]), segs)
    assert np.all(traj.states == [3.0, -1.0])
    assert len(traj) == 11


def test_predict_divergence_reports_step():
    arch = MlpArchitecture(n_s=1, n_par=1, hidden_layers=1, hidden_width=1)
    net = init_net(arch, seed=0)
    net.weights[0][:] = 0.0
    net.weights[1][:] = 0.0
    net.biases[1][:] = 1e7  # every step adds a huge residual
    segs = GlobalParams(coeffs=np.zeros((5, 1)), dt=0.01,
                        basis=BasisSpec(degree=0, channels=1))
    with pytest.raises(DivergenceError) as exc:
        fml_predict(net, np.zeros(1), segs)
    assert exc.value.step == 1


def test_grad_check_fresh_net():
    rng = np.random.default_rng(3)
    arch = MlpArchitecture(n_s=2, n_par=2, hidden_layers=2, hidden_width=8)
    net = init_net(arch, seed=1)
    s_in = rng.standard_normal((16, 2))
    p = rng.standard_normal((16, 2))
    s_out = s_in + 0.1 * rng.standard_normal((16, 2))
    assert grad_check(net, s_in, p, s_out) <= 1e-5


def test_transfer_freezes_prefix_bit_identical():
    rng = np.random.default_rng(4)
    ds = _affine_dataset(rng)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=3, hidden_width=10)
    prior = train_fml(ds, arch, TrainConfig(epochs=100, lr=1e-3, seed=0))
    prior_weights = [W.copy() for W in prior.weights]
    hf = _affine_dataset(np.random.default_rng(5), n=100)
    post = transfer_correct(prior, hf, TrainConfig(epochs=100, lr=1e-3, seed=1), 2)
    for i in range(2):
        assert np.array_equal(post.weights[i], prior_weights[i])
        assert np.array_equal(post.biases[i], prior.biases[i])
    assert not np.array_equal(post.weights[2], prior_weights[2])
    # prior untouched by the correction
    for W0, W1 in zip(prior.weights, prior_weights):
        assert np.array_equal(W0, W1)
    # normalization inherited
    assert np.array_equal(post.mu_in, prior.mu_in)
    assert np.array_equal(post.sig_out, prior.sig_out)


def test_transfer_boundary_layers():
    rng = np.random.default_rng(6)
    ds = _affine_dataset(rng, n=80)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=2, hidden_width=6)
    prior = train_fml(ds, arch, TrainConfig(epochs=20, seed=0))
    # full retrain allowed; index past the output layer is not
    post = transfer_correct(prior, ds, TrainConfig(epochs=5, seed=0), 0)
    assert post.frozen_layers == 0
    with pytest.raises(ValueError):
        transfer_correct(prior, ds, TrainConfig(epochs=5, seed=0), 3)


def test_frozen_gradients_exactly_zero():
    rng = np.random.default_rng(7)
    ds = _affine_dataset(rng, n=60)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=2, hidden_width=6)
    prior = train_fml(ds, arch, TrainConfig(epochs=20, seed=0))
    post = transfer_correct(prior, ds, TrainConfig(epochs=5, seed=0), 1)
    from vdflow.fml import _backward, _normalized_batch

    z, target = _normalized_batch(post, ds.s_in, ds.p, ds.s_out)
    _, gW, gb = _backward(post, z, target, post.frozen_layers)
    assert not gW[0].any() and not gb[0].any()
    assert gW[1].any()


def test_archive_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    ds = _affine_dataset(rng, n=100)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=2, hidden_width=7)
    net = train_fml(ds, arch, TrainConfig(epochs=50, seed=0))
    save_fml(net, tmp_path / "net")
    back = load_fml(tmp_path / "net")
    assert back.arch == net.arch
    for Wa, Wb in zip(net.weights, back.weights):
        assert np.array_equal(Wa, Wb)
    s = rng.standard_normal((5, 2))
    p = rng.standard_normal((5, 1))
    assert np.array_equal(forward(net, s, p), forward(back, s, p))
    assert back.final_loss == net.final_loss


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_residual_identity_property(seed):
    rng = np.random.default_rng(seed)
    arch = MlpArchitecture(n_s=3, n_par=2, hidden_layers=2, hidden_width=5)
    net = init_net(arch, seed=0)
    for W in net.weights:
        W[:] = 0.0
    net.mu_in = rng.standard_normal(5)
    net.sig_in = np.abs(rng.standard_normal(5)) + 0.1
    net.sig_out = np.abs(rng.standard_normal(3)) + 0.1
    s = rng.standard_normal((4, 3))
    p = rng.standard_normal((4, 2))
    assert np.array_equal(forward(net, s, p), s)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(2, 12))
@settings(max_examples=10, deadline=None)
def test_grad_check_property(seed, depth, width):
    rng = np.random.default_rng(seed)
    arch = MlpArchitecture(n_s=2, n_par=1, hidden_layers=depth, hidden_width=width)
    net = init_net(arch, seed=seed % 100)
    s_in = rng.standard_normal((8, 2))
    p = rng.standard_normal((8, 1))
    s_out = s_in + 0.05 * rng.standard_normal((8, 2))
    assert grad_check(net, s_in, p, s_out, n_weights=40, seed=seed % 7) <= 1e-5
