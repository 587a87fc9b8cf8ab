import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdflow.datagen import (
    Dataset,
    DatasetFormatError,
    SamplingSpec,
    SignalSampler,
    cartesian_grid,
    gen_drips_dataset,
    gen_fml_dataset,
    gen_uniform_dataset,
    ingest_experiment,
    moving_average,
    read_dataset,
    write_dataset,
)
from vdflow.dynamics import SlipFreeParams, slipfree_rhs, unicycle_rhs
from vdflow.localparam import BasisSpec

BASIS = BasisSpec(degree=2, channels=2)
SF = SlipFreeParams(4.55, 0.4601, 0.255)


def test_cartesian_grid_lexicographic():
    grid = cartesian_grid([[0, 1], [0, 1]], 2)
    assert np.array_equal(grid, [[0, 0], [0, 1], [1, 0], [1, 1]])
    assert cartesian_grid([[-1, 1]] * 6, 2).shape == (64, 6)
    assert cartesian_grid([[-1, 1]] * 3, 3).shape == (27, 3)


def test_cartesian_grid_guards():
    with pytest.raises(ValueError):
        cartesian_grid([[0, 1]] * 2, 4)
    with pytest.raises(ValueError):
        cartesian_grid([[0, 1]] * 25, 2)


def test_sampling_spec_validation():
    with pytest.raises(ValueError):
        SamplingSpec(omega_s=[[1, 0]], omega_p=[[0, 1]])
    with pytest.raises(ValueError):
        SamplingSpec(omega_s=[[0, 1]], omega_p=[[0, 1]], n_sam_s=0)


def _uni_spec(seed=0):
    return SamplingSpec(
        omega_s=[[-0.6, 8], [0, 2], [-0.6, 2 * np.pi]],
        omega_p=[[-1, 1]] * 6, n_sam_s=6, seed=seed)


def test_gen_drips_dataset_layout_and_determinism():
    ds1 = gen_drips_dataset(unicycle_rhs, _uni_spec(), BASIS, "unicycle", 0.01)
    ds2 = gen_drips_dataset(unicycle_rhs, _uni_spec(), BASIS, "unicycle", 0.01)
    assert len(ds1) == 384
    assert np.array_equal(np.unique(ds1.group_id), np.arange(64))
    assert np.array_equal(ds1.s_in, ds2.s_in)
    assert np.array_equal(ds1.s_out, ds2.s_out)
    # states stay in-box, coefficients sit on grid corners
    assert np.all(ds1.s_in[:, 1] >= 0) and np.all(ds1.s_in[:, 1] <= 2)
    assert set(np.unique(ds1.p)) == {-1.0, 1.0}


def test_gen_drips_dataset_seed_changes_states():
    ds1 = gen_drips_dataset(unicycle_rhs, _uni_spec(0), BASIS, "unicycle", 0.01)
    ds2 = gen_drips_dataset(unicycle_rhs, _uni_spec(1), BASIS, "unicycle", 0.01)
    assert not np.array_equal(ds1.s_in, ds2.s_in)


def test_gen_drips_dataset_pairs_consistent_with_integrator():
    # s_out must be one RK4 step of the plant under the grid-corner controls
    from vdflow.datagen import _control_from_coeffs
    from vdflow.dynamics import integrate_step

    ds = gen_drips_dataset(unicycle_rhs, _uni_spec(), BASIS, "unicycle", 0.01)
    i = 123
    ctrl = _control_from_coeffs(ds.p[i], BASIS, 0.01)
    expect = integrate_step(unicycle_rhs, ds.s_in[i], ctrl, 0.0, 0.01)
    assert np.array_equal(ds.s_out[i], expect)


def test_gen_uniform_dataset():
    spec = SamplingSpec(omega_s=[[-1, 1]] * 4, omega_p=[[-0.3, 0.3]] * 6, seed=3)
    rhs = lambda s, c: slipfree_rhs(s, c, SF)
    ds = gen_uniform_dataset(rhs, spec, BASIS, "slipfree", 0.01, 200)
    assert len(ds) == 200
    assert np.array_equal(ds.group_id, np.arange(200))
    assert np.all(np.abs(ds.p) <= 0.3)


def test_dataset_roundtrip(tmp_path):
    ds = gen_drips_dataset(unicycle_rhs, _uni_spec(), BASIS, "unicycle", 0.01)
    path = tmp_path / "ds.csv"
    write_dataset(ds, path)
    back = read_dataset(path, basis=BASIS)
    assert back.model == "unicycle" and back.dt == 0.01
    assert np.array_equal(back.s_in, ds.s_in)
    assert np.array_equal(back.p, ds.p)
    assert np.array_equal(back.s_out, ds.s_out)
    assert np.array_equal(back.group_id, ds.group_id)


def test_read_dataset_errors_name_lines(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("wrong header\n")
    with pytest.raises(DatasetFormatError, match="header"):
        read_dataset(path)
    path.write_text("model,n_s,n_par,delta_t\nuni,3,6,0.01\n0,1,2\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        read_dataset(path)


def test_dataset_column_mismatch_rejected():
    with pytest.raises(ValueError):
        Dataset(model="m", dt=0.01, s_in=np.zeros((3, 2)), p=np.zeros((2, 1)),
                s_out=np.zeros((3, 2)), group_id=np.zeros(3))


def test_signal_sampler_respects_clamp():
    sampler = SignalSampler(
        ranges=np.array([[[0.10, 0.45], [0.10, 0.45], [0.25, 1.05], [0, 2 * np.pi]]]),
        clamp=np.array([[0.0, 0.8]]))
    rng = np.random.default_rng(7)
    t = np.linspace(0, 20, 2001)
    for _ in range(50):
        prm = sampler.sample(rng)
        vals = SignalSampler.evaluate(prm[0], t)
        assert vals.min() >= 0.0 and vals.max() <= 0.8


def test_gen_fml_dataset_shapes_and_validity():
    rhs = lambda s, c: slipfree_rhs(s, c, SF)
    sampler = SignalSampler(
        ranges=np.array([[[0.0, 0.1], [0.0, 0.05], [0.25, 1.0], [0, 2 * np.pi]],
                         [[-0.05, 0.05], [0.0, 0.05], [0.25, 1.0], [0, 2 * np.pi]]]),
        clamp=np.array([[-0.2, 0.2], [-0.2, 0.2]]))
    box = np.array([[-5, 5], [-5, 5], [-1, 5], [-2, 2]])
    ds = gen_fml_dataset(rhs, sampler, 8, 5, 1.0, 0.01, BASIS,
                         np.zeros(4), "slipfree", box, seed=0)
    assert len(ds) == 40
    assert ds.p.shape == (40, 6)
    assert np.array_equal(ds.group_id, np.repeat(np.arange(8), 5))
    assert np.all(ds.s_in >= box[:, 0]) and np.all(ds.s_in <= box[:, 1])
    ds2 = gen_fml_dataset(rhs, sampler, 8, 5, 1.0, 0.01, BASIS,
                          np.zeros(4), "slipfree", box, seed=0)
    assert np.array_equal(ds.s_in, ds2.s_in) and np.array_equal(ds.p, ds2.p)


def test_moving_average_frozen():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    out = moving_average(x, 3)
    # edges shrink to width 1; interior is the plain centered mean
    assert np.allclose(out, [1.0, 7 / 3, 14 / 3, 28 / 3, 16.0], atol=1e-15)
    with pytest.raises(ValueError):
        moving_average(x, 4)


def test_ingest_experiment_roundtrip(tmp_path):
    # noiseless file with psi = 0.3: v_x recovers |velocity| exactly
    t = np.arange(50) * 0.01
    psi = np.full_like(t, 0.3)
    vX, vY = 2.0 * np.cos(psi), 2.0 * np.sin(psi)
    rows = ["t,x,y,vX,vY,psi"]
    rows += [f"{ti:.17g},{ti:.17g},0,{a:.17g},{b:.17g},0.3"
             for ti, a, b in zip(t, vX, vY)]
    path = tmp_path / "exp.csv"
    path.write_text("\n".join(rows) + "\n")
    traj = ingest_experiment(path, window=5)
    assert traj.states.shape == (50, 4)
    assert np.allclose(traj.states[:, 2], 2.0, atol=1e-12)
    assert np.allclose(traj.states[:, 3], 0.3, atol=1e-12)


def test_ingest_experiment_rejects_bad_files(tmp_path):
    path = tmp_path / "exp.csv"
    path.write_text("a,b\n")
    with pytest.raises(DatasetFormatError, match="header"):
        ingest_experiment(path)
    path.write_text("t,x,y,vX,vY,psi\n0,0,0,0,0,0\n0.5,0,0,0,0,0\n")
    with pytest.raises(DatasetFormatError, match="timestamps"):
        ingest_experiment(path)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_uniform_dataset_stays_in_boxes(seed):
    spec = SamplingSpec(omega_s=[[-2, -1], [3, 4], [0, 1]],
                        omega_p=[[0, 0.5]] * 6, seed=seed)
    ds = gen_uniform_dataset(unicycle_rhs, spec, BASIS, "unicycle", 0.01, 50)
    assert np.all(ds.s_in >= spec.omega_s[:, 0]) and np.all(ds.s_in <= spec.omega_s[:, 1])
    assert np.all(ds.p >= 0) and np.all(ds.p <= 0.5)


@given(st.integers(3, 99).filter(lambda n: n % 2 == 1), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_moving_average_preserves_constants(window, seed):
    rng = np.random.default_rng(seed)
    c = float(rng.uniform(-5, 5))
    x = np.full(40, c)
    assert np.allclose(moving_average(x, window), c, atol=1e-12)
