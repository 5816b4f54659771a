import numpy as np
import pytest

from graphode.burgers import (
    DEGENERATE_EPS,
    SolverConfig,
    central_difference_oracle,
    draw_fourier_coeffs_1d,
    fourier_series_2d,
    generate_burgers_dataset,
    sample_ic_1d,
    sample_ic_2d,
    sample_rng,
    solve_burgers_1d,
    solve_burgers_2d,
    subsample_snapshots,
)
from graphode.errors import ConfigError, NumericError, ShapeError


class ScriptedRNG:
    """Stands in for a numpy Generator; returns pre-arranged draws in order."""

    def __init__(self, normals, uniforms):
        self._normals = list(normals)
        self._uniforms = list(uniforms)
        self.normal_calls = 0

    def standard_normal(self, size=None):
        self.normal_calls += 1
        value = self._normals.pop(0)
        return np.asarray(value, dtype=np.float64) if size is not None else float(value)

    def uniform(self, low, high, size=None):
        value = self._uniforms.pop(0)
        return np.asarray(value, dtype=np.float64) if size is not None else float(value)


def test_ic_1d_constant_mode_normalizes_to_two():
    rng = ScriptedRNG([1.0, np.zeros(4), np.zeros(4)], [0.0])
    u = sample_ic_1d(rng, 16)
    np.testing.assert_allclose(u, np.full((16, 1), 2.0))


def test_ic_1d_degenerate_draw_resampled():
    # first draw: w == 0 everywhere, denominator |0 + c| below threshold
    rng = ScriptedRNG(
        [0.0, np.zeros(4), np.zeros(4), 1.0, np.zeros(4), np.zeros(4)],
        [0.5 * DEGENERATE_EPS, 0.0],
    )
    u = sample_ic_1d(rng, 8)
    assert rng.normal_calls == 6  # two full draws
    np.testing.assert_allclose(u, np.full((8, 1), 2.0))


def test_ic_1d_deterministic():
    a = sample_ic_1d(sample_rng(42, 3), 64)
    b = sample_ic_1d(sample_rng(42, 3), 64)
    assert a.tobytes() == b.tobytes()


def test_ic_2d_amplitude_bound_and_determinism():
    u = sample_ic_2d(sample_rng(7, 0), 16, 16)
    assert u.shape == (16, 16, 2)
    assert np.all(np.abs(u) <= 3.0 + 1e-12)
    v = sample_ic_2d(sample_rng(7, 0), 16, 16)
    assert u.tobytes() == v.tobytes()


def test_ic_2d_single_mode_is_scaled_sinusoid():
    n_modes = 9
    a = np.zeros((n_modes, n_modes, 2))
    a[5, 4, 0] = 2.5  # mode (i=1, j=0) in the u channel
    b = np.zeros((n_modes, n_modes, 2))
    b[4, 4, 1] = 1.0  # constant mode keeps the v channel non-degenerate
    rng = ScriptedRNG([a, b], [np.array([0.25, -0.5])])
    u = sample_ic_2d(rng, 32, 32)
    xs = np.arange(32) / 32
    expected_u = 2.0 * np.sin(2 * np.pi * xs) / np.max(np.abs(np.sin(2 * np.pi * xs))) + 0.25
    np.testing.assert_allclose(u[0, :, 0], expected_u, atol=1e-12)
    np.testing.assert_allclose(u[:, :, 1], np.full((32, 32), 1.5), atol=1e-12)


def test_ic_coefficient_statistics():
    values = np.array([draw_fourier_coeffs_1d(sample_rng(1234, s))[1] for s in range(1000)])
    assert abs(values.mean()) < 4.0 / np.sqrt(1000)


def test_solver_config_rejects_unstable_step():
    with pytest.raises(ConfigError, match="stability"):
        SolverConfig(nu=0.0025, nx=512, dt_ref=1e-3, t_end=0.1)


def test_solver_config_rejects_non_integer_steps():
    with pytest.raises(ConfigError):
        SolverConfig(nu=0.01, nx=64, dt_ref=3e-4, t_end=0.001)


def test_constant_ic_is_exact_fixed_point():
    cfg = SolverConfig(nu=0.0025, nx=64, dt_ref=1e-3, t_end=0.05)
    ds = solve_burgers_1d(np.full(64, 2.0), cfg)
    np.testing.assert_array_equal(ds.fields, np.full_like(ds.fields, 2.0))


def test_heat_limit_matches_closed_form():
    cfg = SolverConfig(nu=0.0025, nx=512, dt_ref=2.5e-4, t_end=1.0,
                       store_every=4000, advection=False)
    x = np.arange(512) / 512
    ds = solve_burgers_1d(np.sin(2 * np.pi * x), cfg)
    expected = np.exp(-0.0025 * (2 * np.pi) ** 2) * np.sin(2 * np.pi * x)
    rel = np.linalg.norm(ds.fields[0, -1, :, 0] - expected) / np.linalg.norm(expected)
    assert rel < 1e-3


def test_discrete_mass_conserved_over_full_horizon():
    cfg = SolverConfig(nu=0.0025, nx=128, dt_ref=5e-4, t_end=0.084, store_every=2)
    ds = solve_burgers_1d(sample_ic_1d(sample_rng(11, 0), 128), cfg)
    masses = ds.fields[0, :, :, 0].sum(axis=1)
    assert np.max(np.abs(masses - masses[0])) / max(1.0, abs(masses[0])) < 1e-10


def test_2d_constant_ic_stays_constant():
    cfg = SolverConfig(nu=0.005, nx=8, ny=8, dt_ref=2e-3, t_end=0.05, store_every=5)
    ic = np.stack([np.full((8, 8), 1.5), np.full((8, 8), -0.5)], axis=-1)
    ds = solve_burgers_2d(ic, cfg)
    np.testing.assert_allclose(ds.fields[0, -1, :, 0], 1.5, atol=1e-13)
    np.testing.assert_allclose(ds.fields[0, -1, :, 1], -0.5, atol=1e-13)


def test_2d_reduces_to_1d_on_y_invariant_data():
    n = 16
    cfg1 = SolverConfig(nu=0.005, nx=n, dt_ref=4e-3, t_end=0.2,
                        advection_form="advective")
    cfg2 = SolverConfig(nu=0.005, nx=n, ny=n, dt_ref=4e-3, t_end=0.2)
    line = sample_ic_1d(sample_rng(5, 0), n)[:, 0]
    ic2d = np.zeros((n, n, 2))
    ic2d[:, :, 0] = line[None, :]
    ds1 = solve_burgers_1d(line, cfg1)
    ds2 = solve_burgers_2d(ic2d, cfg2)
    u2d = ds2.fields[0].reshape(-1, n, n, 2)
    ref = ds1.fields[0, :, None, :, 0]
    rel = np.max(np.abs(u2d[..., 0] - ref)) / np.max(np.abs(ref))
    assert rel < 1e-8
    assert np.max(np.abs(u2d[..., 1])) < 1e-12


def test_2d_heat_limit_per_mode_decay():
    cfg = SolverConfig(nu=0.005, nx=32, ny=32, dt_ref=1e-3, t_end=0.5,
                       store_every=500, advection=False)
    xs = np.arange(32) / 32
    X, Y = np.meshgrid(xs, xs)
    ic = np.zeros((32, 32, 2))
    ic[:, :, 0] = np.sin(2 * np.pi * (X + Y))
    ds = solve_burgers_2d(ic, cfg)
    decay = np.exp(-0.005 * 2 * (2 * np.pi) ** 2 * 0.5)
    expected = decay * ic[:, :, 0].reshape(-1)
    rel = np.linalg.norm(ds.fields[0, -1, :, 0] - expected) / np.linalg.norm(expected)
    assert rel < 1e-2


def test_blowup_aborts_with_time_stamp():
    cfg = SolverConfig(nu=0.0025, nx=128, dt_ref=6e-4, t_end=0.3)
    # amplitude far above the CFL guard's estimate: the guard passes, the run must not
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError, match="t="):
            solve_burgers_1d(400.0 * np.sin(2 * np.pi * np.arange(128) / 128), cfg)


def test_subsample_examples():
    fields = np.arange(2 * 29 * 4 * 1, dtype=np.float64).reshape(2, 29, 4, 1)
    from graphode.data import SnapshotDataset
    ds = SnapshotDataset(fields=fields, dt=0.001, ndim=1, grid_shape=(4,),
                         length=1.0, nu=0.1, channels=("u",), seed=0)
    sub = subsample_snapshots(ds, 0.007)
    assert sub.n_times == 5
    np.testing.assert_array_equal(sub.fields, fields[:, ::7])
    assert sub.dt == pytest.approx(0.007)

    same = subsample_snapshots(ds, 0.001)
    np.testing.assert_array_equal(same.fields, fields)

    ds2 = SnapshotDataset(fields=fields[:, :9], dt=0.005, ndim=1, grid_shape=(4,),
                          length=1.0, nu=0.1, channels=("u",), seed=0)
    sub2 = subsample_snapshots(ds2, 0.02)
    np.testing.assert_array_equal(sub2.fields, fields[:, :9][:, ::4])

    with pytest.raises(ConfigError):
        subsample_snapshots(ds, 0.0025)


def test_oracle_sine_derivative():
    x = np.arange(512) / 512
    u = np.sin(2 * np.pi * x)
    ux = central_difference_oracle(u, (512,), 1.0, order=1)
    assert np.max(np.abs(ux[:, 0] - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-3
    uxx = central_difference_oracle(u, (512,), 1.0, order=2)
    assert np.max(np.abs(uxx[:, 0] + (2 * np.pi) ** 2 * u)) < 0.05


def test_oracle_constant_and_linear_fields():
    np.testing.assert_array_equal(
        central_difference_oracle(np.full(32, 4.2), (32,), 1.0, 1), np.zeros((32, 1)))
    x = np.arange(32) / 32
    ux = central_difference_oracle(x, (32,), 1.0, 1)
    np.testing.assert_allclose(ux[1:31, 0], np.ones(30), atol=1e-12)


def test_oracle_2d_layout():
    xs = np.arange(16) / 16
    X, Y = np.meshgrid(xs, xs)
    field = np.stack([np.sin(2 * np.pi * X), np.sin(2 * np.pi * Y)], -1).reshape(-1, 2)
    d1 = central_difference_oracle(field, (16, 16), 1.0, 1)
    assert d1.shape == (256, 4)
    # direction-major: du/dx, dv/dx, du/dy, dv/dy
    assert np.max(np.abs(d1[:, 1])) < 1e-12
    assert np.max(np.abs(d1[:, 2])) < 1e-12
    assert d1[:, 0].max() > 5.0 and d1[:, 3].max() > 5.0


def test_reference_solver_self_convergence():
    ic = sample_ic_1d(sample_rng(3, 1), 64)
    base = SolverConfig(nu=0.01, nx=64, dt_ref=5e-4, t_end=0.05, store_every=100)
    half = SolverConfig(nu=0.01, nx=64, dt_ref=2.5e-4, t_end=0.05, store_every=200)
    a = solve_burgers_1d(ic, base).fields[0, -1]
    b = solve_burgers_1d(ic, half).fields[0, -1]
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6


def test_generate_dataset_shapes_and_determinism():
    cfg = SolverConfig(nu=0.01, nx=32, dt_ref=1e-3, t_end=0.028, store_every=1)
    ds = generate_burgers_dataset(cfg, 3, seed=99, train_dt=0.007)
    assert ds.fields.shape == (3, 5, 32, 1)
    again = generate_burgers_dataset(cfg, 3, seed=99, train_dt=0.007)
    assert ds.fields.tobytes() == again.fields.tobytes()


def test_solver_rejects_wrong_ic_shape():
    cfg = SolverConfig(nu=0.01, nx=32, dt_ref=1e-3, t_end=0.01)
    with pytest.raises(ShapeError):
        solve_burgers_1d(np.zeros(16), cfg)
