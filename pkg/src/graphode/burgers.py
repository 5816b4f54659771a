"""Ground-truth data generation: random Fourier initial conditions and
finite-difference reference solutions of 1-d/2-d viscous Burgers flow with
periodic boundaries, plus a central-difference derivative oracle.

The reference solver is method-of-lines: second-order central stencils in
space, the 3/8 Runge-Kutta rule in time.  1-d advection defaults to the
conservative flux form, which conserves discrete mass exactly; the advective
form is available to match the 2-d operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SnapshotDataset
from .errors import ConfigError, NumericError, ShapeError
from .integrators import rk4_38_step

__all__ = [
    "U_MAX_ESTIMATE",
    "SolverConfig",
    "sample_ic_1d",
    "sample_ic_2d",
    "fourier_series_1d",
    "fourier_series_2d",
    "solve_burgers_1d",
    "solve_burgers_2d",
    "generate_burgers_dataset",
    "subsample_snapshots",
    "central_difference_oracle",
    "sample_rng",
]

FOURIER_MODES = 4
DEGENERATE_EPS = 1e-8
U_MAX_ESTIMATE = 3.0  # amplitude scale of the normalized initial conditions


@dataclass
class SolverConfig:
    """Reference-solver settings; construction validates the stability guard.

    ``dt_ref`` is the integration step; snapshots are stored every
    ``store_every`` steps.  ``ny`` switches to the 2-d solver.
    """

    nu: float
    nx: int
    dt_ref: float
    t_end: float
    ny: int | None = None
    length: float = 1.0
    store_every: int = 1
    advection: bool = True
    advection_form: str = "conservative"  # 1-d only; "advective" matches the 2-d operator

    def __post_init__(self):
        if not self.nu > 0:
            raise ConfigError(f"viscosity must be positive, got {self.nu}")
        if self.nx < 3 or (self.ny is not None and self.ny < 3):
            raise ConfigError("grids need at least 3 points per axis")
        if not self.dt_ref > 0 or not self.t_end > 0:
            raise ConfigError("dt_ref and t_end must be positive")
        if self.store_every < 1:
            raise ConfigError(f"store_every must be >= 1, got {self.store_every}")
        if self.advection_form not in ("conservative", "advective"):
            raise ConfigError(f"unknown advection form {self.advection_form!r}")
        steps = self.t_end / self.dt_ref
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigError(
                f"t_end={self.t_end} is not an integer number of dt_ref={self.dt_ref} steps"
            )
        if round(steps) % self.store_every != 0:
            raise ConfigError(
                f"{round(steps)} steps do not divide into store_every={self.store_every}"
            )
        limit = self.stability_limit()
        if self.dt_ref > limit:
            raise ConfigError(
                f"dt_ref={self.dt_ref:g} violates the stability bound {limit:g} "
                f"(grid spacing {self.h_min():g}, nu={self.nu:g})"
            )

    @property
    def ndim(self) -> int:
        return 1 if self.ny is None else 2

    def h_min(self) -> float:
        h = self.length / self.nx
        if self.ny is not None:
            h = min(h, self.length / self.ny)
        return h

    def stability_limit(self) -> float:
        h = self.h_min()
        limit = h * h / (4.0 * self.nu * self.ndim)
        if self.advection:
            limit = min(limit, h / (4.0 * U_MAX_ESTIMATE))
        return limit

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt_ref)

    @property
    def dt_snapshot(self) -> float:
        return self.store_every * self.dt_ref

    @property
    def n_times(self) -> int:
        return self.n_steps // self.store_every + 1


def sample_rng(seed: int, sample: int) -> np.random.Generator:
    """Independent, reproducible stream for one sample of a dataset."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, sample))))


def fourier_series_1d(x: np.ndarray, a0: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w = np.full_like(np.asarray(x, dtype=np.float64), a0)
    for l in range(1, len(a) + 1):
        w += a[l - 1] * np.sin(2.0 * np.pi * l * x) + b[l - 1] * np.cos(2.0 * np.pi * l * x)
    return w


def draw_fourier_coeffs_1d(rng: np.random.Generator) -> tuple[float, np.ndarray, np.ndarray, float]:
    """One draw of (a0, a, b, c): standard-normal series coefficients, uniform shift."""
    a0 = float(rng.standard_normal())
    a = rng.standard_normal(FOURIER_MODES)
    b = rng.standard_normal(FOURIER_MODES)
    c = float(rng.uniform(-1.0, 1.0))
    return a0, a, b, c


def sample_ic_1d(rng: np.random.Generator, nx: int, length: float = 1.0) -> np.ndarray:
    """Random-Fourier initial field on the uniform grid, shape [nx, 1].

    The field is ``2 w / (max|w| + c)`` with standard-normal series
    coefficients and ``c ~ U(-1, 1)``; draws with a near-zero denominator are
    rejected and resampled.
    """
    x = np.arange(nx, dtype=np.float64) * (length / nx)
    while True:
        a0, a, b, c = draw_fourier_coeffs_1d(rng)
        w = fourier_series_1d(x, a0, a, b)
        denom = float(np.max(np.abs(w))) + c
        if abs(denom) < DEGENERATE_EPS:
            continue
        return (2.0 * w / denom)[:, None]


def fourier_series_2d(X: np.ndarray, Y: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-channel truncated Fourier sum over modes |i|, |j| <= FOURIER_MODES."""
    w = np.zeros(X.shape + (2,), dtype=np.float64)
    modes = range(-FOURIER_MODES, FOURIER_MODES + 1)
    for ii, i in enumerate(modes):
        for jj, j in enumerate(modes):
            phase = 2.0 * np.pi * (i * X + j * Y)
            w += a[ii, jj] * np.sin(phase)[..., None] + b[ii, jj] * np.cos(phase)[..., None]
    return w


def sample_ic_2d(rng: np.random.Generator, nx: int, ny: int, length: float = 1.0) -> np.ndarray:
    """Two-channel random-Fourier initial field, shape [ny, nx, 2].

    Each channel is normalized to amplitude 2 by its own grid maximum, then
    shifted by an independent ``c ~ U(-1, 1)``; |u| <= 3 per channel.
    """
    xs = np.arange(nx, dtype=np.float64) * (length / nx)
    ys = np.arange(ny, dtype=np.float64) * (length / ny)
    X, Y = np.meshgrid(xs, ys)
    n_modes = 2 * FOURIER_MODES + 1
    while True:
        a = rng.standard_normal((n_modes, n_modes, 2))
        b = rng.standard_normal((n_modes, n_modes, 2))
        c = rng.uniform(-1.0, 1.0, size=2)
        w = fourier_series_2d(X, Y, a, b)
        m = np.max(np.abs(w.reshape(-1, 2)), axis=0)
        if np.any(m < DEGENERATE_EPS):
            continue
        return 2.0 * w / m + c


def _integrate(rhs, state: np.ndarray, cfg: SolverConfig) -> list[np.ndarray]:
    frames = [state.copy()]
    u = state
    for step in range(cfg.n_steps):
        try:
            u = rk4_38_step(rhs, u, cfg.dt_ref)
        except NumericError as exc:
            raise NumericError(
                f"solution blew up at t={(step + 1) * cfg.dt_ref:.6g}: {exc}"
            ) from exc
        if not np.all(np.isfinite(u)):
            raise NumericError(f"solution blew up at t={(step + 1) * cfg.dt_ref:.6g}")
        if (step + 1) % cfg.store_every == 0:
            frames.append(u.copy())
    return frames


def solve_burgers_1d(ic: np.ndarray, cfg: SolverConfig, seed: int = 0) -> SnapshotDataset:
    """Reference solution u_t = -(advection) + nu u_xx on the periodic grid."""
    if cfg.ny is not None:
        raise ConfigError("1-d solver given a 2-d configuration")
    u0 = np.asarray(ic, dtype=np.float64).reshape(-1)
    if u0.size != cfg.nx:
        raise ShapeError(f"initial field has {u0.size} values for nx={cfg.nx}")
    h = cfg.length / cfg.nx
    nu = cfg.nu
    conservative = cfg.advection_form == "conservative"
    advect = cfg.advection

    def rhs(u):
        up1 = np.roll(u, -1)
        um1 = np.roll(u, 1)
        out = nu * (up1 - 2.0 * u + um1) / (h * h)
        if advect:
            if conservative:
                flux = 0.5 * u * u
                out = out - (np.roll(flux, -1) - np.roll(flux, 1)) / (2.0 * h)
            else:
                out = out - u * (up1 - um1) / (2.0 * h)
        return out

    frames = _integrate(rhs, u0, cfg)
    fields = np.stack(frames)[None, :, :, None]
    return SnapshotDataset(
        fields=fields, dt=cfg.dt_snapshot, ndim=1, grid_shape=(cfg.nx,),
        length=cfg.length, nu=cfg.nu, channels=("u",), seed=seed,
    )


def solve_burgers_2d(ic: np.ndarray, cfg: SolverConfig, seed: int = 0) -> SnapshotDataset:
    """Reference solution of the coupled 2-d system (advective form)."""
    if cfg.ny is None:
        raise ConfigError("2-d solver needs ny")
    w0 = np.asarray(ic, dtype=np.float64)
    if w0.shape != (cfg.ny, cfg.nx, 2):
        raise ShapeError(f"initial field has shape {w0.shape}, expected {(cfg.ny, cfg.nx, 2)}")
    hx, hy = cfg.length / cfg.nx, cfg.length / cfg.ny
    nu = cfg.nu
    advect = cfg.advection

    def ddx(f):
        return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * hx)

    def ddy(f):
        return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * hy)

    def lap(f):
        return ((np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / (hx * hx)
                + (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / (hy * hy))

    def rhs(w):
        u, v = w[..., 0], w[..., 1]
        du = nu * lap(u)
        dv = nu * lap(v)
        if advect:
            du = du - (u * ddx(u) + v * ddy(u))
            dv = dv - (u * ddx(v) + v * ddy(v))
        return np.stack([du, dv], axis=-1)

    frames = _integrate(rhs, w0, cfg)
    n_times = len(frames)
    fields = np.stack(frames).reshape(n_times, cfg.ny * cfg.nx, 2)[None]
    return SnapshotDataset(
        fields=fields, dt=cfg.dt_snapshot, ndim=2, grid_shape=(cfg.ny, cfg.nx),
        length=cfg.length, nu=cfg.nu, channels=("u", "v"), seed=seed,
    )


def generate_burgers_dataset(cfg: SolverConfig, n_samples: int, seed: int,
                             train_dt: float | None = None) -> SnapshotDataset:
    """Solve ``n_samples`` random initial conditions and stack the trajectories.

    Sample ``s`` draws from an independent stream derived from ``(seed, s)``,
    so datasets are reproducible and samples are order-independent.
    """
    if n_samples < 1:
        raise ConfigError(f"need at least one sample, got {n_samples}")
    parts = []
    for s in range(n_samples):
        rng = sample_rng(seed, s)
        if cfg.ndim == 1:
            ic = sample_ic_1d(rng, cfg.nx, cfg.length)
            ds = solve_burgers_1d(ic, cfg, seed=seed)
        else:
            ic = sample_ic_2d(rng, cfg.nx, cfg.ny, cfg.length)
            ds = solve_burgers_2d(ic, cfg, seed=seed)
        parts.append(ds.fields[0])
    stacked = SnapshotDataset(
        fields=np.stack(parts), dt=ds.dt, ndim=ds.ndim,
        grid_shape=ds.grid_shape, length=ds.length, nu=ds.nu,
        channels=ds.channels, seed=seed,
    )
    if train_dt is not None:
        stacked = subsample_snapshots(stacked, train_dt)
    return stacked


def subsample_snapshots(ds: SnapshotDataset, dt_train: float) -> SnapshotDataset:
    """Keep every (dt_train / dt)-th snapshot starting at t=0."""
    ratio = dt_train / ds.dt
    r = round(ratio)
    if r < 1 or abs(ratio - r) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(
            f"training step {dt_train} is not an integer multiple of the stored step {ds.dt}"
        )
    return SnapshotDataset(
        fields=ds.fields[:, ::r].copy(), dt=ds.dt * r, ndim=ds.ndim,
        grid_shape=ds.grid_shape, length=ds.length, nu=ds.nu,
        channels=ds.channels, seed=ds.seed,
    )


def central_difference_oracle(field: np.ndarray, grid_shape: tuple[int, ...],
                              length: float = 1.0, order: int = 1) -> np.ndarray:
    """Second-order periodic central differences on the uniform grid.

    field: [n_nodes, C] (or [n_nodes]).  Returns [n_nodes, C * ndim] with
    direction-major columns: all channels differentiated in x, then (2-d) all
    channels in y.  ``order`` 2 gives the pure second derivatives in the same
    layout.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    n_nodes = math.prod(grid_shape)
    if arr.shape[0] != n_nodes:
        raise ShapeError(f"field has {arr.shape[0]} rows for grid {grid_shape}")
    n_channels = arr.shape[1]

    def d1(f, axis, h):
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)

    def d2(f, axis, h):
        return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (h * h)

    stencil = d1 if order == 1 else d2
    if len(grid_shape) == 1:
        h = length / grid_shape[0]
        return stencil(arr, 0, h)
    ny, nx = grid_shape
    g = arr.reshape(ny, nx, n_channels)
    dx = stencil(g, 1, length / nx)
    dy = stencil(g, 0, length / ny)
    return np.concatenate([dx, dy], axis=-1).reshape(n_nodes, 2 * n_channels)
