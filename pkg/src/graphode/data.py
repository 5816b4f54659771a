"""Snapshot dataset container and its on-disk format.

A dataset directory holds ``manifest.kv`` (UTF-8 key=value) and
``fields.bin`` (little-endian float64, index order sample -> time -> node ->
channel).  Round trips are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataIOError, ShapeError
from .kv import format_float, parse_kv_text

__all__ = ["SnapshotDataset", "write_dataset", "read_dataset"]

MANIFEST_NAME = "manifest.kv"
FIELDS_NAME = "fields.bin"

_REQUIRED_KEYS = ("ndim", "nx", "length", "nu", "dt", "n_samples", "n_times", "channels", "seed")
_ALL_KEYS = frozenset(_REQUIRED_KEYS) | {"ny"}


@dataclass
class SnapshotDataset:
    """Trajectories of grid fields at a fixed snapshot interval.

    fields: [n_samples, n_times, n_nodes, n_channels]
    grid_shape: (nx,) in 1-d, (ny, nx) in 2-d (row-major node order)
    """

    fields: np.ndarray
    dt: float
    ndim: int
    grid_shape: tuple[int, ...]
    length: float
    nu: float
    channels: tuple[str, ...]
    seed: int

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.ndim != 4:
            raise ShapeError(f"fields must be 4-d, got shape {self.fields.shape}")
        if len(self.grid_shape) != self.ndim:
            raise ShapeError(f"grid shape {self.grid_shape} does not match ndim={self.ndim}")
        if self.fields.shape[2] != math.prod(self.grid_shape):
            raise ShapeError(
                f"{self.fields.shape[2]} node rows for grid {self.grid_shape}"
            )
        if self.fields.shape[3] != len(self.channels):
            raise ShapeError(
                f"{self.fields.shape[3]} channels but names {self.channels}"
            )
        if not self.dt > 0:
            raise ShapeError(f"dt must be positive, got {self.dt}")

    @property
    def n_samples(self) -> int:
        return self.fields.shape[0]

    @property
    def n_times(self) -> int:
        return self.fields.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.fields.shape[2]

    @property
    def n_channels(self) -> int:
        return self.fields.shape[3]

    def take_samples(self, index) -> "SnapshotDataset":
        """Dataset restricted to the given sample indices."""
        return replace(self, fields=self.fields[np.asarray(index)])


def write_dataset(ds: SnapshotDataset, dirpath) -> tuple[Path, Path]:
    """Write ``manifest.kv`` and ``fields.bin`` into ``dirpath`` (created if needed)."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    pairs: dict[str, str] = {"ndim": str(ds.ndim)}
    if ds.ndim == 1:
        pairs["nx"] = str(ds.grid_shape[0])
    else:
        pairs["ny"] = str(ds.grid_shape[0])
        pairs["nx"] = str(ds.grid_shape[1])
    pairs.update(
        length=format_float(ds.length),
        nu=format_float(ds.nu),
        dt=format_float(ds.dt),
        n_samples=str(ds.n_samples),
        n_times=str(ds.n_times),
        channels=",".join(ds.channels),
        seed=str(ds.seed),
    )
    manifest = out / MANIFEST_NAME
    manifest.write_text("".join(f"{k}={v}\n" for k, v in pairs.items()), encoding="utf-8")
    blob = out / FIELDS_NAME
    blob.write_bytes(np.ascontiguousarray(ds.fields).astype("<f8").tobytes())
    return manifest, blob


def read_dataset(dirpath) -> SnapshotDataset:
    """Read a dataset directory; manifests with unknown or missing keys are rejected."""
    root = Path(dirpath)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise DataIOError(f"no {MANIFEST_NAME} in {root}")
    try:
        pairs = parse_kv_text(manifest.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataIOError(f"{manifest}: {exc}") from exc
    unknown = sorted(set(pairs) - _ALL_KEYS)
    if unknown:
        raise DataIOError(f"{manifest}: unknown manifest key(s): {', '.join(unknown)}")
    for key in _REQUIRED_KEYS:
        if key not in pairs:
            raise DataIOError(f"{manifest}: missing key \"{key}\"")
    try:
        ndim = int(pairs["ndim"])
        nx = int(pairs["nx"])
        length = float(pairs["length"])
        nu = float(pairs["nu"])
        dt = float(pairs["dt"])
        n_samples = int(pairs["n_samples"])
        n_times = int(pairs["n_times"])
        seed = int(pairs["seed"])
    except ValueError as exc:
        raise DataIOError(f"{manifest}: bad value ({exc})") from exc
    channels = tuple(name for name in pairs["channels"].split(",") if name)
    if ndim == 1:
        if "ny" in pairs:
            raise DataIOError(f"{manifest}: ny given for a 1-d dataset")
        grid_shape: tuple[int, ...] = (nx,)
    elif ndim == 2:
        if "ny" not in pairs:
            raise DataIOError(f"{manifest}: missing key \"ny\"")
        grid_shape = (int(pairs["ny"]), nx)
    else:
        raise DataIOError(f"{manifest}: unsupported ndim {ndim}")
    n_nodes = math.prod(grid_shape)
    expected = n_samples * n_times * n_nodes * len(channels) * 8
    blob_path = root / FIELDS_NAME
    if not blob_path.is_file():
        raise DataIOError(f"no {FIELDS_NAME} in {root}")
    blob = blob_path.read_bytes()
    if len(blob) != expected:
        raise DataIOError(
            f"{blob_path} holds {len(blob)} bytes, expected {expected}"
        )
    fields = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(
        n_samples, n_times, n_nodes, len(channels)
    )
    return SnapshotDataset(
        fields=fields, dt=dt, ndim=ndim, grid_shape=grid_shape,
        length=length, nu=nu, channels=channels, seed=seed,
    )
