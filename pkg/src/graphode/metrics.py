"""Prediction-error metrics and the derivative-capture validation report."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .burgers import central_difference_oracle
from .data import SnapshotDataset
from .errors import DataIOError, ShapeError
from .graph import GridGraph
from .kv import format_float
from .model import DynamicsModel

__all__ = [
    "MetricsTable",
    "l2_error_per_time_index",
    "l1_error_field",
    "compute_metrics",
    "write_metrics_csv",
    "read_metrics_csv",
    "DerivativeCaptureReport",
    "derivative_capture_report",
]

CSV_HEADER = "time_index,eps_l2,mean_l1,rmse_norm"


def l2_error_per_time_index(pred: np.ndarray, target: np.ndarray, j: int) -> float:
    """Sum over samples of the squared L2 node-norm difference at time index j.

    Unnormalized by design; see the ``rmse_norm`` column for a grid-size
    independent companion.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.ndim != 4:
        raise ShapeError(f"expected [samples, times, nodes, channels], got shape {p.shape}")
    diff = p[:, j] - t[:, j]
    return float((diff * diff).sum())


def l1_error_field(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Elementwise absolute difference."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    return np.abs(p - t)


@dataclass
class MetricsTable:
    """Per-time-index error rows plus free-form metadata."""

    time_indices: list[int] = field(default_factory=list)
    eps_l2: list[float] = field(default_factory=list)
    mean_l1: list[float] = field(default_factory=list)
    rmse_norm: list[float] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def row(self, j: int) -> tuple[float, float, float]:
        i = self.time_indices.index(j)
        return self.eps_l2[i], self.mean_l1[i], self.rmse_norm[i]


def compute_metrics(pred: np.ndarray, target: np.ndarray,
                    metadata: dict[str, str] | None = None) -> MetricsTable:
    """Evaluate every stored time index of [S, T, n, C] predictions."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    table = MetricsTable(metadata=dict(metadata or {}))
    n_entries = p.shape[0] * p.shape[2] * p.shape[3]
    for j in range(p.shape[1]):
        eps = l2_error_per_time_index(p, t, j)
        table.time_indices.append(j)
        table.eps_l2.append(eps)
        table.mean_l1.append(float(np.abs(p[:, j] - t[:, j]).mean()))
        table.rmse_norm.append(float(np.sqrt(eps / n_entries)))
    return table


def write_metrics_csv(table: MetricsTable, path) -> Path:
    """UTF-8, LF-terminated CSV; floats carry 17 significant digits."""
    out = Path(path)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in table.metadata.items():
            fh.write(f"# {key}={value}\n")
        fh.write(CSV_HEADER + "\n")
        for j, eps, l1, rmse in zip(table.time_indices, table.eps_l2,
                                    table.mean_l1, table.rmse_norm):
            fh.write(f"{j},{format_float(eps)},{format_float(l1)},{format_float(rmse)}\n")
    return out


def read_metrics_csv(path) -> MetricsTable:
    table = MetricsTable()
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            table.metadata[key] = value
        elif line.strip():
            body.append(line)
    if not body or body[0] != CSV_HEADER:
        raise DataIOError(f"{path}: expected header {CSV_HEADER!r}")
    for line in body[1:]:
        cells = line.split(",")
        if len(cells) != 4:
            raise DataIOError(f"{path}: malformed row {line!r}")
        table.time_indices.append(int(cells[0]))
        table.eps_l2.append(float(cells[1]))
        table.mean_l1.append(float(cells[2]))
        table.rmse_norm.append(float(cells[3]))
    return table


@dataclass
class DerivativeCaptureReport:
    """Relative L2 discrepancy between the graph layers and central differences."""

    rel_l2_layer1: float
    rel_l2_layer2: float
    n_fields: int
    per_field_layer1: list[float] = field(default_factory=list)
    per_field_layer2: list[float] = field(default_factory=list)


# 2-d layer outputs compared against the oracle: the first layer's slots align
# positionally with direction-major first derivatives; for the second layer
# only the pure-derivative slots are compared.
_PURE_SECOND_SLOTS = {1: np.array([0]), 2: np.array([0, 2, 5, 7])}


def _rel_l2(est: np.ndarray, ref: np.ndarray) -> float:
    denom = float(np.linalg.norm(ref))
    if denom < 1e-30:
        return float(np.linalg.norm(est))
    return float(np.linalg.norm(est - ref) / denom)


def derivative_capture_report(model: DynamicsModel, graph: GridGraph, offsets,
                              dataset: SnapshotDataset,
                              sample_indices=None, time_indices=None) -> DerivativeCaptureReport:
    """Compare the two graph layers against central differences on snapshots.

    Report-only: no threshold is enforced here.  Layer 2 is evaluated on the
    layer-1 output, mirroring how the dynamics composes them.
    """
    samples = range(dataset.n_samples) if sample_indices is None else sample_indices
    times = range(dataset.n_times) if time_indices is None else time_indices
    rel1: list[float] = []
    rel2: list[float] = []
    pure = _PURE_SECOND_SLOTS[dataset.ndim]
    for s in samples:
        for t in times:
            u = dataset.fields[s, t]
            grad = model.gradient_layer(graph, offsets, ad.constant(u)).data
            hess = model.hessian_layer(graph, offsets, ad.constant(grad)).data
            oracle1 = central_difference_oracle(u, dataset.grid_shape, dataset.length, order=1)
            oracle2 = central_difference_oracle(u, dataset.grid_shape, dataset.length, order=2)
            rel1.append(_rel_l2(grad, oracle1))
            rel2.append(_rel_l2(hess[:, pure], oracle2))
    return DerivativeCaptureReport(
        rel_l2_layer1=float(np.mean(rel1)),
        rel_l2_layer2=float(np.mean(rel2)),
        n_fields=len(rel1),
        per_field_layer1=rel1,
        per_field_layer2=rel2,
    )
