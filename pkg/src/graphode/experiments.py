"""End-to-end experiment modes: data generation, training, rollout,
evaluation, and the attention-variant comparison.

Every run writes ``run_manifest.kv`` with the fully resolved settings so the
run can be reproduced bit for bit.  Partial outputs are removed on failure.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np

from .burgers import SolverConfig, generate_burgers_dataset, subsample_snapshots
from .config import ExperimentConfig
from .data import SnapshotDataset, read_dataset, write_dataset
from .errors import ConfigError
from .graph import GridGraph, build_periodic_grid_1d, build_periodic_grid_2d, edge_relative_offsets
from .integrators import IntegratorConfig, rollout
from .kv import format_float, format_kv_text
from .metrics import compute_metrics, derivative_capture_report, write_metrics_csv
from .model import DynamicsModel, ModelConfig
from .training import TrainSchedule, train

__all__ = ["run_experiment", "graph_for_dataset", "rollout_predictions"]


def graph_for_dataset(ds: SnapshotDataset) -> tuple[GridGraph, np.ndarray]:
    """Build the periodic neighbour graph matching a dataset's grid."""
    if ds.ndim == 1:
        graph = build_periodic_grid_1d(ds.grid_shape[0], ds.length)
    else:
        ny, nx = ds.grid_shape
        graph = build_periodic_grid_2d(nx, ny, ds.length)
    return graph, edge_relative_offsets(graph)


def rollout_predictions(model: DynamicsModel, ds: SnapshotDataset, steps: int) -> np.ndarray:
    """Batched model rollout from every sample's initial snapshot: [S, steps+1, n, C]."""
    graph, offsets = graph_for_dataset(ds)
    f = model.dynamics_array_fn(graph, offsets)
    traj = rollout(f, ds.fields[:, 0], IntegratorConfig("rk4_38", ds.dt, steps))
    return traj.states.transpose(1, 0, 2, 3)


def _write_manifest(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> Path:
    path = out_dir / "run_manifest.kv"
    path.write_text(format_kv_text(cfg.as_manifest()), encoding="utf-8")
    created.append(path)
    return path


def _model_config(cfg: ExperimentConfig, ndim: int, attention: str | None = None) -> ModelConfig:
    return ModelConfig(
        ndim=ndim,
        attention=attention if attention is not None else cfg.get("attention", "fnn"),
        attn_hidden=cfg.get("attn_hidden", 32),
        core_hidden=cfg.values.get("core_hidden"),
        taylor_degree=cfg.get("taylor_degree", 3),
        layer1_agg=cfg.get("layer1_agg", "mean"),
        layer2_agg=cfg.get("layer2_agg", "mean"),
        offset_units=cfg.get("offset_units", "cells"),
        seed=cfg.get("model_seed", 0),
    )


def _schedule(cfg: ExperimentConfig) -> TrainSchedule:
    return TrainSchedule.from_strings(
        cfg.values.get("tau_list"), cfg["lr_list"], cfg.values.get("depth_list")
    )


def _load_training_set(cfg: ExperimentConfig) -> SnapshotDataset:
    ds = read_dataset(cfg["dataset"])
    limit = cfg.values.get("train_samples")
    if limit is not None:
        if not 1 <= limit <= ds.n_samples:
            raise ConfigError(
                f"train_samples={limit} out of range for {ds.n_samples} stored samples"
            )
        ds = ds.take_samples(range(limit))
    return ds


def _write_report_csv(report, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,tau,eta,loss,elapsed_s\n")
        for e, (tau, eta, loss, elapsed) in enumerate(
            zip(report.taus, report.etas, report.losses, report.elapsed)
        ):
            fh.write(f"{e},{tau},{format_float(eta)},{format_float(loss)},{format_float(elapsed)}\n")
    return path


def _run_generate(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> dict[str, str]:
    ndim = cfg["ndim"]
    if ndim not in (1, 2):
        raise ConfigError(f"ndim must be 1 or 2, got {ndim}")
    if ndim == 2 and cfg.values.get("ny") is None:
        raise ConfigError("2-d generation needs ny")
    solver = SolverConfig(
        nu=cfg["nu"],
        nx=cfg["nx"],
        ny=cfg.values.get("ny") if ndim == 2 else None,
        length=cfg.get("length", 1.0),
        dt_ref=cfg["dt_ref"],
        t_end=cfg["t_end"],
        store_every=cfg.get("store_every", 1),
        advection=cfg.get("advection", True),
        advection_form=cfg.get("advection_form", "conservative"),
    )
    ds = generate_burgers_dataset(solver, cfg["n_samples"], cfg.get("seed", 0))
    train_dt = cfg.values.get("train_dt")
    if train_dt is not None:
        ds = subsample_snapshots(ds, train_dt)
    manifest, blob = write_dataset(ds, out_dir)
    created.extend([manifest, blob])
    return {"dataset": str(out_dir)}


def _run_train(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> dict[str, str]:
    ds = _load_training_set(cfg)
    graph, offsets = graph_for_dataset(ds)
    model = DynamicsModel.initialize(_model_config(cfg, ds.ndim))
    schedule = _schedule(cfg)
    report = train(model, graph, offsets, ds, schedule,
                   last_only=cfg.get("last_only", False),
                   optimizer=cfg.get("optimizer", "adam"),
                   calibrate=cfg.get("calibrate", True))
    ckpt = out_dir / cfg.get("checkpoint", "model.ckpt")
    model.save(ckpt)
    created.append(ckpt)
    report.checkpoint_path = str(ckpt)
    report_path = _write_report_csv(report, out_dir / "training_report.csv")
    created.append(report_path)
    return {"checkpoint": str(ckpt), "report": str(report_path)}


def _run_rollout(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> dict[str, str]:
    ds = read_dataset(cfg["dataset"])
    model = DynamicsModel.load(cfg["model"])
    steps = cfg.values.get("steps")
    if steps is None:
        steps = ds.n_times - 1
    preds = rollout_predictions(model, ds, steps)
    out_ds = SnapshotDataset(
        fields=preds, dt=ds.dt, ndim=ds.ndim, grid_shape=ds.grid_shape,
        length=ds.length, nu=ds.nu, channels=ds.channels, seed=ds.seed,
    )
    target = out_dir / cfg.get("output", "rollout")
    write_dataset(out_ds, target)
    created.append(target)
    return {"rollout": str(target)}


def _run_eval(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> dict[str, str]:
    pred = read_dataset(cfg["predictions"])
    tgt = read_dataset(cfg["targets"])
    table = compute_metrics(
        pred.fields, tgt.fields,
        metadata={"predictions": str(cfg["predictions"]), "targets": str(cfg["targets"])},
    )
    metrics_path = write_metrics_csv(table, out_dir / cfg.get("metrics", "metrics.csv"))
    created.append(metrics_path)
    artifacts = {"metrics": str(metrics_path)}
    model_path = cfg.values.get("model")
    if model_path is not None:
        model = DynamicsModel.load(model_path)
        graph, offsets = graph_for_dataset(tgt)
        capture = derivative_capture_report(model, graph, offsets, tgt)
        capture_path = out_dir / "derivative_capture.csv"
        with open(capture_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("layer,rel_l2,n_fields\n")
            fh.write(f"1,{format_float(capture.rel_l2_layer1)},{capture.n_fields}\n")
            fh.write(f"2,{format_float(capture.rel_l2_layer2)},{capture.n_fields}\n")
        created.append(capture_path)
        artifacts["derivative_capture"] = str(capture_path)
    return artifacts


def _run_compare_attention(cfg: ExperimentConfig, out_dir: Path, created: list[Path]) -> dict[str, str]:
    ds = _load_training_set(cfg)
    test = read_dataset(cfg["test_dataset"]) if cfg.values.get("test_dataset") else None
    schedule = _schedule(cfg)
    rows = []
    artifacts: dict[str, str] = {}
    for kind in ("fnn", "taylor"):
        graph, offsets = graph_for_dataset(ds)
        model = DynamicsModel.initialize(_model_config(cfg, ds.ndim, attention=kind))
        report = train(model, graph, offsets, ds, schedule,
                       last_only=cfg.get("last_only", False),
                       optimizer=cfg.get("optimizer", "adam"),
                       calibrate=cfg.get("calibrate", True))
        ckpt = out_dir / f"model_{kind}.ckpt"
        model.save(ckpt)
        created.append(ckpt)
        artifacts[f"checkpoint_{kind}"] = str(ckpt)
        if test is not None:
            preds = rollout_predictions(model, test, test.n_times - 1)
            table = compute_metrics(preds, test.fields)
            mean_eps = float(np.mean(table.eps_l2[1:])) if len(table.eps_l2) > 1 else 0.0
            mean_rmse = float(np.mean(table.rmse_norm[1:])) if len(table.rmse_norm) > 1 else 0.0
        else:
            mean_eps = float("nan")
            mean_rmse = float("nan")
        rows.append((kind, model.n_params, report.final_loss, mean_eps, mean_rmse))
    comparison = out_dir / "attention_comparison.csv"
    with open(comparison, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("attention,n_params,final_train_loss,mean_eps_l2,mean_rmse_norm\n")
        for kind, n_params, loss, eps, rmse in rows:
            fh.write(f"{kind},{n_params},{format_float(loss)},{format_float(eps)},{format_float(rmse)}\n")
    created.append(comparison)
    artifacts["comparison"] = str(comparison)
    return artifacts


_RUNNERS = {
    "generate": _run_generate,
    "train": _run_train,
    "rollout": _run_rollout,
    "eval": _run_eval,
    "compare-attention": _run_compare_attention,
}

_PATH_KEYS = ("dataset", "model", "predictions", "targets", "test_dataset")


def _check_paths(cfg: ExperimentConfig) -> None:
    for key in _PATH_KEYS:
        value = cfg.values.get(key)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"key {key!r}: path does not exist: {value}")


def run_experiment(cfg: ExperimentConfig) -> dict[str, str]:
    """Execute one mode end to end; returns a name -> path map of artifacts."""
    _check_paths(cfg)
    out_dir = Path(cfg["out_dir"])
    created_dir = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    try:
        _write_manifest(cfg, out_dir, created)
        artifacts = _RUNNERS[cfg.mode](cfg, out_dir, created)
        artifacts["run_manifest"] = str(out_dir / "run_manifest.kv")
        return artifacts
    except BaseException:
        for path in reversed(created):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()
        if created_dir:
            try:
                out_dir.rmdir()
            except OSError:
                pass
        raise
