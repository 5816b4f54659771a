"""The learned spatial operator: attention-weighted graph layers that estimate
first and second spatial derivatives, and a small dense net mapping the
concatenated features to the state's time derivative.

Attention weights depend only on the edge displacement, and the layers only
consume state differences, so a trained model transfers to grids of other
sizes unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .errors import ConfigError, DataIOError, ShapeError
from .graph import BoundaryMask, GridGraph
from .kv import parse_kv_text

__all__ = [
    "LEAKY_SLOPE",
    "ModelConfig",
    "DynamicsModel",
    "init_params",
    "grid_spacings",
    "graph_layer1",
    "graph_layer2",
    "monomial_exponents",
    "monomial_features",
    "taylor_attention_eval",
]

LEAKY_SLOPE = 0.2

# Message slot layouts for the two derivative layers.  Slot s of a layer
# multiplies attention column ATTN_COLS[s] with difference channel
# DIFF_COLS[s]; the resulting per-edge vector is aggregated per node.  In 2-d
# the first layer emits 4 slots (one per state channel and direction) and the
# second 8 (one per gradient channel and direction).
_ATTN1_COLS = {1: np.array([0]), 2: np.array([0, 2, 1, 3])}
_DIFF1_COLS = {1: np.array([0]), 2: np.array([0, 0, 1, 1])}
_ATTN2_COLS = {1: np.array([0]), 2: np.array([0, 1, 4, 5, 2, 3, 6, 7])}
_DIFF2_COLS = {1: np.array([0]), 2: np.array([0, 0, 1, 1, 2, 2, 3, 3])}

_AGG_MODES = ("mean", "sum")


@dataclass
class ModelConfig:
    """Widths and variant switches; hidden sizes default to 32 (attention nets)
    and 32/64 (core net, by dimension).

    With ``offset_units="cells"`` the attention nets read displacements in
    grid-cell units (component-wise division by the grid spacing), which keeps
    their inputs O(1) on any resolution.  ``ref_spacing`` records the spacing
    the model was trained at; on a grid with spacing h the attention outputs
    are scaled by ref_spacing / h, so learned difference stencils transfer to
    unseen resolutions with the correct derivative scale.
    """

    ndim: int
    attention: str = "fnn"  # "fnn" | "taylor"
    attn_hidden: int = 32
    core_hidden: int | None = None
    taylor_degree: int = 3
    layer1_agg: str = "mean"
    layer2_agg: str = "mean"
    seed: int = 0
    offset_units: str = "cells"  # "cells" | "domain"
    ref_spacing: float | None = None

    def __post_init__(self):
        if self.ndim not in (1, 2):
            raise ConfigError(f"unsupported ndim {self.ndim}; expected 1 or 2")
        if self.attention not in ("fnn", "taylor"):
            raise ConfigError(f"unknown attention kind {self.attention!r}")
        if self.layer1_agg not in _AGG_MODES or self.layer2_agg not in _AGG_MODES:
            raise ConfigError("aggregation must be 'mean' or 'sum'")
        if self.offset_units not in ("cells", "domain"):
            raise ConfigError(f"unknown offset units {self.offset_units!r}")
        if self.core_hidden is None:
            self.core_hidden = 32 if self.ndim == 1 else 64

    @property
    def grad_width(self) -> int:
        return self.ndim * self.ndim

    @property
    def hess_width(self) -> int:
        return self.ndim ** 3

    @property
    def core_input_width(self) -> int:
        return self.ndim + self.grad_width + self.hess_width


def grid_spacings(offsets) -> np.ndarray:
    """Per-axis grid spacing: the smallest positive |component| over all edges."""
    arr = np.abs(np.asarray(offsets, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ShapeError("need a non-empty [E, ndim] offset array")
    spacings = np.empty(arr.shape[1])
    for axis in range(arr.shape[1]):
        positive = arr[:, axis][arr[:, axis] > 0.0]
        if positive.size == 0:
            raise ShapeError(f"no nonzero displacements along axis {axis}")
        spacings[axis] = positive.min()
    return spacings


def monomial_exponents(ndim: int, degree: int) -> list[tuple[int, ...]]:
    """Exponents of all monomials with total degree <= degree, graded-lexicographic."""
    if ndim == 1:
        return [(q,) for q in range(degree + 1)]
    exps = []
    for total in range(degree + 1):
        for px in range(total, -1, -1):
            exps.append((px, total - px))
    return exps


def monomial_features(dx: np.ndarray, degree: int) -> np.ndarray:
    """[E, Q] monomial values of the displacements, graded-lexicographic columns."""
    arr = np.asarray(dx, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    exps = monomial_exponents(arr.shape[-1], degree)
    cols = [np.prod(arr ** np.asarray(e, dtype=np.float64), axis=-1) for e in exps]
    return np.stack(cols, axis=-1)


def taylor_attention_eval(dx, weights, degree: int = 3) -> np.ndarray:
    """Polynomial attention: weighted sum of displacement monomials.

    ``weights`` rows are output channels; each row holds one weight per
    monomial of total degree <= ``degree``.
    """
    arr = np.asarray(dx, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None, :]
    ndim = arr.shape[-1] if arr.ndim > 1 else arr.shape[0]
    q = len(monomial_exponents(ndim, degree))
    if w.shape[-1] != q:
        raise ShapeError(f"expected {q} weights per output channel, got {w.shape[-1]}")
    return monomial_features(arr, degree) @ w.T


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else ad.constant(value)


def _difference_layer(graph: GridGraph, weights, field, attn_cols, diff_cols, agg: str) -> Tensor:
    w = _as_tensor(weights)
    f = _as_tensor(field)
    n_channels = int(diff_cols.max()) + 1
    if f.data.shape[-2] != graph.n_nodes:
        raise ShapeError(f"field has {f.data.shape[-2]} node rows for a {graph.n_nodes}-node graph")
    if f.data.shape[-1] != n_channels:
        raise ShapeError(f"field has {f.data.shape[-1]} channels, expected {n_channels}")
    if w.data.shape != (graph.n_edges, int(attn_cols.max()) + 1):
        raise ShapeError(
            f"attention weights of shape {w.data.shape} do not match "
            f"{graph.n_edges} edges x {int(attn_cols.max()) + 1} outputs"
        )
    diff = ad.sub(ad.gather(f, graph.targets, -2), ad.gather(f, graph.sources, -2))
    msg = ad.hadamard(ad.gather(w, attn_cols, -1), ad.gather(diff, diff_cols, -1))
    return ad.segment_reduce(msg, graph.targets, graph.n_nodes, agg)


def graph_layer1(graph: GridGraph, weights, field, agg: str = "mean") -> Tensor:
    """Gradient-estimating layer: attention-weighted state differences.

    weights: [E, ndim**2] per-edge attention outputs; field: [..., n, ndim].
    Output: [..., n, ndim**2].  A spatially constant field maps to exactly 0.
    """
    return _difference_layer(graph, weights, field, _ATTN1_COLS[graph.ndim],
                             _DIFF1_COLS[graph.ndim], agg)


def graph_layer2(graph: GridGraph, weights, grad_field, agg: str = "mean") -> Tensor:
    """Second-derivative layer over the output of :func:`graph_layer1`.

    weights: [E, ndim**3]; grad_field: [..., n, ndim**2].
    Output: [..., n, ndim**3].
    """
    return _difference_layer(graph, weights, grad_field, _ATTN2_COLS[graph.ndim],
                             _DIFF2_COLS[graph.ndim], agg)


class DynamicsModel:
    """Three trainable blocks: two edge-attention nets and the core net."""

    def __init__(self, config: ModelConfig, params: ParamSet):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig) -> "DynamicsModel":
        """Draw parameters uniformly in [-s, s] with s = 1/sqrt(fan_in) per layer."""
        rng = np.random.Generator(np.random.PCG64(config.seed))
        params = ParamSet()

        def uniform(shape, fan_in):
            s = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-s, s, size=shape)

        nd = config.ndim
        if config.attention == "fnn":
            for block, width in (("attn1", config.grad_width), ("attn2", config.hess_width)):
                h = config.attn_hidden
                params.add(f"{block}.w1", uniform((h, nd), nd))
                params.add(f"{block}.b1", uniform((h,), nd))
                params.add(f"{block}.w2", uniform((width, h), h))
                params.add(f"{block}.b2", uniform((width,), h))
        else:
            q = len(monomial_exponents(nd, config.taylor_degree))
            params.add("attn1.w", uniform((config.grad_width, q), q))
            params.add("attn2.w", uniform((config.hess_width, q), q))
        h = config.core_hidden
        params.add("core.w1", uniform((h, config.core_input_width), config.core_input_width))
        params.add("core.b1", uniform((h,), config.core_input_width))
        params.add("core.w2", uniform((nd, h), h))
        params.add("core.b2", uniform((nd,), h))
        return cls(config, params)

    @property
    def n_params(self) -> int:
        return self.params.n_values

    def _check_graph(self, graph: GridGraph) -> None:
        if graph.ndim != self.config.ndim:
            raise ShapeError(
                f"{self.config.ndim}-d model evaluated on a {graph.ndim}-d graph"
            )

    def bind_reference_spacing(self, offsets) -> None:
        """Record the training grid's spacing (no-op once set or in domain units)."""
        if self.config.offset_units == "cells" and self.config.ref_spacing is None:
            self.config.ref_spacing = float(grid_spacings(offsets).min())

    def _conditioned_offsets(self, offsets) -> tuple[np.ndarray, float]:
        """Attention-net input array plus the output scale factor."""
        arr = np.asarray(offsets, dtype=np.float64)
        if self.config.offset_units == "domain":
            return arr, 1.0
        spacings = grid_spacings(arr)
        factor = 1.0
        if self.config.ref_spacing is not None:
            factor = self.config.ref_spacing / float(spacings.min())
        return arr / spacings, factor

    def attention_weights(self, offsets, which: int) -> Tensor:
        """Evaluate attention net ``which`` (1 or 2) on the edge displacements."""
        if which not in (1, 2):
            raise ValueError(f"attention net index must be 1 or 2, got {which}")
        p = self.params
        dx_in, factor = self._conditioned_offsets(offsets)
        if self.config.attention == "fnn":
            hidden = ad.leaky_relu(
                ad.linear_forward(p[f"attn{which}.w1"], p[f"attn{which}.b1"],
                                  ad.constant(dx_in)),
                LEAKY_SLOPE,
            )
            out = ad.linear_forward(p[f"attn{which}.w2"], p[f"attn{which}.b2"], hidden)
        else:
            feats = ad.constant(monomial_features(dx_in, self.config.taylor_degree))
            out = ad.linear_forward(p[f"attn{which}.w"], None, feats)
        return out if factor == 1.0 else ad.scale(out, factor)

    def gradient_layer(self, graph: GridGraph, offsets, field) -> Tensor:
        self._check_graph(graph)
        return graph_layer1(graph, self.attention_weights(offsets, 1), field,
                            self.config.layer1_agg)

    def hessian_layer(self, graph: GridGraph, offsets, grad_field) -> Tensor:
        self._check_graph(graph)
        return graph_layer2(graph, self.attention_weights(offsets, 2), grad_field,
                            self.config.layer2_agg)

    def dynamics_fn(self, graph: GridGraph, offsets, mask: BoundaryMask | None = None):
        """Build the state-only right-hand side u -> u_t.

        Attention weights are evaluated once up front (they depend only on the
        graph), so repeated stage evaluations reuse them.  Clamped nodes emit
        exactly zero.
        """
        self._check_graph(graph)
        gamma = self.attention_weights(offsets, 1)
        beta = self.attention_weights(offsets, 2)
        keep = None if mask is None else ad.constant(mask.keep_multiplier(self.config.ndim))
        p = self.params
        agg1, agg2 = self.config.layer1_agg, self.config.layer2_agg

        def rhs(u: Tensor) -> Tensor:
            grad = graph_layer1(graph, gamma, u, agg1)
            hess = graph_layer2(graph, beta, grad, agg2)
            features = ad.concat([u, grad, hess], axis=-1)
            hidden = ad.leaky_relu(
                ad.linear_forward(p["core.w1"], p["core.b1"], features), LEAKY_SLOPE
            )
            out = ad.linear_forward(p["core.w2"], p["core.b2"], hidden)
            if keep is not None:
                out = ad.hadamard(out, keep)
            return out

        return rhs

    def dynamics(self, graph: GridGraph, offsets, u, mask: BoundaryMask | None = None) -> Tensor:
        """One right-hand-side evaluation; see :meth:`dynamics_fn`."""
        return self.dynamics_fn(graph, offsets, mask)(_as_tensor(u))

    def dynamics_array_fn(self, graph: GridGraph, offsets, mask: BoundaryMask | None = None):
        """ndarray-in / ndarray-out right-hand side for plain rollouts."""
        f = self.dynamics_fn(graph, offsets, mask)

        def rhs(u: np.ndarray) -> np.ndarray:
            return f(ad.constant(u)).data

        return rhs

    # -- checkpointing ------------------------------------------------------

    def save(self, path) -> None:
        """Checkpoint: UTF-8 key=value header, blank line, little-endian f64 blob."""
        cfg = self.config
        header = {
            "format": "graphode-checkpoint-v1",
            "ndim": str(cfg.ndim),
            "attention": cfg.attention,
            "attn_hidden": str(cfg.attn_hidden),
            "core_hidden": str(cfg.core_hidden),
            "taylor_degree": str(cfg.taylor_degree),
            "layer1_agg": cfg.layer1_agg,
            "layer2_agg": cfg.layer2_agg,
            "seed": str(cfg.seed),
            "offset_units": cfg.offset_units,
            "ref_spacing": "none" if cfg.ref_spacing is None else f"{cfg.ref_spacing:.17g}",
            "params": ",".join(self.params.names()),
            "n_values": str(self.params.n_values),
            "created": datetime.now(timezone.utc).isoformat(),
        }
        text = "".join(f"{k}={v}\n" for k, v in header.items())
        Path(path).write_bytes(text.encode("utf-8") + b"\n" + self.params.to_blob())

    @classmethod
    def load(cls, path) -> "DynamicsModel":
        raw = Path(path).read_bytes()
        sep = raw.find(b"\n\n")
        if sep < 0:
            raise DataIOError(f"checkpoint {path}: missing header separator")
        try:
            pairs = parse_kv_text(raw[:sep].decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise DataIOError(f"checkpoint {path}: bad header ({exc})") from exc
        if pairs.get("format") != "graphode-checkpoint-v1":
            raise DataIOError(f"checkpoint {path}: unknown format {pairs.get('format')!r}")
        try:
            ref = pairs["ref_spacing"]
            config = ModelConfig(
                ndim=int(pairs["ndim"]),
                attention=pairs["attention"],
                attn_hidden=int(pairs["attn_hidden"]),
                core_hidden=int(pairs["core_hidden"]),
                taylor_degree=int(pairs["taylor_degree"]),
                layer1_agg=pairs["layer1_agg"],
                layer2_agg=pairs["layer2_agg"],
                seed=int(pairs["seed"]),
                offset_units=pairs["offset_units"],
                ref_spacing=None if ref == "none" else float(ref),
            )
        except KeyError as exc:
            raise DataIOError(f"checkpoint {path}: missing header key {exc}") from exc
        model = cls.initialize(config)
        declared = pairs.get("params", "")
        if declared != ",".join(model.params.names()):
            raise DataIOError(f"checkpoint {path}: parameter list does not match architecture")
        model.params.load_blob(raw[sep + 2:])
        return model


def init_params(ndim: int, rng_seed: int = 0, **overrides) -> DynamicsModel:
    """Construct a freshly initialized model; deterministic given the seed."""
    return DynamicsModel.initialize(ModelConfig(ndim=ndim, seed=rng_seed, **overrides))
