"""Periodic k-nearest-neighbour grid graphs with per-edge displacement features.

Node layout: 1-d grids place node ``i`` at ``i * L / n``.  2-d grids use
row-major node index ``iy * nx + ix`` with node ``(ix, iy)`` at
``(ix * L / nx, iy * L / ny)``.  Edges are directed source -> target and
stored grouped by target.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .kv import format_float

__all__ = [
    "GridGraph",
    "BoundaryMask",
    "build_periodic_grid_1d",
    "build_periodic_grid_2d",
    "edge_relative_offsets",
    "apply_dirichlet_mask",
    "write_edge_list",
]


@dataclass(frozen=True)
class GridGraph:
    """Immutable directed graph over grid nodes.

    coords: [n, ndim] node positions in [0, L)^ndim
    sources/targets: [E] edge endpoint indices, grouped by target
    lengths: [ndim] periodic domain extent per axis
    """

    coords: np.ndarray
    sources: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        if self.sources.size and np.any(self.sources == self.targets):
            raise ShapeError("self-edges are not allowed")
        for arr in (self.coords, self.sources, self.targets, self.lengths):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def ndim(self) -> int:
        return self.coords.shape[1]

    @property
    def n_edges(self) -> int:
        return self.sources.size

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.n_nodes)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.sources, minlength=self.n_nodes)

    def in_neighbors(self, node: int) -> np.ndarray:
        return self.sources[self.targets == node]


@dataclass(frozen=True)
class BoundaryMask:
    """Node set whose dynamics output is pinned to zero.

    indices: sorted unique boundary node ids
    clamp: [n] boolean flags, True at clamped nodes
    """

    indices: np.ndarray
    clamp: np.ndarray

    def keep_multiplier(self, channels: int) -> np.ndarray:
        """[n, channels] array of 1s with 0 rows at clamped nodes."""
        keep = (~self.clamp).astype(np.float64)
        return np.repeat(keep[:, None], channels, axis=1)


def minimal_image(delta: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Wrap displacements so every component lies in (-L/2, L/2]."""
    wrapped = delta - lengths * np.round(delta / lengths)
    return np.where(wrapped <= -0.5 * lengths, wrapped + lengths, wrapped)


def _assemble(coords: np.ndarray, per_node_sources: list[np.ndarray],
              lengths: np.ndarray) -> GridGraph:
    n = coords.shape[0]
    k_each = [len(s) for s in per_node_sources]
    targets = np.repeat(np.arange(n, dtype=np.int64), k_each)
    sources = np.concatenate(per_node_sources).astype(np.int64) if n else np.empty(0, np.int64)
    return GridGraph(coords=coords, sources=sources, targets=targets, lengths=lengths)


def _nearest(i: int, coords: np.ndarray, lengths: np.ndarray,
             candidates: dict[int, float], k: int) -> np.ndarray:
    js = np.fromiter(candidates.keys(), dtype=np.int64, count=len(candidates))
    d2 = np.fromiter(candidates.values(), dtype=np.float64, count=len(candidates))
    if js.size < k:
        raise ShapeError(f"node {i}: only {js.size} candidate neighbours for k={k}")
    order = np.lexsort((js, d2))  # distance first, node index breaks ties
    return js[order[:k]]


def build_periodic_grid_1d(n: int, length: float = 1.0, k: int = 4) -> GridGraph:
    """Ring of ``n`` uniform nodes; each node receives edges from its ``k``
    nearest neighbours under the minimal-image metric."""
    if k < 1:
        raise ShapeError(f"k must be positive, got {k}")
    if n <= k:
        raise ShapeError(f"need more than k={k} nodes, got n={n}")
    h = length / n
    coords = (np.arange(n, dtype=np.float64) * h)[:, None]
    lengths = np.asarray([length], dtype=np.float64)
    window = min(n // 2, k // 2 + 2)
    per_node = []
    for i in range(n):
        candidates: dict[int, float] = {}
        for off in range(1, window + 1):
            for j in ((i - off) % n, (i + off) % n):
                if j != i and j not in candidates:
                    delta = minimal_image(coords[j] - coords[i], lengths)
                    candidates[j] = float(delta[0] * delta[0])
        per_node.append(_nearest(i, coords, lengths, candidates, k))
    return _assemble(coords, per_node, lengths)


def build_periodic_grid_2d(nx: int, ny: int, length: float = 1.0, k: int = 8) -> GridGraph:
    """Uniform periodic nx-by-ny grid; node (ix, iy) has index iy*nx + ix."""
    if k < 1:
        raise ShapeError(f"k must be positive, got {k}")
    if nx < 1 or ny < 1 or nx * ny <= k:
        raise ShapeError(f"degenerate grid: {nx}x{ny} nodes with k={k}")
    hx, hy = length / nx, length / ny
    xs = np.arange(nx, dtype=np.float64) * hx
    ys = np.arange(ny, dtype=np.float64) * hy
    X, Y = np.meshgrid(xs, ys)
    coords = np.stack([X.ravel(), Y.ravel()], axis=-1)
    lengths = np.asarray([length, length], dtype=np.float64)
    radius = 1
    while (2 * radius + 1) ** 2 - 1 < k + 4:
        radius += 1
    rx, ry = min(radius, nx // 2), min(radius, ny // 2)
    rx, ry = max(rx, 1), max(ry, 1)
    per_node = []
    for i in range(nx * ny):
        ix, iy = i % nx, i // nx
        candidates: dict[int, float] = {}
        for dy in range(-ry, ry + 1):
            for dx in range(-rx, rx + 1):
                j = ((iy + dy) % ny) * nx + (ix + dx) % nx
                if j == i or j in candidates:
                    continue
                delta = minimal_image(coords[j] - coords[i], lengths)
                candidates[j] = float(delta[0] * delta[0] + delta[1] * delta[1])
        per_node.append(_nearest(i, coords, lengths, candidates, k))
    return _assemble(coords, per_node, lengths)


def edge_relative_offsets(graph: GridGraph) -> np.ndarray:
    """Per-edge displacement x_target - x_source under the minimal-image rule.

    Every component lies in (-L/2, L/2]; the offset of a reverse edge is the
    negation.
    """
    delta = graph.coords[graph.targets] - graph.coords[graph.sources]
    return minimal_image(delta, graph.lengths)


def apply_dirichlet_mask(graph: GridGraph, boundary) -> tuple[GridGraph, BoundaryMask]:
    """Remove all edges pointing into ``boundary`` nodes and flag them for clamping.

    Edges leaving boundary nodes are kept, so masked nodes still inform their
    neighbours.
    """
    idx = np.unique(np.asarray(list(boundary), dtype=np.int64)) if boundary is not None else np.empty(0, np.int64)
    if idx.size and (int(idx.min()) < 0 or int(idx.max()) >= graph.n_nodes):
        bad = idx[(idx < 0) | (idx >= graph.n_nodes)]
        raise ShapeError(f"unknown node index {bad[0]} for graph with {graph.n_nodes} nodes")
    keep = ~np.isin(graph.targets, idx)
    masked = GridGraph(
        coords=graph.coords,
        sources=graph.sources[keep].copy(),
        targets=graph.targets[keep].copy(),
        lengths=graph.lengths,
    )
    clamp = np.zeros(graph.n_nodes, dtype=bool)
    clamp[idx] = True
    return masked, BoundaryMask(indices=idx, clamp=clamp)


def write_edge_list(graph: GridGraph, path) -> None:
    """Plain-text debug dump: one ``source target dx [dy]`` line per edge."""
    offsets = edge_relative_offsets(graph)
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for e in range(graph.n_edges):
            comps = " ".join(format_float(c) for c in offsets[e])
            fh.write(f"{graph.sources[e]} {graph.targets[e]} {comps}\n")
