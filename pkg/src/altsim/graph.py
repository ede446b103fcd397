"""Constant graph topology, the normalized propagation operator, and the
graph convolution built on it, plus synthetic mesh constructors.

The propagation matrix is the symmetric normalization of the self-looped
binary adjacency: D^-1/2 (A + I) D^-1/2 with D the self-looped degree. It
is edge-weight independent by design; geometry enters only through the
position features fed to the network each step. Storage is CSR (scipy),
dense feature matrices ride on top.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, FormatError
from .tensor import Tensor, _track, as_tensor, matmul

MESH_FORMAT_VERSION = 1

Edge = tuple[int, int]


class Graph:
    """Immutable node/edge topology with the precomputed propagation matrix.

    Construct through :func:`build_propagation`. Safe for concurrent reads.
    """

    __slots__ = ("num_nodes", "edges", "propagation")

    def __init__(self, num_nodes: int, edges: tuple[Edge, ...], propagation: sp.csr_matrix):
        self.num_nodes = num_nodes
        self.edges = edges
        self.propagation = propagation

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={len(self.edges)})"


def canonical_edges(num_nodes: int, edges) -> tuple[Edge, ...]:
    """Validate and canonicalize an edge list: unordered pairs, endpoints in
    range, no self-edges (self-loops are implicit), no duplicates."""
    seen: set[Edge] = set()
    canon: list[Edge] = []
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < num_nodes) or not (0 <= j < num_nodes):
            raise IndexError(f"edge ({i}, {j}) out of range for {num_nodes} nodes")
        if i == j:
            raise ContractError(f"self-edge ({i}, {j}) rejected; self-loops are implicit")
        key = (i, j) if i < j else (j, i)
        if key in seen:
            raise ContractError(f"duplicate edge {key}")
        seen.add(key)
        canon.append(key)
    canon.sort()
    return tuple(canon)


def build_propagation(num_nodes: int, edges) -> Graph:
    """Build a Graph whose propagation matrix is D^-1/2 (A + I) D^-1/2.

    Isolated nodes are allowed (degree 1 from the self-loop). The result is
    exactly symmetric and its sparsity pattern is exactly that of A + I.
    """
    if num_nodes < 1:
        raise ContractError(f"need at least one node, got {num_nodes}")
    canon = canonical_edges(num_nodes, edges)

    degree = np.ones(num_nodes)  # self-loops
    for i, j in canon:
        degree[i] += 1.0
        degree[j] += 1.0
    d_inv_sqrt = 1.0 / np.sqrt(degree)

    rows = np.empty(num_nodes + 2 * len(canon), dtype=np.int64)
    cols = np.empty_like(rows)
    vals = np.empty(rows.shape[0], dtype=np.float64)
    rows[:num_nodes] = np.arange(num_nodes)
    cols[:num_nodes] = np.arange(num_nodes)
    vals[:num_nodes] = d_inv_sqrt * d_inv_sqrt
    for e, (i, j) in enumerate(canon):
        w = d_inv_sqrt[i] * d_inv_sqrt[j]
        rows[num_nodes + 2 * e] = i
        cols[num_nodes + 2 * e] = j
        rows[num_nodes + 2 * e + 1] = j
        cols[num_nodes + 2 * e + 1] = i
        vals[num_nodes + 2 * e] = w
        vals[num_nodes + 2 * e + 1] = w

    prop = sp.coo_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
    prop.sort_indices()
    return Graph(num_nodes, canon, prop)


def propagate(g: Graph, x) -> Tensor:
    """Multiply node features by the propagation matrix, differentiably."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] != g.num_nodes:
        raise DimensionError(
            f"propagate needs ({g.num_nodes}, k) features, got shape {x.shape}")
    out = Tensor(g.propagation @ x.data, requires_grad=x.requires_grad)
    prop_t = g.propagation.T

    def vjp(grad):
        return (prop_t @ grad,)

    return _track("propagate", out, (x,), vjp)


def graph_conv(g: Graph, x, theta) -> Tensor:
    """Graph convolution: propagation @ x @ theta, differentiable in x and theta."""
    x, theta = as_tensor(x), as_tensor(theta)
    if theta.data.ndim != 2 or x.data.ndim != 2 or x.shape[1] != theta.shape[0]:
        raise DimensionError(
            f"graph_conv weight shape {theta.shape} does not match features {x.shape}")
    return matmul(propagate(g, x), theta)


# ---------------------------------------------------------------------------
# Meshes

@dataclass
class MeshSpec:
    """A concrete mesh: kind tag, constructor dimensions, rest geometry in
    meters, and the graph built from its edges."""

    kind: str
    dimensions: dict[str, int | float] = field(default_factory=dict)
    rest_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    graph: Graph | None = None

    @property
    def num_nodes(self) -> int:
        return self.rest_positions.shape[0]

    def edge_rest_lengths(self) -> np.ndarray:
        i, j = edge_index_arrays(self.graph)
        d = self.rest_positions[i] - self.rest_positions[j]
        return np.linalg.norm(d, axis=1)


def edge_index_arrays(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    if len(g.edges) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.asarray(g.edges, dtype=np.int64)
    return e[:, 0], e[:, 1]


def _check_mesh(mesh: MeshSpec) -> MeshSpec:
    lengths = mesh.edge_rest_lengths()
    if lengths.size and lengths.min() <= 0.0:
        raise ContractError("mesh has a zero-length rest edge")
    if not _connected(mesh.graph):
        raise ContractError("mesh graph must be connected")
    return mesh


def _connected(g: Graph) -> bool:
    if g.num_nodes <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == g.num_nodes


def make_grid_mesh(nx: int, ny: int, spacing: float) -> MeshSpec:
    """Planar nx-by-ny grid with 4-connected edges plus both diagonals per
    quad (the diagonals brace against shear in the mass-spring generator)."""
    if nx < 2 or ny < 2:
        raise ContractError(f"grid mesh needs nx, ny >= 2, got {nx}x{ny}")
    if spacing <= 0:
        raise ContractError(f"grid spacing must be positive, got {spacing}")

    def node(ix, iy):
        return iy * nx + ix

    positions = np.zeros((nx * ny, 3))
    for iy in range(ny):
        for ix in range(nx):
            positions[node(ix, iy)] = (ix * spacing, iy * spacing, 0.0)

    edges: list[Edge] = []
    for iy in range(ny):
        for ix in range(nx):
            if ix + 1 < nx:
                edges.append((node(ix, iy), node(ix + 1, iy)))
            if iy + 1 < ny:
                edges.append((node(ix, iy), node(ix, iy + 1)))
            if ix + 1 < nx and iy + 1 < ny:
                edges.append((node(ix, iy), node(ix + 1, iy + 1)))
                edges.append((node(ix + 1, iy), node(ix, iy + 1)))

    graph = build_propagation(nx * ny, edges)
    return _check_mesh(MeshSpec("grid", {"nx": nx, "ny": ny, "spacing": spacing},
                                positions, graph))


def make_ring_mesh(num_nodes: int, radius: float) -> MeshSpec:
    """Closed ring of nodes on a circle in the xy plane."""
    if num_nodes < 3:
        raise ContractError(f"ring mesh needs >= 3 nodes, got {num_nodes}")
    if radius <= 0:
        raise ContractError(f"ring radius must be positive, got {radius}")
    angles = 2.0 * np.pi * np.arange(num_nodes) / num_nodes
    positions = np.stack([radius * np.cos(angles), radius * np.sin(angles),
                          np.zeros(num_nodes)], axis=1)
    edges = [(i, (i + 1) % num_nodes) for i in range(num_nodes)]
    graph = build_propagation(num_nodes, edges)
    return _check_mesh(MeshSpec("ring", {"n": num_nodes, "radius": radius},
                                positions, graph))


# ---------------------------------------------------------------------------
# Mesh file format: structured text (JSON) with 0-based indices.

def save_mesh(mesh: MeshSpec, path) -> None:
    doc = {
        "version": MESH_FORMAT_VERSION,
        "num_nodes": mesh.num_nodes,
        "edges": [[int(i), int(j)] for i, j in mesh.graph.edges],
        "rest_positions": [[float(c) for c in row] for row in mesh.rest_positions],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_mesh(path) -> MeshSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"mesh file {path} is not valid JSON: {e}") from e
    for key in ("version", "num_nodes", "edges", "rest_positions"):
        if key not in doc:
            raise FormatError(f"mesh file {path} missing field {key!r}")
    if doc["version"] != MESH_FORMAT_VERSION:
        raise FormatError(f"mesh file {path} has unsupported version {doc['version']}")
    positions = np.asarray(doc["rest_positions"], dtype=np.float64)
    if positions.ndim != 2 or positions.shape != (doc["num_nodes"], 3):
        raise FormatError(f"mesh file {path} rest_positions shape mismatch")
    graph = build_propagation(doc["num_nodes"], [tuple(e) for e in doc["edges"]])
    return _check_mesh(MeshSpec("loaded", {}, positions, graph))
