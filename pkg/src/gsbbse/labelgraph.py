"""Class-similarity graphs, their Laplacians, and spectral quantities.

The graph couples classes whose embeddings are close; its unnormalised
Laplacian ``L = D - W`` is the precision template of every smoothing
prior in the package.  Construction is deterministic: ties among
equidistant neighbours are broken toward the lower class index, and a
disconnected k-NN result is repaired by adding minimum-distance bridge
edges between components.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

# Eigenvalues within this of zero count as zero when deciding
# connectivity and when asserting positive semidefiniteness.
SPECTRAL_TOL = 1e-10


@dataclass(frozen=True)
class ClassEmbeddings:
    """One embedding vector per class, all of the same dimension."""

    vectors: np.ndarray
    labels: tuple[str, ...]
    unit_normalized: bool = False

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        if vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {vectors.shape}")
        k, d = vectors.shape
        if k < 2:
            raise ValueError(f"need at least 2 classes, got {k}")
        if d < 1:
            raise ValueError("embedding dimension must be >= 1")
        if len(self.labels) != k:
            raise ValueError(f"{len(self.labels)} labels for {k} embedding rows")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embeddings contain non-finite entries")
        if self.unit_normalized:
            norms = np.linalg.norm(vectors, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("unit_normalized set but rows are not unit length")

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class LabelGraph:
    """Weighted undirected graph over the K class labels.

    ``weights`` is a symmetric K x K matrix with zero diagonal and
    entries in [0, 1]; ``edges`` lists each undirected pair once as
    ``(i, j)`` with ``i < j``.
    """

    n_classes: int
    edges: tuple[tuple[int, int], ...]
    weights: np.ndarray
    connected: bool
    sigma: float = float("nan")

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        k = self.n_classes
        if w.shape != (k, k):
            raise ValueError(f"weight matrix shape {w.shape} does not match K={k}")
        if not np.allclose(w, w.T, atol=0.0):
            raise ValueError("weight matrix must be exactly symmetric")
        if np.any(np.diag(w) != 0.0):
            raise ValueError("weight matrix must have zero diagonal")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("edge weights must lie in [0, 1]")


@dataclass(frozen=True)
class LaplacianMatrix:
    """Unnormalised Laplacian with its full eigendecomposition.

    Eigenvalues are ascending; ``lambda2`` is the algebraic connectivity
    (zero for a disconnected graph).
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lambda2: float
    connected: bool
    degrees: np.ndarray = field(repr=False, default=None)

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    def quadratic_form(self, x: np.ndarray) -> float:
        """``x^T L x``, the smoothness energy of ``x`` on the graph."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.matrix @ x)

    def pseudoinverse(self) -> np.ndarray:
        """Moore-Penrose pseudoinverse via the stored eigenpairs."""
        lam, u = self.eigenvalues, self.eigenvectors
        pos = lam > SPECTRAL_TOL
        return (u[:, pos] / lam[pos]) @ u[:, pos].T


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def _components(n: int, edges: set[tuple[int, int]]) -> list[set[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, set[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return list(groups.values())


def build_knn_graph(embeddings: ClassEmbeddings, k: int) -> LabelGraph:
    """Symmetrized k-nearest-neighbour graph with Gaussian edge weights.

    Each class is linked to its ``k`` nearest neighbours by Euclidean
    distance (ties broken toward the lower index); the edge set is the
    union over directions.  If the result is disconnected, the closest
    pair of nodes across components is bridged repeatedly until a single
    component remains.  Weights are ``exp(-d_ij^2 / sigma^2)`` with
    ``sigma`` the median distance over the retained edges.
    """
    K = embeddings.n_classes
    if not 1 <= k < K:
        raise ValueError(f"k must satisfy 1 <= k < K={K}, got {k}")
    dist = _pairwise_distances(embeddings.vectors)

    edges: set[tuple[int, int]] = set()
    for i in range(K):
        order = np.lexsort((np.arange(K), dist[i]))
        neighbours = [j for j in order if j != i][:k]
        for j in neighbours:
            edges.add((min(i, j), max(i, j)))

    comps = _components(K, edges)
    while len(comps) > 1:
        best = None
        for a_idx in range(len(comps)):
            for b_idx in range(a_idx + 1, len(comps)):
                for i in sorted(comps[a_idx]):
                    for j in sorted(comps[b_idx]):
                        key = (dist[i, j], min(i, j), max(i, j))
                        if best is None or key < best:
                            best = key
        _, i, j = best
        edges.add((i, j))
        comps = _components(K, edges)

    edge_list = sorted(edges)
    edge_d = np.array([dist[i, j] for i, j in edge_list])
    sigma = float(np.median(edge_d))
    weights = np.zeros((K, K))
    for (i, j), d in zip(edge_list, edge_d):
        w = 1.0 if sigma == 0.0 else float(np.exp(-(d * d) / (sigma * sigma)))
        weights[i, j] = weights[j, i] = w
    return LabelGraph(
        n_classes=K,
        edges=tuple(edge_list),
        weights=weights,
        connected=len(_components(K, edges)) == 1,
        sigma=sigma,
    )


def graph_from_weights(weights: np.ndarray) -> LabelGraph:
    """Wrap an explicit symmetric weight matrix as a LabelGraph."""
    weights = np.asarray(weights, dtype=float)
    K = weights.shape[0]
    edges = tuple(
        (i, j) for i in range(K) for j in range(i + 1, K) if weights[i, j] > 0.0
    )
    connected = len(_components(K, set(edges))) == 1
    return LabelGraph(n_classes=K, edges=edges, weights=weights, connected=connected)


def identity_fallback_graph(K: int) -> LabelGraph:
    """No-similarity configuration: independent smoothing of each class.

    Returns the complete graph with uniform weights ``1/K``, whose
    Laplacian is exactly the projector onto the sum-zero subspace, so the
    prior precision becomes ``tau * I`` restricted to that subspace (an
    independent logistic-Normal prior).
    """
    if K < 2:
        raise ValueError(f"need K >= 2, got {K}")
    weights = np.full((K, K), 1.0 / K)
    np.fill_diagonal(weights, 0.0)
    return graph_from_weights(weights)


def path_graph(K: int) -> LabelGraph:
    """Path 0-1-...-(K-1) with unit weights."""
    w = np.zeros((K, K))
    for i in range(K - 1):
        w[i, i + 1] = w[i + 1, i] = 1.0
    return graph_from_weights(w)


def cycle_graph(K: int) -> LabelGraph:
    """Cycle on K nodes with unit weights."""
    w = np.zeros((K, K))
    for i in range(K):
        j = (i + 1) % K
        w[i, j] = w[j, i] = 1.0
    return graph_from_weights(w)


def complete_graph(K: int) -> LabelGraph:
    """Complete graph on K nodes with unit weights."""
    w = np.ones((K, K))
    np.fill_diagonal(w, 0.0)
    return graph_from_weights(w)


def laplacian(graph: LabelGraph) -> LaplacianMatrix:
    """Unnormalised Laplacian ``L = D - W`` with eigendecomposition.

    A dense symmetric eigensolve is used; K stays in the hundreds here.
    ``lambda2 > 0`` iff the graph is connected; a disconnected graph is
    not an error at this stage (prior construction rejects it later).
    """
    w = graph.weights
    deg = w.sum(axis=1)
    L = np.diag(deg) - w
    lam, u = np.linalg.eigh(L)
    lam2 = float(lam[1]) if len(lam) > 1 else 0.0
    connected = lam2 > SPECTRAL_TOL
    return LaplacianMatrix(
        matrix=L,
        eigenvalues=lam,
        eigenvectors=u,
        lambda2=lam2 if connected else 0.0,
        connected=connected,
        degrees=deg,
    )


# ---------------------------------------------------------------------------
# File formats: embeddings in (CSV | JSON), graphs as JSON.

def load_embeddings_csv(path) -> ClassEmbeddings:
    """Read ``label, x_1, ..., x_D`` rows; raises with a line number on error."""
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'label,v1,...', got {row!r}")
            labels.append(row[0].strip())
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad float ({exc})") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(
                    f"{path}:{lineno}: dimension {len(rows[-1])} != {len(rows[0])}"
                )
    if not rows:
        raise ValueError(f"{path}: no embedding rows found")
    return ClassEmbeddings(vectors=np.array(rows), labels=tuple(labels))


def load_embeddings_json(path) -> ClassEmbeddings:
    """Read a JSON array of ``{"label": ..., "vector": [...]}`` objects."""
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: expected a non-empty JSON array")
    labels = [str(e["label"]) for e in entries]
    vectors = np.array([e["vector"] for e in entries], dtype=float)
    return ClassEmbeddings(vectors=vectors, labels=tuple(labels))


def load_embeddings(path) -> ClassEmbeddings:
    path = str(path)
    if path.endswith(".json"):
        return load_embeddings_json(path)
    return load_embeddings_csv(path)


def graph_to_dict(graph: LabelGraph, lap: LaplacianMatrix | None = None) -> dict:
    if lap is None:
        lap = laplacian(graph)
    return {
        "K": graph.n_classes,
        "edges": [[int(i), int(j), float(graph.weights[i, j])] for i, j in graph.edges],
        "lambda2": lap.lambda2,
        "connected": bool(graph.connected),
    }


def graph_from_dict(payload: dict) -> LabelGraph:
    K = int(payload["K"])
    weights = np.zeros((K, K))
    for i, j, w in payload["edges"]:
        weights[int(i), int(j)] = weights[int(j), int(i)] = float(w)
    return graph_from_weights(weights)


def save_graph_json(graph: LabelGraph, path, lap: LaplacianMatrix | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph, lap), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph_json(path) -> LabelGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
