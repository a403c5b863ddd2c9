"""Content similarity graph, skip-gram node embeddings, and the threshold
recommendation used by providers stopped at intersections.

The graph is built from co-consumption (Jaccard-weighted edges). Node vectors
are trained with plain SGD on the full-softmax skip-gram objective over
random-walk neighborhoods, which keeps the gradient exactly checkable;
negative sampling is a guarded escape hatch for large catalogs. Consumers are
represented by the matrix of their consumed items' vectors (vehicle2vec); an
item is recommended when some expected consumer's mean cosine similarity to
it strictly exceeds the threshold alpha.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .counters import OpCounter

FULL_SOFTMAX_LIMIT = 5000


class EmbeddingError(Exception):
    """Base error for content embedding operations."""


class EmptyLogError(EmbeddingError):
    """Consumption log contained no events."""


class ZeroVectorError(EmbeddingError):
    """Cosine similarity is undefined for an all-zero vector."""


class EmbeddingConfigError(EmbeddingError):
    """Invalid embedding hyperparameters for the given graph."""


@dataclass(frozen=True)
class ContentItem:
    id: int
    size_bytes: int
    popularity: int = 0

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise ValueError("content size must be > 0")
        if self.popularity < 0:
            raise ValueError("popularity must be >= 0")


@dataclass(frozen=True)
class SimilarityThreshold:
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


class ContentGraph:
    """Undirected content-similarity graph with weights in (0, 1]."""

    def __init__(self) -> None:
        self._adj: Dict[int, Dict[int, float]] = {}

    def add_node(self, node: int) -> None:
        self._adj.setdefault(node, {})

    def add_edge(self, a: int, b: int, weight: float) -> None:
        if a == b:
            raise ValueError("self-loops are not allowed")
        if not 0.0 < weight <= 1.0:
            raise ValueError("edge weight must be in (0, 1]")
        self.add_node(a)
        self.add_node(b)
        self._adj[a][b] = weight
        self._adj[b][a] = weight

    @property
    def nodes(self) -> Tuple[int, ...]:
        return tuple(sorted(self._adj))

    @property
    def n_nodes(self) -> int:
        return len(self._adj)

    def has_node(self, node: int) -> bool:
        return node in self._adj

    def has_edge(self, a: int, b: int) -> bool:
        return b in self._adj.get(a, {})

    def weight(self, a: int, b: int) -> float:
        return self._adj[a][b]

    def neighbors(self, node: int) -> Tuple[Tuple[int, float], ...]:
        return tuple(sorted(self._adj.get(node, {}).items()))


def load_consumption_csv(path: str) -> List[Tuple[int, int, int]]:
    """Read `user_id,content_id,timestamp` rows (header optional)."""
    events: List[Tuple[int, int, int]] = []
    with open(path, newline="") as handle:
        for row in csv.reader(handle):
            if not row or row[0] == "user_id":
                continue
            events.append((int(row[0]), int(row[1]), int(row[2])))
    return events


def write_consumption_csv(path: str, events: Iterable[Tuple[int, int, int]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["user_id", "content_id", "timestamp"])
        for user, item, ts in events:
            writer.writerow([user, item, ts])


def build_content_graph(
    events: Sequence[Tuple[int, int, int]] | Sequence[Tuple[int, int]],
    min_cooccurrence: int = 1,
) -> ContentGraph:
    """Link two items when at least min_cooccurrence users consumed both;
    edge weight is the Jaccard similarity of the items' consumer sets."""
    if not events:
        raise EmptyLogError("cannot build a content graph from an empty log")
    consumers: Dict[int, Set[int]] = {}
    for event in events:
        user, item = event[0], event[1]
        consumers.setdefault(item, set()).add(user)
    graph = ContentGraph()
    items = sorted(consumers)
    for item in items:
        graph.add_node(item)
    for i, a in enumerate(items):
        users_a = consumers[a]
        for b in items[i + 1 :]:
            users_b = consumers[b]
            common = len(users_a & users_b)
            if common >= min_cooccurrence and common > 0:
                weight = common / len(users_a | users_b)
                graph.add_edge(a, b, weight)
    return graph


@dataclass(frozen=True)
class EmbedParams:
    dimension: int = 32
    walks_per_node: int = 10
    walk_length: int = 20
    window: int = 5
    learning_rate: float = 0.025
    epochs: int = 5
    rng_seed: int = 0
    negative_samples: int = 0  # 0 = full softmax

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise EmbeddingConfigError("dimension must be >= 1")
        if self.walks_per_node < 1 or self.walk_length < 1 or self.window < 1:
            raise EmbeddingConfigError("walk parameters must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise EmbeddingConfigError("learning rate must be > 0 and epochs >= 1")
        if self.negative_samples < 0:
            raise EmbeddingConfigError("negative_samples must be >= 0")


class EmbeddingModel:
    """Trained node vectors plus the hyperparameters that produced them."""

    def __init__(self, ids: Sequence[int], vectors: np.ndarray, params: EmbedParams,
                 objective_history: Optional[List[float]] = None) -> None:
        if vectors.shape[0] != len(ids):
            raise ValueError("one vector per node required")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors must be finite")
        self.ids: Tuple[int, ...] = tuple(ids)
        self.index: Dict[int, int] = {node: i for i, node in enumerate(self.ids)}
        self.vectors = vectors
        self.params = params
        self.objective_history = objective_history or []

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, node: int) -> bool:
        return node in self.index

    def vector(self, node: int) -> np.ndarray:
        return self.vectors[self.index[node]]

    @property
    def final_objective(self) -> Optional[float]:
        return self.objective_history[-1] if self.objective_history else None

    def export_csv(self, path: str) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["content_id"] + [f"v{i + 1}" for i in range(self.dimension)])
            for node in self.ids:
                writer.writerow([node] + [repr(float(x)) for x in self.vector(node)])

    @classmethod
    def load_csv(cls, path: str, params: Optional[EmbedParams] = None) -> "EmbeddingModel":
        ids: List[int] = []
        rows: List[List[float]] = []
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            dim = len(header) - 1
            for row in reader:
                ids.append(int(row[0]))
                rows.append([float(x) for x in row[1:]])
        vectors = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
        if params is None:
            params = EmbedParams(dimension=dim)
        return cls(ids, vectors, params)


def _node_rng(params: EmbedParams, node_index: int) -> np.random.Generator:
    return np.random.default_rng([params.rng_seed, node_index])


def _weighted_walk(graph: ContentGraph, start: int, length: int,
                   rng: np.random.Generator) -> List[int]:
    walk = [start]
    while len(walk) < length:
        neighbors = graph.neighbors(walk[-1])
        if not neighbors:
            break
        weights = np.array([w for _, w in neighbors], dtype=np.float64)
        probs = weights / weights.sum()
        walk.append(neighbors[int(rng.choice(len(neighbors), p=probs))][0])
    return walk


def neighborhood(graph: ContentGraph, node: int, params: EmbedParams,
                 rng: Optional[np.random.Generator] = None) -> List[int]:
    """Window-context multiset collected from seeded weighted random walks
    started at `node`. Isolated nodes yield an empty neighborhood."""
    if not graph.has_node(node):
        raise KeyError(f"node {node} not in graph")
    if rng is None:
        rng = _node_rng(params, sorted(graph.nodes).index(node))
    context: List[int] = []
    for _ in range(params.walks_per_node):
        walk = _weighted_walk(graph, node, params.walk_length, rng)
        for pos, visited in enumerate(walk):
            if visited != node:
                continue
            lo = max(0, pos - params.window)
            hi = min(len(walk), pos + params.window + 1)
            context.extend(walk[i] for i in range(lo, hi) if i != pos)
    return context


def softmax_scores(vectors: np.ndarray, center_row: int) -> np.ndarray:
    scores = vectors @ vectors[center_row]
    scores = scores - scores.max()
    exp = np.exp(scores)
    return exp / exp.sum()


def softmax_prob(model: EmbeddingModel, context_id: int, center_id: int) -> float:
    """Probability of seeing `context_id` in the neighborhood of `center_id`
    under the dot-product softmax over all embedded nodes."""
    probs = softmax_scores(model.vectors, model.index[center_id])
    return float(probs[model.index[context_id]])


def pair_loss_and_grad(vectors: np.ndarray, center_row: int, context_row: int
                       ) -> Tuple[float, np.ndarray]:
    """Negative log softmax probability of one (center, context) pair and its
    gradient with respect to the full vector matrix."""
    probs = softmax_scores(vectors, center_row)
    loss = -float(np.log(probs[context_row]))
    center_vec = vectors[center_row].copy()
    grad = np.outer(probs, center_vec)
    grad[context_row] -= center_vec
    grad[center_row] += vectors.T @ probs - vectors[context_row]
    return loss, grad


def _init_vectors(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((n, dim)) - 0.5) / dim


def train_embeddings(graph: ContentGraph, params: EmbedParams,
                     counter: Optional[OpCounter] = None) -> EmbeddingModel:
    """SGD training of node vectors on the skip-gram objective.

    Walk-derived (center, context) pairs are sampled once up front, so a given
    (graph, params) always produces bit-identical vectors. The learning rate
    decays linearly over the full update schedule. Catalogs above
    FULL_SOFTMAX_LIMIT nodes fall back to negative sampling (k=5).
    """
    ids = graph.nodes
    n = len(ids)
    if n < 2:
        raise EmbeddingConfigError("need at least 2 nodes to train embeddings")
    if params.dimension >= n:
        raise EmbeddingConfigError(
            f"dimension {params.dimension} must be smaller than the {n}-node catalog"
        )
    index = {node: i for i, node in enumerate(ids)}
    pairs: List[Tuple[int, int]] = []
    for i, node in enumerate(ids):
        for ctx in neighborhood(graph, node, params, _node_rng(params, i)):
            pairs.append((i, index[ctx]))
    rng = np.random.default_rng([params.rng_seed, 0x5EED])
    vectors = _init_vectors(n, params.dimension, rng)
    negatives = params.negative_samples
    if negatives == 0 and n > FULL_SOFTMAX_LIMIT:
        negatives = 5
    history: List[float] = []
    if not pairs:
        # Fully disconnected graph: nothing to fit, vectors stay at init.
        return EmbeddingModel(ids, vectors, params, history)
    total_updates = params.epochs * len(pairs)
    done = 0
    for _ in range(params.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for k in order:
            center, context = pairs[k]
            lr = params.learning_rate * max(1.0 - done / total_updates, 1e-4)
            if negatives == 0:
                loss, grad = pair_loss_and_grad(vectors, center, context)
                vectors -= lr * grad
            else:
                loss = _negative_sampling_update(vectors, center, context, negatives, lr, rng)
            epoch_loss += loss
            done += 1
            if counter is not None:
                counter.add("embedding_updates")
        history.append(epoch_loss / len(pairs))
    return EmbeddingModel(ids, vectors, params, history)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def _negative_sampling_update(vectors: np.ndarray, center: int, context: int,
                              k: int, lr: float, rng: np.random.Generator) -> float:
    n = vectors.shape[0]
    center_vec = vectors[center].copy()
    loss = 0.0
    grad_center = np.zeros_like(center_vec)
    targets = [(context, 1.0)]
    for _ in range(k):
        neg = int(rng.integers(n))
        while neg == context:
            neg = int(rng.integers(n))
        targets.append((neg, 0.0))
    for row, label in targets:
        score = _sigmoid(float(vectors[row] @ center_vec))
        loss -= np.log(score if label == 1.0 else max(1.0 - score, 1e-12))
        coeff = score - label
        grad_center += coeff * vectors[row]
        vectors[row] -= lr * coeff * center_vec
    vectors[center] -= lr * grad_center
    return float(loss)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(a @ b) / (norm_a * norm_b)


def vehicle_matrix(model: EmbeddingModel, history: Sequence[int]) -> np.ndarray:
    """vehicle2vec representation: one row per consumed item present in the
    model, in consumption order."""
    rows = [model.vector(item) for item in history if item in model]
    if not rows:
        return np.zeros((0, model.dimension))
    return np.stack(rows)


def mean_similarity(matrix: np.ndarray, item_vec: np.ndarray,
                    counter: Optional[OpCounter] = None) -> Optional[float]:
    """Mean cosine similarity between a consumer matrix's rows and one item
    vector; None for an empty matrix. Invariant to row order."""
    if matrix.shape[0] == 0:
        return None
    norms = np.linalg.norm(matrix, axis=1)
    item_norm = float(np.linalg.norm(item_vec))
    if item_norm == 0.0 or np.any(norms == 0.0):
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    sims = (matrix @ item_vec) / (norms * item_norm)
    if counter is not None:
        counter.add("similarity_evals", matrix.shape[0])
    return float(np.mean(sims))


def recommend_items(
    candidates: Iterable[int],
    already_cached: Set[int],
    consumer_matrices: Sequence[np.ndarray],
    alpha: float,
    model: EmbeddingModel,
    counter: Optional[OpCounter] = None,
) -> List[int]:
    """Items from nearby catalogs worth downloading for the expected consumers.

    An item qualifies when any consumer's mean similarity strictly exceeds
    alpha; consumers with empty histories contribute nothing. The result is
    ordered by descending best mean similarity (ties by item id) so a
    bandwidth-limited download can take a prefix.
    """
    scored: List[Tuple[float, int]] = []
    for item in sorted(set(candidates) - set(already_cached)):
        if item not in model:
            continue
        item_vec = model.vector(item)
        best: Optional[float] = None
        for matrix in consumer_matrices:
            mean = mean_similarity(matrix, item_vec, counter)
            if mean is None:
                continue
            if mean > alpha and (best is None or mean > best):
                best = mean
        if best is not None:
            scored.append((-best, item))
    return [item for _, item in sorted(scored)]
