"""Synthetic inputs: jittered grid road maps and planted-cluster consumption
logs (a stand-in for real listening histories, with ground-truth labels)."""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np


def make_grid_text(
    n: int,
    block_m: float = 750.0,
    speed_mps: float = 20.0,
    jitter: float = 0.15,
    seed: int = 0,
) -> str:
    """Edge-list text for an n x n grid with bidirectional streets.

    Segment lengths are jittered deterministically so alternative routes have
    genuinely different travel times; both directions of a street share one
    length. Node ids are row-major.
    """
    if n < 2:
        raise ValueError("grid needs n >= 2")
    rng = np.random.default_rng([seed, n])
    lines = []
    for r in range(n):
        for c in range(n):
            node = r * n + c
            lines.append(f"node {node} {float(c * block_m)!r} {float(r * block_m)!r}")
    edges: List[Tuple[int, int]] = []
    for r in range(n):
        for c in range(n):
            node = r * n + c
            if c + 1 < n:
                edges.append((node, node + 1))
            if r + 1 < n:
                edges.append((node, node + n))
    for u, v in edges:
        factor = 1.0 + jitter * (2.0 * float(rng.random()) - 1.0)
        length = round(block_m * factor, 1)
        lines.append(f"{u} {v} {length!r} {speed_mps!r}")
        lines.append(f"{v} {u} {length!r} {speed_mps!r}")
    return "\n".join(lines) + "\n"


def generate_consumption_log(
    users: int,
    items: int,
    clusters: int,
    seed: int = 0,
    mean_history: int = 12,
    inter_prob: float = 0.1,
) -> Tuple[List[Tuple[int, int, int]], Dict[int, int]]:
    """Planted-cluster log: users and items are split into clusters and users
    consume mostly within their own cluster.

    Returns (events, item_cluster) where events are (user, item, timestamp)
    and item_cluster maps each item id to its ground-truth cluster label.
    """
    if users < 1 or items < 1 or clusters < 1:
        raise ValueError("users, items and clusters must be >= 1")
    if clusters > items:
        raise ValueError("cannot have more clusters than items")
    rng = np.random.default_rng([seed, users, items, clusters])
    item_cluster = {item: item % clusters for item in range(items)}
    by_cluster: Dict[int, List[int]] = {c: [] for c in range(clusters)}
    for item, cluster in item_cluster.items():
        by_cluster[cluster].append(item)
    events: List[Tuple[int, int, int]] = []
    ts = 0
    for user in range(users):
        own = user % clusters
        history = max(2, int(rng.poisson(mean_history)))
        seen = set()
        for _ in range(history):
            if clusters > 1 and rng.random() < inter_prob:
                others = [c for c in range(clusters) if c != own]
                cluster = others[int(rng.integers(len(others)))]
            else:
                cluster = own
            pool = by_cluster[cluster]
            item = pool[int(rng.integers(len(pool)))]
            if item in seen:
                continue
            seen.add(item)
            ts += 1
            events.append((user, item, ts))
    return events, item_cluster


def write_clusters_csv(path: str, item_cluster: Dict[int, int]) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("content_id,cluster\n")
        for item in sorted(item_cluster):
            handle.write(f"{item},{item_cluster[item]}\n")
