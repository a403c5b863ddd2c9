"""Detour-budgeted route planning that maximizes content providers en route.

The top-level planner sweeps the traffic-only shortest path segment by
segment, replacing each stretch with the best provider-rich alternative that
keeps the whole trip within the detour budget. Alternatives come from a
pruned depth-first search over simple paths; an exhaustive enumerator over
the same path space ships alongside as an independent oracle for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .counters import OpCounter
from .road_net import (
    NoPathError,
    Path,
    RoadNetwork,
    concat_paths,
    providers_on_path,
    shortest_path,
    shortest_times_to,
    travel_time,
)

# Slack absorbing float dust when comparing accumulated times against the
# budget bound; never loosens which complete paths are accepted.
_BOUND_SLACK = 1e-9

BlockedSet = FrozenSet[Tuple[int, int]]


@dataclass(frozen=True)
class DetourBudget:
    """Maximum extra travel time, in seconds, allowed over the shortest path."""

    epsilon_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.epsilon_s >= 0:
            raise ValueError("detour budget must be >= 0")


@dataclass(frozen=True)
class VisitRecord:
    """A remembered arrival at a node: elapsed time, providers collected, and
    the set of nodes the arriving path had already used."""

    time_s: float
    providers: int
    visited: FrozenSet[int]

    def dominates(self, time_s: float, providers: int, visited: FrozenSet[int]) -> bool:
        # A record prunes a new arrival only when it is at least as fast, at
        # least as provider-rich, AND blocks no completion the new arrival
        # could still use (its node set is a subset). Without the subset
        # condition the dominating path may occupy nodes the discarded one
        # needed, losing the true optimum over simple paths.
        return (
            self.time_s <= time_s
            and self.providers >= providers
            and self.visited <= visited
        )


@dataclass
class SearchState:
    """A partial route: the nodes walked so far plus its accumulated cost."""

    nodes: Tuple[int, ...]
    elapsed_s: float
    providers: int


class SearchContext:
    """Shared state for one alternative-path search."""

    __slots__ = (
        "network",
        "source",
        "dest",
        "bound_s",
        "blocked",
        "counter",
        "remaining_lb",
        "records",
        "best_key",
        "best_nodes",
    )

    def __init__(
        self,
        network: RoadNetwork,
        source: int,
        dest: int,
        bound_s: float,
        blocked: BlockedSet,
        counter: Optional[OpCounter],
    ) -> None:
        self.network = network
        self.source = source
        self.dest = dest
        self.bound_s = bound_s
        self.blocked = blocked
        self.counter = counter if counter is not None else OpCounter()
        self.remaining_lb = shortest_times_to(network, dest, blocked)
        self.records: Dict[int, List[VisitRecord]] = {}
        self.best_key: Optional[Tuple[int, float, int, Tuple[int, ...]]] = None
        self.best_nodes: Optional[Tuple[int, ...]] = None

    def offer(self, nodes: Tuple[int, ...], elapsed_s: float, providers: int) -> None:
        key = (-providers, elapsed_s, len(nodes) - 1, nodes)
        if self.best_key is None or key < self.best_key:
            self.best_key = key
            self.best_nodes = nodes


def _segment_providers(network: RoadNetwork, u: int, v: int) -> int:
    occ = network.occupancy.get((u, v))
    return occ.providers if occ is not None else 0


def _dominated(records: Optional[List[VisitRecord]], time_s: float, providers: int,
               visited: FrozenSet[int]) -> bool:
    if not records:
        return False
    return any(r.dominates(time_s, providers, visited) for r in records)


def _remember(ctx: SearchContext, node: int, time_s: float, providers: int,
              visited: FrozenSet[int]) -> None:
    new = VisitRecord(time_s, providers, visited)
    kept = [
        r
        for r in ctx.records.get(node, [])
        if not new.dominates(r.time_s, r.providers, r.visited)
    ]
    kept.append(new)
    ctx.records[node] = kept


def social_graph_pruning(state: SearchState, dest: int, ctx: SearchContext) -> None:
    """Recursive pruned exploration of simple paths toward dest.

    A branch is cut when its time plus a lower bound on the remaining time
    already exceeds the budget bound, or when a previous arrival at the node
    dominates the current one. Complete feasible paths replace the incumbent
    only on strictly more providers (ties keep the earlier, shorter route).
    Invoked via alternative_social_path; callers must not reuse a context.
    """
    ctx.counter.add("search_expansions")
    node = state.nodes[-1]
    if node == dest:
        if state.elapsed_s <= ctx.bound_s:
            ctx.offer(state.nodes, state.elapsed_s, state.providers)
        return
    network = ctx.network
    through = 0.0 if node == ctx.source else network.intersections[node].signal.expected_wait()
    visited = set(state.nodes)
    for nxt in network.neighbors(node):
        if nxt in visited or (node, nxt) in ctx.blocked:
            continue
        seg = network.segments[(node, nxt)]
        elapsed = state.elapsed_s + through + seg.base_travel_time_s
        lower = ctx.remaining_lb.get(nxt)
        if lower is None or elapsed + lower > ctx.bound_s + _BOUND_SLACK:
            continue
        providers = state.providers + _segment_providers(network, node, nxt)
        snapshot = frozenset(state.nodes) | {nxt}
        if _dominated(ctx.records.get(nxt), elapsed, providers, snapshot):
            continue
        _remember(ctx, nxt, elapsed, providers, snapshot)
        social_graph_pruning(SearchState(state.nodes + (nxt,), elapsed, providers), dest, ctx)


def alternative_social_path(
    network: RoadNetwork,
    source: int,
    dest: int,
    budget: DetourBudget,
    counter: Optional[OpCounter] = None,
    blocked: BlockedSet = frozenset(),
) -> Path:
    """Provider-maximizing simple path from source to dest whose travel time
    stays within shortest-path time plus the budget.

    Starts from the traffic-only shortest path as the incumbent, then runs the
    pruned search. With a zero budget and a unique shortest path the shortest
    path itself is returned.
    """
    if source == dest:
        return Path.empty(source)
    baseline = shortest_path(network, source, dest, blocked)
    base_time = travel_time(baseline, network)
    ctx = SearchContext(network, source, dest, base_time + budget.epsilon_s, blocked, counter)
    ctx.offer(baseline.nodes, base_time, providers_on_path(baseline, network))
    social_graph_pruning(SearchState((source,), 0.0, 0), dest, ctx)
    assert ctx.best_nodes is not None
    return Path(ctx.best_nodes)


def brute_force_social_path(
    network: RoadNetwork,
    source: int,
    dest: int,
    budget: DetourBudget,
    counter: Optional[OpCounter] = None,
    blocked: BlockedSet = frozenset(),
) -> Path:
    """Exhaustive oracle: enumerate every simple source->dest path and return
    the provider maximum among those within the time bound, breaking ties like
    shortest_path. Intended for networks of a dozen intersections or fewer.
    """
    if source == dest:
        return Path.empty(source)
    baseline = shortest_path(network, source, dest, blocked)
    bound = travel_time(baseline, network) + budget.epsilon_s
    ops = counter if counter is not None else OpCounter()
    best: List[Optional[Tuple[int, float, int, Tuple[int, ...]]]] = [None]
    best_nodes: List[Optional[Tuple[int, ...]]] = [None]

    def walk(nodes: Tuple[int, ...], visited: Set[int], elapsed: float, providers: int) -> None:
        ops.add("search_expansions")
        node = nodes[-1]
        if node == dest:
            if elapsed <= bound:
                key = (-providers, elapsed, len(nodes) - 1, nodes)
                if best[0] is None or key < best[0]:
                    best[0] = key
                    best_nodes[0] = nodes
            return
        through = 0.0 if node == source else network.intersections[node].signal.expected_wait()
        for nxt in network.neighbors(node):
            if nxt in visited or (node, nxt) in blocked:
                continue
            seg = network.segments[(node, nxt)]
            visited.add(nxt)
            walk(
                nodes + (nxt,),
                visited,
                elapsed + through + seg.base_travel_time_s,
                providers + _segment_providers(network, node, nxt),
            )
            visited.remove(nxt)

    walk((source,), {source}, 0.0, 0)
    assert best_nodes[0] is not None  # the shortest path is always feasible
    return Path(best_nodes[0])


def _try_concat(first: Path, second: Path) -> Optional[Path]:
    try:
        return concat_paths(first, second)
    except Exception:
        return None


def shortest_social_path(
    network: RoadNetwork,
    source: int,
    dest: int,
    budget: DetourBudget,
    counter: Optional[OpCounter] = None,
    blocked: BlockedSet = frozenset(),
) -> Path:
    """Segment-wise sweep over the traffic-only shortest path.

    For each stretch between consecutive shortest-path intersections the
    planner computes the best local alternative (within the budget remaining
    for the whole trip) and the best full reroute from the origin, keeping
    whichever carries more providers while honoring the budget test. The
    returned route always satisfies
    travel_time(result) <= travel_time(shortest) + budget.
    """
    if source == dest:
        return Path.empty(source)
    route = shortest_path(network, source, dest, blocked)
    epsilon = budget.epsilon_s
    plan = Path.empty(source)
    overage = 0.0
    for i in range(route.n_segments):
        cur = plan.destination
        nxt = route.nodes[i + 1]
        remaining = epsilon - overage
        if remaining < 0.0:
            remaining = 0.0
        chunk = alternative_social_path(network, cur, nxt, DetourBudget(remaining), counter, blocked)
        candidate = _try_concat(plan, chunk)
        rerouted = alternative_social_path(network, source, nxt, budget, counter, blocked)
        if candidate is None:
            plan = rerouted
        else:
            gap = travel_time(rerouted, network) - travel_time(candidate, network)
            if gap <= epsilon and providers_on_path(candidate, network) < providers_on_path(
                rerouted, network
            ):
                plan = rerouted
            else:
                plan = candidate
        prefix_time = travel_time(Path(route.nodes[: i + 2]), network)
        overage = travel_time(plan, network) - prefix_time
        if overage < 0.0:
            overage = 0.0
    return plan
