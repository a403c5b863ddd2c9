"""Road network model: signalized intersections, directed road segments,
travel-time evaluation and traffic-only shortest paths.

All planners, the dissemination plane and the simulator query this model.
Travel times are static per scenario epoch; the expected delay at a traffic
light is the mean residual red time seen by a uniformly arriving vehicle,
red^2 / (2 * (green + red)).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple


class RoadNetError(Exception):
    """Base error for road network operations."""


class GraphFormatError(RoadNetError):
    """Malformed graph description (bad edge-list line, duplicate segment, ...)."""


class UnknownSegmentError(RoadNetError):
    """Lookup of a segment the network does not contain."""


class InvalidPathError(RoadNetError):
    """Segment sequence is not a connected path or repeats a segment."""


class NoPathError(RoadNetError):
    """Destination unreachable from source (or unknown endpoint)."""


@dataclass(frozen=True)
class SignalCycle:
    """Fixed-cycle traffic light: green_s of green, red_s of red, shifted by phase_offset_s."""

    green_s: float = 30.0
    red_s: float = 30.0
    phase_offset_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.green_s > 0:
            raise ValueError("green_s must be > 0")
        if self.red_s < 0:
            raise ValueError("red_s must be >= 0")

    @property
    def cycle_s(self) -> float:
        return self.green_s + self.red_s

    def expected_wait(self) -> float:
        """Mean residual red time under uniform arrival."""
        return self.red_s * self.red_s / (2.0 * self.cycle_s)

    def is_green(self, t_s: float) -> bool:
        return (t_s + self.phase_offset_s) % self.cycle_s < self.green_s

    def red_remaining(self, t_s: float) -> float:
        """Seconds until the next green onset; 0 while green."""
        pos = (t_s + self.phase_offset_s) % self.cycle_s
        if pos < self.green_s:
            return 0.0
        return self.cycle_s - pos


@dataclass(frozen=True)
class Intersection:
    id: int
    position_m: Tuple[float, float] = (0.0, 0.0)
    signal: SignalCycle = field(default_factory=SignalCycle)


@dataclass(frozen=True)
class RoadSegment:
    from_id: int
    to_id: int
    length_m: float
    speed_mps: float
    base_travel_time_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.length_m > 0:
            raise ValueError(f"segment {self.from_id}->{self.to_id}: length must be > 0")
        if not self.speed_mps > 0:
            raise ValueError(f"segment {self.from_id}->{self.to_id}: speed must be > 0")
        if self.base_travel_time_s == 0.0:
            object.__setattr__(self, "base_travel_time_s", self.length_m / self.speed_mps)
        if self.base_travel_time_s < self.length_m / self.speed_mps - 1e-9:
            raise ValueError(
                f"segment {self.from_id}->{self.to_id}: base travel time below free-flow time"
            )


@dataclass(frozen=True)
class SegmentOccupancy:
    """Per-segment consumer/provider counts at a snapshot tick."""

    consumers: int
    providers: int
    as_of_tick: int = 0

    def __post_init__(self) -> None:
        if self.consumers < 0 or self.providers < 0:
            raise ValueError("occupancy counts must be >= 0")


@dataclass(frozen=True)
class Path:
    """A route as the sequence of intersections it visits.

    A path with a single node is the empty path (source == destination).
    Consecutive nodes must be distinct and no directed segment may repeat;
    composed routes may revisit an intersection, searches never do.
    """

    nodes: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.nodes) == 0:
            raise InvalidPathError("a path needs at least one node")
        pairs = self.segment_pairs
        if any(u == v for u, v in pairs):
            raise InvalidPathError("self-loop segment in path")
        if len(set(pairs)) != len(pairs):
            raise InvalidPathError("repeated segment in path")

    @classmethod
    def empty(cls, at: int) -> "Path":
        return cls((at,))

    @property
    def source(self) -> int:
        return self.nodes[0]

    @property
    def destination(self) -> int:
        return self.nodes[-1]

    @property
    def is_empty(self) -> bool:
        return len(self.nodes) == 1

    @property
    def n_segments(self) -> int:
        return len(self.nodes) - 1

    @property
    def segment_pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))


def concat_paths(first: Path, second: Path) -> Path:
    """Join two paths sharing an endpoint; raises InvalidPathError if the
    junction does not match or a segment would repeat."""
    if first.destination != second.source:
        raise InvalidPathError(
            f"cannot join path ending at {first.destination} with path starting at {second.source}"
        )
    return Path(first.nodes + second.nodes[1:])


class RoadNetwork:
    """Directed road graph with per-segment occupancy snapshots.

    Read-only queries are thread-safe; occupancy mutation happens only on the
    simulation thread between query phases.
    """

    def __init__(self) -> None:
        self.intersections: Dict[int, Intersection] = {}
        self.segments: Dict[Tuple[int, int], RoadSegment] = {}
        self.occupancy: Dict[Tuple[int, int], SegmentOccupancy] = {}
        self._out: Dict[int, List[int]] = {}
        self._in: Dict[int, List[int]] = {}

    # -- construction -------------------------------------------------

    def add_intersection(
        self,
        node_id: int,
        position_m: Tuple[float, float] = (0.0, 0.0),
        signal: Optional[SignalCycle] = None,
    ) -> None:
        self.intersections[node_id] = Intersection(
            node_id, position_m, signal if signal is not None else SignalCycle()
        )
        self._out.setdefault(node_id, [])
        self._in.setdefault(node_id, [])

    def add_segment(
        self,
        from_id: int,
        to_id: int,
        length_m: float,
        speed_mps: float,
        base_travel_time_s: float = 0.0,
    ) -> RoadSegment:
        if (from_id, to_id) in self.segments:
            raise GraphFormatError(f"duplicate segment {from_id}->{to_id}")
        if from_id == to_id:
            raise GraphFormatError(f"self-loop segment at {from_id}")
        for node in (from_id, to_id):
            if node not in self.intersections:
                self.add_intersection(node)
        seg = RoadSegment(from_id, to_id, length_m, speed_mps, base_travel_time_s)
        self.segments[(from_id, to_id)] = seg
        self._out[from_id].append(to_id)
        self._out[from_id].sort()
        self._in[to_id].append(from_id)
        self._in[to_id].sort()
        return seg

    def set_signal(self, node_id: int, signal: SignalCycle) -> None:
        old = self.intersections[node_id]
        self.intersections[node_id] = Intersection(old.id, old.position_m, signal)

    def set_position(self, node_id: int, position_m: Tuple[float, float]) -> None:
        old = self.intersections[node_id]
        self.intersections[node_id] = Intersection(old.id, position_m, old.signal)

    def set_occupancy(
        self, from_id: int, to_id: int, consumers: int, providers: int, tick: int = 0
    ) -> None:
        if (from_id, to_id) not in self.segments:
            raise UnknownSegmentError(f"unknown segment {from_id}->{to_id}")
        self.occupancy[(from_id, to_id)] = SegmentOccupancy(consumers, providers, tick)

    def clear_occupancy(self) -> None:
        self.occupancy.clear()

    # -- queries ------------------------------------------------------

    def neighbors(self, node_id: int) -> Tuple[int, ...]:
        return tuple(self._out.get(node_id, ()))

    def in_neighbors(self, node_id: int) -> Tuple[int, ...]:
        return tuple(self._in.get(node_id, ()))

    def segment(self, from_id: int, to_id: int) -> RoadSegment:
        seg = self.segments.get((from_id, to_id))
        if seg is None:
            raise UnknownSegmentError(f"unknown segment {from_id}->{to_id}")
        return seg

    def expected_wait(self, node_id: int) -> float:
        return self.intersections[node_id].signal.expected_wait()

    @property
    def n_intersections(self) -> int:
        return len(self.intersections)

    # -- serialization ------------------------------------------------

    @classmethod
    def from_edge_list(cls, text: str, default_signal: Optional[SignalCycle] = None) -> "RoadNetwork":
        """Parse the plain-text edge list: one `from_id to_id length_m speed_mps`
        line per segment, `#` comments. Optional `node <id> <x_m> <y_m>` lines
        declare intersection positions; undeclared positions default to (0, 0).
        """
        net = cls()
        signal = default_signal if default_signal is not None else SignalCycle()
        positions: Dict[int, Tuple[float, float]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "node":
                    if len(parts) != 4:
                        raise ValueError("expected: node <id> <x_m> <y_m>")
                    positions[int(parts[1])] = (float(parts[2]), float(parts[3]))
                    continue
                if len(parts) != 4:
                    raise ValueError("expected: from_id to_id length_m speed_mps")
                u, v = int(parts[0]), int(parts[1])
                length, speed = float(parts[2]), float(parts[3])
                net.add_segment(u, v, length, speed)
            except (ValueError, GraphFormatError) as exc:
                raise GraphFormatError(f"line {lineno}: {exc}") from exc
        for node, pos in positions.items():
            if node not in net.intersections:
                net.add_intersection(node)
            net.set_position(node, pos)
        for node in net.intersections:
            net.set_signal(node, signal)
        return net

    def to_edge_list(self) -> str:
        lines = []
        for node in sorted(self.intersections):
            x, y = self.intersections[node].position_m
            lines.append(f"node {node} {x!r} {y!r}")
        for (u, v) in sorted(self.segments):
            seg = self.segments[(u, v)]
            lines.append(f"{u} {v} {seg.length_m!r} {seg.speed_mps!r}")
        return "\n".join(lines) + "\n"


def travel_time(path: Path, network: RoadNetwork) -> float:
    """Travel time of a path: segment base times plus the expected signal wait
    at every intermediate intersection. Deterministic for fixed network state
    and additive over path concatenation (plus the junction wait)."""
    total = 0.0
    pairs = path.segment_pairs
    last = len(pairs) - 1
    for i, (u, v) in enumerate(pairs):
        seg = network.segments.get((u, v))
        if seg is None:
            raise InvalidPathError(f"unknown segment {u}->{v} in path")
        total = total + seg.base_travel_time_s
        if i != last:
            total = total + network.intersections[v].signal.expected_wait()
    return total


def shortest_path(
    network: RoadNetwork,
    source: int,
    dest: int,
    blocked: FrozenSet[Tuple[int, int]] = frozenset(),
) -> Path:
    """Minimum-travel-time path from source to dest.

    Ties break on fewer segments, then on the lexicographically smallest
    intersection-id sequence, so results are deterministic. Edges listed in
    `blocked` are treated as absent.
    """
    if source not in network.intersections or dest not in network.intersections:
        raise NoPathError(f"unknown intersection in query {source}->{dest}")
    if source == dest:
        return Path.empty(source)
    settled = set()
    heap: List[Tuple[float, int, Tuple[int, ...]]] = [(0.0, 0, (source,))]
    while heap:
        time_u, hops_u, seq = heapq.heappop(heap)
        u = seq[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dest:
            return Path(seq)
        through = 0.0 if u == source else network.intersections[u].signal.expected_wait()
        for v in network.neighbors(u):
            if v in settled or (u, v) in blocked:
                continue
            seg = network.segments[(u, v)]
            heapq.heappush(heap, (time_u + through + seg.base_travel_time_s, hops_u + 1, seq + (v,)))
    raise NoPathError(f"no route from {source} to {dest}")


def shortest_times_to(
    network: RoadNetwork,
    dest: int,
    blocked: FrozenSet[Tuple[int, int]] = frozenset(),
) -> Dict[int, float]:
    """Minimum remaining travel time from every node to dest, where the wait
    at the starting node itself is excluded (it is paid by the caller when
    passing through). Unreachable nodes are absent from the result."""
    if dest not in network.intersections:
        raise NoPathError(f"unknown intersection {dest}")
    dist: Dict[int, float] = {dest: 0.0}
    heap: List[Tuple[float, int]] = [(0.0, dest)]
    while heap:
        d_v, v = heapq.heappop(heap)
        if d_v > dist.get(v, float("inf")):
            continue
        through = 0.0 if v == dest else network.intersections[v].signal.expected_wait()
        for u in network.in_neighbors(v):
            if (u, v) in blocked:
                continue
            seg = network.segments[(u, v)]
            cand = seg.base_travel_time_s + through + d_v
            if cand < dist.get(u, float("inf")):
                dist[u] = cand
                heapq.heappush(heap, (cand, u))
    return dist


def providers_on_path(path: Path, network: RoadNetwork) -> int:
    """Sum of provider occupancy over the path's segments at the snapshot tick."""
    total = 0
    for pair in path.segment_pairs:
        occ = network.occupancy.get(pair)
        if occ is not None:
            total += occ.providers
    return total
