import itertools

import numpy as np
import pytest

from vesonet.road_net import (
    GraphFormatError,
    InvalidPathError,
    NoPathError,
    Path,
    RoadNetwork,
    SignalCycle,
    concat_paths,
    providers_on_path,
    shortest_path,
    shortest_times_to,
    travel_time,
)

NO_SIGNAL = SignalCycle(green_s=30.0, red_s=0.0)


def simple_net(edges, signal=NO_SIGNAL):
    net = RoadNetwork()
    for u, v, length, speed in edges:
        net.add_segment(u, v, length, speed)
    for node in net.intersections:
        net.set_signal(node, signal)
    return net


def enumerate_simple_paths(net, source, dest):
    """Independent oracle: all node-simple paths by DFS over node sequences."""
    results = []

    def walk(nodes, visited):
        if nodes[-1] == dest:
            results.append(Path(tuple(nodes)))
            return
        for nxt in net.neighbors(nodes[-1]):
            if nxt not in visited:
                visited.add(nxt)
                walk(nodes + [nxt], visited)
                visited.remove(nxt)

    walk([source], {source})
    return results


class TestTravelTime:
    def test_single_segment_no_signal(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        assert travel_time(Path((0, 1)), net) == pytest.approx(10.0)

    def test_empty_path_is_zero(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        assert travel_time(Path.empty(0), net) == 0.0

    def test_two_segments_with_signal_wait(self):
        # 10 s + 15 s segments, junction signal green 60 / red 30
        # expected wait = 30^2 / (2 * 90) = 5 s, total 30 s
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 150.0, 10.0)])
        net.set_signal(1, SignalCycle(green_s=60.0, red_s=30.0))
        assert travel_time(Path((0, 1, 2)), net) == pytest.approx(30.0)

    def test_unknown_segment_raises(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        with pytest.raises(InvalidPathError):
            travel_time(Path((0, 2)), net)

    def test_expected_wait_default_cycle(self):
        assert SignalCycle(30.0, 30.0).expected_wait() == pytest.approx(7.5)

    def test_concat_additivity(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(4, 8))
            net = RoadNetwork()
            for u in range(n):
                for v in range(n):
                    if u != v and rng.random() < 0.5:
                        net.add_segment(u, v, float(rng.uniform(50, 400)),
                                        float(rng.uniform(5, 20)))
            for node in net.intersections:
                net.set_signal(node, SignalCycle(30.0, float(rng.uniform(0, 40))))
            paths = enumerate_simple_paths(net, 0, n - 1) if 0 in net.intersections \
                and n - 1 in net.intersections else []
            for path in paths[:10]:
                if path.n_segments < 2:
                    continue
                cut = path.n_segments // 2
                left = Path(path.nodes[: cut + 1])
                right = Path(path.nodes[cut:])
                junction_wait = net.expected_wait(path.nodes[cut])
                combined = travel_time(left, net) + junction_wait + travel_time(right, net)
                assert travel_time(path, net) == pytest.approx(combined, abs=1e-9)


class TestShortestPath:
    def test_triangle_prefers_two_hops(self):
        # enumerate all simple paths as the oracle
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 100.0, 10.0), (0, 2, 250.0, 10.0)])
        best = shortest_path(net, 0, 2)
        assert best.nodes == (0, 1, 2)
        assert travel_time(best, net) == pytest.approx(20.0)
        all_times = [travel_time(p, net) for p in enumerate_simple_paths(net, 0, 2)]
        assert travel_time(best, net) == min(all_times)

    def test_source_equals_dest(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        path = shortest_path(net, 0, 0)
        assert path.is_empty
        assert travel_time(path, net) == 0.0

    def test_unreachable_raises(self):
        net = simple_net([(0, 1, 100.0, 10.0), (2, 3, 100.0, 10.0)])
        with pytest.raises(NoPathError):
            shortest_path(net, 0, 3)

    def test_unknown_node_raises(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        with pytest.raises(NoPathError):
            shortest_path(net, 0, 99)

    def test_optimal_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(4, 10))
            net = RoadNetwork()
            for node in range(n):
                net.add_intersection(node)
            for u in range(n):
                for v in range(n):
                    if u != v and rng.random() < 0.4:
                        net.add_segment(u, v, float(rng.uniform(50, 500)),
                                        float(rng.uniform(5, 25)))
            for node in net.intersections:
                net.set_signal(node, SignalCycle(30.0, float(rng.integers(0, 40))))
            candidates = enumerate_simple_paths(net, 0, n - 1)
            if not candidates:
                with pytest.raises(NoPathError):
                    shortest_path(net, 0, n - 1)
                continue
            best = shortest_path(net, 0, n - 1)
            oracle_best = min(travel_time(p, net) for p in candidates)
            assert travel_time(best, net) <= oracle_best + 1e-9

    def test_deterministic_tie_break(self):
        # two equal-time routes 0->1->3 and 0->2->3: fewer-segment tie is equal,
        # lexicographic node order should pick the route through 1
        net = simple_net([
            (0, 1, 100.0, 10.0), (1, 3, 100.0, 10.0),
            (0, 2, 100.0, 10.0), (2, 3, 100.0, 10.0),
        ])
        for _ in range(5):
            assert shortest_path(net, 0, 3).nodes == (0, 1, 3)

    def test_blocked_edges_are_avoided(self):
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 100.0, 10.0), (0, 2, 500.0, 10.0)])
        detour = shortest_path(net, 0, 2, blocked=frozenset({(0, 1)}))
        assert detour.nodes == (0, 2)

    def test_shortest_times_to_matches_forward_search(self):
        net = simple_net([
            (0, 1, 100.0, 10.0), (1, 2, 150.0, 10.0), (0, 2, 400.0, 10.0),
            (2, 3, 100.0, 10.0),
        ])
        net.set_signal(1, SignalCycle(60.0, 30.0))
        net.set_signal(2, SignalCycle(30.0, 30.0))
        bounds = shortest_times_to(net, 3)
        for node in (0, 1, 2):
            forward = travel_time(shortest_path(net, node, 3), net)
            assert bounds[node] == pytest.approx(forward, abs=1e-9)


class TestProvidersOnPath:
    def test_empty_path(self):
        net = simple_net([(0, 1, 100.0, 10.0)])
        assert providers_on_path(Path.empty(0), net) == 0

    def test_direct_sum(self):
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 100.0, 10.0)])
        net.set_occupancy(0, 1, consumers=0, providers=2)
        net.set_occupancy(1, 2, consumers=0, providers=3)
        assert providers_on_path(Path((0, 1, 2)), net) == 5

    def test_recount_after_departure(self):
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 100.0, 10.0)])
        net.set_occupancy(0, 1, consumers=0, providers=2)
        net.set_occupancy(1, 2, consumers=0, providers=3)
        path = Path((0, 1, 2))
        assert providers_on_path(path, net) == 5
        net.set_occupancy(1, 2, consumers=0, providers=2, tick=1)
        assert providers_on_path(path, net) == 4

    def test_monotone_under_extension(self):
        net = simple_net([(0, 1, 100.0, 10.0), (1, 2, 100.0, 10.0), (2, 3, 100.0, 10.0)])
        net.set_occupancy(1, 2, consumers=0, providers=4)
        prefix = providers_on_path(Path((0, 1)), net)
        extended = providers_on_path(Path((0, 1, 2)), net)
        assert extended >= prefix


class TestPathType:
    def test_rejects_repeated_segment(self):
        with pytest.raises(InvalidPathError):
            Path((0, 1, 0, 1))

    def test_allows_revisited_node_when_segments_differ(self):
        # composed routes may pass an intersection twice via different streets
        path = Path((0, 1, 2, 1, 3))
        assert path.n_segments == 4

    def test_concat_checks_junction(self):
        with pytest.raises(InvalidPathError):
            concat_paths(Path((0, 1)), Path((2, 3)))
        joined = concat_paths(Path((0, 1)), Path((1, 2)))
        assert joined.nodes == (0, 1, 2)


class TestEdgeListFormat:
    def test_round_trip(self):
        text = """
        # demo map
        node 0 0.0 0.0
        node 1 250.0 0.0
        0 1 250.0 14.0
        1 0 250.0 14.0  # reverse direction
        """
        net = RoadNetwork.from_edge_list(text)
        assert net.n_intersections == 2
        assert net.segment(0, 1).length_m == 250.0
        assert net.intersections[1].position_m == (250.0, 0.0)
        reparsed = RoadNetwork.from_edge_list(net.to_edge_list())
        assert reparsed.segments.keys() == net.segments.keys()

    def test_bad_line_reports_lineno(self):
        with pytest.raises(GraphFormatError, match="line 2"):
            RoadNetwork.from_edge_list("0 1 100.0 10.0\n0 1 100.0\n")

    def test_duplicate_segment_rejected(self):
        with pytest.raises(GraphFormatError):
            RoadNetwork.from_edge_list("0 1 100.0 10.0\n0 1 120.0 10.0\n")

    def test_invalid_length_rejected(self):
        with pytest.raises(GraphFormatError):
            RoadNetwork.from_edge_list("0 1 -5 10.0\n")


class TestDeterminism:
    def test_identical_queries_identical_paths(self):
        rng = np.random.default_rng(3)
        net = RoadNetwork()
        for u in range(8):
            for v in range(8):
                if u != v and rng.random() < 0.4:
                    net.add_segment(u, v, float(rng.uniform(50, 300)), 10.0)
        if 7 not in net.intersections:
            net.add_segment(0, 7, 100.0, 10.0)
        first = shortest_path(net, 0, 7)
        for _ in range(3):
            assert shortest_path(net, 0, 7) == first
