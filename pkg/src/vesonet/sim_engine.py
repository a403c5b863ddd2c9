"""Deterministic fixed-step simulation binding mobility, signal timing, route
planning, dissemination, intersection recommendation and provider navigation.

Every run advances a world tick by tick in a fixed phase order (signals,
motion, reports, interests, transfers, recommendation, provider navigation,
replanning) using integer centimeter positions, so a (scenario, seed) pair
always produces a byte-identical event log. The metrics report is computed
exclusively from that log and can be recomputed by the independent audit.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import synth
from .content_embed import (
    EmbedParams,
    EmbeddingModel,
    build_content_graph,
    load_consumption_csv,
    recommend_items,
    train_embeddings,
    vehicle_matrix,
)
from .counters import OpCounter
from .dissemination import ContentPlane
from .provider_rl import (
    DQNAgent,
    DQNConfig,
    RLState,
    Transition,
    make_state,
    reward as rl_reward,
)
from .road_net import (
    NoPathError,
    Path,
    RoadNetwork,
    SignalCycle,
    shortest_path,
    shortest_times_to,
    travel_time,
)
from .social_path import DetourBudget, shortest_social_path

POLICIES = ("vesonet", "baseline_no_reroute")

EVENT_COLUMNS = (
    "tick",
    "event_type",
    "request_id",
    "content_id",
    "vehicle_from",
    "vehicle_to",
    "hops",
    "bytes_remaining",
)

ROLE_CODES = {"consumer": 0, "provider": 1, "metadata": 2}

EventRow = Tuple[int, str, str, int, int, int, int, int]


@dataclass
class Accident:
    from_id: int
    to_id: int
    start_tick: int
    duration_ticks: int


@dataclass
class Scenario:
    """Field-for-field mirror of the JSON scenario document."""

    # map: either an explicit edge list (text or file) or a generated grid
    network_file: Optional[str] = None
    network_text: Optional[str] = None
    grid_n: int = 4
    grid_block_m: float = 750.0
    grid_speed_mps: float = 20.0
    grid_jitter: float = 0.15
    # population
    consumers: int = 35
    providers: int = 10
    metadata: int = 3
    velocity_cap_mps: float = 20.0
    # infrastructure
    rsu_intersections: Optional[List[int]] = None
    rsu_count: int = 1
    accidents: List[Accident] = field(default_factory=list)
    accident_count: int = 0
    accident_start_tick: int = 60
    accident_duration_ticks: int = 150
    # planning / recommendation / learning
    epsilon_s: float = 60.0
    alpha: float = 0.55
    dqn: DQNConfig = field(default_factory=DQNConfig)
    rl_training: bool = True
    # content
    consumption_log: Optional[str] = None
    log_users: int = 40
    log_items: int = 40
    log_clusters: int = 4
    log_seed: int = 1
    log_inter_prob: float = 0.1
    log_mean_history: int = 12
    content_size_bytes: int = 2_000_000
    provider_cache_bytes: int = 16_000_000
    warm_cache_fraction: float = 0.5
    warm_copies: int = 2
    embedding_file: Optional[str] = None
    embed_dimension: int = 16
    embed_epochs: int = 3
    embed_walks: int = 10
    embed_walk_length: int = 20
    embed_window: int = 5
    embed_lr: float = 0.05
    embed_seed: int = 0
    rec_popular_count: int = 2
    # dissemination
    request_rate_per_s: float = 0.005
    v2v_rate_bps: int = 2_000_000
    rsu_rate_bps: int = 10_000_000
    report_period_ticks: int = 10
    retry_interval_ticks: int = 30
    max_retries: int = 3
    max_hops: int = 15
    radio_range_m: float = 450.0
    flood_interests: bool = False
    # signals
    signal_green_s: float = 30.0
    signal_red_s: float = 10.0
    signal_random_phase: bool = True
    signal_overrides: Dict[str, List[float]] = field(default_factory=dict)
    # run control
    tick_duration_s: float = 1.0
    run_ticks: int = 500
    rng_seed: int = 0
    policy: str = "vesonet"
    replan_interval_ticks: int = 0
    planning_snapshot_period_ticks: int = 30

    # -- serialization -------------------------------------------------

    def to_json(self) -> str:
        raw = dataclasses.asdict(self)
        raw["dqn"] = dataclasses.asdict(self.dqn)
        raw["dqn"]["hidden"] = list(self.dqn.hidden)
        raw["accidents"] = [dataclasses.asdict(a) for a in self.accidents]
        return json.dumps(raw, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: Dict) -> "Scenario":
        raw = dict(raw)
        dqn_raw = raw.pop("dqn", {})
        if "hidden" in dqn_raw:
            dqn_raw["hidden"] = tuple(dqn_raw["hidden"])
        accidents = [Accident(**a) for a in raw.pop("accidents", [])]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(dqn=DQNConfig(**dqn_raw), accidents=accidents, **raw)

    @classmethod
    def from_json(cls, text: str, base_dir: Optional[str] = None) -> "Scenario":
        scenario = cls.from_dict(json.loads(text))
        if base_dir:
            for attr in ("network_file", "consumption_log", "embedding_file"):
                value = getattr(scenario, attr)
                if value and not os.path.isabs(value):
                    setattr(scenario, attr, os.path.join(base_dir, value))
        return scenario

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path) as handle:
            return cls.from_json(handle.read(), base_dir=os.path.dirname(os.path.abspath(path)))

    # -- validation ----------------------------------------------------

    def network_source(self) -> str:
        if self.network_text is not None:
            return self.network_text
        if self.network_file is not None:
            with open(self.network_file) as handle:
                return handle.read()
        return synth.make_grid_text(self.grid_n, self.grid_block_m, self.grid_speed_mps,
                                    self.grid_jitter, self.rng_seed)

    def build_network(self) -> RoadNetwork:
        default = SignalCycle(self.signal_green_s, self.signal_red_s)
        network = RoadNetwork.from_edge_list(self.network_source(), default)
        if self.signal_random_phase:
            rng = np.random.default_rng([self.rng_seed, 0x516])
            cycle = default.cycle_s
            for node in sorted(network.intersections):
                offset = float(rng.integers(int(cycle)))
                network.set_signal(node, SignalCycle(self.signal_green_s, self.signal_red_s, offset))
        for key, triple in sorted(self.signal_overrides.items()):
            network.set_signal(int(key), SignalCycle(*triple))
        return network

    def validate(self) -> List[str]:
        """Exhaustive field validation; returns every violation, not just the first."""
        errors: List[str] = []
        if self.consumers < 0 or self.providers < 0 or self.metadata < 0:
            errors.append("vehicle counts must be >= 0")
        if self.tick_duration_s <= 0:
            errors.append("tick_duration_s must be > 0")
        if self.run_ticks < 1:
            errors.append("run_ticks must be >= 1")
        if self.epsilon_s < 0:
            errors.append("epsilon_s must be >= 0 (detour budget)")
        if not 0.0 <= self.alpha <= 1.0:
            errors.append("alpha must be in [0, 1] (content similarity threshold)")
        if self.policy not in POLICIES:
            errors.append(f"policy must be one of {POLICIES}")
        if self.velocity_cap_mps <= 0:
            errors.append("velocity_cap_mps must be > 0")
        if self.request_rate_per_s < 0:
            errors.append("request_rate_per_s must be >= 0")
        if self.v2v_rate_bps <= 0 or self.rsu_rate_bps <= 0:
            errors.append("link rates must be > 0")
        if self.content_size_bytes <= 0:
            errors.append("content_size_bytes must be > 0")
        if self.provider_cache_bytes <= 0:
            errors.append("provider_cache_bytes must be > 0")
        if not 0.0 <= self.warm_cache_fraction <= 1.0:
            errors.append("warm_cache_fraction must be in [0, 1]")
        if self.rsu_count < 0:
            errors.append("rsu_count must be >= 0")
        if self.max_hops < 1:
            errors.append("max_hops must be >= 1")
        if self.signal_green_s <= 0 or self.signal_red_s < 0:
            errors.append("signal timings need green > 0 and red >= 0")
        if self.report_period_ticks < 1:
            errors.append("report_period_ticks must be >= 1")
        if self.planning_snapshot_period_ticks < 1:
            errors.append("planning_snapshot_period_ticks must be >= 1")
        try:
            DQNConfig(**dataclasses.asdict(self.dqn))
        except ValueError as exc:
            errors.append(f"dqn: {exc}")
        try:
            network = self.build_network()
        except Exception as exc:
            errors.append(f"network: {exc}")
            return errors
        if network.n_intersections < 2:
            errors.append("network needs at least 2 intersections")
        if self.rsu_intersections:
            for node in self.rsu_intersections:
                if node not in network.intersections:
                    errors.append(f"rsu_intersections: unknown intersection {node}")
        for accident in self.accidents:
            if (accident.from_id, accident.to_id) not in network.segments:
                errors.append(
                    f"accidents: unknown segment {accident.from_id}->{accident.to_id}"
                )
            if accident.start_tick < 0 or accident.duration_ticks < 1:
                errors.append("accidents: start_tick >= 0 and duration_ticks >= 1 required")
        return errors


@dataclass
class MetricsReport:
    """All four run metrics, derived purely from the event log."""

    requested: int
    delivered: int
    failed: int
    trips_completed: int
    mean_delivery_delay_s: Optional[float]
    delivery_rate: Optional[float]
    mean_travel_time_s: Optional[float]
    computation_cost: int
    breakdowns: Dict[str, int]
    flags: List[str]


def compute_report(rows: Sequence[EventRow]) -> MetricsReport:
    """Runner-side metric computation. Consumes only event rows so that the
    report is a pure function of the log."""
    tick_duration_cs = 100
    created: Dict[str, int] = {}
    delivered_delay_ticks = 0
    delivered = 0
    failed = 0
    trip_start: Dict[str, int] = {}
    travel_ticks = 0
    trips = 0
    breakdowns: Dict[str, int] = {}
    for row in rows:
        tick, etype, req = row[0], row[1], row[2]
        if etype == "config" and req == "tick_duration_cs":
            tick_duration_cs = row[7]
        elif etype == "interest_created":
            created[req] = tick
        elif etype in ("local_hit", "delivered_v2v", "delivered_rsu"):
            delivered += 1
            delivered_delay_ticks += tick - created[req]
        elif etype == "request_failed":
            failed += 1
        elif etype == "trip_started":
            trip_start[req] = tick
        elif etype == "trip_completed":
            trips += 1
            travel_ticks += tick - trip_start[req]
        elif etype == "compute_ops":
            breakdowns[req] = breakdowns.get(req, 0) + row[7]
    tick_s = tick_duration_cs / 100.0
    requested = len(created)
    flags: List[str] = []
    if requested == 0:
        flags.append("no_delivery_data")
        mean_delay = None
        rate = None
    else:
        rate = delivered / requested
        mean_delay = (delivered_delay_ticks * tick_s) / delivered if delivered else None
        if delivered == 0:
            flags.append("no_completed_deliveries")
    if trips == 0:
        flags.append("no_trip_data")
        mean_travel = None
    else:
        mean_travel = (travel_ticks * tick_s) / trips
    return MetricsReport(
        requested=requested,
        delivered=delivered,
        failed=failed,
        trips_completed=trips,
        mean_delivery_delay_s=mean_delay,
        delivery_rate=rate,
        mean_travel_time_s=mean_travel,
        computation_cost=sum(breakdowns.values()),
        breakdowns=breakdowns,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# world state


@dataclass
class _Vehicle:
    id: int
    role: str
    node: Optional[int]  # set while waiting at an intersection
    seg: Optional[Tuple[int, int]] = None
    offset_cm: int = 0
    dest: int = -1
    plan: Tuple[int, ...] = ()
    plan_pos: int = 0
    next_node: Optional[int] = None
    trip_no: int = 0
    trip_metric: float = 0.0
    first_leg: bool = True
    bound_float: float = 0.0
    holdings: Set[int] = field(default_factory=set)
    history: List[int] = field(default_factory=list)
    declared: Tuple[int, ...] = ()
    schedule: Dict[Tuple[int, int], float] = field(default_factory=dict)
    pending: Optional[Tuple[RLState, int, float]] = None
    close_info: Optional[Tuple[int, bool]] = None
    last_cd: float = 0.0
    stop_done: bool = False
    rebooted_at: int = -1

    @property
    def trip_id(self) -> str:
        return f"T{self.id}.{self.trip_no}"


class World:
    def __init__(self, scenario: Scenario):
        errors = scenario.validate()
        if errors:
            raise ValueError("invalid scenario: " + "; ".join(errors))
        self.scenario = scenario
        self.network = scenario.build_network()
        self.counter = OpCounter()
        self.events: List[EventRow] = []
        self.tick_s = scenario.tick_duration_s
        self.vesonet = scenario.policy == "vesonet"
        seed = scenario.rng_seed
        self.rng_spawn = np.random.default_rng([seed, 1])
        self.rng_requests = np.random.default_rng([seed, 2])
        self.snapshot_version = 0
        self.blocked_version = 0
        self.blocked: frozenset = frozenset()
        self._blocked_changed = False
        self._shortest_cache: Dict = {}
        self._plan_cache: Dict = {}
        self._lb_cache: Dict = {}
        self.node_pos_cm: Dict[int, Tuple[int, int]] = {
            node: (int(round(i.position_m[0] * 100)), int(round(i.position_m[1] * 100)))
            for node, i in self.network.intersections.items()
        }
        xs = [p[0] for p in self.node_pos_cm.values()]
        ys = [p[1] for p in self.node_pos_cm.values()]
        self.diag_cm = max(1.0, float(np.hypot(max(xs) - min(xs), max(ys) - min(ys))))
        self._load_content()
        self._place_infrastructure()
        self._spawn_vehicles()
        self._init_plane()
        self._init_rl()
        self._refresh_snapshot(0)
        self.log(0, "config", "tick_duration_cs", -1, -1, -1, 0,
                 int(round(self.tick_s * 100)))

    # -- logging -------------------------------------------------------

    def log(self, tick: int, etype: str, req: str = "", content: int = -1,
            vfrom: int = -1, vto: int = -1, hops: int = 0, bytes_: int = 0) -> None:
        self.events.append((tick, etype, req, content, vfrom, vto, hops, bytes_))

    # -- build helpers ---------------------------------------------------

    def _load_content(self) -> None:
        scen = self.scenario
        if scen.consumption_log:
            self.consumption = load_consumption_csv(scen.consumption_log)
        else:
            self.consumption, _ = synth.generate_consumption_log(
                scen.log_users, scen.log_items, scen.log_clusters, scen.log_seed,
                scen.log_mean_history, scen.log_inter_prob)
        if not self.consumption:
            raise ValueError("consumption log is empty")
        popularity: Dict[int, int] = {}
        by_user: Dict[int, List[Tuple[int, int]]] = {}
        for user, item, ts in self.consumption:
            popularity[item] = popularity.get(item, 0) + 1
            by_user.setdefault(user, []).append((ts, item))
        self.catalog: List[int] = sorted(popularity)
        self.popularity = popularity
        self.user_history: Dict[int, List[int]] = {
            user: [item for _, item in sorted(pairs)] for user, pairs in by_user.items()
        }
        self.catalog_sizes = {item: scen.content_size_bytes for item in self.catalog}
        self.model: Optional[EmbeddingModel] = None
        if self.vesonet:
            if scen.embedding_file:
                self.model = EmbeddingModel.load_csv(scen.embedding_file)
            elif len(self.catalog) > max(2, scen.embed_dimension):
                params = EmbedParams(
                    dimension=scen.embed_dimension, walks_per_node=scen.embed_walks,
                    walk_length=scen.embed_walk_length, window=scen.embed_window,
                    learning_rate=scen.embed_lr, epochs=scen.embed_epochs,
                    rng_seed=scen.embed_seed)
                graph = build_content_graph(self.consumption)
                self.model = train_embeddings(graph, params, self.counter)

    def _place_infrastructure(self) -> None:
        scen = self.scenario
        nodes = sorted(self.network.intersections)
        if scen.rsu_intersections is not None:
            rsu_nodes = list(scen.rsu_intersections)
        else:
            rsu_nodes = spread_rsus(self.network, scen.rsu_count)
        self.rsu_positions: Dict[int, Tuple[int, int]] = {
            -(i + 1): self.node_pos_cm[node] for i, node in enumerate(rsu_nodes)
        }
        # meta-data hosts sit at the busiest (highest-degree) intersections
        degree = {n: len(self.network.neighbors(n)) + len(self.network.in_neighbors(n))
                  for n in nodes}
        self.metadata_nodes = [
            n for n, _ in sorted(degree.items(), key=lambda kv: (-kv[1], kv[0]))
        ][: scen.metadata]
        self.accidents = list(scen.accidents)
        if not self.accidents and scen.accident_count > 0:
            self.accidents = central_accidents(
                self.network, scen.accident_count, scen.accident_start_tick,
                scen.accident_duration_ticks)

    def _spawn_vehicles(self) -> None:
        scen = self.scenario
        self.vehicles: Dict[int, _Vehicle] = {}
        users = sorted(self.user_history)
        vid = 0
        for i in range(scen.consumers):
            vehicle = _Vehicle(vid, "consumer", node=None)
            picked = [users[(2 * i) % len(users)], users[(2 * i + 1) % len(users)]]
            for user in picked:
                vehicle.history.extend(self.user_history[user])
            vehicle.holdings = set(vehicle.history)
            self.vehicles[vid] = vehicle
            vid += 1
        for _ in range(scen.providers):
            self.vehicles[vid] = _Vehicle(vid, "provider", node=None)
            vid += 1
        for k in range(scen.metadata):
            host = self.metadata_nodes[k % len(self.metadata_nodes)] if self.metadata_nodes else 0
            self.vehicles[vid] = _Vehicle(vid, "metadata", node=host)
            vid += 1
        nodes = sorted(self.network.intersections)
        for vehicle in self.vehicles.values():
            if vehicle.role == "metadata":
                continue
            vehicle.node = int(nodes[int(self.rng_spawn.integers(len(nodes)))])
            self._start_trip(vehicle, 0)
        self.consumer_matrices: Dict[int, np.ndarray] = {}
        if self.model is not None:
            for vehicle in self.vehicles.values():
                if vehicle.role == "consumer":
                    self.consumer_matrices[vehicle.id] = vehicle_matrix(
                        self.model, vehicle.history)

    def _init_plane(self) -> None:
        scen = self.scenario
        self.plane = ContentPlane(
            catalog_sizes=self.catalog_sizes,
            v2v_rate_bps=scen.v2v_rate_bps,
            rsu_rate_bps=scen.rsu_rate_bps,
            tick_duration_s=scen.tick_duration_s,
            log=self.log,
            radio_range_m=scen.radio_range_m,
            max_hops=scen.max_hops,
            retry_interval_ticks=scen.retry_interval_ticks,
            max_retries=scen.max_retries,
            report_period_ticks=scen.report_period_ticks,
            replication_enabled=self.vesonet,
            flood=scen.flood_interests,
            count=self.counter.add,
        )
        providers = [v for v in self.vehicles.values() if v.role == "provider"]
        for vehicle in providers:
            self.plane.register_provider(vehicle.id, scen.provider_cache_bytes)
        for vehicle in self.vehicles.values():
            if vehicle.role == "metadata":
                self.plane.register_metadata(vehicle.id)
        # warm caches: most popular slice of the catalog, round-robin copies
        if providers and scen.warm_cache_fraction > 0:
            ranked = sorted(self.catalog, key=lambda c: (-self.popularity[c], c))
            top = ranked[: max(1, int(round(len(ranked) * scen.warm_cache_fraction)))]
            for round_no in range(max(1, scen.warm_copies)):
                for i, item in enumerate(top):
                    target = providers[(i + round_no) % len(providers)].id
                    self.plane.store_content(target, item, 0, source_id=-1)
        self.metadata_positions = {
            v.id: self.node_pos_cm[v.node]
            for v in self.vehicles.values()
            if v.role == "metadata"
        }

    def _init_rl(self) -> None:
        scen = self.scenario
        self.k_exits = max(
            (len(self.network.neighbors(n)) for n in self.network.intersections), default=1
        )
        self.agent: Optional[DQNAgent] = None
        if self.vesonet:
            mixed_seed = (scen.rng_seed * 1_000_003 + scen.dqn.rng_seed) % (2 ** 31)
            config = replace(scen.dqn, rng_seed=mixed_seed)
            self.agent = DQNAgent(self.k_exits + 2, self.k_exits, config, self.counter)

    # -- planning --------------------------------------------------------

    def _shortest(self, src: int, dst: int) -> Tuple[Optional[Path], float]:
        key = (src, dst, self.blocked_version)
        hit = self._shortest_cache.get(key)
        if hit is None:
            try:
                path = shortest_path(self.network, src, dst, self.blocked)
                hit = (path, travel_time(path, self.network))
            except NoPathError:
                hit = (None, float("inf"))
            self._shortest_cache[key] = hit
        return hit

    def _lower_bounds(self, dst: int) -> Dict[int, float]:
        key = (dst, self.blocked_version)
        bounds = self._lb_cache.get(key)
        if bounds is None:
            bounds = shortest_times_to(self.network, dst, self.blocked)
            self._lb_cache[key] = bounds
        return bounds

    def _plan_route(self, src: int, dst: int, social: bool) -> Optional[Tuple[Path, float]]:
        """Route plus the shortest-path time used for the trip's budget bound."""
        base, tau = self._shortest(src, dst)
        if base is None:
            return None
        if not social:
            return base, tau
        key = (src, dst, self.snapshot_version, self.blocked_version)
        path = self._plan_cache.get(key)
        if path is None:
            path = shortest_social_path(self.network, src, dst,
                                        DetourBudget(self.scenario.epsilon_s),
                                        self.counter, self.blocked)
            self._plan_cache[key] = path
        return path, tau

    def _start_trip(self, vehicle: _Vehicle, tick: int) -> None:
        nodes = sorted(self.network.intersections)
        candidates = [n for n in nodes if n != vehicle.node]
        order = self.rng_spawn.permutation(len(candidates))
        social = self.vesonet and vehicle.role == "consumer"
        for idx in order:
            dest = int(candidates[int(idx)])
            planned = self._plan_route(vehicle.node, dest, social)
            if planned is None:
                continue
            path, tau = planned
            vehicle.dest = dest
            vehicle.plan = path.nodes
            vehicle.plan_pos = 0
            vehicle.trip_no += 1
            vehicle.trip_metric = 0.0
            vehicle.first_leg = True
            vehicle.bound_float = tau + self.scenario.epsilon_s
            vehicle.next_node = None
            vehicle.pending = None
            vehicle.close_info = None
            vehicle.declared = self._shortest(vehicle.node, dest)[0].nodes
            self._set_schedule(vehicle, tick)
            if vehicle.role == "consumer" or not self.vesonet:
                vehicle.next_node = vehicle.plan[1] if len(vehicle.plan) > 1 else None
            self.log(tick, "trip_started", vehicle.trip_id, vehicle.dest, vehicle.id, -1,
                     ROLE_CODES[vehicle.role], _cs_bound(vehicle.bound_float))
            return
        vehicle.dest = -1  # nowhere reachable; idle until the map unblocks

    def _replan(self, vehicle: _Vehicle, at_node: int, tick: int) -> bool:
        social = self.vesonet and vehicle.role == "consumer"
        planned = self._plan_route(at_node, vehicle.dest, social)
        if planned is None:
            return False
        path, tau = planned
        vehicle.plan = path.nodes
        vehicle.plan_pos = 0
        wait = 0.0 if vehicle.first_leg else self.network.expected_wait(at_node)
        vehicle.bound_float = vehicle.trip_metric + wait + tau + self.scenario.epsilon_s
        if vehicle.node == at_node:
            vehicle.next_node = vehicle.plan[1] if len(vehicle.plan) > 1 else None
        vehicle.declared = self._shortest(at_node, vehicle.dest)[0].nodes
        self._set_schedule(vehicle, tick)
        self.log(tick, "trip_replanned", vehicle.trip_id, vehicle.dest, vehicle.id, -1,
                 ROLE_CODES[vehicle.role], _cs_bound(vehicle.bound_float))
        return True

    def _set_schedule(self, vehicle: _Vehicle, tick: int) -> None:
        """Estimated absolute entry time (seconds) for each planned segment."""
        vehicle.schedule = {}
        t = tick * self.tick_s
        nodes = vehicle.plan
        for i in range(len(nodes) - 1):
            u, v = nodes[i], nodes[i + 1]
            if i > 0:
                t += self.network.expected_wait(u)
            vehicle.schedule[(u, v)] = t
            t += self.network.segments[(u, v)].base_travel_time_s

    # -- per-tick phases ---------------------------------------------------

    def _update_accidents(self, tick: int) -> None:
        active = frozenset(
            (a.from_id, a.to_id)
            for a in self.accidents
            if a.start_tick <= tick < a.start_tick + a.duration_ticks
        )
        self._blocked_changed = active != self.blocked
        if self._blocked_changed:
            self.blocked = active
            self.blocked_version += 1

    def _enter_segment(self, vehicle: _Vehicle, tick: int) -> None:
        node, nxt = vehicle.node, vehicle.next_node
        seg = self.network.segments[(node, nxt)]
        if not vehicle.first_leg:
            vehicle.trip_metric += self.network.expected_wait(node)
        vehicle.trip_metric += seg.base_travel_time_s
        vehicle.first_leg = False
        vehicle.seg = (node, nxt)
        vehicle.offset_cm = 0
        vehicle.node = None
        vehicle.next_node = None
        vehicle.stop_done = False
        if vehicle.plan_pos + 1 < len(vehicle.plan) and vehicle.plan[vehicle.plan_pos + 1] == nxt:
            vehicle.plan_pos += 1

    def _arrive(self, vehicle: _Vehicle, tick: int) -> None:
        u, v = vehicle.seg
        vehicle.last_cd = float(self._segment_cd(u, v))
        vehicle.node = v
        vehicle.seg = None
        vehicle.offset_cm = 0
        rl_provider = self.vesonet and vehicle.role == "provider"
        if v == vehicle.dest:
            self.log(tick, "trip_completed", vehicle.trip_id, vehicle.dest, vehicle.id, -1,
                     ROLE_CODES[vehicle.role], _cs_value(vehicle.trip_metric))
            if rl_provider and vehicle.pending is not None:
                vehicle.close_info = (v, True)
            self._start_trip(vehicle, tick)
            return
        if rl_provider:
            if vehicle.pending is not None:
                vehicle.close_info = (v, False)
            vehicle.declared = self._declared_path(v, vehicle.dest)
        else:
            if vehicle.plan_pos + 1 < len(vehicle.plan) and vehicle.plan[vehicle.plan_pos] == v:
                vehicle.next_node = vehicle.plan[vehicle.plan_pos + 1]
            else:
                # off-plan (should not happen for plan followers): re-anchor
                self._replan(vehicle, v, tick)

    def _declared_path(self, src: int, dst: int) -> Tuple[int, ...]:
        path, _ = self._shortest(src, dst)
        return path.nodes if path is not None else (src,)

    def _motion(self, tick: int) -> None:
        now_s = tick * self.tick_s
        cap_cm = self.scenario.velocity_cap_mps * 100.0
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role == "metadata" or vehicle.dest < 0:
                if vehicle.dest < 0 and vehicle.role != "metadata" and self._blocked_changed:
                    self._start_trip(vehicle, tick)
                continue
            if vehicle.node is not None:
                if vehicle.next_node is None:
                    continue
                signal = self.network.intersections[vehicle.node].signal
                if not signal.is_green(now_s):
                    continue
                self._enter_segment(vehicle, tick)
                # falls through to move on the fresh segment this tick
            if vehicle.seg is None:
                continue
            seg = self.network.segments[vehicle.seg]
            if vehicle.seg in self.blocked:
                continue  # accident: everyone on the segment is halted
            speed_cm = min(cap_cm, seg.speed_mps * 100.0)
            step_cm = int(round(speed_cm * self.tick_s))
            vehicle.offset_cm += step_cm
            length_cm = int(round(seg.length_m * 100))
            if vehicle.offset_cm >= length_cm:
                self._arrive(vehicle, tick)

    def _segment_cd(self, u: int, v: int) -> int:
        cc, cp = self.live_occ.get((u, v), (0, 0))
        return cc - cp

    def _refresh_occupancy(self, tick: int) -> None:
        live: Dict[Tuple[int, int], List[int]] = {}
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.seg is None:
                continue
            slot = live.setdefault(vehicle.seg, [0, 0])
            if vehicle.role == "consumer":
                slot[0] += 1
            elif vehicle.role == "provider":
                slot[1] += 1
        self.live_occ = {seg: (cc, cp) for seg, (cc, cp) in live.items()}

    def _refresh_snapshot(self, tick: int) -> None:
        """Planning snapshot: live occupancy plus providers' declared paths."""
        self._refresh_occupancy(tick)
        expected: Dict[Tuple[int, int], int] = {}
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role != "provider":
                continue
            for pair in zip(vehicle.declared[:-1], vehicle.declared[1:]):
                expected[pair] = expected.get(pair, 0) + 1
        self.network.clear_occupancy()
        for seg in self.network.segments:
            cc, cp = self.live_occ.get(seg, (0, 0))
            total = cp + expected.get(seg, 0)
            if cc or total:
                self.network.set_occupancy(seg[0], seg[1], cc, total, tick)
        self.snapshot_version += 1

    def _positions(self) -> Dict[int, Tuple[int, int]]:
        positions: Dict[int, Tuple[int, int]] = {}
        for vid, vehicle in self.vehicles.items():
            if vehicle.node is not None:
                positions[vid] = self.node_pos_cm[vehicle.node]
            elif vehicle.seg is not None:
                u, v = vehicle.seg
                ux, uy = self.node_pos_cm[u]
                vx, vy = self.node_pos_cm[v]
                length_cm = int(round(self.network.segments[(u, v)].length_m * 100))
                frac_num = min(vehicle.offset_cm, length_cm)
                positions[vid] = (
                    ux + (vx - ux) * frac_num // length_cm,
                    uy + (vy - uy) * frac_num // length_cm,
                )
        return positions

    def _reports(self, tick: int, positions) -> None:
        if tick % self.scenario.report_period_ticks != 0:
            return
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role != "provider" or vid not in positions:
                continue
            self.plane.report_location(vid, positions[vid], vehicle.declared, tick,
                                       self.metadata_positions)
        self.plane.purge_indexes(tick)

    def _requests(self, tick: int) -> None:
        rate = self.scenario.request_rate_per_s * self.tick_s
        if rate <= 0:
            return
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role != "consumer":
                continue
            if self.rng_requests.random() >= rate:
                continue
            wanted = [c for c in self.catalog if c not in vehicle.holdings]
            if not wanted:
                continue
            weights = np.array([self.popularity[c] for c in wanted], dtype=np.float64)
            item = int(self.rng_requests.choice(wanted, p=weights / weights.sum()))
            remaining = vehicle.plan[vehicle.plan_pos:]
            self.plane.create_interest(vid, item, tick, remaining, vehicle.holdings)

    def _recommendation(self, tick: int, positions, sorted_ids) -> None:
        if not self.vesonet or self.model is None:
            return
        now_s = tick * self.tick_s
        provider_ids = [vid for vid in sorted_ids if self.vehicles[vid].role == "provider"]
        for vid in provider_ids:
            vehicle = self.vehicles[vid]
            if vehicle.node is None or vehicle.stop_done or vehicle.dest < 0:
                continue
            signal = self.network.intersections[vehicle.node].signal
            if signal.is_green(now_s):
                continue
            vehicle.stop_done = True
            budget_bytes = int(signal.red_remaining(now_s) * self.scenario.v2v_rate_bps)
            budget_bytes = self._download_recommended(vehicle, tick, positions, provider_ids,
                                                      budget_bytes)
            self._download_popular(vehicle, tick, positions, budget_bytes)

    def _download_recommended(self, vehicle, tick, positions, provider_ids, budget_bytes):
        here = positions[vehicle.id]
        range2 = self.plane.range_cm2
        nearby: List[int] = []
        lenders: Dict[int, int] = {}
        for other in provider_ids:
            if other == vehicle.id or other not in positions:
                continue
            dx = positions[other][0] - here[0]
            dy = positions[other][1] - here[1]
            if dx * dx + dy * dy > range2:
                continue
            for item in self.plane.caches[other].contents:
                nearby.append(item)
                lenders.setdefault(item, other)
        if not nearby:
            return budget_bytes
        matrices = []
        for cid, matrix in sorted(self.consumer_matrices.items()):
            if matrix.shape[0] == 0:
                continue
            if self._expected_consumer(self.vehicles[cid], vehicle):
                matrices.append(matrix)
        if not matrices:
            return budget_bytes
        own = set(self.plane.caches[vehicle.id].contents)
        ranked = recommend_items(nearby, own, matrices, self.scenario.alpha, self.model,
                                 self.counter)
        for item in ranked:
            size = self.catalog_sizes[item]
            if size > budget_bytes:
                break
            if self.plane.store_content(vehicle.id, item, tick, source_id=lenders[item]):
                budget_bytes -= size
        return budget_bytes

    def _download_popular(self, vehicle, tick, positions, budget_bytes) -> None:
        if self.scenario.rec_popular_count <= 0:
            return
        here = positions[vehicle.id]
        range2 = self.plane.range_cm2
        near_rsu = None
        for rsu in sorted(self.rsu_positions):
            pos = self.rsu_positions[rsu]
            dx, dy = pos[0] - here[0], pos[1] - here[1]
            if dx * dx + dy * dy <= range2:
                near_rsu = rsu
                break
        if near_rsu is None:
            return
        cache = self.plane.caches[vehicle.id]
        ranked = sorted(self.catalog, key=lambda c: (-self.popularity[c], c))
        taken = 0
        for item in ranked:
            if taken >= self.scenario.rec_popular_count:
                break
            if item in cache:
                continue
            size = self.catalog_sizes[item]
            if size > budget_bytes:
                break
            if self.plane.store_content(vehicle.id, item, tick, source_id=near_rsu):
                self.log(tick, "replicated", "", item, near_rsu, vehicle.id, 0, size)
                budget_bytes -= size
                taken += 1

    def _expected_consumer(self, consumer: _Vehicle, provider: _Vehicle) -> bool:
        """Planned paths share a segment within one signal cycle of each other."""
        if consumer.dest < 0:
            return False
        cycle = self.scenario.signal_green_s + self.scenario.signal_red_s
        provider_sched = provider.schedule
        for seg, t_p in provider_sched.items():
            t_c = consumer.schedule.get(seg)
            if t_c is not None and abs(t_c - t_p) <= cycle:
                return True
        return False

    # -- provider navigation ------------------------------------------------

    def _provider_state(self, vehicle: _Vehicle, node: int) -> RLState:
        exits = self.network.neighbors(node)
        total = max(1, len(self.vehicles))
        cds = []
        feasible = []
        wait = 0.0 if vehicle.first_leg else self.network.expected_wait(node)
        bounds = self._lower_bounds(vehicle.dest) if vehicle.dest >= 0 else {}
        for nxt in exits:
            cds.append(self._segment_cd(node, nxt) / total)
            if vehicle.dest < 0 or (node, nxt) in self.blocked:
                feasible.append(False)
                continue
            seg = self.network.segments[(node, nxt)]
            remaining = bounds.get(nxt)
            if remaining is None:
                feasible.append(False)
                continue
            projected = vehicle.trip_metric + wait + seg.base_travel_time_s + remaining
            feasible.append(projected <= vehicle.bound_float + 1e-9)
        budget_frac = 0.0
        if vehicle.bound_float > 0:
            budget_frac = max(0.0, min(1.0, (vehicle.bound_float - vehicle.trip_metric)
                                       / vehicle.bound_float))
        dist_frac = 0.0
        if vehicle.dest >= 0:
            here = self.node_pos_cm[node]
            there = self.node_pos_cm[vehicle.dest]
            dist_frac = float(np.hypot(there[0] - here[0], there[1] - here[1])) / self.diag_cm
        return make_state(cds, feasible, budget_frac, dist_frac, self.k_exits)

    def _rl_phase(self, tick: int) -> None:
        if not self.vesonet or self.agent is None:
            return
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role != "provider":
                continue
            if vehicle.close_info is not None and vehicle.pending is not None:
                node, terminal = vehicle.close_info
                state, action, r = vehicle.pending
                next_state = self._provider_state(vehicle, node)
                self.agent.observe(Transition(state, action, r, next_state, terminal))
                if self.scenario.rl_training:
                    self.agent.train_step()
                vehicle.pending = None
                vehicle.close_info = None
            if vehicle.node is None or vehicle.next_node is not None or vehicle.dest < 0:
                continue
            state = self._provider_state(vehicle, vehicle.node)
            if not any(state.feasible):
                if vehicle.rebooted_at != self.blocked_version:
                    vehicle.rebooted_at = self.blocked_version
                    self._replan(vehicle, vehicle.node, tick)
                continue
            action = self.agent.act(state, greedy=not self.scenario.rl_training)
            exits = self.network.neighbors(vehicle.node)
            chosen = exits[action]
            new_cd = float(self._segment_cd(vehicle.node, chosen))
            r = rl_reward(vehicle.last_cd, new_cd, self.scenario.dqn.reward_mode)
            vehicle.pending = (state, action, r)
            vehicle.next_node = chosen

    def _replanning_hooks(self, tick: int) -> None:
        scen = self.scenario
        interval_due = scen.replan_interval_ticks > 0 and tick > 0 and \
            tick % scen.replan_interval_ticks == 0
        if not (self._blocked_changed or interval_due):
            return
        if not self.vesonet:
            return
        for vid in sorted(self.vehicles):
            vehicle = self.vehicles[vid]
            if vehicle.role != "consumer" or vehicle.dest < 0:
                continue
            remaining = list(zip(vehicle.plan[vehicle.plan_pos:],
                                 vehicle.plan[vehicle.plan_pos + 1:]))
            crosses = any(pair in self.blocked for pair in remaining)
            if not (crosses or interval_due):
                continue
            if vehicle.node is not None:
                anchor = vehicle.node
                if vehicle.seg is not None:
                    continue
            elif vehicle.seg is not None:
                if vehicle.seg in self.blocked:
                    continue  # stuck on the accident segment itself
                anchor = vehicle.seg[1]
            else:
                continue
            self._replan_ahead(vehicle, anchor, tick)

    def _replan_ahead(self, vehicle: _Vehicle, anchor: int, tick: int) -> None:
        social = self.vesonet and vehicle.role == "consumer"
        planned = self._plan_route(anchor, vehicle.dest, social)
        if planned is None:
            return
        path, tau = planned
        if vehicle.node == anchor:
            wait = 0.0 if vehicle.first_leg else self.network.expected_wait(anchor)
            vehicle.plan = path.nodes
            vehicle.plan_pos = 0
            vehicle.next_node = path.nodes[1] if len(path.nodes) > 1 else None
            vehicle.bound_float = vehicle.trip_metric + wait + tau + self.scenario.epsilon_s
        else:
            # mid-segment: the new plan applies from the segment's head
            wait = self.network.expected_wait(anchor)
            vehicle.plan = (vehicle.seg[0],) + path.nodes
            vehicle.plan_pos = 0
            vehicle.bound_float = vehicle.trip_metric + wait + tau + self.scenario.epsilon_s
        self._set_schedule(vehicle, tick)
        self.log(tick, "trip_replanned", vehicle.trip_id, vehicle.dest, vehicle.id, -1,
                 ROLE_CODES[vehicle.role], _cs_bound(vehicle.bound_float))

    # -- main loop -----------------------------------------------------------

    def step(self, tick: int) -> None:
        scen = self.scenario
        self._update_accidents(tick)
        self._motion(tick)
        if tick % scen.planning_snapshot_period_ticks == 0:
            self._refresh_snapshot(tick)
        else:
            self._refresh_occupancy(tick)
        positions = self._positions()
        sorted_ids = sorted(positions)
        self._reports(tick, positions)
        self._requests(tick)
        self.plane.step_retries(tick)
        self.plane.step_interests(tick, positions, self.metadata_positions, sorted_ids)
        delivered = self.plane.step_transfers(tick, positions, self.rsu_positions, sorted_ids)
        for consumer, content in delivered:
            vehicle = self.vehicles.get(consumer)
            if vehicle is not None:
                vehicle.holdings.add(content)
        self._recommendation(tick, positions, sorted_ids)
        self._rl_phase(tick)
        self._replanning_hooks(tick)


def _cs_value(seconds: float) -> int:
    return int(np.floor(seconds * 100.0 + 0.5))


def _cs_bound(seconds: float) -> int:
    # the extra 1e-6 absorbs summation-order float dust at exact-boundary trips
    return int(np.floor(seconds * 100.0 + 0.5 + 1e-6))


def spread_rsus(network: RoadNetwork, count: int) -> List[int]:
    """Deterministic, evenly spread RSU placement over the intersection list."""
    nodes = sorted(network.intersections)
    if count <= 0:
        return []
    if count >= len(nodes):
        return nodes
    if count == 1:
        return [nodes[len(nodes) // 2]]
    picks = []
    for i in range(count):
        picks.append(nodes[round(i * (len(nodes) - 1) / (count - 1))])
    return sorted(set(picks))


def central_accidents(network: RoadNetwork, count: int, start_tick: int,
                      duration_ticks: int) -> List[Accident]:
    """Pick the most central distinct road segments for the accident axis."""
    xs = [i.position_m[0] for i in network.intersections.values()]
    ys = [i.position_m[1] for i in network.intersections.values()]
    cx, cy = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2

    def centrality(pair):
        a = network.intersections[pair[0]].position_m
        b = network.intersections[pair[1]].position_m
        mx, my = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        return ((mx - cx) ** 2 + (my - cy) ** 2, pair)

    chosen: List[Accident] = []
    used = set()
    for pair in sorted(network.segments, key=centrality):
        if len(chosen) >= count:
            break
        if pair in used or (pair[1], pair[0]) in used:
            continue
        used.add(pair)
        chosen.append(Accident(pair[0], pair[1], start_tick, duration_ticks))
    return chosen


def run(scenario: Scenario) -> Tuple[MetricsReport, List[EventRow]]:
    """Run a scenario to completion; the report is derived from the event log."""
    world = World(scenario)
    last_tick = scenario.run_ticks - 1
    for tick in range(scenario.run_ticks):
        world.step(tick)
    world.plane.finalize(last_tick)
    for key, value in world.counter.items():
        world.log(last_tick, "compute_ops", key, -1, -1, -1, 0, value)
    report = compute_report(world.events)
    return report, world.events


SWEEP_AXES = ("velocity", "density", "rsu_count", "accidents", "request_rate")


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    if axis == "velocity":
        return replace(scenario, velocity_cap_mps=float(value))
    if axis == "density":
        total = max(1, scenario.consumers + scenario.providers + scenario.metadata)
        share_p = scenario.providers / total
        share_m = scenario.metadata / total
        providers = int(round(value * share_p))
        metadata = max(1 if scenario.metadata else 0, int(round(value * share_m)))
        consumers = max(0, int(value) - providers - metadata)
        return replace(scenario, consumers=consumers, providers=providers, metadata=metadata)
    if axis == "rsu_count":
        return replace(scenario, rsu_intersections=None, rsu_count=int(value))
    if axis == "accidents":
        return replace(scenario, accidents=[], accident_count=int(value))
    if axis == "request_rate":
        return replace(scenario, request_rate_per_s=float(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(template: Scenario, axis: str, values: Sequence[float],
          seeds: Sequence[int] = (0,), policies: Sequence[str] = POLICIES,
          keep_events: bool = False) -> List[Dict]:
    """One run per (value, policy, seed) with a shared seed base; long format."""
    if len(values) < 2:
        raise ValueError("a sweep needs at least 2 axis values")
    results: List[Dict] = []
    for value in values:
        for policy in policies:
            for seed in seeds:
                scenario = apply_axis(template, axis, value)
                scenario = replace(scenario, policy=policy, rng_seed=int(seed))
                report, events = run(scenario)
                row = {
                    "axis": axis,
                    "value": value,
                    "policy": policy,
                    "seed": int(seed),
                    "requested": report.requested,
                    "delivered": report.delivered,
                    "failed": report.failed,
                    "trips_completed": report.trips_completed,
                    "mean_delivery_delay_s": report.mean_delivery_delay_s,
                    "delivery_rate": report.delivery_rate,
                    "mean_travel_time_s": report.mean_travel_time_s,
                    "computation_cost": report.computation_cost,
                }
                if keep_events:
                    row["events"] = events
                results.append(row)
    return results


# ---------------------------------------------------------------------------
# CSV surfaces


def write_events_csv(rows: Sequence[EventRow], path: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write(",".join(EVENT_COLUMNS) + "\n")
        for row in rows:
            handle.write(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]},{row[5]},{row[6]},{row[7]}\n")


def metrics_lines(report: MetricsReport) -> List[str]:
    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = [
        f"requested,{report.requested}",
        f"delivered,{report.delivered}",
        f"failed,{report.failed}",
        f"trips_completed,{report.trips_completed}",
        f"mean_delivery_delay_s,{fmt(report.mean_delivery_delay_s)}",
        f"delivery_rate,{fmt(report.delivery_rate)}",
        f"mean_travel_time_s,{fmt(report.mean_travel_time_s)}",
        f"computation_cost,{report.computation_cost}",
        f"flags,{';'.join(report.flags)}",
    ]
    for key, value in sorted(report.breakdowns.items()):
        lines.append(f"breakdown:{key},{value}")
    return lines


def write_metrics_csv(report: MetricsReport, path: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("key,value\n")
        for line in metrics_lines(report):
            handle.write(line + "\n")


def write_sweep_csv(rows: Sequence[Dict], path: str) -> None:
    columns = ["axis", "value", "policy", "seed", "requested", "delivered", "failed",
               "trips_completed", "mean_delivery_delay_s", "delivery_rate",
               "mean_travel_time_s", "computation_cost"]
    with open(path, "w", newline="") as handle:
        handle.write(",".join(columns) + "\n")
        for row in rows:
            rendered = []
            for column in columns:
                value = row.get(column)
                if value is None:
                    rendered.append("")
                elif isinstance(value, float):
                    rendered.append(repr(value))
                else:
                    rendered.append(str(value))
            handle.write(",".join(rendered) + "\n")
