"""ICN-style content plane: interest creation and forwarding, meta-data index
vehicles, provider caches, store-carry-forward, RSU fallback and replication.

The plane owns the request lifecycle and all content state (provider caches,
index tables, in-flight packets and transfers). The simulation engine feeds it
vehicle positions each tick and consumes its event stream; every event also
lands in the run's audit log. Radio is a unit disk (450 m); distances are
integer centimeters so every range check is exact.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

RADIO_RANGE_M = 450.0
MAX_HOPS = 15

PosCm = Tuple[int, int]
LogFn = Callable[..., None]


def _dist2(a: PosCm, b: PosCm) -> int:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    return dx * dx + dy * dy


@dataclass
class InterestPacket:
    request_id: str
    content_id: int
    requester_id: int
    expected_path: Tuple[int, ...]
    created_tick: int
    hop_count: int = 0
    ttl_hops: int = MAX_HOPS
    holder_id: int = -1
    target_provider: Optional[int] = None
    target_pos: Optional[PosCm] = None
    alive: bool = True

    def __post_init__(self) -> None:
        if self.holder_id < 0:
            self.holder_id = self.requester_id


@dataclass
class ContentMessage:
    request_id: str
    content_id: int
    size_bytes: int
    remaining_bytes: int
    source_id: int  # provider vehicle id, or negative RSU id
    holder_id: int = -1  # current carrier while relaying back to the requester
    last_progress_tick: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.remaining_bytes <= self.size_bytes:
            raise ValueError("remaining bytes out of range")
        if self.holder_id == -1:
            self.holder_id = self.source_id


def transfer_step(message: ContentMessage, in_range: bool, rate_bytes_per_tick: int) -> int:
    """Advance one transfer by a tick; no progress when endpoints are out of
    range, and an interrupted transfer resumes from its remaining bytes."""
    if in_range and message.remaining_bytes > 0:
        message.remaining_bytes = max(0, message.remaining_bytes - rate_bytes_per_tick)
    return message.remaining_bytes


class ProviderCache:
    """LRU-evicting content store with a byte capacity."""

    def __init__(self, provider_id: int, capacity_bytes: int) -> None:
        self.provider_id = provider_id
        self.capacity_bytes = capacity_bytes
        self._stored: "OrderedDict[int, int]" = OrderedDict()  # content -> size

    def __contains__(self, content_id: int) -> bool:
        return content_id in self._stored

    @property
    def used_bytes(self) -> int:
        return sum(self._stored.values())

    @property
    def contents(self) -> Tuple[int, ...]:
        return tuple(self._stored)

    def touch(self, content_id: int) -> None:
        if content_id in self._stored:
            self._stored.move_to_end(content_id)

    def store(self, content_id: int, size_bytes: int) -> List[Tuple[int, int]]:
        """Insert an item, evicting least-recently-used entries as needed.
        Returns the (content, size) pairs evicted. Oversized items are
        rejected by returning the item itself as the only 'eviction'."""
        if content_id in self._stored:
            self.touch(content_id)
            return []
        if size_bytes > self.capacity_bytes:
            return [(content_id, size_bytes)]
        evicted = []
        while self.used_bytes + size_bytes > self.capacity_bytes:
            old_id, old_size = self._stored.popitem(last=False)
            evicted.append((old_id, old_size))
        self._stored[content_id] = size_bytes
        return evicted


@dataclass
class IndexEntry:
    position_cm: PosCm
    expected_path: Tuple[int, ...]
    report_tick: int


class MetaDataIndex:
    """Content indexing table hosted by a stationary meta-data vehicle."""

    def __init__(self, host_id: int) -> None:
        self.host_id = host_id
        self._table: Dict[int, Dict[int, IndexEntry]] = {}

    def report(self, provider_id: int, contents: Iterable[int], position_cm: PosCm,
               expected_path: Tuple[int, ...], tick: int) -> None:
        """Replace the provider's entries; last writer wins within a period."""
        for entries in self._table.values():
            entries.pop(provider_id, None)
        entry = IndexEntry(position_cm, expected_path, tick)
        for content in contents:
            self._table.setdefault(content, {})[provider_id] = entry

    def lookup(self, content_id: int) -> List[Tuple[int, IndexEntry]]:
        return sorted(self._table.get(content_id, {}).items())

    def purge(self, now_tick: int, horizon_ticks: int) -> None:
        for content in list(self._table):
            entries = self._table[content]
            for provider in list(entries):
                if now_tick - entries[provider].report_tick > horizon_ticks:
                    del entries[provider]
            if not entries:
                del self._table[content]

    def known_contents(self) -> Tuple[int, ...]:
        return tuple(sorted(self._table))


@dataclass
class _RequestState:
    request_id: str
    consumer: int
    content: int
    created_tick: int
    issued_tick: int
    retries: int = 0
    done: bool = False
    transferring: bool = False
    rsu_wait: bool = False
    last_hops: int = 0


class ContentPlane:
    """All dissemination state, advanced in a fixed per-tick phase order."""

    def __init__(
        self,
        *,
        catalog_sizes: Dict[int, int],
        v2v_rate_bps: int,
        rsu_rate_bps: int,
        tick_duration_s: float,
        log: LogFn,
        radio_range_m: float = RADIO_RANGE_M,
        max_hops: int = MAX_HOPS,
        retry_interval_ticks: int = 30,
        max_retries: int = 3,
        report_period_ticks: int = 10,
        staleness_periods: int = 3,
        replication_enabled: bool = True,
        flood: bool = False,
        count: Optional[Callable[[str, int], None]] = None,
    ) -> None:
        self.catalog_sizes = dict(catalog_sizes)
        self.v2v_bytes_per_tick = int(v2v_rate_bps * tick_duration_s)
        self.rsu_bytes_per_tick = int(rsu_rate_bps * tick_duration_s)
        self.range_cm2 = int(round(radio_range_m * 100)) ** 2
        self.max_hops = max_hops
        self.retry_interval = retry_interval_ticks
        self.max_retries = max_retries
        self.report_period = report_period_ticks
        self.staleness_ticks = staleness_periods * report_period_ticks
        self.replication_enabled = replication_enabled
        self.flood = flood
        self.log = log
        self.count = count or (lambda key, n=1: None)
        self.caches: Dict[int, ProviderCache] = {}
        self.indexes: Dict[int, MetaDataIndex] = {}
        self.packets: List[InterestPacket] = []
        self.transfers: List[ContentMessage] = []
        self.requests: Dict[str, _RequestState] = {}
        self._flood_seen: Dict[str, Set[int]] = {}
        self._request_seq = 0

    # -- membership ------------------------------------------------------

    def register_provider(self, provider_id: int, capacity_bytes: int, tick: int = 0) -> None:
        self.caches[provider_id] = ProviderCache(provider_id, capacity_bytes)
        self.log(tick, "provider_capacity", "", -1, provider_id, -1, 0, capacity_bytes)

    def register_metadata(self, host_id: int) -> None:
        self.indexes[host_id] = MetaDataIndex(host_id)

    def store_content(self, provider_id: int, content_id: int, tick: int,
                      source_id: int = -1) -> bool:
        """Insert content into a provider cache, logging the store and any
        LRU evictions; returns False if the item could not fit at all."""
        cache = self.caches[provider_id]
        if content_id in cache:
            return True
        size = self.catalog_sizes[content_id]
        evicted = cache.store(content_id, size)
        if evicted and evicted[0][0] == content_id:
            return False
        for old_id, old_size in evicted:
            self.log(tick, "cache_evicted", "", old_id, provider_id, -1, 0, old_size)
        self.log(tick, "cache_stored", "", content_id, provider_id, source_id, 0, size)
        return True

    # -- interest lifecycle -----------------------------------------------

    def create_interest(self, consumer_id: int, content_id: int, tick: int,
                        expected_path: Tuple[int, ...], holdings: Set[int]) -> Optional[InterestPacket]:
        """New request. A consumer already holding the item is a local hit
        with zero delay; otherwise an interest packet starts at the consumer."""
        self._request_seq += 1
        request_id = f"R{self._request_seq}"
        self.log(tick, "interest_created", request_id, content_id, consumer_id, -1, 0, 0)
        state = _RequestState(request_id, consumer_id, content_id, tick, tick)
        self.requests[request_id] = state
        if content_id in holdings:
            state.done = True
            self.log(tick, "local_hit", request_id, content_id, consumer_id, consumer_id, 0, 0)
            return None
        packet = InterestPacket(request_id, content_id, consumer_id, expected_path, tick,
                                ttl_hops=self.max_hops)
        self.packets.append(packet)
        if self.flood:
            self._flood_seen[request_id] = {consumer_id}
        return packet

    def _fail(self, state: _RequestState, tick: int) -> None:
        state.done = True
        self.log(tick, "request_failed", state.request_id, state.content, state.consumer,
                 -1, state.last_hops, 0)

    def _provider_found(self, packet: InterestPacket, provider_id: int, tick: int) -> None:
        state = self.requests[packet.request_id]
        if state.done or state.transferring:
            packet.alive = False
            return
        cache = self.caches[provider_id]
        cache.touch(packet.content_id)
        state.transferring = True
        state.last_hops = packet.hop_count
        packet.alive = False
        size = self.catalog_sizes[packet.content_id]
        self.transfers.append(ContentMessage(packet.request_id, packet.content_id, size, size,
                                             provider_id, last_progress_tick=tick))
        self.log(tick, "provider_found", packet.request_id, packet.content_id,
                 provider_id, packet.requester_id, packet.hop_count, size)

    def report_location(self, provider_id: int, position_cm: PosCm,
                        expected_path: Tuple[int, ...], tick: int,
                        metadata_positions: Optional[Dict[int, PosCm]] = None) -> None:
        """Push the provider's contents, position and expected path into every
        index. Location updates are small control messages, so the update
        plane is modeled as connected; entries still age out when a provider
        goes silent."""
        cache = self.caches.get(provider_id)
        if cache is None:
            return
        for host_id in sorted(self.indexes):
            self.indexes[host_id].report(provider_id, cache.contents, position_cm,
                                         expected_path, tick)

    def purge_indexes(self, tick: int) -> None:
        for host_id in sorted(self.indexes):
            self.indexes[host_id].purge(tick, self.staleness_ticks)

    # -- per-tick steps ----------------------------------------------------

    def step_retries(self, tick: int) -> None:
        """Reissue unanswered interests every retry interval; fail after the
        retry budget is exhausted. A request waiting on an RSU or stuck in a
        stalled transfer is reissued too (the transfer, if any, is dropped and
        resumes from scratch at whatever provider answers next)."""
        for request_id in sorted(self.requests):
            state = self.requests[request_id]
            if state.done:
                continue
            if state.transferring:
                message = self._transfer_of(request_id)
                stalled = message is not None and \
                    tick - message.last_progress_tick >= self.retry_interval
                if not stalled:
                    continue
            if tick - state.issued_tick < self.retry_interval:
                continue
            for packet in self.packets:
                if packet.request_id == request_id:
                    packet.alive = False
            if state.retries >= self.max_retries:
                self._fail(state, tick)
                self.transfers = [m for m in self.transfers if m.request_id != request_id]
                continue
            if state.transferring:
                self.transfers = [m for m in self.transfers if m.request_id != request_id]
                state.transferring = False
            state.rsu_wait = False
            state.retries += 1
            state.issued_tick = tick
            packet = InterestPacket(request_id, state.content, state.consumer, (),
                                    state.created_tick, ttl_hops=self.max_hops)
            self.packets.append(packet)
            if self.flood:
                self._flood_seen[request_id] = {state.consumer}
            self.log(tick, "interest_retry", request_id, state.content, state.consumer, -1, 0, 0)

    def _transfer_of(self, request_id: str) -> Optional[ContentMessage]:
        for message in self.transfers:
            if message.request_id == request_id:
                return message
        return None

    def forward_interest(self, packet: InterestPacket, tick: int,
                         positions: Dict[int, PosCm],
                         metadata_positions: Dict[int, PosCm],
                         sorted_ids: Optional[Sequence[int]] = None) -> None:
        """Advance one interest by at most one hop.

        Order of resolution: holder already stores the content; holder is an
        index host (lookup, then redirect toward the listed provider or fall
        back to RSU delivery); otherwise greedy geographic forwarding toward
        the current target, carrying the packet when no neighbor makes
        progress."""
        state = self.requests[packet.request_id]
        if state.done or state.transferring:
            packet.alive = False
            return
        holder = packet.holder_id
        holder_pos = positions.get(holder)
        if holder_pos is None:
            return
        cache = self.caches.get(holder)
        if cache is not None and packet.content_id in cache:
            self._provider_found(packet, holder, tick)
            return
        if holder in self.indexes:
            self.count("index_lookups", 1)
            entries = self.indexes[holder].lookup(packet.content_id)
            if entries:
                requester_pos = positions.get(packet.requester_id, holder_pos)
                best = min(entries, key=lambda kv: (_dist2(kv[1].position_cm, requester_pos), kv[0]))
                packet.target_provider = best[0]
                packet.target_pos = best[1].position_cm
            else:
                state.rsu_wait = True
                packet.alive = False
                self.log(tick, "rsu_fallback", packet.request_id, packet.content_id,
                         holder, -1, packet.hop_count, 0)
                return
        if packet.target_provider is not None:
            provider_pos = positions.get(packet.target_provider)
            if provider_pos is not None and _dist2(holder_pos, provider_pos) <= self.range_cm2:
                if not self._hop(packet, packet.target_provider, tick):
                    return
                self._provider_found(packet, packet.target_provider, tick)
                return
            target = packet.target_pos if packet.target_pos is not None else holder_pos
        else:
            target = self._nearest_metadata_pos(holder_pos, metadata_positions)
            if target is not None:
                for host_id in sorted(self.indexes):
                    host_pos = metadata_positions.get(host_id)
                    if host_pos == target and _dist2(holder_pos, host_pos) <= self.range_cm2:
                        if self._hop(packet, host_id, tick):
                            self.forward_interest(packet, tick, positions,
                                                  metadata_positions, sorted_ids)
                        return
        if target is None:
            return  # nothing known to steer toward: store-carry
        self._greedy_hop(packet, target, tick, positions, sorted_ids)

    def _nearest_metadata_pos(self, from_pos: PosCm,
                              metadata_positions: Dict[int, PosCm]) -> Optional[PosCm]:
        best: Optional[Tuple[int, int, PosCm]] = None
        for host_id in sorted(self.indexes):
            pos = metadata_positions.get(host_id)
            if pos is None:
                continue
            cand = (_dist2(from_pos, pos), host_id, pos)
            if best is None or cand[:2] < best[:2]:
                best = cand
        return best[2] if best else None

    def _hop(self, packet: InterestPacket, to_vehicle: int, tick: int) -> bool:
        if packet.hop_count >= packet.ttl_hops:
            packet.alive = False
            self.log(tick, "interest_dropped", packet.request_id, packet.content_id,
                     packet.holder_id, -1, packet.hop_count, 0)
            return False
        self.log(tick, "interest_forwarded", packet.request_id, packet.content_id,
                 packet.holder_id, to_vehicle, packet.hop_count + 1, 0)
        packet.hop_count += 1
        packet.holder_id = to_vehicle
        return True

    def _greedy_hop(self, packet: InterestPacket, target: PosCm, tick: int,
                    positions: Dict[int, PosCm],
                    sorted_ids: Optional[Sequence[int]] = None) -> None:
        holder_pos = positions[packet.holder_id]
        here = _dist2(holder_pos, target)
        best: Optional[Tuple[int, int]] = None
        for vid in (sorted_ids if sorted_ids is not None else sorted(positions)):
            if vid == packet.holder_id or vid < 0:
                continue
            pos = positions[vid]
            if _dist2(holder_pos, pos) > self.range_cm2:
                continue
            progress = _dist2(pos, target)
            if progress >= here:
                continue
            if best is None or (progress, vid) < best:
                best = (progress, vid)
        if best is None:
            return  # store-carry: the packet rides its holder
        self._hop(packet, best[1], tick)

    def step_interests(self, tick: int, positions: Dict[int, PosCm],
                       metadata_positions: Dict[int, PosCm],
                       sorted_ids: Optional[Sequence[int]] = None) -> None:
        if sorted_ids is None:
            sorted_ids = sorted(positions)
        if self.flood:
            self._step_interests_flood(tick, positions, metadata_positions, sorted_ids)
        else:
            for packet in list(self.packets):
                if packet.alive:
                    self.forward_interest(packet, tick, positions, metadata_positions,
                                          sorted_ids)
            self.packets = [p for p in self.packets if p.alive]

    def _step_interests_flood(self, tick: int, positions: Dict[int, PosCm],
                              metadata_positions: Dict[int, PosCm],
                              sorted_ids: Sequence[int]) -> None:
        spawned: List[InterestPacket] = []
        for packet in list(self.packets):
            if not packet.alive:
                continue
            state = self.requests[packet.request_id]
            if state.done or state.transferring or state.rsu_wait:
                packet.alive = False
                continue
            holder_pos = positions.get(packet.holder_id)
            if holder_pos is None:
                continue
            cache = self.caches.get(packet.holder_id)
            if cache is not None and packet.content_id in cache:
                self._provider_found(packet, packet.holder_id, tick)
                continue
            if packet.holder_id in self.indexes:
                self.count("index_lookups", 1)
                entries = self.indexes[packet.holder_id].lookup(packet.content_id)
                if not entries:
                    state.rsu_wait = True
                    packet.alive = False
                    self.log(tick, "rsu_fallback", packet.request_id, packet.content_id,
                             packet.holder_id, -1, packet.hop_count, 0)
                    continue
            if packet.hop_count >= packet.ttl_hops:
                packet.alive = False
                self.log(tick, "interest_dropped", packet.request_id, packet.content_id,
                         packet.holder_id, -1, packet.hop_count, 0)
                continue
            seen = self._flood_seen.setdefault(packet.request_id, {packet.requester_id})
            for vid in sorted_ids:
                if vid < 0 or vid in seen:
                    continue
                if _dist2(holder_pos, positions[vid]) > self.range_cm2:
                    continue
                seen.add(vid)
                clone = InterestPacket(packet.request_id, packet.content_id,
                                       packet.requester_id, packet.expected_path,
                                       packet.created_tick, packet.hop_count + 1,
                                       packet.ttl_hops, vid)
                self.log(tick, "interest_forwarded", packet.request_id, packet.content_id,
                         packet.holder_id, vid, clone.hop_count, 0)
                spawned.append(clone)
        self.packets.extend(spawned)
        self.packets = [p for p in self.packets if p.alive]

    def step_transfers(self, tick: int, positions: Dict[int, PosCm],
                       rsu_positions: Dict[int, PosCm],
                       sorted_ids: Optional[Sequence[int]] = None) -> List[Tuple[int, int]]:
        """Advance content messages back toward their requesters.

        A message relays greedily vehicle-to-vehicle (store-carry when no relay
        makes progress) until its holder is within radio range of the
        requester, where the payload streams at the link rate. Returns the
        (consumer, content) pairs completed this tick."""
        if sorted_ids is None:
            sorted_ids = sorted(positions)
        delivered: List[Tuple[int, int]] = []
        for request_id in sorted(self.requests):
            state = self.requests[request_id]
            if state.done or not state.rsu_wait:
                continue
            requester_pos = positions.get(state.consumer)
            if requester_pos is None or not rsu_positions:
                continue
            nearest = min(
                sorted(rsu_positions),
                key=lambda rsu: (_dist2(requester_pos, rsu_positions[rsu]), rsu),
            )
            self.resolve_via_rsu(state, nearest, tick)
        for message in list(self.transfers):
            state = self.requests[message.request_id]
            requester_pos = positions.get(state.consumer)
            if requester_pos is None:
                continue
            if message.holder_id < 0:
                holder_pos = rsu_positions.get(message.holder_id)
                rate = self.rsu_bytes_per_tick
            else:
                holder_pos = positions.get(message.holder_id)
                rate = self.v2v_bytes_per_tick
            if holder_pos is None:
                continue
            in_range = _dist2(holder_pos, requester_pos) <= self.range_cm2
            if in_range:
                before = message.remaining_bytes
                transfer_step(message, True, rate)
                if message.remaining_bytes < before:
                    message.last_progress_tick = tick
            else:
                self._relay_content(message, holder_pos, requester_pos, tick, positions,
                                    sorted_ids)
            if message.remaining_bytes == 0:
                state.done = True
                self.transfers.remove(message)
                delivered.append((state.consumer, state.content))
                if message.source_id < 0:
                    self.log(tick, "delivered_rsu", state.request_id, state.content,
                             message.source_id, state.consumer, state.last_hops, 0)
                    self._replicate(state.content, message.source_id, state.request_id,
                                    tick, positions, rsu_positions)
                else:
                    self.log(tick, "delivered_v2v", state.request_id, state.content,
                             message.source_id, state.consumer, state.last_hops, 0)
        return delivered

    def _relay_content(self, message: ContentMessage, holder_pos: PosCm,
                       requester_pos: PosCm, tick: int,
                       positions: Dict[int, PosCm], sorted_ids: Sequence[int]) -> None:
        here = _dist2(holder_pos, requester_pos)
        best: Optional[Tuple[int, int]] = None
        for vid in sorted_ids:
            if vid == message.holder_id or vid < 0:
                continue
            pos = positions[vid]
            if _dist2(holder_pos, pos) > self.range_cm2:
                continue
            progress = _dist2(pos, requester_pos)
            if progress >= here:
                continue
            if best is None or (progress, vid) < best:
                best = (progress, vid)
        if best is not None:
            message.holder_id = best[1]
            message.last_progress_tick = tick

    def resolve_via_rsu(self, state: _RequestState, rsu_id: int, tick: int) -> ContentMessage:
        """Begin the external download through an RSU; the content message then
        relays from the RSU toward the requester. The copy pushed to a nearby
        provider (replication) happens when the fetch completes."""
        state.rsu_wait = False
        state.transferring = True
        size = self.catalog_sizes[state.content]
        message = ContentMessage(state.request_id, state.content, size, size, rsu_id,
                                 last_progress_tick=tick)
        self.transfers.append(message)
        return message

    def _replicate(self, content_id: int, rsu_id: int, request_id: str, tick: int,
                   positions: Dict[int, PosCm], rsu_positions: Dict[int, PosCm]) -> None:
        """Push a fresh copy to the least-loaded provider within RSU range."""
        if not self.replication_enabled:
            return
        rsu_pos = rsu_positions[rsu_id]
        candidates = [
            pid
            for pid in sorted(self.caches)
            if pid in positions and _dist2(positions[pid], rsu_pos) <= self.range_cm2
        ]
        if not candidates:
            return
        target = min(candidates, key=lambda pid: (self.caches[pid].used_bytes, pid))
        size = self.catalog_sizes[content_id]
        if self.store_content(target, content_id, tick, source_id=rsu_id):
            self.log(tick, "replicated", request_id, content_id, rsu_id, target, 0, size)

    def finalize(self, tick: int) -> None:
        """End of run: any request still pending counts as a failure so that
        every created interest has exactly one terminal event."""
        for request_id in sorted(self.requests):
            state = self.requests[request_id]
            if not state.done:
                self._fail(state, tick)

    # -- queries ------------------------------------------------------------

    def providers_with(self, content_id: int) -> Tuple[int, ...]:
        return tuple(sorted(pid for pid, cache in self.caches.items() if content_id in cache))

    def pending_requests(self) -> int:
        return sum(1 for s in self.requests.values() if not s.done)
