"""Independent audit of simulation event logs.

Recomputes the four run metrics straight from an events CSV and checks the
dissemination and budget invariants. Deliberately shares no metric code with
the runner: any disagreement between this module and the runner's report is a
defect in one of them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

TERMINAL_EVENTS = ("local_hit", "delivered_v2v", "delivered_rsu", "request_failed")


@dataclass
class AuditResult:
    requested: int
    delivered: int
    failed: int
    trips_completed: int
    mean_delivery_delay_s: Optional[float]
    delivery_rate: Optional[float]
    mean_travel_time_s: Optional[float]
    computation_cost: int
    breakdowns: Dict[str, int]
    verdicts: List[Tuple[str, bool, str]] = field(default_factory=list)
    row_errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.row_errors and all(passed for _, passed, _ in self.verdicts)


def parse_events_csv(path: str) -> Tuple[List[tuple], List[str]]:
    rows: List[tuple] = []
    errors: List[str] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or header[0] != "tick":
            errors.append("line 1: missing or malformed header")
        for lineno, raw in enumerate(reader, 2):
            if len(raw) != 8:
                errors.append(f"line {lineno}: expected 8 columns, got {len(raw)}")
                continue
            try:
                rows.append((int(raw[0]), raw[1], raw[2], int(raw[3]), int(raw[4]),
                             int(raw[5]), int(raw[6]), int(raw[7])))
            except ValueError as exc:
                errors.append(f"line {lineno}: {exc}")
    return rows, errors


def audit_rows(rows: Sequence[tuple], max_hops: int = 15) -> AuditResult:
    """Recompute metrics and run every invariant check over parsed event rows."""
    tick_duration_cs = 100
    created: Dict[str, int] = {}
    terminals: Dict[str, List[Tuple[int, str]]] = {}
    hops_trace: Dict[str, List[int]] = {}
    hop_violations: List[str] = []
    trip_start: Dict[str, int] = {}
    trip_bound_cs: Dict[str, int] = {}
    trip_realized: Dict[str, Tuple[int, int]] = {}
    trip_role: Dict[str, int] = {}
    capacity: Dict[int, int] = {}
    cache_used: Dict[int, int] = {}
    capacity_violations: List[str] = []
    holders: Dict[int, set] = {}
    replication_violations: List[str] = []
    breakdowns: Dict[str, int] = {}

    for row in rows:
        tick, etype, req, content, vfrom, vto, hops, bytes_ = row
        if etype == "config":
            if req == "tick_duration_cs":
                tick_duration_cs = bytes_
        elif etype == "interest_created":
            created[req] = tick
            hops_trace[req] = [0]
        elif etype in TERMINAL_EVENTS:
            terminals.setdefault(req, []).append((tick, etype))
        elif etype == "interest_retry":
            hops_trace.setdefault(req, []).append(0)  # a fresh attempt restarts hops
        elif etype in ("interest_forwarded", "interest_dropped"):
            trace = hops_trace.setdefault(req, [0])
            if hops > max_hops:
                hop_violations.append(f"{req}: hop count {hops} exceeds {max_hops}")
            if etype == "interest_forwarded":
                if hops < trace[-1]:
                    hop_violations.append(f"{req}: hop count decreased {trace[-1]} -> {hops}")
                trace.append(hops)
        elif etype == "trip_started":
            trip_start[req] = tick
            trip_bound_cs[req] = bytes_
            trip_role[req] = hops
        elif etype == "trip_replanned":
            trip_bound_cs[req] = bytes_
        elif etype == "trip_completed":
            trip_realized[req] = (tick, bytes_)
        elif etype == "provider_capacity":
            capacity[vfrom] = bytes_
            cache_used.setdefault(vfrom, 0)
        elif etype == "cache_stored":
            cache_used[vfrom] = cache_used.get(vfrom, 0) + bytes_
            if vfrom in capacity and cache_used[vfrom] > capacity[vfrom]:
                capacity_violations.append(
                    f"provider {vfrom} over capacity at tick {tick}"
                    f" ({cache_used[vfrom]} > {capacity[vfrom]})"
                )
            holders.setdefault(content, set()).add(vfrom)
        elif etype == "cache_evicted":
            cache_used[vfrom] = cache_used.get(vfrom, 0) - bytes_
            held = holders.setdefault(content, set())
            if vfrom in held:
                held.discard(vfrom)
            else:
                replication_violations.append(
                    f"content {content} evicted from {vfrom} without a stored copy"
                )
        elif etype == "compute_ops":
            breakdowns[req] = breakdowns.get(req, 0) + bytes_

    verdicts: List[Tuple[str, bool, str]] = []

    # conservation: every created interest reaches exactly one terminal event
    orphaned = [req for req in created if len(terminals.get(req, [])) != 1]
    extra = [req for req in terminals if req not in created]
    verdicts.append((
        "conservation",
        not orphaned and not extra,
        f"{len(orphaned)} requests without exactly one terminal, {len(extra)} unknown terminals",
    ))

    verdicts.append(("hop_limit", not hop_violations, "; ".join(hop_violations[:3])))
    verdicts.append(("cache_capacity", not capacity_violations, "; ".join(capacity_violations[:3])))
    verdicts.append(("replication_accounting", not replication_violations,
                     "; ".join(replication_violations[:3])))

    # detour budget: realized route metric within the latest declared bound
    budget_violations = []
    for trip, (tick, realized_cs) in trip_realized.items():
        bound = trip_bound_cs.get(trip)
        if bound is None:
            budget_violations.append(f"{trip}: completed without a bound")
        elif realized_cs > bound:
            budget_violations.append(f"{trip}: realized {realized_cs}cs exceeds bound {bound}cs")
    verdicts.append(("detour_budget", not budget_violations, "; ".join(budget_violations[:3])))

    delays = []
    delivered = 0
    failed = 0
    for req, finishes in terminals.items():
        if req not in created or len(finishes) != 1:
            continue
        tick, etype = finishes[0]
        if etype == "request_failed":
            failed += 1
        else:
            delivered += 1
            delays.append(tick - created[req])

    tick_s = tick_duration_cs / 100.0
    requested = len(created)
    mean_delay = (sum(delays) * tick_s) / delivered if delivered else None
    rate = delivered / requested if requested else None
    travel = [trip_realized[t][0] - trip_start[t] for t in trip_realized if t in trip_start]
    mean_travel = (sum(travel) * tick_s) / len(travel) if travel else None

    return AuditResult(
        requested=requested,
        delivered=delivered,
        failed=failed,
        trips_completed=len(trip_realized),
        mean_delivery_delay_s=mean_delay,
        delivery_rate=rate,
        mean_travel_time_s=mean_travel,
        computation_cost=sum(breakdowns.values()),
        breakdowns=breakdowns,
        verdicts=verdicts,
    )


def audit_events(path: str, max_hops: int = 15) -> AuditResult:
    rows, errors = parse_events_csv(path)
    result = audit_rows(rows, max_hops)
    result.row_errors = errors
    return result


def read_metrics_csv(path: str) -> Dict[str, object]:
    values: Dict[str, object] = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        for row in reader:
            if len(row) != 2:
                continue
            key, raw = row
            if key in ("requested", "delivered", "failed", "trips_completed",
                       "computation_cost") or key.startswith("breakdown:"):
                values[key] = int(raw)
            elif key == "flags":
                values[key] = raw
            else:
                values[key] = float(raw) if raw else None
    return values


def compare_with_metrics(result: AuditResult, metrics: Dict[str, object]) -> List[str]:
    """Exact comparison of the recomputed metrics against a runner report."""
    mismatches = []
    pairs = [
        ("requested", result.requested),
        ("delivered", result.delivered),
        ("failed", result.failed),
        ("trips_completed", result.trips_completed),
        ("mean_delivery_delay_s", result.mean_delivery_delay_s),
        ("delivery_rate", result.delivery_rate),
        ("mean_travel_time_s", result.mean_travel_time_s),
        ("computation_cost", result.computation_cost),
    ]
    for key, recomputed in pairs:
        reported = metrics.get(key)
        if reported != recomputed:
            mismatches.append(f"{key}: runner={reported!r} audit={recomputed!r}")
    for key, value in result.breakdowns.items():
        reported = metrics.get(f"breakdown:{key}")
        if reported != value:
            mismatches.append(f"breakdown:{key}: runner={reported!r} audit={value!r}")
    return mismatches
