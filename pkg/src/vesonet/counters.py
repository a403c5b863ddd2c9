"""Additive operation counters used for computation-cost accounting."""

from collections import defaultdict
from typing import Dict, Iterator, Tuple


class OpCounter:
    """Counts named operations across subsystems.

    Counters are plain integers and additive: merging two counters yields the
    counts of running both scopes.
    """

    def __init__(self) -> None:
        self._counts: Dict[str, int] = defaultdict(int)

    def add(self, key: str, n: int = 1) -> None:
        self._counts[key] += n

    def get(self, key: str) -> int:
        return self._counts.get(key, 0)

    def total(self) -> int:
        return sum(self._counts.values())

    def merge(self, other: "OpCounter") -> None:
        for key, value in other.items():
            self._counts[key] += value

    def items(self) -> Iterator[Tuple[str, int]]:
        return iter(sorted(self._counts.items()))

    def as_dict(self) -> Dict[str, int]:
        return dict(self._counts)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self._counts.items()))
        return f"OpCounter({inner})"
