"""Sorted, disjoint, maximal sets of half-open integer intervals."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np


class IntervalSet:
    """Union of half-open intervals ``[start, end)`` over integer time.

    Always stored normalised: sorted, non-overlapping, and with no two
    intervals touching (``[0, 60)`` and ``[60, 90)`` become ``[0, 90)``).
    """

    __slots__ = ("_iv",)

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        self._iv = self._normalise(intervals)

    @staticmethod
    def _normalise(intervals) -> tuple[tuple[int, int], ...]:
        ivs = sorted((int(s), int(e)) for s, e in intervals if e > s)
        out: list[list[int]] = []
        for s, e in ivs:
            if out and s <= out[-1][1]:
                out[-1][1] = max(out[-1][1], e)
            else:
                out.append([s, e])
        return tuple((s, e) for s, e in out)

    @classmethod
    def from_mask(cls, mask: np.ndarray, offset: int = 0) -> IntervalSet:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            return cls()
        d = np.diff(np.concatenate([[False], m, [False]]).astype(np.int8))
        starts = np.flatnonzero(d == 1) + offset
        ends = np.flatnonzero(d == -1) + offset
        out = cls.__new__(cls)
        out._iv = tuple(zip(starts.tolist(), ends.tolist()))
        return out

    def to_mask(self, lo: int, hi: int) -> np.ndarray:
        m = np.zeros(max(hi - lo, 0), dtype=bool)
        for s, e in self._iv:
            a, b = max(s, lo), min(e, hi)
            if a < b:
                m[a - lo:b - lo] = True
        return m

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __eq__(self, other) -> bool:
        if isinstance(other, IntervalSet):
            return self._iv == other._iv
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._iv)

    def __repr__(self) -> str:
        return f"IntervalSet({list(self._iv)})"

    def __contains__(self, t: int) -> bool:
        return self.holds_at(t)

    def holds_at(self, t: int) -> bool:
        for s, e in self._iv:
            if s <= t < e:
                return True
            if s > t:
                break
        return False

    def union(self, other: Iterable[tuple[int, int]]) -> IntervalSet:
        return IntervalSet(list(self._iv) + list(other))

    __or__ = union

    def intersection(self, other: IntervalSet) -> IntervalSet:
        out, i, j = [], 0, 0
        a, b = self._iv, tuple(other)
        while i < len(a) and j < len(b):
            s, e = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
            if s < e:
                out.append((s, e))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet(out)

    __and__ = intersection

    def complement(self, lo: int, hi: int) -> IntervalSet:
        out, cur = [], lo
        for s, e in self._iv:
            if s > cur:
                out.append((cur, min(s, hi)))
            cur = max(cur, e)
        if cur < hi:
            out.append((cur, hi))
        return IntervalSet(out)

    def clip(self, lo: int, hi: int) -> IntervalSet:
        return IntervalSet((max(s, lo), min(e, hi)) for s, e in self._iv)

    def total(self) -> int:
        return sum(e - s for s, e in self._iv)

    def overlaps(self, lo: int, hi: int) -> bool:
        return any(s < hi and e > lo for s, e in self._iv)
