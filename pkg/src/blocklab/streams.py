"""Budgeted lazy streams over strictly increasing sets of naturals.

A SetStream describes an infinite subset of the naturals by a materialized
prefix plus a tail rule from a small closed language.  Every query carries
a budget counted in elementary steps; a query either answers exactly or
raises DepthExceeded.  Streams are immutable once built and queries are
stable: the n-th element never changes between calls.

All arithmetic is exact; values may grow without bound and scans are
always index-bounded, never value-bounded.
"""

from __future__ import annotations

import os
from bisect import bisect_left
from typing import Iterable, Optional, Sequence

from .errors import DepthExceeded, ExhaustedTable, PreconditionFailed, TableHorizon

_ENV_BUDGET = "BLOCKLAB_BUDGET"
_FALLBACK_BUDGET = 500_000


_active_default: Optional[int] = None


def default_budget() -> int:
    global _active_default
    if _active_default is None:
        _active_default = _FALLBACK_BUDGET
        raw = os.environ.get(_ENV_BUDGET)
        if raw:
            try:
                _active_default = max(1, int(raw))
            except ValueError:
                pass
    return _active_default


def set_default_budget(limit: Optional[int]) -> None:
    """Override the per-query step allowance (None re-reads the environment)."""
    global _active_default
    _active_default = limit if limit is None else max(1, int(limit))


class Budget:
    """Step allowance for one query; exhausting it raises DepthExceeded."""

    __slots__ = ("left", "label")

    def __init__(self, limit: int, label: str = ""):
        self.left = int(limit)
        self.label = label

    def spend(self, n: int = 1) -> None:
        self.left -= n
        if self.left < 0:
            raise DepthExceeded(self.label or "budget exhausted")

    def sub(self, label: str) -> "Budget":
        # shared counter, refined label for error reporting
        b = Budget.__new__(Budget)
        b.left = self.left
        b.label = label
        return b


def _budget(bud: Optional[Budget], limit: int, label: str) -> Budget:
    return bud if bud is not None else Budget(limit, label)


def s_of(m: int) -> int:
    """Triangular index: the first position of the m-th size-(m+1) group."""
    return m * (m + 1) // 2


def t_of(m: int) -> int:
    """Total size of the m-th group of triangular slots."""
    return sum(k + 1 for k in range(s_of(m), s_of(m + 1)))


def s_t_eval(m: int) -> tuple[int, int]:
    if m < 0:
        raise ValueError("index must be a natural")
    return s_of(m), t_of(m)


def group_of(n: int) -> int:
    """The m with s(m) <= n < s(m+1)."""
    m = 0
    while s_of(m + 1) <= n:
        m += 1
    return m


class SetStream:
    """Strictly increasing stream of naturals with a budgeted tail rule."""

    __slots__ = ("_rule", "budget", "name", "_memo")

    def __init__(self, rule: "_Rule", budget: Optional[int] = None, name: str = ""):
        self._rule = rule
        self.budget = budget if budget is not None else default_budget()
        self.name = name or rule.describe()
        self._memo: list[int] = []
        rule.bind(self)

    def __repr__(self):
        return f"SetStream({self.name})"

    # -- queries ------------------------------------------------------

    def nth(self, n: int, bud: Optional[Budget] = None) -> int:
        if n < 0:
            raise ValueError("stream index must be a natural")
        bud = _budget(bud, self.budget, f"nth on {self.name}")
        direct = self._rule.value_at(n)
        if direct is not None:
            bud.spend()
            return direct
        memo = self._memo
        while len(memo) <= n:
            nxt = self._rule.produce(bud)
            if memo and nxt <= memo[-1]:
                raise PreconditionFailed(
                    "stream-order", f"{self.name} produced {nxt} after {memo[-1]}"
                )
            memo.append(nxt)
        return memo[n]

    def prefix(self, depth: int, bud: Optional[Budget] = None) -> tuple[int, ...]:
        bud = _budget(bud, self.budget, f"prefix on {self.name}")
        return tuple(self.nth(i, bud) for i in range(depth))

    def contains(self, value: int, bud: Optional[Budget] = None) -> bool:
        """Exact membership; decidable because the stream is increasing."""
        return self.index_of(value, bud) is not None

    def index_of(self, value: int, bud: Optional[Budget] = None) -> Optional[int]:
        bud = _budget(bud, self.budget, f"membership on {self.name}")
        try:
            i, x = self.seek_ge(value, bud)
        except ExhaustedTable:
            return None
        return i if x == value else None

    def seek_ge(self, value: int, bud: Optional[Budget] = None) -> tuple[int, int]:
        """Least index whose element is >= value, with that element.

        Uses the rule's closed form when it has one, otherwise scans.
        """
        bud = _budget(bud, self.budget, f"seek on {self.name}")
        jump = self._rule.seek_index_ge(value)
        if jump is not None:
            bud.spend()
            return jump, self.nth(jump, bud)
        memo = self._memo
        if memo and memo[-1] >= value:
            i = bisect_left(memo, value)
            return i, memo[i]
        i = len(memo)
        while True:
            x = self.nth(i, bud)
            if x >= value:
                return i, x
            i += 1

    def known_prefix(self) -> tuple[int, ...]:
        return tuple(self._memo)

    # -- derived streams ----------------------------------------------

    def tail(self, start: int, name: str = "") -> "SetStream":
        return SetStream(_Tail(self, start), self.budget, name or f"{self.name}[{start}]")

    def describe(self) -> dict:
        d = {"kind": self._rule.kind}
        d.update(self._rule.params())
        return d


class _Rule:
    kind = "?"

    def bind(self, stream: SetStream) -> None:
        self.stream = stream

    def produce(self, bud: Budget) -> int:
        raise NotImplementedError

    def value_at(self, n: int) -> Optional[int]:
        """Closed-form n-th element, or None when only scanning works."""
        return None

    def seek_index_ge(self, value: int) -> Optional[int]:
        """Closed-form least index with element >= value, or None."""
        return None

    def params(self) -> dict:
        return {}

    def describe(self) -> str:
        return self.kind


class _Arithmetic(_Rule):
    kind = "arithmetic"

    def __init__(self, start: int, step: int):
        if step <= 0:
            raise ValueError("step must be positive")
        self.start, self.step = start, step

    def value_at(self, n: int) -> int:
        return self.start + n * self.step

    def seek_index_ge(self, value: int) -> int:
        if value <= self.start:
            return 0
        return -((self.start - value) // self.step)

    def params(self):
        return {"start": self.start, "step": self.step}

    def describe(self):
        return f"arith({self.start},+{self.step})"


class _Periodic(_Rule):
    """start, then increments cycling through a fixed positive pattern."""

    kind = "periodic"

    def __init__(self, start: int, diffs: Sequence[int]):
        if not diffs or any(d <= 0 for d in diffs):
            raise ValueError("pattern must be nonempty and positive")
        self.start = start
        self.diffs = tuple(diffs)
        self._psum = [0]
        for d in self.diffs:
            self._psum.append(self._psum[-1] + d)

    def value_at(self, n: int) -> int:
        q, r = divmod(n, len(self.diffs))
        return self.start + q * self._psum[-1] + self._psum[r]

    def seek_index_ge(self, value: int) -> int:
        if value <= self.start:
            return 0
        period = self._psum[-1]
        q = max(0, (value - self.start - self._psum[-1]) // period)
        n = q * len(self.diffs)
        while self.value_at(n) < value:
            n += 1
        return n

    def params(self):
        return {"start": self.start, "pattern": list(self.diffs)}

    def describe(self):
        return f"periodic({self.start},{self.diffs})"


class _Scripted(_Rule):
    """Explicit table; knowledge stops at its declared depth."""

    kind = "scripted"

    def __init__(self, values: Iterable[int], total: bool = False):
        vals = list(values)
        for a, b in zip(vals, vals[1:]):
            if b <= a:
                raise ValueError("scripted table must be strictly increasing")
        if vals and vals[0] < 0:
            raise ValueError("naturals only")
        self.values = vals
        self.total = total

    def _past_end(self):
        if self.total:
            return ExhaustedTable(f"finite table of length {len(self.values)}")
        return TableHorizon(f"scripted table valid to depth {len(self.values)}")

    def value_at(self, n: int) -> int:
        if n >= len(self.values):
            raise self._past_end()
        return self.values[n]

    def seek_index_ge(self, value: int) -> int:
        i = bisect_left(self.values, value)
        if i == len(self.values):
            raise self._past_end()
        return i

    def produce(self, bud: Budget) -> int:
        raise AssertionError("scripted rule answers by closed form")

    def params(self):
        return {"values": list(self.values), "total": self.total}

    def describe(self):
        return f"scripted[{len(self.values)}]"


class _Tail(_Rule):
    kind = "tail"

    def __init__(self, source: SetStream, start: int):
        self.source, self.start = source, start

    def produce(self, bud: Budget) -> int:
        bud.spend()
        return self.source.nth(self.start + len(self.stream._memo), bud)

    def params(self):
        return {"source": self.source.name, "start": self.start}


class _Image(_Rule):
    """Sorted image of a stream under a map.

    Every scanned source element must lie in the map's support: images in
    this package are always taken past a verified embedding threshold, so
    an off-support element is a definition error, not data.
    """

    kind = "image"

    def __init__(self, source: SetStream, mapping):
        self.source, self.mapping = source, mapping
        self._cursor = 0

    def produce(self, bud: Budget) -> int:
        memo = self.stream._memo
        last = memo[-1] if memo else -1
        while True:
            bud.spend()
            x = self.source.nth(self._cursor, bud)
            v, on_support = self.mapping.apply_on_support(x, bud)
            if not on_support:
                raise PreconditionFailed(
                    "image-support",
                    f"{x} outside the base support while enumerating {self.stream.name}",
                )
            self._cursor += 1
            if v > last:
                return v
            if v < last:
                raise PreconditionFailed(
                    "image-order",
                    f"value {v} after {last} while enumerating {self.stream.name}",
                )

    def params(self):
        return {"source": self.source.name, "map": getattr(self.mapping, "name", "?")}


class _Preimage(_Rule):
    """Elements of a base support whose map value lands in a target set."""

    kind = "preimage"

    def __init__(self, target: SetStream, mapping, base):
        self.target, self.mapping, self.base = target, mapping, base
        self._block = 0
        self._pos = 0

    def produce(self, bud: Budget) -> int:
        while True:
            bud.spend()
            blk = self.base.block(self._block, bud)
            if self._pos >= len(blk):
                self._block += 1
                self._pos = 0
                continue
            k = blk[self._pos]
            self._pos += 1
            if self.target.contains(self.mapping.apply(k, bud), bud):
                return k

    def params(self):
        return {
            "target": self.target.name,
            "map": getattr(self.mapping, "name", "?"),
            "base": getattr(self.base, "name", "?"),
        }


class _Merge(_Rule):
    """Intersection or union of two streams by synchronized scan."""

    def __init__(self, a: SetStream, b: SetStream, want_union: bool):
        self.a, self.b = a, b
        self.union = want_union
        self._ia = 0
        self._ib = 0
        self._a_done = False
        self._b_done = False

    @property
    def kind(self):
        return "union" if self.union else "intersection"

    def _pull(self, which: str, bud: Budget) -> Optional[int]:
        try:
            if which == "a":
                return self.a.nth(self._ia, bud)
            return self.b.nth(self._ib, bud)
        except ExhaustedTable:
            if not self.union:
                raise
            if which == "a":
                self._a_done = True
            else:
                self._b_done = True
            return None

    def produce(self, bud: Budget) -> int:
        while True:
            bud.spend()
            x = None if self._a_done else self._pull("a", bud)
            y = None if self._b_done else self._pull("b", bud)
            if self.union:
                if x is None and y is None:
                    raise ExhaustedTable("both union sides finished")
                if y is None or (x is not None and x < y):
                    self._ia += 1
                    return x
                if x is None or y < x:
                    self._ib += 1
                    return y
                self._ia += 1
                self._ib += 1
                return x
            if x == y:
                self._ia += 1
                self._ib += 1
                return x
            # leapfrog the lagging side to the other's value
            if x < y:
                self._ia = self.a.seek_ge(y, bud)[0]
            else:
                self._ib = self.b.seek_ge(x, bud)[0]

    def params(self):
        return {"a": self.a.name, "b": self.b.name}


class _BlocksUnion(_Rule):
    """Union of the blocks of a block sequence from a starting index."""

    kind = "blocks"

    def __init__(self, seq, eta: int):
        self.seq, self.eta = seq, eta
        self._block = eta
        self._pos = 0

    def produce(self, bud: Budget) -> int:
        while True:
            bud.spend()
            blk = self.seq.block(self._block, bud)
            if self._pos >= len(blk):
                self._block += 1
                self._pos = 0
                continue
            v = blk[self._pos]
            self._pos += 1
            return v

    def params(self):
        return {"seq": getattr(self.seq, "name", "?"), "eta": self.eta}


# -- public constructors ------------------------------------------------


def arithmetic(start: int, step: int, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Arithmetic(start, step), budget, name)


def naturals(budget: Optional[int] = None) -> SetStream:
    return arithmetic(0, 1, budget, "omega")


def evens(budget: Optional[int] = None) -> SetStream:
    return arithmetic(0, 2, budget, "evens")


def periodic(start: int, diffs: Sequence[int], budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Periodic(start, diffs), budget, name)


def scripted(values: Iterable[int], budget: Optional[int] = None, name: str = "", total: bool = False) -> SetStream:
    return SetStream(_Scripted(values, total), budget, name)


def image(source: SetStream, mapping, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Image(source, mapping), budget, name)


def preimage(target: SetStream, mapping, base, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Preimage(target, mapping, base), budget, name)


def intersect(a: SetStream, b: SetStream, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Merge(a, b, want_union=False), budget, name or f"({a.name}&{b.name})")


def union(a: SetStream, b: SetStream, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Merge(a, b, want_union=True), budget, name or f"({a.name}|{b.name})")


def blocks_union(seq, eta: int = 0, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_BlocksUnion(seq, eta), budget, name or f"set({getattr(seq, 'name', '?')})<{eta}>")


def from_indices(source: SetStream, picker: SetStream, budget: Optional[int] = None, name: str = "") -> SetStream:
    """Subselect source by an increasing stream of indices."""
    return SetStream(_IndexSelect(source, picker), budget, name or f"{source.name}@{picker.name}")


class _IndexSelect(_Rule):
    kind = "select"

    def __init__(self, source: SetStream, picker: SetStream):
        self.source, self.picker = source, picker

    def produce(self, bud: Budget) -> int:
        bud.spend()
        n = len(self.stream._memo)
        return self.source.nth(self.picker.nth(n, bud), bud)

    def params(self):
        return {"source": self.source.name, "picker": self.picker.name}


class _BlockImage(_Rule):
    """Values of a map that is constant on the blocks of a sequence,
    enumerated blockwise from a starting index.

    Correct exactly when the map is constant on every scanned block; the
    first and last element of each block are checked to agree, which the
    embedding preconditions of the calling engines make sufficient.
    """

    kind = "block-image"

    def __init__(self, seq, mapping, eta: int):
        self.seq, self.mapping, self.eta = seq, mapping, eta
        self._block = eta

    def produce(self, bud: Budget) -> int:
        memo = self.stream._memo
        last = memo[-1] if memo else -1
        while True:
            bud.spend()
            lo = self.seq.first_of(self._block, bud)
            hi = self.seq.last_of(self._block, bud)
            v = self.mapping.apply(lo, bud)
            if self.mapping.apply(hi, bud) != v:
                raise PreconditionFailed(
                    "block-image", f"map not constant on block {self._block}")
            self._block += 1
            if v > last:
                return v
            if v < last:
                raise PreconditionFailed(
                    "image-order", f"value {v} after {last} in {self.stream.name}")

    def params(self):
        return {"seq": getattr(self.seq, "name", "?"),
                "map": getattr(self.mapping, "name", "?"), "eta": self.eta}


def block_image(seq, mapping, eta: int = 0, budget: Optional[int] = None,
                name: str = "") -> SetStream:
    return SetStream(_BlockImage(seq, mapping, eta), budget,
                     name or f"img({getattr(seq, 'name', '?')})<{eta}>")


class _Formula(_Rule):
    """Engine-internal closed form; the callable must be strictly
    increasing, which construction sites guarantee."""

    kind = "formula"

    def __init__(self, fn, label: str = "formula"):
        self.fn = fn
        self.label = label

    def value_at(self, n: int) -> int:
        return self.fn(n)

    def params(self):
        return {"label": self.label}

    def describe(self):
        return self.label


def formula_stream(fn, budget: Optional[int] = None, name: str = "") -> SetStream:
    return SetStream(_Formula(fn, name or "formula"), budget, name)


# -- rapidity -------------------------------------------------------------


def rapid_witness_check(x: SetStream, z: SetStream, f, depth: int, budget: Optional[int] = None):
    """Check the thinning schedule on the intersection of two streams.

    Builds y = x `intersect` z to the requested depth and verifies
    y(n) >= f(n) pointwise.  The intersection is not certified infinite:
    running out of budget before depth elements appear is DepthExceeded.
    """
    y = intersect(x, z, budget if budget is not None else max(x.budget, z.budget))
    bud = Budget(y.budget, f"rapidity of {y.name}")
    for n in range(depth):
        v = y.nth(n, bud)
        if v < f(n):
            return RapidVerdict(False, n, v, f(n), y.prefix(n + 1, bud))
    return RapidVerdict(True, None, None, None, y.prefix(depth, bud))


class RapidVerdict:
    __slots__ = ("ok", "fail_at", "got", "need", "prefix")

    def __init__(self, ok, fail_at, got, need, prefix):
        self.ok = ok
        self.fail_at = fail_at
        self.got = got
        self.need = need
        self.prefix = prefix

    def __bool__(self):
        return self.ok

    def __repr__(self):
        if self.ok:
            return "RapidVerdict(ok)"
        return f"RapidVerdict(fail n={self.fail_at} got={self.got} need={self.need})"
