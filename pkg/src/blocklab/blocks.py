"""Block sequences: streams of finite blocks with growing sizes and
separated ranges, plus the depth-bounded ordering check between them.

A verdict from these checks certifies exactly the inspected prefix.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isqrt
from typing import Optional, Sequence

from .errors import DepthExceeded, ExhaustedTable, PreconditionFailed, TableHorizon
from .streams import (
    Budget,
    SetStream,
    _budget,
    blocks_union,
    default_budget,
    s_of,
)


class BlockSeq:
    """Lazy sequence of finite nonempty blocks of naturals."""

    __slots__ = ("_rule", "budget", "name", "_memo")

    def __init__(self, rule, budget: Optional[int] = None, name: str = ""):
        self._rule = rule
        self.budget = budget if budget is not None else default_budget()
        self.name = name or rule.describe()
        self._memo: list[tuple[int, ...]] = []
        rule.bind(self)

    def __repr__(self):
        return f"BlockSeq({self.name})"

    def block(self, n: int, bud: Optional[Budget] = None) -> tuple[int, ...]:
        if n < 0:
            raise ValueError("block index must be a natural")
        bud = _budget(bud, self.budget, f"block on {self.name}")
        direct = self._rule.block_at(n, bud)
        if direct is not None:
            bud.spend()
            if not direct:
                raise PreconditionFailed("block-empty", f"{self.name} produced an empty block")
            return tuple(direct)
        memo = self._memo
        while len(memo) <= n:
            blk = self._rule.produce(bud)
            if not blk:
                raise PreconditionFailed("block-empty", f"{self.name} produced an empty block")
            memo.append(tuple(blk))
        return memo[n]

    def blocks(self, depth: int, bud: Optional[Budget] = None) -> list[tuple[int, ...]]:
        bud = _budget(bud, self.budget, f"blocks on {self.name}")
        if depth > 0:
            self.block(depth - 1, bud)
        return list(self._memo[:depth])

    def first_of(self, n: int, bud: Optional[Budget] = None) -> int:
        """First element of block n, using the rule's shortcut if any."""
        memo = self._memo
        if n < len(memo):
            return memo[n][0]
        fast = self._rule.block_end(n, False)
        if fast is not None:
            return fast
        bud = _budget(bud, self.budget, f"first_of on {self.name}")
        return self.block(n, bud)[0]

    def last_of(self, n: int, bud: Optional[Budget] = None) -> int:
        memo = self._memo
        if n < len(memo):
            return memo[n][-1]
        fast = self._rule.block_end(n, True)
        if fast is not None:
            return fast
        bud = _budget(bud, self.budget, f"last_of on {self.name}")
        return self.block(n, bud)[-1]

    def locate(self, value: int, bud: Optional[Budget] = None) -> Optional[int]:
        """Index of the block containing value, scanning left to right.

        Returns None once a block starts past the value, i.e. the value
        sits in a gap or below the support.
        """
        bud = _budget(bud, self.budget, f"locate on {self.name}")
        n = 0
        while True:
            bud.spend()
            try:
                blk = self.block(n, bud)
            except ExhaustedTable:
                return None
            if value < blk[0]:
                return None
            if value <= blk[-1]:
                return n if value in blk else None
            n += 1

    def support(self, eta: int = 0, budget: Optional[int] = None) -> SetStream:
        return blocks_union(self, eta, budget if budget is not None else self.budget)

    def describe(self) -> dict:
        d = {"kind": self._rule.kind}
        d.update(self._rule.params())
        return d


class _BlockRule:
    kind = "?"

    def bind(self, seq: BlockSeq) -> None:
        self.seq = seq

    def produce(self, bud: Budget) -> Sequence[int]:
        raise NotImplementedError

    def locate_value(self, value: int) -> Optional[int]:
        """Closed-form index of the block containing value; -1 when the
        value is certainly outside the support; None when only a scan
        can answer."""
        return None

    def block_end(self, n: int, last: bool) -> Optional[int]:
        """Closed-form first or last element of block n, if available."""
        return None

    def block_at(self, n: int, bud: Budget) -> Optional[Sequence[int]]:
        """Block n computed directly, without walking earlier blocks;
        None when only sequential production works."""
        return None

    def params(self) -> dict:
        return {}

    def describe(self) -> str:
        return self.kind


class _ScriptedBlocks(_BlockRule):
    kind = "scripted"

    def __init__(self, blocks, total: bool = False):
        self.blocks = [tuple(sorted(b)) for b in blocks]
        self.total = total

    def produce(self, bud: Budget):
        bud.spend()
        i = len(self.seq._memo)
        if i >= len(self.blocks):
            if self.total:
                raise ExhaustedTable(f"finite block table of length {len(self.blocks)}")
            raise TableHorizon(f"block table valid to depth {len(self.blocks)}")
        return self.blocks[i]

    def block_end(self, n: int, last: bool) -> int:
        if n >= len(self.blocks):
            if self.total:
                raise ExhaustedTable(f"finite block table of length {len(self.blocks)}")
            raise TableHorizon(f"block table valid to depth {len(self.blocks)}")
        return self.blocks[n][-1 if last else 0]

    def block_at(self, n: int, bud: Budget) -> Sequence[int]:
        if n >= len(self.blocks):
            if self.total:
                raise ExhaustedTable(f"finite block table of length {len(self.blocks)}")
            raise TableHorizon(f"block table valid to depth {len(self.blocks)}")
        return self.blocks[n]

    def params(self):
        return {"blocks": [list(b) for b in self.blocks], "total": self.total}

    def describe(self):
        return f"scripted[{len(self.blocks)}]"


class _Triangular(_BlockRule):
    """Block n is the n-th run of n+1 consecutive naturals from an offset."""

    kind = "triangular"

    def __init__(self, offset: int = 0):
        self.offset = offset

    def produce(self, bud: Budget):
        bud.spend()
        n = len(self.seq._memo)
        return tuple(range(self.offset + s_of(n), self.offset + s_of(n + 1)))

    def locate_value(self, value: int) -> int:
        if value < self.offset:
            return -1
        u = value - self.offset
        return (isqrt(8 * u + 1) - 1) // 2

    def block_end(self, n: int, last: bool) -> int:
        return self.offset + (s_of(n + 1) - 1 if last else s_of(n))

    def block_at(self, n: int, bud: Budget) -> Sequence[int]:
        return range(self.offset + s_of(n), self.offset + s_of(n + 1))

    def params(self):
        return {"offset": self.offset}

    def describe(self):
        return "triangular" if not self.offset else f"triangular+{self.offset}"


class _FromStream(_BlockRule):
    """Consecutive runs of n+1 elements cut from an increasing stream."""

    kind = "from-stream"

    def __init__(self, source: SetStream):
        self.source = source

    def produce(self, bud: Budget):
        n = len(self.seq._memo)
        lo, hi = s_of(n), s_of(n + 1)
        out = []
        for i in range(lo, hi):
            bud.spend()
            out.append(self.source.nth(i, bud))
        return out

    def block_end(self, n: int, last: bool) -> Optional[int]:
        i = s_of(n + 1) - 1 if last else s_of(n)
        return self.source._rule.value_at(i)

    def block_at(self, n: int, bud: Budget) -> Sequence[int]:
        return [self.source.nth(i, bud) for i in range(s_of(n), s_of(n + 1))]

    def params(self):
        return {"source": self.source.name}


class _Thin(_BlockRule):
    """Block n is the picker(n)-th block of the base sequence."""

    kind = "thin"

    def __init__(self, base: BlockSeq, picker: SetStream):
        self.base, self.picker = base, picker

    def produce(self, bud: Budget):
        bud.spend()
        n = len(self.seq._memo)
        return self.base.block(self.picker.nth(n, bud), bud)

    def block_end(self, n: int, last: bool) -> Optional[int]:
        i = self.picker._rule.value_at(n)
        if i is None:
            return None
        return self.base.last_of(i) if last else self.base.first_of(i)

    def block_at(self, n: int, bud: Budget) -> Sequence[int]:
        return self.base.block(self.picker.nth(n, bud), bud)

    def params(self):
        return {"base": self.base.name, "picker": self.picker.name}


class _SubSelect(_BlockRule):
    """Least n+1 elements of the picker(n)-th block of the base."""

    kind = "subselect"

    def __init__(self, base: BlockSeq, picker: SetStream):
        self.base, self.picker = base, picker

    def produce(self, bud: Budget):
        bud.spend()
        return self.block_at(len(self.seq._memo), bud)

    def block_at(self, n: int, bud: Budget) -> Sequence[int]:
        blk = self.base.block(self.picker.nth(n, bud), bud)
        if len(blk) < n + 1:
            raise PreconditionFailed(
                "subselect-size", f"block of size {len(blk)} cannot yield {n + 1} elements"
            )
        return blk[: n + 1]

    def params(self):
        return {"base": self.base.name, "picker": self.picker.name}


def scripted_blocks(blocks, budget: Optional[int] = None, name: str = "", total: bool = False) -> BlockSeq:
    return BlockSeq(_ScriptedBlocks(blocks, total), budget, name)


def triangular(offset: int = 0, budget: Optional[int] = None, name: str = "") -> BlockSeq:
    return BlockSeq(_Triangular(offset), budget, name)


def blocks_from_stream(source: SetStream, budget: Optional[int] = None, name: str = "") -> BlockSeq:
    return BlockSeq(_FromStream(source), budget, name or f"blocks({source.name})")


def thin(base: BlockSeq, picker: SetStream, budget: Optional[int] = None, name: str = "") -> BlockSeq:
    return BlockSeq(_Thin(base, picker), budget, name or f"{base.name}@{picker.name}")


def subselect(base: BlockSeq, picker: SetStream, budget: Optional[int] = None, name: str = "") -> BlockSeq:
    return BlockSeq(_SubSelect(base, picker), budget, name or f"{base.name}^@{picker.name}")


def sset(c: BlockSeq, eta: int = 0, budget: Optional[int] = None) -> SetStream:
    """Union of the blocks of c from index eta on, as an increasing stream."""
    return c.support(eta, budget)


# -- checks ---------------------------------------------------------------


@dataclass(frozen=True)
class BlockSeqVerdict:
    ok: bool
    fail_index: Optional[int] = None
    clause: Optional[str] = None  # "size" or "separation"

    def __bool__(self):
        return self.ok


def block_seq_check(c: BlockSeq, depth: int, bud: Optional[Budget] = None) -> BlockSeqVerdict:
    """Verify growing sizes and separated ranges for the first depth blocks.

    Reports the least violating index and which clause broke.
    """
    bud = _budget(bud, c.budget, f"block check on {c.name}")
    prev: Optional[tuple[int, ...]] = None
    for n in range(depth):
        blk = c.block(n, bud)
        if prev is not None:
            if len(prev) >= len(blk):
                return BlockSeqVerdict(False, n - 1, "size")
            if prev[-1] >= blk[0]:
                return BlockSeqVerdict(False, n - 1, "separation")
        prev = blk
    return BlockSeqVerdict(True)


@dataclass(frozen=True)
class LeVerdict:
    """Outcome of the depth-bounded block embedding check.

    A true verdict certifies only the inspected prefix.  A false verdict
    is definite: some block either spans two target blocks or misses the
    target support entirely.
    """

    ok: bool
    l: int
    depth: int
    witness: tuple[tuple[int, int], ...] = ()
    fail_at: Optional[int] = None
    reason: str = ""

    def __bool__(self):
        return self.ok

    def witness_for(self, m: int) -> Optional[int]:
        for a, b in self.witness:
            if a == m:
                return b
        return None


def le_at(c: BlockSeq, d: BlockSeq, l: int, depth: int, bud: Optional[Budget] = None) -> LeVerdict:
    """Check that every block c(m), l <= m < depth, embeds in some d(n), n >= m.

    The witness maps each checked m to its target n.  Blocks are disjoint,
    so the containing block is unique: a miss is a definite failure, while
    running out of budget during the scan raises DepthExceeded.
    """
    bud = _budget(bud, max(c.budget, d.budget), f"le_at {c.name} <= {d.name}")
    witness = []
    dn = 0  # target blocks are separated, so the scan never moves left
    for m in range(l, depth):
        blk = c.block(m, bud)
        lo = blk[0]
        while True:
            bud.spend()
            if lo < d.first_of(dn, bud):
                return LeVerdict(False, l, depth, tuple(witness), m, "gap: block misses the target support")
            if lo <= d.last_of(dn, bud):
                break
            dn += 1
        if not set(blk) <= set(d.block(dn, bud)):
            return LeVerdict(False, l, depth, tuple(witness), m, "span: block not inside one target block")
        if dn < m:
            return LeVerdict(False, l, depth, tuple(witness), m, f"low: target index {dn} < {m}")
        witness.append((m, dn))
    return LeVerdict(True, l, depth, tuple(witness))


def le_some(c: BlockSeq, d: BlockSeq, depth: int, bud: Optional[Budget] = None) -> LeVerdict:
    """Find the least threshold l < depth with c <=_l d on the prefix.

    Embedding failures must stop: the verdict is false if the last checked
    block still fails.
    """
    bud = _budget(bud, max(c.budget, d.budget), f"le_some {c.name} <= {d.name}")
    last_bad = -1
    witness = []
    dn = 0
    reason = ""
    for m in range(depth):
        blk = c.block(m, bud)
        lo = blk[0]
        ok_here = True
        while True:
            bud.spend()
            if lo < d.first_of(dn, bud):
                ok_here, reason = False, "gap"
                break
            if lo <= d.last_of(dn, bud):
                break
            dn += 1
        if ok_here and not set(blk) <= set(d.block(dn, bud)):
            ok_here, reason = False, "span"
        if ok_here and dn < m:
            ok_here, reason = False, "low"
        if ok_here:
            witness.append((m, dn))
        else:
            last_bad = m
            witness = []
    if last_bad == depth - 1:
        return LeVerdict(False, 0, depth, (), last_bad, reason or "no embedding level found")
    return LeVerdict(True, last_bad + 1, depth, tuple(witness))


def min_ge_index_holds(c: BlockSeq, depth: int, bud: Optional[Budget] = None) -> Optional[int]:
    """Return the least n < depth with min(c(n)) < n, or None if none."""
    bud = _budget(bud, c.budget, f"floor check on {c.name}")
    for n in range(depth):
        if c.block(n, bud)[0] < n:
            return n
    return None
