"""Maps on the naturals that are constant on the blocks of a base
sequence, together with normal-triple verification and the fiber-block
analysis used by the construction engines.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional

from .errors import DepthExceeded, PreconditionFailed
from .blocks import BlockSeq, LeVerdict, le_at
from .streams import Budget, SetStream, _budget, default_budget


class ValueSeq:
    """Lazy nondecreasing sequence of naturals (the value stream of a map)."""

    __slots__ = ("kind", "_data", "name")

    def __init__(self, kind: str, data, name: str = ""):
        self.kind = kind
        self._data = data
        self.name = name or kind

    @staticmethod
    def identity() -> "ValueSeq":
        return ValueSeq("identity", None, "id")

    @staticmethod
    def scripted(values, tail_increment: bool = False, name: str = "") -> "ValueSeq":
        vals = list(values)
        return ValueSeq("scripted", (vals, tail_increment), name or f"vals[{len(vals)}]")

    @staticmethod
    def from_stream(src: SetStream, name: str = "") -> "ValueSeq":
        return ValueSeq("stream", src, name or src.name)

    @staticmethod
    def affine(scale: int, shift: int, name: str = "") -> "ValueSeq":
        return ValueSeq("affine", (scale, shift), name or f"{scale}l+{shift}")

    @staticmethod
    def mapped(inner: "ValueSeq", mapping, name: str = "") -> "ValueSeq":
        """Values of another sequence pushed through a map; stays
        nondecreasing when the map is."""
        return ValueSeq("mapped", (inner, mapping), name or f"map({inner.name})")

    @staticmethod
    def formula(fn, name: str = "values") -> "ValueSeq":
        """Engine-internal closed form; must be nondecreasing."""
        return ValueSeq("formula", fn, name)

    def at(self, l: int, bud: Optional[Budget] = None) -> int:
        if self.kind == "identity":
            return l
        if self.kind == "affine":
            a, b = self._data
            return a * l + b
        if self.kind == "mapped":
            inner, mapping = self._data
            return mapping.apply(inner.at(l, bud), bud)
        if self.kind == "formula":
            return self._data(l)
        if self.kind == "stream":
            return self._data.nth(l, bud)
        vals, tail = self._data
        if l < len(vals):
            return vals[l]
        if tail and vals:
            # strictly increasing continuation keeps the sequence total
            return vals[-1] + (l - len(vals) + 1)
        raise DepthExceeded(f"value table {self.name} valid to depth {len(vals)}")

    def describe(self) -> dict:
        if self.kind == "scripted":
            vals, tail = self._data
            return {"kind": "scripted", "values": list(vals), "tail_increment": tail}
        if self.kind == "affine":
            return {"kind": "affine", "scale": self._data[0], "shift": self._data[1]}
        if self.kind == "stream":
            return {"kind": "stream", "source": self._data.name}
        if self.kind == "mapped":
            return {"kind": "mapped", "inner": self._data[0].describe()}
        if self.kind == "formula":
            return {"kind": "formula", "name": self.name}
        return {"kind": "identity"}


class Map:
    """A function on the naturals from the closed map language.

    Variants: constant on the blocks of a base sequence with a value
    stream (zero off the support), the identity, a finite tabulation,
    and lazy composition.
    """

    __slots__ = ("kind", "base", "values", "table", "inner", "outer", "name", "_spans")

    def __init__(self, kind: str, name: str = "", base: Optional[BlockSeq] = None,
                 values: Optional[ValueSeq] = None, table=None, outer=None, inner=None):
        self.kind = kind
        self.base = base
        self.values = values
        self.table = table
        self.outer = outer
        self.inner = inner
        self.name = name
        # scanned block spans for O(log n) support lookup: (lo, hi, index)
        self._spans: list[tuple[int, int, int]] = []

    @staticmethod
    def identity() -> "Map":
        return Map("identity", "id")

    @staticmethod
    def block(base: BlockSeq, values: ValueSeq, name: str = "") -> "Map":
        return Map("block", name or f"map({base.name};{values.name})", base=base, values=values)

    @staticmethod
    def block_index(base: BlockSeq, name: str = "") -> "Map":
        """The canonical map sending members of block n to n."""
        return Map.block(base, ValueSeq.identity(), name or f"idx({base.name})")

    @staticmethod
    def tabulated(table, name: str = "") -> "Map":
        return Map("table", name or f"table[{len(table)}]", table=list(table))

    @staticmethod
    def formula(fn, name: str = "formula") -> "Map":
        """Engine-internal total map given by a callable; generators use
        this for projection plumbing, the scenario language does not."""
        return Map("formula", name, table=fn)

    @staticmethod
    def compose(outer: "Map", inner: "Map", name: str = "") -> "Map":
        return Map("compose", name or f"({outer.name}o{inner.name})", outer=outer, inner=inner)

    def __repr__(self):
        return f"Map({self.name})"

    def apply(self, k: int, bud: Optional[Budget] = None) -> int:
        return self.apply_on_support(k, bud)[0]

    def apply_on_support(self, k: int, bud: Optional[Budget] = None) -> tuple[int, bool]:
        """Value at k and whether k avoided every off-support zero rule."""
        if self.kind == "identity":
            return k, True
        if self.kind == "formula":
            return self.table(k), True
        if self.kind == "table":
            if k < len(self.table):
                return self.table[k], True
            raise DepthExceeded(f"tabulated map {self.name} valid below {len(self.table)}")
        if self.kind == "compose":
            bud = _budget(bud, default_budget(), f"apply {self.name}")
            v, on1 = self.inner.apply_on_support(k, bud)
            w, on2 = self.outer.apply_on_support(v, bud)
            return w, on1 and on2
        bud = _budget(bud, self.base.budget, f"apply {self.name}")
        idx = self._locate(k, bud)
        if idx is None:
            return 0, False
        return self.values.at(idx, bud), True

    def _locate(self, k: int, bud: Budget) -> Optional[int]:
        fast = self.base._rule.locate_value(k)
        if fast is not None:
            return None if fast < 0 else fast
        spans = self._spans
        if spans and k <= spans[-1][1]:
            i = bisect_right(spans, (k + 1,)) - 1
            if i >= 0 and spans[i][0] <= k <= spans[i][1]:
                blk = self.base.block(spans[i][2], bud)
                return spans[i][2] if k in blk else None
            return None
        n = spans[-1][2] + 1 if spans else 0
        while True:
            bud.spend()
            blk = self.base.block(n, bud)
            spans.append((blk[0], blk[-1], n))
            if k < blk[0]:
                return None
            if k <= blk[-1]:
                return n if k in blk else None
            n += 1

    def describe(self) -> dict:
        if self.kind == "block":
            return {"kind": "block", "base": self.base.name, "values": self.values.describe()}
        if self.kind == "table":
            return {"kind": "table", "values": list(self.table)}
        if self.kind == "compose":
            return {"kind": "compose", "outer": self.outer.describe(), "inner": self.inner.describe()}
        if self.kind == "formula":
            return {"kind": "formula", "name": self.name}
        return {"kind": "identity"}


@dataclass(frozen=True)
class NormalTriple:
    """A map, its value stream, and the base on whose blocks it is constant.

    range_window declares how far one must look along the value stream to
    see it strictly grow; the infinite-range requirement is certified as
    growth within every such window of the inspected prefix.
    """

    pi: Map
    psi: ValueSeq
    c: BlockSeq
    range_window: int = 8


@dataclass(frozen=True)
class NormalVerdict:
    ok: bool
    clause: Optional[str] = None  # block-constancy | monotone | range | off-support
    at: Optional[int] = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def normal_check(t: NormalTriple, depth: int, bud: Optional[Budget] = None) -> NormalVerdict:
    """Verify the normal-triple clauses on the first depth blocks.

    Checks block constancy against the value stream, monotonicity of the
    values, strict range growth within the declared window, and zero off
    the support (sampled on the gaps between scanned blocks).
    """
    bud = _budget(bud, t.c.budget, f"normal check ({t.pi.name},{t.psi.name},{t.c.name})")
    psi_vals = []
    for l in range(depth):
        blk = t.c.block(l, bud)
        want = t.psi.at(l, bud)
        psi_vals.append(want)
        for k in blk:
            bud.spend()
            got = t.pi.apply(k, bud)
            if got != want:
                return NormalVerdict(False, "block-constancy", l, f"pi({k})={got} != psi({l})={want}")
    for l in range(depth - 1):
        if psi_vals[l] > psi_vals[l + 1]:
            return NormalVerdict(False, "monotone", l, f"psi({l})={psi_vals[l]} > psi({l + 1})={psi_vals[l + 1]}")
    w = max(1, t.range_window)
    for l in range(depth - w):
        if psi_vals[l] >= psi_vals[l + w]:
            return NormalVerdict(False, "range", l, f"no growth across window [{l},{l + w}]")
    # gaps between consecutive blocks: ends and midpoint are enough to
    # catch a map that leaks outside its support
    prev_end: Optional[int] = None
    for l in range(depth):
        blk = t.c.block(l, bud)
        lo = prev_end + 1 if prev_end is not None else 0
        for k in _gap_samples(lo, blk[0] - 1):
            bud.spend()
            got = t.pi.apply(k, bud)
            if got != 0:
                return NormalVerdict(False, "off-support", k, f"pi({k})={got} != 0")
        prev_end = blk[-1]
        for x, y in zip(blk, blk[1:]):
            for k in _gap_samples(x + 1, y - 1):
                bud.spend()
                got = t.pi.apply(k, bud)
                if got != 0:
                    return NormalVerdict(False, "off-support", k, f"pi({k})={got} != 0")
    return NormalVerdict(True)


def _gap_samples(lo: int, hi: int):
    # endpoints and midpoint only: gaps may be astronomically wide
    if hi < lo:
        return []
    mid = (lo + hi) // 2
    return sorted({lo, mid, hi})


def eventual_monotone_bound(t: NormalTriple, d: BlockSeq, l: Optional[int], depth: int,
                            bud: Optional[Budget] = None) -> int:
    """Threshold past which the map is monotone on the support of d.

    Requires d <=_l c on the inspected prefix; passing l as None lets the
    least such level be found first.  The bound comes from the embedding
    witness, not from a search: from block l on, every block of d sits
    inside a block of the base, so values are ordered by block position;
    only the finitely many earlier points can break it.
    """
    bud = _budget(bud, max(d.budget, t.c.budget), "monotone bound")
    if l is None:
        from .blocks import le_some

        found = le_some(d, t.c, depth, bud)
        if not found.ok:
            raise PreconditionFailed("le-failed", f"no embedding level: {found.reason}")
        l = found.l
    emb = le_at(d, t.c, l, depth, bud)
    if not emb:
        raise PreconditionFailed("le-failed", f"d !<=_{l} c at block {emb.fail_at}: {emb.reason}")
    n0 = 0 if l == 0 else d.block(l, bud)[0]
    # re-check literally on the certified range
    last = None
    for m in range(depth):
        for k in d.block(m, bud):
            if k < n0:
                continue
            bud.spend()
            v = t.pi.apply(k, bud)
            if last is not None and v < last:
                raise PreconditionFailed("monotone-bound", f"pi not monotone at {k} despite bound {n0}")
            last = v
    return n0


@dataclass(frozen=True)
class FiberBlocks:
    """Per-value fibers: for each target value, the block indices of c
    mapping onto exactly that value, with their extremes."""

    n0: int
    fibers: tuple[tuple[int, ...], ...]

    def max_of(self, n: int) -> int:
        return self.fibers[n][-1]

    def min_beyond(self, n: int) -> int:
        for m in self.fibers[n]:
            if m >= self.n0:
                return m
        raise PreconditionFailed("fiber-empty", f"fiber {n} has no index past {self.n0}")


def fiber_blocks(t: NormalTriple, a: SetStream, c: BlockSeq, n0: int, depth: int,
                 bud: Optional[Budget] = None,
                 precheck: bool = True) -> FiberBlocks:
    """Fibers of the target values a(n) under the map, over the blocks of c.

    Requires c <=_{n0} b on the inspected prefix and every a(n) to be a
    value the map takes on the support of c past n0.  The interleaving
    max(F_n) < min(F_{n+1} minus n0) <= max(F_{n+1}) is re-checked, not
    assumed.
    """
    bud = _budget(bud, max(c.budget, t.c.budget), "fiber blocks")
    if precheck:
        emb = le_at(c, t.c, n0, max(n0 + 1, depth), bud)
        if not emb:
            raise PreconditionFailed("le-failed", f"c !<=_{n0} b at block {emb.fail_at}: {emb.reason}")
    targets = [a.nth(n, bud) for n in range(depth)]
    top = targets[-1] if targets else -1
    fibers: list[list[int]] = [[] for _ in targets]
    by_value = {v: i for i, v in enumerate(targets)}
    m = 0
    # past n0 the image of block m is a singleton with nondecreasing value,
    # so the scan can stop once that value passes the last target
    while True:
        bud.spend()
        blk = c.block(m, bud)
        vals = sorted({t.pi.apply(k, bud) for k in blk})
        if len(vals) == 1 and vals[0] in by_value:
            fibers[by_value[vals[0]]].append(m)
        if m >= n0 and len(vals) == 1 and vals[0] > top:
            break
        m += 1
    out = FiberBlocks(n0, tuple(tuple(f) for f in fibers))
    for n in range(depth):
        if not any(i >= n0 for i in fibers[n]):
            raise PreconditionFailed("fiber-beyond", f"no fiber index past {n0} for target #{n}")
        if n + 1 < depth:
            if not (out.max_of(n) < out.min_beyond(n + 1) <= out.max_of(n + 1)):
                raise PreconditionFailed(
                    "fiber-interleave",
                    f"targets #{n},#{n + 1}: {out.max_of(n)} !< {out.min_beyond(n + 1)} <= {out.max_of(n + 1)}",
                )
    return out


def compose_witness(outer: Map, inner: Map, depth: int, bud: Optional[Budget] = None) -> Map:
    """Eager tabulation of a composition, for cross-checking lazy paths."""
    bud = _budget(bud, default_budget(), "compose tabulation")
    return Map.tabulated([outer.apply(inner.apply(k, bud), bud) for k in range(depth)])
