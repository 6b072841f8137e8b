"""A desk-scale model of the condition poset over a generic-context
surrogate.

Levels are opaque ordered labels; each carries a finite decreasing tower
of block sequences standing in for the sets already committed to its
filter, and membership is decided by certifying that some tower set is
almost contained in the stream under test.  Wherever the source argument
needs a genuine filter decision, a pseudo-intersection, or an
anticipation step, the context's oracles answer; a missing oracle
surfaces as OracleRequired naming the obligation, and in permissive mode
the obligation is recorded in the trace as a decree instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .blocks import (
    BlockSeq,
    block_seq_check,
    blocks_from_stream,
    le_at,
    le_some,
    scripted_blocks,
    sset,
)
from .errors import DepthExceeded, OracleRequired, PreconditionFailed, TableHorizon
from .maps import Map, NormalTriple, ValueSeq, normal_check
from .report import Report
from .streams import (
    Budget,
    SetStream,
    _budget,
    block_image,
    default_budget,
    intersect,
    preimage,
    s_of,
    scripted,
    t_of,
)

TOP = None  # the marker for "the condition's stage is the whole context"


@dataclass(frozen=True)
class TripleWitness:
    """Normality witness for one of a condition's maps."""

    psi: ValueSeq
    base: BlockSeq
    range_window: int = 8

    def triple(self, mapping: Map) -> NormalTriple:
        return NormalTriple(mapping, self.psi, self.base, self.range_window)


@dataclass(frozen=True)
class ImageCert:
    """How a map's image was certified large: by a tower set almost
    inside it (from the given element index on), or by oracle decree."""

    kind: str               # "tower" | "decree"
    tower_index: int = -1
    threshold: int = 0
    support_from: int = 0


@dataclass(eq=False)
class Condition:
    c: BlockSeq
    gamma: Optional[int]                 # a label, or TOP
    labels: tuple[int, ...]              # sorted stage labels of the maps
    maps: dict[int, Map] = field(default_factory=dict)
    witnesses: dict[int, TripleWitness] = field(default_factory=dict)
    image_certs: dict[int, ImageCert] = field(default_factory=dict)
    commute_certs: dict[tuple[int, int], int] = field(default_factory=dict)

    def summary(self) -> str:
        g = "top" if self.gamma is TOP else str(self.gamma)
        return f"<{self.c.name}; gamma={g}; X={list(self.labels)}>"


@dataclass(frozen=True)
class MembershipAnswer:
    kind: str           # "tower" | "decree"
    tower_index: int = -1
    threshold: int = 0


@dataclass(eq=False)
class GenericContext:
    """Labels, towers, the projection system between labels, and oracles.

    proj[(b, a)] for a <= b maps stage b into stage a.  exact_system
    declares that the projections commute and are monotone everywhere,
    which the bundled generators guarantee; otherwise agreement data per
    label triple must be supplied.  A membership decree function may
    resolve memberships the towers cannot; rk_oracle answers anticipation
    requests and limit_oracle answers chain-sealing requests.
    """

    labels: tuple[int, ...]
    towers: dict[int, tuple[BlockSeq, ...]]
    proj: dict[tuple[int, int], Map] = field(default_factory=dict)
    top_is_limit: bool = True
    exact_system: bool = True
    decree: Optional[Callable[[int, SetStream], bool]] = None
    rk_oracle: Optional[Callable] = None
    limit_oracle: Optional[Callable] = None
    cert_depth: int = 16
    cert_tail: int = 3  # least run of verified tower points behind a threshold
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        self.labels = tuple(sorted(self.labels))
        for a in self.labels:
            self.proj.setdefault((a, a), Map.identity())

    def tower_set(self, label: int, index: int) -> SetStream:
        return sset(self.towers[label][index], 0, self.budget)

    def decide_membership(self, label: int, stream: SetStream, depth: int,
                          bud: Optional[Budget] = None) -> Optional[MembershipAnswer]:
        """Deepest tower set almost inside the stream, if any."""
        bud = _budget(bud, self.budget, f"membership at {label}")
        chain = self.towers.get(label, ())
        for i in range(len(chain) - 1, -1, -1):
            s = self.tower_set(label, i)
            last_bad = -1
            usable = True
            j_end = 0
            for j in range(depth):
                try:
                    v = s.nth(j, bud)
                except (TableHorizon, DepthExceeded):
                    break  # the tower's own knowledge ends here
                j_end = j + 1
                try:
                    if not stream.contains(v, bud):
                        last_bad = j
                except TableHorizon:
                    last_bad = j
                except DepthExceeded:
                    usable = False
                    break
            if usable and 0 < j_end and last_bad + max(1, self.cert_tail) < j_end:
                return MembershipAnswer("tower", i, last_bad + 1)
        if self.decree is not None and self.decree(label, stream):
            return MembershipAnswer("decree")
        return None

    def check(self, depth: Optional[int] = None) -> Report:
        """Tower order and projection coherence on the inspected prefix."""
        depth = depth or self.cert_depth
        bud = Budget(self.budget * max(1, len(self.labels)), "context check")
        rep = Report("context")
        for a in self.labels:
            chain = self.towers.get(a, ())
            rep.add("d22:i2", f"label {a}", len(chain) > 0, "" if chain else "empty tower")
            for i in range(1, len(chain)):
                v = le_some(chain[i], chain[i - 1], depth, bud)
                rep.add("d22:i2", f"label {a} step {i}", v.ok, "" if v.ok else v.reason)
        for b in self.labels:
            for a in self.labels:
                if a >= b:
                    continue
                img = block_image(self.towers[b][-1], self.proj[(b, a)], 0, self.budget)
                ans = self.decide_membership(a, img, depth, bud)
                rep.add("d22:i5", f"{b}->{a}", ans is not None,
                        "" if ans else "projected tower set not certified")
        return rep


@dataclass(eq=False)
class TraceEntry:
    index: int
    task: str
    branch: str
    summary: str
    ok: bool
    obligations: tuple[str, ...] = ()
    detail: str = ""

    def to_obj(self) -> dict:
        return {
            "index": self.index,
            "task": self.task,
            "branch": self.branch,
            "condition": self.summary,
            "ok": self.ok,
            "obligations": list(self.obligations),
            "detail": self.detail,
        }


@dataclass(eq=False)
class Trace:
    entries: list[TraceEntry] = field(default_factory=list)

    def add(self, entry: TraceEntry) -> None:
        self.entries.append(entry)

    def to_obj(self) -> dict:
        return {"entries": [e.to_obj() for e in self.entries]}


# -- tasks ------------------------------------------------------------------


@dataclass(frozen=True)
class DecideSet:
    target: SetStream


@dataclass(frozen=True)
class Thin:
    schedule: Callable[[int], int]
    take_subsets: bool = True


@dataclass(frozen=True)
class Rapidify:
    schedule: Callable[[int], int]


@dataclass(frozen=True)
class RestrictImage:
    label: int
    target: SetStream


@dataclass(frozen=True)
class NormalizeMaps:
    label: int


@dataclass(frozen=True)
class AddCoordinate:
    label: int


@dataclass(frozen=True)
class Kill:
    label: int
    phi: Callable
    chooser: Optional[Callable] = None


@dataclass(frozen=True)
class RKPullback:
    pi1: Map
    psi1: ValueSeq
    b1: BlockSeq
    d: BlockSeq
    label: int


@dataclass(frozen=True)
class SealLimit:
    labels: tuple[int, ...]
    chain: tuple[BlockSeq, ...]
    side_maps: tuple[Map, ...]
    side_witnesses: tuple[TripleWitness, ...]
    side_level: tuple[int, ...]


Task = object  # tagged union over the dataclasses above


# -- condition construction and checking ------------------------------------


def seed_condition(ctx: GenericContext, c: BlockSeq, bud: Optional[Budget] = None) -> Condition:
    """The canonical starting condition over a context.

    Without labels it is bare; with labels it places the block-index map
    at the least label and the projected compositions nowhere else, which
    keeps the image the full index stream.
    """
    bud = _budget(bud, ctx.budget, "seed condition")
    if not ctx.labels:
        return Condition(c, TOP, ())
    a0 = ctx.labels[0]
    pi = Map.block_index(c)
    q = Condition(
        c, a0, (a0,), maps={a0: pi},
        witnesses={a0: TripleWitness(ValueSeq.identity(), c, range_window=1)},
    )
    q.image_certs[a0] = _certify_image(ctx, q, a0, 0, ctx.cert_depth, bud, strict=False, obligations=[])
    q.commute_certs[(a0, a0)] = 0
    return q


def _certify_image(ctx: GenericContext, q: Condition, label: int, eta: int, depth: int,
                   bud: Budget, strict: bool, obligations: list) -> ImageCert:
    img = block_image(q.c, q.maps[label], eta, ctx.budget)
    ans = ctx.decide_membership(label, img, depth, bud)
    if ans is None:
        if strict:
            raise OracleRequired(f"d14:i16 membership of the image at level {label}")
        obligations.append(f"i16@{label}")
        return ImageCert("decree", -1, 0, eta)
    if ans.kind == "decree":
        obligations.append(f"i16@{label}")
        return ImageCert("decree", -1, 0, eta)
    return ImageCert("tower", ans.tower_index, ans.threshold, eta)


def _support_threshold(q: Condition, label: int, depth: int, bud: Budget) -> int:
    v = le_some(q.c, q.witnesses[label].base, depth, bud)
    if not v.ok:
        raise PreconditionFailed("d14:i15", f"condition blocks not below base at {label}: {v.reason}")
    return v.l


def available_depth(c: BlockSeq, depth: int, bud: Optional[Budget] = None) -> int:
    """How many blocks of the sequence are actually reachable, up to depth."""
    bud = _budget(bud, c.budget, f"available depth of {c.name}")
    good = 0
    for k in range(depth):
        try:
            c.block(k, bud)
        except (TableHorizon, DepthExceeded):
            break
        good = k + 1
    return good


def _derive_certs(ctx: GenericContext, q: Condition, depth: int, bud: Budget,
                  strict: bool, obligations: list) -> None:
    """Fill image and commuting certificates for a freshly built condition,
    within the depth the condition's table actually supports."""
    depth = max(1, available_depth(q.c, depth, bud))
    for a in q.labels:
        eta = _support_threshold(q, a, depth, bud)
        q.image_certs[a] = _certify_image(ctx, q, a, eta, depth, bud, strict, obligations)
    for a in q.labels:
        for b in q.labels:
            if a > b:
                continue
            thr = 0
            last_bad = None
            for blk_i in range(depth):
                for k in q.c.block(blk_i, bud):
                    bud.spend()
                    if q.maps[a].apply(k, bud) != ctx.proj[(b, a)].apply(q.maps[b].apply(k, bud), bud):
                        last_bad = k
            if last_bad is not None:
                thr = last_bad + 1
            q.commute_certs[(a, b)] = thr


def check_condition(q: Condition, ctx: GenericContext, depth: int,
                    bud: Optional[Budget] = None) -> Report:
    """Re-verify the condition clauses at the requested depth."""
    bud = _budget(bud, ctx.budget * max(1, len(q.labels) + 1), "check condition")
    rep = Report("condition")
    depth = max(1, available_depth(q.c, depth, bud))
    v = block_seq_check(q.c, depth, bud)
    rep.add("d14:i11", "blocks", v.ok, "" if v.ok else f"{v.clause} at {v.fail_index}")
    if q.gamma is TOP:
        if q.labels:
            ok = ctx.top_is_limit and set(q.labels) <= set(ctx.labels)
            rep.add("d14:i13", "top marker", ok,
                    "" if ok else "top marker needs a limit context")
        else:
            rep.add("d14:i13", "top marker", not ctx.labels or ctx.top_is_limit, "")
    else:
        ok = bool(q.labels) and q.gamma == max(q.labels) and q.gamma in ctx.labels
        rep.add("d14:i13", "stage in own label set", ok,
                "" if ok else f"gamma={q.gamma} labels={list(q.labels)}")
    for a in q.labels:
        w = q.witnesses[a]
        nv = normal_check(w.triple(q.maps[a]), min(depth, ctx.cert_depth), bud)
        lv = le_some(q.c, w.base, depth, bud)
        rep.add("d14:i15", f"alpha={a}", nv.ok and lv.ok,
                ("" if nv.ok else f"{nv.clause} at {nv.at}") + ("" if lv.ok else " not below base"))
    for a in q.labels:
        cert = q.image_certs.get(a)
        if cert is None:
            rep.add("d14:i16", f"alpha={a}", False, "no certificate")
            continue
        if cert.kind == "decree":
            rep.add("d14:i16", f"alpha={a}", True, "oracle decree")
            continue
        img = block_image(q.c, q.maps[a], cert.support_from, ctx.budget)
        s = ctx.tower_set(a, cert.tower_index)
        bad = None
        for j in range(cert.threshold, depth):
            try:
                if not img.contains(s.nth(j, bud), bud):
                    bad = j
                    break
            except TableHorizon:
                bad = j
                break
        rep.add("d14:i16", f"alpha={a} tower#{cert.tower_index}", bad is None,
                "" if bad is None else f"tower element {bad} escapes the image")
    for (a, b), thr in sorted(q.commute_certs.items()):
        if a == b:
            continue
        bad = None
        for blk_i in range(depth):
            for k in q.c.block(blk_i, bud):
                if k < thr:
                    continue
                bud.spend()
                if q.maps[a].apply(k, bud) != ctx.proj[(b, a)].apply(q.maps[b].apply(k, bud), bud):
                    bad = k
                    break
            if bad is not None:
                break
        rep.add("d14:i17", f"{a}<={b} from {thr}", bad is None,
                "" if bad is None else f"fails at {bad}")
    return rep


def leq_condition(q1: Condition, q0: Condition, ctx: GenericContext, depth: int,
                  bud: Optional[Budget] = None) -> Report:
    """The extension order at the requested depth: blocks embed from some
    level, labels only grow, and shared maps agree pointwise."""
    bud = _budget(bud, ctx.budget * 2, "leq condition")
    rep = Report("order")
    depth = max(1, min(available_depth(q1.c, depth, bud), available_depth(q0.c, depth, bud)))
    v = le_some(q1.c, q0.c, depth, bud)
    rep.add("d14:le", f"level {v.l if v.ok else '?'}", v.ok, "" if v.ok else v.reason)
    ok = set(q0.labels) <= set(q1.labels)
    rep.add("d14:le-labels", "containment", ok,
            "" if ok else f"{list(q0.labels)} not within {list(q1.labels)}")
    for a in q0.labels:
        bad = None
        for k in range(depth):
            bud.spend()
            if q1.maps[a].apply(k, bud) != q0.maps[a].apply(k, bud):
                bad = k
                break
        rep.add("d14:le-maps", f"alpha={a}", bad is None,
                "" if bad is None else f"maps differ at {bad}")
    return rep


# -- the extension tasks -----------------------------------------------------


def extend_condition(q: Condition, task: Task, ctx: GenericContext, depth: int,
                     strict: bool = False, index: int = 0,
                     bud: Optional[Budget] = None) -> tuple[Condition, TraceEntry]:
    """Extend a condition by one density task.

    Returns the extension together with its trace entry; oracle
    obligations either abort (strict) or are recorded as decrees.
    """
    bud = _budget(bud, ctx.budget * 8, f"extend {type(task).__name__}")
    obligations: list[str] = []
    if isinstance(task, DecideSet):
        q2, branch = _decide_set(q, ctx, task.target, depth, strict, obligations, bud)
    elif isinstance(task, Thin):
        q2 = _thin(q, ctx, task.schedule, task.take_subsets, depth, strict, obligations, bud)
        branch = "subsets" if task.take_subsets else "whole-blocks"
    elif isinstance(task, Rapidify):
        sched = task.schedule
        q2 = _thin(q, ctx, lambda n: sched(s_of(n + 1)), True, depth, strict, obligations, bud)
        branch = "via-thin"
    elif isinstance(task, RestrictImage):
        q2, branch = _restrict_image(q, ctx, task.label, task.target, depth, strict, obligations, bud)
    elif isinstance(task, NormalizeMaps):
        q2, branch = _normalize_maps(q, ctx, task.label, depth, strict, obligations, bud)
    elif isinstance(task, AddCoordinate):
        q2, branch = _add_coordinate(q, ctx, task.label, depth, strict, obligations, bud)
    elif isinstance(task, Kill):
        q2, branch = _kill(q, ctx, task, depth, strict, obligations, bud)
    elif isinstance(task, RKPullback):
        q2, branch, _extras = _rk_pullback(q, ctx, task, depth, strict, obligations, bud)
    elif isinstance(task, SealLimit):
        q2, branch, _extras = _seal_limit(q, ctx, task, depth, strict, obligations, bud)
    else:
        raise PreconditionFailed("task", f"unknown task {type(task).__name__}")
    entry = TraceEntry(index, type(task).__name__, branch, q2.summary(), True,
                       tuple(obligations))
    return q2, entry


def _intersect_count(blk, target: SetStream, bud: Budget) -> list[int]:
    out = []
    for x in blk:
        try:
            if target.contains(x, bud):
                out.append(x)
        except TableHorizon:
            pass
    return out


class _UsableFibers:
    """Stream rule: block indices of a sequence on which a map is
    constant, probed at the ends, from a starting index on."""

    kind = "usable-fibers"

    def __init__(self, base: BlockSeq, mapping: Map, eta: int):
        self.base, self.mapping, self.eta = base, mapping, eta
        self._m = eta

    def bind(self, stream):
        self.stream = stream

    def value_at(self, n):
        return None

    def seek_index_ge(self, value):
        return None

    def produce(self, bud: Budget) -> int:
        while True:
            bud.spend()
            m = self._m
            lo = self.mapping.apply(self.base.first_of(m, bud), bud)
            hi = self.mapping.apply(self.base.last_of(m, bud), bud)
            self._m += 1
            if lo == hi:
                return m

    def params(self):
        return {"base": self.base.name, "eta": self.eta}

    def describe(self):
        return f"fibers({self.base.name})"


class _RankSchedule:
    """Stream rule: rank(n) = max(schedule(n), rank(n-1)+1)."""

    kind = "ranks"

    def __init__(self, schedule):
        self.schedule = schedule

    def bind(self, stream):
        self.stream = stream

    def value_at(self, n):
        return None

    def seek_index_ge(self, value):
        return None

    def produce(self, bud: Budget) -> int:
        bud.spend()
        memo = self.stream._memo
        n = len(memo)
        prev = memo[-1] if memo else -1
        return max(self.schedule(n), prev + 1)

    def params(self):
        return {}

    def describe(self):
        return "ranks"


class _HeavyIndices:
    """Stream rule: indices of blocks passing a weight test against a
    target set.  In strong mode a block passes when its kept part has
    more points than its index; otherwise when it keeps at least half."""

    kind = "heavy"

    def __init__(self, base: BlockSeq, target: SetStream, inside: bool, strong: bool):
        self.base, self.target = base, target
        self.inside, self.strong = inside, strong
        self._n = 0

    def bind(self, stream):
        self.stream = stream

    def value_at(self, n):
        return None

    def seek_index_ge(self, value):
        return None

    def produce(self, bud: Budget) -> int:
        while True:
            bud.spend()
            n = self._n
            blk = self.base.block(n, bud)
            hits = _intersect_count(blk, self.target, bud)
            part = len(hits) if self.inside else len(blk) - len(hits)
            self._n += 1
            if self.strong:
                if part >= n + 1:
                    return n
            elif 2 * part >= len(blk):
                return n
        raise AssertionError

    def params(self):
        return {"base": self.base.name, "inside": self.inside, "strong": self.strong}

    def describe(self):
        return "heavy"


class _FilteredPick:
    """Block rule: block k is the least k+1 kept points of the source
    block named by the picker at position index_of(k)."""

    kind = "filtered-pick"

    def __init__(self, base: BlockSeq, picker: SetStream, target: Optional[SetStream],
                 inside: bool, index_of):
        self.base, self.picker, self.target = base, picker, target
        self.inside, self.index_of = inside, index_of

    def bind(self, seq):
        self.seq = seq

    def locate_value(self, value):
        return None

    def block_end(self, n, last):
        return None

    def produce(self, bud: Budget):
        return self.block_at(len(self.seq._memo), bud)

    def block_at(self, k: int, bud: Budget):
        n = self.picker.nth(self.index_of(k), bud)
        blk = self.base.block(n, bud)
        if self.target is None:
            part = list(blk)
        else:
            hits = _intersect_count(blk, self.target, bud)
            part = hits if self.inside else [x for x in blk if x not in set(hits)]
        if len(part) < k + 1:
            raise PreconditionFailed("pick-size", f"kept part of block {n} below {k + 1}")
        return part[: k + 1]

    def params(self):
        return {"base": self.base.name, "inside": self.inside}

    def describe(self):
        return "filtered"


class _WindowSlice:
    """Block rule: a fixed index window cut out of each source block."""

    kind = "window"

    def __init__(self, base: BlockSeq, lo, hi):
        self.base, self.lo, self.hi = base, lo, hi

    def bind(self, seq):
        self.seq = seq

    def locate_value(self, value):
        return None

    def block_end(self, n, last):
        return None

    def produce(self, bud: Budget):
        return self.block_at(len(self.seq._memo), bud)

    def block_at(self, n: int, bud: Budget):
        blk = self.base.block(n, bud)
        lo, hi = self.lo(n), self.hi(n)
        if len(blk) < hi:
            raise PreconditionFailed("window-size", f"block {n} shorter than {hi}")
        return blk[lo:hi]

    def params(self):
        return {"base": self.base.name}

    def describe(self):
        return "window"


def _thin_blocks(q: Condition, ctx: GenericContext, schedule, take_subsets: bool,
                 depth: int, bud: Budget) -> BlockSeq:
    """The thinned carrier, built lazily over the old one."""
    from .blocks import subselect, thin
    from .streams import SetStream as _SS, formula_stream

    if not q.labels:
        if not all(schedule(n) < schedule(n + 1) for n in range(4)):
            raise PreconditionFailed("t5:schedule", "thinning schedule must be strictly increasing")
        picker = formula_stream(schedule, ctx.budget, name="sched")
    else:
        gamma = max(q.labels)
        eta = _support_threshold(q, gamma, depth, bud)
        usable = _SS(_UsableFibers(q.c, q.maps[gamma], eta), ctx.budget, name="usable")
        ranks = _SS(_RankSchedule(schedule), ctx.budget, name="ranks")
        from .streams import from_indices

        picker = from_indices(usable, ranks, ctx.budget, name="fiber-picker")
    builder = subselect if take_subsets else thin
    return builder(q.c, picker, ctx.budget, name=f"{q.c.name}'")


def _thin(q: Condition, ctx: GenericContext, schedule, take_subsets: bool, depth: int,
          strict: bool, obligations: list, bud: Budget) -> Condition:
    c2 = _thin_blocks(q, ctx, schedule, take_subsets, depth, bud)
    q2 = Condition(c2, q.gamma, q.labels, dict(q.maps), dict(q.witnesses))
    _derive_certs(ctx, q2, depth, bud, strict, obligations)
    return q2


def _heavy_side(base: BlockSeq, target: SetStream, depth: int, strong: bool,
                ctx: GenericContext, bud: Budget) -> Optional[bool]:
    """Which side accumulates enough heavy blocks first; None if neither."""
    need = (2 * depth + 2) if not strong else depth
    got = {True: 0, False: 0}
    n = 0
    cap = 8 * depth + 24
    while max(got.values()) < need and n <= cap:
        blk = base.block(n, bud)
        hits = _intersect_count(blk, target, bud)
        kept_in = len(hits)
        kept_out = len(blk) - kept_in
        if strong:
            got[True] += kept_in >= n + 1
            got[False] += kept_out >= n + 1
        else:
            got[2 * kept_in >= len(blk)] += 1
        n += 1
    if got[True] >= need:
        return True
    if got[False] >= need:
        return False
    return None


def _picked_condition(q: Condition, ctx: GenericContext, base: BlockSeq,
                      target: SetStream, inside: bool, strong: bool, index_of,
                      name: str) -> Condition:
    heavy = SetStream(_HeavyIndices(base, target, inside, strong), ctx.budget, name="heavy")
    c2 = BlockSeq(_FilteredPick(base, heavy, target, inside, index_of), ctx.budget, name=name)
    return Condition(c2, q.gamma, q.labels, dict(q.maps), dict(q.witnesses))


def _decide_set(q: Condition, ctx: GenericContext, target: SetStream, depth: int,
                strict: bool, obligations: list, bud: Budget):
    if not q.labels:
        side = _heavy_side(q.c, target, depth, strong=False, ctx=ctx, bud=bud)
        if side is None:
            raise DepthExceeded("neither half accumulated enough heavy blocks")
        branch = "inside" if side else "outside"
        q2 = _picked_condition(q, ctx, q.c, target, side, False,
                               lambda k: 2 * k + 1, f"{q.c.name}|X")
        q2.c.blocks(depth)  # force the certified prefix now
        return q2, branch
    # labeled case: thin to fat whole blocks, then let the towers decide
    q1 = _thin(q, ctx, lambda n: 2 * n + 1, False, depth, strict, obligations, bud)
    chosen = None
    for inside in (True, False):
        if _heavy_side(q1.c, target, depth, strong=True, ctx=ctx, bud=bud) is None:
            break
        cand = _picked_condition(q, ctx, q1.c, target, inside, True,
                                 lambda k: k, f"{q1.c.name}|{int(not inside)}")
        try:
            cand.c.blocks(depth)
        except (PreconditionFailed, DepthExceeded):
            continue
        try:
            _derive_certs(ctx, cand, depth, bud, True, [])
        except OracleRequired:
            continue
        chosen = (cand, "half-0" if inside else "half-1")
        break
    if chosen is None:
        if strict:
            raise OracleRequired("d22:i4 ultrafilter decision between the halves")
        obligations.append("decide:decree")
        for inside in (True, False):
            cand = _picked_condition(q, ctx, q1.c, target, inside, True,
                                     lambda k: k, f"{q1.c.name}|{int(not inside)}")
            try:
                cand.c.blocks(depth)
            except (PreconditionFailed, DepthExceeded):
                continue
            _derive_certs(ctx, cand, depth, bud, False, obligations)
            chosen = (cand, ("half-0" if inside else "half-1") + "-decree")
            break
        if chosen is None:
            raise DepthExceeded("neither half accumulated enough heavy blocks")
    return chosen


def _restrict_image(q: Condition, ctx: GenericContext, label: int, target: SetStream,
                    depth: int, strict: bool, obligations: list, bud: Budget):
    if label not in q.labels:
        raise PreconditionFailed("t10:label", f"{label} not in the condition's label set")
    eta = _support_threshold(q, label, depth, bud)
    img = block_image(q.c, q.maps[label], eta, ctx.budget)
    good = intersect(target, img, ctx.budget, name="goal")
    pulled = preimage(good, q.maps[label], q.c, ctx.budget, name="pull")
    q2, branch = _decide_set(q, ctx, pulled, depth, strict, obligations, bud)
    if branch.startswith("half-1") or branch == "outside":
        raise PreconditionFailed("t10:branch", "decision landed outside the pullback")
    bad = None
    for n in range(depth):
        for x in q2.c.block(n, bud):
            bud.spend()
            if not target.contains(q2.maps[label].apply(x, bud), bud):
                bad = x
                break
        if bad is not None:
            break
    if bad is not None:
        raise PreconditionFailed("t10:image", f"image escapes the target at {bad}")
    return q2, "restricted"


def _normalize_maps(q: Condition, ctx: GenericContext, label: int, depth: int,
                    strict: bool, obligations: list, bud: Budget):
    if not ctx.exact_system:
        raise OracleRequired("d22:i0 agreement sets for an inexact system")
    # with an exactly commuting system the agreement sets are full, so the
    # task reduces to recording fresh thresholds
    q2 = Condition(q.c, q.gamma, q.labels, dict(q.maps), dict(q.witnesses),
                   dict(q.image_certs))
    _derive_certs(ctx, q2, depth, bud, strict, obligations)
    return q2, "exact-system"


def _composed_map(ctx: GenericContext, q: Condition, via: int, label: int,
                  start_block: int, bud: Budget) -> tuple[Map, ValueSeq]:
    hop = ctx.proj[(via, label)]
    upper = q.maps[via]
    base = q.c

    def value_at(m: int, _hop=hop, _upper=upper, _base=base) -> int:
        if m < start_block:
            return 0
        return _hop.apply(_upper.apply(_base.first_of(m)))

    psi = ValueSeq.formula(value_at, name=f"comp{via}->{label}")
    return Map.block(base, psi, name=f"via{via}->{label}"), psi


def _add_coordinate(q: Condition, ctx: GenericContext, label: int, depth: int,
                    strict: bool, obligations: list, bud: Budget):
    if label in q.labels:
        return q, "already-present"
    if label not in ctx.labels:
        raise PreconditionFailed("t2:label", f"{label} is not a context label")
    above = [a for a in q.labels if a >= label]
    if above:
        via = min(above)
        m1 = _support_threshold(q, via, depth, bud)
        mp, psi = _composed_map(ctx, q, via, label, m1, bud)
        labels = tuple(sorted(set(q.labels) | {label}))
        maps = dict(q.maps)
        maps[label] = mp
        wits = dict(q.witnesses)
        wits[label] = TripleWitness(psi, q.c, range_window=_window_for(psi, depth))
        q2 = Condition(q.c, q.gamma, labels, maps, wits)
        _derive_certs(ctx, q2, depth, bud, strict, obligations)
        return q2, f"compose-through-{via}"
    # the new label sits above the condition's stage: anticipation oracle
    depth = max(1, available_depth(q.c, depth, bud))
    if ctx.rk_oracle is None:
        raise OracleRequired("d22:i1 anticipation for a higher stage")
    gamma = max(q.labels) if q.labels else None
    ans = ctx.rk_oracle(kind="add-coordinate", q=q, label=label, ctx=ctx)
    if ans is None:
        raise OracleRequired("d22:i1 anticipation for a higher stage")
    d_star, new_map, new_psi, claimed = ans
    _verify_anticipation(q, ctx, gamma, label, d_star, new_map, new_psi, depth, bud)
    labels = tuple(sorted(set(q.labels) | {label}))
    maps = dict(q.maps)
    maps[label] = new_map
    wits = dict(q.witnesses)
    wits[label] = TripleWitness(new_psi, d_star, range_window=_window_for(new_psi, depth))
    q2 = Condition(d_star, label, labels, maps, wits)
    _derive_certs(ctx, q2, depth, bud, strict, obligations)
    return q2, "oracle-anticipated"


def _window_for(psi: ValueSeq, depth: int) -> int:
    longest, run, prev = 1, 0, None
    for l in range(depth):
        v = psi.at(l)
        run = run + 1 if v == prev else 1
        prev = v
        longest = max(longest, run)
    return longest + 1


def _verify_anticipation(q, ctx, gamma, label, d_star, new_map, new_psi, depth, bud):
    v = le_some(d_star, q.c, depth, bud)
    if not v.ok:
        raise PreconditionFailed("d22:i1", "anticipated blocks not below the condition")
    tri = NormalTriple(new_map, new_psi, d_star, range_window=_window_for(new_psi, depth))
    nv = normal_check(tri, min(depth, ctx.cert_depth), bud)
    if not nv.ok:
        raise PreconditionFailed("d22:i1", f"anticipated triple not normal: {nv.clause}")
    if gamma is not None:
        bad = None
        for n in range(depth):
            for k in d_star.block(n, bud):
                bud.spend()
                if q.maps[gamma].apply(k, bud) != ctx.proj[(label, gamma)].apply(
                        new_map.apply(k, bud), bud):
                    bad = k
                    break
            if bad is not None:
                break
        if bad is not None:
            raise PreconditionFailed("d22:i1", f"anticipated map does not factor at {bad}")


def _kill(q: Condition, ctx: GenericContext, task: Kill, depth: int,
          strict: bool, obligations: list, bud: Budget):
    q1 = q
    if task.label is not None and task.label not in q.labels and ctx.labels:
        q1, _ = _add_coordinate(q, ctx, task.label, depth, strict, obligations, bud)
    q2 = _thin(q1, ctx, lambda n: 2 * n + 1, False, depth, strict, obligations, bud)
    cands = []
    for i in (0, 1):
        rule = _WindowSlice(q2.c, (lambda n: 0) if i == 0 else (lambda n: n + 1),
                            (lambda n: n + 1) if i == 0 else (lambda n: 2 * n + 2))
        ci = BlockSeq(rule, ctx.budget, name=f"{q2.c.name}#d{i + 1}")
        qi = Condition(ci, q2.gamma, q2.labels, dict(q2.maps), dict(q2.witnesses))
        _derive_certs(ctx, qi, depth, bud, strict, obligations)
        cands.append(qi)
    set1 = {x for n in range(depth) for x in cands[0].c.block(n, bud)}
    set2 = {x for n in range(depth) for x in cands[1].c.block(n, bud)}
    if set1 & set2:
        raise PreconditionFailed("t4:disjoint", "the halves are not disjoint")
    chooser = task.chooser or _default_chooser(ctx, task.label)
    pick = chooser(set1, set2, task.phi)
    if pick not in (1, 2):
        raise PreconditionFailed("t4:chooser", f"chooser returned {pick}")
    return cands[pick - 1], f"half-{pick}"


def _default_chooser(ctx: GenericContext, label):
    def choose(set1, set2, phi) -> int:
        probes = []
        if label is not None and label in ctx.towers:
            bud = Budget(ctx.budget, "chooser probes")
            for bs in ctx.towers[label]:
                probes.append(set(sset(bs, 0, ctx.budget).prefix(24, bud)))
        probes.append(set(range(48)))
        for probe in probes:
            img = set(phi(probe))
            if img and img <= set1:
                return 2  # the first half would admit an embedded image
        return 1

    return choose


def _rk_pullback(q: Condition, ctx: GenericContext, task: RKPullback, depth: int,
                 strict: bool, obligations: list, bud: Budget):
    q0 = q
    if task.label not in q.labels:
        q0, _ = _add_coordinate(q, ctx, task.label, depth, strict, obligations, bud)
    if q0.gamma is TOP:
        if ctx.rk_oracle is None:
            raise OracleRequired("d22:i1 chain anticipation at the top stage")
        ans = ctx.rk_oracle(kind="pullback-top", q=q0, task=task, ctx=ctx)
        if ans is None:
            raise OracleRequired("d22:i1 chain anticipation at the top stage")
        q2, d_star, pi, psi = ans
        return q2, "oracle-top", (d_star, pi, psi)
    gamma = q0.gamma
    l0 = le_some(task.d, task.b1, depth, bud)
    if not l0.ok:
        raise PreconditionFailed("t12:pre", "the pulled sequence is not below its base")
    eta = _support_threshold(q0, gamma, depth, bud)
    if task.label == gamma:
        # pin the shared values and regroup the pulled sequence by fibers
        img_d = block_image(task.d, task.pi1, l0.l, ctx.budget)
        img_c = block_image(q0.c, q0.maps[gamma], eta, ctx.budget)
        b = intersect(img_d, img_c, ctx.budget, name="shared")
        d_prime = BlockSeq(_FiberPickBlocks(task.d, task.pi1, b), ctx.budget, name="pulled")
        psi2 = ValueSeq.from_stream(b, name="shared-vals")
        pi2 = Map.block(d_prime, psi2, name="pi2")
    else:
        if ctx.rk_oracle is None:
            raise OracleRequired("d22:i1 anticipation below the stage")
        ans = ctx.rk_oracle(kind="pullback-below", q=q0, task=task, ctx=ctx)
        if ans is None:
            raise OracleRequired("d22:i1 anticipation below the stage")
        d_prime, pi2, psi2, b = ans
    # rapid selection inside the shared values, then the paired regrouping
    from .blocks import subselect
    from .streams import formula_stream, from_indices

    c_sel = from_indices(b, formula_stream(lambda n: t_of(n + 1), ctx.budget),
                         ctx.budget, name="rapid-shared")
    host_picks = BlockSeq(_FiberPickBlocks(q0.c, q0.maps[gamma], c_sel), ctx.budget, name="hostpick")
    e_star = subselect(host_picks, formula_stream(lambda n: n, ctx.budget), ctx.budget, name="host")
    pulled_picks = BlockSeq(_FiberPickBlocks(d_prime, pi2, c_sel), ctx.budget, name="pullpick")
    d_star = BlockSeq(_GroupedSlices(pulled_picks), ctx.budget, name="pulled*")
    support = sset(e_star, 0, ctx.budget)
    psi = ValueSeq.from_stream(support, name="psi12")
    pi = Map.block(d_star, psi, name="pull-connect")
    q2 = Condition(e_star, q0.gamma, q0.labels, dict(q0.maps), dict(q0.witnesses))
    _derive_certs(ctx, q2, depth, bud, strict, obligations)
    bad = None
    for m in range(s_of(depth)):
        for x in d_star.block(m, bud):
            bud.spend()
            if task.pi1.apply(x, bud) != q2.maps[task.label].apply(pi.apply(x, bud), bud):
                bad = x
                break
        if bad is not None:
            break
    if bad is not None:
        raise PreconditionFailed("t12:factor", f"pulled map does not factor at {bad}")
    return q2, "stage-pullback", (d_star, pi, psi)


class _FiberPickBlocks:
    """Block rule: block n is the deepest source block whose image under
    the map is exactly the n-th target value; produced in order with a
    shared forward scan."""

    kind = "fiber-pick"

    def __init__(self, base: BlockSeq, mapping: Map, targets: SetStream):
        self.base, self.mapping, self.targets = base, mapping, targets
        self._m = 0
        self._best: dict[int, int] = {}

    def bind(self, seq):
        self.seq = seq

    def locate_value(self, value):
        return None

    def block_end(self, n, last):
        return None

    def block_at(self, n, bud):
        return None

    def produce(self, bud: Budget):
        n = len(self.seq._memo)
        target = self.targets.nth(n, bud)
        while True:
            bud.spend()
            lo = self.mapping.apply(self.base.first_of(self._m, bud), bud)
            hi = self.mapping.apply(self.base.last_of(self._m, bud), bud)
            if lo == hi:
                if lo > target:
                    break
                self._best[lo] = self._m
            self._m += 1
        if target not in self._best:
            raise PreconditionFailed("fiber", f"no block maps onto {target}")
        found = self._best[target]
        self._m = found + 1
        return self.base.block(found, bud)

    def params(self):
        return {"base": self.base.name}

    def describe(self):
        return "fiber-pick"


class _GroupedSlices:
    """Block rule: triangular regrouping, block l being the next l+1
    consecutive points of its group's source block."""

    kind = "grouped"

    def __init__(self, groups: BlockSeq):
        self.groups = groups

    def bind(self, seq):
        self.seq = seq

    def locate_value(self, value):
        return None

    def block_end(self, n, last):
        return None

    def block_at(self, l, bud):
        from .streams import group_of

        m = group_of(l)
        src = self.groups.block(m, bud)
        off = sum(i + 1 for i in range(s_of(m), l))
        if off + l + 1 > len(src):
            raise PreconditionFailed("group-size", f"group {m} block too small for slot {l}")
        return src[off: off + l + 1]

    def produce(self, bud: Budget):
        return self.block_at(len(self.seq._memo), bud)

    def params(self):
        return {"groups": self.groups.name}

    def describe(self):
        return "grouped"


def _seal_limit(q: Condition, ctx: GenericContext, task: SealLimit, depth: int,
                strict: bool, obligations: list, bud: Budget):
    from .constructions import TowerInput, diagonal

    if q.gamma is not TOP or not q.labels:
        raise PreconditionFailed("t9:top", "sealing needs a top-stage condition with labels")
    if not set(task.labels) <= set(q.labels):
        raise PreconditionFailed("t9:labels", "sealed labels must come from the condition")
    order = sorted(task.labels)
    reindex = {a: i for i, a in enumerate(order)}
    proj = {}
    for i, a in enumerate(order):
        for j, b_lab in enumerate(order):
            if i <= j:
                proj[(j, i)] = ctx.proj[(b_lab, a)]
    tw = TowerInput(
        levels=len(order), carrier=q.c, chain=list(task.chain), proj=proj,
        top_maps=[q.maps[a] for a in order],
        top_triples=[q.witnesses[a].triple(q.maps[a]) for a in order],
        side_maps=list(task.side_maps),
        side_triples=[w.triple(mp) for w, mp in zip(task.side_witnesses, task.side_maps)],
        side_level=list(task.side_level), f=lambda n: n, budget=ctx.budget,
    )
    res = diagonal(tw)
    if not res.report.ok:
        raise PreconditionFailed("t9:diagonal", str(res.report.failures()[0]))
    q2 = Condition(res.trace, TOP, q.labels, dict(q.maps), dict(q.witnesses))
    _derive_certs(ctx, q2, depth, bud, strict, obligations)
    return q2, "sealed", (res.refined, res.connecting, res.psi)


# -- chains and stages -------------------------------------------------------


def meet_chain(chain: Sequence[Condition], ctx: GenericContext, depth: int,
               declared_limit: Optional[int] = None, strict: bool = False,
               bud: Optional[Budget] = None) -> tuple[Condition, TraceEntry]:
    """A lower bound for a finite decreasing chain of conditions.

    Case split on the accumulated label data: bare chains take the closed
    two-step recursion; a chain whose stage is an attained label fuses
    below it; a declared limit label consults the sealing oracle; a
    top-stage chain with labels lifts a fresh system and runs the
    diagonal construction.  When every condition carries the same label
    set the meet keeps it.
    """
    bud = _budget(bud, ctx.budget * 8, "meet chain")
    if not chain:
        raise PreconditionFailed("t91:chain", "empty chain")
    obligations: list[str] = []
    for i in range(1, len(chain)):
        v = leq_condition(chain[i], chain[i - 1], ctx, min(depth, ctx.cert_depth), bud)
        if not v.ok:
            raise PreconditionFailed("t91:chain", f"element {i}: {v.failures()[0].witness}")
    last = chain[-1]
    y_labels = last.labels
    if declared_limit is not None:
        if ctx.limit_oracle is None:
            raise OracleRequired("d22:i8 sealing at a declared limit stage")
        ans = ctx.limit_oracle(chain=chain, label=declared_limit, ctx=ctx)
        if ans is None:
            raise OracleRequired("d22:i8 sealing at a declared limit stage")
        q, d_star, pi, psi = ans
        entry = TraceEntry(-1, "meet", "declared-limit", q.summary(), True, tuple(obligations))
        return q, entry
    if not y_labels:
        # closed two-step recursion: start at index zero, then always jump
        # past both the next chain element's embedding level and the top
        # of the block just taken
        ms = [0]
        out = []
        scan = max(2, depth)
        for n in range(depth):
            src = chain[min(n, len(chain) - 1)].c
            out.append(src.block(ms[-1], bud))
            nxt = chain[min(n + 1, len(chain) - 1)].c
            k_n = le_some(nxt, src, scan, bud).l
            ms.append(max(k_n, out[-1][-1] + 2))
        q = Condition(scripted_blocks(out, ctx.budget, name="meet"), TOP, ())
        entry = TraceEntry(-1, "meet", "bare-recursion", q.summary(), True,
                           detail=f"indices {ms[:depth]}")
        return q, entry
    if last.gamma is not TOP:
        gamma = last.gamma
        n0 = next(i for i, qq in enumerate(chain) if gamma in qq.labels)
        head = chain[n0]
        from .constructions import FusionInput, fuse

        w = head.witnesses[gamma]
        tri = w.triple(head.maps[gamma])
        seq = [qq.c for qq in chain[n0:]]
        probe = block_image(seq[-1], head.maps[gamma], 0, ctx.budget)
        picks = []
        pos = -1
        for n in range(ctx.cert_depth + depth):
            pos = max(pos + 1, 2 * (n + 1))
            picks.append(probe.nth(pos, bud))
        pseudo = scripted(picks, ctx.budget, name="meet-target")
        res = fuse(FusionInput(chain=seq, triple=tri, pseudo=pseudo,
                               check_depth=min(12, ctx.cert_depth), budget=ctx.budget), depth, bud)
        if not res.report.ok:
            raise PreconditionFailed("t91:fuse", str(res.report.failures()[0]))
        q = Condition(res.fused, gamma, y_labels, dict(last.maps), dict(last.witnesses))
        _derive_certs(ctx, q, depth, bud, strict, obligations)
        entry = TraceEntry(-1, "meet", "fuse-at-stage", q.summary(), True, tuple(obligations))
        return q, entry
    # top-stage chain with labels: lift a fresh system over the ladder and
    # run the diagonal construction below the chain
    from .constructions import TowerInput, diagonal, lift_system
    from .blocks import triangular

    order = sorted(y_labels)
    proj = {}
    for i, a in enumerate(order):
        for j, b_lab in enumerate(order):
            if i <= j:
                proj[(j, i)] = ctx.proj[(b_lab, a)]
    carrier = triangular()
    lifted = lift_system({k: v for k, v in proj.items()}, len(order), carrier,
                         depth, budget=ctx.budget)
    if not lifted.report.ok:
        raise PreconditionFailed("t91:lift", str(lifted.report.failures()[0]))
    side_maps = []
    side_wits = []
    side_level = []
    for a in order:
        n0 = next(i for i, qq in enumerate(chain) if a in qq.labels)
        side_maps.append(chain[n0].maps[a])
        side_wits.append(chain[n0].witnesses[a])
        side_level.append(n0)
    tw = TowerInput(
        levels=len(order), carrier=carrier, chain=[qq.c for qq in chain], proj=proj,
        top_maps=lifted.maps,
        top_triples=[NormalTriple(mp, psi, carrier, range_window=_window_for(psi, depth))
                     for mp, psi in zip(lifted.maps, lifted.psis)],
        side_maps=side_maps,
        side_triples=[w.triple(mp) for w, mp in zip(side_wits, side_maps)],
        side_level=side_level, f=lambda n: n, budget=ctx.budget,
    )
    res = diagonal(tw)
    if not res.report.ok:
        raise PreconditionFailed("t91:diagonal", str(res.report.failures()[0]))
    q = Condition(res.refined, TOP, y_labels, dict(last.maps), dict(last.witnesses))
    _derive_certs(ctx, q, depth, bud, strict, obligations)
    entry = TraceEntry(-1, "meet", "lift-diagonal", q.summary(), True, tuple(obligations))
    return q, entry


@dataclass(eq=False)
class StageResult:
    trace: Trace
    chain: list[Condition]
    final: Condition

    def to_obj(self) -> dict:
        return {
            "trace": self.trace.to_obj(),
            "chain": [q.summary() for q in self.chain],
            "final": self.final.summary(),
        }


def run_stage(ctx: GenericContext, tasks: Sequence[Task], q0: Condition, depth: int,
              checkpoints: Sequence[int] = (), strict: bool = False,
              meet_depth: Optional[int] = None) -> StageResult:
    """Fold the extension tasks over a starting condition.

    Checkpoint indices insert a chain meet after the named task,
    simulating the bounded stages of the long construction; a task that
    reports a missing oracle aborts in strict mode and is recorded and
    skipped otherwise.  The bare-chain meet recursion indexes blocks by
    previous block maxima, which explodes over heavily thinned chains,
    so checkpoints run it at a small depth by default.
    """
    trace = Trace()
    chain = [q0]
    marks = set(checkpoints)
    meet_depth = min(depth, 2) if meet_depth is None else meet_depth
    for i, task in enumerate(tasks):
        try:
            q2, entry = extend_condition(chain[-1], task, ctx, depth, strict=strict, index=i)
            trace.add(entry)
            chain.append(q2)
        except OracleRequired as err:
            if strict:
                raise
            trace.add(TraceEntry(i, type(task).__name__, "skipped", chain[-1].summary(),
                                 False, (err.obligation,), "oracle missing"))
        if i in marks:
            q_meet, entry = meet_chain(chain, ctx, meet_depth, strict=strict)
            entry = TraceEntry(i, "meet", entry.branch, entry.summary, entry.ok,
                               entry.obligations, "checkpoint")
            trace.add(entry)
            chain.append(q_meet)
    return StageResult(trace, chain, chain[-1])
