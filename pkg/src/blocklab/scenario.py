"""Scenario documents: named definitions of streams, block sequences,
maps, engines inputs, contexts, conditions, and task lists, in a strict
versioned JSON schema.

Names live in one global namespace; duplicates and unknown fields are
rejected outright, every reference must resolve, and reference cycles
are reported with their path.  Printing a scenario re-emits canonical
JSON whose parse is identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .blocks import (
    BlockSeq,
    blocks_from_stream,
    scripted_blocks,
    subselect,
    thin,
    triangular,
)
from .errors import CycleError, ParseError, ResolutionError
from .forcing import (
    TOP,
    AddCoordinate,
    Condition,
    DecideSet,
    GenericContext,
    Kill,
    Rapidify,
    RestrictImage,
    SealLimit,
    Thin,
    TripleWitness,
)
from .maps import Map, NormalTriple, ValueSeq
from .streams import (
    SetStream,
    arithmetic,
    blocks_union,
    image,
    intersect,
    periodic,
    preimage,
    scripted,
    union,
)

SCENARIO_FORMAT = "blocklab-scenario/1"

_SECTIONS = ("defaults", "streams", "blockseqs", "values", "maps", "triples",
             "schedules", "checks", "calibrations", "fusions", "lifts", "towers",
             "contexts", "conditions", "tasks", "meets", "stages", "suite")


@dataclass(eq=False)
class Scenario:
    raw: dict
    defaults: dict
    names: dict[str, Any] = field(default_factory=dict)
    kinds: dict[str, str] = field(default_factory=dict)
    checks: list[dict] = field(default_factory=list)
    calibrations: dict[str, dict] = field(default_factory=dict)
    fusions: dict[str, dict] = field(default_factory=dict)
    lifts: dict[str, dict] = field(default_factory=dict)
    towers: dict[str, dict] = field(default_factory=dict)
    meets: dict[str, dict] = field(default_factory=dict)
    stages: dict[str, dict] = field(default_factory=dict)
    suite: Optional[dict] = None

    @property
    def depth(self) -> int:
        return int(self.defaults.get("depth", 24))

    @property
    def budget(self) -> int:
        return int(self.defaults.get("budget", 500_000))

    def size(self) -> int:
        return len(self.names) + len(self.checks)

    def of_kind(self, kind: str) -> dict[str, Any]:
        return {n: v for n, v in self.names.items() if self.kinds[n] == kind}

    def get(self, name: str, kind: Optional[str] = None):
        if name not in self.names:
            raise ResolutionError(name)
        if kind is not None and self.kinds[name] != kind:
            raise ParseError(f"{name} is a {self.kinds[name]}, expected {kind}")
        return self.names[name]


def print_scenario(sc: Scenario) -> str:
    return json.dumps(sc.raw, sort_keys=True, indent=2) + "\n"


def parse_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"not valid JSON: {err.msg}", f"line {err.lineno}") from None
    if not isinstance(raw, dict):
        raise ParseError("the document must be a JSON object")
    if raw.get("format") != SCENARIO_FORMAT:
        raise ParseError(f"format must be {SCENARIO_FORMAT!r}")
    for key in raw:
        if key != "format" and key not in _SECTIONS:
            raise ParseError(f"unknown section {key!r}")
    sc = Scenario(raw=raw, defaults=dict(raw.get("defaults", {})))
    for bad in set(sc.defaults) - {"depth", "budget"}:
        raise ParseError(f"unknown default {bad!r}")
    builder = _Builder(sc)
    builder.run()
    return sc


class _Builder:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.raw = sc.raw
        self.defs: dict[str, tuple[str, dict]] = {}
        self.building: list[str] = []

    def run(self) -> None:
        for section in ("streams", "blockseqs", "values", "maps", "triples",
                        "schedules", "contexts", "conditions", "tasks"):
            for name, body in self.raw.get(section, {}).items():
                if name in self.defs:
                    raise ParseError(f"duplicate name {name!r}")
                if not isinstance(body, dict):
                    raise ParseError(f"{name}: definition must be an object")
                self.defs[name] = (section, body)
        for name in list(self.defs):
            self.resolve(name)
        self.sc.checks = self._check_list()
        for section, target in (("calibrations", self.sc.calibrations),
                                ("fusions", self.sc.fusions),
                                ("lifts", self.sc.lifts),
                                ("towers", self.sc.towers),
                                ("meets", self.sc.meets),
                                ("stages", self.sc.stages)):
            for name, body in self.raw.get(section, {}).items():
                if name in self.defs or name in target:
                    raise ParseError(f"duplicate name {name!r}")
                if not isinstance(body, dict):
                    raise ParseError(f"{name}: definition must be an object")
                target[name] = body
        if "suite" in self.raw:
            body = self.raw["suite"]
            _require(body, "suite", {"kind", "seed"}, {"instances", "mutations", "depth"})
            self.sc.suite = body

    # -- name resolution ----------------------------------------------

    def resolve(self, name: str):
        if name in self.sc.names:
            return self.sc.names[name]
        if name not in self.defs:
            raise ResolutionError(name)
        if name in self.building:
            raise CycleError(self.building[self.building.index(name):] + [name])
        self.building.append(name)
        section, body = self.defs[name]
        build = getattr(self, f"_build_{section}")
        try:
            obj = build(name, dict(body))
        except KeyError as err:
            raise ParseError(f"{name}: missing field {err.args[0]!r}") from None
        self.building.pop()
        self.sc.names[name] = obj
        self.sc.kinds[name] = section
        return obj

    def _ref(self, name: str, kind: str):
        obj = self.resolve(name)
        if self.sc.kinds[name] != kind:
            raise ParseError(f"{name} is a {self.sc.kinds[name]}, expected {kind}")
        return obj

    # -- sections -------------------------------------------------------

    def _build_streams(self, name: str, body: dict) -> SetStream:
        kind = body.pop("kind", None)
        budget = self.sc.budget
        if kind == "arithmetic":
            _no_extra(name, body, {"start", "step"})
            return arithmetic(int(body["start"]), int(body["step"]), budget, name)
        if kind == "periodic":
            _no_extra(name, body, {"start", "pattern"})
            return periodic(int(body["start"]), [int(x) for x in body["pattern"]], budget, name)
        if kind == "scripted":
            _no_extra(name, body, {"values", "total"})
            return scripted([int(x) for x in body["values"]], budget, name,
                            total=bool(body.get("total", False)))
        if kind == "image":
            _no_extra(name, body, {"source", "map"})
            return image(self._ref(body["source"], "streams"),
                         self._ref(body["map"], "maps"), budget, name)
        if kind == "preimage":
            _no_extra(name, body, {"target", "map", "base"})
            return preimage(self._ref(body["target"], "streams"),
                            self._ref(body["map"], "maps"),
                            self._ref(body["base"], "blockseqs"), budget, name)
        if kind == "blocks":
            _no_extra(name, body, {"seq", "eta"})
            return blocks_union(self._ref(body["seq"], "blockseqs"),
                                int(body.get("eta", 0)), budget, name)
        if kind == "union":
            _no_extra(name, body, {"a", "b"})
            return union(self._ref(body["a"], "streams"), self._ref(body["b"], "streams"),
                         budget, name)
        if kind == "intersection":
            _no_extra(name, body, {"a", "b"})
            return intersect(self._ref(body["a"], "streams"), self._ref(body["b"], "streams"),
                             budget, name)
        raise ParseError(f"{name}: unknown stream kind {kind!r}")

    def _build_blockseqs(self, name: str, body: dict) -> BlockSeq:
        kind = body.pop("kind", None)
        budget = self.sc.budget
        if kind == "triangular":
            _no_extra(name, body, {"offset"})
            return triangular(int(body.get("offset", 0)), budget, name)
        if kind == "scripted":
            _no_extra(name, body, {"blocks", "total"})
            return scripted_blocks([[int(x) for x in blk] for blk in body["blocks"]],
                                   budget, name, total=bool(body.get("total", False)))
        if kind == "from-stream":
            _no_extra(name, body, {"source"})
            return blocks_from_stream(self._ref(body["source"], "streams"), budget, name)
        if kind == "thin":
            _no_extra(name, body, {"base", "picker"})
            return thin(self._ref(body["base"], "blockseqs"),
                        self._ref(body["picker"], "streams"), budget, name)
        if kind == "subselect":
            _no_extra(name, body, {"base", "picker"})
            return subselect(self._ref(body["base"], "blockseqs"),
                             self._ref(body["picker"], "streams"), budget, name)
        raise ParseError(f"{name}: unknown block sequence kind {kind!r}")

    def _build_values(self, name: str, body: dict) -> ValueSeq:
        kind = body.pop("kind", None)
        if kind == "identity":
            _no_extra(name, body, set())
            return ValueSeq.identity()
        if kind == "affine":
            _no_extra(name, body, {"scale", "shift"})
            return ValueSeq.affine(int(body["scale"]), int(body["shift"]), name)
        if kind == "scripted":
            _no_extra(name, body, {"values", "tail_increment"})
            return ValueSeq.scripted([int(x) for x in body["values"]],
                                     bool(body.get("tail_increment", False)), name)
        if kind == "stream":
            _no_extra(name, body, {"source"})
            return ValueSeq.from_stream(self._ref(body["source"], "streams"), name)
        raise ParseError(f"{name}: unknown value sequence kind {kind!r}")

    def _build_maps(self, name: str, body: dict) -> Map:
        kind = body.pop("kind", None)
        if kind == "identity":
            _no_extra(name, body, set())
            return Map.identity()
        if kind == "block":
            _no_extra(name, body, {"base", "values"})
            return Map.block(self._ref(body["base"], "blockseqs"),
                             self._ref(body["values"], "values"), name)
        if kind == "table":
            _no_extra(name, body, {"values"})
            return Map.tabulated([int(x) for x in body["values"]], name)
        if kind == "compose":
            _no_extra(name, body, {"outer", "inner"})
            return Map.compose(self._ref(body["outer"], "maps"),
                               self._ref(body["inner"], "maps"), name)
        raise ParseError(f"{name}: unknown map kind {kind!r}")

    def _build_triples(self, name: str, body: dict) -> NormalTriple:
        _require(body, name, {"map", "values", "base"}, {"range_window"})
        return NormalTriple(self._ref(body["map"], "maps"),
                            self._ref(body["values"], "values"),
                            self._ref(body["base"], "blockseqs"),
                            int(body.get("range_window", 8)))

    def _build_schedules(self, name: str, body: dict) -> Callable[[int], int]:
        kind = body.pop("kind", None)
        if kind == "identity":
            _no_extra(name, body, set())
            return lambda n: n
        if kind == "affine":
            _no_extra(name, body, {"scale", "shift"})
            a, b = int(body["scale"]), int(body["shift"])
            return lambda n: a * n + b
        if kind == "power":
            _no_extra(name, body, {"base"})
            base = int(body["base"])
            return lambda n: base ** n
        if kind == "constant":
            _no_extra(name, body, {"value"})
            v = int(body["value"])
            return lambda n: v
        raise ParseError(f"{name}: unknown schedule kind {kind!r}")

    def _build_contexts(self, name: str, body: dict) -> GenericContext:
        _require(body, name, {"labels", "towers"},
                 {"proj", "top_is_limit", "cert_depth", "decree_all"})
        labels = tuple(int(x) for x in body["labels"])
        towers = {}
        for key, seq_names in body["towers"].items():
            towers[int(key)] = tuple(self._ref(nm, "blockseqs") for nm in seq_names)
        proj = {}
        for key, map_name in body.get("proj", {}).items():
            b, a = _pair(key, name)
            proj[(b, a)] = self._ref(map_name, "maps")
        decree = (lambda label, stream: True) if body.get("decree_all") else None
        return GenericContext(labels=labels, towers=towers, proj=proj,
                              top_is_limit=bool(body.get("top_is_limit", True)),
                              decree=decree,
                              cert_depth=int(body.get("cert_depth", 16)),
                              budget=self.sc.budget)

    def _build_conditions(self, name: str, body: dict) -> tuple[Condition, str]:
        _require(body, name, {"context", "blocks", "gamma", "labels"},
                 {"maps", "witnesses"})
        gamma_raw = body["gamma"]
        gamma = TOP if gamma_raw == "top" else int(gamma_raw)
        labels = tuple(int(x) for x in body["labels"])
        maps = {int(k): self._ref(v, "maps") for k, v in body.get("maps", {}).items()}
        wits = {}
        for k, w in body.get("witnesses", {}).items():
            _require(w, f"{name}.witnesses[{k}]", {"values", "base"}, {"range_window"})
            wits[int(k)] = TripleWitness(self._ref(w["values"], "values"),
                                         self._ref(w["base"], "blockseqs"),
                                         int(w.get("range_window", 8)))
        cond = Condition(self._ref(body["blocks"], "blockseqs"), gamma, labels, maps, wits)
        return cond, body["context"]

    def _build_tasks(self, name: str, body: dict):
        kind = body.pop("kind", None)
        if kind == "decide":
            _no_extra(name, body, {"target"})
            return DecideSet(self._ref(body["target"], "streams"))
        if kind == "thin":
            _no_extra(name, body, {"schedule", "subsets"})
            return Thin(self._ref(body["schedule"], "schedules"),
                        bool(body.get("subsets", True)))
        if kind == "rapidify":
            _no_extra(name, body, {"schedule"})
            return Rapidify(self._ref(body["schedule"], "schedules"))
        if kind == "restrict":
            _no_extra(name, body, {"label", "target"})
            return RestrictImage(int(body["label"]), self._ref(body["target"], "streams"))
        if kind == "add":
            _no_extra(name, body, {"label"})
            return AddCoordinate(int(body["label"]))
        if kind == "kill":
            _no_extra(name, body, {"label", "probe"})
            label = body.get("label")
            label = None if label is None else int(label)
            probe = body.get("probe", [])

            def phi(s, probe=tuple(probe)):
                return set(probe) & s if probe else set()

            return Kill(label, phi)
        if kind == "pullback":
            _no_extra(name, body, {"triple", "pulled", "label"})
            tri = self._ref(body["triple"], "triples")
            return RKPullbackFromTriple(tri, self._ref(body["pulled"], "blockseqs"),
                                        int(body["label"]))
        if kind == "seal":
            _no_extra(name, body, {"labels", "chain", "side_maps", "side_witnesses", "side_level"})
            wit = []
            for w in body["side_witnesses"]:
                wit.append(TripleWitness(self._ref(w["values"], "values"),
                                         self._ref(w["base"], "blockseqs"),
                                         int(w.get("range_window", 8))))
            return SealLimit(tuple(int(x) for x in body["labels"]),
                             tuple(self._ref(nm, "blockseqs") for nm in body["chain"]),
                             tuple(self._ref(nm, "maps") for nm in body["side_maps"]),
                             tuple(wit),
                             tuple(int(x) for x in body["side_level"]))
        raise ParseError(f"{name}: unknown task kind {kind!r}")

    # -- checks -----------------------------------------------------------

    def _check_list(self) -> list[dict]:
        checks = self.raw.get("checks", [])
        if not isinstance(checks, list):
            raise ParseError("checks must be a list")
        out = []
        for i, chk in enumerate(checks):
            if not isinstance(chk, dict) or "op" not in chk:
                raise ParseError(f"checks[{i}]: need an op")
            out.append(dict(chk))
        return out


def RKPullbackFromTriple(tri: NormalTriple, pulled: BlockSeq, label: int):
    from .forcing import RKPullback

    return RKPullback(tri.pi, tri.psi, tri.c, pulled, label)


def _no_extra(name: str, body: dict, allowed: set) -> None:
    extra = set(body) - allowed
    if extra:
        raise ParseError(f"{name}: unknown field(s) {sorted(extra)}")


def _require(body: dict, name: str, required: set, optional: set) -> None:
    missing = required - set(body)
    if missing:
        raise ParseError(f"{name}: missing field(s) {sorted(missing)}")
    extra = set(body) - required - optional
    if extra:
        raise ParseError(f"{name}: unknown field(s) {sorted(extra)}")


def _pair(key: str, where: str) -> tuple[int, int]:
    try:
        b, a = key.split(">")
        return int(b), int(a)
    except ValueError:
        raise ParseError(f"{where}: projection key {key!r} must look like 'b>a'") from None
