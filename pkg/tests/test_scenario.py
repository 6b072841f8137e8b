import json

import pytest

from blocklab import CycleError, ParseError, ResolutionError, parse_scenario, print_scenario

MINIMAL = {
    "format": "blocklab-scenario/1",
    "blockseqs": {"c": {"kind": "triangular"}},
    "checks": [{"op": "blocks", "seq": "c", "depth": 10}],
}


def test_minimal_document():
    sc = parse_scenario(json.dumps(MINIMAL))
    assert sc.size() == 2
    assert sc.kinds["c"] == "blockseqs"


def test_round_trip_identical():
    sc = parse_scenario(json.dumps(MINIMAL))
    text = print_scenario(sc)
    sc2 = parse_scenario(text)
    assert sc2.raw == sc.raw
    assert print_scenario(sc2) == text


def test_unresolved_name():
    doc = {
        "format": "blocklab-scenario/1",
        "streams": {"A": {"kind": "image", "source": "D3", "map": "id"}},
        "maps": {"id": {"kind": "identity"}},
    }
    with pytest.raises(ResolutionError) as err:
        parse_scenario(json.dumps(doc))
    assert err.value.missing == "D3"


def test_cycle_through_lazy_image():
    doc = {
        "format": "blocklab-scenario/1",
        "streams": {"S": {"kind": "image", "source": "U", "map": "m"},
                    "U": {"kind": "blocks", "seq": "b"}},
        "blockseqs": {"b": {"kind": "thin", "base": "c", "picker": "S"},
                      "c": {"kind": "triangular"}},
        "maps": {"m": {"kind": "block", "base": "b", "values": "v"}},
        "values": {"v": {"kind": "identity"}},
    }
    with pytest.raises(CycleError) as err:
        parse_scenario(json.dumps(doc))
    assert "S" in err.value.names


def test_duplicate_names_rejected():
    doc = {
        "format": "blocklab-scenario/1",
        "streams": {"x": {"kind": "arithmetic", "start": 0, "step": 1}},
        "blockseqs": {"x": {"kind": "triangular"}},
    }
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(doc))


def test_unknown_fields_rejected():
    doc = {"format": "blocklab-scenario/1",
           "blockseqs": {"c": {"kind": "triangular", "bogus": 3}}}
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(doc))
    doc2 = {"format": "blocklab-scenario/1", "mystery": {}}
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(doc2))


def test_missing_field_rejected():
    doc = {"format": "blocklab-scenario/1",
           "streams": {"a": {"kind": "arithmetic", "start": 0}}}
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(doc))


def test_format_version_required():
    with pytest.raises(ParseError):
        parse_scenario(json.dumps({"blockseqs": {}}))
    with pytest.raises(ParseError):
        parse_scenario("not json")


def test_kind_mismatch_between_sections():
    doc = {
        "format": "blocklab-scenario/1",
        "streams": {"a": {"kind": "arithmetic", "start": 0, "step": 1}},
        "blockseqs": {"t": {"kind": "thin", "base": "a", "picker": "a"}},
    }
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(doc))


def test_objects_are_usable():
    doc = dict(MINIMAL)
    doc["streams"] = {"e": {"kind": "arithmetic", "start": 0, "step": 2}}
    doc["values"] = {"psi": {"kind": "identity"}}
    doc["maps"] = {"pi": {"kind": "block", "base": "c", "values": "psi"}}
    sc = parse_scenario(json.dumps(doc))
    assert sc.get("e", "streams").prefix(3) == (0, 2, 4)
    assert sc.get("pi", "maps").apply(4) == 2
