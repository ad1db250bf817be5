import json

import pytest

from aag.errors import ParseError, ValidationError
from aag.plans import analyze_plan
from aag.ring import (
    build_access_plan,
    check_ring,
    derive_attributes,
    load_ring,
    ring_from_dict,
    ring_to_dict,
    validate_ring,
)
from aag.types import AttributeType as T

from conftest import RING_PATH


def test_seed_ring_is_valid(base_ring):
    assert validate_ring(base_ring) == []


def test_round_trip(base_ring):
    doc = ring_to_dict(base_ring)
    again = ring_from_dict(json.loads(json.dumps(doc)))
    assert ring_to_dict(again) == doc


def test_version_is_enforced():
    doc = json.loads(RING_PATH.read_text())
    doc["version"] = "something_else"
    with pytest.raises(ParseError):
        ring_from_dict(doc)


def _mutate(change):
    doc = json.loads(RING_PATH.read_text())
    change(doc)
    return ring_from_dict(doc)


def test_unknown_table_in_join_is_flagged():
    r = _mutate(lambda d: d["joins"][0].update({"left": "nowhere.state_id"}))
    codes = {(v.code, v.path) for v in validate_ring(r)}
    assert ("UnknownTable", "joins.wildfire_state.left") in codes


def test_missing_source_is_flagged():
    def change(d):
        del d["entities"][0]["attributes"][1]["source"]

    r = _mutate(change)
    violations = validate_ring(r)
    assert any(v.code == "MissingSource"
               and v.path == "entities.Wildfire.attributes.size.source"
               for v in violations)


def test_duplicate_attribute_is_flagged():
    def change(d):
        attrs = d["entities"][0]["attributes"]
        attrs.append(dict(attrs[1]))

    r = _mutate(change)
    assert any(v.code == "DuplicateIdentifier" for v in validate_ring(r))


def test_broken_join_path_is_flagged():
    def change(d):
        d["relationships"][0]["join_path"] = ["no_such_join"]

    r = _mutate(change)
    assert any(v.code == "BrokenJoinPath" for v in validate_ring(r))


def test_check_ring_raises_with_violations():
    def change(d):
        d["relationships"][0]["join_path"] = []

    r = _mutate(change)
    with pytest.raises(ValidationError) as e:
        check_ring(r)
    assert e.value.violations


def test_derive_attributes_numeric_gets_all_eight(base_ring):
    r = derive_attributes(base_ring)
    wildfire = r.entity("Wildfire")
    derived = {a.name for a in wildfire.attributes if a.derived}
    size_derived = {n for n in derived if n.endswith("wildfire size")}
    assert size_derived == {
        "average wildfire size", "count wildfire size",
        "count unique wildfire size", "maximum wildfire size",
        "median wildfire size", "minimum wildfire size",
        "standard deviation wildfire size", "sum wildfire size",
    }


def test_derive_attributes_datetime_gets_order_stats_only(base_ring):
    r = derive_attributes(base_ring)
    derived = {a.name for a in r.entity("Wildfire").attributes
               if a.derived and a.base_attribute == "year"}
    assert derived == {"maximum year", "median year", "minimum year"}


def test_derive_attributes_categorical_gets_none(base_ring):
    r = derive_attributes(base_ring)
    assert not any(a.derived and a.base_attribute == "name"
                   for a in r.entity("State").attributes)


def test_derive_attributes_is_idempotent(base_ring):
    once = derive_attributes(base_ring)
    twice = derive_attributes(once)
    assert ring_to_dict(once) == ring_to_dict(twice)


def test_derived_units_follow_the_base(base_ring):
    r = derive_attributes(base_ring)
    avg = r.attribute("Wildfire", "average wildfire size")
    cnt = r.attribute("Wildfire", "count wildfire size")
    assert avg.units == ("acre", "acres")
    assert cnt.units is None


def test_access_plan_for_base_attribute(ring):
    plan = build_access_plan(ring, "Wildfire", "size")
    info = analyze_plan(ring, plan)
    columns = info[plan.result].columns
    assert [c.name for _, c in columns] == ["size"]
    assert T.METRIC in columns[0][1].types


def test_access_plan_for_derived_attribute(ring):
    plan = build_access_plan(ring, "Wildfire", "average wildfire size")
    ops = {s.op for s in plan.steps.values()}
    assert "average" in ops
    info = analyze_plan(ring, plan)
    assert info[plan.result].columns[0][1].name == "average size"


def test_access_plan_unknown_attribute(ring):
    with pytest.raises(ParseError):
        build_access_plan(ring, "Wildfire", "no_such_thing")


def test_load_ring_rejects_bad_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_ring(bad)
