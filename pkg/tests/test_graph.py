import json

import pytest

from coalition_attrib.errors import (DataIoError, GraphCycleError,
                                     GraphError, GraphFormatError,
                                     GraphSchemaMismatchError)
from coalition_attrib.graph import CausalGraph
from coalition_attrib.schema import Feature, FeatureSchema


def test_topological_order_respects_edges_and_declaration():
    g = CausalGraph(("c", "a", "b"), (("a", "b"),))
    order = g.topological_order
    # ties broken by declaration order; a before b always
    assert order.index("a") < order.index("b")
    assert order[0] == "c"


def test_cycle_detected():
    with pytest.raises(GraphCycleError):
        CausalGraph(("a", "b"), (("a", "b"), ("b", "a")))


def test_self_loop_rejected():
    with pytest.raises(GraphError):
        CausalGraph(("a",), (("a", "a"),))


def test_duplicate_edge_rejected():
    with pytest.raises(GraphError):
        CausalGraph(("a", "b"), (("a", "b"), ("a", "b")))


def test_unknown_endpoint_rejected():
    with pytest.raises(GraphError):
        CausalGraph(("a",), (("a", "z"),))


def test_duplicate_node_rejected():
    with pytest.raises(GraphError):
        CausalGraph(("a", "a"), ())


def test_parents_children():
    g = CausalGraph(("a", "b", "c"), (("a", "c"), ("b", "c")))
    assert g.parents("c") == ("a", "b")
    assert g.children("a") == ("c",)
    assert g.parents("a") == ()


def test_descendants_strict():
    g = CausalGraph(("a", "b", "c"), (("a", "b"), ("b", "c")))
    assert g.descendants(["a"]) == frozenset({"b", "c"})
    assert g.descendants(["b"]) == frozenset({"c"})
    assert g.descendants(["c"]) == frozenset()


def test_from_mapping_shape_checks():
    with pytest.raises(GraphFormatError):
        CausalGraph.from_mapping({"nodes": ["a"]})
    with pytest.raises(GraphFormatError):
        CausalGraph.from_mapping({"nodes": ["a"], "edges": [["a"]]})
    with pytest.raises(GraphFormatError):
        CausalGraph.from_mapping({"nodes": "a", "edges": []})


def test_load_roundtrip(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(
        {"nodes": ["x", "y"], "edges": [["x", "y"]]}))
    g = CausalGraph.load(str(path))
    assert g.nodes == ("x", "y")
    assert g.edges == (("x", "y"),)


def test_load_errors(tmp_path):
    with pytest.raises(DataIoError):
        CausalGraph.load(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(GraphFormatError):
        CausalGraph.load(str(bad))


def test_empty_matches_schema():
    schema = FeatureSchema((Feature("p"), Feature("q")))
    g = CausalGraph.empty(schema)
    assert g.nodes == ("p", "q")
    assert g.edges == ()
    g.check_schema(schema)


def test_check_schema_mismatch():
    schema = FeatureSchema((Feature("p"), Feature("q")))
    g = CausalGraph(("p", "r"), ())
    with pytest.raises(GraphSchemaMismatchError) as err:
        g.check_schema(schema)
    msg = str(err.value)
    assert "q" in msg and "r" in msg
