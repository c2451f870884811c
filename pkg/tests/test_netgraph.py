import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskrestore.netgraph import (
    NetworkError,
    connected_components,
    degrees,
    is_forest,
    load_network,
    network_from_dict,
    preassign_ders,
)

from conftest import fixture_path


def _tree(parents, damaged=(), subs=(1,)):
    """Network whose node k+2 hangs off parents[k] (parents[k] <= k+1)."""
    n = len(parents) + 1
    nodes = [{"id": i, "load": 1.0, "priority": 1.0, "max_gen": 10.0 if i in subs else 0.0, "substation": i in subs}
             for i in range(1, n + 1)]
    edges = [{"from": p, "to": k + 2, "max_flow": 5.0, "damaged": (p, k + 2) in damaged}
             for k, p in enumerate(parents)]
    return network_from_dict({"nodes": nodes, "edges": edges})


trees = st.integers(1, 12).flatmap(lambda n: st.tuples(*[st.integers(1, k + 1) for k in range(n)]))


def test_toy_loads_with_six_nodes_and_five_edges(toy):
    net = toy["net"]
    assert len(net.nodes) == 6 and len(net.edges) == 5


def test_empty_network_rejected():
    with pytest.raises(NetworkError, match="empty network"):
        network_from_dict({"nodes": [], "edges": []})


def test_dangling_edge_named():
    data = json.loads(fixture_path("toy_network.json").read_text())
    data["edges"].append({"from": 1, "to": 9, "max_flow": 1.0, "damaged": False})
    with pytest.raises(NetworkError, match=r"dangling edge \(1,9\)"):
        network_from_dict(data)


def test_cycle_rejected():
    data = json.loads(fixture_path("toy_network.json").read_text())
    data["edges"].append({"from": 2, "to": 3, "max_flow": 1.0, "damaged": False})
    with pytest.raises(NetworkError, match="not radial"):
        network_from_dict(data)


def test_bad_json_reports_path(tmp_path):
    p = tmp_path / "net.json"
    p.write_text("{nodes: ")
    with pytest.raises(NetworkError, match="net.json"):
        load_network(p)


def test_toy_components(toy):
    net = toy["net"]
    comps = connected_components(net, [(1, 5), (3, 4)])
    assert comps == [{1, 2, 3}, {4}, {5, 6}]


def test_components_without_and_with_full_damage(toy):
    net = toy["net"]
    assert connected_components(net, []) == [set(net.node_ids)]
    assert connected_components(net, [e.key for e in net.edges]) == [{v} for v in net.node_ids]


def test_toy_candidates_tie_to_lowest_id(toy):
    # island {5,6}: both have one neighbour, 5 wins the tie
    assert preassign_ders(toy["net"], [(1, 5), (3, 4)]) == {4, 5}


def test_no_damage_no_candidates(toy):
    assert preassign_ders(toy["net"], []) == set()


def test_large_island_gets_second_host():
    # damaged 1-2 isolates the path 2..12 (11 nodes); 2 and 12 are ends,
    # so the interior nodes 3 and 4 win on degree then id
    net = _tree(list(range(1, 12)), damaged={(1, 2)})
    assert preassign_ders(net, [(1, 2)], size_threshold=10) == {3, 4}
    assert preassign_ders(net, [(1, 2)], size_threshold=12) == {3}


def test_ieee37_one_host_per_island_two_for_large():
    net = load_network(fixture_path("ieee37_network.json"))
    damaged = [e.key for e in net.damaged]
    comps = [c for c in connected_components(net, damaged) if not c & net.substation_ids]
    chosen = preassign_ders(net, damaged)
    for c in comps:
        assert len(chosen & c) == (2 if len(c) >= 10 else 1)


def test_is_forest_examples(toy):
    net = toy["net"]
    assert is_forest(net, [e.key for e in net.edges])
    assert not is_forest(net, [(1, 2), (1, 3), (2, 3)])


@settings(max_examples=60, deadline=None)
@given(parents=trees, data=st.data())
def test_components_partition_nodes(parents, data):
    net = _tree(list(parents))
    keys = [e.key for e in net.edges]
    damaged = data.draw(st.lists(st.sampled_from(keys), unique=True))
    comps = connected_components(net, damaged)
    seen = set()
    for c in comps:
        assert not c & seen
        seen |= c
    assert seen == set(net.node_ids)
    # ordered by smallest member
    assert [min(c) for c in comps] == sorted(min(c) for c in comps)


@settings(max_examples=60, deadline=None)
@given(parents=trees, data=st.data())
def test_candidates_are_max_degree_in_substation_free_islands(parents, data):
    net = _tree(list(parents))
    keys = [e.key for e in net.edges]
    damaged = data.draw(st.lists(st.sampled_from(keys), unique=True))
    chosen = preassign_ders(net, damaged, size_threshold=100)
    deg = degrees(net, damaged)
    comps = connected_components(net, damaged)
    for c in comps:
        hosts = chosen & c
        if c & net.substation_ids:
            assert not hosts
        else:
            (h,) = hosts
            assert deg[h] == max(deg[v] for v in c)


@settings(max_examples=60, deadline=None)
@given(parents=trees, data=st.data())
def test_is_forest_matches_edge_count_on_connected_subgraphs(parents, data):
    net = _tree(list(parents))
    nodes = net.node_ids
    pairs = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]]
    edges = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=3 * len(nodes)))
    touched = {v for e in edges for v in e}
    if not touched:
        return
    # connectivity of the touched subgraph by a small union-find
    parent = {v: v for v in touched}

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    for a, b in edges:
        parent[find(a)] = find(b)
    connected = len({find(v) for v in touched}) == 1
    if connected:
        assert is_forest(net, edges) == (len(edges) == len(touched) - 1)
