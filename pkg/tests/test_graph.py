import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdceg.graph import (
    Clustering,
    Edge,
    EventTree,
    HuedTree,
    ModifiedTree,
    Posterior,
    Rdceg,
    Staging,
    StagingError,
    StructureError,
    build_rdceg,
    canonical_code,
    modify_tree,
    passage_slices,
    positions_from_staging,
)
from rdceg.models import epilepsy_like_model, falls_model, smoking_model


def small_tree():
    return EventTree.from_florets(
        "r",
        {
            "r": [("b", "x"), ("a", "y", True)],
            "x": [("go", "end_x", True), ("drop", "drop_x")],
            "y": [("go", "end_y", True), ("drop", "drop_y")],
        },
    )


def test_florets_assign_breadth_first_ids():
    t = small_tree()
    assert t.names[0] == "r"
    assert [t.names[v] for v in (1, 2)] == ["x", "y"]
    assert t.labels(0) == ("a", "b")  # children sorted by label
    assert t.situations == (0, 1, 2)
    assert t.edge_ref(t.edge_by_label(1, "go").id) == "x/go"
    assert t.edge_from_ref("y/go") == t.edge_by_label(2, "go").id
    assert t.depth(t.edge_by_label(1, "go").child) == 2


@pytest.mark.parametrize(
    "names,edges,message",
    [
        ({0: "r", 1: "a"}, [Edge(0, 0, 1, "x"), Edge(1, 0, 1, "y")], "in-degree"),
        ({0: "r", 1: "a", 2: "b"}, [Edge(0, 0, 1, "x")], "disconnected"),
        ({0: "r", 1: "a", 2: "b"}, [Edge(0, 0, 1, "x"), Edge(1, 0, 2, "x")], "repeated edge labels"),
        ({0: "r", 1: "a"}, [Edge(0, 0, 1, "x"), Edge(0, 0, 1, "y")], "duplicate edge ids"),
    ],
)
def test_tree_validation(names, edges, message):
    with pytest.raises(StructureError, match=message):
        EventTree(names, edges)


def test_repeat_marker_must_be_leaf_pointing_at_situation():
    with pytest.raises(StructureError):
        EventTree({0: "r", 1: "m", 2: "z"}, [Edge(0, 0, 1, "a"), Edge(1, 1, 2, "b")], repeats={1: 0})
    with pytest.raises(StructureError):
        EventTree({0: "r", 1: "m", 2: "z"}, [Edge(0, 0, 1, "a"), Edge(1, 0, 2, "b")], repeats={1: 2})
    with pytest.raises(StructureError, match="unknown situation"):
        EventTree.from_florets("r", {"r": [("a", "@nowhere")]})


def test_modify_tree_prunes_and_renormalises():
    t = small_tree()
    critical = [v for v in t.leaves if t.names[v].startswith("end")]
    probs = {e.id: p for e, p in zip(t.edges, [0.5, 0.5, 0.6, 0.4, 0.9, 0.1])}
    m = modify_tree(t, critical, probs)
    assert {t.names[v] for v in m.removed} == {"drop_x", "drop_y"}
    for s in m.tree.situations:
        assert sum(m.probs[e.id] for e in m.tree.children(s)) == pytest.approx(1.0)
        assert m.renormalized[s] == (s != 0)
    # identity when nothing is pruned
    assert modify_tree(m.tree, m.tree.leaves).tree == m.tree


def test_modify_tree_cascades_through_emptied_situations():
    t = EventTree.from_florets(
        "r", {"r": [("a", "s"), ("b", "end")], "s": [("c", "drop1"), ("d", "drop2")]}
    )
    m = modify_tree(t, [v for v in t.leaves if t.names[v] == "end"])
    assert [m.tree.names[v] for v in m.tree.situations] == ["r"]
    probs = {e.id: 0.5 for e in t.edges}
    with pytest.raises(StructureError, match="onward mass"):
        modify_tree(t, [v for v in t.leaves if t.names[v] == "end"], probs)


def test_critical_events_must_be_leaves():
    t = small_tree()
    with pytest.raises(StructureError):
        modify_tree(t, [0])


def test_staging_validation():
    t = modify_tree(small_tree(), [v for v in small_tree().leaves if small_tree().names[v].startswith("end")]).tree
    with pytest.raises(StagingError, match="overlap"):
        Staging.from_cells(t, [(0, 1), (1, 2)])
    with pytest.raises(StagingError, match="cover"):
        Staging.from_cells(t, [(0,), (1,)])
    # "r" has labels (a, b), "x" has (go,): they cannot share a stage
    with pytest.raises(StagingError, match="label"):
        Staging.from_cells(t, [(0, 1), (2,)])
    s = Staging.from_cells(t, [(2, 1), (0,)])
    assert s.cells == ((0,), (1, 2)) and s.stage_of(2) == 1


def test_clustering_shapes_must_agree():
    t = small_tree()
    timed = sorted(t.timed_edges)
    with pytest.raises(StagingError, match="shape"):
        Clustering.from_cells(t, [timed], {e: float(i + 1) for i, e in enumerate(timed)})
    c = Clustering.from_cells(t, [timed], {e: 2.0 for e in timed})
    assert c.kappa_of(timed[0]) == 2.0


def test_falls_positions_and_slices():
    m = falls_model()
    r = m.rdceg()
    assert r.n_positions == 17
    assert set(r.names[:-1]) == {f"w{i}" for i in range(17)}
    assert r.names[r.sink] == "w_inf"
    assert len(passage_slices(r)) == 2
    # stage {w3, w6} is shared but their subtrees differ (community vs communal
    # follow-up), so they remain separate positions
    assert r.stage(r.vertex("w3")) == r.stage(r.vertex("w6"))


def test_smoking_positions():
    a, b = smoking_model("a").rdceg(), smoking_model("b").rdceg()
    assert a.names == ("w0", "w1", "w2", "w_inf")
    assert b.names == ("w0", "w1", "w_inf")
    labels = sorted((b.names[e.source], b.names[e.target], e.label) for e in b.edges)
    assert labels == [("w0", "w1", "not_use"), ("w0", "w1", "use"), ("w1", "w0", "fail"), ("w1", "w_inf", "quit")]
    assert [b.edges[i].label for i in b.cyclic_edges] == ["fail"]


def test_epilepsy_has_two_slices_and_no_cycles():
    r = epilepsy_like_model().rdceg()
    assert r.cyclic_edges == ()
    slices = passage_slices(r)
    assert len(slices) == 2
    assert all(r.names[v].endswith(".s2") for v in slices[1].roots)


def test_inconsistent_positions_rejected():
    m = smoking_model("a")
    hued = m.hued()
    t = hued.tree
    with pytest.raises(StagingError):
        build_rdceg(hued, [(t.situation_id("w0"),), (t.situation_id("w1"), t.situation_id("w2"))])


def test_self_loop_rejected():
    t = EventTree.from_florets("r", {"r": [("again", "@r", True), ("stop", "end", True)]})
    m = modify_tree(t, [v for v in t.leaves])
    hued = HuedTree(m, Staging.singletons(m.tree), Clustering.singletons(m.tree))
    with pytest.raises(StructureError, match="self-loop"):
        build_rdceg(hued, positions_from_staging(hued))


def test_serialisation_roundtrip():
    m = falls_model()
    r = m.rdceg()
    again = Rdceg.from_dict(json.loads(json.dumps(r.to_dict())))
    assert again.names == r.names
    assert again.edges == r.edges
    assert again.posterior == Posterior.from_dict(r.posterior.to_dict())
    assert EventTree.from_dict(m.tree.to_dict()) == m.tree


# --- isomorphism against brute force ----------------------------------------

LABELS = "abc"


@st.composite
def hued_trees(draw):
    """Random trees of at most 8 vertices with random compatible stagings and clusterings."""
    n = draw(st.integers(2, 8))
    names = {0: "v0"}
    edges = []
    kids = {0: 0}
    for v in range(1, n):
        open_parents = [p for p in names if kids.get(p, 0) < len(LABELS)]
        p = draw(st.sampled_from(open_parents))
        edges.append(Edge(len(edges), p, v, LABELS[kids.get(p, 0)], draw(st.booleans())))
        kids[p] = kids.get(p, 0) + 1
        kids.setdefault(v, 0)
        names[v] = f"v{v}"
    tree = EventTree(names, edges)
    critical = frozenset(v for v in tree.leaves if draw(st.booleans()))
    by_labels = {}
    for s in tree.situations:
        by_labels.setdefault(tree.labels(s), []).append(s)
    cells = []
    for group in by_labels.values():
        tags = [draw(st.integers(0, 1)) for _ in group]
        for t in set(tags):
            cells.append([s for s, x in zip(group, tags) if x == t])
    timed = sorted(tree.timed_edges)
    tags = [draw(st.integers(0, 1)) for _ in timed]
    ccells = [[e for e, x in zip(timed, tags) if x == t] for t in set(tags)]
    staging = Staging.from_cells(tree, cells)
    clustering = Clustering.from_cells(tree, ccells, [1.0] * len(ccells))
    return HuedTree(ModifiedTree(tree, critical), staging, clustering)


def brute_isomorphic(h, a, b):
    t = h.tree
    ka, kb = t.children(a), t.children(b)
    if not ka or not kb:
        return not ka and not kb and ((a in h.modified.critical) == (b in h.modified.critical))
    if h.staging.stage_of(a) != h.staging.stage_of(b) or len(ka) != len(kb):
        return False

    def same_edge(x, y):
        cx = h.clustering.cluster_of(x.id) if x.timed else None
        cy = h.clustering.cluster_of(y.id) if y.timed else None
        return x.label == y.label and x.timed == y.timed and cx == cy

    return any(
        all(same_edge(x, y) and brute_isomorphic(h, x.child, y.child) for x, y in zip(ka, perm))
        for perm in itertools.permutations(kb)
    )


@given(hued_trees())
def test_positions_match_brute_force_isomorphism(h):
    positions = positions_from_staging(h)
    pos_of = {s: i for i, c in enumerate(positions) for s in c}
    for a, b in itertools.combinations(h.tree.situations, 2):
        same = pos_of[a] == pos_of[b]
        assert same == brute_isomorphic(h, a, b)
        assert same == (canonical_code(h, a) == canonical_code(h, b))
