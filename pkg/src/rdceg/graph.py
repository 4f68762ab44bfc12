"""Event trees, modified and hued trees, and the reduced dynamic CEG.

Infinite trees are held as finite templates.  A *repeat marker* is a leaf
standing for a copy of the subtree rooted at some situation of the template;
the edge into it becomes a cyclic edge of the RDCEG.  Edges may also be
declared as passage boundaries without repetition, which is how an unrolled
finite model (such as a two-seizure study) delimits its passage-slices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

__all__ = [
    "StructureError",
    "StagingError",
    "Edge",
    "EventTree",
    "ModifiedTree",
    "Staging",
    "Clustering",
    "HuedTree",
    "RdcegEdge",
    "Posterior",
    "PassageSlice",
    "Rdceg",
    "modify_tree",
    "positions_from_staging",
    "canonical_code",
    "build_rdceg",
    "passage_slices",
    "SINK_NAME",
]

SINK_NAME = "w_inf"
TREE_SCHEMA = "rdceg.event_tree/1"
RDCEG_SCHEMA = "rdceg.graph/1"


class StructureError(ValueError):
    """Raised when a tree or graph violates its structural invariants."""


class StagingError(ValueError):
    """Raised when a staging, clustering or position partition is inconsistent."""


@dataclass(frozen=True)
class Edge:
    id: int
    parent: int
    child: int
    label: str
    timed: bool = False


class EventTree:
    """Rooted, edge-labelled tree with a flagged subset of timed edges.

    Vertex ids are integers assigned breadth-first from the root (0) when the
    tree is built with :meth:`from_florets`; pruning keeps the surviving ids.
    """

    def __init__(
        self,
        names: Mapping[int, str],
        edges: Sequence[Edge],
        root: int = 0,
        repeats: Mapping[int, int] | None = None,
        boundaries: Iterable[int] = (),
    ):
        self.names = dict(names)
        self.edges = tuple(edges)
        self.root = root
        self.repeats = dict(repeats or {})
        self.boundaries = frozenset(boundaries)
        self._edge_by_id = {e.id: e for e in self.edges}
        self._children: dict[int, list[Edge]] = {v: [] for v in self.names}
        self._parent: dict[int, Edge] = {}
        self._validate()
        for kids in self._children.values():
            kids.sort(key=lambda e: e.label)

    def _validate(self):
        if self.root not in self.names:
            raise StructureError("root is not a vertex")
        if len(self._edge_by_id) != len(self.edges):
            raise StructureError("duplicate edge ids")
        for e in self.edges:
            if e.parent not in self.names or e.child not in self.names:
                raise StructureError(f"edge {e.id} references an unknown vertex")
            if e.child in self._parent:
                raise StructureError(f"vertex {e.child} has in-degree > 1")
            if e.child == self.root:
                raise StructureError("the root cannot have a parent")
            self._parent[e.child] = e
            self._children[e.parent].append(e)
        for v in self.names:
            if v != self.root and v not in self._parent:
                raise StructureError(f"vertex {v} is disconnected from the root")
        seen = set()
        queue = deque([self.root])
        while queue:
            v = queue.popleft()
            if v in seen:
                raise StructureError("cycle detected")
            seen.add(v)
            queue.extend(e.child for e in self._children[v])
        if len(seen) != len(self.names):
            raise StructureError("tree is not connected")
        for v, kids in self._children.items():
            labels = [e.label for e in kids]
            if len(set(labels)) != len(labels):
                raise StructureError(f"situation {self.names[v]!r} has repeated edge labels")
        for leaf, target in self.repeats.items():
            if self._children.get(leaf):
                raise StructureError("repeat markers must be leaves")
            if not self._children.get(target):
                raise StructureError("a repeat marker must point at a situation")
        if not self.boundaries <= set(self._edge_by_id):
            raise StructureError("boundary edges must be tree edges")
        sit_names = [self.names[v] for v in self.situations]
        if len(set(sit_names)) != len(sit_names):
            raise StructureError("situation names must be unique")

    # construction ------------------------------------------------------

    @classmethod
    def from_florets(
        cls,
        root: str,
        florets: Mapping[str, Sequence[tuple]],
        boundaries: Iterable[tuple[str, str]] = (),
    ) -> "EventTree":
        """Build a tree template from named florets.

        ``florets[name]`` lists ``(label, target)`` or ``(label, target, timed)``.
        A target naming another floret is its child; ``"@name"`` is a repeat
        marker for the subtree at ``name``; anything else is a fresh leaf.
        ``boundaries`` holds ``(situation, label)`` pairs of non-repeating
        passage boundaries.
        """
        names: dict[int, str] = {0: root}
        edges: list[Edge] = []
        repeats_by_name: dict[int, str] = {}
        placed = {root: 0}
        queue = deque([root])
        while queue:
            parent = queue.popleft()
            for item in florets.get(parent, ()):
                label, target = item[0], item[1]
                timed = bool(item[2]) if len(item) > 2 else False
                vid = len(names)
                if target in florets:
                    if target in placed:
                        raise StructureError(f"situation {target!r} placed twice; use '@{target}'")
                    placed[target] = vid
                    queue.append(target)
                    names[vid] = target
                elif target.startswith("@"):
                    repeats_by_name[vid] = target[1:]
                    names[vid] = target
                else:
                    names[vid] = target
                edges.append(Edge(len(edges), placed[parent], vid, label, timed))
        missing = set(florets) - set(placed)
        if missing:
            raise StructureError(f"unreachable florets: {sorted(missing)}")
        repeats = {}
        for vid, target in repeats_by_name.items():
            if target not in placed:
                raise StructureError(f"repeat of unknown situation {target!r}")
            repeats[vid] = placed[target]
        tree = cls(names, edges, 0, repeats)
        bset = [tree.edge_by_label(tree.situation_id(s), lab).id for s, lab in boundaries]
        return cls(names, edges, 0, repeats, bset)

    # queries -----------------------------------------------------------

    @property
    def vertices(self) -> tuple[int, ...]:
        return tuple(sorted(self.names))

    def edge(self, eid: int) -> Edge:
        return self._edge_by_id[eid]

    def children(self, v: int) -> tuple[Edge, ...]:
        """Out-edges of ``v`` sorted by label."""
        return tuple(self._children[v])

    def parent_edge(self, v: int) -> Edge | None:
        return self._parent.get(v)

    @property
    def situations(self) -> tuple[int, ...]:
        return tuple(sorted(v for v, kids in self._children.items() if kids))

    @property
    def leaves(self) -> tuple[int, ...]:
        """Terminal leaves; repeat markers are continuations, not leaves."""
        return tuple(
            sorted(v for v, kids in self._children.items() if not kids and v not in self.repeats)
        )

    @property
    def timed_edges(self) -> frozenset[int]:
        return frozenset(e.id for e in self.edges if e.timed)

    def labels(self, s: int) -> tuple[str, ...]:
        return tuple(e.label for e in self._children[s])

    def edge_by_label(self, s: int, label: str) -> Edge:
        for e in self._children[s]:
            if e.label == label:
                return e
        raise KeyError(f"no edge {label!r} out of {self.names[s]!r}")

    def situation_id(self, name: str) -> int:
        for v in self.situations:
            if self.names[v] == name:
                return v
        raise KeyError(f"unknown situation {name!r}")

    def edge_ref(self, eid: int) -> str:
        e = self._edge_by_id[eid]
        return f"{self.names[e.parent]}/{e.label}"

    def edge_from_ref(self, ref: str) -> int:
        sit, _, label = ref.rpartition("/")
        return self.edge_by_label(self.situation_id(sit), label).id

    def resolve(self, v: int) -> int:
        """Follow a repeat marker to the situation it copies."""
        return self.repeats.get(v, v)

    def depth(self, v: int) -> int:
        d = 0
        while v != self.root:
            v = self._parent[v].parent
            d += 1
        return d

    # serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": TREE_SCHEMA,
            "root": self.root,
            "vertices": {str(v): self.names[v] for v in self.vertices},
            "edges": [
                {"id": e.id, "parent": e.parent, "child": e.child, "label": e.label}
                for e in self.edges
            ],
            "timed_edges": sorted(self.timed_edges),
            "repeats": {str(k): v for k, v in sorted(self.repeats.items())},
            "boundaries": sorted(self.boundaries),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EventTree":
        if d.get("schema") != TREE_SCHEMA:
            raise StructureError(f"unsupported tree schema {d.get('schema')!r}")
        timed = set(d.get("timed_edges", ()))
        edges = [Edge(x["id"], x["parent"], x["child"], x["label"], x["id"] in timed) for x in d["edges"]]
        names = {int(k): v for k, v in d["vertices"].items()}
        repeats = {int(k): v for k, v in d.get("repeats", {}).items()}
        return cls(names, edges, d.get("root", 0), repeats, d.get("boundaries", ()))

    def __eq__(self, other):
        if not isinstance(other, EventTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((tuple(self.edges), self.root))

    def __repr__(self):
        return f"EventTree({len(self.names)} vertices, {len(self.edges)} edges)"


@dataclass(frozen=True, eq=False)
class ModifiedTree:
    tree: EventTree
    critical: frozenset
    probs: Mapping[int, float] | None = None
    renormalized: Mapping[int, bool] = field(default_factory=dict)
    removed: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, ModifiedTree):
            return NotImplemented
        return (
            self.tree == other.tree
            and self.critical == other.critical
            and (self.probs or {}) == (other.probs or {})
        )


def modify_tree(
    tree: EventTree,
    critical: Iterable[int],
    probs: Mapping[int, float] | None = None,
) -> ModifiedTree:
    """Prune non-critical leaves and renormalise out-probabilities.

    ``probs`` maps edge ids to transition probabilities.  A situation whose
    every out-edge is pruned becomes a leaf; as it is not critical it is
    pruned in turn, unless ``probs`` gives it onward mass, which is an error.
    """
    critical = frozenset(critical)
    if not critical <= set(tree.leaves):
        raise StructureError("critical terminating events must be leaves of the tree")
    if probs is not None:
        for s in tree.situations:
            total = sum(probs.get(e.id, 0.0) for e in tree.children(s))
            if any(probs.get(e.id, 0.0) < 0 for e in tree.children(s)) or total > 1 + 1e-12:
                raise StructureError(f"invalid probabilities at {tree.names[s]!r}")
    alive = set(tree.names)
    kids = {v: {e.child for e in tree.children(v)} for v in tree.names}
    drop = [v for v in tree.leaves if v not in critical]
    removed = []
    while drop:
        v = drop.pop()
        if v not in alive:
            continue
        alive.discard(v)
        removed.append(v)
        pe = tree.parent_edge(v)
        if pe is None:
            raise StructureError("the whole tree was pruned")
        kids[pe.parent].discard(v)
        if not kids[pe.parent]:
            p = pe.parent
            if probs is not None and any(probs.get(e.id, 0.0) > 0 for e in tree.children(p)):
                raise StructureError(
                    f"situation {tree.names[p]!r} lost every out-edge but carries onward mass"
                )
            drop.append(p)
    edges = [e for e in tree.edges if e.child in alive]
    names = {v: n for v, n in tree.names.items() if v in alive}
    repeats = {k: t for k, t in tree.repeats.items() if k in alive}
    for k, t in repeats.items():
        if t not in alive:
            raise StructureError(f"repeat marker points at pruned situation {tree.names[t]!r}")
    new = EventTree(names, edges, tree.root, repeats, [b for b in tree.boundaries if b in {e.id for e in edges}])
    flags = {}
    new_probs = None
    if probs is not None:
        new_probs = {}
        for s in new.situations:
            out = new.children(s)
            total = sum(probs.get(e.id, 0.0) for e in out)
            if total <= 0:
                raise StructureError(f"no probability mass left at {new.names[s]!r}")
            for e in out:
                new_probs[e.id] = probs.get(e.id, 0.0) / total
            flags[s] = len(out) != len(tree.children(s)) or abs(total - 1.0) > 1e-12
    else:
        flags = {s: len(new.children(s)) != len(tree.children(s)) for s in new.situations}
    return ModifiedTree(new, critical & alive, new_probs, flags, tuple(sorted(removed)))


@dataclass(frozen=True)
class Staging:
    """Partition of situations into stages with label alignment.

    Members of a stage carry literally equal label sets; the aligned edge
    order is the sorted label order.
    """

    cells: tuple[tuple[int, ...], ...]
    labels: tuple[tuple[str, ...], ...]

    @classmethod
    def from_cells(cls, tree: EventTree, cells: Iterable[Iterable[int]]) -> "Staging":
        cells = tuple(sorted(tuple(sorted(c)) for c in cells))
        flat = [s for c in cells for s in c]
        if len(flat) != len(set(flat)):
            raise StagingError("stages overlap")
        if set(flat) != set(tree.situations):
            raise StagingError("stages must cover every situation")
        labels = []
        for c in cells:
            ls = {tree.labels(s) for s in c}
            if len(ls) != 1:
                names = [tree.names[s] for s in c]
                raise StagingError(f"stage {names} mixes edge label sets")
            labels.append(ls.pop())
        return cls(cells, tuple(labels))

    @classmethod
    def singletons(cls, tree: EventTree) -> "Staging":
        return cls.from_cells(tree, [(s,) for s in tree.situations])

    def stage_of(self, s: int) -> int:
        return self._index()[s]

    def _index(self):
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {s: u for u, c in enumerate(self.cells) for s in c}
            object.__setattr__(self, "_idx", idx)
        return idx

    def to_names(self, tree: EventTree) -> list[list[str]]:
        return [[tree.names[s] for s in c] for c in self.cells]

    @classmethod
    def from_names(cls, tree: EventTree, cells) -> "Staging":
        return cls.from_cells(tree, [[tree.situation_id(n) for n in c] for c in cells])


@dataclass(frozen=True)
class Clustering:
    """Partition of the timed edges into clusters, each with one Weibull shape."""

    cells: tuple[tuple[int, ...], ...]
    kappa: tuple[float, ...]

    @classmethod
    def from_cells(cls, tree: EventTree, cells, kappa) -> "Clustering":
        """``kappa`` is one value per cell or a mapping edge id -> shape."""
        cells = [tuple(sorted(c)) for c in cells]
        order = sorted(range(len(cells)), key=lambda i: cells[i])
        flat = [e for c in cells for e in c]
        if len(flat) != len(set(flat)):
            raise StagingError("clusters overlap")
        if set(flat) != set(tree.timed_edges):
            raise StagingError("clusters must cover every timed edge")
        if isinstance(kappa, Mapping):
            ks = []
            for c in cells:
                vals = {float(kappa[e]) for e in c}
                if len(vals) != 1:
                    raise StagingError("edges in one cluster must share a Weibull shape")
                ks.append(vals.pop())
        else:
            ks = [float(k) for k in kappa]
            if len(ks) != len(cells):
                raise StagingError("need one shape per cluster")
        if any(not k > 0 for k in ks):
            raise StagingError("Weibull shapes must be positive")
        return cls(tuple(cells[i] for i in order), tuple(ks[i] for i in order))

    @classmethod
    def singletons(cls, tree: EventTree, kappa=1.0) -> "Clustering":
        timed = sorted(tree.timed_edges)
        if not isinstance(kappa, Mapping):
            kappa = {e: kappa for e in timed}
        return cls.from_cells(tree, [(e,) for e in timed], kappa)

    def cluster_of(self, eid: int) -> int:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {e: c for c, cell in enumerate(self.cells) for e in cell}
            object.__setattr__(self, "_idx", idx)
        return idx[eid]

    def kappa_of(self, eid: int) -> float:
        return self.kappa[self.cluster_of(eid)]

    def to_names(self, tree: EventTree) -> list[list[str]]:
        return [[tree.edge_ref(e) for e in c] for c in self.cells]

    @classmethod
    def from_names(cls, tree: EventTree, cells, kappa) -> "Clustering":
        return cls.from_cells(tree, [[tree.edge_from_ref(r) for r in c] for c in cells], kappa)


@dataclass(frozen=True)
class HuedTree:
    modified: ModifiedTree
    staging: Staging
    clustering: Clustering

    def __post_init__(self):
        tree = self.modified.tree
        if {s for c in self.staging.cells for s in c} != set(tree.situations):
            raise StagingError("staging does not match the modified tree")
        if {e for c in self.clustering.cells for e in c} != set(tree.timed_edges):
            raise StagingError("clustering does not match the modified tree")

    @property
    def tree(self) -> EventTree:
        return self.modified.tree

    def stage_color(self, s: int) -> int | None:
        """Stage index for coloured situations; ``None`` for singleton stages."""
        u = self.staging.stage_of(s)
        return u if len(self.staging.cells[u]) > 1 else None

    def cluster_color(self, eid: int) -> int | None:
        if not self.tree.edge(eid).timed:
            return None
        c = self.clustering.cluster_of(eid)
        return c if len(self.clustering.cells[c]) > 1 else None


def _edge_signature(hued: HuedTree, e: Edge):
    return (e.label, e.timed, hued.clustering.cluster_of(e.id) if e.timed else None)


def canonical_code(hued: HuedTree, s: int, depth: int | None = None):
    """Nested-tuple canonical encoding of the coloured subtree rooted at ``s``.

    Two finite coloured subtrees are isomorphic under a structure-, colour-
    and label-preserving map iff their codes are equal.  Repeat markers are
    expanded, so ``depth`` must be given for templates with repetition.
    """
    tree = hued.tree
    v = tree.resolve(s)
    kids = tree.children(v)
    if not kids:
        return ("leaf", v in hued.modified.critical)
    if depth is not None and depth <= 0:
        return ("stage", hued.staging.stage_of(v))
    nxt = None if depth is None else depth - 1
    return (
        "stage",
        hued.staging.stage_of(v),
        tuple(sorted((_edge_signature(hued, e), canonical_code(hued, e.child, nxt)) for e in kids)),
    )


def positions_from_staging(hued: HuedTree, max_depth: int | None = None) -> tuple[tuple[int, ...], ...]:
    """Partition situations into positions.

    Situations share a position iff they share a stage and their coloured
    subtrees are isomorphic.  Codes are built bottom-up and interned level by
    level, so equal codes at depth ``k`` mean equal coloured subtrees to
    depth ``k``.  The refinement stops once the partition is stable, which
    for a finite template is exact; ``max_depth`` caps the comparison depth.
    """
    tree = hued.tree
    sits = tree.situations
    codes = {s: hued.staging.stage_of(s) for s in sits}
    n_classes = len(set(codes.values()))
    depth = 0
    while max_depth is None or depth < max_depth:
        table: dict = {}
        new = {}
        for s in sits:
            sig = []
            for e in tree.children(s):
                c = tree.resolve(e.child)
                if c in codes:
                    child = ("s", codes[c])
                else:
                    child = ("leaf", c in hued.modified.critical)
                sig.append((_edge_signature(hued, e), child))
            key = (hued.staging.stage_of(s), tuple(sig))
            new[s] = table.setdefault(key, len(table))
        depth += 1
        codes = new
        if len(table) == n_classes:
            break
        n_classes = len(table)
    groups: dict[int, list[int]] = {}
    for s in sits:
        groups.setdefault(codes[s], []).append(s)
    return tuple(sorted(tuple(sorted(g)) for g in groups.values()))


@dataclass(frozen=True)
class RdcegEdge:
    source: int
    target: int
    label: str
    timed: bool
    cyclic: bool
    boundary: bool
    cluster: int | None
    tree_edges: tuple[int, ...]


@dataclass(frozen=True)
class Posterior:
    """Posterior hyperparameters keyed by stage and cluster index."""

    stage_alpha: Mapping[int, tuple[float, ...]]
    cluster_ig: Mapping[int, tuple[float, float, float]]

    def to_dict(self):
        return {
            "stage_alpha": {str(k): list(v) for k, v in sorted(self.stage_alpha.items())},
            "cluster_ig": {str(k): list(v) for k, v in sorted(self.cluster_ig.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            {int(k): tuple(v) for k, v in d["stage_alpha"].items()},
            {int(k): tuple(v) for k, v in d["cluster_ig"].items()},
        )


@dataclass(frozen=True)
class PassageSlice:
    index: int
    roots: tuple[int, ...]
    vertices: tuple[int, ...]
    edges: tuple[int, ...]
    exits: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Rdceg:
    """Coloured multigraph over positions plus an optional sink.

    Vertices ``0..len(members)-1`` are positions; ``sink`` (if present) is
    the last vertex.  Every edge records the tree edges it represents.
    """

    hued: HuedTree
    names: tuple[str, ...]
    members: tuple[tuple[int, ...], ...]
    root: int
    sink: int | None
    edges: tuple[RdcegEdge, ...]
    posterior: Posterior | None = None

    @property
    def n_positions(self) -> int:
        return len(self.members)

    @property
    def vertices(self) -> tuple[int, ...]:
        n = len(self.names)
        return tuple(range(n))

    def vertex(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown vertex {name!r}") from None

    def __post_init__(self):
        adj: dict[int, list[int]] = {v: [] for v in range(len(self.names))}
        for i, e in enumerate(self.edges):
            adj[e.source].append(i)
        object.__setattr__(self, "_adj", {v: tuple(x) for v, x in adj.items()})

    def out_edges(self, v: int) -> tuple[int, ...]:
        return self._adj[v]

    def stage(self, v: int) -> int | None:
        if v == self.sink:
            return None
        return self.hued.staging.stage_of(self.members[v][0])

    def stage_color(self, v: int) -> int | None:
        if v == self.sink:
            return None
        return self.hued.stage_color(self.members[v][0])

    @property
    def cyclic_edges(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.edges) if e.cyclic)

    def with_posterior(self, posterior: Posterior) -> "Rdceg":
        return Rdceg(self.hued, self.names, self.members, self.root, self.sink, self.edges, posterior)

    def edge_probability(self, i: int) -> float:
        """Posterior-mean transition probability of edge ``i``."""
        if self.posterior is None:
            raise ValueError("no posterior attached")
        e = self.edges[i]
        u = self.stage(e.source)
        alpha = self.posterior.stage_alpha[u]
        m = self.hued.staging.labels[u].index(e.label)
        return alpha[m] / sum(alpha)

    def edge_ig(self, i: int) -> tuple[float, float, float]:
        if self.posterior is None:
            raise ValueError("no posterior attached")
        e = self.edges[i]
        if not e.timed:
            raise ValueError("untimed edge has no holding-time posterior")
        return self.posterior.cluster_ig[e.cluster]

    def to_dict(self) -> dict:
        tree = self.hued.tree
        d = {
            "schema": RDCEG_SCHEMA,
            "positions": [
                {
                    "name": self.names[i],
                    "situations": [tree.names[s] for s in self.members[i]],
                    "stage": self.stage(i),
                    "stage_color": self.stage_color(i),
                }
                for i in range(self.n_positions)
            ],
            "root": self.root,
            "sink": self.sink,
            "edges": [
                {
                    "source": e.source,
                    "target": e.target,
                    "label": e.label,
                    "timed": e.timed,
                    "cyclic": e.cyclic,
                    "boundary": e.boundary,
                    "cluster": e.cluster,
                    "cluster_color": self.hued.cluster_color(e.tree_edges[0]),
                    "tree_edges": list(e.tree_edges),
                }
                for e in self.edges
            ],
            "tree": tree.to_dict(),
            "critical": sorted(self.hued.modified.critical),
            "staging": self.hued.staging.to_names(tree),
            "clustering": {
                "cells": self.hued.clustering.to_names(tree),
                "kappa": list(self.hued.clustering.kappa),
            },
        }
        if self.posterior is not None:
            d["posterior"] = self.posterior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Rdceg":
        if d.get("schema") != RDCEG_SCHEMA:
            raise StructureError(f"unsupported graph schema {d.get('schema')!r}")
        tree = EventTree.from_dict(d["tree"])
        modified = ModifiedTree(tree, frozenset(d["critical"]))
        staging = Staging.from_names(tree, d["staging"])
        clustering = Clustering.from_names(tree, d["clustering"]["cells"], d["clustering"]["kappa"])
        hued = HuedTree(modified, staging, clustering)
        members = [tuple(tree.situation_id(n) for n in p["situations"]) for p in d["positions"]]
        r = build_rdceg(hued, members)
        if "posterior" in d:
            r = r.with_posterior(Posterior.from_dict(d["posterior"]))
        return r


def build_rdceg(hued: HuedTree, positions: Iterable[Iterable[int]]) -> Rdceg:
    """Coalesce situations into positions and collect critical leaves in a sink."""
    tree = hued.tree
    cells = sorted(tuple(sorted(c)) for c in positions)
    pos_of = {s: i for i, c in enumerate(cells) for s in c}
    if set(pos_of) != set(tree.situations) or len(pos_of) != sum(len(c) for c in cells):
        raise StagingError("positions must partition the situations")
    for c in cells:
        if len({hued.staging.stage_of(s) for s in c}) != 1:
            raise StagingError("positions must refine stages")
    names = [tree.names[c[0]] for c in cells]
    has_sink = any(tree.resolve(e.child) in hued.modified.critical for e in tree.edges)
    sink = len(cells) if has_sink else None
    if has_sink:
        names.append(SINK_NAME)

    def edge_set(s):
        out = []
        for e in tree.children(s):
            child = tree.resolve(e.child)
            if child in pos_of:
                target = pos_of[child]
            elif child in hued.modified.critical:
                target = sink
            else:
                raise StructureError(f"edge {tree.edge_ref(e.id)} ends in a non-critical leaf")
            cluster = hued.clustering.cluster_of(e.id) if e.timed else None
            cyclic = e.child in tree.repeats
            boundary = cyclic or e.id in tree.boundaries
            out.append((e.label, target, e.timed, cyclic, boundary, cluster, e.id))
        return out

    edges = []
    for i, c in enumerate(cells):
        ref = [x[:-1] for x in edge_set(c[0])]
        collected = {x[0]: [x[-1]] for x in edge_set(c[0])}
        for s in c[1:]:
            other = edge_set(s)
            if [x[:-1] for x in other] != ref:
                raise StagingError(
                    f"situations {tree.names[c[0]]!r} and {tree.names[s]!r} disagree on their "
                    "edges; the position partition is invalid"
                )
            for x in other:
                collected[x[0]].append(x[-1])
        for label, target, timed, cyclic, boundary, cluster in ref:
            if target == i:
                raise StructureError(f"position {names[i]!r} would carry a self-loop")
            edges.append(
                RdcegEdge(i, target, label, timed, cyclic, boundary, cluster, tuple(collected[label]))
            )
    root = pos_of[tree.root]
    return Rdceg(hued, tuple(names), tuple(cells), root, sink, tuple(edges))


def passage_slices(r: Rdceg) -> list[PassageSlice]:
    """Passage-slice templates in order of passage depth.

    Slice 1 grows from the root without crossing a boundary edge; slice k+1
    grows from the targets of slice k's exits.  Enumeration stops when a
    slice would start from the same roots as an earlier one (the remaining
    slices repeat it) or when nothing is left.
    """
    out = []
    seen_roots = set()
    roots = (r.root,)
    while roots and roots not in seen_roots:
        seen_roots.add(roots)
        seen = set(roots)
        queue = deque(roots)
        edges, exits = [], []
        while queue:
            v = queue.popleft()
            for i in r.out_edges(v):
                e = r.edges[i]
                if e.boundary:
                    exits.append(i)
                    continue
                edges.append(i)
                if e.target not in seen:
                    seen.add(e.target)
                    queue.append(e.target)
        out.append(
            PassageSlice(len(out) + 1, roots, tuple(sorted(seen)), tuple(sorted(edges)), tuple(sorted(exits)))
        )
        roots = tuple(sorted({r.edges[i].target for i in exits} - {r.sink}))
    return out
