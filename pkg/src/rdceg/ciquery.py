"""Rolled-out graphs, cuts, intrinsic events and conditional-independence statements.

Paths are handled at the level of vertex sequences; parallel edges between
the same two vertices are not distinguished.  Crossing-exactly-once is
checked by flow accounting: for an antichain ``W`` every root-to-sink path
meets ``W`` at most once, so it meets it exactly once iff
``sum_w paths(root, w) * paths(w, sink)`` equals the total path count.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .graph import SINK_NAME, Rdceg, passage_slices

__all__ = [
    "RolledCeg",
    "CutReport",
    "roll_out",
    "slice_dag",
    "check_fine_cut",
    "check_cut",
    "classify",
    "find_fine_cuts",
    "find_cuts",
    "is_intrinsic",
    "root_to_sink_paths",
    "ci_statements",
]


@dataclass(frozen=True, eq=False)
class RolledCeg:
    """Finite DAG with a single root and a single sink.

    ``keys[i]`` is ``(position, copy)`` for ordinary vertices and ``None``
    for the sink (and for a synthetic entry vertex).  ``colors[i]`` is the
    stage index of the underlying position.
    """

    names: tuple[str, ...]
    keys: tuple
    colors: tuple
    edges: tuple  # (source, target, label, rdceg edge index)
    root: int
    sink: int
    depth: int

    def __post_init__(self):
        succ = {v: set() for v in range(len(self.names))}
        for s, t, *_ in self.edges:
            succ[s].add(t)
        object.__setattr__(self, "_succ", {v: tuple(sorted(x, key=self._order)) for v, x in succ.items()})
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def _order(self, v):
        k = self.keys[v]
        return (1, 0, 0) if k is None else (0, k[1], k[0])

    def successors(self, v: int) -> tuple[int, ...]:
        return self._succ[v]

    def vertex(self, name_or_id) -> int:
        if isinstance(name_or_id, int):
            if not 0 <= name_or_id < len(self.names):
                raise KeyError(f"unknown vertex {name_or_id!r}")
            return name_or_id
        try:
            return self._index[name_or_id]
        except KeyError:
            raise KeyError(f"unknown vertex {name_or_id!r}") from None

    def topological_order(self) -> list[int]:
        indeg = {v: 0 for v in range(len(self.names))}
        for v in indeg:
            for w in self._succ[v]:
                indeg[w] += 1
        queue = deque(sorted((v for v, d in indeg.items() if d == 0), key=self._order))
        out = []
        while queue:
            v = queue.popleft()
            out.append(v)
            for w in self._succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if len(out) != len(indeg):
            raise ValueError("graph has a cycle")
        return out

    def path_counts(self) -> tuple[dict[int, int], dict[int, int]]:
        """Number of paths from the root to each vertex and from each vertex to the sink."""
        order = self.topological_order()
        into = {v: 0 for v in order}
        into[self.root] = 1
        for v in order:
            for w in self._succ[v]:
                into[w] += into[v]
        out = {v: 0 for v in order}
        out[self.sink] = 1
        for v in reversed(order):
            if v != self.sink:
                out[v] = sum(out[w] for w in self._succ[v])
        return into, out

    def reachability(self) -> dict[int, set[int]]:
        reach = {}
        for v in reversed(self.topological_order()):
            r = set()
            for w in self._succ[v]:
                r.add(w)
                r |= reach[w]
            reach[v] = r
        return reach

    def restrict(self, m: int) -> "RolledCeg":
        """Keep copies ``1..m`` and send everything deeper into the sink."""
        keep = [v for v in range(len(self.names)) if self.keys[v] is None or self.keys[v][1] <= m]
        remap = {v: i for i, v in enumerate(keep)}
        sink = remap[self.sink]
        edges = []
        for s, t, lab, idx in self.edges:
            if s in remap:
                edges.append((remap[s], remap.get(t, sink), lab, idx))
        return RolledCeg(
            tuple(self.names[v] for v in keep), tuple(self.keys[v] for v in keep),
            tuple(self.colors[v] for v in keep), tuple(edges), remap[self.root], sink, min(m, self.depth),
        )

    def edge_set(self) -> set:
        return {(self.names[s], self.names[t], lab) for s, t, lab, _ in self.edges}


def _copy_name(name: str, k: int) -> str:
    return name + "'" * (k - 1)


def _unroll(r: Rdceg, roots: Sequence[int], n: int, stop_at_boundary: bool) -> RolledCeg:
    names, keys, colors, edges = [], [], [], []
    index = {}

    def vid(key):
        if key not in index:
            index[key] = len(names)
            if key == "sink":
                names.append(SINK_NAME)
                keys.append(None)
                colors.append(None)
            elif key == "entry":
                names.append("entry")
                keys.append(None)
                colors.append(None)
            else:
                names.append(_copy_name(r.names[key[0]], key[1]))
                keys.append(key)
                colors.append(r.stage(key[0]))
        return index[key]

    if len(roots) == 1:
        root = vid((roots[0], 1))
        frontier = deque([(roots[0], 1)])
    else:
        root = vid("entry")
        frontier = deque()
        for w in roots:
            edges.append((root, vid((w, 1)), "enter", -1))
            frontier.append((w, 1))
    sink = vid("sink")
    seen = set(frontier)
    while frontier:
        v, k = frontier.popleft()
        src = index[(v, k)]
        for i in r.out_edges(v):
            e = r.edges[i]
            k2 = k + 1 if e.cyclic else k
            if e.target == r.sink or k2 > n or (stop_at_boundary and e.boundary):
                edges.append((src, sink, e.label, i))
                continue
            key = (e.target, k2)
            edges.append((src, vid(key), e.label, i))
            if key not in seen:
                seen.add(key)
                frontier.append(key)
    # renumber with the sink last so ids read naturally
    order = sorted(range(len(names)), key=lambda v: (keys[v] is None and names[v] == SINK_NAME,
                                                      (0, 0, 0) if keys[v] is None else (1, keys[v][1], keys[v][0])))
    remap = {v: i for i, v in enumerate(order)}
    return RolledCeg(
        tuple(names[v] for v in order), tuple(keys[v] for v in order), tuple(colors[v] for v in order),
        tuple((remap[s], remap[t], lab, idx) for s, t, lab, idx in edges), remap[root], remap[sink], n,
    )


def roll_out(r: Rdceg, n: int) -> RolledCeg:
    """Unroll ``n`` passes through the cyclic edges.

    Copy ``k`` of a position is written with ``k-1`` primes.  Cyclic edges
    leaving copy ``n``, and every edge into the sink, end at a single sink.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return _unroll(r, [r.root], n, stop_at_boundary=False)


def slice_dag(r: Rdceg, k: int = 1) -> RolledCeg:
    """Passage-slice ``k`` as a single-root DAG; its exits lead to the sink.

    A slice entered at several positions gets a synthetic ``entry`` root.
    """
    slices = passage_slices(r)
    if not 1 <= k <= len(slices):
        raise ValueError(f"passage-slice {k} does not exist (have {len(slices)})")
    return _unroll(r, list(slices[k - 1].roots), 1, stop_at_boundary=True)


def _resolve_set(g: RolledCeg, vertices) -> frozenset[int]:
    out = set()
    for v in vertices:
        vid = g.vertex(v)
        if vid == g.sink:
            raise ValueError("the sink cannot belong to a cut")
        out.add(vid)
    if not out:
        raise ValueError("empty vertex set")
    return frozenset(out)


@dataclass
class CutReport:
    vertices: list
    kind: str  # "cut", "fine-cut" or "neither"
    color_classes: dict = field(default_factory=dict)
    color_witness: str | None = None
    violating_path: list | None = None

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices,
            "kind": self.kind,
            "color_classes": self.color_classes,
            "color_witness": self.color_witness,
            "violating_path": self.violating_path,
        }


def _meets_once(g: RolledCeg, W: frozenset[int], counts=None, reach=None) -> bool:
    into, out = counts or g.path_counts()
    reach = reach or g.reachability()
    for a in W:
        if reach[a] & W:
            return False
    return sum(into[w] * out[w] for w in W) == out[g.root]


def _violating_path(g: RolledCeg, W: frozenset[int]) -> list[str] | None:
    """First root-to-sink path (in canonical order) meeting ``W`` other than once."""
    stack = [(g.root, [g.root])]
    while stack:
        v, path = stack.pop()
        if v == g.sink:
            hits = sum(1 for x in path if x in W)
            if hits != 1:
                return [g.names[x] for x in path]
            continue
        if sum(1 for x in path if x in W) > 1:
            return [g.names[x] for x in path]
        for w in reversed(g.successors(v)):
            stack.append((w, path + [w]))
    return None


def _color_witness(g: RolledCeg, W: frozenset[int]) -> str | None:
    colors = {g.colors[w] for w in W}
    for v in range(len(g.names)):
        if v not in W and g.colors[v] is not None and g.colors[v] in colors:
            return g.names[v]
    return None


def _color_classes(g: RolledCeg, W) -> dict:
    out: dict = {}
    for w in sorted(W):
        out.setdefault(str(g.colors[w]), []).append(g.names[w])
    return out


def check_fine_cut(g: RolledCeg, vertices) -> CutReport:
    W = _resolve_set(g, vertices)
    names = [g.names[w] for w in sorted(W)]
    if _meets_once(g, W):
        return CutReport(names, "fine-cut", _color_classes(g, W))
    return CutReport(names, "neither", violating_path=_violating_path(g, W))


def check_cut(g: RolledCeg, vertices) -> CutReport:
    rep = check_fine_cut(g, vertices)
    if rep.kind == "neither":
        return rep
    W = _resolve_set(g, vertices)
    witness = _color_witness(g, W)
    if witness is not None:
        return CutReport(rep.vertices, "neither", rep.color_classes, color_witness=witness)
    rep.kind = "cut"
    return rep


def classify(g: RolledCeg, vertices) -> CutReport:
    """Most specific kind: ``cut`` if colour-closed as well, else ``fine-cut`` or ``neither``."""
    rep = check_fine_cut(g, vertices)
    if rep.kind == "neither":
        return rep
    W = _resolve_set(g, vertices)
    rep.color_witness = _color_witness(g, W)
    if rep.color_witness is None:
        rep.kind = "cut"
    return rep


def find_fine_cuts(g: RolledCeg, max_results: int = 10000) -> list[CutReport]:
    """All vertex sets met exactly once by every root-to-sink path.

    Antichains are grown in topological order and pruned as soon as their
    path mass exceeds the total.
    """
    into, out = g.path_counts()
    reach = g.reachability()
    total = out[g.root]
    order = [v for v in g.topological_order() if v != g.sink]
    mass = {v: into[v] * out[v] for v in order}
    comparable = {v: reach[v] | {u for u in order if v in reach[u]} for v in order}
    found: list[frozenset] = []

    def grow(start, chosen, acc, blocked):
        if len(found) >= max_results:
            return
        if acc == total:
            found.append(frozenset(chosen))
            return
        for i in range(start, len(order)):
            v = order[i]
            if v in blocked or mass[v] == 0 or acc + mass[v] > total:
                continue
            chosen.append(v)
            grow(i + 1, chosen, acc + mass[v], blocked | comparable[v])
            chosen.pop()

    grow(0, [], 0, frozenset())
    reports = []
    for W in found:
        rep = CutReport([g.names[w] for w in sorted(W)], "fine-cut", _color_classes(g, W))
        rep.color_witness = _color_witness(g, W)
        if rep.color_witness is None:
            rep.kind = "cut"
        reports.append(rep)
    reports.sort(key=lambda r: (len(r.vertices), [g.vertex(n) for n in r.vertices]))
    return reports


def find_cuts(g: RolledCeg, max_results: int = 10000) -> list[CutReport]:
    return [r for r in find_fine_cuts(g, max_results) if r.kind == "cut"]


def _resolve_path(g: RolledCeg, path) -> tuple[int, ...]:
    p = tuple(g.vertex(v) for v in path)
    if not p or p[0] != g.root or p[-1] != g.sink:
        raise ValueError(f"path {list(path)} does not run from the root to the sink")
    for a, b in zip(p, p[1:]):
        if b not in g.successors(a):
            raise ValueError(f"path {list(path)} uses a missing edge {g.names[a]} -> {g.names[b]}")
    return p


def root_to_sink_paths(g: RolledCeg, allowed: set | None = None, limit: int | None = None) -> list[tuple[int, ...]]:
    """Vertex-sequence paths in canonical order, optionally within an edge subset."""
    out = []
    stack = [(g.root, (g.root,))]
    while stack:
        v, path = stack.pop()
        if v == g.sink:
            out.append(path)
            if limit is not None and len(out) >= limit:
                break
            continue
        for w in reversed(g.successors(v)):
            if allowed is None or (v, w) in allowed:
                stack.append((w, path + (w,)))
    return out


def is_intrinsic(g: RolledCeg, event: Iterable) -> tuple[bool, list[str] | None]:
    """Whether the subgraph induced by the event's paths has no other
    root-to-sink path; if it has, the first such path is returned."""
    paths = {_resolve_path(g, p) for p in event}
    if not paths:
        raise ValueError("an event needs at least one path")
    allowed = {(a, b) for p in paths for a, b in zip(p, p[1:])}
    stack = [(g.root, (g.root,))]
    while stack:
        v, path = stack.pop()
        if v == g.sink:
            if path not in paths:
                return False, [g.names[x] for x in path]
            continue
        for w in reversed(g.successors(v)):
            if (v, w) in allowed:
                stack.append((w, path + (w,)))
    return True, None


def _available_slices(r: Rdceg, index: int) -> int | None:
    """Slices left from ``index`` on, or ``None`` when cyclic edges make it unbounded."""
    if r.cyclic_edges:
        return None
    return len(passage_slices(r)) - index + 1


def ci_statements(r: Rdceg, report: CutReport, n: int = 1, slice_index: int = 1) -> list[dict]:
    """Conditional-independence statements licensed by a verified cut or fine cut.

    Holding times are part of the independent future in every statement.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if report.kind not in ("cut", "fine-cut"):
        raise ValueError("statements need a verified cut or fine cut")
    g = slice_dag(r, slice_index)
    W = sorted(_resolve_set(g, report.vertices))
    reach = g.reachability()
    upstream = sorted({u for u in range(len(g.names)) if any(w in reach[u] for w in W)} - {g.sink})
    past = [g.names[u] for u in upstream if g.keys[u] is not None]
    names = [g.names[w] for w in W]
    vacuous = not past
    available = _available_slices(r, slice_index)
    statements = []

    def base(kind, condition, future, horizon, text):
        return {
            "kind": kind,
            "vertices": names,
            "condition": condition,
            "past": past,
            "future": future,
            "horizon_slices": horizon,
            "includes_holding_times": True,
            "conditional_on_no_dropout": True,
            "vacuous": vacuous,
            "text": text,
        }

    where = " or ".join(names)
    if vacuous:
        note = "There is no earlier history at {}, so this holds trivially: ".format(where)
    else:
        note = ""
    if report.kind == "fine-cut" or report.kind == "cut":
        horizon = n if available is None else min(n, available)
        plural = "slice" if horizon == 1 else "slices"
        text = (
            f"{note}Given which of {where} an individual occupies, and provided they do not drop out, "
            f"their transitions and holding times over the next {horizon} passage-{plural} are "
            f"independent of the path by which they arrived ({', '.join(past) or 'none'})."
        )
        statements.append(base("position", "position occupied", f"evolution over {horizon} passage-{plural}", horizon, text))
    if report.kind == "cut":
        stages = {}
        for w in W:
            stages.setdefault(g.colors[w], []).append(g.names[w])
        groups = "; ".join("{" + ", ".join(v) + "}" for _, v in sorted(stages.items(), key=lambda x: str(x[0])))
        text = (
            f"{note}Given the stage occupied among {groups}, and provided they do not drop out, the next "
            f"transition within the passage-slice and its holding time are independent of the path into it."
        )
        statements.append(base("stage", "stage occupied", "next transition within the slice", 1, text))
    return statements
