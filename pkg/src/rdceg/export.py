"""Graphviz DOT rendering of hued trees, RDCEGs and semi-Markov processes."""

from __future__ import annotations

from .graph import HuedTree, Rdceg
from .smp import Smp

__all__ = ["PALETTE", "hued_tree_to_dot", "rdceg_to_dot", "smp_to_dot"]

# Colour-blind friendly, cycled when there are more colours than entries.
PALETTE = (
    "#e69f00", "#56b4e9", "#009e73", "#f0e442", "#0072b2", "#d55e00", "#cc79a7",
    "#999999", "#88ccee", "#44aa99", "#117733", "#ddcc77", "#aa4499", "#882255",
)


def _colour(c: int | None) -> str | None:
    return None if c is None else PALETTE[c % len(PALETTE)]


def _q(s) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _attrs(**kw) -> str:
    parts = [f"{k}={_q(v)}" for k, v in kw.items() if v is not None]
    return " [" + ", ".join(parts) + "]" if parts else ""


def _legend(lines: list[str], hued: HuedTree) -> None:
    tree = hued.tree
    for s in tree.situations:
        c = hued.stage_color(s)
        if c is not None and tree.names[s] == tree.names[hued.staging.cells[c][0]]:
            members = ", ".join(tree.names[x] for x in hued.staging.cells[c])
            lines.append(f"  // stage {c} {_colour(c)}: {members}")
    seen = set()
    for e in sorted(tree.timed_edges):
        c = hued.cluster_color(e)
        if c is not None and c not in seen:
            seen.add(c)
            members = ", ".join(tree.edge_ref(x) for x in hued.clustering.cells[c])
            lines.append(f"  // cluster {c} {_colour(c)} kappa={hued.clustering.kappa[c]:g}: {members}")


def hued_tree_to_dot(hued: HuedTree, name: str = "hued_tree") -> str:
    tree = hued.tree
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;", "  node [style=filled, fillcolor=white];"]
    _legend(lines, hued)
    for v in tree.vertices:
        if v in tree.repeats:
            continue
        fill = _colour(hued.stage_color(v)) if v in tree.situations else None
        lines.append(f"  {_q(tree.names[v])}{_attrs(fillcolor=fill)};")
    for e in tree.edges:
        target = tree.names[tree.resolve(e.child)]
        style = "dashed" if e.child in tree.repeats else None
        colour = _colour(hued.cluster_color(e.id)) if e.timed else None
        label = e.label + (" (t)" if e.timed else "")
        lines.append(f"  {_q(tree.names[e.parent])} -> {_q(target)}{_attrs(label=label, color=colour, style=style)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def rdceg_to_dot(r: Rdceg, name: str = "rdceg", probabilities: bool = True) -> str:
    """Stage colours fill the positions, cluster colours paint timed edges,
    cyclic edges are dashed.  Legends are DOT comments."""
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;", "  node [style=filled, fillcolor=white];"]
    _legend(lines, r.hued)
    for v in r.vertices:
        shape = "doublecircle" if v == r.sink else None
        lines.append(f"  {_q(r.names[v])}{_attrs(fillcolor=_colour(r.stage_color(v)), shape=shape)};")
    for i, e in enumerate(r.edges):
        label = e.label
        if probabilities and r.posterior is not None:
            label += f" {r.edge_probability(i):.3f}"
        colour = _colour(r.hued.cluster_color(e.tree_edges[0])) if e.timed else None
        lines.append(
            f"  {_q(r.names[e.source])} -> {_q(r.names[e.target])}"
            f"{_attrs(label=label, color=colour, style='dashed' if e.cyclic else None)};"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def smp_to_dot(smp: Smp, name: str = "smp") -> str:
    """State diagram; each arrow carries its probability and the edge labels
    of the shortest underlying path."""
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;"]
    for i, s in enumerate(smp.states):
        shape = "doublecircle" if i in smp.absorbing else ("box" if i == smp.entry else None)
        lines.append(f"  {_q(s)}{_attrs(shape=shape)};")
    for t in smp.transitions:
        label = f"{','.join(t.labels)} p={t.prob:.3f}"
        lines.append(
            f"  {_q(smp.states[t.source])} -> {_q(smp.states[t.target])}"
            f"{_attrs(label=label, style='dashed' if t.cyclic else None)};"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"
