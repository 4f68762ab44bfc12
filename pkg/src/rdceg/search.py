"""Greedy agglomerative search over stagings and clusterings.

Standard Bayes-factor AHC: start from singletons, merge the admissible pair
with the largest score gain, stop when no gain is positive.  Stage and
cluster searches are independent because the score separates into stage
terms and cluster terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .conjugate import PriorConfig, Scorer, SufficientStats
from .graph import (
    Clustering,
    HuedTree,
    ModifiedTree,
    Posterior,
    Rdceg,
    Staging,
    build_rdceg,
    positions_from_staging,
)

__all__ = [
    "MergeStep",
    "SearchResult",
    "SearchConfig",
    "FittedModel",
    "ahc_stages",
    "ahc_clusters",
    "select_model",
    "replay",
    "default_hyperstages",
]


@dataclass(frozen=True)
class MergeStep:
    kind: str  # "stage" or "cluster"
    left: tuple
    right: tuple
    delta: float


@dataclass(frozen=True)
class SearchResult:
    staging: Staging
    clustering: Clustering
    score: float
    trace: tuple

    def to_dict(self, tree) -> dict:
        name = tree.names.__getitem__
        return {
            "score": self.score,
            "staging": self.staging.to_names(tree),
            "clustering": {"cells": self.clustering.to_names(tree), "kappa": list(self.clustering.kappa)},
            "trace": [
                {
                    "kind": m.kind,
                    "left": [name(x) if m.kind == "stage" else tree.edge_ref(x) for x in m.left],
                    "right": [name(x) if m.kind == "stage" else tree.edge_ref(x) for x in m.right],
                    "delta": m.delta,
                }
                for m in self.trace
            ],
        }


def _agglomerate(groups: Sequence[Sequence[int]], everything: Sequence[int], term: Callable, kind: str):
    """Greedy merging within each group; elements outside every group stay alone."""
    cells = {x: (x,) for x in everything}  # keyed by min element
    group_of = {}
    for g, members in enumerate(groups):
        for x in members:
            group_of[x] = g
    deltas: dict[tuple[int, int], float] = {}

    def delta(a, b):
        key = (a, b)
        v = deltas.get(key)
        if v is None:
            merged = tuple(sorted(cells[a] + cells[b]))
            v = term(merged) - term(cells[a]) - term(cells[b])
            deltas[key] = v
        return v

    trace = []
    while True:
        best, best_key = 0.0, None
        keys = sorted(cells)
        for i, a in enumerate(keys):
            ga = group_of.get(a)
            if ga is None:
                continue
            for b in keys[i + 1:]:
                if group_of.get(b) != ga:
                    continue
                d = delta(a, b)
                # ties keep the first (lexicographically smallest) pair
                if d > best:
                    best, best_key = d, (a, b)
        if best_key is None:
            break
        a, b = best_key
        trace.append(MergeStep(kind, cells[a], cells[b], best))
        cells[a] = tuple(sorted(cells[a] + cells.pop(b)))
        deltas = {k: v for k, v in deltas.items() if a not in k and b not in k}
    return sorted(cells.values()), trace


def _check_groups(groups, universe, what):
    seen = set()
    for g in groups:
        for x in g:
            if x not in universe:
                raise ValueError(f"{what} references unknown element {x!r}")
            if x in seen:
                raise ValueError(f"{what} sets must be disjoint ({x!r} appears twice)")
            seen.add(x)


def ahc_stages(scorer: Scorer, hyperstages: Sequence[Sequence[int]]):
    """Returns ``(Staging, trace)``."""
    tree = scorer.tree
    _check_groups(hyperstages, set(tree.situations), "hyperstage")
    for g in hyperstages:
        if len({tree.labels(s) for s in g}) > 1:
            raise ValueError("situations in one hyperstage set must carry the same edge labels")
    cells, trace = _agglomerate(hyperstages, tree.situations, scorer.stage_score, "stage")
    return Staging.from_cells(tree, cells), trace


def ahc_clusters(scorer: Scorer, hyperclusters: Sequence[Sequence[int]]):
    """Returns ``(Clustering, trace)``."""
    tree = scorer.tree
    _check_groups(hyperclusters, set(tree.timed_edges), "hypercluster")
    for g in hyperclusters:
        if len({scorer.kappa[e] for e in g}) > 1:
            raise ValueError("edges in one hypercluster set must share a Weibull shape")
    cells, trace = _agglomerate(hyperclusters, sorted(tree.timed_edges), scorer.cluster_score, "cluster")
    return Clustering.from_cells(tree, cells, scorer.kappa), trace


def replay(scorer: Scorer, trace: Sequence[MergeStep]) -> tuple[Staging, Clustering, float]:
    """Rebuild partitions and score from singletons by replaying merges."""
    tree = scorer.tree
    stage_cells = {s: (s,) for s in tree.situations}
    cluster_cells = {e: (e,) for e in tree.timed_edges}
    for m in trace:
        cells = stage_cells if m.kind == "stage" else cluster_cells
        a, b = m.left[0], m.right[0]
        if cells.get(a) != m.left or cells.get(b) != m.right:
            raise ValueError("merge trace does not apply to the current partition")
        cells[a] = tuple(sorted(m.left + m.right))
        del cells[b]
    staging = Staging.from_cells(tree, stage_cells.values())
    clustering = Clustering.from_cells(tree, cluster_cells.values(), scorer.kappa)
    return staging, clustering, scorer.score(staging, clustering)


def default_hyperstages(tree) -> list[list[int]]:
    """Situations with identical edge-label sets."""
    by_labels: dict[tuple, list[int]] = {}
    for s in tree.situations:
        by_labels.setdefault(tree.labels(s), []).append(s)
    return list(by_labels.values())


@dataclass(frozen=True)
class SearchConfig:
    """Search settings.  Hyperstages are lists of situation names;
    hyperclusters are ``{"edges": [...], "kappa": k}`` with edges written
    ``situation/label``.  Timed edges outside every hypercluster get shape 1
    and are never merged."""

    hyperstages: tuple | None = None
    hyperclusters: tuple | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    max_depth: int | None = None
    tie_break_seed: int | None = None  # reserved; ties are broken by element ids

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchConfig":
        unknown = set(d) - {"hyperstages", "hyperclusters", "prior", "max_depth", "tie_break_seed"}
        if unknown:
            raise ValueError(f"unknown search settings: {sorted(unknown)}")
        hs = d.get("hyperstages")
        hc = d.get("hyperclusters")
        if hs is not None:
            if not isinstance(hs, list) or not all(isinstance(g, list) for g in hs):
                raise ValueError("hyperstages must be a list of lists of situation names")
            hs = tuple(tuple(g) for g in hs)
        if hc is not None:
            if not isinstance(hc, list) or not all(isinstance(g, dict) and "edges" in g for g in hc):
                raise ValueError('hyperclusters must be a list of {"edges": [...], "kappa": k}')
            hc = tuple((tuple(g["edges"]), float(g.get("kappa", 1.0))) for g in hc)
        md = d.get("max_depth")
        if md is not None and (not isinstance(md, int) or md < 1):
            raise ValueError("max_depth must be a positive integer")
        return cls(hs, hc, PriorConfig.from_dict(d.get("prior", {})), md, d.get("tie_break_seed"))

    @classmethod
    def from_model(cls, model, prior: PriorConfig | None = None) -> "SearchConfig":
        """Hyperstages and hyperclusters declared by a ground-truth model."""
        kappa_of = {r: k for cell, k in zip(model.clusters, model.cluster_kappa) for r in cell}
        hc = tuple((tuple(g), kappa_of[g[0]]) for g in model.hyperclusters)
        return cls(tuple(tuple(g) for g in model.hyperstages), hc, prior or PriorConfig())

    def to_dict(self) -> dict:
        return {
            "hyperstages": None if self.hyperstages is None else [list(g) for g in self.hyperstages],
            "hyperclusters": None
            if self.hyperclusters is None
            else [{"edges": list(e), "kappa": k} for e, k in self.hyperclusters],
            "prior": self.prior.to_dict(),
            "max_depth": self.max_depth,
            "tie_break_seed": self.tie_break_seed,
        }

    def resolve(self, tree) -> tuple[list[list[int]], list[list[int]], dict[int, float]]:
        """Map names to ids: ``(hyperstages, hyperclusters, kappa per timed edge)``."""
        if self.hyperstages is None:
            hs = default_hyperstages(tree)
        else:
            try:
                hs = [[tree.situation_id(n) for n in g] for g in self.hyperstages]
            except KeyError as exc:
                raise ValueError(f"hyperstage: {exc.args[0]}") from None
        kappa = {e: 1.0 for e in tree.timed_edges}
        if self.hyperclusters is None:
            hc = [sorted(tree.timed_edges)] if tree.timed_edges else []
        else:
            hc = []
            for refs, k in self.hyperclusters:
                if not k > 0:
                    raise ValueError("hypercluster shapes must be positive")
                ids = []
                for r in refs:
                    try:
                        eid = tree.edge_from_ref(r)
                    except KeyError:
                        raise ValueError(f"hypercluster references unknown edge {r!r}") from None
                    if not tree.edge(eid).timed:
                        raise ValueError(f"hypercluster edge {r!r} carries no holding time")
                    ids.append(eid)
                    kappa[eid] = k
                hc.append(ids)
        return hs, hc, kappa

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True, eq=False)
class FittedModel:
    modified: ModifiedTree
    scorer: Scorer
    result: SearchResult
    rdceg: Rdceg


def attach_posterior(scorer: Scorer, staging: Staging, clustering: Clustering, r: Rdceg) -> Rdceg:
    alpha = {u: scorer.stage_posterior(c) for u, c in enumerate(staging.cells)}
    ig = {c: scorer.cluster_posterior(cell) for c, cell in enumerate(clustering.cells)}
    return r.with_posterior(Posterior(alpha, ig))


def select_model(stats: SufficientStats, modified: ModifiedTree, config: SearchConfig | None = None) -> FittedModel:
    """Run both searches on aggregated data and build the MAP graph."""
    config = config or SearchConfig()
    hs, hc, kappa = config.resolve(modified.tree)
    scorer = Scorer(modified, stats, kappa, config.prior)
    staging, stage_trace = ahc_stages(scorer, hs)
    clustering, cluster_trace = ahc_clusters(scorer, hc)
    score = scorer.score(staging, clustering)
    result = SearchResult(staging, clustering, score, tuple(stage_trace + cluster_trace))
    hued = HuedTree(modified, staging, clustering)
    r = build_rdceg(hued, positions_from_staging(hued, config.max_depth))
    return FittedModel(modified, scorer, result, attach_posterior(scorer, staging, clustering, r))
