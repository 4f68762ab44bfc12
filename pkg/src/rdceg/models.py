"""Ground-truth generating models and the builtin model skeletons.

Every numeric generating parameter in this module is synthetic: the
skeletons follow published structures, but probabilities, Weibull scales
and shapes, and dropout rates were chosen here so that the qualitative
pattern (rarer vulnerable groups, treatment lowering fall risk, slower
first seizures than second ones) holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .graph import (
    Clustering,
    EventTree,
    HuedTree,
    ModifiedTree,
    Posterior,
    Rdceg,
    Staging,
    build_rdceg,
    modify_tree,
    positions_from_staging,
)

__all__ = ["GroundTruthModel", "builtin_models", "falls_model", "epilepsy_like_model", "smoking_model"]

MODEL_SCHEMA = "rdceg.ground_truth/1"


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """A full event tree (dropout leaves included) plus generating parameters.

    ``stage_probs`` are conditional on not dropping out and are keyed by
    edge label; ``dropout`` gives the per-visit dropout probability of a
    situation.  Cluster scales are Weibull scales in time units, so the
    power-scale parameter of an edge is ``scale ** kappa``.
    """

    name: str
    tree: EventTree
    critical: frozenset
    stages: tuple
    stage_probs: tuple
    clusters: tuple
    cluster_scale: tuple
    cluster_kappa: tuple
    dropout: Mapping[str, float] = field(default_factory=dict)
    hyperstages: tuple = ()
    hyperclusters: tuple = ()
    max_slices: int = 20
    study_time: float | None = None

    def __post_init__(self):
        if len(self.stages) != len(self.stage_probs):
            raise ValueError("need one probability table per stage")
        if not (len(self.clusters) == len(self.cluster_scale) == len(self.cluster_kappa)):
            raise ValueError("need one scale and one shape per cluster")
        for probs in self.stage_probs:
            if any(p < 0 for p in probs.values()) or abs(sum(probs.values()) - 1) > 1e-9:
                raise ValueError("stage probabilities must be a distribution")
        for p in self.dropout.values():
            if not 0 <= p < 1:
                raise ValueError("dropout probabilities must lie in [0, 1)")
        if any(not s > 0 for s in self.cluster_scale) or any(not k > 0 for k in self.cluster_kappa):
            raise ValueError("Weibull scales and shapes must be positive")
        if self.max_slices < 1:
            raise ValueError("max_slices must be at least 1")
        # building these validates the partitions against the tree
        self.staging, self.clustering  # noqa: B018

    @cached_property
    def modified(self) -> ModifiedTree:
        return modify_tree(self.tree, self.critical)

    @cached_property
    def staging(self) -> Staging:
        return Staging.from_names(self.modified.tree, self.stages)

    @cached_property
    def clustering(self) -> Clustering:
        return Clustering.from_names(self.modified.tree, self.clusters, self.cluster_kappa)

    @cached_property
    def kappa(self) -> dict[int, float]:
        t = self.modified.tree
        return {t.edge_from_ref(r): float(k) for cell, k in zip(self.clusters, self.cluster_kappa) for r in cell}

    @cached_property
    def theta(self) -> dict[int, float]:
        """Power-scale Weibull parameter per timed edge id."""
        t = self.modified.tree
        out = {}
        for cell, lam, k in zip(self.clusters, self.cluster_scale, self.cluster_kappa):
            for r in cell:
                out[t.edge_from_ref(r)] = float(lam) ** float(k)
        return out

    @cached_property
    def mu(self) -> dict[int, np.ndarray]:
        """True transition probabilities per situation, in label order."""
        t = self.modified.tree
        out = {}
        for cell, probs in zip(self.stages, self.stage_probs):
            for name in cell:
                s = t.situation_id(name)
                labels = t.labels(s)
                if set(labels) != set(probs):
                    raise ValueError(f"probabilities for {name!r} do not match its edges {labels}")
                out[s] = np.array([probs[lab] for lab in labels], dtype=float)
        return out

    def hyperstage_ids(self) -> list[list[int]]:
        t = self.modified.tree
        return [[t.situation_id(n) for n in cell] for cell in self.hyperstages]

    def hypercluster_ids(self) -> list[list[int]]:
        t = self.modified.tree
        return [[t.edge_from_ref(r) for r in cell] for cell in self.hyperclusters]

    def hued(self) -> HuedTree:
        return HuedTree(self.modified, self.staging, self.clustering)

    def rdceg(self, pseudo_count: float = 1e9) -> Rdceg:
        """The generating RDCEG with near-degenerate posteriors at the true values."""
        hued = self.hued()
        r = build_rdceg(hued, positions_from_staging(hued))
        alpha = {}
        for u, cell in enumerate(self.staging.cells):
            alpha[u] = tuple(float(x) * pseudo_count for x in self.mu[cell[0]])
        ig = {}
        for c, cell in enumerate(self.clustering.cells):
            th = self.theta[cell[0]]
            ig[c] = (pseudo_count + 1.0, th * pseudo_count, self.clustering.kappa[c])
        return r.with_posterior(Posterior(alpha, ig))

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "name": self.name,
            "tree": self.tree.to_dict(),
            "critical": sorted(self.critical),
            "stages": [list(c) for c in self.stages],
            "stage_probs": [dict(p) for p in self.stage_probs],
            "clusters": [list(c) for c in self.clusters],
            "cluster_scale": list(self.cluster_scale),
            "cluster_kappa": list(self.cluster_kappa),
            "dropout": dict(self.dropout),
            "hyperstages": [list(c) for c in self.hyperstages],
            "hyperclusters": [list(c) for c in self.hyperclusters],
            "max_slices": self.max_slices,
            "study_time": self.study_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruthModel":
        if d.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            name=d["name"],
            tree=EventTree.from_dict(d["tree"]),
            critical=frozenset(d["critical"]),
            stages=tuple(tuple(c) for c in d["stages"]),
            stage_probs=tuple(dict(p) for p in d["stage_probs"]),
            clusters=tuple(tuple(c) for c in d["clusters"]),
            cluster_scale=tuple(d["cluster_scale"]),
            cluster_kappa=tuple(d["cluster_kappa"]),
            dropout=dict(d.get("dropout", {})),
            hyperstages=tuple(tuple(c) for c in d.get("hyperstages", ())),
            hyperclusters=tuple(tuple(c) for c in d.get("hyperclusters", ())),
            max_slices=d.get("max_slices", 20),
            study_time=d.get("study_time"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _critical_by_prefix(tree: EventTree, prefixes) -> frozenset:
    return frozenset(v for v in tree.leaves if tree.names[v].startswith(tuple(prefixes)))


def falls_model() -> GroundTruthModel:
    """Falls-intervention skeleton: root w0 plus positions w1..w16.

    w0 residence; w1/w2 risk assessment (community/communal); w3/w6 treatment
    of high-risk people; w4/w5/w7/w8/w11/w12 fall or no fall; w9/w10 reassessment
    after a low-risk fall; w13..w16 outcomes after a high-risk fall.
    """
    T = True
    florets = {
        "w0": [("community", "w1"), ("communal", "w2")],
        "w1": [("high", "w3"), ("low", "w4")],
        "w2": [("high", "w6"), ("low", "w5")],
        "w3": [("treated", "w7"), ("untreated", "w8")],
        "w6": [("treated", "w11"), ("untreated", "w12")],
        "w4": [("fall", "w9", T), ("no_fall", "end_w4"), ("dropout", "drop_w4")],
        "w5": [("fall", "w10", T), ("no_fall", "end_w5"), ("dropout", "drop_w5")],
        "w7": [("fall", "w13", T), ("no_fall", "end_w7"), ("dropout", "drop_w7")],
        "w8": [("fall", "w14", T), ("no_fall", "end_w8"), ("dropout", "drop_w8")],
        "w11": [("fall", "w15", T), ("no_fall", "end_w11"), ("dropout", "drop_w11")],
        "w12": [("fall", "w16", T), ("no_fall", "end_w12"), ("dropout", "drop_w12")],
        "w9": [("reassess", "@w1", T), ("dropout", "drop_w9")],
        "w10": [("reassess", "@w2", T), ("dropout", "drop_w10")],
        "w13": [("recover", "@w7", T), ("move", "@w11", T), ("complications", "end_w13", T),
                ("dropout", "drop_w13")],
        "w14": [("recover", "@w8", T), ("move", "@w12", T), ("complications", "end_w14", T),
                ("dropout", "drop_w14")],
        "w15": [("recover", "@w11", T), ("complications", "end_w15", T), ("dropout", "drop_w15")],
        "w16": [("recover", "@w12", T), ("complications", "end_w16", T), ("dropout", "drop_w16")],
    }
    tree = EventTree.from_florets("w0", florets)
    critical = _critical_by_prefix(tree, ["end_"])
    fall_sits = ("w4", "w5", "w7", "w8", "w11", "w12")
    stages = (
        ("w0",), ("w1",), ("w2",), ("w3", "w6"), ("w4", "w5"), ("w7", "w11"), ("w8",), ("w12",),
        ("w9",), ("w10",), ("w13", "w14"), ("w15", "w16"),
    )
    stage_probs = (
        {"community": 0.7, "communal": 0.3},
        {"high": 0.3, "low": 0.7},
        {"high": 0.55, "low": 0.45},
        {"treated": 0.6, "untreated": 0.4},
        {"fall": 0.3, "no_fall": 0.7},
        {"fall": 0.5, "no_fall": 0.5},
        {"fall": 0.7, "no_fall": 0.3},
        {"fall": 0.88, "no_fall": 0.12},
        {"reassess": 1.0},
        {"reassess": 1.0},
        {"recover": 0.6, "move": 0.25, "complications": 0.15},
        {"recover": 0.75, "complications": 0.25},
    )
    clusters = (
        ("w4/fall", "w5/fall"),
        ("w9/reassess", "w10/reassess"),
        ("w7/fall", "w11/fall"),
        ("w8/fall", "w12/fall"),
        ("w13/recover", "w14/recover", "w15/recover", "w16/recover"),
        ("w13/move", "w14/move"),
        ("w13/complications", "w14/complications", "w15/complications", "w16/complications"),
    )
    scale = (300.0, 30.0, 250.0, 120.0, 90.0, 50.0, 100.0)
    kappa = (1.0, 2.0, 1.5, 1.0, 1.5, 1.0, 2.0)
    by_kappa: dict[float, list[str]] = {}
    for cell, k in zip(clusters, kappa):
        by_kappa.setdefault(k, []).extend(cell)
    dropout = {s: 0.05 for s in fall_sits}
    dropout.update({s: 0.03 for s in ("w9", "w10", "w13", "w14", "w15", "w16")})
    return GroundTruthModel(
        name="falls",
        tree=tree,
        critical=critical,
        stages=stages,
        stage_probs=stage_probs,
        clusters=clusters,
        cluster_scale=scale,
        cluster_kappa=kappa,
        dropout=dropout,
        hyperstages=(
            ("w0",), ("w1", "w2"), ("w3", "w6"), fall_sits, ("w9", "w10"), ("w13", "w14"), ("w15", "w16"),
        ),
        hyperclusters=tuple(tuple(sorted(v)) for _, v in sorted(by_kappa.items())),
    )


AGES = ("age1", "age2", "age3")
EEGS = ("abnormal", "normal", "unknown")
ARMS = ("immediate", "deferred")


def epilepsy_like_model() -> GroundTruthModel:
    """Two-passage-slice seizure model: age, EEG, treatment arm, first and
    second seizure.  The first-seizure edge is a passage boundary."""
    florets = {"root": [(a, a) for a in AGES]}
    boundaries = []
    for a in AGES:
        florets[a] = [(e, f"{a}.{e}") for e in EEGS]
        for e in EEGS:
            florets[f"{a}.{e}"] = [(arm, f"{a}.{e}.{arm}") for arm in ARMS]
            for arm in ARMS:
                first = f"{a}.{e}.{arm}"
                second = f"{first}.s2"
                florets[first] = [
                    ("seizure", second, True),
                    ("no_more", f"end_{first}"),
                    ("dropout", f"drop_{first}"),
                ]
                florets[second] = [
                    ("seizure", f"end2_{first}", True),
                    ("no_more", f"end3_{first}"),
                    ("dropout", f"drop2_{first}"),
                ]
                boundaries.append((first, "seizure"))
    tree = EventTree.from_florets("root", florets, boundaries)
    critical = _critical_by_prefix(tree, ["end"])
    eeg_sits = tuple(f"{a}.{e}" for a in AGES for e in EEGS)
    first_sits = tuple(f"{a}.{e}.{arm}" for a in AGES for e in EEGS for arm in ARMS)
    high = tuple(s for s in first_sits if s.endswith("abnormal.deferred"))
    low = tuple(s for s in first_sits if s not in high)
    second_sits = tuple(f"{s}.s2" for s in first_sits)
    eeg_mix = {
        "age1": {"abnormal": 0.55, "normal": 0.33, "unknown": 0.12},
        "age2": {"abnormal": 0.35, "normal": 0.55, "unknown": 0.10},
        "age3": {"abnormal": 0.18, "normal": 0.57, "unknown": 0.25},
    }
    stages = (("root",),) + tuple((a,) for a in AGES) + (eeg_sits, high, low, second_sits)
    stage_probs = (
        {"age1": 0.3, "age2": 0.35, "age3": 0.35},
        *(eeg_mix[a] for a in AGES),
        {"immediate": 0.5, "deferred": 0.5},
        {"seizure": 0.85, "no_more": 0.15},
        {"seizure": 0.45, "no_more": 0.55},
        {"seizure": 0.65, "no_more": 0.35},
    )
    clusters = (
        tuple(f"{s}/seizure" for s in high),
        tuple(f"{s}/seizure" for s in low),
        tuple(f"{s}/seizure" for s in second_sits),
    )
    return GroundTruthModel(
        name="epilepsy_like",
        tree=tree,
        critical=critical,
        stages=stages,
        stage_probs=stage_probs,
        clusters=clusters,
        cluster_scale=(360.0, 594.0, 186.0),
        cluster_kappa=(1.0, 1.0, 1.0),
        dropout={s: 0.02 for s in first_sits + second_sits},
        hyperstages=(("root",), AGES, eeg_sits, first_sits, second_sits),
        hyperclusters=(tuple(c for cell in clusters for c in cell),),
        max_slices=2,
    )


def smoking_model(variant: str = "a") -> GroundTruthModel:
    """Smoking-cessation attempts.  Variant ``a`` lets the quit probability
    depend on service use; variant ``b`` does not."""
    T = True
    florets = {
        "w0": [("use", "w1", T), ("not_use", "w2", T)],
        "w1": [("quit", "quit_w1", T), ("fail", "@w0", T), ("dropout", "drop_w1")],
        "w2": [("quit", "quit_w2", T), ("fail", "@w0", T), ("dropout", "drop_w2")],
    }
    tree = EventTree.from_florets("w0", florets)
    critical = _critical_by_prefix(tree, ["quit_"])
    if variant == "a":
        stages = (("w0",), ("w1",), ("w2",))
        probs = ({"use": 0.6, "not_use": 0.4}, {"quit": 0.35, "fail": 0.65}, {"quit": 0.15, "fail": 0.85})
        clusters = (("w0/use",), ("w0/not_use",), ("w1/quit",), ("w2/quit",), ("w1/fail", "w2/fail"))
        scale = (14.0, 20.0, 60.0, 90.0, 45.0)
    elif variant == "b":
        stages = (("w0",), ("w1", "w2"))
        probs = ({"use": 0.6, "not_use": 0.4}, {"quit": 0.25, "fail": 0.75})
        clusters = (("w0/use",), ("w0/not_use",), ("w1/quit", "w2/quit"), ("w1/fail", "w2/fail"))
        scale = (14.0, 20.0, 75.0, 45.0)
    else:
        raise ValueError("smoking variant must be 'a' or 'b'")
    return GroundTruthModel(
        name=f"smoking-{variant}",
        tree=tree,
        critical=critical,
        stages=stages,
        stage_probs=probs,
        clusters=clusters,
        cluster_scale=scale,
        cluster_kappa=(1.0,) * len(clusters),
        dropout={"w1": 0.05, "w2": 0.05},
        hyperstages=(("w0",), ("w1", "w2")),
        hyperclusters=(("w0/use", "w0/not_use", "w1/quit", "w2/quit", "w1/fail", "w2/fail"),),
    )


def builtin_models() -> dict[str, GroundTruthModel]:
    return {
        "falls": falls_model(),
        "epilepsy_like": epilepsy_like_model(),
        "smoking-a": smoking_model("a"),
        "smoking-b": smoking_model("b"),
    }
