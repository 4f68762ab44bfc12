"""Conjugate Dirichlet / Inverse-Gamma inference and closed-form model scores.

Scores omit the factor ``prod kappa h^(kappa-1)`` of the Weibull likelihood:
it depends on the data and the shapes only, never on the partition, so it
cancels from every Bayes factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import gammaln

from .graph import Clustering, EventTree, ModifiedTree, Staging

__all__ = [
    "DirichletParams",
    "IGParams",
    "PriorConfig",
    "SufficientStats",
    "Scorer",
    "joint_density",
    "update_dirichlet",
    "update_ig",
    "phantom_priors",
    "stage_term",
    "cluster_term",
    "log_marginal_likelihood",
    "log_bayes_factor",
]


@dataclass(frozen=True)
class DirichletParams:
    alpha: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        if not a or any(not x > 0 for x in a):
            raise ValueError("Dirichlet concentrations must be positive")
        object.__setattr__(self, "alpha", a)

    @property
    def mean(self) -> tuple[float, ...]:
        total = sum(self.alpha)
        return tuple(x / total for x in self.alpha)


@dataclass(frozen=True)
class IGParams:
    zeta: float
    beta: float
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("zeta", "beta", "kappa"):
            v = getattr(self, name)
            if not v > 0 or not math.isfinite(v):
                raise ValueError(f"{name} must be finite and positive, got {v!r}")

    @property
    def theta_mean(self) -> float:
        """Posterior mean of the Weibull scale; infinite when zeta <= 1."""
        return self.beta / (self.zeta - 1.0) if self.zeta > 1 else math.inf


def joint_density(prob: float, holding_density, h: float) -> float:
    """Transition probability times holding density; untimed edges pass ``None``."""
    if not 0 <= prob <= 1:
        raise ValueError("transition probability must lie in [0, 1]")
    if h < 0:
        raise ValueError("holding time must be nonnegative")
    if holding_density is None:
        return float(prob)
    return float(prob * holding_density(h))


def update_dirichlet(prior: DirichletParams, counts) -> DirichletParams:
    counts = np.asarray(counts)
    if counts.shape != (len(prior.alpha),):
        raise ValueError("counts must have one entry per edge of the stage")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    return DirichletParams(tuple(a + float(n) for a, n in zip(prior.alpha, counts)))


def update_ig(prior: IGParams, holds) -> IGParams:
    holds = np.asarray(holds, dtype=float)
    if np.any(holds < 0):
        raise ValueError("holding times must be nonnegative")
    return IGParams(
        prior.zeta + holds.size,
        prior.beta + float(np.sum(np.power(holds, prior.kappa))),
        prior.kappa,
    )


def stage_term(alpha, counts) -> float:
    alpha = np.asarray(alpha, dtype=float)
    post = alpha + np.asarray(counts, dtype=float)
    return float(
        gammaln(alpha.sum()) - gammaln(post.sum()) + np.sum(gammaln(post) - gammaln(alpha))
    )


def cluster_term(zeta: float, beta: float, n: float, sum_hk: float) -> float:
    zs, bs = zeta + n, beta + sum_hk
    return float(zeta * math.log(beta) - gammaln(zeta) + gammaln(zs) - zs * math.log(bs))


def log_marginal_likelihood(stages: Iterable, clusters: Iterable) -> float:
    """Closed-form log score from ``(DirichletParams, counts)`` stage pairs and
    ``(IGParams, holds)`` cluster pairs."""
    total = 0.0
    for prior, counts in stages:
        if prior is None:
            raise ValueError("populated stage without a prior")
        total += stage_term(prior.alpha, counts)
    for prior, holds in clusters:
        if prior is None:
            raise ValueError("populated cluster without a prior")
        holds = np.asarray(holds, dtype=float)
        if np.any(holds < 0):
            raise ValueError("holding times must be nonnegative")
        total += cluster_term(prior.zeta, prior.beta, holds.size, float(np.sum(holds**prior.kappa)))
    return total


def phantom_priors(
    tree: ModifiedTree | EventTree,
    alpha_total: float,
    tau: float,
    kappa: Mapping[int, float] | float = 1.0,
) -> tuple[dict[int, DirichletParams], dict[int, IGParams]]:
    """Spread ``alpha_total`` phantom units down the template from the root.

    A situation receiving ``a`` units with ``k`` out-edges gives ``a/k`` to
    each; a timed edge carrying ``a`` units gets ``IG(a, tau^kappa)``.  Units
    reaching a leaf or a repeat marker stop there.
    """
    if not alpha_total > 0:
        raise ValueError("alpha_total must be positive")
    if not tau > 0:
        raise ValueError("tau must be positive")
    tree = tree.tree if isinstance(tree, ModifiedTree) else tree
    dirichlet: dict[int, DirichletParams] = {}
    ig: dict[int, IGParams] = {}
    stack = [(tree.root, float(alpha_total))]
    while stack:
        s, units = stack.pop()
        kids = tree.children(s)
        if not kids:
            continue
        share = units / len(kids)
        dirichlet[s] = DirichletParams((share,) * len(kids))
        for e in kids:
            if e.timed:
                k = kappa if not isinstance(kappa, Mapping) else kappa[e.id]
                ig[e.id] = IGParams(share, tau**k, k)
            stack.append((e.child, share))
    return dirichlet, ig


@dataclass(frozen=True)
class PriorConfig:
    alpha_total: float | None = None
    tau: float | None = None
    censoring: str = "ignore"
    beta_rule: str = "sum"

    def __post_init__(self):
        if self.censoring not in ("ignore", "survival"):
            raise ValueError("censoring must be 'ignore' or 'survival'")
        if self.beta_rule not in ("sum", "shared"):
            raise ValueError("beta_rule must be 'sum' or 'shared'")
        if self.alpha_total is not None and not self.alpha_total > 0:
            raise ValueError("alpha_total must be positive")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PriorConfig":
        unknown = set(d) - {"alpha_total", "tau", "censoring", "beta_rule"}
        if unknown:
            raise ValueError(f"unknown prior settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "alpha_total": self.alpha_total,
            "tau": self.tau,
            "censoring": self.censoring,
            "beta_rule": self.beta_rule,
        }


@dataclass
class SufficientStats:
    """Per-edge traversal counts and holding times on one modified tree.

    ``censored`` maps a situation id to holding times that were still running
    when observation stopped.
    """

    counts: dict[int, int] = field(default_factory=dict)
    holds: dict[int, list[float]] = field(default_factory=dict)
    censored: dict[int, list[float]] = field(default_factory=dict)

    def add(self, other: "SufficientStats") -> "SufficientStats":
        out = SufficientStats(dict(self.counts), {k: list(v) for k, v in self.holds.items()},
                              {k: list(v) for k, v in self.censored.items()})
        for k, n in other.counts.items():
            out.counts[k] = out.counts.get(k, 0) + n
        for k, h in other.holds.items():
            out.holds.setdefault(k, []).extend(h)
        for k, h in other.censored.items():
            out.censored.setdefault(k, []).extend(h)
        return out

    def all_holds(self) -> np.ndarray:
        parts = [np.asarray(h, dtype=float) for h in self.holds.values() if len(h)]
        return np.concatenate(parts) if parts else np.empty(0)

    def __eq__(self, other):
        if not isinstance(other, SufficientStats):
            return NotImplemented
        norm = lambda d: {k: list(map(float, v)) for k, v in d.items() if len(v)}
        return (
            {k: v for k, v in self.counts.items() if v} == {k: v for k, v in other.counts.items() if v}
            and norm(self.holds) == norm(other.holds)
            and norm(self.censored) == norm(other.censored)
        )


class Scorer:
    """Cached per-cell score terms for one tree, data set and prior."""

    def __init__(
        self,
        tree: ModifiedTree,
        stats: SufficientStats,
        kappa: Mapping[int, float] | float = 1.0,
        prior: PriorConfig | None = None,
    ):
        self.modified = tree
        self.tree = tree.tree
        self.stats = stats
        self.prior = prior or PriorConfig()
        timed = sorted(self.tree.timed_edges)
        self.kappa = {e: float(kappa[e] if isinstance(kappa, Mapping) else kappa) for e in timed}
        alpha_total = self.prior.alpha_total
        if alpha_total is None:
            alpha_total = float(len(self.tree.children(self.tree.root)))
        tau = self.prior.tau
        if tau is None:
            h = stats.all_holds()
            tau = float(np.median(h)) if h.size and np.median(h) > 0 else 1.0
        self.alpha_total, self.tau = float(alpha_total), float(tau)
        self.dirichlet, self.ig = phantom_priors(tree, self.alpha_total, self.tau, self.kappa)

        self._counts = {
            s: np.array([stats.counts.get(e.id, 0) for e in self.tree.children(s)], dtype=float)
            for s in self.tree.situations
        }
        self._n = {}
        self._shk = {}
        for e in timed:
            h = np.asarray(stats.holds.get(e, ()), dtype=float)
            if np.any(h < 0):
                raise ValueError("holding times must be nonnegative")
            self._n[e] = float(h.size)
            self._shk[e] = float(np.sum(h ** self.kappa[e]))
        if self.prior.censoring == "survival":
            for s, cens in stats.censored.items():
                c = np.asarray(cens, dtype=float)
                for e in self.tree.children(s):
                    if e.timed:
                        self._shk[e.id] += float(np.sum(c ** self.kappa[e.id]))
        self._stage_cache: dict[tuple, float] = {}
        self._cluster_cache: dict[tuple, float] = {}

    # per-cell quantities ----------------------------------------------

    def stage_prior(self, cell) -> np.ndarray:
        return np.sum([self.dirichlet[s].alpha for s in cell], axis=0)

    def stage_counts(self, cell) -> np.ndarray:
        return np.sum([self._counts[s] for s in cell], axis=0)

    def stage_posterior(self, cell) -> tuple[float, ...]:
        return tuple(float(x) for x in self.stage_prior(cell) + self.stage_counts(cell))

    def cluster_prior(self, cell) -> IGParams:
        ks = {self.kappa[e] for e in cell}
        if len(ks) != 1:
            raise ValueError("edges with different Weibull shapes cannot share a cluster")
        zeta = sum(self.ig[e].zeta for e in cell)
        if self.prior.beta_rule == "shared":
            beta = self.ig[cell[0]].beta
        else:
            beta = sum(self.ig[e].beta for e in cell)
        return IGParams(zeta, beta, ks.pop())

    def cluster_data(self, cell) -> tuple[float, float]:
        return sum(self._n[e] for e in cell), sum(self._shk[e] for e in cell)

    def cluster_posterior(self, cell) -> tuple[float, float, float]:
        p = self.cluster_prior(cell)
        n, shk = self.cluster_data(cell)
        return (p.zeta + n, p.beta + shk, p.kappa)

    def stage_score(self, cell) -> float:
        key = tuple(sorted(cell))
        v = self._stage_cache.get(key)
        if v is None:
            v = stage_term(self.stage_prior(key), self.stage_counts(key))
            self._stage_cache[key] = v
        return v

    def cluster_score(self, cell) -> float:
        key = tuple(sorted(cell))
        v = self._cluster_cache.get(key)
        if v is None:
            p = self.cluster_prior(key)
            n, shk = self.cluster_data(key)
            v = cluster_term(p.zeta, p.beta, n, shk)
            self._cluster_cache[key] = v
        return v

    # whole-model scores ------------------------------------------------

    def _check(self, staging: Staging, clustering: Clustering):
        if {s for c in staging.cells for s in c} != set(self.tree.situations):
            raise ValueError("staging is not over this tree")
        if {e for c in clustering.cells for e in c} != set(self.tree.timed_edges):
            raise ValueError("clustering is not over this tree")

    def score(self, staging: Staging, clustering: Clustering) -> float:
        self._check(staging, clustering)
        total = 0.0
        for c in staging.cells:
            total += self.stage_score(c)
        for c in clustering.cells:
            total += self.cluster_score(c)
        return total

    def log_bayes_factor(self, model_a, model_b) -> float:
        """``log p(D|A) - log p(D|B)`` from the cells the two models do not share."""
        (sa, ca), (sb, cb) = model_a, model_b
        self._check(sa, ca)
        self._check(sb, cb)
        out = 0.0
        for mine, theirs, term in (
            (set(sa.cells), set(sb.cells), self.stage_score),
            (set(ca.cells), set(cb.cells), self.cluster_score),
        ):
            for c in sorted(mine - theirs):
                out += term(c)
            for c in sorted(theirs - mine):
                out -= term(c)
        return out


def log_bayes_factor(scorer: Scorer, model_a, model_b) -> float:
    return scorer.log_bayes_factor(model_a, model_b)
