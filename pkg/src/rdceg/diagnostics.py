"""Accuracy metrics against a generating model, and leave-one-out monitors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conjugate import Scorer
from .graph import Clustering, Rdceg, Staging
from .laws import compound_moments
from .models import GroundTruthModel

__all__ = [
    "hellinger_weibull",
    "ErrorReport",
    "LooRecord",
    "situational_error",
    "cluster_error",
    "error_report",
    "leave_one_out",
]


def hellinger_weibull(theta1: float, theta2: float) -> float:
    """Hellinger distance between equal-shape Weibulls (power-scale parameters).

    The shape drops out: ``t -> t^kappa`` maps both laws to exponentials and
    the distance is invariant under that bijection.
    """
    if not (theta1 > 0 and theta2 > 0):
        raise ValueError("Weibull parameters must be positive")
    bc = 2.0 * math.sqrt(theta1 * theta2) / (theta1 + theta2)
    return math.sqrt(max(0.0, 1.0 - bc))


@dataclass
class ErrorReport:
    truth: str
    fit: str
    situational: float = 0.0
    cluster: float = 0.0
    per_situation: dict = field(default_factory=dict)
    per_edge: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _fitted_stage_means(fit: Rdceg) -> dict[int, np.ndarray]:
    if fit.posterior is None:
        raise ValueError("fitted graph carries no posterior")
    staging = fit.hued.staging
    out = {}
    for u, cell in enumerate(staging.cells):
        a = np.asarray(fit.posterior.stage_alpha[u], dtype=float)
        for s in cell:
            out[s] = a / a.sum()
    return out


def _align(truth: GroundTruthModel, fit: Rdceg):
    ft, tt = fit.hued.tree, truth.modified.tree
    if {ft.names[s] for s in ft.situations} != {tt.names[s] for s in tt.situations}:
        raise ValueError("fitted and generating models have different situations")
    return ft, tt


def situational_error(truth: GroundTruthModel, fit: Rdceg) -> tuple[float, dict]:
    ft, tt = _align(truth, fit)
    fitted = _fitted_stage_means(fit)
    per = {}
    for s in tt.situations:
        name = tt.names[s]
        fs = ft.situation_id(name)
        if ft.labels(fs) != tt.labels(s):
            raise ValueError(f"edge labels of {name!r} differ between the models")
        per[name] = float(np.linalg.norm(fitted[fs] - truth.mu[s]))
    return float(sum(per[k] for k in sorted(per))), per


def fitted_theta(fit: Rdceg, eid: int, estimator: str = "theta-mean") -> tuple[float, float]:
    """``(theta, kappa)`` plugged into the Weibull for edge ``eid``.

    ``theta-mean`` uses the posterior mean of the power-scale parameter,
    ``beta*/(zeta*-1)``; ``compound-mean`` picks the Weibull whose mean equals
    the compound law's mean.
    """
    c = fit.hued.clustering.cluster_of(eid)
    zeta, beta, kappa = fit.posterior.cluster_ig[c]
    if estimator == "theta-mean":
        theta = beta / (zeta - 1.0) if zeta > 1 else math.inf
    elif estimator == "compound-mean":
        mean = compound_moments(zeta, beta, kappa)[0]
        theta = (mean / math.gamma(1.0 + 1.0 / kappa)) ** kappa if math.isfinite(mean) else math.inf
    else:
        raise ValueError("estimator must be 'theta-mean' or 'compound-mean'")
    return theta, kappa


def cluster_error(truth: GroundTruthModel, fit: Rdceg, estimator: str = "theta-mean") -> tuple[float, dict]:
    ft, tt = _align(truth, fit)
    if fit.posterior is None:
        raise ValueError("fitted graph carries no posterior")
    per = {}
    for e in sorted(tt.timed_edges):
        ref = tt.edge_ref(e)
        fe = ft.edge_from_ref(ref)
        theta, kappa = fitted_theta(fit, fe, estimator)
        if not math.isclose(kappa, truth.kappa[e]):
            raise ValueError(f"Weibull shapes differ on {ref}")
        per[ref] = 1.0 if math.isinf(theta) else hellinger_weibull(theta, truth.theta[e])
    return float(sum(per[k] for k in sorted(per))), per


def error_report(truth: GroundTruthModel, fit: Rdceg, fit_name: str = "fit", estimator: str = "theta-mean") -> ErrorReport:
    su, per_s = situational_error(truth, fit)
    sc, per_e = cluster_error(truth, fit, estimator)
    return ErrorReport(truth.name, fit_name, su, sc, per_s, per_e)


@dataclass
class LooRecord:
    kind: str  # "stage" or "cluster"
    cell: list
    element: str
    intact_score: float
    rest_score: float
    alone_score: float
    expectation: list
    lower: list
    upper: list
    observed_mean: list | None
    n_obs: int
    flag: str  # "ok", "outside", "low-information"

    @property
    def split_score(self) -> float:
        return self.rest_score + self.alone_score

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_score"] = self.split_score
        return d


def leave_one_out(scorer: Scorer, staging: Staging, clustering: Clustering) -> tuple[list[LooRecord], list[str]]:
    """Monitor each member of every non-singleton stage and cluster.

    Returns the records and notes about skipped singleton cells.
    """
    tree = scorer.tree
    records, notes = [], []
    for cell in staging.cells:
        names = [tree.names[s] for s in cell]
        if len(cell) == 1:
            notes.append(f"stage {names[0]} is a singleton; nothing to leave out")
            continue
        post = np.asarray(scorer.stage_posterior(cell))
        total = post.sum()
        mean = post / total
        sd = np.sqrt(post * (total - post) / (total**2 * (total + 1.0)))
        intact = scorer.stage_score(cell)
        for s in cell:
            rest = tuple(x for x in cell if x != s)
            n = scorer.stage_counts((s,))
            nobs = int(n.sum())
            lo, hi = mean - 2 * sd, mean + 2 * sd
            if nobs == 0:
                obs, flag = None, "low-information"
            else:
                obs = n / nobs
                flag = "outside" if np.any((obs < lo) | (obs > hi)) else "ok"
            records.append(
                LooRecord(
                    "stage", names, tree.names[s], intact, scorer.stage_score(rest), scorer.stage_score((s,)),
                    mean.tolist(), lo.tolist(), hi.tolist(), None if obs is None else obs.tolist(), nobs, flag,
                )
            )
    for cell in clustering.cells:
        refs = [tree.edge_ref(e) for e in cell]
        if len(cell) == 1:
            notes.append(f"cluster {refs[0]} is a singleton; nothing to leave out")
            continue
        zeta, beta, kappa = scorer.cluster_posterior(cell)
        mean, var = compound_moments(zeta, beta, kappa)
        sd = math.sqrt(var) if math.isfinite(var) else math.inf
        intact = scorer.cluster_score(cell)
        for e in cell:
            rest = tuple(x for x in cell if x != e)
            holds = np.asarray(scorer.stats.holds.get(e, ()), dtype=float)
            lo, hi = mean - sd, mean + sd
            if holds.size == 0:
                obs, flag = None, "low-information"
            else:
                obs = float(holds.mean())
                flag = "outside" if not lo <= obs <= hi else "ok"
            records.append(
                LooRecord(
                    "cluster", refs, tree.edge_ref(e), intact, scorer.cluster_score(rest),
                    scorer.cluster_score((e,)), [mean], [lo], [hi], None if obs is None else [obs],
                    int(holds.size), flag,
                )
            )
    return records, notes
