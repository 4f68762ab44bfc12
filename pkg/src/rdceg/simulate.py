"""Open-population simulation from a ground-truth model.

Individuals are processed in fixed blocks; block ``b`` draws from its own
stream ``SeedSequence(seed, spawn_key=(b,))``, so an individual's path
depends only on the seed and its id.
"""

from __future__ import annotations

import datetime as _dt

import numpy as np

from .conjugate import SufficientStats
from .data import Dataset, PathObservation
from .models import GroundTruthModel

__all__ = ["simulate_population", "simulate_stats", "BLOCK_SIZE"]

BLOCK_SIZE = 1024
_CRITICAL, _DROPOUT, _CENSORED = 0, 1, 2
_TERMINAL_NAMES = ("critical", "dropout", "censored")


class _Tables:
    """Per-situation lookup arrays over the full tree."""

    def __init__(self, model: GroundTruthModel):
        tree = model.tree
        kept = set(model.modified.tree.names)
        mu = model.mu
        self.tree = tree
        self.situations = tree.situations
        self.cum = {}
        self.edges = {}
        for s in self.situations:
            kids = tree.children(s)
            d = float(model.dropout.get(tree.names[s], 0.0))
            probs = []
            live = [e for e in kids if e.child in kept]
            if s in mu:
                live_p = dict(zip([e.label for e in model.modified.tree.children(s)], mu[s]))
            else:
                live_p = {}
            for e in kids:
                if e.child in kept:
                    probs.append((1.0 - d) * live_p[e.label])
                else:
                    probs.append(d / max(1, len(kids) - len(live)))
            p = np.asarray(probs)
            p = p / p.sum()
            self.cum[s] = np.cumsum(p)
            self.edges[s] = kids
        n_edges = len(tree.edges)
        self.child = np.full(n_edges, -1)
        self.timed = np.zeros(n_edges, dtype=bool)
        self.theta = np.ones(n_edges)
        self.kappa = np.ones(n_edges)
        self.boundary = np.zeros(n_edges, dtype=bool)
        for e in tree.edges:
            self.child[e.id] = tree.resolve(e.child)
            self.timed[e.id] = e.timed
            self.boundary[e.id] = e.id in tree.boundaries or e.child in tree.repeats
            if e.timed and e.id in model.theta:
                self.theta[e.id] = model.theta[e.id]
                self.kappa[e.id] = model.kappa[e.id]
        self.is_situation = np.zeros(len(tree.names) + 1, dtype=bool)
        self.is_situation[list(self.situations)] = True
        self.is_critical = np.zeros(len(tree.names) + 1, dtype=bool)
        self.is_critical[list(model.critical)] = True


def _simulate_block(model, tables, n, rng):
    """Returns step arrays (individual, edge, hold) plus terminal info."""
    cur = np.full(n, tables.tree.root)
    slices = np.ones(n, dtype=int)
    clock = np.zeros(n)
    status = np.full(n, -1)
    cens_hold = np.full(n, np.nan)
    cens_at = np.full(n, -1)
    rec_ind, rec_edge, rec_hold = [], [], []
    active = np.arange(n)
    while active.size:
        step_edge = np.empty(active.size, dtype=int)
        state = cur[active]
        for s in tables.situations:
            idx = np.flatnonzero(state == s)
            if not idx.size:
                continue
            u = rng.random(idx.size)
            k = np.searchsorted(tables.cum[s], u, side="right")
            k = np.minimum(k, len(tables.edges[s]) - 1)
            ids = np.array([e.id for e in tables.edges[s]])
            step_edge[idx] = ids[k]
        hold = np.full(active.size, np.nan)
        timed = tables.timed[step_edge]
        for eid in np.unique(step_edge[timed]):
            idx = np.flatnonzero(step_edge == eid)
            hold[idx] = np.power(tables.theta[eid] * rng.standard_exponential(idx.size), 1.0 / tables.kappa[eid])
        child = tables.child[step_edge]
        dropped = ~tables.is_situation[child] & ~tables.is_critical[child]
        if model.study_time is not None:
            over = timed & (clock[active] + np.nan_to_num(hold) > model.study_time)
            over_idx = active[over]
            status[over_idx] = _CENSORED
            cens_hold[over_idx] = model.study_time - clock[over_idx]
            cens_at[over_idx] = state[over]
        else:
            over = np.zeros(active.size, dtype=bool)
        # a dropout ends the path without a recorded step
        drop_idx = active[dropped & ~over]
        status[drop_idx] = _DROPOUT
        moving = ~dropped & ~over
        mv = active[moving]
        rec_ind.append(mv)
        rec_edge.append(step_edge[moving])
        rec_hold.append(hold[moving])
        clock[mv] += np.nan_to_num(hold[moving])
        new_state = child[moving]
        cur[mv] = new_state
        slices[mv] += tables.boundary[step_edge[moving]]
        crit = tables.is_critical[new_state]
        status[mv[crit]] = _CRITICAL
        limit = ~crit & (slices[mv] > model.max_slices)
        status[mv[limit]] = _CENSORED
        active = active[status[active] < 0]
    if rec_ind:
        ind = np.concatenate(rec_ind)
        edge = np.concatenate(rec_edge)
        hold = np.concatenate(rec_hold)
    else:
        ind, edge, hold = np.empty(0, int), np.empty(0, int), np.empty(0)
    return ind, edge, hold, status, cens_hold, cens_at


def _blocks(n, seed):
    for b, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        yield start, size, rng


def simulate_population(model: GroundTruthModel, n: int, seed: int, generated_at: str | None = "now") -> Dataset:
    """Simulate ``n`` individuals entering at the root.

    ``generated_at="now"`` stamps the provenance header with the current UTC
    time; pass ``None`` to leave it out.
    """
    if n < 1:
        raise ValueError("population size must be at least 1")
    tables = _Tables(model)
    tree = model.tree
    root_name = tree.names[tree.root]
    labels = [e.label for e in tree.edges]
    obs = []
    for start, size, rng in _blocks(n, seed):
        ind, edge, hold, status, cens_hold, _ = _simulate_block(model, tables, size, rng)
        order = np.argsort(ind, kind="stable")
        ind, edge, hold = ind[order], edge[order], hold[order]
        bounds = np.searchsorted(ind, np.arange(size + 1))
        for i in range(size):
            a, b = bounds[i], bounds[i + 1]
            steps = tuple(
                (labels[e], None if np.isnan(h) else float(h)) for e, h in zip(edge[a:b].tolist(), hold[a:b].tolist())
            )
            ch = None if np.isnan(cens_hold[i]) else float(cens_hold[i])
            obs.append(PathObservation(start + i, root_name, steps, _TERMINAL_NAMES[status[i]], ch))
    prov = {"model": model.name, "n": n, "seed": seed}
    if generated_at == "now":
        prov["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    elif generated_at is not None:
        prov["generated_at"] = generated_at
    return Dataset(obs, prov)


def simulate_stats(model: GroundTruthModel, n: int, seed: int) -> SufficientStats:
    """Same draws as :func:`simulate_population`, tallied straight into
    sufficient statistics on the model's modified tree."""
    if n < 1:
        raise ValueError("population size must be at least 1")
    tables = _Tables(model)
    counts = np.zeros(len(model.tree.edges), dtype=np.int64)
    hold_parts: dict[int, list] = {}
    cens_parts: dict[int, list] = {}
    for _, size, rng in _blocks(n, seed):
        ind, edge, hold, status, cens_hold, cens_at = _simulate_block(model, tables, size, rng)
        order = np.argsort(ind, kind="stable")
        edge, hold = edge[order], hold[order]
        counts += np.bincount(edge, minlength=counts.size)
        timed = ~np.isnan(hold)
        for eid in np.unique(edge[timed]):
            hold_parts.setdefault(int(eid), []).append(hold[edge == eid])
        for s in np.unique(cens_at[cens_at >= 0]):
            cens_parts.setdefault(int(s), []).append(cens_hold[cens_at == s])
    return SufficientStats(
        {int(e): int(c) for e, c in enumerate(counts) if c},
        {e: np.concatenate(p).tolist() for e, p in hold_parts.items()},
        {s: np.concatenate(p).tolist() for s, p in cens_parts.items()},
    )
