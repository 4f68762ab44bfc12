"""Semi-Markov representation of a fitted RDCEG and time-domain queries."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import Rdceg
from .laws import CompoundWeibullIG, Convolution, HoldingLaw, Mixture, PointMass, law_from_dict

__all__ = [
    "CondensationError",
    "Transition",
    "Smp",
    "to_smp",
    "renewal_kernel",
    "condense_smp",
    "first_passage",
    "FirstPassageResult",
    "absorption_probability",
]

SMP_SCHEMA = "rdceg.smp/1"


class CondensationError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    source: int
    target: int
    prob: float
    law: HoldingLaw
    labels: tuple  # edge labels along the (shortest) underlying path
    cyclic: bool
    note: str | None = None


@dataclass(frozen=True, eq=False)
class Smp:
    states: tuple[str, ...]
    transitions: tuple[Transition, ...]
    entry: int
    absorbing: frozenset
    slice_paths: bool = True  # every transition stays inside one passage-slice unless flagged cyclic

    def __post_init__(self):
        n = len(self.states)
        P = np.zeros((n, n))
        laws = {}
        for tr in self.transitions:
            if (tr.source, tr.target) in laws:
                raise ValueError("at most one transition per ordered pair of states")
            P[tr.source, tr.target] = tr.prob
            laws[(tr.source, tr.target)] = tr
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "_by_pair", laws)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    def state(self, name_or_id) -> int:
        if isinstance(name_or_id, (int, np.integer)):
            if not 0 <= name_or_id < len(self.states):
                raise KeyError(f"unknown state {name_or_id!r}")
            return int(name_or_id)
        try:
            return self._index[name_or_id]
        except KeyError:
            raise KeyError(f"unknown state {name_or_id!r}") from None

    def transition(self, i, j) -> Transition | None:
        return self._by_pair.get((self.state(i), self.state(j)))

    def law(self, i, j) -> HoldingLaw | None:
        tr = self.transition(i, j)
        return None if tr is None else tr.law

    @property
    def initial(self) -> np.ndarray:
        p = np.zeros(len(self.states))
        p[self.entry] = 1.0
        return p

    def check(self, tol: float = 1e-12) -> None:
        """Row-stochastic over non-absorbing states, absorbing rows empty."""
        for i in range(len(self.states)):
            row = self.P[i].sum()
            if i in self.absorbing:
                if row != 0:
                    raise AssertionError(f"absorbing state {self.states[i]} has transitions")
            elif abs(row - 1.0) > tol:
                raise AssertionError(f"row {self.states[i]} sums to {row!r}")

    def reachable(self, i) -> set[int]:
        i = self.state(i)
        seen = {i}
        stack = [i]
        while stack:
            v = stack.pop()
            for w in np.flatnonzero(self.P[v] > 0):
                if int(w) not in seen:
                    seen.add(int(w))
                    stack.append(int(w))
        return seen

    def to_dict(self) -> dict:
        return {
            "schema": SMP_SCHEMA,
            "states": list(self.states),
            "entry": self.states[self.entry],
            "absorbing": [self.states[i] for i in sorted(self.absorbing)],
            "P": self.P.tolist(),
            "transitions": [
                {
                    "from": self.states[t.source],
                    "to": self.states[t.target],
                    "prob": t.prob,
                    "labels": list(t.labels),
                    "cyclic": t.cyclic,
                    "note": t.note,
                    "law": t.law.to_dict(),
                }
                for t in self.transitions
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "Smp":
        if d.get("schema") != SMP_SCHEMA:
            raise ValueError(f"unsupported SMP schema {d.get('schema')!r}")
        states = tuple(d["states"])
        idx = {s: i for i, s in enumerate(states)}
        trs = tuple(
            Transition(idx[t["from"]], idx[t["to"]], t["prob"], law_from_dict(t["law"]), tuple(t["labels"]),
                       t["cyclic"], t.get("note"))
            for t in d["transitions"]
        )
        return cls(states, trs, idx[d["entry"]], frozenset(idx[s] for s in d["absorbing"]))


def _mixture(parts):
    """Combine ``(prob, law, labels, cyclic)`` routes between one pair of states."""
    total = sum(p for p, *_ in parts)
    if len(parts) == 1:
        p, law, labels, cyc = parts[0]
        return total, law, labels, cyc, None
    shortest = min((labels for _, _, labels, _ in parts), key=lambda x: (len(x), x))
    laws = [law for _, law, *_ in parts]
    if all(law == laws[0] for law in laws):
        return total, laws[0], shortest, any(c for *_, c in parts), f"{len(parts)} routes with one law"
    law = Mixture(tuple(p / total for p, *_ in parts), tuple(laws))
    return total, law, shortest, any(c for *_, c in parts), f"mixture of {len(parts)} routes"


def _chain(laws, n_grid):
    """Holding law of consecutive transitions; zero point masses drop out."""
    laws = [x for x in laws if x != PointMass(0.0)]
    if not laws:
        return PointMass(0.0)
    if len(laws) == 1:
        return laws[0]
    return Convolution(tuple(laws), n_grid=n_grid)


def to_smp(r: Rdceg, untimed: str = "renormalize", untimed_hold: float = 0.0) -> Smp:
    """Semi-Markov process over the positions touched by timed edges.

    The state space holds every position with a timed out-edge, every
    target of a timed edge, and the root.  Untimed edges are dropped and the
    remaining probabilities renormalised (``untimed="renormalize"``) or kept
    with a point-mass holding time at ``untimed_hold`` (``"degenerate"``).
    A state whose out-edges are all untimed always keeps them.  Untimed
    steps through positions outside the state space are chained, so each
    transition's law is that of its first edge.
    """
    if untimed not in ("renormalize", "degenerate"):
        raise ValueError("untimed policy must be 'renormalize' or 'degenerate'")
    if r.posterior is None:
        raise ValueError("the graph carries no posterior hyperparameters")
    timed_sources = {e.source for e in r.edges if e.timed}
    timed_targets = {e.target for e in r.edges if e.timed}
    members = sorted(timed_sources | timed_targets | {r.root})
    index = {v: i for i, v in enumerate(members)}

    def edge_law(i):
        e = r.edges[i]
        if not e.timed:
            return PointMass(untimed_hold)
        try:
            zeta, beta, kappa = r.edge_ig(i)
        except KeyError:
            raise ValueError(f"edge {r.names[e.source]}->{r.names[e.target]} has no holding-time posterior") from None
        return CompoundWeibullIG(zeta, beta, kappa)

    def edge_prob(i):
        try:
            return r.edge_probability(i)
        except KeyError:
            raise ValueError(f"stage of {r.names[r.edges[i].source]} has no posterior") from None

    transitions = []
    absorbing = set()
    for v in members:
        out = list(r.out_edges(v))
        if not out:
            absorbing.add(index[v])
            continue
        if untimed == "renormalize" and any(r.edges[i].timed for i in out):
            out = [i for i in out if r.edges[i].timed]
        routes: dict[int, list] = {}
        for i in out:
            first = r.edges[i]
            law = edge_law(i)
            stack = [(first.target, edge_prob(i), (first.label,), first.cyclic, {v})]
            while stack:
                w, p, labels, cyc, seen = stack.pop()
                if w in index:
                    routes.setdefault(w, []).append((p, law, labels, cyc))
                    continue
                if w in seen:
                    raise ValueError("untimed cycle outside the state space")
                for j in r.out_edges(w):
                    e = r.edges[j]
                    stack.append((e.target, p * edge_prob(j), labels + (e.label,), cyc or e.cyclic, seen | {w}))
        total = sum(p for parts in routes.values() for p, *_ in parts)
        for w in sorted(routes):
            p, law, labels, cyc, note = _mixture(sorted(routes[w], key=lambda x: x[2]))
            transitions.append(Transition(index[v], index[w], p / total, law, labels, cyc, note))
    return Smp(tuple(r.names[v] for v in members), tuple(transitions), index[r.root], frozenset(absorbing))


def renewal_kernel(smp: Smp, i, j, t) -> float:
    """``Q_ij(t) = p_ij F_ij(t)``."""
    i, j = smp.state(i), smp.state(j)
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    tr = smp.transition(i, j)
    if tr is None:
        return 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else 0.0
    return tr.prob * tr.law.cdf(t)


def condense_smp(smp: Smp, keep, n_grid: int = 4096) -> Smp:
    """Restrict to ``keep``, replacing bypassed routes by convolutions.

    Direct transitions between kept states are copied.  A route through
    dropped states must not use a cyclic transition (routes are confined to
    the first passage-slice); such a route raises :class:`CondensationError`.
    Several routes between the same kept pair become a mixture, flagged in
    the transition note.  Rows are renormalised afterwards.
    """
    keep_ids = sorted({smp.state(k) for k in keep})
    if smp.entry not in keep_ids:
        raise ValueError("the entry state must be kept")
    kept = set(keep_ids)
    new_index = {v: i for i, v in enumerate(keep_ids)}
    transitions = []
    absorbing = set()
    for i in keep_ids:
        if i in smp.absorbing:
            absorbing.add(new_index[i])
            continue
        routes: dict[int, list] = {}
        stack = [(i, 1.0, (), (), False, frozenset([i]), 0)]
        while stack:
            v, p, laws, labels, cyc, seen, depth = stack.pop()
            for tr in smp.transitions:
                if tr.source != v:
                    continue
                w = tr.target
                if w in kept:
                    if depth > 0 and tr.cyclic:
                        raise CondensationError(
                            f"route {smp.states[i]} -> {smp.states[w]} crosses a cyclic transition; "
                            "condensation is only defined inside the first passage-slice"
                        )
                    routes.setdefault(w, []).append((p * tr.prob, laws + (tr.law,), labels + tr.labels, cyc or tr.cyclic))
                    continue
                if tr.cyclic:
                    raise CondensationError(
                        f"route from {smp.states[i]} through {smp.states[w]} crosses a cyclic transition; "
                        "condensation is only defined inside the first passage-slice"
                    )
                if w in seen:
                    raise CondensationError("route revisits a dropped state")
                stack.append((w, p * tr.prob, laws + (tr.law,), labels + tr.labels, cyc, seen | {w}, depth + 1))
        total = sum(p for parts in routes.values() for p, *_ in parts)
        for w in sorted(routes):
            parts = []
            for p, laws, labels, cyc in sorted(routes[w], key=lambda x: x[2]):
                parts.append((p, _chain(laws, n_grid), labels, cyc))
            p, law, labels, cyc, note = _mixture(parts)
            if note is None and isinstance(law, Convolution):
                note = "condensed"
            transitions.append(Transition(new_index[i], new_index[w], p / total, law, labels, cyc, note))
    return Smp(tuple(smp.states[v] for v in keep_ids), tuple(transitions), new_index[smp.entry], frozenset(absorbing))


@dataclass
class FirstPassageResult:
    source: str
    target: str
    horizon: float
    n_samples: int
    hit_probability: float
    hit_probability_se: float
    mean_time: float | None
    mean_time_se: float | None
    quantiles: dict = field(default_factory=dict)
    diagnostic: str | None = None
    times: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "horizon": self.horizon,
            "n_samples": self.n_samples,
            "hit_probability": self.hit_probability,
            "hit_probability_se": self.hit_probability_se,
            "mean_time": self.mean_time,
            "mean_time_se": self.mean_time_se,
            "quantiles": self.quantiles,
            "diagnostic": self.diagnostic,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for k, v in self.to_dict().items():
            if k == "quantiles":
                for q, x in v.items():
                    w.writerow([f"quantile_{q}", x])
            else:
                w.writerow([k, "" if v is None else v])
        return buf.getvalue()


def _simulate_chunk(smp: Smp, source: int, target: int, horizon: float, n: int, seed: int, chunk: int,
                    max_steps: int) -> np.ndarray:
    """Hitting times for one chunk; ``inf`` where the target was not hit."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))
    cum = np.cumsum(smp.P, axis=1)
    state = np.full(n, source)
    clock = np.zeros(n)
    out = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(max_steps):
        if not active.size:
            break
        nxt = np.empty(active.size, dtype=int)
        cur = state[active]
        for s in np.unique(cur):
            idx = np.flatnonzero(cur == s)
            u = rng.random(idx.size) * cum[s, -1]
            nxt[idx] = np.minimum(np.searchsorted(cum[s], u, side="right"), len(smp.states) - 1)
        hold = np.empty(active.size)
        pairs = cur * len(smp.states) + nxt
        for key in np.unique(pairs):
            idx = np.flatnonzero(pairs == key)
            law = smp.law(int(key // len(smp.states)), int(key % len(smp.states)))
            hold[idx] = law.sample(rng, idx.size)
        clock[active] += hold
        state[active] = nxt
        hit = (nxt == target) & (clock[active] <= horizon)
        out[active[hit]] = clock[active[hit]]
        dead = np.isin(nxt, list(smp.absorbing)) | (clock[active] > horizon)
        active = active[~hit & ~dead]
    return out


def first_passage(smp: Smp, source, target, horizon: float = math.inf, n_samples: int = 100_000,
                  seed: int = 0, jobs: int = 1, chunk_size: int = 65536, max_steps: int = 10_000) -> FirstPassageResult:
    """Monte Carlo first-passage time from ``source`` to ``target``.

    Chunk ``c`` draws from ``SeedSequence(seed, spawn_key=(c,))`` and chunks
    are merged in index order, so results do not depend on ``jobs``.
    ``source == target`` is a passage of length zero.
    """
    i, j = smp.state(source), smp.state(target)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    names = (smp.states[i], smp.states[j])
    if i == j:
        return FirstPassageResult(*names, horizon, n_samples, 1.0, 0.0, 0.0, 0.0, {"0.5": 0.0},
                                  "source equals target; passage time is zero by convention")
    if j not in smp.reachable(i):
        return FirstPassageResult(*names, horizon, n_samples, 0.0, 0.0, None, None, {},
                                  "target is unreachable from source")
    sizes = [min(chunk_size, n_samples - k) for k in range(0, n_samples, chunk_size)]
    args = [(smp, i, j, horizon, sz, seed, c, max_steps) for c, sz in enumerate(sizes)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_simulate_chunk, *zip(*args)))
    else:
        parts = [_simulate_chunk(*a) for a in args]
    times = np.concatenate(parts)
    hits = times[np.isfinite(times)]
    p = hits.size / n_samples
    se = math.sqrt(p * (1 - p) / n_samples)
    diag = None
    if hits.size == 0:
        diag = "no sample reached the target within the horizon"
        return FirstPassageResult(*names, horizon, n_samples, 0.0, se, None, None, {}, diag, times)
    mean = float(hits.mean())
    mse = float(hits.std(ddof=1) / math.sqrt(hits.size)) if hits.size > 1 else math.nan
    qs = {str(q): float(np.quantile(hits, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)}
    return FirstPassageResult(*names, horizon, n_samples, p, se, mean, mse, qs, diag, times)


def absorption_probability(smp: Smp, target) -> np.ndarray:
    """Probability of ever reaching ``target`` from each state (embedded chain)."""
    j = smp.state(target)
    n = len(smp.states)
    h = np.zeros(n)
    h[j] = 1.0
    transient = [i for i in range(n) if i != j and i not in smp.absorbing]
    if not transient:
        return h
    Q = smp.P[np.ix_(transient, transient)]
    b = smp.P[transient, j]
    A = np.eye(len(transient)) - Q
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    h[transient] = np.clip(sol, 0.0, 1.0)
    return h
