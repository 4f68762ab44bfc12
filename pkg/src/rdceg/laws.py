"""Holding-time distributions.

Weibull laws use the power-scale parametrisation

    f(t | theta, kappa) = (kappa / theta) t^(kappa - 1) exp(-t^kappa / theta)

so that ``theta`` is conjugate to an Inverse-Gamma prior once ``kappa`` is fixed.
Under that parametrisation ``T^kappa`` is exponential with mean ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

__all__ = [
    "HoldingLaw",
    "Weibull",
    "CompoundWeibullIG",
    "Mixture",
    "Convolution",
    "PointMass",
    "weibull_density",
    "compound_density",
    "compound_cdf",
    "compound_sample",
    "compound_moments",
    "law_from_dict",
]


def _check_positive(**params):
    for name, value in params.items():
        if not value > 0 or not math.isfinite(value):
            raise ValueError(f"{name} must be a finite positive number, got {value!r}")


def weibull_density(t, theta, kappa):
    """Weibull density in the power-scale parametrisation."""
    _check_positive(theta=theta, kappa=kappa)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("holding time must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = kappa / theta * np.power(t, kappa - 1.0) * np.exp(-np.power(t, kappa) / theta)
    if kappa == 1.0:
        out = np.where(t == 0, 1.0 / theta, out)
    elif kappa > 1.0:
        out = np.where(t == 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def compound_density(zeta, beta, kappa, t):
    """Density of a Weibull whose scale ``theta`` is Inverse-Gamma(zeta, beta).

    Closed form of the integral over ``theta``::

        f(t) = kappa t^(kappa-1) zeta beta^zeta / (beta + t^kappa)^(zeta+1)
    """
    _check_positive(zeta=zeta, beta=beta, kappa=kappa)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("holding time must be nonnegative")
    tk = np.power(t, kappa)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_core = (
            math.log(kappa * zeta)
            + zeta * math.log(beta)
            - (zeta + 1.0) * np.log(beta + tk)
        )
        out = np.exp(log_core) * np.power(t, kappa - 1.0)
    if kappa > 1.0:
        out = np.where(t == 0, 0.0, out)
    elif kappa == 1.0:
        out = np.where(t == 0, np.exp(log_core), out)
    return out[()] if out.ndim == 0 else out


def compound_cdf(zeta, beta, kappa, t):
    _check_positive(zeta=zeta, beta=beta, kappa=kappa)
    t = np.asarray(t, dtype=float)
    tk = np.power(np.maximum(t, 0.0), kappa)
    # 1 - (beta / (beta + t^k))^zeta, computed without cancellation near 0
    out = -np.expm1(-zeta * np.log1p(tk / beta))
    return out[()] if out.ndim == 0 else out


def compound_sample(zeta, beta, kappa, rng, size=None):
    """Two-stage draw: theta ~ IG(zeta, beta), then T = (theta * E)^(1/kappa)."""
    _check_positive(zeta=zeta, beta=beta, kappa=kappa)
    theta = beta / rng.gamma(zeta, 1.0, size=size)
    return np.power(theta * rng.standard_exponential(size=size), 1.0 / kappa)


def compound_moments(zeta, beta, kappa):
    """Mean and variance of the Weibull / Inverse-Gamma compound law.

    A moment that does not exist (``zeta <= 1/kappa`` for the mean,
    ``zeta <= 2/kappa`` for the variance) is reported as ``math.inf``.
    """
    _check_positive(zeta=zeta, beta=beta, kappa=kappa)
    r1, r2 = 1.0 / kappa, 2.0 / kappa
    if zeta <= r1:
        return math.inf, math.inf
    log_mean = gammaln(zeta - r1) + gammaln(1.0 + r1) + r1 * math.log(beta) - gammaln(zeta)
    mean = math.exp(log_mean)
    if zeta <= r2:
        return mean, math.inf
    second = math.exp(gammaln(zeta - r2) + gammaln(1.0 + r2) + r2 * math.log(beta) - gammaln(zeta))
    return mean, max(second - mean * mean, 0.0)


class HoldingLaw:
    """Common interface; subclasses provide pdf/cdf/sample/mean/var."""

    kind = "abstract"
    continuous = True

    def sf(self, t):
        return 1.0 - np.asarray(self.cdf(t))

    def quantile(self, p):
        if not 0 <= p < 1:
            raise ValueError("p must lie in [0, 1)")
        lo, hi = 0.0, 1.0
        while self.cdf(hi) < p:
            hi *= 2.0
            if hi > 1e300:
                return math.inf
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < p:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(hi, 1.0):
                break
        return hi

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Weibull(HoldingLaw):
    theta: float
    kappa: float
    kind = "weibull"

    def __post_init__(self):
        _check_positive(theta=self.theta, kappa=self.kappa)

    def pdf(self, t):
        return weibull_density(t, self.theta, self.kappa)

    def cdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        out = -np.expm1(-np.power(t, self.kappa) / self.theta)
        return out[()] if out.ndim == 0 else out

    def sample(self, rng, size=None):
        return np.power(self.theta * rng.standard_exponential(size=size), 1.0 / self.kappa)

    def quantile(self, p):
        return (-self.theta * math.log1p(-p)) ** (1.0 / self.kappa)

    def mean(self):
        return self.theta ** (1.0 / self.kappa) * math.gamma(1.0 + 1.0 / self.kappa)

    def var(self):
        r = 1.0 / self.kappa
        return self.theta ** (2 * r) * (math.gamma(1 + 2 * r) - math.gamma(1 + r) ** 2)

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta, "kappa": self.kappa}


@dataclass(frozen=True)
class CompoundWeibullIG(HoldingLaw):
    zeta: float
    beta: float
    kappa: float
    kind = "compound"

    def __post_init__(self):
        _check_positive(zeta=self.zeta, beta=self.beta, kappa=self.kappa)

    def pdf(self, t):
        return compound_density(self.zeta, self.beta, self.kappa, t)

    def cdf(self, t):
        return compound_cdf(self.zeta, self.beta, self.kappa, t)

    def sample(self, rng, size=None):
        return compound_sample(self.zeta, self.beta, self.kappa, rng, size)

    def quantile(self, p):
        if p <= 0:
            return 0.0
        return (self.beta * math.expm1(-math.log1p(-p) / self.zeta)) ** (1.0 / self.kappa)

    def mean(self):
        return compound_moments(self.zeta, self.beta, self.kappa)[0]

    def var(self):
        return compound_moments(self.zeta, self.beta, self.kappa)[1]

    def to_dict(self):
        return {"kind": self.kind, "zeta": self.zeta, "beta": self.beta, "kappa": self.kappa}


@dataclass(frozen=True)
class PointMass(HoldingLaw):
    """Degenerate holding time, used for untimed (instantaneous) transitions."""

    at: float = 0.0
    kind = "point"
    continuous = False

    def __post_init__(self):
        if not self.at >= 0:
            raise ValueError("point mass location must be nonnegative")

    def pdf(self, t):
        # no density; the law is an atom
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        return out[()] if out.ndim == 0 else out

    def cdf(self, t):
        out = (np.asarray(t, dtype=float) >= self.at).astype(float)
        return out[()] if out.ndim == 0 else out

    def sample(self, rng, size=None):
        if size is None:
            return self.at
        return np.full(size, self.at, dtype=float)

    def quantile(self, p):
        return self.at

    def mean(self):
        return self.at

    def var(self):
        return 0.0

    def to_dict(self):
        return {"kind": self.kind, "at": self.at}


@dataclass(frozen=True)
class Mixture(HoldingLaw):
    weights: tuple
    laws: tuple
    kind = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.laws) or len(w) == 0:
            raise ValueError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "laws", tuple(self.laws))

    @property
    def continuous(self):
        return all(law.continuous for law in self.laws)

    def pdf(self, t):
        return sum(w * np.asarray(law.pdf(t)) for w, law in zip(self.weights, self.laws))

    def cdf(self, t):
        return sum(w * np.asarray(law.cdf(t)) for w, law in zip(self.weights, self.laws))

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        which = rng.choice(len(self.laws), size=n, p=self.weights)
        out = np.empty(n)
        for k, law in enumerate(self.laws):
            idx = np.flatnonzero(which == k)
            if idx.size:
                out[idx] = law.sample(rng, idx.size)
        return out[0] if size is None else out.reshape(size)

    def mean(self):
        return sum(w * law.mean() for w, law in zip(self.weights, self.laws) if w > 0)

    def var(self):
        m = self.mean()
        if math.isinf(m):
            return math.inf
        second = 0.0
        for w, law in zip(self.weights, self.laws):
            if w > 0:
                second += w * (law.var() + law.mean() ** 2)
        return second - m * m

    def to_dict(self):
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "laws": [law.to_dict() for law in self.laws],
        }


@dataclass(frozen=True)
class Convolution(HoldingLaw):
    """Law of a sum of independent holding times, evaluated on a uniform grid.

    Each continuous component is discretised to cell masses on
    ``[0, upper]`` (tail mass folded into the last cell) and the masses are
    convolved; point-mass components become a shift.  The CDF spreads every
    grid mass uniformly over its cell, which is second-order accurate.
    """

    laws: tuple
    n_grid: int = 4096
    upper: float | None = None
    kind = "convolution"
    _grid: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.laws) == 0:
            raise ValueError("convolution needs at least one law")
        object.__setattr__(self, "laws", tuple(self.laws))
        object.__setattr__(self, "_grid", {})

    def _discretised(self):
        if self._grid:
            return self._grid
        shift = sum(law.at for law in self.laws if isinstance(law, PointMass))
        parts = [law for law in self.laws if not isinstance(law, PointMass)]
        if not parts:
            self._grid.update(shift=shift, masses=None)
            return self._grid
        upper = self.upper
        if upper is None:
            upper = 1.5 * sum(law.quantile(0.9999) for law in parts)
            if not math.isfinite(upper) or upper <= 0:
                raise ValueError("cannot bound the convolution grid; pass upper=")
        dx = upper / self.n_grid
        edges = np.arange(self.n_grid + 1) * dx
        masses = None
        for law in parts:
            c = np.asarray(law.cdf(edges), dtype=float)
            m = np.diff(c)
            m[-1] += 1.0 - c[-1]
            m = np.clip(m, 0.0, None)
            masses = m if masses is None else _fft_convolve(masses, m)
        # mass j sits at (j + k/2) * dx for k continuous parts
        self._grid.update(shift=shift, masses=masses, dx=dx, offset=len(parts) * dx / 2.0)
        return self._grid

    def cdf(self, t):
        g = self._discretised()
        t = np.asarray(t, dtype=float) - g["shift"]
        if g["masses"] is None:
            out = (t >= 0).astype(float)
            return out[()] if out.ndim == 0 else out
        cum = np.concatenate([[0.0], np.cumsum(g["masses"])])
        bounds = g["offset"] - g["dx"] / 2.0 + np.arange(cum.size) * g["dx"]
        out = np.interp(t, bounds, cum, left=0.0, right=cum[-1])
        out = np.minimum(out, 1.0)
        return out[()] if out.ndim == 0 else out

    def pdf(self, t):
        g = self._discretised()
        t = np.asarray(t, dtype=float) - g["shift"]
        if g["masses"] is None:
            out = np.zeros_like(t)
            return out[()] if out.ndim == 0 else out
        pts = g["offset"] + np.arange(g["masses"].size) * g["dx"]
        out = np.interp(t, pts, g["masses"] / g["dx"], left=0.0, right=0.0)
        return out[()] if out.ndim == 0 else out

    @property
    def continuous(self):
        return any(law.continuous for law in self.laws)

    def sample(self, rng, size=None):
        total = 0.0
        for law in self.laws:
            total = total + np.asarray(law.sample(rng, size))
        return float(total) if size is None else total

    def mean(self):
        return sum(law.mean() for law in self.laws)

    def var(self):
        return sum(law.var() for law in self.laws)

    def to_dict(self):
        return {
            "kind": self.kind,
            "laws": [law.to_dict() for law in self.laws],
            "n_grid": self.n_grid,
        }


def _fft_convolve(a, b):
    n = a.size + b.size - 1
    size = 1 << (n - 1).bit_length()
    out = np.fft.irfft(np.fft.rfft(a, size) * np.fft.rfft(b, size), size)[:n]
    return np.clip(out, 0.0, None)


def law_from_dict(d):
    kind = d["kind"]
    if kind == "weibull":
        return Weibull(d["theta"], d["kappa"])
    if kind == "compound":
        return CompoundWeibullIG(d["zeta"], d["beta"], d["kappa"])
    if kind == "point":
        return PointMass(d.get("at", 0.0))
    if kind == "mixture":
        return Mixture(tuple(d["weights"]), tuple(law_from_dict(x) for x in d["laws"]))
    if kind == "convolution":
        return Convolution(tuple(law_from_dict(x) for x in d["laws"]), n_grid=d.get("n_grid", 4096))
    raise ValueError(f"unknown holding law kind {kind!r}")
