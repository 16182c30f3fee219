"""Critical offspring distributions and the derived laws the samplers need.

A law is accepted only if it is finitely supported, critical (mean 1 within
1e-9) and has positive variance.  From it we derive

* the size-biased law  mu_sb(i) = i*mu(i),
* the adjoint law      mu_adj(i) = sum_{j >= i+1} mu(j)   (total mass = mean = 1),
* the joint spine-split law  P(k_p=i, k_f=j) = mu(i+j+1),

all as explicit tables, plus the cumulative tables the sampling kernels
consume.  mean(mu_adj) = sigma^2/2, which is asserted at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OffspringError(ValueError):
    pass


class NotCritical(OffspringError):
    pass


class ZeroVariance(OffspringError):
    pass


@dataclass(frozen=True)
class OffspringDistribution:
    pmf: np.ndarray
    mean: float
    sigma2: float
    exp_moment_radius: float
    name: str = "custom"
    # derived tables (filled in __post_init__)
    sb_pmf: np.ndarray = field(default=None, repr=False)
    adj_pmf: np.ndarray = field(default=None, repr=False)
    cdf: np.ndarray = field(default=None, repr=False)
    adj_cdf: np.ndarray = field(default=None, repr=False)
    split_cdf: np.ndarray = field(default=None, repr=False)
    split_kp: np.ndarray = field(default=None, repr=False)
    split_kf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sb_pmf", size_biased(self))
        object.__setattr__(self, "adj_pmf", adjoint(self))
        object.__setattr__(self, "cdf", _cdf(self.pmf))
        object.__setattr__(self, "adj_cdf", _cdf(self.adj_pmf))
        kp, kf, cdf = _split_tables(self.pmf)
        object.__setattr__(self, "split_kp", kp)
        object.__setattr__(self, "split_kf", kf)
        object.__setattr__(self, "split_cdf", cdf)
        adj_mean = float(np.dot(np.arange(self.adj_pmf.size), self.adj_pmf))
        if abs(adj_mean - self.sigma2 / 2.0) > 1e-9:
            raise OffspringError("adjoint mean does not equal sigma^2/2")

    @property
    def max_children(self) -> int:
        return self.pmf.size - 1


def _cdf(pmf):
    c = np.cumsum(np.asarray(pmf, dtype=np.float64))
    c[-1] = max(c[-1], 1.0)  # guard the inverse-CDF scan against rounding
    return c


def _split_tables(pmf):
    """Flattened joint law of (k_p, k_f): P(i, j) = mu(i+j+1)."""
    kp, kf, probs = [], [], []
    for t in range(1, pmf.size):
        for i in range(t):
            kp.append(i)
            kf.append(t - 1 - i)
            probs.append(pmf[t])
    if not probs:  # delta_0 never passes criticality, but keep the arrays sane
        kp, kf, probs = [0], [0], [1.0]
    return np.asarray(kp, dtype=np.int64), np.asarray(kf, dtype=np.int64), _cdf(probs)


def new_from_pmf(weights, name="custom") -> OffspringDistribution:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise OffspringError("pmf must be a nonempty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise OffspringError("pmf weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise OffspringError("pmf weights must not all be zero")
    pmf = w / total
    ks = np.arange(pmf.size, dtype=np.float64)
    mean = float(np.dot(ks, pmf))
    if abs(mean - 1.0) > 1e-9:
        raise NotCritical(f"offspring mean is {mean!r}, not 1")
    sigma2 = float(np.dot(ks * ks, pmf) - mean * mean)
    if sigma2 <= 1e-12:
        raise ZeroVariance("offspring variance must be positive")
    pmf.setflags(write=False)
    # ln 2 documents the finite-exponential-moment hypothesis; trivial for
    # finite support.
    return OffspringDistribution(pmf=pmf, mean=mean, sigma2=sigma2,
                                 exp_moment_radius=float(np.log(2.0)), name=name)


def size_biased(mu: OffspringDistribution):
    return np.arange(mu.pmf.size) * mu.pmf


def adjoint(mu: OffspringDistribution):
    """Tail sums: mu_adj(i) = sum_{j>=i+1} mu(j); support {0..kmax-1}."""
    tail = np.cumsum(mu.pmf[::-1])[::-1]  # tail[i] = sum_{j>=i} mu(j)
    return tail[1:].copy()


def sample(pmf_cdf, rng) -> int:
    """Inverse-CDF draw; one uniform per call (the kernel draw protocol)."""
    u = rng.random()
    k = 0
    last = pmf_cdf.size - 1
    while k < last and u >= pmf_cdf[k]:
        k += 1
    return k


def spine_split_sample(mu: OffspringDistribution, rng):
    """Draw (k_p, k_f) from P(i,j) = mu(i+j+1); marginals are the adjoint law."""
    u = rng.random()
    k = 0
    last = mu.split_cdf.size - 1
    while k < last and u >= mu.split_cdf[k]:
        k += 1
    return int(mu.split_kp[k]), int(mu.split_kf[k])


def geometric_pmf(cutoff=60):
    i = np.arange(cutoff + 1)
    return 0.5 ** (i + 1)


_PRESETS = {
    "binary": lambda: new_from_pmf([0.5, 0.0, 0.5], name="binary"),
    "uniform03": lambda: new_from_pmf([0.25, 0.25, 0.25, 0.25], name="uniform03"),
}


def preset(spec: str) -> OffspringDistribution:
    """CLI presets: binary | geometric:N | uniform03 | custom:@file."""
    if spec in _PRESETS:
        return _PRESETS[spec]()
    if spec.startswith("geometric"):
        cutoff = 60
        if ":" in spec:
            cutoff = int(spec.split(":", 1)[1])
        return new_from_pmf(geometric_pmf(cutoff), name=f"geometric:{cutoff}")
    if spec.startswith("custom:@"):
        path = spec[len("custom:@"):]
        with open(path, "r", encoding="utf-8") as fh:
            w = [float(line.strip()) for line in fh if line.strip() and not line.startswith("#")]
        return new_from_pmf(w, name=spec)
    raise OffspringError(f"unknown offspring preset {spec!r}")
