"""Collapsed Gibbs samplers for constraint-conditioned Bayesian clustering.

Two generative models over a fixed number of clusters k, with mixture
weights (symmetric Dirichlet, per-component concentration alpha/k) and
component parameters integrated out analytically:

* Mixture of spherical Gaussians -- known observation variance sigma^2,
  cluster means drawn from N(mu0, sigma0^2 I).
* Mixture of Bernoulli products  -- per-dimension biases drawn from
  Beta(beta_a, gamma_a).

Accumulated pairwise feedback enters as a ``ConstraintSet``: each stored
(pair, same?, weight) multiplies the posterior by exp(-weight) whenever
violated. During a sweep the penalty is folded into each point's
conditional as a per-candidate-cluster factor, which preserves the
stationary distribution because, given the rest of the assignment, the
violated constraints touching point i depend only on i's candidate
cluster. Infinite weights are hard constraints; if they make every cluster
infeasible for a point, that draw falls back to a soft weight of 50 and
the event is logged.

Sweeps dispatch between a plain-Python scalar path (fast for narrow data,
and the only affordable option for long enumeration-checked chains) and a
numpy path (fast for wide data such as binarized images). Both consume one
uniform variate per site, so chains are reproducible across paths given
the draw sequence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from scipy.special import gammaln

from .posterior import FinitePosterior
from .structures import FlatClustering, PairAtom

__all__ = [
    "MoGHyper",
    "MoBHyper",
    "ConstraintSet",
    "GibbsState",
    "gibbs_sweep_mog",
    "gibbs_sweep_mob",
    "log_joint",
    "clustering_distance",
    "posterior_committee",
]

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_FALLBACK_WEIGHT = 50.0
_SCALAR_DIM_LIMIT = 16  # beyond this the numpy path wins


@dataclass(frozen=True)
class MoGHyper:
    """Mixture-of-Gaussians hyperparameters (spherical, known variance)."""

    k: int
    alpha: float = 1.0
    sigma: float = 1.0  # observation std
    sigma0: float = 1.0  # prior std of the cluster means
    mu0: tuple | None = None  # prior mean; data mean when omitted

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 clusters")
        if min(self.alpha, self.sigma, self.sigma0) <= 0:
            raise ValueError("alpha, sigma, sigma0 must be positive")

    def prior_mean(self, data: np.ndarray) -> np.ndarray:
        if self.mu0 is not None:
            return np.asarray(self.mu0, dtype=float)
        return data.mean(axis=0)


@dataclass(frozen=True)
class MoBHyper:
    """Mixture-of-Bernoulli-products hyperparameters."""

    k: int
    alpha: float = 1.0
    beta_a: float = 1.0  # Beta prior pseudo-count for ones
    gamma_a: float = 1.0  # Beta prior pseudo-count for zeros

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 clusters")
        if min(self.alpha, self.beta_a, self.gamma_a) <= 0:
            raise ValueError("alpha, beta_a, gamma_a must be positive")


class ConstraintSet:
    """Weighted must-link / cannot-link pairs; duplicates merge by weight sum."""

    def __init__(self, entries: Iterable[tuple[PairAtom, bool, float]] = ()):
        self._weights: dict[tuple[PairAtom, bool], float] = {}
        self._by_item: dict[int, list[tuple[int, bool, float]]] = {}
        for atom, same, weight in entries:
            self.add(atom, same, weight)

    def add(self, atom: PairAtom, same: bool, weight: float = math.inf) -> None:
        if weight < 0:
            raise ValueError(f"constraint weight must be >= 0, got {weight}")
        key = (atom, bool(same))
        if key in self._weights and not math.isinf(weight):
            if math.isinf(self._weights[key]):
                return  # already hard
            self._weights[key] += weight
        else:
            self._weights[key] = weight
        self._rebuild_index()

    def _rebuild_index(self):
        self._by_item = {}
        for (atom, same), w in self._weights.items():
            self._by_item.setdefault(atom.i, []).append((atom.j, same, w))
            self._by_item.setdefault(atom.j, []).append((atom.i, same, w))

    def touching(self, item: int) -> list[tuple[int, bool, float]]:
        return self._by_item.get(item, [])

    def __len__(self) -> int:
        return len(self._weights)

    def __iter__(self) -> Iterator[tuple[PairAtom, bool, float]]:
        for (atom, same), w in sorted(
            self._weights.items(), key=lambda kv: (kv[0][0].items, kv[0][1])
        ):
            yield atom, same, w

    def penalty(self, z) -> float:
        """Total log-penalty of an assignment: -sum of violated weights."""
        total = 0.0
        for (atom, same), w in self._weights.items():
            if (z[atom.i] == z[atom.j]) != same:
                if math.isinf(w):
                    return -math.inf
                total -= w
        return total


@dataclass
class GibbsState:
    """Assignment plus per-cluster sufficient statistics and the chain's rng.

    ``sums`` holds per-cluster feature sums, which for 0/1 data are exactly
    the per-dimension one-counts the Bernoulli model needs.
    """

    z: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    rng: np.random.Generator = field(repr=False, default=None)

    @classmethod
    def from_assignment(cls, z, data, k: int, rng=None) -> "GibbsState":
        z = np.asarray(z, dtype=np.int64)
        data = np.asarray(data, dtype=float)
        counts = np.zeros(k)
        sums = np.zeros((k, data.shape[1]))
        for c in range(k):
            mask = z == c
            counts[c] = mask.sum()
            sums[c] = data[mask].sum(axis=0)
        return cls(z=z.copy(), counts=counts, sums=sums, rng=rng)

    @classmethod
    def random_init(cls, data, k: int, rng: np.random.Generator) -> "GibbsState":
        z = rng.integers(0, k, size=np.asarray(data).shape[0])
        return cls.from_assignment(z, data, k, rng=rng)

    def check_consistency(self, data) -> None:
        """Assert the running statistics equal a recomputation from z."""
        fresh = GibbsState.from_assignment(self.z, data, len(self.counts))
        if not np.array_equal(fresh.counts, self.counts):
            raise AssertionError("cluster counts drifted from the assignment")
        if not np.allclose(fresh.sums, self.sums, atol=1e-9):
            raise AssertionError("cluster feature sums drifted beyond 1e-9")


def _penalties(constraints, z, i, k, hard_escape: list) -> list[float]:
    """Per-candidate-cluster log penalty for point i given z_{-i}."""
    pen = [0.0] * k
    links = constraints.touching(i) if constraints is not None else ()
    for j, same, w in links:
        zj = z[j]
        if same:
            # violated in every cluster except z_j
            for c in range(k):
                if c != zj:
                    pen[c] -= w
        else:
            pen[zj] -= w
    if all(p == -math.inf for p in pen):
        hard_escape.append(i)
        pen = [0.0] * k
        for j, same, w in links:
            w = min(w, _FALLBACK_WEIGHT)
            zj = z[j]
            if same:
                for c in range(k):
                    if c != zj:
                        pen[c] -= w
            else:
                pen[zj] -= w
    return pen


def _draw(logp: list[float], u: float, k: int) -> int:
    best = max(logp)
    total = 0.0
    probs = [0.0] * k
    for c in range(k):
        p = math.exp(logp[c] - best)
        probs[c] = p
        total += p
    target = u * total
    acc = 0.0
    for c in range(k):
        acc += probs[c]
        if target < acc:
            return c
    return k - 1


def _sweep_scalar(state, data_rows, hyper, constraints, loglik_fn):
    z = state.z
    # plain Python lists in the hot loop; written back to the state at the end
    counts = [float(c) for c in state.counts]
    sums = [list(map(float, row)) for row in state.sums]
    k = len(counts)
    alpha_k = hyper.alpha / hyper.k
    rng = state.rng
    hard_escape: list[int] = []
    for i, x in enumerate(data_rows):
        c_old = z[i]
        counts[c_old] -= 1.0
        row = sums[c_old]
        for j, xj in enumerate(x):
            row[j] -= xj
        pen = _penalties(constraints, z, i, k, hard_escape)
        logp = [0.0] * k
        for c in range(k):
            logp[c] = math.log(counts[c] + alpha_k) + loglik_fn(x, counts[c], sums[c]) + pen[c]
        c_new = _draw(logp, rng.random(), k)
        z[i] = c_new
        counts[c_new] += 1.0
        row = sums[c_new]
        for j, xj in enumerate(x):
            row[j] += xj
    state.counts[:] = counts
    state.sums[:] = sums
    if hard_escape:
        logger.warning(
            "hard constraints infeasible for %d point draws; used soft "
            "fallback weight %.0f",
            len(hard_escape),
            _FALLBACK_WEIGHT,
        )
    return state


def _sweep_vector(state, data, hyper, constraints, logliks_fn):
    z = state.z
    counts = state.counts
    sums = state.sums
    k = len(counts)
    alpha_k = hyper.alpha / hyper.k
    rng = state.rng
    hard_escape: list[int] = []
    for i in range(data.shape[0]):
        x = data[i]
        c_old = z[i]
        counts[c_old] -= 1.0
        sums[c_old] -= x
        pen = np.asarray(_penalties(constraints, z, i, k, hard_escape))
        logp = np.log(counts + alpha_k) + logliks_fn(x, counts, sums) + pen
        logp -= logp.max()
        probs = np.exp(logp)
        cum = np.cumsum(probs)
        c_new = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        c_new = min(c_new, k - 1)
        z[i] = c_new
        counts[c_new] += 1.0
        sums[c_new] += x
    if hard_escape:
        logger.warning(
            "hard constraints infeasible for %d point draws; used soft "
            "fallback weight %.0f",
            len(hard_escape),
            _FALLBACK_WEIGHT,
        )
    return state


def gibbs_sweep_mog(
    state: GibbsState,
    data,
    hyper: MoGHyper,
    constraints: ConstraintSet | None = None,
    path: str = "auto",
) -> GibbsState:
    """One full constrained collapsed-Gibbs pass for the Gaussian mixture.

    Each point is resampled from
    Pr(z_i = c) prop. (n_c + alpha/k) * N(x_i; m_c, (v_c + sigma^2) I)
                      * exp(-(violated constraint weight))
    with (m_c, v_c) the collapsed posterior of cluster c's mean given the
    other points. Statistics update incrementally in place.
    """
    data = np.asarray(data, dtype=float)
    s2 = hyper.sigma**2
    s02 = hyper.sigma0**2
    mu0 = hyper.prior_mean(data)
    d = data.shape[1]

    if path == "scalar" or (path == "auto" and d <= _SCALAR_DIM_LIMIT):
        mu0_list = [float(v) for v in mu0]

        def loglik(x, n_c, sum_c):
            prec = 1.0 / s02 + n_c / s2
            v = 1.0 / prec
            vt = v + s2
            const = -0.5 * (_LOG_2PI + math.log(vt))
            total = 0.0
            inv = 1.0 / (2.0 * vt)
            for j in range(d):
                m = (mu0_list[j] / s02 + sum_c[j] / s2) * v
                diff = x[j] - m
                total += const - diff * diff * inv
            return total

        rows = [tuple(map(float, row)) for row in data]
        return _sweep_scalar(state, rows, hyper, constraints, loglik)

    def logliks(x, counts, sums):
        prec = 1.0 / s02 + counts / s2
        v = 1.0 / prec
        vt = v + s2
        m = (mu0 / s02 + sums / s2) * v[:, None]
        diff = x - m
        return -0.5 * d * (_LOG_2PI + np.log(vt)) - (diff * diff).sum(axis=1) / (
            2.0 * vt
        )

    return _sweep_vector(state, data, hyper, constraints, logliks)


def gibbs_sweep_mob(
    state: GibbsState,
    data,
    hyper: MoBHyper,
    constraints: ConstraintSet | None = None,
    path: str = "auto",
) -> GibbsState:
    """One full constrained collapsed-Gibbs pass for the Bernoulli mixture.

    The collapsed per-dimension predictive for a one-bit is
    (ones_cj + beta_a) / (n_c + beta_a + gamma_a).
    """
    data = np.asarray(data, dtype=float)
    ba, ga = hyper.beta_a, hyper.gamma_a
    d = data.shape[1]

    if path == "scalar" or (path == "auto" and d <= _SCALAR_DIM_LIMIT):

        def loglik(x, n_c, ones_c):
            denom = n_c + ba + ga
            total = 0.0
            for j in range(d):
                p1 = (ones_c[j] + ba) / denom
                total += math.log(p1) if x[j] else math.log1p(-p1)
            return total

        rows = [tuple(map(float, row)) for row in data]
        return _sweep_scalar(state, rows, hyper, constraints, loglik)

    def logliks(x, counts, sums):
        p1 = (sums + ba) / (counts + ba + ga)[:, None]
        return (np.log(p1) * x + np.log1p(-p1) * (1.0 - x)).sum(axis=1)

    return _sweep_vector(state, data, hyper, constraints, logliks)


def _dirichlet_log_prior(counts, alpha, k) -> float:
    n = counts.sum()
    ak = alpha / k
    return float(
        gammaln(alpha)
        - gammaln(alpha + n)
        + sum(gammaln(c + ak) - gammaln(ak) for c in counts)
    )


def _mog_log_marginal(data, z, hyper: MoGHyper) -> float:
    s2 = hyper.sigma**2
    s02 = hyper.sigma0**2
    mu0 = hyper.prior_mean(data)
    total = 0.0
    for c in range(hyper.k):
        block = data[z == c]
        n = block.shape[0]
        if n == 0:
            continue
        a = 1.0 / s02 + n / s2
        for j in range(data.shape[1]):
            col = block[:, j]
            b = mu0[j] / s02 + col.sum() / s2
            total += (
                -0.5 * n * (_LOG_2PI + math.log(s2))
                - 0.5 * math.log(s02 * a)
                + 0.5 * b * b / a
                - 0.5 * mu0[j] ** 2 / s02
                - 0.5 * float(col @ col) / s2
            )
    return total


def _mob_log_marginal(data, z, hyper: MoBHyper) -> float:
    ba, ga = hyper.beta_a, hyper.gamma_a
    base = gammaln(ba) + gammaln(ga) - gammaln(ba + ga)
    total = 0.0
    for c in range(hyper.k):
        block = data[z == c]
        n = block.shape[0]
        if n == 0:
            continue
        ones = block.sum(axis=0)
        total += float(
            np.sum(gammaln(ba + ones) + gammaln(ga + n - ones) - gammaln(ba + ga + n))
            - data.shape[1] * base
        )
    return total


def log_joint(
    state: GibbsState,
    data,
    hyper,
    constraints: ConstraintSet | None = None,
) -> float:
    """Unnormalized log posterior of the state's assignment.

    Collapsed assignment prior times the model's marginal likelihood times
    exp(-weighted constraint violations); -inf when a hard constraint is
    violated. Invariant under cluster relabeling.
    """
    data = np.asarray(data, dtype=float)
    z = np.asarray(state.z if isinstance(state, GibbsState) else state, dtype=np.int64)
    counts = np.bincount(z, minlength=hyper.k).astype(float)
    total = _dirichlet_log_prior(counts, hyper.alpha, hyper.k)
    if isinstance(hyper, MoGHyper):
        total += _mog_log_marginal(data, z, hyper)
    elif isinstance(hyper, MoBHyper):
        total += _mob_log_marginal(data, z, hyper)
    else:
        raise TypeError(f"unknown hyperparameter type {type(hyper).__name__}")
    if constraints is not None:
        total += constraints.penalty(z)
    return float(total)


def clustering_distance(z, z_star) -> float:
    """Fraction of item pairs on which two clusterings disagree about
    co-membership; invariant under relabeling of either side."""
    z = np.asarray(z)
    z_star = np.asarray(z_star)
    if z.shape != z_star.shape:
        raise ValueError("assignments must cover the same items")
    n = z.shape[0]
    if n < 2:
        return 0.0
    same_a = z[:, None] == z[None, :]
    same_b = z_star[:, None] == z_star[None, :]
    iu = np.triu_indices(n, k=1)
    return float(np.mean(same_a[iu] != same_b[iu]))


def posterior_committee(
    data,
    hyper,
    constraints: ConstraintSet | None,
    n_samples: int,
    thinning: int,
    burn_in: int,
    rng: np.random.Generator,
    state: GibbsState | None = None,
) -> FinitePosterior:
    """Committee posterior from thinned Gibbs states.

    Runs ``burn_in`` sweeps, then collects one state every ``thinning``
    sweeps until ``n_samples`` are gathered; identical clusterings (up to
    relabeling) merge their committee weight. Pass ``state`` to continue an
    existing chain.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    data = np.asarray(data, dtype=float)
    sweep = gibbs_sweep_mog if isinstance(hyper, MoGHyper) else gibbs_sweep_mob
    if state is None:
        state = GibbsState.random_init(data, hyper.k, rng)
    for _ in range(burn_in):
        sweep(state, data, hyper, constraints)
    members = []
    for s in range(n_samples):
        for _ in range(thinning):
            sweep(state, data, hyper, constraints)
        members.append(FlatClustering(state.z))
    return FinitePosterior.committee(members)
