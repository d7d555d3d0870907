"""Gaussian-prior, squared-loss posteriors over linear functions.

With a spherical N(0, sigma0^2 I) prior and update factors
exp(-beta * (y - <w, x>)^2), the posterior over weights stays Gaussian:

    cov  = (2 beta X^T X + I / sigma0^2)^-1
    mean = 2 beta cov X^T y

``explicit_posterior`` computes that closed form directly. For feature
maps known only through a kernel, ``KernelPosterior`` keeps the dual
representation: with M = I/(2 sigma0^2 beta) + K (K the Gram matrix), the
predictive distribution of <w, phi(x)> is Gaussian with

    mu    = 2 sigma0^2 beta kappa^T (I - M^-1 K) y
    sigma^2 = sigma0^2 (k(x, x) - kappa^T M^-1 kappa)

where kappa_i = k(x_i, x). M is held as an incrementally extended Cholesky
factor (O(t^2) per update) and refactored from scratch every
``refactor_every`` updates to bound drift. ``OneVsAllClassifier`` stacks
one such posterior per class with +/-1 targets and predicts the argmax
predictive mean.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = [
    "IllConditionedError",
    "KernelSpec",
    "GaussianPosterior",
    "explicit_posterior",
    "KernelPosterior",
    "qbc_select_point",
    "OneVsAllClassifier",
    "save_checkpoint",
    "load_checkpoint",
]

_VAR_FLOOR = 1e-12
_COND_LIMIT = 1e12


class IllConditionedError(ArithmeticError):
    """Posterior solve rejected; carries the offending condition estimate."""

    def __init__(self, cond: float):
        super().__init__(f"posterior system condition estimate {cond:.3e} "
                         f"exceeds {_COND_LIMIT:.0e}")
        self.cond = cond


@dataclass(frozen=True)
class KernelSpec:
    """Inner-product kernel: plain dot products or RBF exp(-gamma ||x-x'||^2)."""

    kind: str = "linear"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"kernel kind must be linear or rbf, got {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("rbf kernel needs gamma > 0")

    def __call__(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.kind == "linear":
            return X @ Y.T
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Y * Y, axis=1)[None, :]
            - 2.0 * (X @ Y.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma * sq)

    def diag(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "linear":
            return np.sum(X * X, axis=1)
        return np.ones(X.shape[0])


@dataclass(frozen=True)
class GaussianPosterior:
    """Closed-form weight posterior: mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray
    sigma0_sq: float
    beta: float

    def predictive(self, x) -> tuple[float, float]:
        x = np.asarray(x, dtype=float)
        return float(x @ self.mean), float(x @ self.cov @ x)


def explicit_posterior(features, labels, beta: float, sigma0_sq: float) -> GaussianPosterior:
    """Exact Gaussian posterior from an explicit (t x d) feature matrix.

    t = 0 returns the prior (zero mean, sigma0^2 I).
    """
    if beta <= 0 or sigma0_sq <= 0:
        raise ValueError("beta and sigma0_sq must be positive")
    Phi = np.asarray(features, dtype=float)
    if Phi.ndim != 2:
        raise ValueError("features must be a (t, d) matrix")
    t, d = Phi.shape
    y = np.asarray(labels, dtype=float).reshape(t)
    precision = 2.0 * beta * (Phi.T @ Phi) + np.eye(d) / sigma0_sq
    cond = float(np.linalg.cond(precision))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise IllConditionedError(cond)
    cov = np.linalg.inv(precision)
    cov = (cov + cov.T) / 2.0
    mean = 2.0 * beta * (cov @ (Phi.T @ y)) if t else np.zeros(d)
    return GaussianPosterior(mean=mean, cov=cov, sigma0_sq=sigma0_sq, beta=beta)


class KernelPosterior:
    """Kernel-dual squared-loss posterior with incremental updates.

    Observations are appended one at a time; the regularized Gram system's
    Cholesky factor is extended in O(t^2) and rebuilt every
    ``refactor_every`` updates. Updates are single-writer; predictive
    queries are read-only and may run concurrently between updates.

    Targets may be vectors: several outputs sharing the same observation
    history (one-vs-all heads) then share a single factorization, and the
    predictive variance, which does not depend on the targets, is computed
    once for all of them.
    """

    def __init__(
        self,
        kernel: KernelSpec,
        beta: float,
        sigma0_sq: float = 1.0,
        refactor_every: int = 256,
    ):
        if beta <= 0 or sigma0_sq <= 0:
            raise ValueError("beta and sigma0_sq must be positive")
        self.kernel = kernel
        self.beta = float(beta)
        self.sigma0_sq = float(sigma0_sq)
        self.refactor_every = int(refactor_every)
        self.ridge = 1.0 / (2.0 * sigma0_sq * beta)
        self.t = 0
        self.n_outputs = 1
        self._scalar_y = True
        self._x: np.ndarray | None = None  # (cap, d) history, first t rows live
        self._y = np.zeros((0, 1))  # (cap, n_outputs)
        self._K = np.zeros((0, 0))  # (cap, cap), first t x t live
        self._chol = np.zeros((0, 0))  # lower Cholesky of M = ridge*I + K
        self._dual: np.ndarray | None = None  # cached weights for the mean

    # -- bookkeeping ---------------------------------------------------------

    @property
    def history(self) -> tuple[np.ndarray, np.ndarray]:
        if self.t == 0:
            return np.zeros((0, 0)), np.zeros(0)
        ys = self._y[: self.t]
        return self._x[: self.t].copy(), (ys[:, 0] if self._scalar_y else ys).copy()

    def _grow(self, d: int):
        cap = 0 if self._x is None else self._x.shape[0]
        if self.t < cap:
            return
        new_cap = max(16, 2 * cap)
        x = np.zeros((new_cap, d))
        y = np.zeros((new_cap, self.n_outputs))
        K = np.zeros((new_cap, new_cap))
        L = np.zeros((new_cap, new_cap))
        if cap:
            x[: self.t] = self._x[: self.t]
            y[: self.t] = self._y[: self.t]
            K[: self.t, : self.t] = self._K[: self.t, : self.t]
            L[: self.t, : self.t] = self._chol[: self.t, : self.t]
        self._x, self._y, self._K, self._chol = x, y, K, L

    def update(self, x, y) -> "KernelPosterior":
        """Append one observation, extending the Gram factorization."""
        x = np.asarray(x, dtype=float).ravel()
        if self.t and x.shape[0] != self._x.shape[1]:
            raise ValueError("feature dimension changed mid-history")
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if self.t == 0:
            self.n_outputs = y_arr.shape[0]
            self._scalar_y = np.isscalar(y) or np.ndim(y) == 0
        elif y_arr.shape != (self.n_outputs,):
            raise ValueError(
                f"expected {self.n_outputs} target values, got {y_arr.shape}"
            )
        self._grow(x.shape[0])
        t = self.t
        self._x[t] = x
        self._y[t] = y_arr
        if t:
            cross = self.kernel(self._x[:t], x[None, :]).ravel()
            self._K[:t, t] = cross
            self._K[t, :t] = cross
        self._K[t, t] = float(self.kernel.diag(x[None, :])[0])
        self.t = t + 1
        if self.t % self.refactor_every == 0:
            self._refactor()
        else:
            self._extend_cholesky()
        self._dual = None
        return self

    def _refactor(self):
        t = self.t
        M = self._K[:t, :t] + self.ridge * np.eye(t)
        self._chol[:t, :t] = cholesky(M, lower=True)

    def _extend_cholesky(self):
        t = self.t - 1  # rows already factored
        b = self._K[:t, t]
        c = self._K[t, t] + self.ridge
        if t == 0:
            self._chol[0, 0] = math.sqrt(c)
            return
        l = solve_triangular(self._chol[:t, :t], b, lower=True)
        rem = c - float(l @ l)
        if rem <= 0.0:
            self._refactor()
            return
        self._chol[:t, t] = 0.0
        self._chol[t, :t] = l
        self._chol[t, t] = math.sqrt(rem)

    # -- prediction ----------------------------------------------------------

    def _dual_weights(self) -> np.ndarray:
        # mu(x) = kappa^T dual with dual = 2 sigma0^2 beta (y - M^-1 K y)
        if self._dual is None:
            t = self.t
            Ky = self._K[:t, :t] @ self._y[:t]
            solved = cho_solve((self._chol[:t, :t], True), Ky)
            self._dual = 2.0 * self.sigma0_sq * self.beta * (self._y[:t] - solved)
        return self._dual

    def predictive_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of <w, phi(x)> for each row of X.

        Means have shape (n,) for scalar targets, (n, n_outputs) otherwise;
        the variance is target-independent and always (n,).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        prior_var = self.sigma0_sq * self.kernel.diag(X)
        if self.t == 0:
            mu = np.zeros(n) if self._scalar_y else np.zeros((n, self.n_outputs))
            return mu, prior_var
        kappa = self.kernel(self._x[: self.t], X)  # (t, n)
        mu = kappa.T @ self._dual_weights()  # (n, n_outputs)
        solved = cho_solve((self._chol[: self.t, : self.t], True), kappa)
        var = prior_var - self.sigma0_sq * np.sum(kappa * solved, axis=0)
        low = var < _VAR_FLOOR
        if np.any(low):
            warnings.warn(
                "predictive variance clamped at numerical floor", RuntimeWarning
            )
            var = np.where(low, _VAR_FLOOR, var)
        return (mu[:, 0] if self._scalar_y else mu), var

    def predictive(self, x):
        """(mean, variance) at one point; the mean is a vector when the
        posterior carries vector targets."""
        mu, var = self.predictive_batch(np.asarray(x, dtype=float)[None, :])
        if self._scalar_y:
            return float(mu[0]), float(var[0])
        return mu[0], float(var[0])

    def sample_prediction(self, x, rng: np.random.Generator) -> float:
        if not self._scalar_y:
            raise ValueError("sample_prediction needs scalar targets")
        mu, var = self.predictive(x)
        return mu + math.sqrt(var) * rng.standard_normal()


def qbc_select_point(
    pool,
    posterior,
    clip_bound: float,
    rng: np.random.Generator,
    max_iters: int = 10_000,
    batch: int = 64,
) -> int | None:
    """Committee-disagreement rejection sampling over a candidate pool.

    Each iteration draws a pool index and two independent predictive
    samples, accepting with probability (clip(z) - clip(z'))^2 / (4 B^2);
    iterations are evaluated in vectorized blocks, which leaves the
    per-iteration law (and the distribution of the accepted point)
    unchanged. None after ``max_iters`` rejections.
    """
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    denom = 4.0 * clip_bound * clip_bound
    done = 0
    while done < max_iters:
        b = min(batch, max_iters - done)
        done += b
        idxs = rng.integers(pool.shape[0], size=b)
        if hasattr(posterior, "predictive_batch"):
            mu, var = posterior.predictive_batch(pool[idxs])
        else:
            pairs = [posterior.predictive(pool[i]) for i in idxs]
            mu = np.array([p[0] for p in pairs])
            var = np.array([p[1] for p in pairs])
        sd = np.sqrt(var)
        z = np.clip(mu + sd * rng.standard_normal(b), -clip_bound, clip_bound)
        zp = np.clip(mu + sd * rng.standard_normal(b), -clip_bound, clip_bound)
        accept = rng.random(b) < (z - zp) ** 2 / denom
        hits = np.flatnonzero(accept)
        if hits.size:
            return int(idxs[hits[0]])
    return None


class OneVsAllClassifier:
    """Per-class +/-1 regression heads over one shared observation history.

    Every update feeds all heads the same point, so the heads share a
    single Gram factorization (targets stacked as vector outputs of one
    ``KernelPosterior``); the per-class posteriors are identical to
    independently maintained ones. Prediction is the class with the
    largest predictive mean; ties break to the lowest class id.
    """

    def __init__(self, classes, kernel: KernelSpec, beta: float, sigma0_sq: float = 1.0):
        self.classes = sorted(int(c) for c in classes)
        if not self.classes:
            raise ValueError("need at least one class")
        self._stack = KernelPosterior(kernel, beta, sigma0_sq)

    @property
    def t(self) -> int:
        return self._stack.t

    def update(self, x, label: int) -> None:
        targets = [1.0 if label == c else -1.0 for c in self.classes]
        self._stack.update(x, targets)

    def predictive_means(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu, _ = self._stack.predictive_batch(X)
        if mu.ndim == 1:  # before any update with a single class
            mu = mu[:, None]
        return mu

    def predict(self, X) -> np.ndarray:
        means = self.predictive_means(X)
        idx = np.argmax(means, axis=1)  # first max wins: lowest class id
        return np.asarray(self.classes, dtype=int)[idx]

    def select(
        self,
        pool,
        clip_bound: float,
        rng: np.random.Generator,
        max_iters: int = 10_000,
        batch: int = 64,
    ) -> int | None:
        """Rejection sampling with the stacked per-class prediction vector.

        Accepts with probability sum_c (clip(z_c) - clip(z'_c))^2 divided
        by 4 B^2 n_classes, the normalized squared distance between two
        posterior draws of the full prediction vector. Iterations run in
        vectorized blocks without changing the per-iteration law.
        """
        pool = np.atleast_2d(np.asarray(pool, dtype=float))
        m = len(self.classes)
        denom = 4.0 * clip_bound * clip_bound * m
        done = 0
        while done < max_iters:
            b = min(batch, max_iters - done)
            done += b
            idxs = rng.integers(pool.shape[0], size=b)
            mu, var = self._stack.predictive_batch(pool[idxs])
            if mu.ndim == 1:
                mu = mu[:, None]
            sd = np.sqrt(var)[:, None]
            z = np.clip(mu + sd * rng.standard_normal((b, m)), -clip_bound, clip_bound)
            zp = np.clip(mu + sd * rng.standard_normal((b, m)), -clip_bound, clip_bound)
            gaps = np.sum((z - zp) ** 2, axis=1)
            accept = rng.random(b) < gaps / denom
            hits = np.flatnonzero(accept)
            if hits.size:
                return int(idxs[hits[0]])
        return None


# -- checkpointing ------------------------------------------------------------

_MAGIC = b"SQBCKP1\n"


def save_checkpoint(posterior: KernelPosterior, path) -> None:
    """JSON header line plus little-endian float64 history and factorization."""
    xs, ys = posterior.history
    arrays = [
        ("x", xs),
        ("y", ys),
        ("chol", posterior._chol[: posterior.t, : posterior.t].copy()),
    ]
    header = {
        "kernel": {"kind": posterior.kernel.kind, "gamma": posterior.kernel.gamma},
        "beta": posterior.beta,
        "sigma0_sq": posterior.sigma0_sq,
        "refactor_every": posterior.refactor_every,
        "t": posterior.t,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> KernelPosterior:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a posterior checkpoint")
        header = json.loads(fh.readline().decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    kp = KernelPosterior(
        KernelSpec(header["kernel"]["kind"], header["kernel"]["gamma"]),
        header["beta"],
        header["sigma0_sq"],
        header["refactor_every"],
    )
    t = header["t"]
    if t:
        xs, ys = arrays["x"], arrays["y"]
        cap = max(16, 1 << (t - 1).bit_length())
        d = xs.shape[1]
        kp._scalar_y = ys.ndim == 1
        kp.n_outputs = 1 if kp._scalar_y else ys.shape[1]
        kp._x = np.zeros((cap, d))
        kp._y = np.zeros((cap, kp.n_outputs))
        kp._K = np.zeros((cap, cap))
        kp._chol = np.zeros((cap, cap))
        kp.t = t
        kp._x[:t] = xs
        kp._y[:t] = ys.reshape(t, kp.n_outputs)
        kp._K[:t, :t] = kp.kernel(xs, xs)
        kp._chol[:t, :t] = arrays["chol"]
    return kp
