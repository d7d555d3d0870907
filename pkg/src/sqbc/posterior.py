"""Posterior maintenance over a finite structure committee.

Feedback (atom, answer) reweights every committee member multiplicatively:
under 0-1 loss a member's log-weight drops by beta when it disagrees with
the answer (beta = inf recovers hard version-space filtering); under a
general loss it drops by beta times the loss of the member's prediction.
Weights live in log space and are renormalized after every update.

Dispersion measures over the committee:

* ``uncertainty_atom``  -- probability two independent draws disagree on an
  atom, computed exactly as 1 - sum_y mass(y)^2 (discrete answers only).
* ``variance_atom``     -- posterior variance of real-valued predictions,
  the general-loss analogue of uncertainty.
* ``shrinkage_atom``    -- 1 minus the modal answer's mass, the progress
  measure behind the convergence-rate bound.

Query-level versions average the atom-level quantity over the query's
decomposition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .structures import (
    Answer,
    Atom,
    Query,
    SpaceMismatchError,
    Topology,
    decompose,
    eval_atom,
)

__all__ = [
    "EmptyVersionSpaceError",
    "LossSpec",
    "FinitePosterior",
    "FeedbackEvent",
    "update_zero_one",
    "update_general",
    "uncertainty_atom",
    "uncertainty_query",
    "variance_atom",
    "variance_query",
    "shrinkage_atom",
    "shrinkage_query",
    "answer_masses",
    "sample",
    "target_mass",
]

logger = logging.getLogger(__name__)

_NORM_TOL = 1e-9


class EmptyVersionSpaceError(RuntimeError):
    """Hard filtering (beta = inf) eliminated every committee member."""


@dataclass(frozen=True)
class LossSpec:
    """Loss function on (prediction, answer) with its derived constants.

    ``bound`` is the prediction bound B (predictions live in [-B, B]).
    ``loss_bound`` is the largest attainable loss value and ``lipschitz``
    the Lipschitz constant in the prediction argument; both feed the safe
    default update strength.
    """

    kind: str  # zero_one | squared | logistic
    bound: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero_one", "squared", "logistic"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.bound <= 0:
            raise ValueError("prediction bound must be positive")

    @property
    def loss_bound(self) -> float:
        if self.kind == "zero_one":
            return 1.0
        if self.kind == "squared":
            return (1.0 + self.bound) ** 2
        return math.log1p(math.exp(self.bound))

    @property
    def lipschitz(self) -> float:
        if self.kind == "squared":
            return 2.0 * (1.0 + self.bound)
        if self.kind == "logistic":
            return 1.0
        raise ValueError("0-1 loss has no Lipschitz constant")

    def default_beta(self, margin: float) -> float:
        """Largest update strength covered by the drift guarantees.

        0-1 loss: margin/2. General losses: min(margin / (2 C^2), 1/loss
        bound) with C the Lipschitz constant.
        """
        if not 0 < margin <= 1:
            raise ValueError(f"noise margin must be in (0, 1], got {margin}")
        if self.kind == "zero_one":
            return margin / 2.0
        c = self.lipschitz
        return min(margin / (2.0 * c * c), 1.0 / self.loss_bound)

    def loss(self, prediction, answer) -> float:
        if self.kind == "zero_one":
            return 0.0 if prediction == answer else 1.0
        z = float(prediction)
        z = max(-self.bound, min(self.bound, z))
        y = float(answer)
        if self.kind == "squared":
            return (y - z) ** 2
        # log(1 + exp(-yz)), stable for large |yz|
        m = -y * z
        return m + math.log1p(math.exp(-m)) if m > 0 else math.log1p(math.exp(m))


ZERO_ONE = LossSpec("zero_one")


class FinitePosterior:
    """Normalized log-weight distribution over an explicit committee.

    Immutable: updates return new posteriors sharing the structure tuple.
    The log-weights always satisfy logsumexp(log_weights) = 0 within 1e-9.
    """

    __slots__ = ("structures", "log_weights")

    def __init__(self, structures: Sequence, log_weights):
        structures = tuple(structures)
        if not structures:
            raise ValueError("posterior needs at least one structure")
        lw = np.asarray(log_weights, dtype=float)
        if lw.shape != (len(structures),):
            raise ValueError("one log-weight per structure required")
        norm = logsumexp(lw)
        if not np.isfinite(norm):
            raise ValueError("log-weights do not normalize to a distribution")
        lw = lw - norm
        lw.setflags(write=False)
        object.__setattr__(self, "structures", structures)
        object.__setattr__(self, "log_weights", lw)

    def __setattr__(self, name, value):
        raise AttributeError("FinitePosterior is immutable")

    @classmethod
    def uniform(cls, structures: Sequence) -> "FinitePosterior":
        return cls(structures, np.zeros(len(tuple(structures))))

    @classmethod
    def from_weights(cls, structures: Sequence, weights) -> "FinitePosterior":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(structures, np.log(w))

    @classmethod
    def committee(cls, structures: Sequence) -> "FinitePosterior":
        """Equal-weight committee with duplicates merged into one entry."""
        counts: dict = {}
        order: list = []
        for g in structures:
            if g in counts:
                counts[g] += 1
            else:
                counts[g] = 1
                order.append(g)
        return cls.from_weights(order, [counts[g] for g in order])

    def __len__(self) -> int:
        return len(self.structures)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class FeedbackEvent:
    """One round of expert feedback on a proposed snapshot.

    ``accept`` is True iff the provided answer matches the snapshot at the
    chosen atom, i.e. nothing was corrected.
    """

    step: int
    query: Query
    proposed: dict
    atom: Atom
    answer: Answer
    accept: bool

    def __post_init__(self):
        if self.atom not in self.proposed:
            raise ValueError("feedback atom must belong to the proposed snapshot")
        expected = self.proposed[self.atom] == self.answer
        if bool(self.accept) != bool(expected):
            raise ValueError(
                "accept flag must be True exactly when the answer confirms "
                "the snapshot"
            )


def update_zero_one(
    posterior: FinitePosterior, atom: Atom, answer: Answer, beta: float
) -> FinitePosterior:
    """Multiplicative 0-1 update: disagreeing members lose e^-beta mass.

    beta = inf filters the version space; raises EmptyVersionSpaceError if
    no member agrees with the answer.
    """
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    disagrees = np.fromiter(
        (eval_atom(g, atom) != answer for g in posterior.structures),
        dtype=bool,
        count=len(posterior),
    )
    if math.isinf(beta):
        if disagrees.all():
            raise EmptyVersionSpaceError(
                f"no structure answers {answer!r} on {atom!r}"
            )
        lw = np.where(disagrees, -np.inf, posterior.log_weights)
        return FinitePosterior(posterior.structures, lw)
    return FinitePosterior(posterior.structures, posterior.log_weights - beta * disagrees)


def update_general(
    posterior: FinitePosterior,
    atom: Atom,
    answer: Answer,
    beta: float,
    loss: LossSpec,
) -> FinitePosterior:
    """General-loss update: each member's log-weight drops by beta * loss."""
    if beta < 0 or math.isinf(beta):
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    if loss.kind != "zero_one" and beta > 1.0 / loss.loss_bound:
        logger.warning(
            "update strength beta=%.4g exceeds 1/loss_bound=%.4g; drift "
            "guarantees do not cover this regime",
            beta,
            1.0 / loss.loss_bound,
        )
    losses = np.fromiter(
        (loss.loss(eval_atom(g, atom), answer) for g in posterior.structures),
        dtype=float,
        count=len(posterior),
    )
    if not np.all(np.isfinite(losses)):
        raise FloatingPointError(f"non-finite loss on atom {atom!r}")
    return FinitePosterior(posterior.structures, posterior.log_weights - beta * losses)


def answer_masses(posterior: FinitePosterior, atom: Atom) -> dict:
    """Posterior mass of each discrete answer to the atom."""
    masses: dict = {}
    for g, w in zip(posterior.structures, posterior.weights):
        ans = eval_atom(g, atom)
        if isinstance(ans, float) and not isinstance(ans, (bool, Topology)):
            raise SpaceMismatchError(
                "real-valued prediction space has no answer masses; "
                "use variance_atom"
            )
        masses[ans] = masses.get(ans, 0.0) + w
    return masses


def uncertainty_atom(posterior: FinitePosterior, atom: Atom) -> float:
    """Probability that two independent posterior draws disagree on the atom.

    Computed exactly as 1 - sum_y mass(y)^2. Only defined for discrete
    answer spaces; real-valued spaces use ``variance_atom``.
    """
    masses = answer_masses(posterior, atom)
    return 1.0 - sum(p * p for p in masses.values())


def uncertainty_query(posterior: FinitePosterior, query: Query) -> float:
    """Mean atom uncertainty over the query's decomposition."""
    atoms = decompose(query, posterior.structures[0].space)
    return sum(uncertainty_atom(posterior, a) for a in atoms) / len(atoms)


def _predictions(posterior: FinitePosterior, atom: Atom, clip_bound) -> np.ndarray:
    preds = np.asarray(
        [float(eval_atom(g, atom)) for g in posterior.structures], dtype=float
    )
    if clip_bound is not None:
        np.clip(preds, -clip_bound, clip_bound, out=preds)
    return preds


def variance_atom(
    posterior: FinitePosterior, atom: Atom, clip_bound: float | None = 5.0
) -> float:
    """Posterior variance of the (clipped) real prediction on the atom."""
    preds = _predictions(posterior, atom, clip_bound)
    w = posterior.weights
    mean = float(w @ preds)
    return float(w @ (preds - mean) ** 2)


def variance_query(
    posterior: FinitePosterior, query: Query, clip_bound: float | None = 5.0
) -> float:
    """Mean atom variance over the query's decomposition."""
    atoms = decompose(query, posterior.structures[0].space)
    return sum(variance_atom(posterior, a, clip_bound) for a in atoms) / len(atoms)


def shrinkage_atom(posterior: FinitePosterior, atom: Atom) -> float:
    """1 minus the posterior mass of the modal answer to the atom."""
    masses = answer_masses(posterior, atom)
    return 1.0 - max(masses.values())


def shrinkage_query(posterior: FinitePosterior, query: Query) -> float:
    """Mean atom shrinkage over the query's decomposition."""
    atoms = decompose(query, posterior.structures[0].space)
    return sum(shrinkage_atom(posterior, a) for a in atoms) / len(atoms)


def sample(posterior: FinitePosterior, n: int, rng: np.random.Generator) -> list:
    """n i.i.d. committee draws by categorical sampling over the weights."""
    idx = sample_indices(posterior, n, rng)
    return [posterior.structures[i] for i in idx]


def sample_indices(
    posterior: FinitePosterior, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of n i.i.d. committee draws (the vectorized form of ``sample``)."""
    return rng.choice(len(posterior), size=n, p=posterior.weights)


def target_mass(posterior: FinitePosterior, g_star) -> float:
    """Posterior mass of the target structure; 0 if absent from the committee."""
    total = 0.0
    for g, w in zip(posterior.structures, posterior.weights):
        if g == g_star:
            total += w
    return float(total)
