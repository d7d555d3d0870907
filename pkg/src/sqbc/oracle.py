"""Simulated experts answering atomic questions about a hidden target.

Noise models:

* ``Noiseless``    -- always the target's answer.
* ``MassartTable`` -- per-atom answer distributions in which the most
  likely answer beats every alternative by a margin (bounded noise); the
  margin is validated for every atom at construction.
* ``LabelFlip``    -- the target's +/-1 label, sign-flipped with
  probability p (binary classification noise).

Feedback policies turn an atom-level answerer into a partial-correction
expert: shown a snapshot with mistakes, the expert corrects a wrong atom
with probability at least ``correction_prob``, and otherwise weighs in on
a random atom of the query. ``shrinkage_feedback`` instead picks an atom
whose committee shrinkage is at least the query average, so the chosen
atom is guaranteed to be at least as informative as a uniform one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .posterior import FeedbackEvent
from .structures import Atom, Query, Topology, eval_atom

__all__ = [
    "OracleConfigError",
    "Noiseless",
    "MassartTable",
    "LabelFlip",
    "CorrectionPolicy",
    "answer_atom",
    "give_feedback",
    "shrinkage_feedback",
    "SimulatedExpert",
]


class OracleConfigError(ValueError):
    """Noise table malformed: missing atom, bad probabilities, no margin."""


@dataclass(frozen=True)
class Noiseless:
    pass


class MassartTable:
    """Per-atom answer distributions with a positive margin at the mode.

    For every atom the distribution must have a unique most likely answer
    whose probability exceeds every alternative's by at least ``margin``
    (computed as the min over atoms of best minus second-best mass).
    """

    __slots__ = ("table", "margin", "target_answer")

    def __init__(self, table: Mapping[Atom, Mapping]):
        if not table:
            raise OracleConfigError("empty answer table")
        margin = math.inf
        targets = {}
        frozen = {}
        for atom, dist in table.items():
            answers = list(dist.keys())
            probs = np.array([float(dist[y]) for y in answers])
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise OracleConfigError(
                    f"answer probabilities for {atom!r} must be a distribution"
                )
            order = np.argsort(probs)[::-1]
            best = probs[order[0]]
            second = probs[order[1]] if len(probs) > 1 else 0.0
            gap = best - second
            if gap <= 0:
                raise OracleConfigError(
                    f"no unique most likely answer for {atom!r}; margin would be 0"
                )
            margin = min(margin, gap)
            targets[atom] = answers[order[0]]
            frozen[atom] = (tuple(answers), probs)
        object.__setattr__(self, "table", frozen)
        object.__setattr__(self, "margin", float(margin))
        object.__setattr__(self, "target_answer", targets)

    def __setattr__(self, name, value):
        raise AttributeError("MassartTable is immutable")

    def validate_target(self, g_star, atoms: Sequence[Atom]) -> None:
        """Check the table's modal answers agree with the target structure."""
        for atom in atoms:
            if atom not in self.table:
                raise OracleConfigError(f"table has no entry for {atom!r}")
            if self.target_answer[atom] != eval_atom(g_star, atom):
                raise OracleConfigError(
                    f"modal answer for {atom!r} contradicts the target"
                )

    @classmethod
    def from_json(cls, path) -> "MassartTable":
        """Load an atom -> answer-probability map from a JSON file.

        Atom keys are item index lists, answer keys are JSON scalars (or
        topology names for triplet answers).
        """
        from .structures import make_atom

        with open(path) as fh:
            raw = json.load(fh)
        table = {}
        for entry in raw["atoms"]:
            atom = make_atom(raw["space"], entry["items"])
            dist = {_answer_from_json(raw["space"], k): v for k, v in entry["dist"].items()}
            table[atom] = dist
        return cls(table)


def _answer_from_json(space: str, key: str):
    if space == "clustering":
        return key in ("true", "True", "1")
    if space == "hierarchy":
        return Topology(key)
    return int(key)


@dataclass(frozen=True)
class LabelFlip:
    """Sign-flip noise for +/-1 labels: correct with probability 1 - p."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 0.5:
            raise OracleConfigError(f"flip probability must be in [0, 0.5), got {self.p}")


NoiseModel = Noiseless | MassartTable | LabelFlip


@dataclass(frozen=True)
class CorrectionPolicy:
    """How the expert chooses which atom of a flawed snapshot to address.

    With probability ``correction_prob`` an incorrect atom is chosen (a
    uniform one, or the max-shrinkage one when committee shrinkages are
    supplied); otherwise the expert weighs in on any atom of the query.
    """

    correction_prob: float = 1.0
    atom_choice: str = "uniform_incorrect"  # or "max_shrinkage"

    def __post_init__(self):
        if not 0.0 < self.correction_prob <= 1.0:
            raise OracleConfigError("correction_prob must be in (0, 1]")
        if self.atom_choice not in ("uniform_incorrect", "max_shrinkage"):
            raise OracleConfigError(f"unknown atom_choice {self.atom_choice!r}")


def answer_atom(atom: Atom, g_star, noise: NoiseModel, rng: np.random.Generator):
    """The expert's (possibly noisy) answer to one atomic question."""
    if isinstance(noise, Noiseless):
        return eval_atom(g_star, atom)
    if isinstance(noise, MassartTable):
        if atom not in noise.table:
            raise OracleConfigError(f"noise table has no entry for {atom!r}")
        answers, probs = noise.table[atom]
        return answers[rng.choice(len(answers), p=probs)]
    if isinstance(noise, LabelFlip):
        truth = eval_atom(g_star, atom)
        if rng.random() < noise.p:
            if isinstance(truth, bool):
                return not truth
            return -truth
        return truth
    raise TypeError(f"unknown noise model {noise!r}")


def give_feedback(
    query: Query,
    snapshot: Mapping[Atom, object],
    g_star,
    policy: CorrectionPolicy,
    noise: NoiseModel,
    rng: np.random.Generator,
    step: int = 0,
    shrinkages: Mapping[Atom, float] | None = None,
) -> FeedbackEvent:
    """One partial-correction response to a proposed snapshot.

    A fully correct snapshot is confirmed on a uniformly random atom.
    Otherwise an incorrect atom is addressed with probability
    ``policy.correction_prob`` and a uniformly random atom of the query
    with the remaining probability; the answer always comes from
    ``answer_atom``, so with noise even a confirmation can contradict.
    """
    atoms = sorted(snapshot.keys(), key=lambda a: a.items)
    incorrect = [a for a in atoms if snapshot[a] != eval_atom(g_star, a)]
    if not incorrect:
        atom = atoms[rng.integers(len(atoms))]
    elif rng.random() < policy.correction_prob:
        if policy.atom_choice == "max_shrinkage" and shrinkages is not None:
            atom = max(incorrect, key=lambda a: shrinkages.get(a, 0.0))
        else:
            atom = incorrect[rng.integers(len(incorrect))]
    else:
        atom = atoms[rng.integers(len(atoms))]
    answer = answer_atom(atom, g_star, noise, rng)
    return FeedbackEvent(
        step=step,
        query=query,
        proposed=dict(snapshot),
        atom=atom,
        answer=answer,
        accept=snapshot[atom] == answer,
    )


def shrinkage_feedback(
    query: Query,
    snapshot: Mapping[Atom, object],
    g_star,
    shrinkages: Mapping[Atom, float],
    noise: NoiseModel,
    rng: np.random.Generator,
    step: int = 0,
) -> FeedbackEvent:
    """Feedback on an atom whose shrinkage is at least the query average.

    Picking uniformly among qualifying atoms guarantees pointwise that the
    chosen atom's shrinkage is >= the mean shrinkage over the query.
    """
    atoms = sorted(snapshot.keys(), key=lambda a: a.items)
    values = np.array([shrinkages[a] for a in atoms], dtype=float)
    mean = values.mean()
    qualifying = [a for a, s in zip(atoms, values) if s >= mean - 1e-12]
    atom = qualifying[rng.integers(len(qualifying))]
    answer = answer_atom(atom, g_star, noise, rng)
    return FeedbackEvent(
        step=step,
        query=query,
        proposed=dict(snapshot),
        atom=atom,
        answer=answer,
        accept=snapshot[atom] == answer,
    )


@dataclass
class SimulatedExpert:
    """Bundles target, noise, and policy into a session-pluggable oracle."""

    g_star: object
    noise: NoiseModel = Noiseless()
    policy: CorrectionPolicy = CorrectionPolicy()
    rng: np.random.Generator = None  # set in __post_init__ when omitted

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(0)

    def respond(
        self, query: Query, snapshot, step: int = 0, shrinkages=None
    ) -> FeedbackEvent:
        return give_feedback(
            query,
            snapshot,
            self.g_star,
            self.policy,
            self.noise,
            self.rng,
            step=step,
            shrinkages=shrinkages,
        )
