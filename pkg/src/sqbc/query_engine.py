"""Query selection and the interactive session loop.

Selectors over a finite committee posterior:

* ``select_rejection``       -- the rejection sampler: draw a query from nu
  and a committee pair, accept with probability equal to their disagreement
  (0-1 mode) or normalized squared distance (general mode). Accepted
  queries are distributed proportional to nu(q) * uncertainty(q) resp.
  nu(q) * variance(q).
* ``select_robust``          -- iterative-halving estimator: start the
  uncertainty guess at 1/2, sample enough committee pairs per stage for a
  union bound, return the first candidate whose empirical disagreement
  reaches the guess, else halve it.
* ``select_argmax_empirical`` -- one batch of committee pairs, pick the
  candidate with the highest empirical disagreement (ties to lowest index).

``CommitteeSession`` runs the full loop (select, propose, feedback,
multiplicative update) against a finite committee, recording a
``SessionTrace`` of feedback events plus per-step diagnostics.
``convergence_bound`` evaluates the closed-form round bound implied by the
drift analysis.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .posterior import (
    FeedbackEvent,
    FinitePosterior,
    LossSpec,
    ZERO_ONE,
    sample,
    sample_indices,
    shrinkage_query,
    target_mass,
    uncertainty_query,
    update_general,
    update_zero_one,
    variance_query,
)
from .structures import (
    Atom,
    Query,
    Topology,
    answer_matrix,
    decompose,
    eval_atom,
    prediction_matrix,
)

__all__ = [
    "QuerySampler",
    "SessionTrace",
    "select_rejection",
    "select_robust",
    "select_argmax_empirical",
    "propose",
    "CommitteeSession",
    "SessionConfig",
    "ClusterSessionConfig",
    "ClusteringSession",
    "convergence_bound",
    "same_trace",
]

# Per-stage pair-draw ceiling for the robust selector; the union-bound
# stage budget grows as 4^stage and would never reach the floor otherwise.
_ROBUST_STAGE_CAP = 1 << 17
_ROBUST_FLOOR = 2.0**-20


@dataclass(frozen=True)
class QuerySampler:
    """Distribution nu over the query space.

    ``uniform(pool_size, s)`` draws uniformly random size-s subsets of the
    pool; ``explicit(queries, probs)`` draws from a fixed query list.
    """

    mode: str
    pool_size: int = 0
    query_size: int = 0
    queries: tuple[Query, ...] = ()
    probs: tuple[float, ...] = ()

    @classmethod
    def uniform(cls, pool_size: int, query_size: int) -> "QuerySampler":
        if not 1 <= query_size <= pool_size:
            raise ValueError(
                f"query size {query_size} must be in [1, pool size {pool_size}]"
            )
        return cls(mode="uniform_subsets", pool_size=pool_size, query_size=query_size)

    @classmethod
    def explicit(cls, queries: Sequence[Query], probs=None) -> "QuerySampler":
        queries = tuple(queries)
        if not queries:
            raise ValueError("explicit query pool must be non-empty")
        if probs is None:
            probs = np.full(len(queries), 1.0 / len(queries))
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(queries),) or np.any(probs < 0):
            raise ValueError("one non-negative probability per query required")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("query probabilities must sum to 1")
        return cls(mode="explicit", queries=queries, probs=tuple(probs))

    def sample(self, rng: np.random.Generator) -> Query:
        if self.mode == "uniform_subsets":
            items = rng.choice(self.pool_size, size=self.query_size, replace=False)
            return Query(tuple(sorted(int(i) for i in items)))
        idx = rng.choice(len(self.queries), p=np.asarray(self.probs))
        return self.queries[int(idx)]


def _pair_distance(g, gp, query, mode, clip_bound, d_max):
    from .structures import disagreement, sq_distance

    if mode == "zero_one":
        return disagreement(g, gp, query)
    return sq_distance(g, gp, query, clip_bound=clip_bound, d_max=d_max)


def select_rejection(
    posterior: FinitePosterior,
    sampler: QuerySampler,
    mode: str = "zero_one",
    rng: np.random.Generator = None,
    max_iters: int = 10_000,
    clip_bound: float = 5.0,
    d_max: float | None = None,
) -> Query | None:
    """Rejection-sample the next query; None signals no informative query.

    Each iteration draws a query from the sampler and two committee members
    from the posterior, accepting with probability equal to their
    disagreement on the query. Hitting ``max_iters`` is convergence, not an
    error.
    """
    if mode not in ("zero_one", "general"):
        raise ValueError(f"mode must be zero_one or general, got {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    for _ in range(max_iters):
        query = sampler.sample(rng)
        g, gp = sample(posterior, 2, rng)
        p = _pair_distance(g, gp, query, mode, clip_bound, d_max)
        if rng.random() < p:
            return query
    return None


def _candidate_atom_codes(posterior, candidates, mode, clip_bound):
    """Per-candidate coded answers of every committee member (row-aligned)."""
    space = posterior.structures[0].space
    mats = []
    for q in candidates:
        atoms = decompose(q, space)
        if mode == "zero_one":
            mats.append(answer_matrix(posterior.structures, atoms))
        else:
            mats.append(prediction_matrix(posterior.structures, atoms, clip_bound))
    return mats


def _empirical_distances(mat, left, right, mode, d_max):
    """Mean per-pair distance for one candidate given pair index arrays."""
    if mode == "zero_one":
        return np.mean(mat[left] != mat[right], axis=1)
    gaps = mat[left] - mat[right]
    return np.mean(gaps * gaps / d_max, axis=1)


def select_robust(
    posterior: FinitePosterior,
    candidates: Sequence[Query],
    delta: float = 0.05,
    rng: np.random.Generator = None,
    details: dict | None = None,
) -> Query | None:
    """Iterative-halving selection among explicit candidates (0-1 answers).

    Stage t tests the guess u_hat = 2^-(t+1) with
    n_t = ceil((8 / u_hat^2) * ln(2 m (t+1)(t+2) / delta)) committee pairs
    (capped at 2^17), so with probability >= 1 - delta the returned query's
    true uncertainty is within a factor 4 of the best candidate's. Returns
    None once u_hat underflows the floor or a capped stage sees zero
    disagreement anywhere.
    """
    if not candidates:
        raise ValueError("need at least one candidate query")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if rng is None:
        rng = np.random.default_rng()
    if len(posterior) == 1 or np.max(posterior.weights) >= 1.0:
        return None  # point mass: committee pairs never disagree
    m = len(candidates)
    mats = _candidate_atom_codes(posterior, candidates, "zero_one", None)
    u_hat = 0.5
    stage = 0
    while u_hat >= _ROBUST_FLOOR:
        n_raw = math.ceil(
            (8.0 / (u_hat * u_hat)) * math.log(2 * m * (stage + 1) * (stage + 2) / delta)
        )
        n = min(n_raw, _ROBUST_STAGE_CAP)
        left = sample_indices(posterior, n, rng)
        right = sample_indices(posterior, n, rng)
        means = [
            float(np.mean(_empirical_distances(mat, left, right, "zero_one", None)))
            for mat in mats
        ]
        for j, mean in enumerate(means):
            if mean >= u_hat:
                if details is not None:
                    details.update(stage=stage, estimate=mean, threshold=u_hat, n_pairs=n)
                return candidates[j]
        if n_raw > _ROBUST_STAGE_CAP and max(means) == 0.0:
            return None
        u_hat /= 2.0
        stage += 1
    return None


def select_argmax_empirical(
    posterior: FinitePosterior,
    candidates: Sequence[Query],
    n_pairs: int,
    rng: np.random.Generator = None,
    mode: str = "zero_one",
    clip_bound: float = 5.0,
    d_max: float | None = None,
) -> Query:
    """Candidate with the highest empirical committee disagreement.

    One batch of ``n_pairs`` committee pairs is shared across candidates;
    ties break to the lowest candidate index.
    """
    if not candidates:
        raise ValueError("need at least one candidate query")
    if rng is None:
        rng = np.random.default_rng()
    if d_max is None:
        d_max = 4.0 * clip_bound * clip_bound
    left = sample_indices(posterior, n_pairs, rng)
    right = sample_indices(posterior, n_pairs, rng)
    mats = _candidate_atom_codes(posterior, candidates, mode, clip_bound)
    scores = [
        float(np.mean(_empirical_distances(mat, left, right, mode, d_max)))
        for mat in mats
    ]
    return candidates[int(np.argmax(scores))]


def propose(
    posterior: FinitePosterior, query: Query, rng: np.random.Generator
) -> dict[Atom, object]:
    """Snapshot shown to the expert: one committee draw's answers on the query."""
    (g,) = sample(posterior, 1, rng)
    return {a: eval_atom(g, a) for a in decompose(query, g.space)}


class SessionTrace:
    """Append-only record of feedback events and per-step diagnostics."""

    def __init__(self):
        self.events: list[FeedbackEvent] = []
        self.diagnostics: list[dict] = []

    def append(self, event: FeedbackEvent, diag: dict) -> None:
        if event.step != len(self.events):
            raise ValueError(
                f"step indices must be contiguous: got {event.step}, "
                f"expected {len(self.events)}"
            )
        self.events.append(event)
        self.diagnostics.append(diag)

    def __len__(self) -> int:
        return len(self.events)

    def to_jsonl(self) -> str:
        lines = []
        for event, diag in zip(self.events, self.diagnostics):
            lines.append(json.dumps({"event": _event_to_json(event), "diag": diag}))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, space: str) -> "SessionTrace":
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            payload = json.loads(line)
            trace.events.append(_event_from_json(payload["event"], space))
            trace.diagnostics.append(payload["diag"])
        return trace


def _answer_to_json(ans):
    if isinstance(ans, Topology):
        return ans.value
    if isinstance(ans, (bool, np.bool_)):
        return bool(ans)
    if isinstance(ans, (int, np.integer)):
        return int(ans)
    return float(ans)


def _answer_from_json(value, space):
    if space == "hierarchy":
        return Topology(value)
    return value


def _event_to_json(event: FeedbackEvent) -> dict:
    return {
        "step": event.step,
        "query": list(event.query.items),
        "proposed": [
            {"items": list(a.items), "answer": _answer_to_json(v)}
            for a, v in sorted(event.proposed.items(), key=lambda kv: kv[0].items)
        ],
        "atom": list(event.atom.items),
        "answer": _answer_to_json(event.answer),
        "accept": event.accept,
    }


def _event_from_json(payload: dict, space: str) -> FeedbackEvent:
    from .structures import make_atom

    proposed = {
        make_atom(space, e["items"]): _answer_from_json(e["answer"], space)
        for e in payload["proposed"]
    }
    return FeedbackEvent(
        step=payload["step"],
        query=Query(tuple(payload["query"])),
        proposed=proposed,
        atom=make_atom(space, payload["atom"]),
        answer=_answer_from_json(payload["answer"], space),
        accept=payload["accept"],
    )


def same_trace(a: SessionTrace, b: SessionTrace, ignore: tuple = ("wall_ms",)) -> bool:
    """Trace equality modulo non-deterministic diagnostics (wall clock)."""
    if len(a) != len(b) or a.events != b.events:
        return False
    for da, db in zip(a.diagnostics, b.diagnostics):
        ka = {k: v for k, v in da.items() if k not in ignore}
        kb = {k: v for k, v in db.items() if k not in ignore}
        if ka != kb:
            return False
    return True


@dataclass
class SessionConfig:
    """Knobs for a finite-committee session."""

    beta: float
    loss: LossSpec = ZERO_ONE
    selection: str = "rejection"  # rejection | robust | argmax
    mode: str = "zero_one"  # zero_one | general
    n_candidates: int = 8  # candidate queries per round (robust / argmax)
    n_pairs: int = 256  # committee pairs (argmax)
    delta: float = 0.05  # per-selection failure budget (robust)
    max_iters: int = 10_000  # rejection budget before declaring convergence
    clip_bound: float = 5.0
    confirm_on_accept: bool = True


class CommitteeSession:
    """The interactive loop over a finite committee posterior.

    One ``step`` selects a query, proposes a snapshot from a posterior
    draw, obtains feedback (from the attached oracle, or externally via
    ``apply_feedback`` for human sessions), and applies the multiplicative
    update. ``run`` repeats until the round budget is spent or selection
    reports no informative query.
    """

    def __init__(
        self,
        posterior: FinitePosterior,
        sampler: QuerySampler,
        config: SessionConfig,
        rng: np.random.Generator,
        oracle=None,
        g_star=None,
    ):
        self.posterior = posterior
        self.sampler = sampler
        self.config = config
        self.rng = rng
        self.oracle = oracle
        self.g_star = g_star
        self.trace = SessionTrace()
        self.pending: tuple[Query, dict] | None = None
        self.converged = False

    # -- selection ---------------------------------------------------------

    def _select(self) -> Query | None:
        cfg = self.config
        if cfg.selection == "rejection":
            return select_rejection(
                self.posterior,
                self.sampler,
                mode=cfg.mode,
                rng=self.rng,
                max_iters=cfg.max_iters,
                clip_bound=cfg.clip_bound,
            )
        candidates = [self.sampler.sample(self.rng) for _ in range(cfg.n_candidates)]
        if cfg.selection == "robust":
            return select_robust(self.posterior, candidates, cfg.delta, self.rng)
        if cfg.selection == "argmax":
            return select_argmax_empirical(
                self.posterior,
                candidates,
                cfg.n_pairs,
                self.rng,
                mode=cfg.mode,
                clip_bound=cfg.clip_bound,
            )
        raise ValueError(f"unknown selection strategy {cfg.selection!r}")

    def advance(self) -> tuple[Query, dict] | None:
        """Select the next query and propose a snapshot (idempotent)."""
        if self.converged:
            return None
        if self.pending is None:
            query = self._select()
            if query is None:
                self.converged = True
                return None
            snapshot = propose(self.posterior, query, self.rng)
            self.pending = (query, snapshot)
        return self.pending

    # -- feedback ----------------------------------------------------------

    def apply_feedback(self, atom: Atom, answer, accept: bool) -> FeedbackEvent:
        """Apply one expert response to the pending snapshot."""
        if self.pending is None:
            raise RuntimeError("no pending query; call advance() first")
        query, snapshot = self.pending
        start = time.perf_counter()
        event = FeedbackEvent(
            step=len(self.trace),
            query=query,
            proposed=snapshot,
            atom=atom,
            answer=answer,
            accept=accept,
        )
        if not accept or self.config.confirm_on_accept:
            self._update(atom, answer)
        diag = self._diagnostics(query)
        diag["wall_ms"] = (time.perf_counter() - start) * 1000.0
        self.trace.append(event, diag)
        self.pending = None
        return event

    def _update(self, atom, answer):
        cfg = self.config
        if cfg.loss.kind == "zero_one":
            self.posterior = update_zero_one(self.posterior, atom, answer, cfg.beta)
        else:
            self.posterior = update_general(
                self.posterior, atom, answer, cfg.beta, cfg.loss
            )

    def _diagnostics(self, query: Query) -> dict:
        diag: dict = {}
        if self.config.mode == "zero_one":
            diag["query_uncertainty"] = uncertainty_query(self.posterior, query)
            diag["query_shrinkage"] = shrinkage_query(self.posterior, query)
        else:
            diag["query_variance"] = variance_query(
                self.posterior, query, self.config.clip_bound
            )
        if self.g_star is not None:
            diag["target_mass"] = target_mass(self.posterior, self.g_star)
        return diag

    # -- loop --------------------------------------------------------------

    def step(self) -> FeedbackEvent | None:
        """One full round; None when converged (no informative query).

        Raises if the session has no oracle: human-driven sessions park in
        the awaiting-feedback state and use ``apply_feedback`` instead.
        """
        pending = self.advance()
        if pending is None:
            return None
        if self.oracle is None:
            raise RuntimeError(
                "session is awaiting external feedback; attach an oracle or "
                "call apply_feedback()"
            )
        query, snapshot = pending
        shrinkages = None
        policy = getattr(self.oracle, "policy", None)
        if policy is not None and getattr(policy, "atom_choice", "") == "max_shrinkage":
            from .posterior import shrinkage_atom

            shrinkages = {a: shrinkage_atom(self.posterior, a) for a in snapshot}
        event = self.oracle.respond(
            query, snapshot, step=len(self.trace), shrinkages=shrinkages
        )
        return self.apply_feedback(event.atom, event.answer, event.accept)

    def run(self, rounds: int) -> SessionTrace:
        for _ in range(rounds):
            if self.step() is None:
                break
        return self.trace


@dataclass
class ClusterSessionConfig:
    """Knobs for a live clustering session driven by the Gibbs committee."""

    k: int
    model: str = "mog"  # mog | mob
    alpha: float = 1.0
    sigma: float = 1.0
    sigma0: float = 2.0
    beta_a: float = 1.0
    gamma_a: float = 1.0
    query_size: int = 10
    sweeps_per_round: int = 50
    committee_size: int = 50
    n_candidates: int = 20
    n_pairs: int = 200
    selection: str = "argmax"  # argmax | robust | rejection
    delta: float = 0.05
    constraint_weight: float = math.inf
    seed: int = 0

    def hyper(self):
        from .cluster_models import MoBHyper, MoGHyper

        if self.model == "mog":
            return MoGHyper(
                k=self.k, alpha=self.alpha, sigma=self.sigma, sigma0=self.sigma0
            )
        if self.model == "mob":
            return MoBHyper(
                k=self.k, alpha=self.alpha, beta_a=self.beta_a, gamma_a=self.gamma_a
            )
        raise ValueError(f"unknown clustering model {self.model!r}")


class ClusteringSession:
    """Interactive clustering: one persistent constrained Gibbs chain.

    Each round runs ``sweeps_per_round`` constrained sweeps, forms a
    committee from the final ``committee_size`` states (duplicates merged),
    selects a size-s snapshot query over that committee, and shows one
    committee draw. Corrections become must-link/cannot-link constraints;
    confirmations are logged without adding a constraint. Per-sweep chain
    diagnostics accumulate in ``sweep_log``.
    """

    def __init__(self, data, config: ClusterSessionConfig, ground_truth=None):
        from .cluster_models import ConstraintSet, GibbsState

        self.data = np.asarray(data, dtype=float)
        if config.k > self.data.shape[0]:
            raise ValueError(
                f"k={config.k} exceeds the number of items {self.data.shape[0]}"
            )
        self.config = config
        self.hyper = config.hyper()
        self.ground_truth = (
            None if ground_truth is None else np.asarray(ground_truth)
        )
        self.rng = np.random.default_rng(config.seed)
        self.state = GibbsState.random_init(self.data, config.k, self.rng)
        self.constraints = ConstraintSet()
        self.committee: FinitePosterior | None = None
        self.pending: tuple[Query, dict] | None = None
        self.converged = False
        self.trace = SessionTrace()
        self.sweep_log: list[dict] = []
        self.n_confirmations = 0

    def _sweep(self):
        from .cluster_models import (
            clustering_distance,
            gibbs_sweep_mob,
            gibbs_sweep_mog,
            log_joint,
        )

        sweep_fn = gibbs_sweep_mog if self.config.model == "mog" else gibbs_sweep_mob
        sweep_fn(self.state, self.data, self.hyper, self.constraints)
        entry = {
            "sweep": len(self.sweep_log),
            "log_joint": log_joint(self.state, self.data, self.hyper, self.constraints),
            "model_log_joint": log_joint(self.state, self.data, self.hyper),
        }
        if self.ground_truth is not None:
            entry["distance"] = clustering_distance(self.state.z, self.ground_truth)
        self.sweep_log.append(entry)

    def _refresh_committee(self):
        from .structures import FlatClustering

        keep = self.config.committee_size
        members: list = []
        for s in range(self.config.sweeps_per_round):
            self._sweep()
            members.append(FlatClustering(self.state.z))
        self.committee = FinitePosterior.committee(members[-keep:])

    def extend_sweeps(self, n: int) -> None:
        """Run n extra constrained sweeps (diagnostics only, no selection)."""
        for _ in range(n):
            self._sweep()

    def _select(self) -> Query | None:
        cfg = self.config
        sampler = QuerySampler.uniform(self.data.shape[0], cfg.query_size)
        if len(self.committee) == 1:
            return None
        if cfg.selection == "rejection":
            return select_rejection(
                self.committee, sampler, mode="zero_one", rng=self.rng
            )
        candidates = [sampler.sample(self.rng) for _ in range(cfg.n_candidates)]
        if cfg.selection == "robust":
            return select_robust(self.committee, candidates, cfg.delta, self.rng)
        return select_argmax_empirical(
            self.committee, candidates, cfg.n_pairs, self.rng
        )

    def advance(self) -> tuple[Query, dict] | None:
        """Gibbs refresh, query selection, snapshot proposal (idempotent)."""
        if self.converged:
            return None
        if self.pending is None:
            self._refresh_committee()
            query = self._select()
            if query is None:
                self.converged = True
                return None
            snapshot = propose(self.committee, query, self.rng)
            self.pending = (query, snapshot)
        return self.pending

    def apply_feedback(self, atom: Atom, answer, accept: bool) -> FeedbackEvent:
        """Record one response; corrections become weighted constraints."""
        if self.pending is None:
            raise RuntimeError("no pending query; call advance() first")
        query, snapshot = self.pending
        start = time.perf_counter()
        event = FeedbackEvent(
            step=len(self.trace),
            query=query,
            proposed=snapshot,
            atom=atom,
            answer=answer,
            accept=accept,
        )
        if accept:
            self.n_confirmations += 1
        else:
            self.constraints.add(atom, bool(answer), self.config.constraint_weight)
        diag = {
            "constraints": len(self.constraints),
            "confirmations": self.n_confirmations,
            "query_uncertainty": uncertainty_query(self.committee, query),
        }
        if self.ground_truth is not None:
            from .cluster_models import clustering_distance

            diag["distance"] = clustering_distance(self.state.z, self.ground_truth)
        diag["wall_ms"] = (time.perf_counter() - start) * 1000.0
        self.trace.append(event, diag)
        self.pending = None
        return event

    def mode_clustering(self):
        """Highest-weight committee member (the current posterior mode)."""
        if self.committee is None:
            from .structures import FlatClustering

            return FlatClustering(self.state.z)
        idx = int(np.argmax(self.committee.weights))
        return self.committee.structures[idx]

    def step(self, oracle) -> FeedbackEvent | None:
        pending = self.advance()
        if pending is None:
            return None
        query, snapshot = pending
        event = oracle.respond(query, snapshot, step=len(self.trace))
        return self.apply_feedback(event.atom, event.answer, event.accept)

    def run(self, rounds: int, oracle) -> SessionTrace:
        for _ in range(rounds):
            if self.step(oracle) is None:
                break
        return self.trace


def convergence_bound(
    prior_mass: float,
    beta: float,
    margin: float,
    shrinkage_floor: float,
    delta: float,
) -> float:
    """Closed-form bound on rounds until the target's mass exceeds the
    threshold, given a noise margin and a floor on expected query shrinkage.

    margin = 1 selects the noiseless branch; otherwise beta must be at most
    margin / 2.
    """
    if not 0 < prior_mass <= 1:
        raise ValueError(f"prior mass must be in (0, 1], got {prior_mass}")
    if not 0 < shrinkage_floor < 1:
        raise ValueError(f"shrinkage floor must be in (0, 1), got {shrinkage_floor}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not 0 < margin <= 1:
        raise ValueError(f"noise margin must be in (0, 1], got {margin}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    log_prior = math.log(1.0 / prior_mass)
    log_delta = math.log(1.0 / delta)
    if margin == 1.0:
        rate = shrinkage_floor * (1.0 - math.exp(-beta))
        return (2.0 / rate) * max(log_prior, (4.0 / rate) * log_delta)
    if beta > margin / 2.0:
        raise ValueError(
            f"noisy branch requires beta <= margin/2 ({margin / 2.0}), got {beta}"
        )
    rate = beta * margin * shrinkage_floor
    return (4.0 / rate) * max(log_prior, (8.0 * math.exp(beta) / rate) * log_delta)
