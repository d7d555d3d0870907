import math

import numpy as np
import pytest

from sqbc.oracle import CorrectionPolicy, Noiseless, SimulatedExpert
from sqbc.posterior import (
    FinitePosterior,
    target_mass,
    update_zero_one,
)
from sqbc.query_engine import (
    CommitteeSession,
    QuerySampler,
    SessionConfig,
    SessionTrace,
    convergence_bound,
    propose,
    same_trace,
    select_argmax_empirical,
    select_rejection,
    select_robust,
)
from sqbc.structures import Labeling, PointAtom, Query, decompose, eval_atom


def exact_uncertainty(posterior, query):
    """Independent route: average over atoms of the pairwise-draw identity."""
    atoms = decompose(query, posterior.structures[0].space)
    w = posterior.weights
    total = 0.0
    for a in atoms:
        for i, g in enumerate(posterior.structures):
            for j, gp in enumerate(posterior.structures):
                if eval_atom(g, a) != eval_atom(gp, a):
                    total += w[i] * w[j]
    return total / len(atoms)


class TestQuerySampler:
    def test_uniform_subsets_are_sorted_and_distinct(self):
        sampler = QuerySampler.uniform(pool_size=20, query_size=5)
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = sampler.sample(rng)
            assert len(set(q.items)) == 5
            assert list(q.items) == sorted(q.items)

    def test_explicit_probs_validated(self):
        with pytest.raises(ValueError):
            QuerySampler.explicit([Query((0, 1))], probs=[0.5])
        with pytest.raises(ValueError):
            QuerySampler.uniform(pool_size=3, query_size=4)


class TestSelectRejection:
    def test_point_mass_converges(self):
        post = FinitePosterior.uniform([Labeling([0, 1])])
        sampler = QuerySampler.explicit([Query((0, 1))])
        rng = np.random.default_rng(0)
        assert select_rejection(post, sampler, rng=rng, max_iters=200) is None

    def test_single_informative_candidate(self):
        post = FinitePosterior.uniform([Labeling([0]), Labeling([1])])
        sampler = QuerySampler.explicit([Query((0,))])
        rng = np.random.default_rng(0)
        assert select_rejection(post, sampler, rng=rng) == Query((0,))

    def test_two_to_one_selection_ratio(self):
        # u(q0) = 0.5, u(q1) = 0.25 under uniform nu -> acceptance ratio 2:1
        post = FinitePosterior.uniform(
            [Labeling([0, 0, 0]), Labeling([1, 0, 0]), Labeling([0, 0, 0]), Labeling([1, 0, 0])]
        )
        q0 = Query((0,))
        q1 = Query((1, 2))
        # atom 0 disagrees half the time; atoms 1,2 never -> build q1 with
        # one live atom out of two by mixing atom 0 and atom 1
        q1 = Query((0, 1))
        sampler = QuerySampler.explicit([q0, q1])
        u0 = exact_uncertainty(post, q0)
        u1 = exact_uncertainty(post, q1)
        assert u0 == pytest.approx(0.5)
        assert u1 == pytest.approx(0.25)
        rng = np.random.default_rng(12)
        n = 20_000
        hits = sum(select_rejection(post, sampler, rng=rng) == q0 for _ in range(n))
        ratio = hits / (n - hits)
        assert abs(ratio - 2.0) < 0.1


class TestSelectRobust:
    def test_single_high_uncertainty_candidate_at_stage_zero(self):
        post = FinitePosterior.uniform([Labeling([0]), Labeling([1])])
        details = {}
        rng = np.random.default_rng(0)
        q = select_robust(post, [Query((0,))], rng=rng, details=details)
        assert q == Query((0,))
        assert details["stage"] == 0
        assert details["estimate"] >= details["threshold"]

    def test_point_mass_gives_no_query(self):
        post = FinitePosterior.uniform([Labeling([0, 1])])
        rng = np.random.default_rng(0)
        assert select_robust(post, [Query((0,)), Query((1,))], rng=rng) is None

    def test_clearly_best_candidate_dominates(self):
        # u(q0) = 0.9 (ten-way uniform answers), u(q1) ~ 0.01
        tables = [(c, 0) for c in range(10)]
        tables.append((0, 1))
        weights = [0.0995] * 10 + [0.005]
        post = FinitePosterior.from_weights([Labeling(t) for t in tables], weights)
        q0, q1 = Query((0,)), Query((1,))
        rng = np.random.default_rng(7)
        wins = sum(select_robust(post, [q0, q1], rng=rng) == q0 for _ in range(200))
        assert wins >= 190  # 0.95 of 200

    def test_never_returns_below_threshold_estimate(self):
        rng = np.random.default_rng(3)
        for seed in range(30):
            local = np.random.default_rng(seed)
            n = int(local.integers(2, 6))
            tables = [tuple(local.integers(0, 3, size=2)) for _ in range(n)]
            post = FinitePosterior.from_weights(
                [Labeling(t) for t in tables], local.dirichlet(np.ones(n))
            )
            details = {}
            q = select_robust(
                post, [Query((0,)), Query((1,))], rng=rng, details=details
            )
            if q is not None:
                assert details["estimate"] >= details["threshold"]


class TestSelectArgmaxEmpirical:
    def test_single_candidate(self):
        post = FinitePosterior.uniform([Labeling([0]), Labeling([1])])
        rng = np.random.default_rng(0)
        assert select_argmax_empirical(post, [Query((0,))], 10, rng) == Query((0,))

    def test_point_mass_ties_break_to_first(self):
        post = FinitePosterior.uniform([Labeling([0, 1])])
        rng = np.random.default_rng(0)
        q = select_argmax_empirical(post, [Query((1,)), Query((0,))], 50, rng)
        assert q == Query((1,))

    def test_matches_true_argmax(self):
        # atom 0 has five answers at 0.18 plus one at 0.10, atom 1 is 0.9/0.1
        post = FinitePosterior.from_weights(
            [Labeling(t) for t in [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (0, 1)]],
            [0.18, 0.18, 0.18, 0.18, 0.18, 0.10],
        )
        q0, q1 = Query((0,)), Query((1,))
        u0, u1 = exact_uncertainty(post, q0), exact_uncertainty(post, q1)
        assert u0 > u1 + 0.3
        rng = np.random.default_rng(5)
        wins = sum(
            select_argmax_empirical(post, [q1, q0], 1000, rng) == q0 for _ in range(100)
        )
        assert wins >= 99


class TestPropose:
    def test_point_mass_deterministic(self):
        g = Labeling([0, 1, 2])
        post = FinitePosterior.uniform([g])
        rng = np.random.default_rng(0)
        snap = propose(post, Query((0, 1, 2)), rng)
        assert snap == {PointAtom(0): 0, PointAtom(1): 1, PointAtom(2): 2}

    def test_snapshot_consistent_with_one_member(self):
        structures = [Labeling([0, 0]), Labeling([1, 1]), Labeling([0, 1])]
        post = FinitePosterior.uniform(structures)
        rng = np.random.default_rng(1)
        q = Query((0, 1))
        for _ in range(100):
            snap = propose(post, q, rng)
            assert any(
                all(snap[a] == eval_atom(g, a) for a in snap) for g in structures
            )

    def test_draw_distribution_matches_weights(self):
        structures = [Labeling([0]), Labeling([1]), Labeling([2])]
        post = FinitePosterior.from_weights(structures, [0.6, 0.3, 0.1])
        rng = np.random.default_rng(2)
        counts = {0: 0, 1: 0, 2: 0}
        for _ in range(10_000):
            snap = propose(post, Query((0,)), rng)
            counts[snap[PointAtom(0)]] += 1
        assert abs(counts[0] / 10_000 - 0.6) < 0.02
        assert abs(counts[1] / 10_000 - 0.3) < 0.02
        assert abs(counts[2] / 10_000 - 0.1) < 0.02


def four_structure_session(beta=math.inf, rounds_seed=0):
    structures = [Labeling(t) for t in [(0, 0), (0, 1), (1, 0), (1, 1)]]
    g_star = Labeling((0, 1))
    post = FinitePosterior.uniform(structures)
    sampler = QuerySampler.uniform(pool_size=2, query_size=1)
    oracle = SimulatedExpert(
        g_star, Noiseless(), CorrectionPolicy(), np.random.default_rng(1000 + rounds_seed)
    )
    session = CommitteeSession(
        post,
        sampler,
        SessionConfig(beta=beta),
        np.random.default_rng(rounds_seed),
        oracle=oracle,
        g_star=g_star,
    )
    return session, g_star


class TestSession:
    def test_zero_rounds_empty_trace(self):
        session, _ = four_structure_session()
        assert len(session.run(0)) == 0

    def test_noiseless_hard_filtering_reaches_target(self):
        # exhaustive check over seeds: the 4-structure binary instance is
        # pinned down by at most 3 corrections under hard filtering
        for seed in range(20):
            session, g_star = four_structure_session(rounds_seed=seed)
            trace = session.run(10)
            assert target_mass(session.posterior, g_star) == pytest.approx(1.0)
            assert len(trace) <= 3

    def test_trace_length_bounded_by_rounds(self):
        for rounds in (1, 2, 5):
            session, _ = four_structure_session(rounds_seed=rounds)
            assert len(session.run(rounds)) <= rounds

    def test_hard_filtering_never_loses_target(self):
        # noiseless full-correction feedback keeps the target in the
        # version space at every step, with non-decreasing mass
        for seed in range(10):
            session, g_star = four_structure_session(rounds_seed=100 + seed)
            last = target_mass(session.posterior, g_star)
            while session.step() is not None:
                mass = target_mass(session.posterior, g_star)
                assert mass >= last - 1e-12
                assert mass > 0.0
                last = mass

    def test_human_session_parks_without_oracle(self):
        session, _ = four_structure_session()
        session.oracle = None
        pending = session.advance()
        assert pending is not None
        with pytest.raises(RuntimeError):
            session.step()
        query, snapshot = pending
        atom = next(iter(snapshot))
        event = session.apply_feedback(atom, snapshot[atom], accept=True)
        assert event.step == 0

    def test_converged_session_stops(self):
        session, g_star = four_structure_session()
        session.posterior = FinitePosterior.uniform([g_star])
        assert session.step() is None
        assert session.converged

    def test_diagnostics_recorded(self):
        session, _ = four_structure_session(beta=1.0)
        trace = session.run(3)
        for diag in trace.diagnostics:
            assert "target_mass" in diag
            assert "query_uncertainty" in diag
            assert "wall_ms" in diag


class TestDriftBound:
    def test_exact_one_step_drift_meets_lower_bound(self):
        # binary Massart answers: correct with prob (1+margin)/2; the exact
        # expected reciprocal-mass drop must be >= beta*margin*(1-gamma)/2
        rng = np.random.default_rng(99)
        margin = 0.2
        beta = margin / 2.0
        p_correct = (1.0 + margin) / 2.0
        for _ in range(200):
            n = int(rng.integers(2, 12))
            tables = [tuple(rng.integers(0, 2, size=3)) for _ in range(n)]
            g_star = tables[int(rng.integers(n))]
            post = FinitePosterior.from_weights(
                [Labeling(t) for t in tables], rng.dirichlet(np.ones(n))
            )
            atom = PointAtom(int(rng.integers(3)))
            truth = g_star[atom.i]
            gamma = sum(
                w
                for g, w in zip(post.structures, post.weights)
                if eval_atom(g, atom) == truth
            )
            pi_star = target_mass(post, Labeling(g_star))
            if pi_star == 0:
                continue
            expected_inv = 0.0
            for answer, prob in ((truth, p_correct), (1 - truth, 1.0 - p_correct)):
                updated = update_zero_one(post, atom, answer, beta)
                expected_inv += prob / target_mass(updated, Labeling(g_star))
            drift = 1.0 - pi_star * expected_inv
            assert drift >= beta * margin * (1.0 - gamma) / 2.0 - 1e-12


class TestConvergenceBound:
    @staticmethod
    def noiseless_reference(prior_mass, beta, floor, delta):
        rate = floor * (1 - math.exp(-beta))
        return (2 / rate) * max(math.log(1 / prior_mass), (4 / rate) * math.log(1 / delta))

    @staticmethod
    def noisy_reference(prior_mass, beta, margin, floor, delta):
        rate = beta * margin * floor
        return (4 / rate) * max(
            math.log(1 / prior_mass), (8 * math.exp(beta) / rate) * math.log(1 / delta)
        )

    def test_certain_prior_leaves_only_delta_term(self):
        beta, floor, delta = 1.0, 0.5, 0.1
        rate = floor * (1 - math.exp(-beta))
        expected = (2 / rate) * (4 / rate) * math.log(1 / delta)
        assert convergence_bound(1.0, beta, 1.0, floor, delta) == pytest.approx(expected)

    def test_monotone_in_delta(self):
        bounds = [
            convergence_bound(0.1, 0.05, 0.2, 0.3, d) for d in (0.01, 0.05, 0.2, 0.5)
        ]
        assert all(a >= b for a, b in zip(bounds, bounds[1:]))

    def test_cross_checked_numeric_value(self):
        got = convergence_bound(0.01, 1.0, 1.0, 1 / 3, 0.05)
        assert got == pytest.approx(self.noiseless_reference(0.01, 1.0, 1 / 3, 0.05))
        got_noisy = convergence_bound(0.02, 0.1, 0.2, 0.25, 0.05)
        assert got_noisy == pytest.approx(
            self.noisy_reference(0.02, 0.1, 0.2, 0.25, 0.05)
        )

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            convergence_bound(0.0, 1.0, 1.0, 0.5, 0.05)
        with pytest.raises(ValueError):
            convergence_bound(0.5, 1.0, 1.0, 1.5, 0.05)
        with pytest.raises(ValueError):
            convergence_bound(0.5, 0.3, 0.2, 0.5, 0.05)  # beta > margin/2


class TestTraceSerialization:
    def test_jsonl_round_trip(self):
        session, _ = four_structure_session(beta=1.0)
        trace = session.run(4)
        text = trace.to_jsonl()
        parsed = SessionTrace.from_jsonl(text, space="labeling")
        assert same_trace(parsed, trace, ignore=())

    def test_same_trace_ignores_wall_clock(self):
        session, _ = four_structure_session(beta=1.0)
        trace = session.run(2)
        other = SessionTrace.from_jsonl(trace.to_jsonl(), space="labeling")
        other.diagnostics[0]["wall_ms"] = -1.0
        assert same_trace(trace, other)
        assert not same_trace(trace, other, ignore=())
