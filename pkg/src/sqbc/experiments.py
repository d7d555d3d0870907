"""Desk-scale experiment runners and their result plumbing.

Every runner maps an ``ExperimentConfig`` (flat key=value text file) plus
a seed list to an append-only list of ``ResultRow``s, written as CSV. Runs
are bit-reproducible given (config, seeds): all randomness flows from
per-seed generators, and all arms of one experiment consume identical
datasets and ground truths.

Runners:

* ``run_clustering_experiment``  -- committee-selected constraints vs
  random-pair constraints vs an unconstrained chain, on blobs / iris /
  wine (Gaussian mixture) or binarized digit images (Bernoulli mixture).
* ``run_linear_noise_experiment`` -- pool-based learning of a noisy linear
  separator: committee selection at several update strengths vs random.
* ``run_kernel_mnist``           -- one-vs-all RBF committee selection vs
  random labeling on an IDX image set.
* ``run_hypercube_shrinkage``    -- Monte-Carlo estimate of the expected
  pair-query uncertainty for axis-parallel cuts of the unit hypercube.
* ``run_consistency_suite``      -- noisy finite-committee sessions:
  target-mass convergence, drift statistics, and the closed-form round
  bound vs the measured stopping time.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cluster_models import (
    ConstraintSet,
    GibbsState,
    clustering_distance,
    gibbs_sweep_mob,
    gibbs_sweep_mog,
    log_joint,
)
from .datasets import (
    gaussian_blobs,
    load_mnist_binarized,
    load_mnist_pixels,
    load_uci,
)
from .kernel_linear import KernelPosterior, KernelSpec, OneVsAllClassifier, qbc_select_point
from .oracle import CorrectionPolicy, Noiseless, SimulatedExpert
from .posterior import FinitePosterior, shrinkage_query, target_mass
from .query_engine import (
    ClusteringSession,
    ClusterSessionConfig,
    CommitteeSession,
    QuerySampler,
    SessionConfig,
    convergence_bound,
)
from .structures import FlatClustering, Labeling, PairAtom

__all__ = [
    "ResultRow",
    "ExperimentConfig",
    "rows_to_csv",
    "rows_from_csv",
    "write_rows",
    "plot_rows",
    "run_clustering_experiment",
    "run_linear_noise_experiment",
    "run_kernel_mnist",
    "run_hypercube_shrinkage",
    "hypercube_uncertainty_exact",
    "run_consistency_suite",
    "EXPERIMENTS",
    "run_experiment",
]


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    step: int
    metric: str
    value: float


_CSV_FIELDS = ["experiment", "seed", "step", "metric", "value"]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(_CSV_FIELDS)
    for r in rows:
        writer.writerow([r.experiment, r.seed, r.step, r.metric, repr(r.value)])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != _CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {header}")
    return [
        ResultRow(exp, int(seed), int(step), metric, float(value))
        for exp, seed, step, metric, value in reader
    ]


def write_rows(rows, out_dir, name: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    path.write_text(rows_to_csv(rows))
    return path


def plot_rows(rows, path, title: str = "") -> None:
    """Optional SVG line chart: one line per (seed, metric) over steps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[tuple, list[tuple[int, float]]] = {}
    for r in rows:
        if math.isfinite(r.value):
            series.setdefault((r.metric, r.seed), []).append((r.step, r.value))
    fig, ax = plt.subplots(figsize=(8, 5))
    for (metric, seed), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"{metric} (seed {seed})")
    ax.set_xlabel("step")
    ax.set_title(title)
    if len(series) <= 12:
        ax.legend(fontsize=7)
    fig.savefig(path, format="svg")
    plt.close(fig)


@dataclass
class ExperimentConfig:
    """Flat key=value configuration shared by all runners."""

    experiment: str
    dataset: str = "blobs"
    data_path: str = ""
    out_dir: str = "results"
    seeds: tuple[int, ...] = (0,)
    rounds: int = 10
    # clustering
    k: int = 3
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
    constraint_weight: float = math.inf
    # linear / kernel
    dim: int = 10
    pool_size: int = 500
    test_size: int = 2000
    noise: float = 0.0
    betas: tuple[float, ...] = (0.1, 1.0, 10.0)
    beta: float = 1.0
    gamma: float = 0.001
    sigma0_sq: float = 1.0
    clip_bound: float = 5.0
    pixel_scale: float = 1.0
    label_budget: int = 150
    random_label_budget: int = 0  # defaults to label_budget
    checkpoint_every: int = 10
    train_subsample: int = 5000
    test_subsample: int = 1000
    classes: tuple[int, ...] = tuple(range(10))
    per_class: int = 50
    threshold: int = 128
    # consistency
    n_structures: int = 50
    n_atoms: int = 30
    margin: float = 0.2
    correction_prob: float = 1.0
    tau: float = 0.99
    delta: float = 0.05
    consistency_query_size: int = 3
    stop_at_tau: bool = True
    # hypercube
    p_dims: int = 5
    n_samples: int = 100_000

    _INT_FIELDS = {
        "rounds", "k", "query_size", "sweeps_per_round", "committee_size",
        "n_candidates", "n_pairs", "dim", "pool_size", "test_size",
        "label_budget", "random_label_budget", "checkpoint_every",
        "train_subsample", "test_subsample", "per_class", "threshold",
        "n_structures", "n_atoms", "consistency_query_size", "p_dims",
        "n_samples",
    }
    _FLOAT_FIELDS = {
        "alpha", "sigma", "sigma0", "beta_a", "gamma_a", "constraint_weight",
        "noise", "beta", "gamma", "sigma0_sq", "clip_bound", "margin",
        "correction_prob", "tau", "delta", "pixel_scale",
    }
    _TUPLE_FIELDS = {"seeds": int, "betas": float, "classes": int}
    _BOOL_FIELDS = {"stop_at_tau"}

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        values: dict = {}
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key = value")
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        if "experiment" not in values:
            raise ValueError("config needs an 'experiment' key")
        kwargs: dict = {}
        for key, raw in values.items():
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(raw, str):
                if key in cls._TUPLE_FIELDS:
                    conv = cls._TUPLE_FIELDS[key]
                    kwargs[key] = tuple(conv(v) for v in raw.split(",") if v.strip())
                elif key in cls._INT_FIELDS:
                    kwargs[key] = int(raw)
                elif key in cls._FLOAT_FIELDS:
                    kwargs[key] = float(raw)
                elif key in cls._BOOL_FIELDS:
                    kwargs[key] = raw.lower() in ("1", "true", "yes")
                else:
                    kwargs[key] = raw
            else:
                kwargs[key] = tuple(raw) if key in cls._TUPLE_FIELDS else raw
        return cls(**kwargs)


# -- clustering -----------------------------------------------------------------


def _clustering_dataset(config: ExperimentConfig, rng: np.random.Generator):
    """(data, ground truth, model kind); identical across arms and seeds
    except for blob noise, which is drawn from the dedicated data seed."""
    if config.dataset == "blobs":
        # kept on the generative scale so sigma/sigma0 describe the truth
        centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
        X, z = gaussian_blobs(20, centers, scale=config.sigma, rng=rng)
        return X, z, "mog"
    if config.dataset in ("iris", "wine"):
        X, labels = load_uci(config.data_path, config.dataset)
        return X, labels, "mog"
    if config.dataset == "mnist_mob":
        bits, labels = load_mnist_binarized(
            config.data_path,
            classes=(0, 1, 2),
            per_class=config.per_class,
            threshold=config.threshold,
            rng=rng,
        )
        return bits, labels, "mob"
    raise ValueError(f"unknown clustering dataset {config.dataset!r}")


def _cluster_chain_arm(
    arm, config, data, truth, model, seed
) -> list[ResultRow]:
    """Vanilla / random arms: one chain, constraints on a schedule."""
    hyper_cfg = ClusterSessionConfig(
        k=config.k,
        model=model,
        alpha=config.alpha,
        sigma=config.sigma,
        sigma0=config.sigma0,
        beta_a=config.beta_a,
        gamma_a=config.gamma_a,
        seed=seed,
    )
    hyper = hyper_cfg.hyper()
    rng = np.random.default_rng(seed)
    state = GibbsState.random_init(data, config.k, rng)
    constraints = ConstraintSet()
    oracle_rng = np.random.default_rng(seed + 104729)
    sweep_fn = gibbs_sweep_mog if model == "mog" else gibbs_sweep_mob
    rows = []
    n = data.shape[0]
    # rounds constraints, each acting for a full block of sweeps after it
    # lands (block 0 is the unconstrained burn-in, mirroring the committee arm)
    total = (config.rounds + 1) * config.sweeps_per_round
    for sweep in range(total):
        if arm == "random" and sweep > 0 and sweep % config.sweeps_per_round == 0:
            i, j = oracle_rng.choice(n, size=2, replace=False)
            atom = PairAtom(int(i), int(j))
            constraints.add(atom, bool(truth[atom.i] == truth[atom.j]), config.constraint_weight)
        sweep_fn(state, data, hyper, constraints)
        rows.append(ResultRow(config.experiment, seed, sweep, f"{arm}/distance",
                              clustering_distance(state.z, truth)))
        rows.append(ResultRow(config.experiment, seed, sweep, f"{arm}/log_joint",
                              log_joint(state, data, hyper, constraints)))
    return rows


def _cluster_sqbc_arm(config, data, truth, model, seed) -> list[ResultRow]:
    session_cfg = ClusterSessionConfig(
        k=config.k,
        model=model,
        alpha=config.alpha,
        sigma=config.sigma,
        sigma0=config.sigma0,
        beta_a=config.beta_a,
        gamma_a=config.gamma_a,
        query_size=config.query_size,
        sweeps_per_round=config.sweeps_per_round,
        committee_size=config.committee_size,
        n_candidates=config.n_candidates,
        n_pairs=config.n_pairs,
        constraint_weight=config.constraint_weight,
        seed=seed,
    )
    session = ClusteringSession(data, session_cfg, ground_truth=truth)
    oracle = SimulatedExpert(
        FlatClustering(truth),
        Noiseless(),
        CorrectionPolicy(),
        np.random.default_rng(seed + 104729),
    )
    session.run(config.rounds, oracle)
    # pad to the shared sweep horizon so the final constraint acts on sweeps
    # and arms stay comparable even when the committee converges early
    target = (config.rounds + 1) * config.sweeps_per_round
    session.extend_sweeps(target - len(session.sweep_log))
    rows = []
    for entry in session.sweep_log:
        rows.append(ResultRow(config.experiment, seed, entry["sweep"], "sqbc/distance",
                              entry["distance"]))
        rows.append(ResultRow(config.experiment, seed, entry["sweep"], "sqbc/log_joint",
                              entry["log_joint"]))
    for step, diag in enumerate(session.trace.diagnostics):
        rows.append(ResultRow(config.experiment, seed, step, "sqbc/constraints",
                              diag["constraints"]))
        rows.append(ResultRow(config.experiment, seed, step, "sqbc/step_distance",
                              diag["distance"]))
    return rows


def run_clustering_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Committee-selected vs random vs no feedback, shared data per seed."""
    rows: list[ResultRow] = []
    for seed in config.seeds:
        data_rng = np.random.default_rng(seed + 7919)
        data, truth, model = _clustering_dataset(config, data_rng)
        rows += _cluster_sqbc_arm(config, data, truth, model, seed)
        rows += _cluster_chain_arm("random", config, data, truth, model, seed)
        rows += _cluster_chain_arm("vanilla", config, data, truth, model, seed)
    return rows


# -- linear separators ------------------------------------------------------------


def _linear_world(config: ExperimentConfig, seed: int):
    rng = np.random.default_rng(seed + 1_000_003)
    h_star = rng.standard_normal(config.dim)
    h_star /= np.linalg.norm(h_star)
    pool = rng.standard_normal((config.pool_size, config.dim))
    test = rng.standard_normal((config.test_size, config.dim))
    noise_rng = np.random.default_rng(seed + 2_000_003)
    pool_clean = np.sign(pool @ h_star)
    pool_clean[pool_clean == 0] = 1.0
    test_clean = np.sign(test @ h_star)
    test_clean[test_clean == 0] = 1.0
    pool_flip = noise_rng.random(config.pool_size) < config.noise
    test_flip = noise_rng.random(config.test_size) < config.noise
    pool_labels = np.where(pool_flip, -pool_clean, pool_clean)
    test_labels = np.where(test_flip, -test_clean, test_clean)
    return pool, pool_labels, test, test_labels


def _linear_arm(arm, beta, config, world, seed) -> list[ResultRow]:
    pool, pool_labels, test, test_labels = world
    rng = np.random.default_rng(seed)
    posterior = KernelPosterior(KernelSpec("linear"), beta=beta, sigma0_sq=config.sigma0_sq)
    rows = []
    for t in range(1, config.label_budget + 1):
        if arm == "random":
            idx = int(rng.integers(pool.shape[0]))
        else:
            idx = qbc_select_point(pool, posterior, config.clip_bound, rng)
            if idx is None:
                idx = int(rng.integers(pool.shape[0]))
        posterior.update(pool[idx], float(pool_labels[idx]))
        if t % config.checkpoint_every == 0 or t == config.label_budget:
            mu, _ = posterior.predictive_batch(test)
            pred = np.where(mu >= 0, 1.0, -1.0)
            err = float(np.mean(pred != test_labels))
            rows.append(ResultRow(config.experiment, seed, t, f"{arm}/test_error", err))
    return rows


def run_linear_noise_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Noisy linear separator: committee selection per beta vs random."""
    rows: list[ResultRow] = []
    for seed in config.seeds:
        world = _linear_world(config, seed)
        rows.append(ResultRow(config.experiment, seed, 0, "bayes_floor", config.noise))
        for beta in config.betas:
            rows += _linear_arm(f"qbc_beta_{beta:g}", beta, config, world, seed)
        rows += _linear_arm("random", config.beta, config, world, seed)
    return rows


# -- kernel digits ------------------------------------------------------------------


def _kernel_world(config: ExperimentConfig, seed: int):
    rng = np.random.default_rng(seed + 3_000_017)
    X, y = load_mnist_pixels(config.data_path, prefix="train")
    if config.pixel_scale != 1.0:
        X = X * config.pixel_scale
    if X.shape[0] < config.train_subsample + config.test_subsample:
        raise ValueError(
            f"need {config.train_subsample + config.test_subsample} images, "
            f"found {X.shape[0]}"
        )
    perm = rng.permutation(X.shape[0])
    train_idx = perm[: config.train_subsample]
    test_idx = perm[config.train_subsample : config.train_subsample + config.test_subsample]
    return X[train_idx], y[train_idx], X[test_idx], y[test_idx]


def _kernel_arm(arm, config, world, seed) -> list[ResultRow]:
    X_train, y_train, X_test, y_test = world
    rng = np.random.default_rng(seed)
    clf = OneVsAllClassifier(
        config.classes, KernelSpec("rbf", gamma=config.gamma),
        beta=config.beta, sigma0_sq=config.sigma0_sq,
    )
    budget = (
        config.random_label_budget
        if (arm == "random" and config.random_label_budget)
        else config.label_budget
    )
    rows = []
    for t in range(1, budget + 1):
        if arm == "random":
            idx = int(rng.integers(X_train.shape[0]))
        else:
            idx = clf.select(X_train, config.clip_bound, rng)
            if idx is None:
                idx = int(rng.integers(X_train.shape[0]))
        clf.update(X_train[idx], int(y_train[idx]))
        if t % config.checkpoint_every == 0 or t == budget:
            err = float(np.mean(clf.predict(X_test) != y_test))
            rows.append(ResultRow(config.experiment, seed, t, f"{arm}/test_error", err))
    return rows


def run_kernel_mnist(config: ExperimentConfig) -> list[ResultRow]:
    """One-vs-all RBF committee selection vs random labels on IDX images."""
    rows: list[ResultRow] = []
    for seed in config.seeds:
        world = _kernel_world(config, seed)
        rows += _kernel_arm("active", config, world, seed)
        rows += _kernel_arm("random", config, world, seed)
    return rows


# -- hypercube ---------------------------------------------------------------------


def hypercube_uncertainty_exact(p_dims: int) -> float:
    """Closed form for the expected pair-query uncertainty: 4/9 - 1/(9p)."""
    if p_dims < 1:
        raise ValueError("dimension must be >= 1")
    return 4.0 / 9.0 - 1.0 / (9.0 * p_dims)


def run_hypercube_shrinkage(
    p_dims: int, n_samples: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo estimate of E[u({X, Y})] for axis-parallel hypercube cuts.

    X, Y uniform on [0,1]^p; a pair's uncertainty under the uniform cut
    prior is 2 r (1 - r) with r = ||x - y||_1 / p.
    """
    if p_dims < 1:
        raise ValueError("dimension must be >= 1")
    x = rng.random((n_samples, p_dims))
    y = rng.random((n_samples, p_dims))
    r = np.abs(x - y).sum(axis=1) / p_dims
    return float(np.mean(2.0 * r * (1.0 - r)))


# -- consistency -------------------------------------------------------------------


def _massart_binary_expert(g_star, atoms, margin, correction_prob, rng):
    """Binary Massart table: correct with prob (1+margin)/2 on every atom."""
    from .oracle import MassartTable

    p_hi = (1.0 + margin) / 2.0
    table = {}
    for atom in atoms:
        truth = g_star.eval_atom(atom)
        table[atom] = {truth: p_hi, 1 - truth: 1.0 - p_hi}
    noise = MassartTable(table)
    return SimulatedExpert(
        g_star, noise, CorrectionPolicy(correction_prob=correction_prob), rng
    )


def run_consistency_suite(config: ExperimentConfig) -> list[ResultRow]:
    """Noisy sessions on a random finite committee of binary label tables.

    Per seed: target mass per round, reciprocal target mass (drift
    diagnostics), the measured shrinkage floor of selected queries, and
    rounds-to-tau vs the closed-form bound at that floor.
    """
    rows: list[ResultRow] = []
    from .structures import PointAtom

    atoms = [PointAtom(i) for i in range(config.n_atoms)]
    for seed in config.seeds:
        world_rng = np.random.default_rng(seed + 5_000_011)
        tables = {
            tuple(world_rng.integers(0, 2, size=config.n_atoms))
            for _ in range(config.n_structures)
        }
        tables = sorted(tables)
        structures = [Labeling(t) for t in tables]
        g_star = structures[int(world_rng.integers(len(structures)))]
        posterior = FinitePosterior.uniform(structures)
        expert = _massart_binary_expert(
            g_star, atoms, config.margin, config.correction_prob,
            np.random.default_rng(seed + 6_000_011),
        )
        session = CommitteeSession(
            posterior,
            QuerySampler.uniform(config.n_atoms, config.consistency_query_size),
            SessionConfig(beta=config.beta, max_iters=2_000),
            np.random.default_rng(seed),
            oracle=expert,
            g_star=g_star,
        )
        rounds_to_tau = None
        shrink_floor = None
        prior_mass = target_mass(posterior, g_star)
        for t in range(1, config.rounds + 1):
            pending = session.advance()
            if pending is None:
                break
            query, _ = pending
            shrink = shrinkage_query(session.posterior, query)
            mass_before = target_mass(session.posterior, g_star)
            if mass_before <= config.tau:
                shrink_floor = shrink if shrink_floor is None else min(shrink_floor, shrink)
            if session.step() is None:
                break
            mass = target_mass(session.posterior, g_star)
            rows.append(ResultRow(config.experiment, seed, t, "target_mass", mass))
            rows.append(ResultRow(config.experiment, seed, t, "inv_target_mass", 1.0 / mass))
            if rounds_to_tau is None and mass > config.tau:
                rounds_to_tau = t
                if config.stop_at_tau:
                    break
        if rounds_to_tau is not None:
            rows.append(ResultRow(config.experiment, seed, rounds_to_tau,
                                  "rounds_to_tau", rounds_to_tau))
        if shrink_floor is not None and shrink_floor > 0:
            bound = convergence_bound(
                prior_mass, config.beta, config.margin, shrink_floor, config.delta
            )
            rows.append(ResultRow(config.experiment, seed, 0, "round_bound", bound))
            rows.append(ResultRow(config.experiment, seed, 0, "shrinkage_floor", shrink_floor))
    return rows


EXPERIMENTS = {
    "clustering": run_clustering_experiment,
    "linear_noise": run_linear_noise_experiment,
    "kernel_mnist": run_kernel_mnist,
    "consistency": run_consistency_suite,
}


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    if config.experiment == "hypercube":
        rows = []
        for seed in config.seeds:
            rng = np.random.default_rng(seed)
            est = run_hypercube_shrinkage(config.p_dims, config.n_samples, rng)
            rows.append(ResultRow("hypercube", seed, 0, f"estimate_p{config.p_dims}", est))
            rows.append(ResultRow("hypercube", seed, 0, f"exact_p{config.p_dims}",
                                  hypercube_uncertainty_exact(config.p_dims)))
        return rows
    if config.experiment not in EXPERIMENTS:
        raise ValueError(
            f"unknown experiment {config.experiment!r}; "
            f"expected one of {sorted(EXPERIMENTS) + ['hypercube']}"
        )
    return EXPERIMENTS[config.experiment](config)
