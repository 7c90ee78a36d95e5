"""Experiment driver: synthetic sweeps, CSV ingestion and method comparison.

Sweeps draw a random instance per replication, pick the hardest causal
parameter consistent with its training shifts, fit baselines plus the
worst-case robust estimator on sampled data, and evaluate everything with the
population worst-case robust risk alongside the analytic lower bound. The
ingestion path drives the same estimators on generic multi-environment CSV
files and on test sets filtered by shift strength and mixed by the proportion
of unseen shift directions.

Replications and sweep points are independent work units with seeds derived
from (master seed, unit index), so parallel execution is reproducible and
identical to sequential execution.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import risk
from .estimate import SolverConfig, fit_baseline, fit_worst_case_robust
from .linalg import SubspaceBasis, orthogonal_complement, projection
from .report import ResultRow
from .scm import (
    Dataset,
    adversarial_params,
    random_instance,
    sample_dataset,
    shift_span,
)

__all__ = [
    "ExperimentConfig",
    "run_sweep_gamma",
    "run_sweep_gamma_prime",
    "ingest_multienv_csv",
    "build_shifted_test_sets",
    "evaluate_methods",
    "run_ingest_eval",
]

METRIC_WC = "worst_case_risk"
METRIC_MSE = "test_mse"


@dataclass
class ExperimentConfig:
    """Configuration for the sweep and ingestion experiment modes."""

    mode: str = "sweep-gamma"
    d: int = 15
    n_envs: int = 7
    c_norm: float = 10.0
    eigen_spec: list = None
    n_per_env: int = 2000
    replications: int = 1
    seed: int = 0
    grid: list = field(default_factory=list)
    gamma_fixed: float = 40.0
    unseen_dim: int = 2
    threads: int = 1
    out_dir: str = "out"
    methods: dict = None
    solver: dict = field(default_factory=dict)
    # ingestion settings
    data_path: str = None
    schema: dict = None
    seen_env: str = None
    strengths: list = field(default_factory=lambda: [0.5, 1.0])
    proportions: list = field(default_factory=lambda: [0.0, 1.0])
    train_size_seen: int = 20
    test_size: int = None
    coordinate: int = None
    full_distance: bool = False

    def __post_init__(self):
        if self.mode not in ("sweep-gamma", "sweep-gamma-prime", "ingest-eval"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.grid:
            if self.mode == "sweep-gamma":
                self.grid = [float(g) for g in range(11)]
            elif self.mode == "sweep-gamma-prime":
                self.grid = [0.25 * i for i in range(9)]
        if self.mode.startswith("sweep") and not self.grid:
            raise ValueError("sweep grid must be nonempty")
        if self.mode == "ingest-eval":
            if not self.strengths or not self.proportions:
                raise ValueError("strengths and proportions must be nonempty")
            if self.data_path is None or self.schema is None:
                raise ValueError("ingest-eval requires data_path and schema")
            if self.seen_env is None:
                raise ValueError("ingest-eval requires seen_env")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @classmethod
    def from_dict(cls, raw):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def solver_config(self):
        return SolverConfig(**self.solver)


def _run_units(n_units, fn, threads):
    if threads <= 1:
        return [fn(i) for i in range(n_units)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_units)))


def _sweep_instance(cfg, rep, stream):
    """Adversarial instance plus sampled training data for one replication."""
    theta_init, shifts = random_instance(
        cfg.d, cfg.n_envs, cfg.c_norm, seed=[cfg.seed, stream, rep],
        eigen_spec=cfg.eigen_spec,
    )
    span = shift_span(shifts, rank_spec=cfg.n_envs - 1)
    theta_adv = adversarial_params(theta_init, span, cfg.c_norm).params
    data = sample_dataset(theta_adv, shifts, cfg.n_per_env, seed=[cfg.seed, stream + 1, rep])
    m_anchor = np.zeros((cfg.d, cfg.d))
    for s in shifts:
        m_anchor += s.weight * np.outer(s.mu, s.mu)
    theta_s = risk.identified_params(theta_adv, span)
    budget = risk.RiskBudget.from_identified(cfg.c_norm, theta_s)
    return span, theta_s, budget, data, m_anchor


def run_sweep_gamma(cfg):
    """Evaluate OLS, anchor and the worst-case robust fit across seen-shift
    strengths, against the analytic lower bound (no unseen directions)."""
    if cfg.mode != "sweep-gamma":
        raise ValueError("config mode must be 'sweep-gamma'")
    shift_rank = cfg.n_envs - 1
    solver_cfg = cfg.solver_config()

    def one_rep(rep):
        span, theta_s, budget, data, m_anchor = _sweep_instance(cfg, rep, 11)
        beta_ols = fit_baseline(data, "ols")
        rows = []
        for gamma in cfg.grid:
            gamma = float(gamma)
            dec = risk.TestBoundDecomposition(
                gamma, m_anchor, 0.0, SubspaceBasis.empty(cfg.d)
            )
            beta_anchor = fit_baseline(data, "anchor", gamma=gamma)
            wc = fit_worst_case_robust(
                data,
                m_test=None,
                c_norm=cfg.c_norm,
                gamma=gamma,
                gamma_prime=0.0,
                rank_spec=shift_rank,
                cfg=solver_cfg,
            )
            fits = {"ols": beta_ols, "anchor": beta_anchor, "worst_case": wc.beta}
            for name, beta in fits.items():
                rows.append(
                    ResultRow(
                        name, "gamma", gamma, METRIC_WC,
                        risk.worst_case_robust_risk(beta, theta_s, budget, dec),
                        rep, cfg.seed,
                    )
                )
            rows.append(
                ResultRow(
                    "lower_bound", "gamma", gamma, METRIC_WC,
                    risk.minimax_lower_bound(theta_s, budget, dec).value,
                    rep, cfg.seed,
                )
            )
        return rows

    chunks = _run_units(cfg.replications, one_rep, cfg.threads)
    return [row for chunk in chunks for row in chunk]


def run_sweep_gamma_prime(cfg):
    """Evaluate the methods across unseen-shift strengths at a fixed seen
    strength, with a low-dimensional set of new shift directions."""
    if cfg.mode != "sweep-gamma-prime":
        raise ValueError("config mode must be 'sweep-gamma-prime'")
    shift_rank = cfg.n_envs - 1
    solver_cfg = cfg.solver_config()
    gamma = float(cfg.gamma_fixed)

    def one_rep(rep):
        span, theta_s, budget, data, m_anchor = _sweep_instance(cfg, rep, 31)
        comp = orthogonal_complement(span)
        if comp.dim < cfg.unseen_dim:
            raise ValueError("unseen_dim exceeds the complement of the shift span")
        rng = np.random.default_rng([cfg.seed, 33, rep])
        mix, _ = np.linalg.qr(rng.standard_normal((comp.dim, cfg.unseen_dim)))
        unseen = SubspaceBasis(cfg.d, comp.columns @ mix)
        p_unseen = projection(unseen)

        beta_ols = fit_baseline(data, "ols")
        beta_anchor = fit_baseline(data, "anchor", gamma=gamma)
        rows = []
        for gp in cfg.grid:
            gp = float(gp)
            dec = risk.TestBoundDecomposition(gamma, m_anchor, gp, unseen)
            wc = fit_worst_case_robust(
                data,
                m_test=p_unseen,  # informative bound on the new directions
                c_norm=cfg.c_norm,
                gamma=gamma,
                gamma_prime=gp,
                rank_spec=shift_rank,
                cfg=solver_cfg,
                unseen_rank_spec=cfg.unseen_dim,
            )
            fits = {"ols": beta_ols, "anchor": beta_anchor, "worst_case": wc.beta}
            for name, beta in fits.items():
                rows.append(
                    ResultRow(
                        name, "gamma_prime", gp, METRIC_WC,
                        risk.worst_case_robust_risk(beta, theta_s, budget, dec),
                        rep, cfg.seed,
                    )
                )
            rows.append(
                ResultRow(
                    "lower_bound", "gamma_prime", gp, METRIC_WC,
                    risk.minimax_lower_bound(theta_s, budget, dec).value,
                    rep, cfg.seed,
                )
            )
        return rows

    chunks = _run_units(cfg.replications, one_rep, cfg.threads)
    return [row for chunk in chunks for row in chunk]


def ingest_multienv_csv(path, schema):
    """Load a multi-environment CSV into a dataset.

    ``schema`` names the target column, the covariate columns, the environment
    column and the reference environment label. Rows with missing values in
    any used column are dropped with a warning reporting the count.
    """
    required = {"target", "covariates", "environment", "reference"}
    missing = required - set(schema)
    if missing:
        raise ValueError(f"schema is missing fields: {sorted(missing)}")
    frame = pd.read_csv(path)
    used = [schema["target"], *schema["covariates"], schema["environment"]]
    for col in used:
        if col not in frame.columns:
            raise ValueError(f"column {col!r} not found in {path}")
    subset = frame[used]
    complete = subset.dropna()
    dropped = len(subset) - len(complete)
    if dropped:
        warnings.warn(f"dropped {dropped} rows with missing values", stacklevel=2)
    env = complete[schema["environment"]].astype(str).to_numpy()
    labels, counts = np.unique(env, return_counts=True)
    thin = [f"{l} ({c} rows)" for l, c in zip(labels, counts) if c < 2]
    if thin:
        raise ValueError(f"environments need at least 2 rows: {', '.join(thin)}")
    x = complete[list(schema["covariates"])].to_numpy(dtype=float)
    y = complete[schema["target"]].to_numpy(dtype=float)
    return Dataset.from_arrays(x, y, env, schema["reference"])


def _shift_coordinate(block_mean, ref_mean):
    return int(np.argmax(np.abs(block_mean - ref_mean)))


def build_shifted_test_sets(
    data,
    seen_env,
    strength_grid,
    proportions,
    seed,
    *,
    size=None,
    coordinate=None,
    full_distance=False,
):
    """Test sets filtered by shift strength and mixed by unseen proportion.

    For each strength ``s``, every non-reference environment keeps the s*100%
    of its points closest to the reference mean, measured along the
    coordinate with the largest mean shift of that environment (or the given
    ``coordinate``; ``full_distance`` switches to the Euclidean distance over
    all covariates). A test set for (s, pi) then mixes a ``pi`` fraction of
    points from environments other than ``seen_env`` with a 1 - pi fraction
    from ``seen_env``. Selection is nested across strengths and deterministic
    given ``seed``.
    """
    seen_idx = data.label_index(seen_env) if isinstance(seen_env, str) else int(seen_env)
    if seen_idx == data.reference_index:
        raise ValueError("seen_env cannot be the reference environment")
    strengths = [float(s) for s in strength_grid]
    props = [float(p) for p in proportions]
    if any(not 0.0 < s <= 1.0 for s in strengths):
        raise ValueError("strengths must lie in (0, 1]")
    if any(not 0.0 <= p <= 1.0 for p in props):
        raise ValueError("proportions must lie in [0, 1]")

    ref_x, _ = data.environment(data.reference_index)
    ref_mean = ref_x.mean(axis=0)
    orders = {}
    for e in range(data.n_envs):
        if e == data.reference_index:
            continue
        x, _ = data.environment(e)
        if full_distance:
            dist = np.linalg.norm(x - ref_mean, axis=1)
        else:
            c = coordinate if coordinate is not None else _shift_coordinate(
                x.mean(axis=0), ref_mean
            )
            dist = np.abs(x[:, c] - ref_mean[c])
        orders[e] = np.argsort(dist, kind="stable")

    tests = {}
    for si, s in enumerate(strengths):
        selected = {}
        for e, order in orders.items():
            n_e = order.size
            k = int(np.floor(s * n_e))
            if k < 1:
                raise ValueError(
                    f"strength {s} selects no points in environment {e}; "
                    f"minimal feasible strength is {1.0 / n_e}"
                )
            selected[e] = order[:k]
        seen_x, seen_y = data.environment(seen_idx)
        pool_seen = (seen_x[selected[seen_idx]], seen_y[selected[seen_idx]])
        unseen_parts = [
            (data.xs[e][idx], data.ys[e][idx])
            for e, idx in selected.items()
            if e != seen_idx
        ]
        for pi_i, pi in enumerate(props):
            if pi > 0 and not unseen_parts:
                raise ValueError("no environments besides seen_env to draw from")
            pool_unseen = (
                (np.vstack([p[0] for p in unseen_parts]),
                 np.concatenate([p[1] for p in unseen_parts]))
                if unseen_parts
                else (np.empty((0, data.dim)), np.empty(0))
            )
            n_seen_max = pool_seen[0].shape[0]
            n_unseen_max = pool_unseen[0].shape[0]
            cap = size
            if cap is None:
                caps = []
                if pi < 1.0:
                    caps.append(n_seen_max / (1.0 - pi))
                if pi > 0.0:
                    caps.append(n_unseen_max / pi)
                cap = int(np.floor(min(caps)))
            n_unseen = min(int(round(pi * cap)), n_unseen_max)
            n_seen = min(cap - n_unseen, n_seen_max)
            rng = np.random.default_rng([seed, 71, si, pi_i])
            parts_x, parts_y = [], []
            if n_seen > 0:
                take = rng.choice(n_seen_max, size=n_seen, replace=False)
                parts_x.append(pool_seen[0][take])
                parts_y.append(pool_seen[1][take])
            if n_unseen > 0:
                take = rng.choice(n_unseen_max, size=n_unseen, replace=False)
                parts_x.append(pool_unseen[0][take])
                parts_y.append(pool_unseen[1][take])
            if not parts_x:
                raise ValueError(f"empty test set for strength {s}, proportion {pi}")
            tests[(s, pi)] = (np.vstack(parts_x), np.concatenate(parts_y))
    return tests


def _fit_method(train, name, params, solver_cfg):
    method = params.get("method", name)
    if method == "zero":
        return np.zeros(train.dim)
    if method == "ols":
        return fit_baseline(train, "ols")
    if method == "anchor":
        return fit_baseline(train, "anchor", gamma=params.get("gamma", 1.0))
    if method == "drig":
        return fit_baseline(
            train, "drig", gamma=params.get("gamma", 1.0),
            dominance_tol=params.get("dominance_tol", 1e-2),
        )
    if method == "worst_case":
        fit = fit_worst_case_robust(
            train,
            m_test=params.get("m_test"),
            c_norm=params.get("c_norm", 1.0),
            gamma=params.get("gamma", 0.0),
            gamma_prime=params.get("gamma_prime", 0.0),
            rank_spec=params.get("rank", 1e-8),
            cfg=solver_cfg,
            c_ker=params.get("c_ker"),
            unseen_rank_spec=params.get("unseen_rank"),
            m_seen_mode=params.get("m_seen_mode", "pooled"),
        )
        return fit.beta
    raise ValueError(f"unknown method {method!r}")


def evaluate_methods(train, tests, methods, replication=0, seed=0, solver_cfg=None):
    """Fit every method on the training data and score it on every test set.

    ``methods`` maps a display name to a parameter dict whose ``method`` key
    (default: the name itself) selects among ols / anchor / drig / worst_case
    / zero. Returns one test-MSE row per (method, test set).
    """
    if not methods:
        raise ValueError("methods must be nonempty")
    betas = {
        name: _fit_method(train, name, params or {}, solver_cfg)
        for name, params in methods.items()
    }
    rows = []
    for (s, pi) in sorted(tests):
        x, y = tests[(s, pi)]
        for name in sorted(betas):
            err = y - x @ betas[name]
            rows.append(
                ResultRow(
                    name, "s", float(s), METRIC_MSE, float(err @ err / err.size),
                    replication, seed, strength_s=float(s), proportion_pi=float(pi),
                )
            )
    return rows


def run_ingest_eval(cfg):
    """Train on the reference plus a slice of one shifted environment, then
    evaluate on strength-filtered, proportion-mixed test sets."""
    if cfg.mode != "ingest-eval":
        raise ValueError("config mode must be 'ingest-eval'")
    data = ingest_multienv_csv(cfg.data_path, cfg.schema)
    seen_idx = data.label_index(cfg.seen_env)
    if seen_idx == data.reference_index:
        raise ValueError("seen_env cannot be the reference environment")

    seen_x, seen_y = data.environment(seen_idx)
    n_seen = seen_x.shape[0]
    train_n = min(cfg.train_size_seen, n_seen - 1)
    rng = np.random.default_rng([cfg.seed, 70])
    perm = rng.permutation(n_seen)
    train_rows, eval_rows = perm[:train_n], perm[train_n:]

    ref_x, ref_y = data.environment(data.reference_index)
    train = Dataset(
        (ref_x, seen_x[train_rows]),
        (ref_y, seen_y[train_rows]),
        0,
        (data.labels[data.reference_index], data.labels[seen_idx]),
    )
    eval_xs = list(data.xs)
    eval_ys = list(data.ys)
    eval_xs[seen_idx] = seen_x[eval_rows]
    eval_ys[seen_idx] = seen_y[eval_rows]
    eval_data = Dataset(tuple(eval_xs), tuple(eval_ys), data.reference_index, data.labels)

    tests = build_shifted_test_sets(
        eval_data,
        cfg.seen_env,
        cfg.strengths,
        cfg.proportions,
        cfg.seed,
        size=cfg.test_size,
        coordinate=cfg.coordinate,
        full_distance=cfg.full_distance,
    )
    methods = cfg.methods or {"ols": {}, "anchor": {"gamma": 50.0}}
    return evaluate_methods(
        train, tests, methods, replication=0, seed=cfg.seed,
        solver_cfg=cfg.solver_config(),
    )
