"""Monte Carlo experiment orchestration.

One delay pool is simulated per (traffic model, load) and reused across
trials through seeded resampling; the cascade simulation dominates
runtime and resampling preserves the marginal delay law, which is all
the i.i.d. observation model consumes. Per trial the harness draws
ground truth, synthesizes observations, runs the configured estimation
approaches, and aggregates error statistics per (approach, P).
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import fta_estimate, link_sample_mean, median_estimate
from .delaysim import (
    DelayEmpirics,
    TrafficScenario,
    order_statistic_moments,
    simulate_cascade,
    write_delays_csv,
)
from .em import initialize, run_em, write_em_trace_csv
from .errors import ConfigError
from .exchange import ATTACK_ABS_HI, ATTACK_ABS_LO, GroundTruth, synthesize
from .fusion import build_fusion_problem, fuse_estimate
from .gammamix import GammaMixture, moment_match_init

APPROACHES = ("em_minimax_1", "em_minimax_2", "fta", "genie", "median")

# Floors for degenerate delay pools (e.g. zero load): a point mass is
# replaced by a picosecond-scale exponential surrogate so the fusion
# integrals stay well defined.
_MEAN_FLOOR = 1e-12
_VAR_FLOOR = 1e-24


def surrogate_mixture(mean: float, variance: float, M: int,
                      jitter: float = 0.1) -> GammaMixture:
    """Moment-matched mixture with degeneracy floors."""
    return moment_match_init(
        max(mean, _MEAN_FLOOR), max(variance, _VAR_FLOOR), M, jitter
    )


@dataclass(frozen=True)
class QuadratureSpec:
    n_delta: int = 1201
    n_d: int = 601
    margin_sigmas: float = 6.0
    halfwidth_sigmas: float = 10.0

    def kwargs(self) -> dict:
        return {
            "n_delta": self.n_delta,
            "n_d": self.n_d,
            "margin_sigmas": self.margin_sigmas,
            "halfwidth_sigmas": self.halfwidth_sigmas,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    traffic: TrafficScenario
    traffic_model: str = "TM1"
    N: int = 3
    n_attacked: int = 1
    P_grid: tuple = (10, 25, 50)
    n_trials: int = 100
    seed: int = 0
    d_range: tuple = (50e-6, 150e-6)       # seconds
    delta_true: float | str = "draw"       # seconds, or "draw"
    mixture_orders: tuple = ((1,), (1,))   # per-link (M_i,), (L_i,)
    approaches: tuple = APPROACHES
    pool_size: int = 100_000
    osm_mc: int = 20_000
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    @property
    def load(self) -> float:
        return self.traffic.load_factor

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not (0 <= self.n_attacked < self.N / 2):
            raise ConfigError(
                f"n_attacked={self.n_attacked} with N={self.N} leaves no "
                "clean-link majority (need n_attacked < N/2)"
            )
        if len(self.P_grid) == 0:
            raise ConfigError("P_grid must be nonempty")
        if any(p < 1 for p in self.P_grid):
            raise ConfigError("every P must be >= 1")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        M, L = self.mixture_orders
        if len(M) != self.N or len(L) != self.N:
            raise ConfigError("mixture_orders must give M_i, L_i per link")
        bad = set(self.approaches) - set(APPROACHES)
        if bad:
            raise ConfigError(f"unknown approaches: {sorted(bad)}")
        if not (0 <= self.d_range[0] <= self.d_range[1]):
            raise ConfigError("d_range must satisfy 0 <= lo <= hi")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            traffic_doc = dict(doc.get("traffic", {}))
            model = str(doc.get("traffic_model", "TM1"))
            traffic_doc.setdefault("packet_mix", model)
            if "load" in doc:
                traffic_doc["load"] = doc["load"]
            scenario = TrafficScenario.from_dict(traffic_doc)
            n = int(doc.get("N", 3))
            orders = doc.get("mixture_orders", [1, 1])
            M, L = orders
            M = tuple([int(M)] * n) if np.isscalar(M) else tuple(int(x) for x in M)
            L = tuple([int(L)] * n) if np.isscalar(L) else tuple(int(x) for x in L)
            delta_true = doc.get("delta_true_us", "draw")
            if delta_true != "draw":
                delta_true = float(delta_true) * 1e-6
            d_range_us = doc.get("d_range_us", [50.0, 150.0])
            quad = QuadratureSpec(**doc.get("quadrature", {}))
            return cls(
                traffic=scenario,
                traffic_model=model,
                N=n,
                n_attacked=int(doc.get("n_attacked", 1)),
                P_grid=tuple(int(p) for p in doc.get("P_grid", [10, 25, 50])),
                n_trials=int(doc.get("n_trials", 100)),
                seed=int(doc.get("seed", 0)),
                d_range=(d_range_us[0] * 1e-6, d_range_us[1] * 1e-6),
                delta_true=delta_true,
                mixture_orders=(M, L),
                approaches=tuple(doc.get("approaches", APPROACHES)),
                pool_size=int(doc.get("pool_size", 100_000)),
                osm_mc=int(doc.get("osm_mc", 20_000)),
                quadrature=quad,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad experiment config: {exc}") from exc


@dataclass(frozen=True)
class ResultRow:
    approach: str
    P: int
    load: float
    traffic_model: str
    rmse_s: float
    std_s: float
    bias_s: float
    n_trials: int
    classification_accuracy: float


@dataclass
class ResultTable:
    rows: list
    failures: dict = field(default_factory=dict)


def _aggregate(approach, P, load, model, errors, class_hits) -> ResultRow:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        rmse = std = bias = np.nan
    else:
        bias = float(e.mean())
        std = float(np.sqrt(np.mean((e - bias) ** 2)))
        rmse = float(np.sqrt(np.mean(e**2)))
    acc = float(np.mean(class_hits)) if class_hits else np.nan
    return ResultRow(approach, P, load, model, rmse, std, bias, e.size, acc)


def _derived_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def run_experiment(cfg: ExperimentConfig, trace_dir=None) -> ResultTable:
    """Run every configured approach over the Monte Carlo grid.

    Deterministic given (config, seed): each trial derives its RNG
    stream from the seed, the P index, and the trial index. A trial on
    which an approach raises is counted as failed for that approach and
    excluded from its statistics.
    """
    M, L = cfg.mixture_orders
    pool = simulate_cascade(
        cfg.traffic, cfg.pool_size,
        seed=_derived_seed(cfg.seed, 1_000_003, 0),
    )
    priors = [(pool, pool)] * cfg.N
    ref_pairs = [
        (
            surrogate_mixture(pool.mean, pool.variance, M[i]),
            surrogate_mixture(pool.mean, pool.variance, L[i]),
        )
        for i in range(cfg.N)
    ]
    quad = cfg.quadrature.kwargs()
    rows = []
    failures = {}
    trace_counter = 0
    for p_idx, P in enumerate(cfg.P_grid):
        osm = order_statistic_moments(
            pool, pool, P, cfg.osm_mc,
            seed=_derived_seed(cfg.seed, 1_000_033, p_idx),
        )
        osm_all = [osm] * cfg.N
        errors = {a: [] for a in cfg.approaches}
        hits = {a: [] for a in cfg.approaches}
        for t in range(cfg.n_trials):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.seed, spawn_key=(p_idx, t))
            )
            truth, obs = _draw_trial(cfg, pool, rng, P)
            for approach in cfg.approaches:
                try:
                    delta_hat, hit, trace = _run_approach(
                        approach, cfg, obs, truth, priors, osm_all,
                        ref_pairs, quad,
                    )
                except Exception:
                    failures[(approach, P)] = failures.get((approach, P), 0) + 1
                    continue
                errors[approach].append(delta_hat - truth.delta)
                if hit is not None:
                    hits[approach].append(hit)
                if trace is not None and trace_dir is not None:
                    write_em_trace_csv(
                        trace,
                        os.path.join(trace_dir, f"em_trace_{trace_counter}.csv"),
                    )
                    trace_counter += 1
        for approach in cfg.approaches:
            rows.append(
                _aggregate(
                    approach, P, cfg.load, cfg.traffic_model,
                    errors[approach], hits[approach],
                )
            )
            failures.setdefault((approach, P), 0)
    rows.sort(key=lambda r: (r.approach, r.P))
    return ResultTable(rows, failures)


def _draw_trial(cfg, pool, rng, P):
    if cfg.delta_true == "draw":
        delta = rng.uniform(-10e-6, 10e-6)
    else:
        delta = float(cfg.delta_true)
    d = rng.uniform(cfg.d_range[0], cfg.d_range[1], cfg.N)
    eta = np.zeros(cfg.N, dtype=int)
    tau = np.zeros(cfg.N)
    if cfg.n_attacked:
        idx = rng.choice(cfg.N, size=cfg.n_attacked, replace=False)
        eta[idx] = 1
        mag = rng.uniform(ATTACK_ABS_LO, ATTACK_ABS_HI, size=cfg.n_attacked)
        tau[idx] = mag * rng.choice((-1.0, 1.0), size=cfg.n_attacked)
    truth = GroundTruth(delta, d, tau, eta)
    w1 = rng.choice(pool.samples, size=(cfg.N, P))
    w2 = rng.choice(pool.samples, size=(cfg.N, P))
    return truth, synthesize(truth, w1, w2)


def _fuse_links(obs, links, mixture_pairs, quad, delta_center=None):
    prob = build_fusion_problem(
        obs,
        links,
        [mixture_pairs[i][0] for i in links],
        [mixture_pairs[i][1] for i in links],
        delta_center=delta_center,
        **quad,
    )
    return fuse_estimate(prob)


def _run_approach(approach, cfg, obs, truth, priors, osm_all, ref_pairs, quad):
    """Returns (delta_hat, classification_hit_or_None, em_trace_or_None)."""
    M, L = cfg.mixture_orders
    if approach == "genie":
        clean = np.flatnonzero(truth.eta == 0)
        return _fuse_links(obs, clean, ref_pairs, quad), None, None
    if approach in ("em_minimax_1", "em_minimax_2"):
        known_pdfs = approach == "em_minimax_1"
        theta0 = initialize(
            obs, priors, osm_all, list(M), list(L),
            mixtures=ref_pairs,
        )
        res = run_em(obs, theta0, freeze_mixtures=known_pdfs)
        clean = np.flatnonzero(~res.attacked)
        if known_pdfs:
            pairs = ref_pairs
        else:
            pairs = [
                (res.theta.fwd_mixture(i), res.theta.rev_mixture(i))
                for i in range(cfg.N)
            ]
        delta_hat = _fuse_links(
            obs, clean, pairs, quad, delta_center=res.theta.psi.delta
        )
        hit = bool(np.array_equal(res.attacked.astype(int), truth.eta))
        return delta_hat, hit, res.trace
    offsets = [
        link_sample_mean(obs.u[i], obs.v[i],
                         priors[i][0].mean, priors[i][1].mean)
        for i in range(cfg.N)
    ]
    if approach == "median":
        return median_estimate(offsets), None, None
    if approach == "fta":
        return fta_estimate(offsets, cfg.n_attacked), None, None
    raise ConfigError(f"unknown approach {approach!r}")


_CSV_COLUMNS = (
    "approach", "P", "load", "traffic_model", "rmse_s", "std_s", "bias_s",
    "n_trials", "classification_accuracy",
)


def emit_table(rt: ResultTable, path) -> None:
    """Write the result rows as CSV (approach asc, P asc)."""
    rows = sorted(rt.rows, key=lambda r: (r.approach, r.P))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_COLUMNS)
        for r in rows:
            w.writerow([
                r.approach, r.P, repr(r.load), r.traffic_model,
                repr(r.rmse_s), repr(r.std_s), repr(r.bias_s),
                r.n_trials, repr(r.classification_accuracy),
            ])


def read_table(path) -> ResultTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != _CSV_COLUMNS:
        raise ConfigError(f"{path}: unexpected result header")
    out = []
    for r in rows[1:]:
        out.append(
            ResultRow(
                r[0], int(r[1]), float(r[2]), r[3], float(r[4]),
                float(r[5]), float(r[6]), int(r[7]), float(r[8]),
            )
        )
    return ResultTable(out)


def classify_once(cfg: ExperimentConfig, P: int | None = None):
    """Synthesize one trial and run the full EM classification on it."""
    P = P or cfg.P_grid[0]
    M, L = cfg.mixture_orders
    pool = simulate_cascade(
        cfg.traffic, cfg.pool_size,
        seed=_derived_seed(cfg.seed, 1_000_003, 0),
    )
    osm = order_statistic_moments(
        pool, pool, P, cfg.osm_mc, seed=_derived_seed(cfg.seed, 1_000_033, 0)
    )
    ref_pairs = [
        (
            surrogate_mixture(pool.mean, pool.variance, M[i]),
            surrogate_mixture(pool.mean, pool.variance, L[i]),
        )
        for i in range(cfg.N)
    ]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0, 0)))
    truth, obs = _draw_trial(cfg, pool, rng, P)
    theta0 = initialize(
        obs, [(pool, pool)] * cfg.N, [osm] * cfg.N, list(M), list(L),
        mixtures=ref_pairs,
    )
    res = run_em(obs, theta0)
    return truth, obs, res


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(doc)


def cache_delay_pool(cfg: ExperimentConfig, out_dir) -> str:
    """Write the experiment's delay pool as delays_<model>_<load>.csv."""
    pool = simulate_cascade(
        cfg.traffic, cfg.pool_size, seed=_derived_seed(cfg.seed, 1_000_003, 0)
    )
    name = f"delays_{cfg.traffic_model}_{cfg.load:g}.csv"
    path = os.path.join(out_dir, name)
    write_delays_csv(pool.samples, path)
    return path
