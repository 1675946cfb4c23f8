"""Monte Carlo study: joint two-trial data generation, fixed-per-arm
subsampling, a deterministic replication engine, and bias/coverage metrics.

Covariates are equicorrelated standard normals (covariance .8*I + .2),
trial membership follows a logistic model in the first four covariates,
treatment is randomized within trial, and the binary outcome follows a
logistic model with a trial-by-covariate interaction.  Confounding is
dialed through the coefficient vectors; each replicate subsamples a fixed
number of patients per (trial, arm) cell, collapses the second trial to
aggregate summaries, and runs every estimator and SE strategy.

Replicate r of a study draws from an independent RNG stream keyed by
(seed, r), so serial and parallel execution produce identical output.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_model import (
    AgdArm,
    AgdStudy,
    IpdStudy,
    MomentSpec,
    OutcomeKind,
    TrialRecords,
    pooled_target_moments,
)
from .errors import InsufficientCell, MaicError
from .estimators import Method, Scale, bucher, maic_acb, maic_nab, stc
from .inference import negative_control_test, norm_quantile
from .variance import (
    SeStrategy,
    influence_components,
    sigma2_cs,
    sigma2_fo,
    sigma2_full,
    sigma2_po,
    sigma2_sw,
)
from .weighting import SolverConfig, solve_weights

BETA0 = -1.0
BETA2 = 0.1
BETA4 = 0.5
ALPHA0 = 0.0


class Confounding(enum.Enum):
    NONE = "none"
    MODERATE = "moderate"
    SEVERE = "severe"


# (trial-assignment slope, prognostic slope, interaction slope) on the
# first four covariates; zero elsewhere
_SCENARIO = {
    Confounding.NONE: (0.25, 0.0, 0.0),
    Confounding.MODERATE: (0.25, 0.15, 0.1),
    Confounding.SEVERE: (0.30, 0.25, 0.15),
}


def scenario_vectors(confounding: Confounding, p: int):
    a, b1, b3 = _SCENARIO[confounding]
    def vec(v):
        out = np.zeros(p)
        out[:4] = v
        return out
    return vec(a), vec(b1), vec(b3)


def _config_vectors(cfg: "ScenarioConfig"):
    a1, b1, b3 = scenario_vectors(cfg.confounding, cfg.p)
    if cfg.alpha_slope is not None:
        a1 = np.zeros(cfg.p)
        a1[:4] = cfg.alpha_slope
    return a1, b1, b3


@dataclass(frozen=True)
class ScenarioConfig:
    p: int = 5
    n_per_arm: int = 500
    confounding: Confounding = Confounding.MODERATE
    scale: Scale = Scale.LOGIT
    replicates: int = 2000
    seed: int = 0
    oversample_factor: int = 4
    # optional override of the trial-assignment slope (0.0 gives random
    # trial membership independent of X); None keeps the scenario value
    alpha_slope: float | None = None

    def __post_init__(self):
        if self.p < 4:
            raise ValueError("scenario places signal on the first 4 covariates; p >= 4")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "n_per_arm": self.n_per_arm,
            "confounding": self.confounding.value,
            "scale": self.scale.value,
            "replicates": self.replicates,
            "seed": self.seed,
            "oversample_factor": self.oversample_factor,
            "alpha_slope": self.alpha_slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            p=int(d.get("p", 5)),
            n_per_arm=int(d.get("n_per_arm", 500)),
            confounding=Confounding(d.get("confounding", "moderate")),
            scale=Scale(d.get("scale", "logit")),
            replicates=int(d.get("replicates", 2000)),
            seed=int(d.get("seed", 0)),
            oversample_factor=int(d.get("oversample_factor", 4)),
            alpha_slope=None if d.get("alpha_slope") is None else float(d["alpha_slope"]),
        )

    @classmethod
    def from_json_file(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PooledSample:
    """Unconstrained draw from the two-trial super-population."""

    y: np.ndarray
    z: np.ndarray
    t: np.ndarray
    x: np.ndarray


def _expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def generate_population(cfg: ScenarioConfig, n_star: int, rng: np.random.Generator) -> PooledSample:
    """Simulate n_star unconstrained observations from the scenario DGP."""
    p = cfg.p
    a1, b1, b3 = _config_vectors(cfg)
    # X = sqrt(.8) eps + sqrt(.2) u gives covariance .8*I + .2 exactly
    x = math.sqrt(0.8) * rng.standard_normal((n_star, p))
    x += math.sqrt(0.2) * rng.standard_normal((n_star, 1))
    t = np.where(rng.random(n_star) < _expit(ALPHA0 + x @ a1), 2, 1)
    z = np.where(rng.random(n_star) < 0.5, t, 0)
    lin = BETA0 + x @ b1 + (z > 0) * (x @ b3 + BETA2) + (z == 2) * BETA4
    y = (rng.random(n_star) < _expit(lin)).astype(float)
    return PooledSample(y=y, z=z, t=t, x=x)


_CELLS = ((1, 0), (1, 1), (2, 0), (2, 2))


def subsample_by_arm(
    pop: PooledSample, n_per_arm: int, rng: np.random.Generator
) -> PooledSample:
    """Uniform subsample of exactly n_per_arm patients per (trial, arm) cell."""
    keep = []
    for t, z in _CELLS:
        idx = np.nonzero((pop.t == t) & (pop.z == z))[0]
        if len(idx) < n_per_arm:
            raise InsufficientCell(
                f"cell (trial={t}, arm={z}) has {len(idx)} < {n_per_arm} members"
            )
        keep.append(rng.choice(idx, size=n_per_arm, replace=False))
    sel = np.sort(np.concatenate(keep))
    return PooledSample(y=pop.y[sel], z=pop.z[sel], t=pop.t[sel], x=pop.x[sel])


def true_delta(cfg: ScenarioConfig, n_oracle: int = 2_000_000, rng=None) -> float:
    """Oracle contrast in the aggregate-trial population, from counterfactual
    outcome probabilities on a large simulated draw."""
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 0xFFFFFFFF])
    p = cfg.p
    a1, b1, b3 = _config_vectors(cfg)
    x = math.sqrt(0.8) * rng.standard_normal((n_oracle, p))
    x += math.sqrt(0.2) * rng.standard_normal((n_oracle, 1))
    t2 = rng.random(n_oracle) < _expit(ALPHA0 + x @ a1)
    xt2 = x[t2]
    active = xt2 @ (b1 + b3) + BETA0 + BETA2
    m1 = float(_expit(active).mean())            # had they received the IPD treatment
    m2 = float(_expit(active + BETA4).mean())    # their own trial's treatment
    return cfg.scale.g(m1) - cfg.scale.g(m2)


@dataclass
class ReplicateResult:
    deltas: dict[str, float] = field(default_factory=dict)
    ses: dict[str, float] = field(default_factory=dict)
    negcontrol_reject: bool | None = None
    errors: dict[str, str] = field(default_factory=dict)
    ess_active: float | None = None


_SOLVER = SolverConfig()


def replicate_datasets(
    cfg: ScenarioConfig, replicate_index: int
) -> tuple[IpdStudy, AgdStudy, TrialRecords]:
    """Draw and subsample one replicate, collapsing trial 2 to aggregate
    summaries while retaining its raw records for benchmark variances.
    Deterministic given (cfg.seed, replicate_index)."""
    rng = np.random.default_rng([cfg.seed, replicate_index])
    factor = cfg.oversample_factor
    for _ in range(12):
        pop = generate_population(cfg, factor * 4 * cfg.n_per_arm, rng)
        try:
            sub = subsample_by_arm(pop, cfg.n_per_arm, rng)
            break
        except InsufficientCell:
            factor *= 2
    else:
        raise InsufficientCell("could not fill all cells after repeated oversampling")

    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    t1 = sub.t == 1
    ipd = IpdStudy(sub.y[t1], sub.z[t1], sub.x[t1], names, OutcomeKind.BINARY)
    t2 = sub.t == 2

    def make_arm(z: int) -> AgdArm:
        m = t2 & (sub.z == z)
        return AgdArm(
            n=int(m.sum()),
            y_mean=float(sub.y[m].mean()),
            y_var=float(sub.y[m].var(ddof=1)),
            x_mean=sub.x[m].mean(axis=0),
            x_var=sub.x[m].var(axis=0, ddof=1),
        )

    agd = AgdStudy(make_arm(2), make_arm(0), names)
    agd_records = TrialRecords(sub.y[t2], sub.z[t2], sub.x[t2])
    return ipd, agd, agd_records


def run_replicate(cfg: ScenarioConfig, replicate_index: int) -> ReplicateResult:
    """One replicate: draw, subsample, collapse trial 2 to summaries, and
    run all estimators and SE strategies.  Deterministic given
    (cfg.seed, replicate_index); failures are recorded, not raised."""
    ipd, agd, agd_records = replicate_datasets(cfg, replicate_index)
    res = ReplicateResult()
    target = pooled_target_moments(agd, MomentSpec.FIRST)
    try:
        model = solve_weights(ipd, target, MomentSpec.FIRST, _SOLVER)
    except MaicError as e:
        res.errors["weights"] = f"{type(e).__name__}: {e}"
        model = None

    runners = {
        Method.MAIC_NAB: lambda: maic_nab(ipd, agd, model, cfg.scale),
        Method.MAIC_ACB: lambda: maic_acb(ipd, agd, model, cfg.scale),
        Method.BUCHER: lambda: bucher(ipd, agd, cfg.scale),
        Method.STC: lambda: stc(ipd, agd, cfg.scale),
    }
    nab = None
    for method, run in runners.items():
        if model is None and method in (Method.MAIC_NAB, Method.MAIC_ACB):
            continue
        try:
            est = run()
        except MaicError as e:
            res.errors[method.value] = f"{type(e).__name__}: {e}"
            continue
        res.deltas[method.value] = est.delta
        if method is Method.MAIC_NAB:
            nab = est

    if nab is not None:
        res.ess_active = model.ess.get(1)
        try:
            pieces = influence_components(ipd, agd, model, nab, cfg.scale)
            for strategy, fn in ((SeStrategy.FO, sigma2_fo),
                                 (SeStrategy.PO, sigma2_po),
                                 (SeStrategy.CS, sigma2_cs)):
                res.ses[strategy.value] = fn(pieces).se
            res.ses[SeStrategy.SW.value] = sigma2_sw(ipd, agd, model, nab, cfg.scale).se
            res.ses[SeStrategy.FULL.value] = sigma2_full(
                ipd, agd, agd_records, model, nab, cfg.scale
            ).se
        except MaicError as e:
            res.errors["variance"] = f"{type(e).__name__}: {e}"
        try:
            res.negcontrol_reject = negative_control_test(
                ipd, agd, model, cfg.scale
            ).reject_at_level
        except MaicError as e:
            res.errors["negcontrol"] = f"{type(e).__name__}: {e}"
    return res


@dataclass
class SimulationReport:
    config: ScenarioConfig
    true_delta: float
    percent_bias: dict[str, float]
    bias_mc_se: dict[str, float]
    coverage: dict[str, float]
    coverage_mc_se: dict[str, float]
    relative_length: dict[str, float | None]
    mean_se: dict[str, float]
    empirical_sd: float | None
    negcontrol_rejection_rate: float | None
    n_used: dict[str, int]
    failure_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "true_delta": self.true_delta,
            "percent_bias": self.percent_bias,
            "bias_mc_se": self.bias_mc_se,
            "coverage": self.coverage,
            "coverage_mc_se": self.coverage_mc_se,
            "relative_length": self.relative_length,
            "mean_se": self.mean_se,
            "empirical_sd": self.empirical_sd,
            "negcontrol_rejection_rate": self.negcontrol_rejection_rate,
            "n_used": self.n_used,
            "failure_counts": self.failure_counts,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def tidy_rows(self) -> list[dict]:
        """One row per estimator/strategy and metric, for external plotting."""
        cfg = self.config.to_dict()
        rows = []
        def row(kind, name, metric, value, mc_se=""):
            rows.append({**cfg, "kind": kind, "name": name, "metric": metric,
                         "value": "" if value is None else value, "mc_se": mc_se})
        for m, v in self.percent_bias.items():
            row("estimator", m, "percent_bias", v, self.bias_mc_se.get(m, ""))
        for s, v in self.coverage.items():
            row("strategy", s, "coverage", v, self.coverage_mc_se.get(s, ""))
        for s, v in self.relative_length.items():
            row("strategy", s, "relative_length", v)
        for s, v in self.mean_se.items():
            row("strategy", s, "mean_se", v)
        row("study", "maic-nab", "empirical_sd", self.empirical_sd)
        row("study", "negcontrol", "rejection_rate", self.negcontrol_rejection_rate)
        return rows


def _replicate_task(args) -> ReplicateResult:
    cfg_dict, idx = args
    return run_replicate(ScenarioConfig.from_dict(cfg_dict), idx)


def run_study(cfg: ScenarioConfig, threads: int = 1, n_oracle: int = 2_000_000) -> SimulationReport:
    """Run all replicates and aggregate bias, coverage, and length metrics.

    Replicates with estimator failures are excluded from the affected cell
    averages and tallied in failure_counts.  Output is a pure function of
    cfg regardless of thread count.
    """
    delta = true_delta(cfg, n_oracle=n_oracle)
    indices = range(cfg.replicates)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                _replicate_task, ((cfg.to_dict(), i) for i in indices), chunksize=16,
            ))
    else:
        results = [run_replicate(cfg, i) for i in indices]

    methods = [m.value for m in (Method.MAIC_NAB, Method.MAIC_ACB, Method.BUCHER, Method.STC)]
    strategies = [s.value for s in SeStrategy]

    percent_bias, bias_mc_se, n_used, failures = {}, {}, {}, {}
    for m in methods:
        vals = np.array([r.deltas[m] for r in results if m in r.deltas])
        n_used[m] = len(vals)
        failures[m] = cfg.replicates - len(vals)
        if len(vals):
            rel = (vals - delta) / delta * 100.0
            percent_bias[m] = float(rel.mean())
            bias_mc_se[m] = float(rel.std(ddof=1) / np.sqrt(len(rel))) if len(rel) > 1 else None
        else:
            percent_bias[m] = None
            bias_mc_se[m] = None

    nab = Method.MAIC_NAB.value
    nab_deltas = np.array([r.deltas[nab] for r in results if nab in r.deltas])
    emp_sd = float(nab_deltas.std(ddof=1)) if len(nab_deltas) > 1 else None

    zcrit = norm_quantile(0.975)
    coverage, cov_mc_se, rel_length, mean_se = {}, {}, {}, {}
    for s in strategies:
        pairs = [
            (r.deltas[nab], r.ses[s])
            for r in results
            if nab in r.deltas and s in r.ses
        ]
        if not pairs:
            coverage[s] = cov_mc_se[s] = rel_length[s] = mean_se[s] = None
            continue
        d = np.array([p[0] for p in pairs])
        se = np.array([p[1] for p in pairs])
        cov = float(np.mean(np.abs(d - delta) <= zcrit * se))
        coverage[s] = cov
        cov_mc_se[s] = float(np.sqrt(cov * (1 - cov) / len(d)))
        mean_se[s] = float(se.mean())
        rel_length[s] = float(se.mean() / emp_sd) if emp_sd else None

    rejects = [r.negcontrol_reject for r in results if r.negcontrol_reject is not None]
    reject_rate = float(np.mean(rejects)) if rejects else None

    return SimulationReport(
        config=cfg,
        true_delta=delta,
        percent_bias=percent_bias,
        bias_mc_se=bias_mc_se,
        coverage=coverage,
        coverage_mc_se=cov_mc_se,
        relative_length=rel_length,
        mean_se=mean_se,
        empirical_sd=emp_sd,
        negcontrol_rejection_rate=reject_rate,
        n_used=n_used,
        failure_counts=failures,
    )
