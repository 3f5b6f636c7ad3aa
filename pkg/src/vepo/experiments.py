"""Replication harness for the toy MDP: corruption scenarios, sweeps and CSV/JSON reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import (
    ESTIMATORS,
    SCENARIOS,
    corrupt_nuisances,
    estimate_all,
    make_folds,
    oracle_nuisances,
)
from .mdp import StochasticPolicy, TabularMDP, exact_eta1, exact_value, monte_carlo_value, simulate_dataset
from .optimize import MDPMeta, VepoConfig, vepo
from .toy import behavior_stationary_states, build_toy_mdp, kappa_policy, toy_behavior

REPORT_COLUMNS = ["replication", "iteration", "eta1_hat", "kl", "value_mc", "value_exact",
                  "scenario", "kappa", "delta", "N", "T", "seed"]
COMPARISON_COLUMNS = ["estimator", "scenario", "N", "T", "mean", "stderr", "bias_vs_oracle"]
_INT_COLS = {"replication", "iteration", "N", "T", "seed"}
_STR_COLS = {"scenario", "estimator"}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; expected one of {sorted(SCENARIOS)}")

    @property
    def corrupted(self) -> tuple:
        return SCENARIOS[self.name]


@dataclass(frozen=True)
class SweepSpec:
    scenarios: tuple = ("origin",)
    kappas: tuple = (0.5,)
    deltas: tuple = (0.1,)
    sizes: tuple = ((50, 50),)
    n_replications: int = 100
    base_seed: int = 0
    n_iters: int = 3

    def __post_init__(self):
        for name in ("scenarios", "kappas", "deltas", "sizes"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    columns: tuple = tuple(REPORT_COLUMNS)

    def extend(self, other: "ExperimentReport") -> None:
        self.rows.extend(other.rows)

    def select(self, **where) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]

    def values(self, column: str, **where) -> np.ndarray:
        return np.array([r[column] for r in self.select(**where)], dtype=float)

    def summary(self) -> list:
        """Mean and 1.96-stderr band of the exact and Monte Carlo values per setting and iteration."""
        keys = []
        for r in self.rows:
            k = (r["scenario"], r["kappa"], r["delta"], r["N"], r["T"], r["iteration"])
            if k not in keys:
                keys.append(k)
        out = []
        for k in keys:
            sel = dict(zip(("scenario", "kappa", "delta", "N", "T", "iteration"), k))
            entry = dict(sel)
            for col in ("value_exact", "value_mc"):
                v = self.values(col, **sel)
                m, se = mean_stderr(v)
                entry[col] = {"mean": m, "stderr": se, "lower": m - 1.96 * se, "upper": m + 1.96 * se}
            out.append(entry)
        return out


def mean_stderr(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _write_rows(path, columns, rows) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def _parse(col, text):
    if col in _INT_COLS:
        return int(text)
    if col in _STR_COLS:
        return text
    return float(text)


def _read_rows(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [{c: _parse(c, x) for c, x in zip(header, line)} for line in reader]
    return header, rows


def emit_report(report: ExperimentReport, path, summary_path=None) -> Path:
    """Write the CSV (fixed column order) and a JSON summary next to it (``.json`` suffix)."""
    path = Path(path)
    _write_rows(path, list(report.columns), report.rows)
    summary_path = path.with_suffix(".json") if summary_path is None else Path(summary_path)
    summary_path.write_text(json.dumps(report.summary(), indent=2))
    return path


def parse_report(path) -> ExperimentReport:
    header, rows = _read_rows(path)
    return ExperimentReport(rows, tuple(header))


# ---------------------------------------------------------------- toy runs

def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def scenario_provider(mdp: TabularMDP, behavior: StochasticPolicy, scenario: str, rep_seed: int):
    """Nuisance hook: exact nuisances for the current old policy, corrupted per scenario.

    The corruption seed depends only on (replication, fold), so a fold keeps
    the same noise draws across iterations.
    """

    def provide(fold, train, pi_old, iteration):
        return corrupt_nuisances(oracle_nuisances(mdp, pi_old, behavior), scenario, _seed(rep_seed, fold, 7))

    return provide


def run_toy_scenario(scenario: ScenarioSpec | str, kappa: float, delta: float, N: int, T: int, n_reps: int,
                     seed: int, n_iters: int = 3, L: int = 2, mc_rollouts: int = 1000,
                     mdp: TabularMDP | None = None) -> ExperimentReport:
    """Replicated VEPO runs from a kappa-policy with scenario-corrupted exact nuisances."""
    spec = scenario if isinstance(scenario, ScenarioSpec) else ScenarioSpec(scenario)
    mdp = build_toy_mdp() if mdp is None else mdp
    behavior = toy_behavior()
    start = behavior_stationary_states(mdp)
    meta = MDPMeta(mdp.gamma, mdp.reference_dist, mdp.n_states, mdp.n_actions)
    pi0 = kappa_policy(kappa)
    report = ExperimentReport()
    base = {"scenario": spec.name, "kappa": float(kappa), "delta": float(delta), "N": int(N), "T": int(T)}
    for rep in range(n_reps):
        rep_seed = seed + rep
        data = simulate_dataset(mdp, behavior, N, T, rep_seed, start_dist=start)
        cfg = VepoConfig(L=L, delta=delta, n_enhancement_iters=n_iters, seed=rep_seed)
        res = vepo(data, meta, lambda _: pi0, cfg, nuisance_provider=scenario_provider(mdp, behavior, spec.name,
                                                                                       rep_seed))
        trail = [(0, pi0, 0.0, 0.0)] + [(i.iteration, i.policy, i.eta1_hat, i.kl) for i in res.iterations]
        for it, pol, eta, kl in trail:
            v_mc, _ = monte_carlo_value(mdp, pol, mc_rollouts, _seed(rep_seed, it, 11))
            report.rows.append({"replication": rep, "iteration": it, "eta1_hat": eta, "kl": kl, "value_mc": v_mc,
                                "value_exact": exact_value(mdp, pol), **base, "seed": rep_seed})
    return report


def run_sweep(sweep: SweepSpec, mc_rollouts: int = 1000, L: int = 2) -> ExperimentReport:
    report = ExperimentReport()
    for sc in sweep.scenarios:
        for kappa in sweep.kappas:
            for delta in sweep.deltas:
                for n, t in sweep.sizes:
                    report.extend(run_toy_scenario(sc, kappa, delta, n, t, sweep.n_replications, sweep.base_seed,
                                                   sweep.n_iters, L, mc_rollouts))
    return report


# ---------------------------------------------------------------- estimator comparison

DEFAULT_TARGET = np.array([[1.0, 0.0], [1.0, 0.0]])  # always play action 0


@dataclass
class ComparisonReport:
    rows: list
    raw: dict  # (estimator, scenario, N, T) -> per-replication estimates
    oracle: float

    def row(self, estimator, scenario, N, T) -> dict:
        for r in self.rows:
            if (r["estimator"], r["scenario"], r["N"], r["T"]) == (estimator, scenario, N, T):
                return r
        raise KeyError((estimator, scenario, N, T))

    def to_csv(self, path) -> None:
        _write_rows(path, COMPARISON_COLUMNS, self.rows)

    @staticmethod
    def read_csv(path) -> list:
        return _read_rows(path)[1]


def run_estimator_comparison(sizes, scenarios, n_reps: int, seed: int, kappa_old: float = 0.8,
                             target: StochasticPolicy | None = None, L: int = 2,
                             mdp: TabularMDP | None = None) -> ComparisonReport:
    """Bias and spread of the four first-order estimators against the exact value difference.

    Nuisances are exact for the old policy and corrupted per scenario, fixed per
    (replication, fold). Data start from the behavior chain's stationary law.
    """
    mdp = build_toy_mdp() if mdp is None else mdp
    behavior = toy_behavior()
    start = behavior_stationary_states(mdp)
    pi_old = kappa_policy(kappa_old)
    target = StochasticPolicy(DEFAULT_TARGET) if target is None else target
    oracle = exact_eta1(mdp, target, pi_old)
    exact = oracle_nuisances(mdp, pi_old, behavior)
    rows, raw = [], {}
    for n, t in sizes:
        for sc in scenarios:
            vals = {k: [] for k in ESTIMATORS}
            for rep in range(n_reps):
                rep_seed = seed + rep
                data = simulate_dataset(mdp, behavior, n, t, rep_seed, start_dist=start)
                folds = make_folds(data, L, rep_seed)
                nuis = [corrupt_nuisances(exact, sc, _seed(rep_seed, f, 7)) for f in range(L)]
                for k, v in estimate_all(data, folds, nuis, target).items():
                    vals[k].append(v)
            for k, v in vals.items():
                m, se = mean_stderr(v)
                raw[(k, sc, n, t)] = np.array(v)
                rows.append({"estimator": k, "scenario": sc, "N": n, "T": t, "mean": m, "stderr": se,
                             "bias_vs_oracle": m - oracle})
    return ComparisonReport(rows, raw, oracle)
