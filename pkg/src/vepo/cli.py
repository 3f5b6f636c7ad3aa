"""Command-line entry point: ``vepo <command> [flags]``.

Exit status is 0 on success, 2 for bad configuration or input, 3 when a
numerical routine fails.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .estimators import SCENARIOS
from .experiments import emit_report, run_estimator_comparison, run_toy_scenario
from .mdp import (
    Dataset,
    StochasticPolicy,
    exact_q,
    exact_ratio,
    exact_stationary,
    exact_value,
    exact_visitation,
    load_mdp,
    load_policy,
    monte_carlo_value,
    save_policy,
    simulate_dataset,
)
from .optimize import MDPMeta, VepoConfig, vepo
from .q_estimation import fqi
from .toy import build_toy_mdp, kappa_policy, toy_behavior

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _mdp(args):
    return load_mdp(args.config) if args.config else build_toy_mdp()


def _policy(args, mdp, default=None) -> StochasticPolicy:
    if getattr(args, "policy", None):
        return load_policy(args.policy)
    if getattr(args, "kappa", None) is not None:
        return kappa_policy(args.kappa)
    if default is not None:
        return default
    raise ValueError("give a policy with --policy PATH or --kappa K")


def _behavior(args, mdp) -> StochasticPolicy:
    if getattr(args, "behavior", None):
        return load_policy(args.behavior)
    if not args.config:
        return toy_behavior()
    return StochasticPolicy.uniform(mdp.n_states, mdp.n_actions)


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text)
    else:
        print(text)


def cmd_simulate(args) -> None:
    mdp = _mdp(args)
    data = simulate_dataset(mdp, _behavior(args, mdp), args.n, args.t, args.seed)
    if args.out:
        data.to_csv(args.out)
    else:
        print(f"{len(data)} transitions from {data.n_traj} trajectories (use --out to save)")


def cmd_oracle(args) -> None:
    mdp = _mdp(args)
    pi = _policy(args, mdp)
    behavior = _behavior(args, mdp)
    vis = exact_visitation(mdp, pi)
    ratio = exact_ratio(mdp, pi, behavior)
    q = exact_q(mdp, pi)
    _emit_json({
        "value": exact_value(mdp, pi),
        "v": np.sum(pi.probs * q, axis=1).tolist(),
        "q": q.tolist(),
        "d_conditional": vis.conditional.tolist(),
        "d_integrated": vis.integrated.tolist(),
        "p_inf": exact_stationary(mdp, behavior).tolist(),
        "omega": ratio.conditional.tolist(),
        "omega_nu": ratio.integrated.tolist(),
    }, args.out)


def cmd_enhance(args) -> None:
    mdp = _mdp(args)
    data = Dataset.from_csv(args.data, mdp.n_states, mdp.n_actions)
    meta = MDPMeta(mdp.gamma, mdp.reference_dist, mdp.n_states, mdp.n_actions)
    if args.policy or args.kappa is not None:
        fixed = _policy(args, mdp)
        provider = lambda _: fixed  # noqa: E731
    else:
        provider = lambda train: fqi(train, mdp.gamma)[1]  # noqa: E731
    cfg = VepoConfig(L=args.folds, delta=args.delta, n_enhancement_iters=args.iters, seed=args.seed)
    res = vepo(data, meta, provider, cfg)
    for info in res.iterations:
        print(f"iteration {info.iteration}: eta1_hat={info.eta1_hat:.6g} kl={info.kl:.6g} lambda={info.lam:.6g}")
    if args.out:
        save_policy(res.policy, args.out)
    else:
        print(json.dumps({"probs": res.policy.probs.tolist()}))


def cmd_toy(args) -> None:
    scenarios = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    kappa = 0.5 if args.kappa is None else args.kappa
    report = None
    for sc in scenarios:
        r = run_toy_scenario(sc, kappa, args.delta, args.n, args.t, args.reps, args.seed, n_iters=args.iters,
                             L=args.folds, mc_rollouts=args.rollouts, mdp=_mdp(args))
        report = r if report is None else (report.extend(r) or report)
    out = args.out or "toy_report.csv"
    emit_report(report, out)
    for entry in report.summary():
        v = entry["value_exact"]
        print(f"{entry['scenario']:>6} iter {entry['iteration']}: value {v['mean']:.4f} "
              f"[{v['lower']:.4f}, {v['upper']:.4f}]")
    print(f"wrote {out} and {Path(out).with_suffix('.json')}")


def cmd_compare(args) -> None:
    scenarios = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    rep = run_estimator_comparison([(args.n, args.t)], scenarios, args.reps, args.seed,
                                   kappa_old=0.8 if args.kappa is None else args.kappa, mdp=_mdp(args))
    out = args.out or "estimators.csv"
    rep.to_csv(out)
    print(f"oracle eta1 = {rep.oracle:.6f}")
    for r in rep.rows:
        print(f"{r['scenario']:>6} {r['estimator']:>13}: bias {r['bias_vs_oracle']:+.5f} (stderr {r['stderr']:.5f})")
    print(f"wrote {out}")


def cmd_evaluate(args) -> None:
    mdp = _mdp(args)
    pi = _policy(args, mdp)
    mean, se = monte_carlo_value(mdp, pi, args.reps, args.seed)
    _emit_json({"value_mc": mean, "stderr": se, "value_exact": exact_value(mdp, pi)}, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vepo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, **defaults):
        sp.add_argument("--config", help="MDP config (JSON); defaults to the built-in toy MDP")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output path")
        return sp

    s = common(sub.add_parser("simulate", help="simulate an offline dataset to CSV"))
    s.add_argument("--behavior", help="behavior policy JSON")
    s.add_argument("--n", type=int, default=50, help="number of trajectories")
    s.add_argument("--t", type=int, default=50, help="trajectory length")
    s.set_defaults(func=cmd_simulate)

    s = common(sub.add_parser("oracle", help="print exact V, Q, visitation and ratio"))
    s.add_argument("--policy")
    s.add_argument("--kappa", type=float)
    s.add_argument("--behavior")
    s.set_defaults(func=cmd_oracle)

    s = common(sub.add_parser("enhance", help="run value enhancement on a dataset CSV"))
    s.add_argument("--data", required=True)
    s.add_argument("--policy", help="initial policy JSON (default: fitted-Q iteration)")
    s.add_argument("--kappa", type=float, help="use a kappa policy as the initial policy")
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--folds", type=int, default=2)
    s.set_defaults(func=cmd_enhance)

    s = common(sub.add_parser("toy", help="replicated toy-MDP scenario runs"))
    s.add_argument("--scenario", default="origin", choices=list(SCENARIOS) + ["all"])
    s.add_argument("--kappa", type=float)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--t", type=int, default=50)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--folds", type=int, default=2)
    s.add_argument("--rollouts", type=int, default=1000, help="Monte Carlo rollouts per policy")
    s.set_defaults(func=cmd_toy)

    s = common(sub.add_parser("compare-estimators", help="bias/stderr of the four estimators"))
    s.add_argument("--scenario", default="all", choices=list(SCENARIOS) + ["all"])
    s.add_argument("--kappa", type=float, help="old kappa policy (default 0.8)")
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--t", type=int, default=50)
    s.add_argument("--reps", type=int, default=200)
    s.set_defaults(func=cmd_compare)

    s = common(sub.add_parser("evaluate", help="Monte Carlo value of a policy"))
    s.add_argument("--policy")
    s.add_argument("--kappa", type=float)
    s.add_argument("--reps", type=int, default=10_000, help="number of rollouts")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        args.func(args)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
