"""Replicated value-enhancement runs on the toy MDP over scenarios, kappas and deltas.

Writes one CSV row per (replication, iteration) plus a JSON summary with
1.96-stderr bands, and prints the summary.

    python3 scripts/run_toy_sweep.py --reps 100 --out toy_sweep.csv
"""
import argparse

from vepo.estimators import SCENARIOS
from vepo.experiments import SweepSpec, emit_report, run_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenarios", nargs="+", default=["origin", "mod1", "mod2", "mod3", "mod4"],
                   choices=list(SCENARIOS))
    p.add_argument("--kappas", nargs="+", type=float, default=[0.5, 0.8])
    p.add_argument("--deltas", nargs="+", type=float, default=[0.05, 0.1, 0.2])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--t", type=int, default=50)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--rollouts", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="toy_sweep.csv")
    args = p.parse_args()

    sweep = SweepSpec(tuple(args.scenarios), tuple(args.kappas), tuple(args.deltas), ((args.n, args.t),),
                      args.reps, args.seed, args.iters)
    report = run_sweep(sweep, mc_rollouts=args.rollouts)
    emit_report(report, args.out)
    for e in report.summary():
        v = e["value_exact"]
        print(f"{e['scenario']:>6} kappa={e['kappa']:.2f} delta={e['delta']:.2f} iter {e['iteration']}: "
              f"{v['mean']:.4f} [{v['lower']:.4f}, {v['upper']:.4f}]")


if __name__ == "__main__":
    main()
