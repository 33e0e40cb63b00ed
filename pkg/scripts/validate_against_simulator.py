#!/usr/bin/env python3
"""Cross-validate the closed forms against the discrete-event simulator.

Runs the waiting-time validation profiles (including the hand-computable
two-class point) and then simulates the optimal mechanism's equilibrium at
the evaluation defaults, comparing measured welfare and per-type payoffs
against the analytic values.
"""
import argparse
import time

from fwt.checks import lemma1_profiles
from fwt.mechanism import induced_outcome, optimal_mechanism, social_welfare
from fwt.model import SystemParams
from fwt.sim import SimConfig, run, validate_lemma1


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replications", type=int, default=10)
    parser.add_argument("--horizon", type=float, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    failures = 0
    for i, (label, params, menu, profile) in enumerate(lemma1_profiles()):
        t0 = time.perf_counter()
        results = validate_lemma1(params, menu, profile,
                                  replications=args.replications,
                                  horizon=args.horizon, seed=args.seed + i)
        dt = time.perf_counter() - t0
        for r in results:
            mark = "ok " if r.passed else "FAIL"
            failures += 0 if r.passed else 1
            print(f"{mark} {label} [{r.user_type}] analytic={r.analytic:.6g} "
                  f"measured={r.measured:.6g} ci=+/-{r.ci_half:.2g} ({dt:.0f}s)")

    params = SystemParams()
    mech = optimal_mechanism(params)
    out = induced_outcome(mech, params)
    analytic = social_welfare(out, mech.menu, mech.tax, params)
    cfg = SimConfig(params=params, menu=mech.menu, tax=mech.tax,
                    profile=out.profile, seed=args.seed,
                    horizon=args.horizon or 1e5 / params.block_rate,
                    replications=args.replications)
    report = run(cfg)
    print(f"welfare: analytic={analytic.total:.6g} "
          f"simulated={report.welfare_mean:.6g} +/- {report.welfare_ci:.2g}")
    print(f"payoff H: analytic={out.payoff_high:.6g} "
          f"simulated={report.type_payoff_mean['H']:.6g}")
    print(f"payoff L: analytic={out.payoff_low:.6g} "
          f"simulated={report.type_payoff_mean['L']:.6g}")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
