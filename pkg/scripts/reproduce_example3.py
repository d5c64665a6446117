"""High-gain versus unit-gain network designs for the unstable first-order plant.

Prints the step-response metrics and the required data rates for both
designs, then the step responses themselves.
"""

import argparse
import time

import numpy as np

from mcn_codesign.fixtures import example3_problem
from mcn_codesign.optimize import codesign, design_loop
from mcn_codesign.synthesis import step_response


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=8)
    args = ap.parse_args()
    np.set_printoptions(precision=6, suppress=True)
    for case in (1, 2):
        p = example3_problem(case)
        t0 = time.perf_counter()
        sol = codesign(p)
        dt = time.perf_counter() - t0
        ev = sol.evaluation
        m = ev.metrics
        rates = ev.rates_R.rates
        top = max(rates, key=rates.get)
        print(f"case {case}: gamma = {sol.recovery.gamma_R}")
        print(f"  c = {np.array(ev.controller.c)}  d = {np.array(ev.controller.d)}")
        print(f"  L2 = {m.l2:.6f}  O_y = {m.overshoot_y:.6f}  O_u = {m.overshoot_u:.6f}  l = {m.response_time}")
        print(f"  max rate {rates[top]:.0f} Hz at {top}  ({dt * 1e3:.1f} ms)")
        dl = design_loop(p, sol.recovery.d, ev.controller.c, sol.recovery.weights_R, None)
        tr = step_response(dl.loop, p.amplitude, args.horizon, p.reference_lead)
        print(f"  y = {tr.y}")
        print(f"  u = {tr.u}")


if __name__ == "__main__":
    main()
