"""How close a transported ensemble stays to |psi|^2, against pure sampling noise.

The binned L1 distance of N exact samples from a 40x40 histogram does not
vanish: it is set by multinomial noise.  This script prints the transported
score next to that floor for several N.

Run ``python3 demos/equivariance_noise.py``.
"""

import numpy as np

from weaktraj import OscillatorParams, make_superposition
from weaktraj.config import scenario
from weaktraj.flow import equivariance_check


def main():
    static = make_superposition(OscillatorParams(), [0, 0], [[1.0, 0.0]], weights=[1.0],
                                alpha0=np.sqrt(2), t1=1.0)
    fig1 = scenario("fig1_two_branch").superposition()
    print(f"{'state':>10} {'N':>6} {'L1':>8} {'noise':>8}")
    for name, state, t1 in (("static", static, 1.0), ("two-branch", fig1, 0.3)):
        for N in (500, 2000, 8000):
            res = equivariance_check(state, N, 0.0, t1, seed=2024, threads=4)
            print(f"{name:>10} {N:>6} {res.score:8.3f} {res.baseline:8.3f}")


if __name__ == "__main__":
    main()
