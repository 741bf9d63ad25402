"""Thresholds for a uniform prior over d categories and their d / log d scaling.

The Monte Carlo budget is reduced so the script finishes in well under a
minute; the command-line ``threshold table`` uses the full budget.

    python3 demos/symmetric_thresholds.py
"""

import math

from hqpamp import kappa_sym


def main(samples=40_000):
    print(f"{'d':>3}  {'kappa_sym':>9}  {'std_err':>8}  {'kappa d/log d':>13}")
    for d in (2, 3, 4, 6, 8, 10):
        res = kappa_sym(d, n_samples=samples)
        ratio = res.kappa_star * d / math.log(d)
        print(f"{d:3d}  {res.kappa_star:9.4f}  {res.std_err:8.1e}  {ratio:13.3f}")


if __name__ == "__main__":
    main()
