"""Edges of a matching start die out one by one as kappa grows.

With prior (0.4, 0.4, 0.1, 0.1) the pair (1, 2) carries more mass than the
pair (3, 4) and therefore survives up to a larger kappa.

    python3 demos/matching_thresholds.py
"""

from hqpamp.sweeps import matching_demo


def main():
    pi = (0.4, 0.4, 0.1, 0.1)
    doc = matching_demo(pi, [(0, 1), (2, 3)], [0.05, 0.15, 0.3, 0.5])
    for t in doc["thresholds"]:
        print(f"pair {t['pair']}: kappa* = {t['kappa_star']:.4f}")
    for run in doc["runs"]:
        status = "agrees" if run["agree"] else "DISAGREES"
        print(f"kappa = {run['kappa']:.2f}: surviving {run['surviving']} ({status} with thresholds)")


if __name__ == "__main__":
    main()
