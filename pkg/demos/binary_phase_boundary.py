"""Binary histogram query: where does exact recovery start?

Prints the threshold kappa*(p) for a few priors, then shows the scalar
state evolution fixed point just below and just above the threshold.

    python3 demos/binary_phase_boundary.py
"""

from hqpamp import kappa_binary, scalar_se


def main():
    print(f"{'p':>5}  {'kappa*':>8}  {'x*':>6}")
    for p in (0.1, 0.2, 0.3, 0.4, 0.5):
        res = kappa_binary(p)
        print(f"{p:5.2f}  {res.kappa_star:8.5f}  {res.x_star:6.3f}")

    p = 0.3
    k_star = kappa_binary(p).kappa_star
    print(f"\np = {p}: state evolution from the non-informative start")
    for kappa in (0.8 * k_star, 0.95 * k_star, 1.05 * k_star, 1.2 * k_star):
        res = scalar_se(p, kappa)
        side = "below" if kappa < k_star else "above"
        print(f"  kappa = {kappa:.4f} ({side})  limiting MSE = {res.mse_limit:.3e}  steps = {len(res.trajectory) - 1}")


if __name__ == "__main__":
    main()
