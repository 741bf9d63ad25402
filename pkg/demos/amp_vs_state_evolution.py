"""Per-iteration AMP error against the state evolution prediction.

Draws one binary instance with a few thousand individuals, decodes it with
AMP, and lines up MSE_t with the scalar state evolution trajectory.

    python3 demos/amp_vs_state_evolution.py
"""

from hqpamp import AmpConfig, amp_decode, generate_instance, m_from_kappa, scalar_se


def main(n=4000, p=0.5, kappa=0.35, seed=1):
    inst = generate_instance(n, 2, 0.5, [p, 1 - p], m_from_kappa(kappa, n), seed=seed, composition="exact")
    res = amp_decode(inst, AmpConfig(track_mse=True, max_iter=15))
    se = scalar_se(p, kappa, max_iter=15)
    print(f"n = {n}, p = {p}, kappa = {kappa}")
    print(f"{'t':>3}  {'AMP':>9}  {'SE':>9}")
    for t, amp_mse in enumerate(res.report.per_iteration_mse):
        se_mse = se.mse[min(t, len(se.mse) - 1)]
        print(f"{t:3d}  {amp_mse:9.5f}  {se_mse:9.5f}")
    print(f"hard-decision error rate: {res.report.zero_one:.4f}")


if __name__ == "__main__":
    main()
