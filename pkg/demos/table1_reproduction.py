"""Two-scale estimation of an IRF-0 power-law field, end to end.

1. Simulate anchored fields with generalized covariance
   ``K(h) = phi1 Gamma(-phi2) |h|^(2 phi2)`` on an ``n x n`` lattice.
2. Estimate ``(phi1, phi2)`` from the quadratic variations at steps 1 and 2.
3. Compare the Monte Carlo spread with the exact finite-lattice
   delta-method prediction (common interior, scaled by ``sqrt(M_int)``).

Run:  python3 demos/table1_reproduction.py [R]
"""
import sys

import numpy as np

from twoscale import (
    AnchoredSampler,
    PowerLawParams,
    mom_arrays,
    quadratic_variations,
    qv_arrays,
    mom_estimate,
    table1_theory,
)

R = int(sys.argv[1]) if len(sys.argv) > 1 else 200
SEED = 20240917

# --- one field, step by step --------------------------------------------------
p = PowerLawParams(1.0, 0.5)
x = AnchoredSampler(p, 40).sample(SEED, [0])[0]
qv = quadratic_variations(x, m=1, trim_mode="common")
est = mom_estimate(qv)
print(f"one field n=40: Q1={float(qv.q1):.4f}  Q2={float(qv.q2):.4f}  "
      f"phi2_hat={est.phi2_hat:.4f}  phi1_hat={est.phi1_hat:.4f}  (truth 0.5, 1.0)")

# --- Monte Carlo vs theory ----------------------------------------------------
print(f"\nR={R} replicates per cell; sqrt(M_int)-scaled SDs, empirical / theory")
print(f"{'n':>4} {'phi2':>5} {'mean phi2':>10} {'sd log phi1':>18} {'sd phi2':>18} {'corr':>16}")
for phi2 in (0.5, 0.8):
    for n in (30, 40):
        xs = AnchoredSampler(PowerLawParams(1.0, phi2), n).sample(SEED, range(R))
        q1, q2 = qv_arrays(xs, 1, "common")
        p2, lp1, ok = mom_arrays(q1, q2, 1)
        p2, lp1 = p2[ok], lp1[ok]
        s = np.sqrt((n - 2) ** 2)
        th = table1_theory(n, phi2)
        emp = (s * lp1.std(ddof=1), s * p2.std(ddof=1), np.corrcoef(lp1, p2)[0, 1])
        print(f"{n:>4} {phi2:>5.2f} {p2.mean():>10.4f} {emp[0]:>8.4f} / {th.sd_log_phi1:<7.4f}"
              f" {emp[1]:>8.4f} / {th.sd_phi2:<7.4f} {emp[2]:>6.3f} / {th.corr:<6.3f}")
