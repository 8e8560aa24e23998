"""A tour of the robustness results.

* Deleting ``k`` sites perturbs the quadratic-form matrix by ``O(k/N)``,
  and the row-removal part has rank at most ``4 k (m+1)^2``.
* Bernoulli thinning with retention ``1 - N^-a`` barely moves ``phi2_hat``.
* Under a Matérn truth the moment estimator targets the smoothness ``nu``
  and ``n^(2 phi2_hat) phi1_hat`` targets the tangent scale.

Run:  python3 demos/robustness_tour.py
"""
from twoscale import (
    MaternParams,
    MisspecConfig,
    PowerLawParams,
    SiteMask,
    ThinningConfig,
    deletion_scaling,
    misspecification_experiment,
    thinning_experiment,
    verify_deletion_bounds,
)

SEED = 7

print("deletions (m=1)")
v = verify_deletion_bounds(16, 1, SiteMask.single_site(16, 8, 8))
print(f"  one interior site: rows removed {v['rows_removed']}, rank {v['rank_rows']}, "
      f"||dA||_2={v['norm2']:.2e}, ||dA||_F={v['normF']:.2e}")
res = deletion_scaling((16, 24), 1, (1, 4, 8), seed=SEED, n_masks=5)
for row in res["rows"]:
    print(f"  n={row['n']:>2} k={row['k']}: ||dA||_F = {row['normF']:.2e} = {row['C_F']:.2f} * k/N, "
          f"max rank {row['max_rank_rows']} <= {4 * row['k'] * 4}")

print("\nBernoulli thinning (phi2=0.5, a=0.75)")
th = thinning_experiment(ThinningConfig(ns=(24, 40), phi=PowerLawParams(1.0, 0.5), R=100, seed=SEED))
for n, c in th.items():
    print(f"  n={n}: retention {c['p']:.4f}, mean deleted {c['mean_k']:.1f}, "
          f"mean|d phi2| {c['mean_abs_dphi2']:.4f} vs sd(phi2_hat) {c['sd_phi2']:.4f}")

print("\nMatérn truth (nu=0.5, rho=1) on the unit square")
mis = misspecification_experiment(MisspecConfig(ns=(30, 60), q=MaternParams(1.0, 0.5, 1.0), R=100,
                                                seed=SEED, grid=41))
print(f"  tangent scale kappa_nu = {mis['kappa_nu']:.4f}; spectral domination "
      f"{'holds' if mis['domination'].all_pass else 'FAILS'} (max ratio {mis['domination'].max_ratio:.3f})")
for n, c in mis["cells"].items():
    print(f"  n={n}: mean phi2_hat {c['mean_phi2']:.4f} (se {c['se_phi2']:.4f}), "
          f"mean n^(2 phi2_hat) phi1_hat {c['mean_scaled_phi1']:.4f}")
