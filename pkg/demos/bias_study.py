"""Why the compliance-predictive covariate belongs in the model.

When the same covariate predicts both who complies and how the outcome
turns out, a model that ignores it confuses the two channels: the apparent
effect among compliers absorbs the covariate's outcome effect.  This demo
runs a miniature replication study under a null effect (true complier
effect = 0) and compares the covariate-aware model "A" with the
covariate-blind model "B" as the covariate/outcome correlation grows.

It finishes with a small-sample sanity check of the sampler itself: on a
six-patient trial the posterior is computable exactly by enumerating every
stratum labeling, and the Gibbs estimates must agree.

Run:  python demos/bias_study.py   (about a minute)
"""

import numpy as np

from cacegibbs.data import Dataset, PatientRecord
from cacegibbs.diagnostics import complier_probability_estimates
from cacegibbs.engine import ModelConfig, resolve_outcome_priors, run_model
from cacegibbs.simulation import (
    DgpConfig,
    McConfig,
    brute_force_posterior,
    run_monte_carlo,
)


def main():
    mc = McConfig(
        reps=5,
        corr_grid=(0.0, 0.3, 0.6),
        variants=("A", "B"),
        dgp=DgpConfig(n=200, true_cace=0.0),
        fit=ModelConfig(variant="A", burn_in=400, kept=800, thin=2,
                        n_chains=2),
        master_seed=17,
    )
    print(f"replication study: {mc.reps} trials per cell, n={mc.dgp.n}, "
          f"true complier effect 0")
    result = run_monte_carlo(mc)

    print("\n  corr(x,y)  model  mean estimate  mean 95% interval")
    for cell in result.cells:
        print(f"  {cell.corr_xy:8.1f}   {cell.variant:>3s}   "
              f"{cell.mean_cace:12.2f}   [{cell.lo:6.2f}, {cell.hi:6.2f}]")
    blind = {c.corr_xy: abs(c.mean_cace)
             for c in result.cells if c.variant == "B"}
    print(f"\nthe covariate-blind bias grows with the correlation: "
          + " -> ".join(f"{blind[c]:.2f}" for c in mc.corr_grid))

    # Exact check: six patients, few enough to enumerate all stratum
    # labelings and integrate the remaining parameters in closed form.
    rows = (("p0", 0, 0, 40.0, 10.0), ("p1", 0, 0, 46.0, 16.0),
            ("p2", 0, 1, 44.0, 14.0), ("p3", 1, 1, 41.0, 11.0),
            ("p4", 1, 1, 47.0, 18.0), ("p5", 1, 0, 42.0, 13.0))
    tiny = Dataset([PatientRecord(*row) for row in rows])
    config = ModelConfig(variant="D", seed=29)
    exact = brute_force_posterior(
        tiny,
        resolve_outcome_priors(tiny, config.priors),
        dirichlet_concentration=config.priors.dirichlet_concentration,
    )
    fit = run_model(tiny, config)
    estimate = complier_probability_estimates(fit, tiny)
    print("\nsix-patient exact check (complier probability per patient):")
    print("  exact:", np.array2string(exact.complier_prob, precision=3))
    print("  gibbs:", np.array2string(estimate, precision=3))
    print(f"  largest gap: {np.abs(estimate - exact.complier_prob).max():.4f}")


if __name__ == "__main__":
    main()
