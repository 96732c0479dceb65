//! Failure-probability estimation through the surrogate and the convergence
//! bookkeeping built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::gp::GpModel;
use crate::normal;
use crate::sampling::{normal_chunk, normal_chunks};

/// Surrogate-based Monte Carlo estimate of the failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityEstimate {
    /// `failures / n_mcs`, exactly.
    pub p_f_hat: f64,
    pub beta_hat: f64,
    /// Set when `p_f_hat` was 0 or 1 and had to be clamped before inversion.
    pub beta_clamped: bool,
    pub failures: u64,
    pub n_mcs: usize,
    pub seed: u64,
}

impl ReliabilityEstimate {
    /// Binomial standard error `sqrt(p (1 - p) / n)` of the estimate.
    pub fn std_error(&self) -> f64 {
        binomial_se(self.p_f_hat, self.n_mcs)
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Fraction of `n_mcs` standard-normal points whose predictive mean is `<= 0`.
///
/// Points are generated and classified chunk by chunk, so memory stays bounded
/// and the count does not depend on the number of threads.
pub fn estimate_pf(model: &GpModel, n_mcs: usize, seed: u64) -> Result<ReliabilityEstimate> {
    if n_mcs == 0 {
        return arg_err("n_mcs must be positive");
    }
    let m = model.dim();
    let failures: u64 = normal_chunks(n_mcs)
        .into_par_iter()
        .map(|chunk| {
            let points = normal_chunk(seed, chunk, m);
            let mut mu = vec![0.0; chunk.len];
            model.predict_mean_into(&points, &mut mu);
            mu.iter().filter(|&&v| v <= 0.0).count() as u64
        })
        .sum();
    let p_f_hat = failures as f64 / n_mcs as f64;
    let (beta_hat, beta_clamped) = beta_from_pf(p_f_hat, n_mcs);
    Ok(ReliabilityEstimate { p_f_hat, beta_hat, beta_clamped, failures, n_mcs, seed })
}

/// `-Phi^{-1}(p_f)`, with 0 and 1 pulled in to `1/(2n)` and `1 - 1/(2n)`.
///
/// Returns the index and whether clamping happened.
pub fn beta_from_pf(p_f: f64, n_mcs: usize) -> (f64, bool) {
    let floor = 0.5 / n_mcs.max(1) as f64;
    if p_f <= 0.0 {
        (-normal::ppf(floor), true)
    } else if p_f >= 1.0 {
        (-normal::ppf(1.0 - floor), true)
    } else {
        (-normal::ppf(p_f), false)
    }
}

/// Relative error `|beta_hat - beta_ref| / beta_ref`.
pub fn delta_beta(beta_hat: f64, beta_ref: f64) -> Result<f64> {
    if !(beta_ref > 0.0) {
        return arg_err(format!("reference reliability index must be positive, got {beta_ref}"));
    }
    Ok((beta_hat - beta_ref).abs() / beta_ref)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub delta_beta: Vec<f64>,
    pub target: f64,
    /// Number of consecutive iterations that must stay below the target.
    pub consecutive: usize,
}

/// First iteration starting a run of `consecutive` values strictly below the
/// target, or `None`.
pub fn first_target_hit(trace: &ConvergenceTrace) -> Option<usize> {
    let s = trace.consecutive.max(1);
    let mut run = 0;
    for (i, &d) in trace.delta_beta.iter().enumerate() {
        if d < trace.target {
            run += 1;
            if run == s {
                return Some(i + 1 - s);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpModel;
    use crate::lsf::{direct_monte_carlo, LimitState, LsfId};
    use crate::sampling::{lhs_unit_hypercube, unit_to_standard_normal, SampleMatrix};
    use proptest::prelude::*;

    fn trace(d: &[f64], target: f64, s: usize) -> ConvergenceTrace {
        ConvergenceTrace { delta_beta: d.to_vec(), target, consecutive: s }
    }

    #[test]
    fn beta_examples() {
        assert!((beta_from_pf(4.46e-3, 1_000_000).0 - 2.62).abs() < 5e-3);
        assert!((beta_from_pf(2.86e-2, 1_000_000).0 - 1.90).abs() < 5e-3);
        assert_eq!(beta_from_pf(0.5, 10), (0.0, false));
        let (b, clamped) = beta_from_pf(0.0, 1_000_000);
        assert!(clamped && (b + normal::ppf(5e-7)).abs() < 1e-12);
        let (b1, c1) = beta_from_pf(1.0, 1_000_000);
        assert!(c1 && (b1 + b).abs() < 1e-9);
    }

    #[test]
    fn beta_inverts_cdf() {
        for i in 0..=500 {
            let b = i as f64 * 0.01;
            assert!((beta_from_pf(normal::cdf(-b), 1 << 30).0 - b).abs() < 1e-9, "b={b}");
        }
    }

    #[test]
    fn delta_beta_examples() {
        assert_eq!(delta_beta(2.62, 2.62).unwrap(), 0.0);
        let d = delta_beta(2.594, 2.62).unwrap();
        assert!((d - 0.026 / 2.62).abs() < 1e-15 && d < 1e-2);
        assert_eq!(delta_beta(0.0, 2.62).unwrap(), 1.0);
        assert!(delta_beta(1.0, 0.0).is_err());
    }

    #[test]
    fn target_hit_examples() {
        assert_eq!(first_target_hit(&trace(&[0.02, 0.009, 0.008, 0.007], 0.01, 3)), Some(1));
        assert_eq!(first_target_hit(&trace(&[0.02, 0.03], 0.01, 1)), None);
        assert_eq!(first_target_hit(&trace(&[0.5, 0.005], 0.01, 1)), Some(1));
        // strict inequality
        assert_eq!(first_target_hit(&trace(&[0.01, 0.01, 0.01], 0.01, 1)), None);
        // an interrupted run restarts
        assert_eq!(first_target_hit(&trace(&[0.001, 0.001, 0.5, 0.001, 0.001, 0.001], 0.01, 3)), Some(3));
    }

    fn fit_on(n: usize, m: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> GpModel {
        let x = unit_to_standard_normal(&lhs_unit_hypercube(n, m, seed).unwrap()).unwrap();
        let y: Vec<f64> = x.iter_rows().map(&f).collect();
        GpModel::fit(&x, &y).unwrap()
    }

    #[test]
    fn everywhere_negative_surrogate() {
        // almost constant negative data: mean and all predictions stay below 0
        let model = fit_on(8, 2, 3, |u| -1.0 + 1e-6 * u[0]);
        let est = estimate_pf(&model, 50_000, 1).unwrap();
        assert_eq!(est.p_f_hat, 1.0);
        assert!(est.beta_clamped);
    }

    #[test]
    fn linear_surrogate_gives_one_half() {
        let model = fit_on(40, 2, 5, |u| u[0]);
        let n = 100_000;
        let est = estimate_pf(&model, n, 17).unwrap();
        assert!((est.p_f_hat - 0.5).abs() < 3.0 * binomial_se(0.5, n), "{}", est.p_f_hat);
        assert_eq!(est, estimate_pf(&model, n, 17).unwrap());
        assert_eq!(est.p_f_hat, est.failures as f64 / n as f64);
    }

    #[test]
    fn estimate_matches_sequential_classification() {
        let model = fit_on(20, 2, 9, |u| 1.5 - u[0] - 0.3 * u[1] * u[1]);
        let n = 70_000;
        let est = estimate_pf(&model, n, 4).unwrap();
        let pts = crate::sampling::mcs_pool(n, 2, 4).unwrap();
        let preds = model.predict(&pts).unwrap();
        let seq = preds.iter().filter(|p| p.mu <= 0.0).count() as u64;
        assert_eq!(est.failures, seq);
    }

    #[test]
    fn dense_surrogate_agrees_with_direct_mc() {
        let def = LsfId::FourBranchK6.definition();
        let x = unit_to_standard_normal(&lhs_unit_hypercube(300, 2, 21).unwrap()).unwrap();
        let scaled = SampleMatrix::from_rows(x.rows, 2, x.data.iter().map(|v| v * 1.8).collect()).unwrap();
        let y: Vec<f64> = scaled.iter_rows().map(|u| def.evaluate_standard(u).unwrap()).collect();
        let model = GpModel::fit(&scaled, &y).unwrap();
        let n = 200_000;
        let est = estimate_pf(&model, n, 8).unwrap();
        let (direct, _) = direct_monte_carlo(&def, n, 8);
        let se = (binomial_se(est.p_f_hat, n).powi(2) + binomial_se(direct, n).powi(2)).sqrt();
        assert!((est.p_f_hat - direct).abs() < 3.0 * se.max(1.0 / n as f64), "{} vs {direct}", est.p_f_hat);
    }

    proptest! {
        #[test]
        fn loosening_target_never_delays_hit(
            d in prop::collection::vec(0.0f64..0.1, 0..40),
            t1 in 0.0f64..0.1,
            extra in 0.0f64..0.05,
            s in 1usize..5,
        ) {
            let tight = first_target_hit(&trace(&d, t1, s));
            let loose = first_target_hit(&trace(&d, t1 + extra, s));
            if let Some(a) = tight {
                prop_assert!(loose.is_some_and(|b| b <= a));
            }
        }

        #[test]
        fn beta_is_decreasing(p in 1e-9f64..0.999, q in 1e-9f64..0.999) {
            prop_assume!(p < q);
            prop_assert!(beta_from_pf(p, 1 << 20).0 > beta_from_pf(q, 1 << 20).0);
        }
    }
}
