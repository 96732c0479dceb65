//! End-to-end properties of the active-learning loop through the public API.

use nalgebra::{DMatrix, DVector};

use relax::acquisition::Strategy;
use relax::experiment::{aggregate, run, run_problem, sweep, ExperimentConfig};
use relax::gp::GpModel;
use relax::lsf::{direct_monte_carlo, LimitState, LsfId, MarginalSpec, ReferenceReliability};
use relax::pareto::{extract_pareto, objectives};
use relax::sampling::{lhs_unit_hypercube, mcs_pool, unit_to_standard_normal};

fn small(lsf: LsfId, strategy: Strategy, budget: usize) -> ExperimentConfig {
    ExperimentConfig { budget, pool_size: 3_000, mcs_size: 30_000, ..ExperimentConfig::new(lsf, strategy) }
}

#[test]
fn every_strategy_runs_on_every_benchmark() {
    for lsf in LsfId::ALL {
        for strategy in Strategy::ALL {
            let r = run(&small(lsf, strategy, 2), 1).unwrap();
            assert!(r.is_complete(), "{lsf} {strategy}: {:?}", r.truncated);
            assert_eq!(r.records.last().unwrap().n_train, 12);
            assert_eq!(r.records[0].selected_u.len(), lsf.definition().dim);
        }
    }
}

#[test]
fn replay_reproduces_records() {
    let cfg = small(LsfId::Hat, Strategy::Eff, 6);
    let a = run(&cfg, 9).unwrap();
    let b = run(&cfg, 9).unwrap();
    assert_eq!(a.records, b.records);
    let c = run(&cfg, 10).unwrap();
    assert_ne!(a.records[0].selected_u, c.records[0].selected_u);
}

#[test]
fn moo_selections_are_front_members() {
    // rebuild each iteration's pool and model to check the recorded choice
    let cfg = small(LsfId::FourBranchK7, Strategy::MooK, 3);
    let r = run(&cfg, 2).unwrap();
    let def = LsfId::FourBranchK7.definition();
    let design = unit_to_standard_normal(&lhs_unit_hypercube(10, 2, relax::sampling::derive_seed(2, relax::sampling::domain::LHS, 0)).unwrap()).unwrap();
    let mut x = design.data.clone();
    let mut y: Vec<f64> = design.iter_rows().map(|u| def.evaluate_standard(u).unwrap()).collect();
    for rec in &r.records {
        let train = relax::sampling::SampleMatrix::from_rows(y.len(), 2, x.clone()).unwrap();
        let model = GpModel::fit(&train, &y).unwrap();
        let pool = mcs_pool(cfg.pool_size, 2, relax::sampling::derive_seed(2, relax::sampling::domain::POOL, rec.t as u64)).unwrap();
        let front = extract_pareto(&objectives(&model.predict(&pool).unwrap()));
        assert!(front.position(rec.selected_pool_index).is_some());
        assert_eq!(pool.row(rec.selected_pool_index), rec.selected_u.as_slice());
        assert_eq!(front.len(), rec.pareto_size);
        x.extend_from_slice(&rec.selected_u);
        y.push(rec.selected_g);
    }
}

#[test]
fn sweep_aggregates_like_serial_runs() {
    let cfg = ExperimentConfig { seed_count: 3, base_seed: 100, ..small(LsfId::Himmelblau, Strategy::MooC, 3) };
    let par = sweep(&cfg).unwrap();
    let ser: Vec<_> = (0..3).map(|i| run(&cfg, 100 + i as u64).unwrap()).collect();
    for t in &cfg.targets {
        assert_eq!(aggregate(&par, t).unwrap(), aggregate(&ser, t).unwrap());
    }
}

/// A user-defined limit state: failure when the sum of two normals exceeds 3.
struct Linear {
    marginals: Vec<MarginalSpec>,
}

impl LimitState for Linear {
    fn dim(&self) -> usize {
        2
    }

    fn marginals(&self) -> &[MarginalSpec] {
        &self.marginals
    }

    fn g(&self, x: &[f64]) -> f64 {
        3.0 - x[0] - x[1]
    }
}

#[test]
fn custom_problem_converges() {
    let problem = Linear { marginals: vec![MarginalSpec::standard_normal(); 2] };
    let beta = 3.0 / 2f64.sqrt();
    let reference = ReferenceReliability { p_f: relax::normal::cdf(-beta), beta };
    let cfg = ExperimentConfig { pool_size: 5_000, mcs_size: 400_000, ..small(LsfId::Hat, Strategy::MooR, 15) };
    let r = run_problem(&cfg, &problem, reference, 4).unwrap();
    let last = r.records.last().unwrap();
    assert!(last.delta_beta < 0.03, "delta beta {}", last.delta_beta);
    let (pf, _) = direct_monte_carlo(&problem, 400_000, 1);
    assert!((pf - reference.p_f).abs() < 4.0 * (reference.p_f / 400_000.0).sqrt());
}

#[test]
fn gp_matches_dense_inverse() {
    let x = unit_to_standard_normal(&lhs_unit_hypercube(15, 2, 77).unwrap()).unwrap();
    let y: Vec<f64> = x.iter_rows().map(|u| (u[0] * 1.3).cos() + u[1]).collect();
    let model = GpModel::fit(&x, &y).unwrap();
    let p = model.params();
    let k = |a: &[f64], b: &[f64]| {
        let r = a.iter().zip(b).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt();
        let a = 3f64.sqrt() * r / p.ell;
        p.sigma_f2 * (1.0 + a) * (-a).exp()
    };
    let n = x.rows;
    let kmat = DMatrix::from_fn(n, n, |i, j| k(x.row(i), x.row(j)) + if i == j { model.jitter_response_units() } else { 0.0 });
    let kinv = kmat.try_inverse().unwrap();
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - model.mean_const()));
    let q = mcs_pool(40, 2, 5).unwrap();
    for (row, pred) in q.iter_rows().zip(model.predict(&q).unwrap()) {
        let ks = DVector::from_iterator(n, x.iter_rows().map(|xi| k(row, xi)));
        let mu = model.mean_const() + ks.dot(&(&kinv * &resid));
        let sigma = (p.sigma_f2 - ks.dot(&(&kinv * &ks))).max(0.0).sqrt();
        let scale = p.sigma_f2.sqrt();
        assert!((pred.mu - mu).abs() <= 1e-8 * (mu.abs() + scale));
        assert!((pred.sigma - sigma).abs() <= 1e-8 * scale);
    }
}
