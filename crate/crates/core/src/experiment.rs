//! The active-learning loop, multi-seed sweeps and their summaries.
//!
//! One iteration fits the surrogate, estimates the failure probability with
//! it, scores a freshly drawn candidate pool, selects one candidate with the
//! configured strategy and evaluates the limit state there. The reliability
//! figures recorded for iteration `t` therefore describe the model before
//! that iteration's acquisition.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, EffConfig, MooRConfig, MooRState, Strategy, WeightInterval, DEFAULT_WEIGHT_GRID};
use crate::error::{arg_err, Error, Result};
use crate::gp::{GpConfig, GpModel, GpPrediction};
use crate::lsf::{LimitState, LsfDefinition, LsfId, ReferenceReliability};
use crate::pareto::{extract_pareto, objectives, ObjectivePair, ParetoSet};
use crate::reliability::{self, ConvergenceTrace};
use crate::sampling::{derive_seed, domain, lhs_unit_hypercube, mcs_pool, rng_from, unit_to_standard_normal, SampleMatrix};

/// Training inputs closer than this to an existing one are not acquired again.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// A convergence target: `delta_beta < delta_beta_target` for `consecutive` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub delta_beta: f64,
    pub consecutive: usize,
}

impl Target {
    pub fn new(delta_beta: f64, consecutive: usize) -> Result<Self> {
        if !(delta_beta > 0.0) || consecutive == 0 {
            return arg_err(format!("invalid target {delta_beta}:{consecutive}"));
        }
        Ok(Self { delta_beta, consecutive })
    }

    pub fn defaults() -> Vec<Target> {
        vec![Target { delta_beta: 1e-2, consecutive: 3 }, Target { delta_beta: 5e-3, consecutive: 3 }, Target {
            delta_beta: 1e-3,
            consecutive: 3,
        }]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lsf: LsfId,
    pub strategy: Strategy,
    pub n_initial: usize,
    /// Number of actively acquired samples.
    pub budget: usize,
    pub pool_size: usize,
    pub mcs_size: usize,
    pub base_seed: u64,
    pub seed_count: usize,
    pub moor: MooRConfig,
    pub eff: EffConfig,
    pub targets: Vec<Target>,
    pub weight_grid: usize,
    pub gp: GpConfig,
}

impl ExperimentConfig {
    pub fn new(lsf: LsfId, strategy: Strategy) -> Self {
        Self {
            lsf,
            strategy,
            n_initial: 10,
            budget: 190,
            pool_size: 100_000,
            mcs_size: 1_000_000,
            base_seed: 0,
            seed_count: 15,
            moor: MooRConfig::default(),
            eff: EffConfig::default(),
            targets: Target::defaults(),
            weight_grid: DEFAULT_WEIGHT_GRID,
            gp: GpConfig::default(),
        }
    }

    /// Candidate pool of 10^6 and 10^7 reliability samples.
    pub fn full_scale(mut self) -> Self {
        self.pool_size = 1_000_000;
        self.mcs_size = 10_000_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return arg_err("budget must be at least 1");
        }
        if self.pool_size < 2 {
            return arg_err("pool size must be at least 2");
        }
        if self.n_initial < 2 {
            return arg_err("initial design needs at least 2 points");
        }
        if self.mcs_size == 0 {
            return arg_err("MCS size must be positive");
        }
        if self.weight_grid < 2 {
            return arg_err("weight grid needs at least 2 points");
        }
        for t in &self.targets {
            Target::new(t.delta_beta, t.consecutive)?;
        }
        if !(self.eff.c > 0.0) {
            return arg_err("EFF window constant must be positive");
        }
        self.moor.validate()
    }

    /// Value used for runs that never reach a target.
    pub fn not_reached(&self) -> usize {
        self.budget + self.n_initial + 1
    }

    /// Seed of the `i`-th run of a sweep.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// The failure-probability estimate was 0 or 1 and clamped before inversion.
    PfClamped,
    /// The hyperparameter search stopped before converging.
    GpNotConverged,
    /// The selected member never wins the weight scan.
    WeightDegenerate,
    /// The first choice duplicated a training input and was skipped.
    DuplicateSkipped,
    /// An extra design point was added after a degenerate fit.
    DesignRetry,
}

impl Flag {
    pub fn token(self) -> &'static str {
        match self {
            Flag::PfClamped => "pf-clamped",
            Flag::GpNotConverged => "gp-not-converged",
            Flag::WeightDegenerate => "weight-degenerate",
            Flag::DuplicateSkipped => "duplicate-skipped",
            Flag::DesignRetry => "design-retry",
        }
    }

    pub const ALL: [Flag; 5] =
        [Flag::PfClamped, Flag::GpNotConverged, Flag::WeightDegenerate, Flag::DuplicateSkipped, Flag::DesignRetry];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration.
    pub t: usize,
    /// Training-set size after this iteration's acquisition.
    pub n_train: usize,
    pub p_f_hat: f64,
    pub beta_hat: f64,
    pub delta_beta: f64,
    pub selected_u: Vec<f64>,
    pub selected_pool_index: usize,
    pub selected_obj: ObjectivePair,
    pub selected_g: f64,
    pub pareto_size: usize,
    pub pool_size: usize,
    pub gamma: Option<f64>,
    pub weight: Option<WeightInterval>,
    pub ell: f64,
    pub sigma_f2: f64,
    pub flags: Vec<Flag>,
    /// Largest `|mu - y| / (1 + |y|)` over the training points.
    pub interp_mean_err: f64,
    /// Largest `sigma / sqrt(sigma_f2)` over the training points.
    pub interp_sigma_ratio: f64,
}

impl IterationRecord {
    pub fn pareto_frac(&self) -> f64 {
        self.pareto_size as f64 / self.pool_size as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub target: Target,
    /// Index into the records of the first qualifying iteration.
    pub first_record: Option<usize>,
    /// Training samples at the hit, or the not-reached value.
    pub samples: usize,
}

/// Accumulated wall-clock time per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub fit: Duration,
    pub reliability: Duration,
    pub pool: Duration,
    pub selection: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub reference: ReferenceReliability,
    pub records: Vec<IterationRecord>,
    pub hits: Vec<TargetHit>,
    /// Why the run stopped early, if it did.
    pub truncated: Option<String>,
    pub timings: PhaseTimings,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.truncated.is_none() && self.records.len() == self.config.budget
    }

    pub fn hit_for(&self, target: &Target) -> Option<&TargetHit> {
        self.hits.iter().find(|h| h.target == *target)
    }
}

/// First-hit sample counts for each target of `config`.
pub fn target_hits(config: &ExperimentConfig, records: &[IterationRecord]) -> Vec<TargetHit> {
    let deltas: Vec<f64> = records.iter().map(|r| r.delta_beta).collect();
    config
        .targets
        .iter()
        .map(|&target| {
            let trace = ConvergenceTrace { delta_beta: deltas.clone(), target: target.delta_beta, consecutive: target.consecutive };
            let first_record = reliability::first_target_hit(&trace);
            let samples = first_record.map_or(config.not_reached(), |i| records[i].n_train);
            TargetHit { target, first_record, samples }
        })
        .collect()
}

fn is_duplicate(point: &[f64], train: &[f64], m: usize) -> bool {
    train.chunks_exact(m).any(|row| {
        row.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= DUPLICATE_TOL
    })
}

fn interpolation_errors(model: &GpModel) -> Result<(f64, f64)> {
    let preds = model.predict(model.train_x())?;
    let scale = model.params().sigma_f2.sqrt();
    Ok(preds.iter().zip(model.train_y()).fold((0.0f64, 0.0f64), |(e, s), (p, y)| {
        (e.max((p.mu - y).abs() / (1.0 + y.abs())), s.max(p.sigma / scale))
    }))
}

struct Selection {
    index: usize,
    gamma: Option<f64>,
}

fn select(
    config: &ExperimentConfig,
    preds: &[GpPrediction],
    front: &ParetoSet,
    state: &MooRState,
    admissible: &dyn Fn(usize) -> bool,
) -> Result<Option<Selection>> {
    let gamma = match config.strategy {
        Strategy::MooR => acquisition::moor_gamma(state, &config.moor),
        _ => None,
    };
    let index = match config.strategy {
        Strategy::U => match acquisition::select_u_where(preds, admissible) {
            Ok(i) => Some(i),
            Err(Error::DegeneratePool(_)) => None,
            Err(e) => return Err(e),
        },
        Strategy::Eff => Some(acquisition::select_eff_where(preds, &config.eff, admissible)?),
        Strategy::MooK => acquisition::select_knee_where(front, admissible),
        Strategy::MooC => acquisition::select_compromise_where(front, admissible),
        Strategy::MooR => acquisition::select_moor_with_gamma(front, gamma, admissible),
    };
    Ok(index.map(|index| Selection { index, gamma }))
}

/// Runs the loop for one seed. Errors during the loop truncate the run rather
/// than failing it; only an invalid configuration is an error.
pub fn run(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    run_problem(config, &LsfDefinition::new(config.lsf), config.lsf.reference(), seed)
}

/// [`run`] for an arbitrary limit state with a known reference reliability.
pub fn run_problem(
    config: &ExperimentConfig,
    problem: &dyn LimitState,
    reference: ReferenceReliability,
    seed: u64,
) -> Result<RunResult> {
    config.validate()?;
    let mut result = RunResult {
        config: config.clone(),
        seed,
        reference,
        records: Vec::with_capacity(config.budget),
        hits: Vec::new(),
        truncated: None,
        timings: PhaseTimings::default(),
    };
    if let Err(e) = run_loop(config, problem, seed, &mut result) {
        log::warn!("run {} {} seed {seed} stopped at iteration {}: {e}", config.lsf, config.strategy, result.records.len() + 1);
        result.truncated = Some(e.to_string());
    }
    result.hits = target_hits(config, &result.records);
    Ok(result)
}

fn run_loop(config: &ExperimentConfig, problem: &dyn LimitState, seed: u64, out: &mut RunResult) -> Result<()> {
    let m = problem.dim();
    let design = unit_to_standard_normal(&lhs_unit_hypercube(config.n_initial, m, derive_seed(seed, domain::LHS, 0))?)?;
    let mut train_y = design.iter_rows().map(|u| problem.evaluate_standard(u)).collect::<Result<Vec<_>>>()?;
    let mut train_x = design.data;
    let mut state = MooRState::new(config.moor.window);
    let mut retries = 0u64;

    for t in 1..=config.budget {
        let mut flags = Vec::new();

        let clock = Instant::now();
        let x = SampleMatrix::from_rows(train_y.len(), m, train_x.clone())?;
        let model = match GpModel::fit_with(&x, &train_y, &config.gp) {
            Err(Error::DegenerateData(msg)) => {
                // one extra jittered design point, then give up
                log::warn!("degenerate training data ({msg}); adding a design point");
                let mut rng = rng_from(derive_seed(seed, domain::RETRY, retries));
                retries += 1;
                let u: Vec<f64> = (0..m).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).collect();
                train_y.push(problem.evaluate_standard(&u)?);
                train_x.extend_from_slice(&u);
                flags.push(Flag::DesignRetry);
                let x = SampleMatrix::from_rows(train_y.len(), m, train_x.clone())?;
                GpModel::fit_with(&x, &train_y, &config.gp)?
            }
            other => other?,
        };
        if !model.converged() {
            flags.push(Flag::GpNotConverged);
        }
        let (interp_mean_err, interp_sigma_ratio) = interpolation_errors(&model)?;
        out.timings.fit += clock.elapsed();

        let clock = Instant::now();
        let est = reliability::estimate_pf(&model, config.mcs_size, derive_seed(seed, domain::MCS, t as u64))?;
        if est.beta_clamped {
            flags.push(Flag::PfClamped);
        }
        let delta_beta = reliability::delta_beta(est.beta_hat, out.reference.beta)?;
        state.push(est.p_f_hat);
        out.timings.reliability += clock.elapsed();

        let clock = Instant::now();
        let pool = mcs_pool(config.pool_size, m, derive_seed(seed, domain::POOL, t as u64))?;
        let preds = model.predict(&pool)?;
        let pairs = objectives(&preds);
        let front = extract_pareto(&pairs);
        out.timings.pool += clock.elapsed();

        let clock = Instant::now();
        let mut choice = select(config, &preds, &front, &state, &|_| true)?;
        if choice.as_ref().is_some_and(|c| is_duplicate(pool.row(c.index), &train_x, m)) {
            flags.push(Flag::DuplicateSkipped);
            let dups: HashSet<usize> = (0..pool.rows).filter(|&i| is_duplicate(pool.row(i), &train_x, m)).collect();
            let admissible = |i: usize| !dups.contains(&i);
            choice = select(config, &preds, &front, &state, &admissible)?;
            if choice.is_none() && config.strategy.uses_front() {
                // every front member is taken: use the front of the remaining pool
                let keep: Vec<usize> = (0..pool.rows).filter(|i| !dups.contains(i)).collect();
                if !keep.is_empty() {
                    let sub = extract_pareto(&keep.iter().map(|&i| pairs[i]).collect::<Vec<_>>());
                    let sub_preds: Vec<GpPrediction> = keep.iter().map(|&i| preds[i]).collect();
                    choice = select(config, &sub_preds, &sub, &state, &|_| true)?
                        .map(|s| Selection { index: keep[s.index], gamma: s.gamma });
                }
            }
        }
        let Some(choice) = choice else {
            return Err(Error::DegeneratePool("no admissible candidate left in the pool".into()));
        };
        let weight = front
            .position(choice.index)
            .or_else(|| front.position_of_pair(&pairs[choice.index]))
            .map(|pos| acquisition::weight_interval(&front, front.indices[pos], config.weight_grid))
            .transpose()?;
        if weight.is_some_and(|w| w.degenerate) {
            flags.push(Flag::WeightDegenerate);
        }
        out.timings.selection += clock.elapsed();

        let selected_u = pool.row(choice.index).to_vec();
        let selected_g = problem.evaluate_standard(&selected_u)?;
        train_x.extend_from_slice(&selected_u);
        train_y.push(selected_g);

        let params = model.params();
        let record = IterationRecord {
            t,
            n_train: train_y.len(),
            p_f_hat: est.p_f_hat,
            beta_hat: est.beta_hat,
            delta_beta,
            selected_u,
            selected_pool_index: choice.index,
            selected_obj: pairs[choice.index],
            selected_g,
            pareto_size: front.len(),
            pool_size: pool.rows,
            gamma: choice.gamma,
            weight,
            ell: params.ell,
            sigma_f2: params.sigma_f2,
            flags,
            interp_mean_err,
            interp_sigma_ratio,
        };
        log::info!(
            "{} {} seed {seed} iter {t}: n={} pf={:.4e} beta={:.4} dbeta={:.3e} K={} ell={:.3e}",
            config.lsf,
            config.strategy,
            record.n_train,
            record.p_f_hat,
            record.beta_hat,
            record.delta_beta,
            record.pareto_size,
            record.ell
        );
        out.records.push(record);
    }
    Ok(())
}

/// Runs `seed_count` seeds, possibly concurrently; results are in seed order.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    (0..config.seed_count).into_par_iter().map(|i| run(config, config.run_seed(i))).collect()
}

/// Median and 2.5 / 97.5 percentiles of first-hit sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: Target,
    pub median: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    pub n_not_reached: usize,
    /// Per-run sample counts, in run order.
    pub samples: Vec<usize>,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_counts(target: Target, samples: Vec<usize>, not_reached: usize) -> Result<TargetSummary> {
    if samples.is_empty() {
        return arg_err("cannot summarize an empty set of runs");
    }
    let mut sorted: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(TargetSummary {
        target,
        median: percentile(&sorted, 0.5),
        p2_5: percentile(&sorted, 0.025),
        p97_5: percentile(&sorted, 0.975),
        n_not_reached: samples.iter().filter(|&&s| s >= not_reached).count(),
        samples,
    })
}

pub fn aggregate(results: &[RunResult], target: &Target) -> Result<TargetSummary> {
    let Some(first) = results.first() else {
        return arg_err("cannot summarize an empty set of runs");
    };
    let not_reached = first.config.not_reached();
    let samples = results
        .iter()
        .map(|r| r.hit_for(target).map_or(not_reached, |h| h.samples))
        .collect();
    summarize_counts(*target, samples, not_reached)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategy: Strategy, budget: usize) -> ExperimentConfig {
        ExperimentConfig { budget, pool_size: 2_000, mcs_size: 20_000, ..ExperimentConfig::new(LsfId::FourBranchK6, strategy) }
    }

    #[test]
    fn percentiles() {
        let s = summarize_counts(Target::defaults()[0], vec![33, 17, 96], 201).unwrap();
        assert_eq!(s.median, 33.0);
        assert!((s.p2_5 - (17.0 + 0.05 * 16.0)).abs() < 1e-12);
        assert!((s.p97_5 - (33.0 + 0.95 * 63.0)).abs() < 1e-12);
        let all = summarize_counts(Target::defaults()[0], vec![201; 15], 201).unwrap();
        assert_eq!((all.median, all.p2_5, all.p97_5, all.n_not_reached), (201.0, 201.0, 201.0, 15));
        assert_eq!(summarize_counts(Target::defaults()[0], vec![42], 201).unwrap().median, 42.0);
        assert!(summarize_counts(Target::defaults()[0], vec![], 201).is_err());
    }

    #[test]
    fn config_validation() {
        let base = ExperimentConfig::new(LsfId::Hat, Strategy::U);
        assert!(base.validate().is_ok());
        assert_eq!(base.not_reached(), 201);
        assert!(ExperimentConfig { budget: 0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { pool_size: 1, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { n_initial: 1, ..base.clone() }.validate().is_err());
        let full = base.full_scale();
        assert_eq!((full.pool_size, full.mcs_size), (1_000_000, 10_000_000));
    }

    #[test]
    fn bookkeeping_and_replay() {
        let cfg = small(Strategy::MooR, 5);
        let a = run(&cfg, 3).unwrap();
        assert!(a.is_complete());
        assert_eq!(a.records.len(), 5);
        let n: Vec<usize> = a.records.iter().map(|r| r.n_train).collect();
        assert_eq!(n, vec![11, 12, 13, 14, 15]);
        let b = run(&cfg, 3).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.hits, b.hits);
        // too little history for the adaptive weight within 3 iterations
        assert!(a.records[..3].iter().all(|r| r.gamma.is_none()));
        // afterwards the weight is defined unless a zero estimate sits in the window
        let zero = a.records[..3].iter().any(|r| r.p_f_hat == 0.0);
        assert_eq!(a.records[3].gamma.is_some(), !zero);
    }

    #[test]
    fn front_strategies_select_front_members() {
        for strategy in [Strategy::MooK, Strategy::MooC, Strategy::MooR, Strategy::U, Strategy::Eff] {
            let r = run(&small(strategy, 4), 11).unwrap();
            for rec in &r.records {
                let w = rec.weight.expect("selection lies on the front");
                assert!(0.0 <= w.w_min && w.w_min <= w.w_bar && w.w_bar <= w.w_max && w.w_max <= 1.0);
                assert!(rec.interp_mean_err < 1e-6);
            }
        }
    }

    #[test]
    fn training_inputs_stay_distinct() {
        let r = run(&small(Strategy::U, 6), 5).unwrap();
        let pts: Vec<&Vec<f64>> = r.records.iter().map(|r| &r.selected_u).collect();
        for i in 0..pts.len() {
            for j in 0..i {
                assert_ne!(pts[i], pts[j]);
            }
        }
    }

    #[test]
    fn duplicate_check() {
        let train = [0.0, 0.0, 1.0, 1.0];
        assert!(is_duplicate(&[1.0, 1.0], &train, 2));
        assert!(!is_duplicate(&[1.0, 1.0 + 1e-9], &train, 2));
    }

    #[test]
    fn hits_use_training_counts() {
        let cfg = ExperimentConfig { n_initial: 10, budget: 4, ..small(Strategy::U, 4) };
        let rec = |t: usize, d: f64| IterationRecord {
            t,
            n_train: 10 + t,
            p_f_hat: 0.0,
            beta_hat: 0.0,
            delta_beta: d,
            selected_u: vec![],
            selected_pool_index: 0,
            selected_obj: ObjectivePair::new(0.0, 0.0),
            selected_g: 0.0,
            pareto_size: 1,
            pool_size: 2,
            gamma: None,
            weight: None,
            ell: 1.0,
            sigma_f2: 1.0,
            flags: vec![],
            interp_mean_err: 0.0,
            interp_sigma_ratio: 0.0,
        };
        let records = vec![rec(1, 0.5), rec(2, 0.001), rec(3, 0.001), rec(4, 0.001)];
        let hits = target_hits(&cfg, &records);
        assert_eq!(hits[0].first_record, Some(1));
        assert_eq!(hits[0].samples, 12);
        assert_eq!(hits[2].samples, cfg.not_reached());
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let cfg = ExperimentConfig { seed_count: 3, base_seed: 40, ..small(Strategy::MooC, 2) };
        let a = sweep(&cfg).unwrap();
        let b = sweep(&cfg).unwrap();
        assert_eq!(a.len(), 3);
        let seeds: Vec<u64> = a.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.records, y.records);
        }
        assert_ne!(a[0].records[0].selected_u, a[1].records[0].selected_u);
        let serial: Vec<RunResult> = (0..3).map(|i| run(&cfg, cfg.run_seed(i)).unwrap()).collect();
        for target in &cfg.targets {
            assert_eq!(aggregate(&a, target).unwrap(), aggregate(&serial, target).unwrap());
        }
    }
}
