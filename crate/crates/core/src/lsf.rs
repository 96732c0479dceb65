//! Benchmark limit-state functions and their input distributions.
//!
//! Every function is evaluated in physical space; failure is `g(x) <= 0`.
//! [`LsfDefinition::to_physical`] maps standard-normal coordinates onto the
//! independent marginals of each problem.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Normal,
    Lognormal,
}

/// Marginal distribution of one physical input, given by its mean and std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub family: Family,
    pub mean: f64,
    pub std: f64,
}

impl MarginalSpec {
    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() {
            return arg_err(format!("normal marginal needs std > 0, got mean={mean} std={std}"));
        }
        Ok(Self { family: Family::Normal, mean, std })
    }

    pub fn lognormal(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !(mean > 0.0) {
            return arg_err(format!("lognormal marginal needs mean > 0 and std > 0, got mean={mean} std={std}"));
        }
        Ok(Self { family: Family::Lognormal, mean, std })
    }

    pub fn standard_normal() -> Self {
        Self { family: Family::Normal, mean: 0.0, std: 1.0 }
    }

    /// Maps a standard-normal coordinate to this marginal. Monotone increasing.
    #[inline]
    pub fn from_standard(&self, u: f64) -> f64 {
        match self.family {
            Family::Normal => self.mean + self.std * u,
            Family::Lognormal => {
                // moment matching: (mean, std) -> (mu_ln, sigma_ln)
                let var_ln = (1.0 + (self.std / self.mean).powi(2)).ln();
                let mu_ln = self.mean.ln() - 0.5 * var_ln;
                (mu_ln + var_ln.sqrt() * u).exp()
            }
        }
    }
}

/// Identifier of a built-in benchmark. CLI tokens are given by `Display`/`FromStr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LsfId {
    FourBranchK6,
    FourBranchK7,
    Himmelblau,
    Hat,
    NonlinearOscillator,
    HighDim40,
}

impl LsfId {
    pub const ALL: [LsfId; 6] = [
        LsfId::FourBranchK6,
        LsfId::FourBranchK7,
        LsfId::Himmelblau,
        LsfId::Hat,
        LsfId::NonlinearOscillator,
        LsfId::HighDim40,
    ];

    pub fn token(self) -> &'static str {
        match self {
            LsfId::FourBranchK6 => "four-branch-6",
            LsfId::FourBranchK7 => "four-branch-7",
            LsfId::Himmelblau => "himmelblau",
            LsfId::Hat => "hat",
            LsfId::NonlinearOscillator => "oscillator",
            LsfId::HighDim40 => "highdim40",
        }
    }

    pub fn definition(self) -> LsfDefinition {
        LsfDefinition::new(self)
    }

    /// Reference failure probability and reliability index of the benchmark.
    pub fn reference(self) -> ReferenceReliability {
        let (p_f, beta) = match self {
            LsfId::FourBranchK6 => (4.46e-3, 2.62),
            LsfId::FourBranchK7 => (2.22e-3, 2.84),
            LsfId::Himmelblau => (1.66e-4, 3.59),
            LsfId::Hat => (3.87e-4, 3.36),
            LsfId::NonlinearOscillator => (2.86e-2, 1.90),
            LsfId::HighDim40 => (1.98e-3, 2.88),
        };
        ReferenceReliability { p_f, beta }
    }
}

impl fmt::Display for LsfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl From<LsfId> for String {
    fn from(v: LsfId) -> String {
        v.token().to_string()
    }
}

impl TryFrom<String> for LsfId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for LsfId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LsfId::ALL.into_iter().find(|id| id.token() == s).ok_or_else(|| {
            let valid: Vec<_> = LsfId::ALL.iter().map(|id| id.token()).collect();
            Error::Argument(format!("unknown limit-state '{s}', expected one of: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReliability {
    pub p_f: f64,
    pub beta: f64,
}

/// A limit-state function over independent inputs.
///
/// Implement this to run the active-learning loop on a problem that is not one
/// of the built-in benchmarks.
pub trait LimitState: Sync {
    fn dim(&self) -> usize;

    fn marginals(&self) -> &[MarginalSpec];

    /// `g(x)` for a physical-space point of length [`dim`](Self::dim).
    fn g(&self, x: &[f64]) -> f64;

    fn to_physical(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return arg_err(format!("expected {} coordinates, got {}", self.dim(), u.len()));
        }
        Ok(u.iter().zip(self.marginals()).map(|(&ui, m)| m.from_standard(ui)).collect())
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return arg_err(format!("expected {} coordinates, got {}", self.dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return arg_err("non-finite input to limit-state function");
        }
        Ok(self.g(x))
    }

    /// Evaluates `g` at a standard-normal point.
    fn evaluate_standard(&self, u: &[f64]) -> Result<f64> {
        let x = self.to_physical(u)?;
        self.evaluate(&x)
    }
}

/// One of the built-in benchmarks together with its input marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsfDefinition {
    pub id: LsfId,
    pub dim: usize,
    pub marginals: Vec<MarginalSpec>,
    /// `k` for the four-branch functions, `xi` for Himmelblau.
    pub k_or_xi: Option<f64>,
}

const HIGH_DIM: usize = 40;
const HIGH_DIM_STD: f64 = 0.2;

impl LsfDefinition {
    pub fn new(id: LsfId) -> Self {
        let std_normal = |m: usize| vec![MarginalSpec::standard_normal(); m];
        let (marginals, k_or_xi) = match id {
            LsfId::FourBranchK6 => (std_normal(2), Some(6.0)),
            LsfId::FourBranchK7 => (std_normal(2), Some(7.0)),
            LsfId::Himmelblau => (std_normal(2), Some(95.0)),
            LsfId::Hat => (vec![MarginalSpec { family: Family::Normal, mean: 0.25, std: 1.0 }; 2], None),
            LsfId::NonlinearOscillator => (
                [(1.0, 0.1), (0.1, 0.01), (1.0, 0.05), (0.5, 0.05), (1.0, 0.2), (1.0, 0.2)]
                    .iter()
                    .map(|&(mean, std)| MarginalSpec { family: Family::Normal, mean, std })
                    .collect(),
                None,
            ),
            LsfId::HighDim40 => (
                vec![MarginalSpec { family: Family::Lognormal, mean: 1.0, std: HIGH_DIM_STD }; HIGH_DIM],
                None,
            ),
        };
        Self { id, dim: marginals.len(), marginals, k_or_xi }
    }

    pub fn reference(&self) -> ReferenceReliability {
        self.id.reference()
    }
}

impl LimitState for LsfDefinition {
    fn dim(&self) -> usize {
        self.dim
    }

    fn marginals(&self) -> &[MarginalSpec] {
        &self.marginals
    }

    fn g(&self, x: &[f64]) -> f64 {
        match self.id {
            LsfId::FourBranchK6 | LsfId::FourBranchK7 => four_branch(x[0], x[1], self.k_or_xi.unwrap_or(6.0)),
            LsfId::Himmelblau => himmelblau(x[0], x[1], self.k_or_xi.unwrap_or(95.0)),
            LsfId::Hat => hat(x[0], x[1]),
            LsfId::NonlinearOscillator => oscillator(x),
            LsfId::HighDim40 => {
                let m = x.len() as f64;
                (m + 3.0 * HIGH_DIM_STD * m.sqrt()) - x.iter().sum::<f64>()
            }
        }
    }
}

fn four_branch(x1: f64, x2: f64, k: f64) -> f64 {
    let d = x1 - x2;
    let s = (x1 + x2) / SQRT_2;
    let g1 = 3.0 + 0.1 * d * d - s;
    let g2 = 3.0 + 0.1 * d * d + s;
    let g3 = d + k / SQRT_2;
    let g4 = -d + k / SQRT_2;
    g1.min(g2).min(g3).min(g4)
}

fn himmelblau(x1: f64, x2: f64, xi: f64) -> f64 {
    let a = 0.75 * x1;
    let b = 0.75 * x2;
    let t1 = (a - 0.5).powi(2) / 1.81 + (b - 0.5) / 1.81 - 11.0;
    let t2 = (a - 1.0) / 1.81 + (b - 0.5).powi(2) / 1.81 - 7.0;
    t1 * t1 + t2 * t2 - xi
}

fn hat(x1: f64, x2: f64) -> f64 {
    20.0 - (x1 - x2).powi(2) - 8.0 * (x1 + x2 - 4.0).powi(3)
}

/// Undamped single-degree-of-freedom oscillator; inputs `(c1, c2, m, r, t1, F1)`.
fn oscillator(x: &[f64]) -> f64 {
    let (c1, c2, m, r, t1, f1) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let w0 = ((c1 + c2) / m).sqrt();
    let z_max = 2.0 * f1 / (m * w0 * w0) * (0.5 * w0 * t1).sin();
    3.0 * r - z_max.abs()
}

/// Direct Monte Carlo estimate of the failure probability of `problem`.
///
/// Returns `(p_f, failures)`; samples are drawn in chunks from `seed` exactly
/// as [`crate::sampling::normal_chunks`] lays them out.
pub fn direct_monte_carlo(problem: &dyn LimitState, n: usize, seed: u64) -> (f64, u64) {
    use rayon::prelude::*;

    let m = problem.dim();
    let failures: u64 = crate::sampling::normal_chunks(n)
        .into_par_iter()
        .map(|chunk| {
            let block = crate::sampling::normal_chunk(seed, chunk, m);
            let mut x = vec![0.0; m];
            let mut count = 0u64;
            for u in block.chunks_exact(m) {
                for ((xi, &ui), marg) in x.iter_mut().zip(u).zip(problem.marginals()) {
                    *xi = marg.from_standard(ui);
                }
                if problem.g(&x) <= 0.0 {
                    count += 1;
                }
            }
            count
        })
        .sum();
    (failures as f64 / n as f64, failures)
}

/// Reliability index implied by a failure probability, without clamping.
pub fn beta_of(p_f: f64) -> f64 {
    -normal::ppf(p_f)
}
