//! Noise-free Gaussian-process regression with an isotropic Matérn-3/2 kernel.
//!
//! Responses are standardized before fitting: the constant mean is the sample
//! mean of the responses and the kernel is fit to the residuals divided by
//! their standard deviation. Predictions are returned in the original units,
//! so `mu` keeps its sign and `mu / sigma` is unaffected by the scaling.
//!
//! Hyperparameters `(log ell, log sigma_f^2)` maximize the log marginal
//! likelihood under box constraints using [`crate::optim::minimize`] from a
//! fixed set of start points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::normal;
use crate::optim::{minimize, Bounds, LbfgsbOptions};
use crate::sampling::SampleMatrix;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Kernel hyperparameters: process variance and shared length-scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma_f2: f64,
    pub ell: f64,
}

impl KernelParams {
    pub fn new(sigma_f2: f64, ell: f64) -> Result<Self> {
        if !(sigma_f2 > 0.0 && ell > 0.0 && sigma_f2.is_finite() && ell.is_finite()) {
            return arg_err(format!("kernel parameters must be positive, got sigma_f2={sigma_f2} ell={ell}"));
        }
        Ok(Self { sigma_f2, ell })
    }

    fn from_log(theta: &[f64]) -> Self {
        Self { ell: theta[0].exp(), sigma_f2: theta[1].exp() }
    }
}

/// `exp(-a)` for `a >= 0`, branch-free so that kernel loops vectorize.
///
/// Agrees with `f64::exp` to a couple of ulp; arguments beyond 700 are clamped.
#[inline(always)]
pub fn exp_neg(a: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    #[allow(clippy::excessive_precision)]
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    #[allow(clippy::excessive_precision)]
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    let x = (-a).max(-700.0);
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to degree 12 on |r| <= ln2/2
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

/// Matérn-3/2 correlation `(1 + a) exp(-a)` with `a = sqrt(3) r / ell`.
#[inline(always)]
fn matern32_corr(r: f64, inv_ell: f64) -> f64 {
    let a = SQRT_3 * r * inv_ell;
    (1.0 + a) * exp_neg(a)
}

/// Matérn-3/2 covariance between two points.
pub fn kernel(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return arg_err(format!("kernel inputs differ in length: {} vs {}", x.len(), x2.len()));
    }
    let r = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(params.sigma_f2 * matern32_corr(r, 1.0 / params.ell))
}

/// Fit settings. Bounds are on the standardized responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub ell_bounds: (f64, f64),
    pub sigma_f2_bounds: (f64, f64),
    pub restarts: usize,
    /// First jitter level, relative to `trace(K) / n`.
    pub jitter_start: f64,
    /// Last jitter level tried before giving up.
    pub jitter_max: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { ell_bounds: (1e-2, 1e2), sigma_f2_bounds: (1e-4, 1e6), restarts: 5, jitter_start: 1e-12, jitter_max: 1e-4 }
    }
}

impl GpConfig {
    fn jitter_levels(&self) -> Vec<f64> {
        let mut levels = vec![self.jitter_start];
        while *levels.last().unwrap() * 10.0 <= self.jitter_max * (1.0 + 1e-9) {
            levels.push(levels.last().unwrap() * 10.0);
        }
        levels
    }
}

/// Start points of the multi-start search, as fractions of the log-box.
const START_GRID: [(f64, f64); 8] =
    [(0.5, 0.4), (0.3, 0.7), (0.7, 0.2), (0.1, 0.5), (0.9, 0.9), (0.4, 0.1), (0.6, 0.6), (0.2, 0.3)];

/// Pairwise Euclidean distances of the rows of `x`.
fn distance_matrix(x: &SampleMatrix) -> Vec<f64> {
    let n = x.rows;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let r = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i * n + j] = r;
            d[j * n + i] = r;
        }
    }
    d
}

/// Factorizes `K + jitter I` escalating the jitter on failure.
/// Returns the factor and the absolute jitter that succeeded.
fn factor_with_jitter(k: &mut [f64], n: usize, levels: &[f64]) -> Result<(Cholesky, f64)> {
    let scale = (0..n).map(|i| k[i * n + i]).sum::<f64>() / n as f64;
    let mut tried = Vec::with_capacity(levels.len());
    let mut applied = 0.0;
    for &rel in levels {
        let jitter = rel * scale;
        for i in 0..n {
            k[i * n + i] += jitter - applied;
        }
        applied = jitter;
        tried.push(jitter);
        if let Some(c) = Cholesky::new(k, n) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Factorization { jitters: tried })
}

struct LmlParts {
    value: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    jitter: f64,
}

fn covariance(dist: &[f64], params: &KernelParams) -> Vec<f64> {
    let inv_ell = 1.0 / params.ell;
    dist.iter().map(|&r| params.sigma_f2 * matern32_corr(r, inv_ell)).collect()
}

fn lml_parts(dist: &[f64], n: usize, resid: &[f64], params: &KernelParams, levels: &[f64]) -> Result<LmlParts> {
    let mut k = covariance(dist, params);
    let (chol, jitter) = factor_with_jitter(&mut k, n, levels)?;
    let alpha = chol.solve(resid);
    let value = -0.5 * dot(resid, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * normal::ln_2pi();
    Ok(LmlParts { value, chol, alpha, jitter })
}

/// Log marginal likelihood and its gradient in `(log ell, log sigma_f2)`.
fn lml_with_gradient(dist: &[f64], n: usize, resid: &[f64], theta: &[f64], levels: &[f64]) -> Option<(f64, [f64; 2])> {
    let params = KernelParams::from_log(theta);
    let parts = lml_parts(dist, n, resid, &params, levels).ok()?;
    let kinv = parts.chol.inverse();
    let alpha = &parts.alpha;
    // dK/dlog(sigma_f2) = K (jitter scales with sigma_f2), so the trace term
    // collapses to (y^T alpha - n) / 2.
    let d_sf2 = 0.5 * (dot(resid, alpha) - n as f64);
    // dk/dlog(ell) = sigma_f2 a^2 exp(-a)
    let inv_ell = 1.0 / params.ell;
    let mut d_ell = 0.0;
    for i in 0..n {
        for j in 0..i {
            let a = SQRT_3 * dist[i * n + j] * inv_ell;
            let dk = params.sigma_f2 * a * a * exp_neg(a);
            d_ell += (alpha[i] * alpha[j] - kinv[i * n + j]) * dk;
        }
    }
    // off-diagonal sum counted once above; the matrix is symmetric and the
    // diagonal derivative is zero
    Some((parts.value, [d_ell, d_sf2]))
}

fn validate_training(train_x: &SampleMatrix, train_y: &[f64]) -> Result<()> {
    if train_x.rows != train_y.len() {
        return arg_err(format!("{} inputs but {} responses", train_x.rows, train_y.len()));
    }
    if train_x.rows < 2 {
        return arg_err(format!("need at least 2 training points, got {}", train_x.rows));
    }
    if train_x.data.iter().chain(train_y).any(|v| !v.is_finite()) {
        return arg_err("non-finite training data");
    }
    Ok(())
}

/// `-(1/2) r^T K^{-1} r - (1/2) log det K - (n/2) log 2 pi` with
/// `r = y - mean_const` and `K` the kernel matrix plus jitter.
pub fn log_marginal_likelihood(
    train_x: &SampleMatrix,
    train_y: &[f64],
    mean_const: f64,
    params: &KernelParams,
) -> Result<f64> {
    validate_training(train_x, train_y)?;
    let resid: Vec<f64> = train_y.iter().map(|y| y - mean_const).collect();
    let dist = distance_matrix(train_x);
    Ok(lml_parts(&dist, train_x.rows, &resid, params, &GpConfig::default().jitter_levels())?.value)
}

/// Predictive mean and standard deviation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPrediction {
    pub mu: f64,
    pub sigma: f64,
}

/// A fitted surrogate. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    train_x: SampleMatrix,
    train_y: Vec<f64>,
    mean_const: f64,
    y_scale: f64,
    /// Hyperparameters in the units of the responses.
    params: KernelParams,
    /// Process variance on the standardized responses.
    sigma_f2_std: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    jitter: f64,
    log_likelihood: f64,
    converged: bool,
}

/// Queries processed together by the batched predictors.
const BLOCK: usize = 64;

impl GpModel {
    pub fn fit(train_x: &SampleMatrix, train_y: &[f64]) -> Result<Self> {
        Self::fit_with(train_x, train_y, &GpConfig::default())
    }

    pub fn fit_with(train_x: &SampleMatrix, train_y: &[f64], cfg: &GpConfig) -> Result<Self> {
        validate_training(train_x, train_y)?;
        let n = train_x.rows;
        let mean_const = train_y.iter().sum::<f64>() / n as f64;
        let var = train_y.iter().map(|y| (y - mean_const).powi(2)).sum::<f64>() / n as f64;
        let y_scale = var.sqrt();
        if !(y_scale > 1e-300) || train_y.iter().all(|&y| y == train_y[0]) {
            return Err(Error::DegenerateData("all training responses are identical".into()));
        }
        let resid: Vec<f64> = train_y.iter().map(|y| (y - mean_const) / y_scale).collect();
        let dist = distance_matrix(train_x);
        let levels = cfg.jitter_levels();

        let lo = [cfg.ell_bounds.0.ln(), cfg.sigma_f2_bounds.0.ln()];
        let hi = [cfg.ell_bounds.1.ln(), cfg.sigma_f2_bounds.1.ln()];
        let bounds = Bounds::new(lo.to_vec(), hi.to_vec());
        let opts = LbfgsbOptions::default();

        let mut best: Option<(f64, Vec<f64>, bool)> = None;
        for &(fe, fs) in START_GRID.iter().cycle().take(cfg.restarts.max(1)) {
            let x0 = [lo[0] + fe * (hi[0] - lo[0]), lo[1] + fs * (hi[1] - lo[1])];
            let objective = |theta: &[f64]| {
                lml_with_gradient(&dist, n, &resid, theta, &levels).map(|(v, g)| (-v, vec![-g[0], -g[1]]))
            };
            let Some(m) = minimize(objective, &x0, &bounds, &opts) else { continue };
            // strict improvement only: earlier restarts win ties
            if best.as_ref().is_none_or(|(f, _, _)| m.f < *f) {
                best = Some((m.f, m.x, m.converged));
            }
        }
        let Some((_, theta, converged)) = best else {
            let jitters = levels.iter().map(|l| l * cfg.sigma_f2_bounds.1).collect();
            return Err(Error::Factorization { jitters });
        };
        if !converged {
            log::warn!("GP hyperparameter search did not converge; using best iterate");
        }

        let std_params = KernelParams::from_log(&theta);
        let parts = lml_parts(&dist, n, &resid, &std_params, &levels)?;
        Ok(Self {
            train_x: train_x.clone(),
            train_y: train_y.to_vec(),
            mean_const,
            y_scale,
            params: KernelParams { sigma_f2: std_params.sigma_f2 * y_scale * y_scale, ell: std_params.ell },
            sigma_f2_std: std_params.sigma_f2,
            chol: parts.chol,
            alpha: parts.alpha,
            jitter: parts.jitter,
            log_likelihood: parts.value,
            converged,
        })
    }

    pub fn dim(&self) -> usize {
        self.train_x.cols
    }

    pub fn n_train(&self) -> usize {
        self.train_x.rows
    }

    pub fn train_x(&self) -> &SampleMatrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Jitter added to the diagonal of the standardized covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The same jitter in squared response units, i.e. what is effectively
    /// added to the diagonal of `k(X, X)` built from [`params`](Self::params).
    pub fn jitter_response_units(&self) -> f64 {
        self.jitter * self.y_scale * self.y_scale
    }

    /// Log marginal likelihood of the standardized responses at the optimum.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `false` when the hyperparameter search stopped before converging.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Cholesky factor of the standardized covariance plus jitter.
    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }

    pub fn predict(&self, x_star: &SampleMatrix) -> Result<Vec<GpPrediction>> {
        if x_star.cols != self.dim() {
            return arg_err(format!("query has {} columns, model has {}", x_star.cols, self.dim()));
        }
        let m = self.dim();
        let mut out = vec![GpPrediction { mu: 0.0, sigma: 0.0 }; x_star.rows];
        out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, dst)| {
            let start = b * BLOCK;
            self.predict_block(&x_star.data[start * m..(start + dst.len()) * m], dst);
        });
        Ok(out)
    }

    pub fn predict_point(&self, x: &[f64]) -> Result<GpPrediction> {
        if x.len() != self.dim() {
            return arg_err(format!("query has {} coordinates, model has {}", x.len(), self.dim()));
        }
        let mut out = [GpPrediction { mu: 0.0, sigma: 0.0 }];
        self.predict_block(x, &mut out);
        Ok(out[0])
    }

    /// Predictive means of row-major points, written to `out`.
    pub fn predict_mean_into(&self, points: &[f64], out: &mut [f64]) {
        let m = self.dim();
        debug_assert_eq!(points.len(), out.len() * m);
        let n = self.n_train();
        let inv_ell = 1.0 / self.params.ell;
        let mut soa = vec![0.0; m * BLOCK];
        let mut acc = [0.0; BLOCK];
        for (qblock, oblock) in points.chunks(m * BLOCK).zip(out.chunks_mut(BLOCK)) {
            let q = oblock.len();
            transpose_block(qblock, m, q, &mut soa);
            acc[..q].iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let xi = self.train_x.row(i);
                let wi = self.alpha[i] * self.sigma_f2_std;
                let mut r2 = [0.0; BLOCK];
                for (d, &xid) in xi.iter().enumerate() {
                    let col = &soa[d * BLOCK..d * BLOCK + q];
                    for (r, &c) in r2[..q].iter_mut().zip(col) {
                        *r += (c - xid) * (c - xid);
                    }
                }
                for (a, &r) in acc[..q].iter_mut().zip(&r2[..q]) {
                    *a += wi * matern32_corr(r.sqrt(), inv_ell);
                }
            }
            for (o, &a) in oblock.iter_mut().zip(&acc[..q]) {
                *o = self.mean_const + self.y_scale * a;
            }
        }
    }

    fn predict_block(&self, points: &[f64], dst: &mut [GpPrediction]) {
        let m = self.dim();
        let n = self.n_train();
        let q = dst.len();
        let inv_ell = 1.0 / self.params.ell;
        let sf2 = self.sigma_f2_std;
        // kmat[i * q + b] = k(x_i, query_b); solved in place to L^{-1} k
        let mut kmat = vec![0.0; n * q];
        for i in 0..n {
            let xi = self.train_x.row(i);
            for b in 0..q {
                let xb = &points[b * m..(b + 1) * m];
                let r = xi.iter().zip(xb).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                kmat[i * q + b] = sf2 * matern32_corr(r, inv_ell);
            }
        }
        let mut mean = vec![0.0; q];
        for i in 0..n {
            let ai = self.alpha[i];
            for (mb, &k) in mean.iter_mut().zip(&kmat[i * q..(i + 1) * q]) {
                *mb += ai * k;
            }
        }
        for i in 0..n {
            let row = self.chol.row(i);
            let (done, rest) = kmat.split_at_mut(i * q);
            let cur = &mut rest[..q];
            for (j, &lij) in row[..i].iter().enumerate() {
                let prev = &done[j * q..(j + 1) * q];
                for (c, &p) in cur.iter_mut().zip(prev) {
                    *c -= lij * p;
                }
            }
            let inv = 1.0 / row[i];
            cur.iter_mut().for_each(|c| *c *= inv);
        }
        let mut vv = vec![0.0; q];
        for i in 0..n {
            for (s, &v) in vv.iter_mut().zip(&kmat[i * q..(i + 1) * q]) {
                *s += v * v;
            }
        }
        for b in 0..q {
            let var = (sf2 - vv[b]).max(0.0);
            dst[b] = GpPrediction {
                mu: self.mean_const + self.y_scale * mean[b],
                sigma: self.y_scale * var.sqrt(),
            };
        }
    }
}

fn transpose_block(rows: &[f64], m: usize, q: usize, soa: &mut [f64]) {
    for b in 0..q {
        for d in 0..m {
            soa[d * BLOCK + b] = rows[b * m + d];
        }
    }
}
