//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! A projected L-BFGS: the two-loop recursion runs on the free variables,
//! trial points are projected onto the box, and an Armijo backtracking search
//! along the projected path accepts the step. Variables pinned at a bound with
//! the gradient pointing outward stay fixed for that iteration.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pg_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_rel_tol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 200, pg_tol: 1e-6, f_rel_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Minimizes `objective` over `bounds` starting from `x0`.
///
/// `objective` returns `None` where the function is undefined; the line search
/// treats such points as infinitely bad. Returns `None` only if the start
/// point itself cannot be evaluated.
pub fn minimize<F>(mut objective: F, x0: &[f64], bounds: &Bounds, opts: &LbfgsbOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, bounds) < opts.pg_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !history.is_empty();
            let dir = if use_memory {
                two_loop(&g, &free, &history)
            } else {
                let gnorm = g.iter().zip(&free).filter(|(_, &fr)| fr).map(|(v, _)| v * v).sum::<f64>().sqrt();
                let scale = if history.is_empty() { 1.0 / gnorm.max(1.0) } else { 1.0 };
                g.iter().zip(&free).map(|(&v, &fr)| if fr { -v * scale } else { 0.0 }).collect()
            };
            let slope: f64 = dir.iter().zip(&g).map(|(d, gv)| d * gv).sum();
            if !(slope < 0.0) {
                continue;
            }
            let mut step = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
                bounds.project(&mut trial);
                let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
                if decrease >= 0.0 {
                    step *= 0.5;
                    continue;
                }
                evaluations += 1;
                if let Some((ft, gt)) = objective(&trial) {
                    if ft.is_finite() && ft <= f + ARMIJO_C1 * decrease {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            history.clear();
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            // no descent possible from here: treat as a stationary point
            converged = projected_gradient_norm(&x, &g, bounds) < opts.pg_tol.sqrt();
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let rel = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if rel <= opts.f_rel_tol {
            converged = true;
            break;
        }
    }

    Some(Minimum { x, f, grad: g, iterations, evaluations, converged })
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| (xi - (xi - gi).clamp(bounds.lower[i], bounds.upper[i])).abs())
        .fold(0.0, f64::max)
}

fn two_loop(g: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(&a, &fr)| if fr { a } else { 0.0 }).collect() };
    let dotm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(free).filter(|(_, &fr)| fr).map(|((x, y), _)| x * y).sum()
    };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dotm(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s_last, y_last, _) = history.back().expect("non-empty history");
    let yy = dotm(y_last, y_last);
    let gamma = if yy > 0.0 { dotm(s_last, y_last) / yy } else { 1.0 };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dotm(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    mask(&q).into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let bounds = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let m = minimize(rosenbrock, &[-1.2, 1.0], &bounds, &LbfgsbOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn active_bound() {
        // minimum of the quadratic lies outside the box; solution sits on the bound
        let f = |x: &[f64]| Some(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let bounds = Bounds::new(vec![0.0, 0.0], vec![2.0, 2.0]);
        let m = minimize(f, &[1.0, 1.0], &bounds, &LbfgsbOptions::default()).unwrap();
        assert!((m.x[0] - 2.0).abs() < 1e-9 && m.x[1].abs() < 1e-9, "{:?}", m.x);
        assert!(m.converged);
    }

    #[test]
    fn undefined_region_is_avoided() {
        // objective undefined for x > 1.5; minimum of the defined part at x = 1
        let f = |x: &[f64]| if x[0] > 1.5 { None } else { Some(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)])) };
        let bounds = Bounds::new(vec![-10.0], vec![10.0]);
        let m = minimize(f, &[-8.0], &bounds, &LbfgsbOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn start_outside_box_is_projected() {
        let f = |x: &[f64]| Some((x[0] * x[0], vec![2.0 * x[0]]));
        let bounds = Bounds::new(vec![1.0], vec![4.0]);
        let m = minimize(f, &[9.0], &bounds, &LbfgsbOptions::default()).unwrap();
        assert_eq!(m.x, vec![1.0]);
    }
}
