//! Sample-selection strategies.
//!
//! `U` and `EFF` score every candidate of the pool. The Pareto strategies pick
//! a member of the normalized non-dominated front: the knee point (largest
//! distance to the line joining the two extremes), the compromise solution
//! (closest to the ideal point) and the adaptive rule, which blends the two
//! normalized objectives with a logistic weight driven by recent changes of
//! the failure-probability estimate.
//!
//! Every argmin/argmax breaks ties towards the lowest pool index. Each
//! selector has a `_where` form that only considers admissible pool indices.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::gp::GpPrediction;
use crate::normal;
use crate::pareto::{ObjectivePair, ParetoSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    U,
    Eff,
    MooK,
    MooC,
    MooR,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::U, Strategy::Eff, Strategy::MooK, Strategy::MooC, Strategy::MooR];

    pub fn token(self) -> &'static str {
        match self {
            Strategy::U => "u",
            Strategy::Eff => "eff",
            Strategy::MooK => "moo-k",
            Strategy::MooC => "moo-c",
            Strategy::MooR => "moo-r",
        }
    }

    /// Whether the strategy picks from the Pareto front rather than the whole pool.
    pub fn uses_front(self) -> bool {
        matches!(self, Strategy::MooK | Strategy::MooC | Strategy::MooR)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl From<Strategy> for String {
    fn from(v: Strategy) -> String {
        v.token().to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|st| st.token() == s).ok_or_else(|| {
            let valid: Vec<_> = Strategy::ALL.iter().map(|st| st.token()).collect();
            Error::Argument(format!("unknown strategy '{s}', expected one of: {}", valid.join(", ")))
        })
    }
}

/// Half-width of the EFF integration window in units of sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffConfig {
    pub c: f64,
}

impl Default for EffConfig {
    fn default() -> Self {
        Self { c: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MooRConfig {
    pub gamma_max: f64,
    pub lambda: f64,
    pub delta_p0: f64,
    /// Number of consecutive relative changes averaged.
    pub window: usize,
}

impl Default for MooRConfig {
    fn default() -> Self {
        Self { gamma_max: 1.0, lambda: 40.0, delta_p0: 0.2, window: 3 }
    }
}

impl MooRConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_max > 0.0 && self.gamma_max <= 1.0) {
            return arg_err(format!("gamma_max must lie in (0, 1], got {}", self.gamma_max));
        }
        if !(self.lambda > 0.0) || !(self.delta_p0 > 0.0) || self.window == 0 {
            return arg_err("lambda and delta_p0 must be positive and window at least 1");
        }
        Ok(())
    }
}

/// Sliding history of failure-probability estimates for the adaptive rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MooRState {
    window: usize,
    pf_history: VecDeque<f64>,
    iteration: usize,
}

impl MooRState {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self { window, pf_history: VecDeque::with_capacity(window + 1), iteration: 0 }
    }

    pub fn push(&mut self, p_f: f64) {
        if self.pf_history.len() == self.window + 1 {
            self.pf_history.pop_front();
        }
        self.pf_history.push_back(p_f);
        self.iteration += 1;
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.pf_history.iter().copied()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// True once a full window of consecutive changes is available.
    pub fn window_filled(&self) -> bool {
        self.pf_history.len() == self.window + 1
    }

    /// Mean relative change `|p[j+1] - p[j]| / p[j]` over the stored pairs.
    ///
    /// `None` with fewer than two estimates or a zero denominator.
    pub fn delta_pf_avg(&self) -> Option<f64> {
        if self.pf_history.len() < 2 {
            return None;
        }
        let mut sum = 0.0;
        let mut count = 0;
        for (prev, next) in self.pf_history.iter().zip(self.pf_history.iter().skip(1)) {
            if *prev == 0.0 {
                return None;
            }
            sum += (next - prev).abs() / prev;
            count += 1;
        }
        Some(sum / count as f64)
    }
}

pub fn delta_pf_avg(state: &MooRState) -> Option<f64> {
    state.delta_pf_avg()
}

/// Logistic exploration weight `gamma_max / (1 + exp(-lambda (delta - delta_p0)))`.
pub fn gamma(delta_pf: f64, cfg: &MooRConfig) -> f64 {
    cfg.gamma_max / (1.0 + (-cfg.lambda * (delta_pf - cfg.delta_p0)).exp())
}

/// The weight the adaptive rule would use now, or `None` while it still
/// defaults to pure exploration.
pub fn moor_gamma(state: &MooRState, cfg: &MooRConfig) -> Option<f64> {
    if !state.window_filled() {
        return None;
    }
    state.delta_pf_avg().map(|d| gamma(d, cfg))
}

fn better_min(score: f64, idx: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((s, i)) => score < s || (score == s && idx < i),
    }
}

fn better_max(score: f64, idx: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((s, i)) => score > s || (score == s && idx < i),
    }
}

/// Moves a pool selection to a dominating candidate while one exists.
///
/// The U and EFF scores are monotone in both objectives, so this only fires
/// when rounding made a dominated candidate score as well as its dominator.
fn climb_dominance<S, A>(preds: &[GpPrediction], mut chosen: usize, score: S, maximize: bool, admissible: A) -> usize
where
    S: Fn(usize) -> f64,
    A: Fn(usize) -> bool,
{
    loop {
        let cur = ObjectivePair::from(preds[chosen]);
        let mut next: Option<(f64, usize)> = None;
        for (i, &p) in preds.iter().enumerate() {
            if i != chosen && admissible(i) && ObjectivePair::from(p).dominates(&cur) {
                let s = score(i);
                let better = if maximize { better_max(s, i, next) } else { better_min(s, i, next) };
                if better {
                    next = Some((s, i));
                }
            }
        }
        match next {
            Some((_, i)) => chosen = i,
            None => return chosen,
        }
    }
}

/// `U = |mu| / sigma`; infinite where `sigma == 0`.
pub fn u_value(p: &GpPrediction) -> f64 {
    if p.sigma > 0.0 {
        p.mu.abs() / p.sigma
    } else {
        f64::INFINITY
    }
}

pub fn select_u(preds: &[GpPrediction]) -> Result<usize> {
    select_u_where(preds, |_| true)
}

/// Argmin of `|mu| / sigma` over admissible candidates with `sigma > 0`.
pub fn select_u_where(preds: &[GpPrediction], admissible: impl Fn(usize) -> bool) -> Result<usize> {
    let mut best = None;
    for (i, p) in preds.iter().enumerate() {
        if p.sigma > 0.0 && admissible(i) {
            let u = u_value(p);
            if better_min(u, i, best) {
                best = Some((u, i));
            }
        }
    }
    let (_, idx) = best.ok_or_else(|| Error::DegeneratePool("no admissible candidate with sigma > 0".into()))?;
    Ok(climb_dominance(preds, idx, |i| u_value(&preds[i]), false, |i| preds[i].sigma > 0.0 && admissible(i)))
}

/// `int_0^c (c - z) phi(z - b) dz`.
fn half_window(b: f64, c: f64) -> f64 {
    (c - b) * normal::interval_mass(-b, c - b) + normal::pdf(c - b) - normal::pdf(b)
}

/// Expected feasibility `int_{-eps}^{eps} (eps - |y|) N(y; mu, sigma) dy` with
/// `eps = c * sigma`, evaluated in closed form as `sigma * Psi(mu / sigma)`.
pub fn eff_value(mu: f64, sigma: f64, cfg: &EffConfig) -> Result<f64> {
    if !(sigma > 0.0) {
        return arg_err(format!("EFF needs sigma > 0, got {sigma}"));
    }
    if !(cfg.c > 0.0) {
        return arg_err(format!("EFF window constant must be positive, got {}", cfg.c));
    }
    let a = mu.abs() / sigma;
    let psi = half_window(a, cfg.c) + half_window(-a, cfg.c);
    Ok(sigma * psi.max(0.0))
}

fn eff_score(p: &GpPrediction, cfg: &EffConfig) -> f64 {
    if p.sigma > 0.0 {
        eff_value(p.mu, p.sigma, cfg).unwrap_or(0.0)
    } else {
        0.0
    }
}

pub fn select_eff(preds: &[GpPrediction], cfg: &EffConfig) -> Result<usize> {
    select_eff_where(preds, cfg, |_| true)
}

/// Argmax of EFF over admissible candidates; `sigma == 0` scores zero.
pub fn select_eff_where(preds: &[GpPrediction], cfg: &EffConfig, admissible: impl Fn(usize) -> bool) -> Result<usize> {
    let scores: Vec<f64> = preds.iter().map(|p| eff_score(p, cfg)).collect();
    let mut best = None;
    for (i, &s) in scores.iter().enumerate() {
        if admissible(i) && better_max(s, i, best) {
            best = Some((s, i));
        }
    }
    let (_, idx) = best.ok_or_else(|| Error::DegeneratePool("no admissible candidate".into()))?;
    Ok(climb_dominance(preds, idx, |i| scores[i], true, &admissible))
}

fn argbest_member<F>(front: &ParetoSet, admissible: impl Fn(usize) -> bool, maximize: bool, score: F) -> Option<usize>
where
    F: Fn(usize) -> f64,
{
    let mut best: Option<(f64, usize)> = None;
    let mut best_pos = None;
    for (pos, &idx) in front.indices.iter().enumerate() {
        if !admissible(idx) {
            continue;
        }
        let s = score(pos);
        let better = if maximize { better_max(s, idx, best) } else { better_min(s, idx, best) };
        if better {
            best = Some((s, idx));
            best_pos = Some(pos);
        }
    }
    best_pos
}

/// Perpendicular distance of each normalized member to the line through the
/// exploitation extreme `(max f_mu, min f_sigma)` and the exploration extreme
/// `(min f_mu, max f_sigma)`, via orthogonal projection.
pub fn knee_distances(front: &ParetoSet) -> Vec<f64> {
    let (mu_lo, mu_hi, sg_lo, sg_hi) = normalized_extent(front);
    let a = (mu_hi, sg_lo);
    let u = (mu_lo - mu_hi, sg_hi - sg_lo);
    let uu = u.0 * u.0 + u.1 * u.1;
    front
        .normalized
        .iter()
        .map(|f| {
            let d = (f.f_mu - a.0, f.f_sigma - a.1);
            let t = if uu > 0.0 { (d.0 * u.0 + d.1 * u.1) / uu } else { 0.0 };
            let r = (d.0 - t * u.0, d.1 - t * u.1);
            (r.0 * r.0 + r.1 * r.1).sqrt()
        })
        .collect()
}

fn normalized_extent(front: &ParetoSet) -> (f64, f64, f64, f64) {
    front.normalized.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.f_mu), b.max(p.f_mu), c.min(p.f_sigma), d.max(p.f_sigma)),
    )
}

pub fn select_knee(front: &ParetoSet) -> usize {
    select_knee_where(front, |_| true).expect("front is non-empty")
}

/// Knee point; fronts with at most two members fall back to the
/// exploitation extreme. `None` if no member is admissible.
pub fn select_knee_where(front: &ParetoSet, admissible: impl Fn(usize) -> bool) -> Option<usize> {
    let pos = if front.len() <= 2 {
        argbest_member(front, admissible, true, |p| front.normalized[p].f_mu)
    } else {
        let dist = knee_distances(front);
        argbest_member(front, admissible, true, |p| dist[p])
    }?;
    Some(front.indices[pos])
}

/// Squared distances of the normalized members to the ideal point.
pub fn ideal_gaps(front: &ParetoSet) -> Vec<(f64, f64)> {
    let (_, mu_hi, _, sg_hi) = normalized_extent(front);
    front.normalized.iter().map(|f| (mu_hi - f.f_mu, sg_hi - f.f_sigma)).collect()
}

pub fn select_compromise(front: &ParetoSet) -> usize {
    select_compromise_where(front, |_| true).expect("front is non-empty")
}

/// Member closest (Euclidean) to the ideal point in normalized space.
pub fn select_compromise_where(front: &ParetoSet, admissible: impl Fn(usize) -> bool) -> Option<usize> {
    let gaps = ideal_gaps(front);
    argbest_member(front, admissible, false, |p| gaps[p].0 * gaps[p].0 + gaps[p].1 * gaps[p].1)
        .map(|p| front.indices[p])
}

pub fn select_moor(front: &ParetoSet, state: &MooRState, cfg: &MooRConfig) -> usize {
    select_moor_where(front, state, cfg, |_| true).expect("front is non-empty")
}

/// Adaptive selection: most exploratory member until a full window of
/// estimates exists (or a zero estimate blocks the relative change), then
/// argmax of `(1 - gamma) f_mu + gamma f_sigma`.
pub fn select_moor_where(
    front: &ParetoSet,
    state: &MooRState,
    cfg: &MooRConfig,
    admissible: impl Fn(usize) -> bool,
) -> Option<usize> {
    select_moor_with_gamma(front, moor_gamma(state, cfg), admissible)
}

/// MOO-R selection for an explicit weight; `None` means pure exploration.
pub fn select_moor_with_gamma(
    front: &ParetoSet,
    gamma: Option<f64>,
    admissible: impl Fn(usize) -> bool,
) -> Option<usize> {
    let pos = match gamma {
        None => argbest_member(front, admissible, true, |p| front.normalized[p].f_sigma),
        Some(g) => argbest_member(front, admissible, true, |p| {
            let f = front.normalized[p];
            (1.0 - g) * f.f_mu + g * f.f_sigma
        }),
    }?;
    Some(front.indices[pos])
}

/// Range of scalarization weights under which a front member is selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightInterval {
    pub w_min: f64,
    pub w_max: f64,
    pub w_bar: f64,
    /// Set when the member never wins on the grid; the interval then collapses
    /// to the weight where it ranks best.
    pub degenerate: bool,
}

pub const DEFAULT_WEIGHT_GRID: usize = 1001;

/// Back-computes the weights `w` for which `selected` (a pool index) minimizes
/// `sqrt(w * dmu^2 + (1 - w) * dsigma^2)`, where `dmu`, `dsigma` are the
/// member's gaps to the ideal point. `w = 0` is pure exploration and `w = 1`
/// pure exploitation.
pub fn weight_interval(front: &ParetoSet, selected: usize, grid_size: usize) -> Result<WeightInterval> {
    let Some(target) = front.position(selected) else {
        return arg_err(format!("pool index {selected} is not a member of the front"));
    };
    if grid_size < 2 {
        return arg_err(format!("weight grid needs at least 2 points, got {grid_size}"));
    }
    if front.len() == 1 {
        return Ok(WeightInterval { w_min: 0.0, w_max: 1.0, w_bar: 0.5, degenerate: false });
    }
    let gaps = ideal_gaps(front);
    let step = 1.0 / (grid_size - 1) as f64;
    let score = |pos: usize, w: f64| w * gaps[pos].0 * gaps[pos].0 + (1.0 - w) * gaps[pos].1 * gaps[pos].1;
    let winner = |w: f64| argbest_member(front, |_| true, false, |p| score(p, w)).expect("non-empty front");

    let mut first = None;
    let mut last = None;
    for g in 0..grid_size {
        let w = g as f64 * step;
        if winner(w) == target {
            first.get_or_insert(g);
            last = Some(g);
        }
    }
    if let (Some(lo), Some(hi)) = (first, last) {
        let w_min = if lo == 0 { 0.0 } else { (lo as f64 - 0.5) * step };
        let w_max = if hi == grid_size - 1 { 1.0 } else { (hi as f64 + 0.5) * step };
        return Ok(WeightInterval { w_min, w_max, w_bar: 0.5 * (w_min + w_max), degenerate: false });
    }

    // never selected: report the weight where it ranks highest
    let idx = front.indices[target];
    let mut best: Option<(usize, usize)> = None;
    for g in 0..grid_size {
        let w = g as f64 * step;
        let s = score(target, w);
        let rank = (0..front.len())
            .filter(|&p| {
                let o = score(p, w);
                p != target && (o < s || (o == s && front.indices[p] < idx))
            })
            .count();
        if best.is_none_or(|(r, _)| rank < r) {
            best = Some((rank, g));
        }
    }
    let w = best.map_or(0.0, |(_, g)| g as f64 * step);
    Ok(WeightInterval { w_min: w, w_max: w, w_bar: w, degenerate: true })
}
