//! Bi-objective view of a candidate pool and its non-dominated front.
//!
//! Both objectives are maximized: `f_mu = -|mu|` rewards proximity to the
//! limit state and `f_sigma = sigma` rewards predictive uncertainty.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::gp::GpPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    pub f_mu: f64,
    pub f_sigma: f64,
}

impl ObjectivePair {
    pub fn new(f_mu: f64, f_sigma: f64) -> Self {
        Self { f_mu, f_sigma }
    }

    /// Weak dominance with at least one strict improvement (maximization).
    pub fn dominates(&self, other: &ObjectivePair) -> bool {
        self.f_mu >= other.f_mu
            && self.f_sigma >= other.f_sigma
            && (self.f_mu > other.f_mu || self.f_sigma > other.f_sigma)
    }
}

impl From<GpPrediction> for ObjectivePair {
    fn from(p: GpPrediction) -> Self {
        Self { f_mu: -p.mu.abs(), f_sigma: p.sigma }
    }
}

pub fn objectives(preds: &[GpPrediction]) -> Vec<ObjectivePair> {
    preds.iter().map(|&p| p.into()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBounds {
    pub f_mu_min: f64,
    pub f_mu_max: f64,
    pub f_sigma_min: f64,
    pub f_sigma_max: f64,
}

/// Non-dominated members of a pool, ordered from the exploitation extreme
/// (largest `f_mu`) to the exploration extreme (largest `f_sigma`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    /// Pool indices of the members.
    pub indices: Vec<usize>,
    pub raw: Vec<ObjectivePair>,
    /// Min-max normalized objectives, in `[0, 1]`.
    pub normalized: Vec<ObjectivePair>,
    pub bounds: ObjectiveBounds,
}

impl ParetoSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of pool index `idx` within the front.
    pub fn position(&self, idx: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == idx)
    }

    /// Position of the member whose raw objectives equal `pair`.
    pub fn position_of_pair(&self, pair: &ObjectivePair) -> Option<usize> {
        self.raw.iter().position(|p| p.f_mu == pair.f_mu && p.f_sigma == pair.f_sigma)
    }
}

/// Extracts the non-dominated set by a sort-and-sweep in `O(n log n)`.
///
/// Exact duplicates in objective space keep only the lowest pool index. The
/// returned set is already normalized.
///
/// # Panics
/// If `pairs` is empty.
pub fn extract_pareto(pairs: &[ObjectivePair]) -> ParetoSet {
    assert!(!pairs.is_empty(), "cannot extract a front from an empty pool");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        let (pa, pb) = (&pairs[a], &pairs[b]);
        pb.f_mu
            .partial_cmp(&pa.f_mu)
            .unwrap_or(Ordering::Equal)
            .then(pb.f_sigma.partial_cmp(&pa.f_sigma).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    // Every earlier point has f_mu >= the current one, so the current point
    // survives only if it beats the best f_sigma seen so far.
    let mut best_sigma = f64::NEG_INFINITY;
    let mut indices = Vec::new();
    for i in order {
        if pairs[i].f_sigma > best_sigma {
            best_sigma = pairs[i].f_sigma;
            indices.push(i);
        }
    }
    let raw: Vec<ObjectivePair> = indices.iter().map(|&i| pairs[i]).collect();
    normalize(ParetoSet {
        indices,
        normalized: raw.clone(),
        raw,
        bounds: ObjectiveBounds { f_mu_min: 0.0, f_mu_max: 0.0, f_sigma_min: 0.0, f_sigma_max: 0.0 },
    })
}

/// Min-max normalizes the raw objectives over the front itself. An objective
/// that is constant across the front maps to 0.5 for every member.
pub fn normalize(mut front: ParetoSet) -> ParetoSet {
    let fold = |f: fn(&ObjectivePair) -> f64| {
        front.raw.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (mu_lo, mu_hi) = fold(|p| p.f_mu);
    let (sg_lo, sg_hi) = fold(|p| p.f_sigma);
    let scale = |v: f64, lo: f64, hi: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    front.normalized = front
        .raw
        .iter()
        .map(|p| ObjectivePair { f_mu: scale(p.f_mu, mu_lo, mu_hi), f_sigma: scale(p.f_sigma, sg_lo, sg_hi) })
        .collect();
    front.bounds = ObjectiveBounds { f_mu_min: mu_lo, f_mu_max: mu_hi, f_sigma_min: sg_lo, f_sigma_max: sg_hi };
    front
}
