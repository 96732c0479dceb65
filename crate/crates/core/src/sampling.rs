//! Seeded Latin Hypercube designs and Monte Carlo pools.
//!
//! All generators are pure functions of their arguments and a `u64` seed.
//! Normal samples are produced in fixed-size chunks, each with its own
//! derived ChaCha stream, so chunked parallel consumers see exactly the same
//! numbers as a sequential pass.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::normal;

/// Points per normal-sample chunk.
pub const CHUNK_POINTS: usize = 1 << 15;

/// Seed-stream domains, so independent consumers never share a stream.
pub mod domain {
    pub const LHS: u64 = 0x4c48_5300;
    pub const POOL: u64 = 0x504f_4f4c;
    pub const MCS: u64 = 0x4d43_5300;
    pub const RETRY: u64 = 0x5254_5259;
    pub const CHUNK: u64 = 0x4348_4e4b;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed split: a distinct, reproducible seed for each
/// `(base, domain, counter)` triple.
pub fn derive_seed(base: u64, domain: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(domain)) ^ splitmix64(counter))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major `rows x cols` matrix of sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return arg_err(format!("{} values do not fill a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }
}

/// Latin Hypercube design of `n` points in `(0,1)^m`.
///
/// Each column holds exactly one point per stratum `[j/n, (j+1)/n)`, placed
/// uniformly at random inside the stratum; strata are permuted independently
/// per column.
pub fn lhs_unit_hypercube(n: usize, m: usize, seed: u64) -> Result<SampleMatrix> {
    if n == 0 || m == 0 {
        return arg_err(format!("LHS needs n >= 1 and m >= 1, got n={n} m={m}"));
    }
    let mut rng = rng_from(derive_seed(seed, domain::LHS, 0));
    let mut data = vec![0.0; n * m];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..m {
        perm.shuffle(&mut rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let offset: f64 = rng.sample(Open01);
            data[i * m + j] = (stratum as f64 + offset) / n as f64;
        }
    }
    // (stratum + offset) / n can round up to 1.0 in the top stratum
    for v in &mut data {
        if *v >= 1.0 {
            *v = 1.0 - f64::EPSILON / 2.0;
        }
    }
    Ok(SampleMatrix { rows: n, cols: m, data })
}

/// Componentwise inverse standard-normal CDF of a matrix in `(0,1)`.
pub fn unit_to_standard_normal(u: &SampleMatrix) -> Result<SampleMatrix> {
    if let Some(bad) = u.data.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return arg_err(format!("value {bad} outside the open unit interval"));
    }
    Ok(SampleMatrix { rows: u.rows, cols: u.cols, data: u.data.iter().map(|&v| normal::ppf(v)).collect() })
}

/// A contiguous block of a chunked normal sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub index: u64,
    pub start: usize,
    pub len: usize,
}

/// Splits `n` points into the canonical chunk layout.
pub fn normal_chunks(n: usize) -> Vec<Chunk> {
    (0..n.div_ceil(CHUNK_POINTS))
        .map(|c| {
            let start = c * CHUNK_POINTS;
            Chunk { index: c as u64, start, len: CHUNK_POINTS.min(n - start) }
        })
        .collect()
}

/// The `chunk.len * m` standard-normal values of one chunk, row-major.
pub fn normal_chunk(seed: u64, chunk: Chunk, m: usize) -> Vec<f64> {
    let mut rng = rng_from(derive_seed(seed, domain::CHUNK, chunk.index));
    (0..chunk.len * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `n` i.i.d. standard-normal points in `m` dimensions.
pub fn mcs_pool(n: usize, m: usize, seed: u64) -> Result<SampleMatrix> {
    if n == 0 || m == 0 {
        return arg_err(format!("pool needs n >= 1 and m >= 1, got n={n} m={m}"));
    }
    let mut data = Vec::with_capacity(n * m);
    for chunk in normal_chunks(n) {
        data.extend(normal_chunk(seed, chunk, m));
    }
    Ok(SampleMatrix { rows: n, cols: m, data })
}
