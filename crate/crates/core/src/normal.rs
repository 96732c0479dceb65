//! Standard normal density, distribution and quantile functions.

// Published coefficients are kept exactly as printed.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Lower tail probability `P(Z <= x)`.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail probability `P(Z > x)`, accurate deep into the right tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P(lo < Z <= hi)` computed from whichever tail avoids cancellation.
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo >= 0.0 {
        sf(lo) - sf(hi)
    } else if hi <= 0.0 {
        cdf(hi) - cdf(lo)
    } else {
        1.0 - cdf(lo) - sf(hi)
    }
}

pub fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

// Wichura, Algorithm AS 241 (PPND16). Relative accuracy about 1e-16.
const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Inverse of the standard normal CDF.
///
/// Returns `-inf` at 0 and `+inf` at 1; NaN outside `[0, 1]`.
pub fn ppf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        r -= 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppf_known_values() {
        assert_eq!(ppf(0.5), 0.0);
        assert!((ppf(0.977_249_868_051_820_8) - 2.0).abs() < 1e-12);
        assert!((ppf(0.9772498) - 2.0).abs() < 1e-5);
        // scipy.special.ndtri(1e-10)
        assert!((ppf(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for i in 1..2000 {
            let x = -7.0 + 14.0 * i as f64 / 2000.0;
            // take the lower tail so that p carries full relative precision
            let p = if x <= 0.0 { cdf(x) } else { sf(x) };
            let back = if x <= 0.0 { ppf(p) } else { -ppf(p) };
            assert!((back - x).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn ppf_symmetry() {
        // dyadic values so that 1 - u is exact
        for k in [1, 3, 10, 20, 30, 40] {
            let u = 0.5f64.powi(k) * 0.75;
            assert!((ppf(u) + ppf(1.0 - u)).abs() < 1e-9, "u={u}");
        }
    }

    #[test]
    fn interval_mass_matches_difference() {
        assert!((interval_mass(-2.0, 2.0) - (cdf(2.0) - cdf(-2.0))).abs() < 1e-15);
        assert!((interval_mass(8.0, 9.0) - (sf(8.0) - sf(9.0))).abs() < 1e-30);
        assert!(interval_mass(8.0, 9.0) > 0.0);
        assert_eq!(interval_mass(1.0, 1.0), 0.0);
    }
}
