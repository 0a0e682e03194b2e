//! Counter-based Gaussian noise for path simulation.
//!
//! Every increment is a pure function of `(seed, path, step, component)`, so
//! streams are reproducible bit-for-bit regardless of evaluation order or
//! worker count. Uniforms come from a splitmix64-style finalizer over the
//! counters; Gaussians via the inverse normal CDF (Wichura's AS 241, double
//! precision), which keeps output identical across platforms — no
//! rejection-sampling state to desynchronize.

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64 deterministic bits for the given counters.
#[inline]
pub fn bits(seed: u64, path: u64, step: u64, component: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h = mix(h ^ path.wrapping_mul(0xA076_1D64_78BD_642F));
    h = mix(h ^ step.wrapping_mul(0xE703_7ED1_A0B4_28DB));
    h = mix(h ^ component.wrapping_mul(0x8EBC_6AF0_9C88_C6E3));
    h
}

/// Uniform in the open interval (0, 1), 53-bit resolution.
#[inline]
pub fn uniform(seed: u64, path: u64, step: u64, component: u64) -> f64 {
    let u = bits(seed, path, step, component) >> 11;
    (u as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw for the given counters.
#[inline]
pub fn standard_normal(seed: u64, path: u64, step: u64, component: u64) -> f64 {
    inverse_normal_cdf(uniform(seed, path, step, component))
}

/// Inverse of the standard normal CDF (AS 241, PPND16). Relative error below
/// 1e-15 on (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = poly(
            &[
                3.387_132_872_796_366_608e0,
                1.331_416_678_917_843_774_5e2,
                1.971_590_950_306_551_442_7e3,
                1.373_169_376_550_946_112_5e4,
                4.592_195_393_154_987_145_7e4,
                6.726_577_092_700_870_085_3e4,
                3.343_057_558_358_812_810_5e4,
                2.509_080_928_730_122_672_7e3,
            ],
            r,
        );
        let den = poly(
            &[
                1.0,
                4.231_333_070_160_091_125_2e1,
                6.871_870_074_920_579_083e2,
                5.394_196_021_424_751_107_7e3,
                2.121_379_430_158_659_586_7e4,
                3.930_789_580_009_271_061e4,
                2.872_908_573_572_194_267_4e4,
                5.226_495_278_852_854_561e3,
            ],
            r,
        );
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let s = r - 1.6;
        let num = poly(
            &[
                1.423_437_110_749_683_577_34e0,
                4.630_337_846_156_545_295_9e0,
                5.769_497_221_460_691_405_5e0,
                3.647_848_324_763_204_605_04e0,
                1.270_458_252_452_368_382_58e0,
                2.417_807_251_774_506_117_7e-1,
                2.272_384_498_926_918_458_33e-2,
                7.745_450_142_783_414_076_4e-4,
            ],
            s,
        );
        let den = poly(
            &[
                1.0,
                2.053_191_626_637_758_821_87e0,
                1.676_384_830_183_803_849_4e0,
                6.897_673_349_851_000_045_5e-1,
                1.481_039_764_274_800_745_9e-1,
                1.519_866_656_361_645_719_66e-2,
                5.475_938_084_995_344_946e-4,
                1.050_750_071_644_416_843_24e-9,
            ],
            s,
        );
        num / den
    } else {
        let s = r - 5.0;
        let num = poly(
            &[
                6.657_904_643_501_103_777_2e0,
                5.463_784_911_164_114_369_9e0,
                1.784_826_539_917_291_335_8e0,
                2.965_605_718_285_048_912_3e-1,
                2.653_218_952_657_612_309_3e-2,
                1.242_660_947_388_078_438_6e-3,
                2.711_555_568_743_487_578_15e-5,
                2.010_334_399_292_288_132_65e-7,
            ],
            s,
        );
        let den = poly(
            &[
                1.0,
                5.998_322_065_558_879_376_9e-1,
                1.369_298_809_227_358_053_1e-1,
                1.487_536_129_085_061_485_25e-2,
                7.868_691_311_456_132_591e-4,
                1.846_318_317_510_054_681_8e-5,
                1.421_511_758_316_445_888_7e-7,
                2.044_263_103_389_939_785_64e-15,
            ],
            s,
        );
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
fn poly(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn inverse_cdf_matches_reference_quantiles() {
        // Frozen reference quantiles, cross-checked against statrs below.
        assert!((inverse_normal_cdf(0.5)).abs() < 1e-15);
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.025) + 1.959_963_984_540_054).abs() < 1e-12);

        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-6] {
            let x = inverse_normal_cdf(p);
            assert!((n.cdf(x) - p).abs() < 1e-12, "p={p}: round-trip {}", n.cdf(x));
        }
    }

    #[test]
    fn symmetry_and_determinism() {
        let a = standard_normal(42, 7, 3, 0);
        let b = standard_normal(42, 7, 3, 0);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(
            standard_normal(42, 7, 3, 0).to_bits(),
            standard_normal(42, 7, 4, 0).to_bits()
        );
    }

    #[test]
    fn moments_are_sane() {
        let m = 200_000u64;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let z = standard_normal(9, i, 0, 0);
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        let n = m as f64;
        assert!((s1 / n).abs() < 0.01);
        assert!((s2 / n - 1.0).abs() < 0.01);
        assert!((s4 / n - 3.0).abs() < 0.08);
    }
}
