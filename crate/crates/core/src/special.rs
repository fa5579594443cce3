//! Scalar special functions: the standard normal distribution in log space,
//! Owen's T function, and the skew-normal distribution function.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};
use std::sync::OnceLock;

use libm::erfc;

/// ln(2π)/2
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const ONE_OVER_2PI: f64 = 0.159_154_943_091_895_35;
const ONE_OVER_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal cdf.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal log density.
#[inline]
pub fn norm_log_pdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

/// log Φ(x), accurate in both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 0.0 {
        // Φ(-x) is small here; log1p keeps full precision.
        let q = norm_cdf(-x);
        return (-q).ln_1p();
    }
    if x > -37.0 {
        return norm_cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Asymptotic Mills-ratio expansion; |x| > 37 makes 1/x^2 < 7.4e-4.
    let inv2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..10 {
        term *= -((2 * k - 1) as f64) * inv2;
        series += term;
    }
    -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// log(1 - exp(x)) for x <= 0.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// log(exp(a) + exp(b)).
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Max-shifted log-sum-exp; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// log(F(hi) - F(lo)) for a continuous distribution given its log cdf and
/// log survival function. Picks the representation that avoids cancellation.
pub fn log_diff_cdf<C, S>(lo: f64, hi: f64, log_cdf: C, log_sf: S) -> f64
where
    C: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    if hi == f64::INFINITY {
        return log_sf(lo);
    }
    if lo == f64::NEG_INFINITY {
        return log_cdf(hi);
    }
    let lc_hi = log_cdf(hi);
    if lc_hi <= -LN_2 {
        let lc_lo = log_cdf(lo);
        return lc_hi + log1m_exp(lc_lo - lc_hi);
    }
    let ls_lo = log_sf(lo);
    if ls_lo <= -LN_2 {
        let ls_hi = log_sf(hi);
        return ls_lo + log1m_exp(ls_hi - ls_lo);
    }
    (-(log_cdf(lo).exp() + log_sf(hi).exp())).ln_1p()
}

/// log(Φ(hi) - Φ(lo)).
#[inline]
pub fn log_norm_diff(lo: f64, hi: f64) -> f64 {
    log_diff_cdf(lo, hi, log_norm_cdf, |x| log_norm_cdf(-x))
}

/// Owen's T function T(h, a) = (1/2π) ∫₀ᵃ exp(-h²(1+x²)/2) / (1+x²) dx.
///
/// Patefield–Tandy algorithm: one of six series or quadrature methods is
/// selected from a grid over (h, a); absolute accuracy is about 1e-16.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if h.is_nan() || a.is_nan() {
        return f64::NAN;
    }
    if a == 0.0 {
        return 0.0;
    }
    let absh = h.abs();
    if absh == f64::INFINITY {
        return 0.0;
    }
    let absa = a.abs();
    let t = if absa == f64::INFINITY {
        if absh == 0.0 {
            0.25
        } else {
            0.5 * norm_cdf(-absh)
        }
    } else if absh == 0.0 {
        absa.atan() * ONE_OVER_2PI
    } else {
        let ah = absa * absh;
        if absa <= 1.0 {
            t_core(absh, absa, ah)
        } else if absh <= 0.67 {
            let nh = norm_cdf(absh) - 0.5;
            let nah = norm_cdf(ah) - 0.5;
            0.25 - nh * nah - t_core(ah, 1.0 / absa, absh)
        } else {
            let qh = norm_cdf(-absh);
            let qah = norm_cdf(-ah);
            0.5 * (qh + qah) - qh * qah - t_core(ah, 1.0 / absa, absh)
        }
    };
    if a < 0.0 {
        -t
    } else {
        t
    }
}

// Requires h >= 0, 0 <= a <= 1, ah = a*h.
fn t_core(h: f64, a: f64, ah: f64) -> f64 {
    const H_RANGE: [f64; 14] = [
        0.02, 0.06, 0.09, 0.125, 0.26, 0.4, 0.6, 1.6, 1.7, 2.33, 2.4, 3.36, 3.4, 4.8,
    ];
    const A_RANGE: [f64; 7] = [0.025, 0.09, 0.15, 0.36, 0.5, 0.9, 0.99999];
    const SELECT: [[u8; 15]; 8] = [
        [1, 1, 2, 13, 13, 13, 13, 13, 13, 13, 13, 16, 16, 16, 9],
        [1, 2, 2, 3, 3, 5, 5, 14, 14, 15, 15, 16, 16, 16, 9],
        [2, 2, 3, 3, 3, 5, 5, 15, 15, 15, 15, 16, 16, 16, 10],
        [2, 2, 3, 5, 5, 5, 5, 7, 7, 16, 16, 16, 16, 16, 10],
        [2, 3, 3, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 11],
        [2, 3, 5, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 12],
        [2, 3, 4, 4, 6, 6, 8, 8, 17, 17, 17, 17, 17, 12, 12],
        [2, 3, 4, 4, 6, 6, 18, 18, 18, 18, 17, 17, 17, 12, 12],
    ];
    const ORDER: [usize; 18] = [2, 3, 4, 5, 7, 10, 12, 18, 10, 20, 30, 20, 4, 7, 8, 20, 13, 0];
    const METHOD: [u8; 18] = [1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 4, 4, 4, 4, 5, 6];

    let ih = H_RANGE.iter().position(|&r| h <= r).unwrap_or(14);
    let ia = A_RANGE.iter().position(|&r| a <= r).unwrap_or(7);
    let code = SELECT[ia][ih] as usize - 1;
    let m = ORDER[code];
    match METHOD[code] {
        1 => t1(h, a, m),
        2 => t2(h, a, ah, m),
        3 => t3(h, a, ah, m),
        4 => t4(h, a, m),
        5 => t5(h, a),
        _ => t6(h, a),
    }
}

fn t1(h: f64, a: f64, m: usize) -> f64 {
    let hs = -0.5 * h * h;
    let dhs = hs.exp();
    let as_ = a * a;
    let mut j = 1;
    let mut jj = 1.0;
    let mut aj = ONE_OVER_2PI * a;
    let mut tf = ONE_OVER_2PI * a.atan();
    let mut dj = dhs - 1.0;
    let mut gj = hs * dhs;
    loop {
        tf += dj * aj / jj;
        if j >= m {
            return tf;
        }
        j += 1;
        jj += 2.0;
        aj *= as_;
        dj = gj - dj;
        gj *= hs / j as f64;
    }
}

fn t2(h: f64, a: f64, ah: f64, m: usize) -> f64 {
    let maxii = 2 * m + 1;
    let mut ii = 1;
    let mut tf = 0.0;
    let hs = h * h;
    let as_ = -a * a;
    let mut vi = ONE_OVER_SQRT_2PI * a * (-0.5 * ah * ah).exp();
    let mut z = (norm_cdf(ah) - 0.5) / h;
    let y = 1.0 / hs;
    loop {
        tf += z;
        if ii >= maxii {
            return tf * ONE_OVER_SQRT_2PI * (-0.5 * hs).exp();
        }
        z = y * (vi - ii as f64 * z);
        vi *= as_;
        ii += 2;
    }
}

fn t3(h: f64, a: f64, ah: f64, m: usize) -> f64 {
    const C2: [f64; 21] = [
        0.999_999_999_999_999_9,
        -0.999_999_999_999_888,
        0.999_999_999_982_907_5,
        -0.999_999_998_962_825,
        0.999_999_966_604_593_7,
        -0.999_999_339_862_724_7,
        0.999_991_256_111_369_6,
        -0.999_917_776_244_633_8,
        0.999_428_355_558_701_4,
        -0.996_973_117_207_23,
        0.987_514_480_372_753,
        -0.959_158_579_805_728_8,
        0.892_463_055_110_067_1,
        -0.768_934_259_904_64,
        0.588_935_284_684_846_9,
        -0.383_803_451_604_402_55,
        0.203_176_017_010_453,
        -8.281_363_160_700_499e-2,
        2.416_798_473_575_957_8e-2,
        -4.467_656_666_397_183e-3,
        3.914_116_940_237_383_6e-4,
    ];
    let mut i = 1;
    let mut ii = 1.0;
    let mut tf = 0.0;
    let hs = h * h;
    let as_ = a * a;
    let mut vi = ONE_OVER_SQRT_2PI * a * (-0.5 * ah * ah).exp();
    let mut zi = (norm_cdf(ah) - 0.5) / h;
    let y = 1.0 / hs;
    loop {
        tf += zi * C2[i - 1];
        if i > m {
            return tf * ONE_OVER_SQRT_2PI * (-0.5 * hs).exp();
        }
        zi = y * (ii * zi - vi);
        vi *= as_;
        i += 1;
        ii += 2.0;
    }
}

fn t4(h: f64, a: f64, m: usize) -> f64 {
    let maxii = 2 * m + 1;
    let mut ii = 1;
    let mut tf = 0.0;
    let hs = h * h;
    let as_ = -a * a;
    let mut ai = ONE_OVER_2PI * a * (-0.5 * hs * (1.0 - as_)).exp();
    let mut yi = 1.0;
    loop {
        tf += ai * yi;
        if ii >= maxii {
            return tf;
        }
        ii += 2;
        yi = (1.0 - hs * yi) / ii as f64;
        ai *= as_;
    }
}

fn t5(h: f64, a: f64) -> f64 {
    const PTS: [f64; 13] = [
        3.508_203_967_645_171_6e-3,
        3.127_904_233_803_075_6e-2,
        8.526_682_628_321_945e-2,
        0.162_450_717_308_122_77,
        0.258_511_960_491_254_36,
        0.368_075_538_406_975_3,
        0.485_010_929_056_047,
        0.602_775_141_526_185_7,
        0.714_778_842_177_532_3,
        0.814_755_109_887_601,
        0.897_110_297_559_489_7,
        0.957_238_080_859_442_6,
        0.991_788_329_746_297,
    ];
    const WTS: [f64; 13] = [
        1.883_143_811_532_350_3e-2,
        1.856_708_624_397_765e-2,
        1.804_209_346_122_338_5e-2,
        1.726_382_960_639_875_2e-2,
        1.624_321_997_598_985_8e-2,
        1.499_459_203_411_670_5e-2,
        1.353_547_446_966_209e-2,
        1.188_635_160_582_016_5e-2,
        1.007_037_724_277_743_2e-2,
        8.113_054_574_229_958e-3,
        6.041_900_952_847_024e-3,
        3.886_221_701_074_205_7e-3,
        1.679_303_108_454_609e-3,
    ];
    let as_ = a * a;
    let hs = -0.5 * h * h;
    let mut tf = 0.0;
    for (p, w) in PTS.iter().zip(WTS.iter()) {
        let r = 1.0 + as_ * p;
        tf += w * (hs * r).exp() / r;
    }
    tf * a
}

fn t6(h: f64, a: f64) -> f64 {
    let normh = norm_cdf(-h);
    let mut tf = 0.5 * normh * (1.0 - normh);
    let y = 1.0 - a;
    let r = (y / (1.0 + a)).atan();
    if r != 0.0 {
        tf -= ONE_OVER_2PI * r * (-0.5 * y * h * h / r).exp();
    }
    tf
}

/// Standard skew-normal cdf F(z; ψ) = Φ(z) - 2 T(z, ψ).
pub fn skew_normal_cdf(z: f64, shape: f64) -> f64 {
    if shape == 0.0 {
        return norm_cdf(z);
    }
    (norm_cdf(z) - 2.0 * owens_t(z, shape)).clamp(0.0, 1.0)
}

/// Standard skew-normal log density: ln 2 + ln φ(z) + ln Φ(ψ z).
#[inline]
pub fn skew_normal_log_pdf(z: f64, shape: f64) -> f64 {
    LN_2 + norm_log_pdf(z) + log_norm_cdf(shape * z)
}

/// Below this value the Owen's T route loses relative precision and the
/// tail is integrated directly.
const DIRECT_CDF_FLOOR: f64 = 1e-6;

/// log F(z; ψ) for the standard skew-normal, accurate in the lower tail.
pub fn log_skew_normal_cdf(z: f64, shape: f64) -> f64 {
    if shape == 0.0 {
        return log_norm_cdf(z);
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let direct = skew_normal_cdf(z, shape);
    if direct > DIRECT_CDF_FLOOR {
        return direct.ln();
    }
    lower_tail_log_integral(z, shape).unwrap_or_else(|| direct.ln())
}

/// log(1 - F(z; ψ)), using the reflection 1 - F(z; ψ) = F(-z; -ψ).
#[inline]
pub fn log_skew_normal_sf(z: f64, shape: f64) -> f64 {
    log_skew_normal_cdf(-z, -shape)
}

/// log(F(hi; ψ) - F(lo; ψ)).
pub fn log_skew_normal_diff(lo: f64, hi: f64, shape: f64) -> f64 {
    if shape == 0.0 {
        return log_norm_diff(lo, hi);
    }
    log_diff_cdf(
        lo,
        hi,
        |x| log_skew_normal_cdf(x, shape),
        |x| log_skew_normal_sf(x, shape),
    )
}

// log ∫_{-∞}^{z} 2φ(t)Φ(ψt) dt by Gauss–Legendre over the region carrying all
// but e^-45 of the mass. The density is log-concave, so beyond z the log
// density lies below its tangent line at z.
fn lower_tail_log_integral(z: f64, shape: f64) -> Option<f64> {
    let u = shape * z;
    let mills = (norm_log_pdf(u) - log_norm_cdf(u)).exp();
    let slope = -z + shape * mills;
    if !(slope > 1e-3) || !slope.is_finite() {
        return None;
    }
    let width = 45.0 / slope;
    let lo = z - width;
    const PANELS: usize = 8;
    let (nodes, weights) = gauss_legendre_32();
    let panel = width / PANELS as f64;
    let mut logs = Vec::with_capacity(PANELS * nodes.len());
    for p in 0..PANELS {
        let a = lo + p as f64 * panel;
        let half = 0.5 * panel;
        let mid = a + half;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let t = mid + half * x;
            logs.push(skew_normal_log_pdf(t, shape) + (w * half).ln());
        }
    }
    Some(log_sum_exp(&logs))
}

fn gauss_legendre_32() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32))
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
