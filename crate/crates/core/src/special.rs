//! Log-space error-function helpers.
//!
//! The edge density is a difference of two error functions far out in the
//! tails, where the naive `ln(erf(b) - erf(a))` cancels to `ln(0)`. Everything
//! here works through the scaled complementary error function
//! `erfcx(x) = exp(x^2) erfc(x)`, which stays O(1/x) for large positive `x`.

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 8.0 {
        // erfc is relatively accurate down to ~1e-300, so the product is too
        return (x * x).exp() * libm::erfc(x);
    }
    if x.is_infinite() {
        return 0.0;
    }
    // Laplace continued fraction, evaluated from the tail.
    let mut t = x;
    for k in (1..=40).rev() {
        t = x + (k as f64 * 0.5) / t;
    }
    FRAC_1_SQRT_PI / t
}

/// `ln(erfc(x))` without underflow for large positive `x`.
pub fn ln_erfc(x: f64) -> f64 {
    if x <= 0.5 {
        libm::erfc(x).ln()
    } else {
        erfcx(x).ln() - x * x
    }
}

/// `ln(erf(hi) - erf(lo))` for `lo <= hi`; `-inf` when the interval is empty.
///
/// Exactly symmetric under `(lo, hi) -> (-hi, -lo)`.
pub fn ln_erf_diff(lo: f64, hi: f64) -> f64 {
    if lo.is_nan() || hi.is_nan() {
        return f64::NAN;
    }
    if lo >= hi {
        return f64::NEG_INFINITY;
    }
    if hi <= 0.0 {
        return ln_erf_diff(-hi, -lo);
    }
    if lo >= 0.5 {
        if hi.is_infinite() {
            return ln_erfc(lo);
        }
        // erfc(lo) - erfc(hi) = erfc(lo) * (1 - erfc(hi) / erfc(lo)), with the
        // ratio assembled from scaled pieces so the x^2 terms never cancel
        let ratio = -(hi - lo) * (hi + lo) + erfcx(hi).ln() - erfcx(lo).ln();
        return ln_erfc(lo) + (-ratio.exp_m1()).ln();
    }
    // near or across zero erf itself is relatively accurate, so the plain
    // difference loses nothing the complementary form would keep
    (libm::erf(hi) - libm::erf(lo)).ln()
}

/// `ln(sum(exp(xs)))`; `-inf` for an empty slice or when all entries are `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    if xs.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// `ln(2 pi)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log of the standard normal density.
#[inline]
pub fn ln_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}
