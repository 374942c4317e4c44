//! Stratum densities: isotropic Gaussians around vertices and Gaussians
//! convolved with the uniform measure on a segment.

use std::f64::consts::{LN_2, PI};

use crate::geometry::{dist2, dot};
use crate::special::{ln_erf_diff, LN_2PI};
use crate::{Error, Result};

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(())
}

fn check_segment(x: &[f64], v1: &[f64], v2: &[f64]) -> Result<()> {
    if x.len() != v1.len() || x.len() != v2.len() {
        return Err(Error::usage("point and segment differ in dimension"));
    }
    if v1 == v2 {
        return Err(Error::usage("degenerate segment: endpoints coincide"));
    }
    Ok(())
}

/// Log of the isotropic normal density with mean `v` and standard deviation `sigma`.
pub fn vertex_log_density(x: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if x.len() != v.len() {
        return Err(Error::usage("point and vertex differ in dimension"));
    }
    Ok(vertex_log_density_unchecked(x, v, sigma))
}

#[inline]
pub(crate) fn vertex_log_density_unchecked(x: &[f64], v: &[f64], sigma: f64) -> f64 {
    let n = x.len() as f64;
    -0.5 * n * (LN_2PI + 2.0 * sigma.ln()) - dist2(x, v) / (2.0 * sigma * sigma)
}

/// Value returned in place of `-inf` when even the stable path underflows.
pub const LOG_DENSITY_FLOOR: f64 = -1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityStatus {
    Exact,
    /// The true value is below what the log-space path can represent.
    Floored,
}

/// Segment geometry in midpoint coordinates, shared by the density and its
/// gradient.
#[derive(Debug, Clone)]
pub(crate) struct EdgeFrame {
    pub mid: Vec<f64>,
    /// Unit vector from the second endpoint towards the first.
    pub dir: Vec<f64>,
    pub len: f64,
}

impl EdgeFrame {
    pub fn new(v1: &[f64], v2: &[f64]) -> Self {
        let len = dist2(v1, v2).sqrt();
        let dir = v1.iter().zip(v2).map(|(a, b)| (a - b) / len).collect();
        let mid = v1.iter().zip(v2).map(|(a, b)| 0.5 * (a + b)).collect();
        Self { mid, dir, len }
    }

    /// Along-edge offset of `x` from the midpoint and squared distance to the
    /// edge's supporting line.
    #[inline]
    pub fn coordinates(&self, x: &[f64]) -> (f64, f64) {
        let mut along = 0.0;
        for k in 0..x.len() {
            along += (x[k] - self.mid[k]) * self.dir[k];
        }
        let mut h2 = 0.0;
        for k in 0..x.len() {
            let r = x[k] - self.mid[k] - along * self.dir[k];
            h2 += r * r;
        }
        (along, h2)
    }

    /// Log density at `x` for noise scale `sigma`.
    #[inline]
    pub fn log_density(&self, x: &[f64], sigma: f64) -> f64 {
        let (c, h2) = self.coordinates(x);
        let n = x.len() as f64;
        let scale = std::f64::consts::SQRT_2 * sigma;
        let hi = (0.5 * self.len - c) / scale;
        let lo = (-0.5 * self.len - c) / scale;
        ln_erf_diff(lo, hi) - h2 / (2.0 * sigma * sigma) - self.len.ln() - 0.5 * (n + 1.0) * LN_2
            + 0.5 * (1.0 - n) * PI.ln()
            + (1.0 - n) * sigma.ln()
    }
}

/// Log of the segment-convolved Gaussian density, in closed form.
///
/// Symmetric in the two endpoints bit for bit.
pub fn edge_log_density(x: &[f64], v1: &[f64], v2: &[f64], sigma: f64) -> Result<f64> {
    Ok(edge_log_density_status(x, v1, v2, sigma)?.0)
}

/// Like [`edge_log_density`], but reports when the result had to be floored.
pub fn edge_log_density_status(x: &[f64], v1: &[f64], v2: &[f64], sigma: f64) -> Result<(f64, DensityStatus)> {
    check_sigma(sigma)?;
    check_segment(x, v1, v2)?;
    let value = EdgeFrame::new(v1, v2).log_density(x, sigma);
    if value.is_finite() {
        Ok((value, DensityStatus::Exact))
    } else {
        Ok((LOG_DENSITY_FLOOR, DensityStatus::Floored))
    }
}

// 15-point Kronrod rule with its embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let pair = f(c - h * XGK[k]) + f(c + h * XGK[k]);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod integration over `[0, 1]` with the given
/// initial breakpoints. Returns the estimate; stops at `rel_tol` or after a
/// fixed interval budget.
fn integrate_unit(f: impl Fn(f64) -> f64, breaks: &[f64], rel_tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|t| *t > 0.0 && *t < 1.0).collect();
    pts.push(0.0);
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut intervals: Vec<(f64, f64, f64, f64)> = pts
        .windows(2)
        .map(|w| {
            let (v, e) = gauss_kronrod(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    for _ in 0..4000 {
        let total: f64 = intervals.iter().map(|i| i.2).sum();
        let err: f64 = intervals.iter().map(|i| i.3).sum();
        if err <= rel_tol * total.abs() || err == 0.0 {
            break;
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (k, i)| if i.3 > acc.1 { (k, i.3) } else { acc });
        let (a, b, _, _) = intervals.swap_remove(worst);
        let m = 0.5 * (a + b);
        let (v1, e1) = gauss_kronrod(&f, a, m);
        let (v2, e2) = gauss_kronrod(&f, m, b);
        intervals.push((a, m, v1, e1));
        intervals.push((m, b, v2, e2));
    }
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    intervals.iter().map(|i| i.2).sum()
}

/// Log of the segment-convolved density computed by adaptive quadrature over
/// the segment parameter, with the integrand shifted by its peak so the
/// result stays finite far from the segment.
pub fn edge_log_density_quadrature(x: &[f64], v1: &[f64], v2: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_segment(x, v1, v2)?;
    let n = x.len();
    // y(t) = t v1 + (1 - t) v2
    let d: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
    let r: Vec<f64> = x.iter().zip(v2).map(|(a, b)| a - b).collect();
    let dd = dot(&d, &d);
    let peak = (dot(&r, &d) / dd).clamp(0.0, 1.0);
    let sq = |t: f64| -> f64 {
        let mut s = 0.0;
        for k in 0..n {
            let e = r[k] - t * d[k];
            s += e * e;
        }
        s
    };
    let shift = sq(peak);
    let two_var = 2.0 * sigma * sigma;
    let f = |t: f64| (-(sq(t) - shift) / two_var).exp();
    let width = sigma / dd.sqrt();
    let mut breaks = vec![peak];
    for k in [0.5, 2.0, 6.0, 15.0, 40.0] {
        breaks.push(peak - k * width);
        breaks.push(peak + k * width);
    }
    let integral = integrate_unit(f, &breaks, 1e-13);
    Ok(integral.ln() - shift / two_var - 0.5 * n as f64 * (LN_2PI + 2.0 * sigma.ln()))
}

/// The segment-convolved density by quadrature, in linear space. Underflows
/// to zero far from the segment; see [`edge_log_density_quadrature`].
pub fn edge_density_quadrature(x: &[f64], v1: &[f64], v2: &[f64], sigma: f64) -> Result<f64> {
    Ok(edge_log_density_quadrature(x, v1, v2, sigma)?.exp())
}
