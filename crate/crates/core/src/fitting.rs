//! Lorentzian line fitting and SNR extraction from recorded spectra.
//!
//! The model is `baseline + amplitude * (w/2)^2 / ((x - center)^2 + (w/2)^2)`
//! with `w` the full width at half maximum. Fits are unweighted least squares
//! solved by a damped Gauss-Newton (Levenberg-Marquardt) iteration with an
//! analytic Jacobian. The width is kept above a floor and the center inside
//! the scanned range by fixing a parameter at its bound whenever a step
//! would cross it.
//!
//! The SNR of a spectrum is the fitted amplitude divided by the RMS of the
//! fit residuals over the off-resonant pixels.

use serde::{Deserialize, Serialize};

use crate::model::{saturation_from_fwhm, EmitterParams};
use crate::sim::{Channel, Spectrum};
use crate::{lit, Error, Result, Scalar};

pub const MIN_FIT_PIXELS: usize = 8;
pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-8;
pub const COST_TOLERANCE: f64 = 1e-10;
/// Pixels farther than this many FWHM from the fitted center count as off-resonant.
pub const OFF_RESONANT_FWHM: f64 = 3.0;
pub const MIN_OFF_RESONANT_PIXELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Peak,
    Dip,
}

impl Shape {
    /// Line shape recorded by a detection channel.
    pub fn for_channel(channel: Channel) -> Self {
        match channel {
            Channel::Fluorescence => Shape::Peak,
            Channel::Extinction => Shape::Dip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub max_iterations: usize,
    /// Convergence threshold on the relative parameter step.
    pub step_tolerance: T,
    /// Convergence threshold on the relative cost decrease of a nearly undamped step.
    pub cost_tolerance: T,
    /// Lower bound on the fitted FWHM (same units as the abscissa).
    pub min_fwhm: Option<T>,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS,
            step_tolerance: lit(STEP_TOLERANCE),
            cost_tolerance: lit(COST_TOLERANCE),
            min_fwhm: None,
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    /// Options that forbid widths below the emitter's natural linewidth `2 gamma2`.
    pub fn natural_linewidth(em: &EmitterParams<T>) -> Self {
        Self {
            min_fwhm: Some(lit::<T>(2.0) * em.gamma2),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    /// Signed line amplitude in counts (negative for dips).
    pub amplitude: T,
    pub center: T,
    pub fwhm: T,
    pub baseline: T,
    /// RMS of the residuals over all pixels.
    pub residual_rms: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Scalar> FitResult<T> {
    pub fn eval(&self, x: T) -> T {
        lorentzian(x, self.baseline, self.amplitude, self.center, self.fwhm)
    }

    /// Fractional line depth (or height) relative to the baseline.
    pub fn visibility(&self) -> T {
        self.amplitude.abs() / self.baseline
    }
}

pub fn lorentzian<T: Scalar>(x: T, baseline: T, amplitude: T, center: T, fwhm: T) -> T {
    let h = fwhm / lit(2.0);
    let d = x - center;
    baseline + amplitude * h * h / (d * d + h * h)
}

/// Fits a single Lorentzian to a spectrum with default options.
pub fn fit_lorentzian(spec: &Spectrum, shape: Shape) -> Result<FitResult<f64>> {
    fit_lorentzian_with(spec, shape, &FitOptions::default())
}

pub fn fit_lorentzian_with(
    spec: &Spectrum,
    shape: Shape,
    opts: &FitOptions<f64>,
) -> Result<FitResult<f64>> {
    fit_lorentzian_xy(&spec.detunings, &spec.counts_f64(), shape, opts)
}

fn median<T: Scalar>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / lit(2.0)
    }
}

/// Deterministic starting point: median baseline, extremal pixel, and the
/// width between half-extremum crossings.
fn initial_guess<T: Scalar>(x: &[T], y: &[T], shape: Shape) -> [T; 4] {
    let baseline = median(y);
    let better = |a: T, b: T| match shape {
        Shape::Peak => a > b,
        Shape::Dip => a < b,
    };
    let mut idx = 0;
    for i in 1..y.len() {
        if better(y[i], y[idx]) {
            idx = i;
        }
    }
    let amplitude = y[idx] - baseline;
    let half = baseline + amplitude / lit(2.0);
    let inside = |v: T| better(v, half);

    let crossing = |i: usize, j: usize| -> T {
        // Linear interpolation between pixel i (inside) and j (outside).
        let (yi, yj) = (y[i], y[j]);
        if yi == yj {
            return x[j];
        }
        x[i] + (x[j] - x[i]) * (yi - half) / (yi - yj)
    };
    let mut left = None;
    let mut i = idx;
    while i > 0 {
        if !inside(y[i - 1]) {
            left = Some(crossing(i, i - 1));
            break;
        }
        i -= 1;
    }
    let mut right = None;
    let mut j = idx;
    while j + 1 < y.len() {
        if !inside(y[j + 1]) {
            right = Some(crossing(j, j + 1));
            break;
        }
        j += 1;
    }
    let span = x[x.len() - 1] - x[0];
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => lit::<T>(2.0) * (x[idx] - l),
        (None, Some(r)) => lit::<T>(2.0) * (r - x[idx]),
        (None, None) => span / lit(10.0),
    };
    let fwhm = if fwhm > T::zero() && amplitude != T::zero() {
        fwhm
    } else {
        span / lit(10.0)
    };
    [baseline, amplitude, x[idx], fwhm]
}

const B: usize = 0;
const A: usize = 1;
const C: usize = 2;
const W: usize = 3;

/// Residuals and normal equations of the normalized problem.
struct Problem<'a, T> {
    u: &'a [T],
    v: &'a [T],
}

impl<'a, T: Scalar> Problem<'a, T> {
    fn cost(&self, p: &[T; 4]) -> T {
        self.u
            .iter()
            .zip(self.v)
            .map(|(&u, &v)| {
                let r = v - lorentzian(u, p[B], p[A], p[C], p[W]);
                r * r
            })
            .fold(T::zero(), |acc, x| acc + x)
    }

    /// Returns `(J^T J, J^T r)` with `r = data - model`.
    fn normal_equations(&self, p: &[T; 4]) -> ([[T; 4]; 4], [T; 4]) {
        let mut jtj = [[T::zero(); 4]; 4];
        let mut jtr = [T::zero(); 4];
        let h = p[W] / lit(2.0);
        let h2 = h * h;
        for (&u, &v) in self.u.iter().zip(self.v) {
            let d = u - p[C];
            let den = d * d + h2;
            let l = h2 / den;
            let den2 = den * den;
            let j = [
                T::one(),
                l,
                p[A] * h2 * lit(2.0) * d / den2,
                p[A] * h * d * d / den2,
            ];
            let r = v - (p[B] + p[A] * l);
            for a in 0..4 {
                jtr[a] = jtr[a] + j[a] * r;
                for b in a..4 {
                    jtj[a][b] = jtj[a][b] + j[a] * j[b];
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        (jtj, jtr)
    }
}

/// Solves a 4x4 system by Gaussian elimination with partial pivoting.
fn solve4<T: Scalar>(mut m: [[T; 4]; 4], mut rhs: [T; 4]) -> Option<[T; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&a, &b| {
            m[a][col]
                .abs()
                .partial_cmp(&m[b][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if !(m[pivot][col].abs() > T::zero()) || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] = m[row][k] - f * m[col][k];
            }
            rhs[row] = rhs[row] - f * rhs[col];
        }
    }
    let mut out = [T::zero(); 4];
    for row in (0..4).rev() {
        let mut acc = rhs[row];
        for k in row + 1..4 {
            acc = acc - m[row][k] * out[k];
        }
        out[row] = acc / m[row][row];
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}

struct Bounds<T> {
    w_min: T,
    c_min: T,
    c_max: T,
}

/// Damped step with parameters that would cross a bound pinned to it.
fn bounded_step<T: Scalar>(
    a: &[[T; 4]; 4],
    g: &[T; 4],
    p: &[T; 4],
    bounds: &Bounds<T>,
) -> Option<[T; 4]> {
    let mut pinned: [Option<T>; 4] = [None; 4];
    for _ in 0..4 {
        // Reduced system: pinned steps move to the right-hand side.
        let mut m = *a;
        let mut rhs = *g;
        for (k, pin) in pinned.iter().enumerate() {
            if let Some(dk) = pin {
                for row in 0..4 {
                    rhs[row] = rhs[row] - a[row][k] * *dk;
                }
            }
        }
        for (k, pin) in pinned.iter().enumerate() {
            if let Some(dk) = pin {
                for j in 0..4 {
                    m[k][j] = T::zero();
                    m[j][k] = T::zero();
                }
                m[k][k] = T::one();
                rhs[k] = *dk;
            }
        }
        let step = solve4(m, rhs)?;
        let mut changed = false;
        if pinned[W].is_none() && p[W] + step[W] < bounds.w_min {
            pinned[W] = Some(bounds.w_min - p[W]);
            changed = true;
        }
        if pinned[C].is_none() && p[C] + step[C] < bounds.c_min {
            pinned[C] = Some(bounds.c_min - p[C]);
            changed = true;
        } else if pinned[C].is_none() && p[C] + step[C] > bounds.c_max {
            pinned[C] = Some(bounds.c_max - p[C]);
            changed = true;
        }
        if !changed {
            return Some(step);
        }
    }
    None
}

fn norm<T: Scalar>(v: &[T; 4]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Fits a Lorentzian to points `(x, y)` with `x` increasing.
pub fn fit_lorentzian_xy<T: Scalar>(
    x: &[T],
    y: &[T],
    shape: Shape,
    opts: &FitOptions<T>,
) -> Result<FitResult<T>> {
    if x.len() != y.len() {
        return Err(Error::invalid(
            "fit",
            "abscissa and ordinate lengths differ",
        ));
    }
    if x.len() < MIN_FIT_PIXELS {
        return Err(Error::TooFewPixels {
            found: x.len(),
            required: MIN_FIT_PIXELS,
        });
    }
    let (x_lo, x_hi) = (x[0], x[x.len() - 1]);
    if !(x_hi > x_lo) {
        return Err(Error::invalid("fit", "abscissa must be increasing"));
    }

    // Work on a normalized problem: x in [-1, 1], |y| <= 1.
    let x_mid = (x_lo + x_hi) / lit(2.0);
    let x_scale = (x_hi - x_lo) / lit(2.0);
    let y_max = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let y_scale = if y_max > T::zero() { y_max } else { T::one() };
    let u: Vec<T> = x.iter().map(|&xi| (xi - x_mid) / x_scale).collect();
    let v: Vec<T> = y.iter().map(|&yi| yi / y_scale).collect();
    let problem = Problem { u: &u, v: &v };

    let spacing = (u[u.len() - 1] - u[0]) / lit((u.len() - 1) as f64);
    let hard_floor = spacing * lit(1e-3);
    let bounds = Bounds {
        w_min: opts
            .min_fwhm
            .map_or(hard_floor, |m| (m / x_scale).max(hard_floor)),
        c_min: -T::one(),
        c_max: T::one(),
    };

    let g0 = initial_guess(x, y, shape);
    let mut p = [
        g0[B] / y_scale,
        g0[A] / y_scale,
        (g0[C] - x_mid) / x_scale,
        (g0[W] / x_scale).max(bounds.w_min),
    ];

    let tol = opts.step_tolerance;
    let mut lambda = lit::<T>(1e-3);
    let mut cost = problem.cost(&p);
    let mut converged = cost == T::zero();
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&p);
        let diag_max = (0..4).fold(T::zero(), |m, k| m.max(jtj[k][k]));
        let floor = diag_max * lit(1e-12);

        let mut accepted = false;
        while lambda < lit(1e16) {
            let mut a = jtj;
            for k in 0..4 {
                a[k][k] = a[k][k] + lambda * jtj[k][k].max(floor);
            }
            let Some(step) = bounded_step(&a, &jtr, &p, &bounds) else {
                lambda = lambda * lit(10.0);
                continue;
            };
            let small = norm(&step) <= tol * (norm(&p) + tol);
            let mut trial = p;
            for k in 0..4 {
                trial[k] = trial[k] + step[k];
            }
            trial[W] = trial[W].max(bounds.w_min);
            trial[C] = trial[C].max(bounds.c_min).min(bounds.c_max);
            let trial_cost = problem.cost(&trial);
            if trial_cost <= cost {
                let flat = lambda <= T::one() && cost - trial_cost <= opts.cost_tolerance * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / lit(10.0)).max(lit(1e-12));
                accepted = true;
                converged = small || flat || cost == T::zero();
                break;
            }
            if small {
                // The damped step has shrunk below tolerance without lowering
                // the cost: p is a local minimum to working precision.
                converged = true;
                break;
            }
            lambda = lambda * lit(10.0);
        }
        if !accepted && !converged {
            break;
        }
    }

    let n = lit::<T>(u.len() as f64);
    let fit = FitResult {
        amplitude: p[A] * y_scale,
        center: x_mid + p[C] * x_scale,
        fwhm: p[W] * x_scale,
        baseline: p[B] * y_scale,
        residual_rms: (cost / n).sqrt() * y_scale,
        converged,
        iterations,
    };
    Ok(fit)
}

/// SNR read off a fitted spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate<T> {
    /// `|amplitude| / noise_rms`; infinite when the off-resonant residuals vanish.
    pub snr: T,
    pub unbounded: bool,
    pub noise_rms: T,
    pub off_resonant_pixels: usize,
}

pub fn extract_snr(spec: &Spectrum, fit: &FitResult<f64>) -> Result<SnrEstimate<f64>> {
    extract_snr_xy(&spec.detunings, &spec.counts_f64(), fit)
}

pub fn extract_snr_xy<T: Scalar>(x: &[T], y: &[T], fit: &FitResult<T>) -> Result<SnrEstimate<T>> {
    if !fit.converged {
        return Err(Error::NotConverged(fit.iterations));
    }
    let window = lit::<T>(OFF_RESONANT_FWHM) * fit.fwhm;
    let (sum, count) = x
        .iter()
        .zip(y)
        .filter(|(&xi, _)| (xi - fit.center).abs() > window)
        .fold((T::zero(), 0usize), |(s, n), (&xi, &yi)| {
            let r = yi - fit.eval(xi);
            (s + r * r, n + 1)
        });
    if count < MIN_OFF_RESONANT_PIXELS {
        return Err(Error::TooFewOffResonantPixels {
            found: count,
            required: MIN_OFF_RESONANT_PIXELS,
        });
    }
    let noise_rms = (sum / lit(count as f64)).sqrt();
    let unbounded = noise_rms == T::zero();
    Ok(SnrEstimate {
        snr: if unbounded {
            T::infinity()
        } else {
            fit.amplitude.abs() / noise_rms
        },
        unbounded,
        noise_rms,
        off_resonant_pixels: count,
    })
}

/// Saturation parameter implied by the fitted power-broadened linewidth.
pub fn saturation_from_spectrum<T: Scalar>(fit: &FitResult<T>, em: &EmitterParams<T>) -> Result<T> {
    saturation_from_fwhm(fit.fwhm, em)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn recovers_noiseless_dip() {
        let x = grid(200, -2e9, 2e9);
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| lorentzian(xi, 1e6, -1e5, 3.3e7, 1.07e8))
            .collect();
        let f = fit_lorentzian_xy(&x, &y, Shape::Dip, &FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!(rel(f.baseline, 1e6) < 1e-6);
        assert!(rel(f.amplitude, -1e5) < 1e-6);
        assert!(rel(f.center, 3.3e7) < 1e-6);
        assert!(rel(f.fwhm, 1.07e8) < 1e-6);
    }

    #[test]
    fn flat_spectrum_gives_zero_amplitude() {
        let x = grid(50, -1.0, 1.0);
        let y = vec![100.0; 50];
        let f = fit_lorentzian_xy(&x, &y, Shape::Peak, &FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!(f.amplitude.abs() < 1e-9);
        assert!((f.baseline - 100.0).abs() < 1e-9);
        assert!(f.fwhm > 0.0);
    }

    #[test]
    fn too_few_pixels() {
        let x = grid(7, -1.0, 1.0);
        let y = vec![1.0; 7];
        assert!(matches!(
            fit_lorentzian_xy(&x, &y, Shape::Peak, &FitOptions::default()),
            Err(Error::TooFewPixels { found: 7, .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let x = grid(100, -10.0, 10.0);
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| lorentzian(xi, 5.0, 50.0, 1.0, 2.0))
            .collect();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let f = fit_lorentzian_xy(&x, &y, Shape::Peak, &opts).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
        assert!(matches!(
            extract_snr_xy(&x, &y, &f),
            Err(Error::NotConverged(1))
        ));
    }

    #[test]
    fn width_floor_is_respected() {
        let x = grid(100, -10.0, 10.0);
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| lorentzian(xi, 5.0, 50.0, 1.0, 0.5))
            .collect();
        let opts = FitOptions {
            min_fwhm: Some(2.0),
            ..FitOptions::default()
        };
        let f = fit_lorentzian_xy(&x, &y, Shape::Peak, &opts).unwrap();
        assert!(f.converged);
        assert!((f.fwhm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snr_of_noiseless_spectrum_is_unbounded() {
        let x = grid(200, -10.0, 10.0);
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| lorentzian(xi, 5.0, 50.0, 0.0, 1.0))
            .collect();
        let f = fit_lorentzian_xy(&x, &y, Shape::Peak, &FitOptions::default()).unwrap();
        let mut exact = f;
        exact.baseline = 5.0;
        exact.amplitude = 50.0;
        exact.center = 0.0;
        exact.fwhm = 1.0;
        let e = extract_snr_xy(&x, &y, &exact).unwrap();
        assert!(e.unbounded && e.snr.is_infinite());
        assert!(extract_snr_xy(&x, &y, &f).unwrap().snr > 1e6);
    }

    #[test]
    fn narrow_scan_is_rejected() {
        let x = grid(20, -1.0, 1.0);
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| lorentzian(xi, 5.0, 50.0, 0.0, 1.0))
            .collect();
        let f = fit_lorentzian_xy(&x, &y, Shape::Peak, &FitOptions::default()).unwrap();
        assert!(matches!(
            extract_snr_xy(&x, &y, &f),
            Err(Error::TooFewOffResonantPixels { .. })
        ));
    }

    #[test]
    fn saturation_from_linewidth() {
        let em = EmitterParams::lifetime_limited(1e8, 0.2).unwrap();
        let mut f = FitResult {
            amplitude: 1.0,
            center: 0.0,
            fwhm: 2.0 * em.gamma2,
            baseline: 0.0,
            residual_rms: 0.0,
            converged: true,
            iterations: 1,
        };
        assert_eq!(saturation_from_spectrum(&f, &em).unwrap(), 0.0);
        f.fwhm = 2.0 * 2f64.sqrt() * em.gamma2;
        assert!((saturation_from_spectrum(&f, &em).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_precision_fit() {
        let x: Vec<f32> = (0..100).map(|i| -5.0 + 0.1 * i as f32).collect();
        let y: Vec<f32> = x
            .iter()
            .map(|&xi| lorentzian(xi, 10.0, -4.0, 0.3, 1.2))
            .collect();
        let f = fit_lorentzian_xy(&x, &y, Shape::Dip, &FitOptions::default()).unwrap();
        assert!((f.fwhm - 1.2).abs() < 1e-3);
        assert!((f.center - 0.3).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn noiseless_recovery(
            center in -0.5f64..0.5,
            fwhm in 0.05f64..0.4,
            amp in 0.05f64..5.0,
            base in 1.0f64..100.0,
            dip in proptest::bool::ANY,
        ) {
            let x = grid(200, -2.0, 2.0);
            let a = if dip { -amp.min(0.9 * base) } else { amp };
            let y: Vec<f64> = x.iter().map(|&xi| lorentzian(xi, base, a, center, fwhm)).collect();
            let shape = if dip { Shape::Dip } else { Shape::Peak };
            let f = fit_lorentzian_xy(&x, &y, shape, &FitOptions::default()).unwrap();
            prop_assert!(f.converged);
            prop_assert!(rel(f.amplitude, a) < 1e-6);
            prop_assert!(rel(f.fwhm, fwhm) < 1e-6);
            prop_assert!(rel(f.baseline, base) < 1e-6);
            prop_assert!((f.center - center).abs() < 1e-6 * fwhm);
        }

        #[test]
        fn scaling_covariance(c in 0.01f64..100.0) {
            let x = grid(120, -3.0, 3.0);
            let y: Vec<f64> = x.iter().map(|&xi| lorentzian(xi, 40.0, -7.0, 0.2, 0.6)).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let f = fit_lorentzian_xy(&x, &y, Shape::Dip, &FitOptions::default()).unwrap();
            let g = fit_lorentzian_xy(&x, &ys, Shape::Dip, &FitOptions::default()).unwrap();
            prop_assert!(rel(g.amplitude, c * f.amplitude) < 1e-6);
            prop_assert!(rel(g.baseline, c * f.baseline) < 1e-6);
            prop_assert!(rel(g.fwhm, f.fwhm) < 1e-6);
            prop_assert!((g.center - f.center).abs() < 1e-6);
        }
    }
}
