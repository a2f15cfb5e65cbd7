//! Signal-to-noise ratios of the fluorescence and extinction channels.
//!
//! The signal is the emitter's response alone. The noise collects every
//! other fluctuation: dark counts for the fluorescence channel, and laser
//! shot noise, laser intensity noise and dark counts for the extinction
//! channel. The emitter's own shot noise is deliberately not counted.
//!
//! Integration times are in seconds; a value of 1 gives the SNR in units
//! of sqrt(Hz).

use serde::{Deserialize, Serialize};

use crate::model::{
    extinction_dip, power_from_saturation, red_fluorescence, DetectorParams, EmitterParams,
    OpticsParams,
};
use crate::{lit, Error, Result, Scalar};

/// Default integration time per frequency pixel (s).
pub const DEFAULT_T_INT: f64 = 1.0;

/// Analytic SNR of both channels at one drive strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint<T> {
    pub s: T,
    /// Laser power reaching the detector, `mu * p_las` (cps).
    pub p_las_detected: T,
    /// `None` when the detector has no dark counts.
    pub snr_red: Option<T>,
    pub snr_res: T,
    pub t_int: T,
}

impl<T: Scalar> SnrPoint<T> {
    pub fn evaluate(
        s: T,
        em: &EmitterParams<T>,
        opt: &OpticsParams<T>,
        det: &DetectorParams<T>,
        t_int: T,
    ) -> Result<Self> {
        let p_las = if s > T::zero() {
            power_from_saturation(s, em, opt)?
        } else {
            T::zero()
        };
        let snr_red = match snr_red(s, em, opt, det, t_int) {
            Ok(v) => Some(v),
            Err(Error::ZeroDarkCounts) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            s,
            p_las_detected: opt.mu * p_las,
            snr_red,
            snr_res: snr_res(s, em, opt, det, t_int)?,
            t_int,
        })
    }
}

/// Fluorescence-excitation SNR: detected red-shifted counts over dark-count noise.
pub fn snr_red<T: Scalar>(
    s: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    t_int: T,
) -> Result<T> {
    if !(det.p_drk > T::zero()) {
        return Err(Error::ZeroDarkCounts);
    }
    let signal = opt.mu * red_fluorescence(s, T::zero(), em, opt) * t_int;
    Ok(signal / (det.p_drk * t_int).sqrt())
}

/// Fully saturated limit of [`snr_red`] at unit integration time.
pub fn snr_red_max<T: Scalar>(
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
) -> Result<T> {
    if !(det.p_drk > T::zero()) {
        return Err(Error::ZeroDarkCounts);
    }
    Ok(opt.mu * opt.zeta * (T::one() - em.alpha) * em.gamma1 / (lit::<T>(2.0) * det.p_drk.sqrt()))
}

/// RMS count fluctuation of the transmitted beam over `t_int`:
/// shot noise, intensity noise and dark counts added in quadrature.
pub fn noise_res<T: Scalar>(
    p_las: T,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    t_int: T,
) -> T {
    let detected = opt.mu * p_las * t_int;
    let rin = opt.mu * det.rin_kappa * p_las * t_int;
    (detected + rin * rin + det.p_drk * t_int).sqrt()
}

/// Extinction SNR with the full three-term noise budget.
pub fn snr_res<T: Scalar>(
    s: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    t_int: T,
) -> Result<T> {
    let dip = extinction_dip(s, T::zero(), em, opt)?;
    if s == T::zero() {
        return Ok(T::zero());
    }
    let p_las = power_from_saturation(s, em, opt)?;
    Ok(opt.mu * dip * t_int / noise_res(p_las, opt, det, t_int))
}

/// Shot-noise-limited extinction SNR in closed form,
/// `(1 - zeta alpha) (gamma1/2) sqrt(mu alpha K / gamma2) sqrt(S)/(1+S) sqrt(t)`.
pub fn snr_res_shot_limited<T: Scalar>(
    s: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    t_int: T,
) -> Result<T> {
    let az = em.alpha * opt.zeta;
    if !(az < T::one()) {
        return Err(Error::DipPrefactor(az.to_f64().unwrap_or(f64::NAN)));
    }
    let coeff = (T::one() - az) * em.gamma1 / lit(2.0)
        * (opt.mu * em.alpha * opt.k_geom / em.gamma2).sqrt();
    Ok(coeff * s.sqrt() / (T::one() + s) * t_int.sqrt())
}

/// Peak of the shot-noise-limited extinction SNR in the limit `zeta alpha << 1`:
/// `sqrt(gamma1^2 alpha K mu / (16 gamma2))`.
pub fn snr_res_peak_weak_collection<T: Scalar>(em: &EmitterParams<T>, opt: &OpticsParams<T>) -> T {
    (em.gamma1 * em.gamma1 * em.alpha * opt.k_geom * opt.mu / (lit::<T>(16.0) * em.gamma2)).sqrt()
}

const ARGMAX_LN_LO: f64 = -27.631021115928547; // ln 1e-12
const ARGMAX_LN_HI: f64 = 13.815510557964274; // ln 1e6
const ARGMAX_GRID: usize = 241;

/// Saturation parameter maximizing [`snr_res`] at unit integration time,
/// and the SNR reached there.
///
/// A coarse log-spaced scan brackets the maximum, then golden-section
/// search over `ln S` refines it.
pub fn snr_res_argmax<T: Scalar>(
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
) -> Result<(T, T)> {
    let f = |ln_s: T| snr_res(ln_s.exp(), em, opt, det, T::one());
    let lo = lit::<T>(ARGMAX_LN_LO);
    let hi = lit::<T>(ARGMAX_LN_HI);
    let step = (hi - lo) / lit((ARGMAX_GRID - 1) as f64);
    let mut best = (0usize, T::neg_infinity());
    for i in 0..ARGMAX_GRID {
        let v = f(lo + step * lit(i as f64))?;
        if v > best.1 {
            best = (i, v);
        }
    }
    let mut a = lo + step * lit(best.0.saturating_sub(1) as f64);
    let mut b = lo + step * lit((best.0 + 1).min(ARGMAX_GRID - 1) as f64);

    let inv_phi = lit::<T>(0.5 * (5f64.sqrt() - 1.0));
    let tol = lit::<T>(1e-9).max(T::epsilon() * lit(16.0));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let ln_s = (a + b) / lit(2.0);
    let s = ln_s.exp();
    Ok((s, snr_res(s, em, opt, det, T::one())?))
}

/// Default search window for [`crossover_saturation`].
pub const CROSSOVER_WINDOW: (f64, f64) = (1e-12, 1e6);

/// Saturation parameter at which the fluorescence SNR overtakes the extinction SNR.
///
/// Returns `Ok(None)` when the curves do not cross inside [`CROSSOVER_WINDOW`].
pub fn crossover_saturation<T: Scalar>(
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
) -> Result<Option<T>> {
    crossover_saturation_in(
        em,
        opt,
        det,
        lit(CROSSOVER_WINDOW.0),
        lit(CROSSOVER_WINDOW.1),
    )
}

pub fn crossover_saturation_in<T: Scalar>(
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    s_min: T,
    s_max: T,
) -> Result<Option<T>> {
    if !(s_min > T::zero() && s_max > s_min) {
        return Err(Error::invalid("crossover window", "need 0 < s_min < s_max"));
    }
    let diff = |ln_s: T| -> Result<T> {
        let s = ln_s.exp();
        Ok(snr_red(s, em, opt, det, T::one())? - snr_res(s, em, opt, det, T::one())?)
    };
    let lo = s_min.ln();
    let hi = s_max.ln();
    let n = 400usize;
    let step = (hi - lo) / lit(n as f64);

    let mut a = lo;
    let mut fa = diff(a)?;
    for i in 1..=n {
        let b = if i == n {
            hi
        } else {
            lo + step * lit(i as f64)
        };
        let fb = diff(b)?;
        if fa == T::zero() {
            return Ok(Some(a.exp()));
        }
        if (fa < T::zero()) != (fb < T::zero()) || fb == T::zero() {
            let (mut l, mut r, mut fl) = (a, b, fa);
            for _ in 0..200 {
                let m = (l + r) / lit(2.0);
                if m <= l || m >= r {
                    break;
                }
                let fm = diff(m)?;
                if (fm < T::zero()) == (fl < T::zero()) && fm != T::zero() {
                    l = m;
                    fl = fm;
                } else {
                    r = m;
                }
            }
            return Ok(Some(((l + r) / lit(2.0)).exp()));
        }
        a = b;
        fa = fb;
    }
    Ok(None)
}
