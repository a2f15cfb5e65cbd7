//! Steady-state power budget of a driven two-level emitter.
//!
//! The emitter is reduced to three numbers (total decay rate, transverse
//! decay rate, zero-phonon branching ratio) and the optics to three more
//! (geometric factor, collected fraction, loss/detection efficiency). Every
//! power returned here is a photon rate in cps referenced to the emitter,
//! i.e. before the efficiency `mu` is applied.

use serde::{Deserialize, Serialize};

use crate::{lit, Error, Result, Scalar};

/// Two-level emitter: decay rates in rad/s and the zero-phonon branching ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams<T> {
    /// Total spontaneous emission rate.
    pub gamma1: T,
    /// Transverse (coherence) decay rate, `gamma1 / 2` without dephasing.
    pub gamma2: T,
    /// Fraction of the excited-state emission on the zero-phonon line.
    pub alpha: T,
}

impl<T: Scalar> EmitterParams<T> {
    pub fn new(gamma1: T, gamma2: T, alpha: T) -> Result<Self> {
        let em = Self {
            gamma1,
            gamma2,
            alpha,
        };
        em.validate()?;
        Ok(em)
    }

    /// Emitter without pure dephasing (`gamma2 = gamma1 / 2`).
    pub fn lifetime_limited(gamma1: T, alpha: T) -> Result<Self> {
        Self::new(gamma1, gamma1 / lit(2.0), alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > T::zero()) || !self.gamma1.is_finite() {
            return Err(Error::invalid(
                "emitter.gamma1",
                format!("must be > 0, got {}", self.gamma1),
            ));
        }
        // Allow for rounding in gamma1/2.
        let floor = self.gamma1 / lit(2.0) * (T::one() - lit(1e-12));
        if !(self.gamma2 >= floor) || !self.gamma2.is_finite() {
            return Err(Error::invalid(
                "emitter.gamma2",
                format!(
                    "must be >= gamma1/2 = {}, got {}",
                    self.gamma1 / lit(2.0),
                    self.gamma2
                ),
            ));
        }
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(Error::invalid(
                "emitter.alpha",
                format!("must be in (0, 1], got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Focusing and collection optics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams<T> {
    /// Ratio of the power scattered by a weakly driven two-level system to the incident power.
    pub k_geom: T,
    /// Fraction of the total emission collected into the detection solid angle.
    pub zeta: T,
    /// Combined transmission loss and detector efficiency.
    pub mu: T,
}

impl<T: Scalar> OpticsParams<T> {
    pub fn new(k_geom: T, zeta: T, mu: T) -> Result<Self> {
        let opt = Self { k_geom, zeta, mu };
        opt.validate()?;
        Ok(opt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_geom > T::zero()) || !self.k_geom.is_finite() {
            return Err(Error::invalid(
                "optics.k_geom",
                format!("must be > 0, got {}", self.k_geom),
            ));
        }
        if !(self.zeta >= T::zero() && self.zeta <= T::one()) {
            return Err(Error::invalid(
                "optics.zeta",
                format!("must be in [0, 1], got {}", self.zeta),
            ));
        }
        if !(self.mu > T::zero() && self.mu <= T::one()) {
            return Err(Error::invalid(
                "optics.mu",
                format!("must be in (0, 1], got {}", self.mu),
            ));
        }
        Ok(())
    }
}

/// Photodetector noise sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    /// Dark-count rate in cps.
    pub p_drk: T,
    /// Relative laser intensity fluctuation coefficient.
    pub rin_kappa: T,
}

impl<T: Scalar> DetectorParams<T> {
    pub fn new(p_drk: T, rin_kappa: T) -> Result<Self> {
        let det = Self { p_drk, rin_kappa };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_drk >= T::zero()) || !self.p_drk.is_finite() {
            return Err(Error::invalid(
                "detector.p_drk",
                format!("must be >= 0, got {}", self.p_drk),
            ));
        }
        if !(self.rin_kappa >= T::zero()) || !self.rin_kappa.is_finite() {
            return Err(Error::invalid(
                "detector.rin_kappa",
                format!("must be >= 0, got {}", self.rin_kappa),
            ));
        }
        Ok(())
    }
}

/// Laser drive: incident power (cps, before losses) and detuning from the zero-phonon line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams<T> {
    pub p_las: T,
    pub detuning: T,
}

impl<T: Scalar> DriveParams<T> {
    pub fn new(p_las: T, detuning: T) -> Result<Self> {
        let d = Self { p_las, detuning };
        d.validate()?;
        Ok(d)
    }

    /// Drive specified by the power reaching the detector, `mu * p_las`.
    pub fn from_detected(p_detected: T, detuning: T, opt: &OpticsParams<T>) -> Result<Self> {
        Self::new(p_detected / opt.mu, detuning)
    }

    pub fn validate(&self) -> Result<()> {
        // Zero power is accepted: it describes dark-only acquisitions.
        if !(self.p_las >= T::zero()) || !self.p_las.is_finite() {
            return Err(Error::invalid(
                "drive.p_las",
                format!("must be >= 0, got {}", self.p_las),
            ));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("drive.detuning", "must be finite"));
        }
        Ok(())
    }
}

/// Collected emission split into the part resonant with the laser and the red-shifted part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionSplit<T> {
    pub collected: T,
    pub resonant: T,
    pub red: T,
}

/// On-resonance saturation parameter `S = alpha * K * p_las / gamma2`.
pub fn saturation_from_power<T: Scalar>(
    p_las: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
) -> T {
    em.alpha * opt.k_geom * p_las / em.gamma2
}

/// Incident power that produces saturation `s`.
pub fn power_from_saturation<T: Scalar>(
    s: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
) -> Result<T> {
    if !(s > T::zero()) {
        return Err(Error::NonPositiveSaturation(s.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(s * em.gamma2 / (em.alpha * opt.k_geom))
}

/// Steady-state excited-state population `(S/2) / (1 + S + (detuning/gamma2)^2)`.
pub fn excited_population<T: Scalar>(s: T, detuning: T, em: &EmitterParams<T>) -> T {
    let x = detuning / em.gamma2;
    s / lit(2.0) / (T::one() + s + x * x)
}

/// Power radiated into the full solid angle, `gamma1 * rho22`.
pub fn total_emission<T: Scalar>(s: T, detuning: T, em: &EmitterParams<T>) -> T {
    em.gamma1 * excited_population(s, detuning, em)
}

pub fn emission_split<T: Scalar>(
    p_m_4pi: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
) -> EmissionSplit<T> {
    let collected = opt.zeta * p_m_4pi;
    let resonant = em.alpha * collected;
    EmissionSplit {
        collected,
        resonant,
        red: collected - resonant,
    }
}

/// Red-shifted fluorescence reaching the collection optics (before `mu`).
pub fn red_fluorescence<T: Scalar>(
    s: T,
    detuning: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
) -> T {
    emission_split(total_emission(s, detuning, em), em, opt).red
}

fn dip_prefactor<T: Scalar>(em: &EmitterParams<T>, opt: &OpticsParams<T>) -> Result<T> {
    let az = em.alpha * opt.zeta;
    if !(az < T::one()) {
        return Err(Error::DipPrefactor(az.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(T::one() - az)
}

/// Size of the dip in the resonantly filtered transmission:
/// extinction minus the resonant emission that is collected back.
pub fn extinction_dip<T: Scalar>(
    s: T,
    detuning: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
) -> Result<T> {
    Ok(dip_prefactor(em, opt)? * total_emission(s, detuning, em))
}

/// Fractional on-resonance transmission dip `P_dip / P_las` at incident power `p_las`.
pub fn visibility<T: Scalar>(p_las: T, em: &EmitterParams<T>, opt: &OpticsParams<T>) -> Result<T> {
    let prefactor = dip_prefactor(em, opt)?;
    if p_las == T::zero() {
        // Weak-drive limit of dip / p_las.
        return Ok(prefactor * em.gamma1 / lit(2.0) * em.alpha * opt.k_geom / em.gamma2);
    }
    let s = saturation_from_power(p_las, em, opt);
    Ok(prefactor * total_emission(s, T::zero(), em) / p_las)
}

/// Power-broadened full width at half maximum, `2 gamma2 sqrt(1 + S)`.
pub fn fwhm<T: Scalar>(s: T, em: &EmitterParams<T>) -> T {
    lit::<T>(2.0) * em.gamma2 * (T::one() + s).sqrt()
}

/// Saturation parameter implied by a measured power-broadened linewidth.
pub fn saturation_from_fwhm<T: Scalar>(fwhm_meas: T, em: &EmitterParams<T>) -> Result<T> {
    let natural = lit::<T>(2.0) * em.gamma2;
    if !(fwhm_meas >= natural) {
        return Err(Error::SubNaturalLinewidth {
            fwhm: fwhm_meas.to_f64().unwrap_or(f64::NAN),
            natural: natural.to_f64().unwrap_or(f64::NAN),
        });
    }
    let r = fwhm_meas / natural;
    Ok(r * r - T::one())
}
