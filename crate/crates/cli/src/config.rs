//! JSON run configuration: a named preset plus per-section overrides.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use emitterscope::scenarios::{Preset, ScanTemplate};
use emitterscope::sim::Channel;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    #[serde(default)]
    pub emitter: EmitterSection,
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub sweep: SweepSection,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// `gamma1` is given either as a linewidth in Hz (`gamma1 / 2 pi`) or in rad/s.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub gamma1_hz: Option<f64>,
    pub gamma1_rad_s: Option<f64>,
    /// `gamma2 / gamma1`; 0.5 for a lifetime-limited line.
    pub gamma2_ratio: Option<f64>,
    pub gamma2_rad_s: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    pub k_geom: Option<f64>,
    pub zeta: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub p_drk_cps: Option<f64>,
    pub rin_kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerBasis {
    Detected,
    Incident,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub power_cps: Option<f64>,
    pub basis: Option<PowerBasis>,
    /// Integration time of the analytic report.
    pub t_int_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub channels: Option<Vec<Channel>>,
    pub n_pixels: Option<usize>,
    pub dwell_s: Option<f64>,
    pub n_scans: Option<u32>,
    pub span_fwhm: Option<f64>,
    pub jitter_sigma_hz: Option<f64>,
    pub leak_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub powers_cps: Option<Vec<f64>>,
    pub power_min_cps: Option<f64>,
    pub power_max_cps: Option<f64>,
    pub points: Option<usize>,
    pub reps: Option<usize>,
    pub snr_target: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("{path}: {}", e.into_inner())
        })
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
    pub power: Option<f64>,
    pub basis: Option<PowerBasis>,
    pub channels: Option<Vec<Channel>>,
}

/// Fully resolved and validated parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Preset,
    /// Incident power (cps), when one was given.
    pub p_las: Option<f64>,
    /// The same power referenced to the detector.
    pub p_detected: Option<f64>,
    pub t_int: f64,
    pub scan: ScanTemplate,
    pub channels: Vec<Channel>,
    pub sweep_powers: Option<Vec<f64>>,
    pub sweep_range: (Option<f64>, Option<f64>, Option<usize>),
    pub reps: Option<usize>,
    pub snr_target: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_SNR_TARGET: f64 = 10.0;

fn check(field: &str, ok: bool, value: impl std::fmt::Display, rule: &str) -> anyhow::Result<()> {
    if !ok {
        bail!("{field}: must be {rule}, got {value}");
    }
    Ok(())
}

impl RunConfig {
    pub fn resolve(file: ConfigFile, cli: Overrides) -> anyhow::Result<Self> {
        let name = cli
            .preset
            .or(file.preset)
            .unwrap_or_else(|| "fig3_dbatt".to_string());
        let e = &file.emitter;
        let gamma1 = match (e.gamma1_hz, e.gamma1_rad_s) {
            (Some(_), Some(_)) => bail!("emitter: give gamma1_hz or gamma1_rad_s, not both"),
            (Some(hz), None) => Some(hz * TAU),
            (None, rad) => rad,
        };
        let mut preset = Preset::by_name(&name, gamma1)?;
        if let Some(g) = gamma1 {
            preset.emitter.gamma1 = g;
        }
        match (e.gamma2_ratio, e.gamma2_rad_s) {
            (Some(_), Some(_)) => bail!("emitter: give gamma2_ratio or gamma2_rad_s, not both"),
            (Some(r), None) => preset.emitter.gamma2 = r * preset.emitter.gamma1,
            (None, Some(g2)) => preset.emitter.gamma2 = g2,
            (None, None) if gamma1.is_some() => preset.emitter.gamma2 = 0.5 * preset.emitter.gamma1,
            (None, None) => {}
        }
        if let Some(a) = e.alpha {
            preset.emitter.alpha = a;
        }
        let o = &file.optics;
        if let Some(v) = o.k_geom {
            preset.optics.k_geom = v;
        }
        if let Some(v) = o.zeta {
            preset.optics.zeta = v;
        }
        if let Some(v) = o.mu {
            preset.optics.mu = v;
        }
        if let Some(v) = file.detector.p_drk_cps {
            preset.detector.p_drk = v;
        }
        if let Some(v) = file.detector.rin_kappa {
            preset.detector.rin_kappa = v;
        }
        preset.validate()?;

        let basis = cli
            .basis
            .or(file.drive.basis)
            .unwrap_or(PowerBasis::Detected);
        let mu = preset.optics.mu;
        let to_incident = |p: f64| match basis {
            PowerBasis::Detected => p / mu,
            PowerBasis::Incident => p,
        };
        let power = cli.power.or(file.drive.power_cps);
        if let Some(p) = power {
            check("drive.power_cps", p >= 0.0 && p.is_finite(), p, ">= 0")?;
        }
        let t_int = file.drive.t_int_s.unwrap_or(1.0);
        check(
            "drive.t_int_s",
            t_int > 0.0 && t_int.is_finite(),
            t_int,
            "> 0",
        )?;

        let s = &file.scan;
        let d = ScanTemplate::default();
        let scan = ScanTemplate {
            n_pixels: s.n_pixels.unwrap_or(d.n_pixels),
            dwell: s.dwell_s.unwrap_or(d.dwell),
            n_scans: s.n_scans.unwrap_or(d.n_scans),
            span_fwhm: s.span_fwhm.unwrap_or(d.span_fwhm),
            jitter_sigma: s.jitter_sigma_hz.map_or(d.jitter_sigma, |h| h * TAU),
            leak_fraction: s.leak_fraction.unwrap_or(d.leak_fraction),
        };
        check(
            "scan.span_fwhm",
            scan.span_fwhm > 0.0 && scan.span_fwhm.is_finite(),
            scan.span_fwhm,
            "> 0",
        )?;
        // Full validation of the acquisition settings on a representative grid.
        scan.config(Channel::Extinction, 1.0, &preset.emitter, 0)
            .validate()?;

        let channels = cli
            .channels
            .or(s.channels.clone())
            .unwrap_or_else(|| Channel::ALL.to_vec());
        if channels.is_empty() {
            bail!("scan.channels: need at least one channel");
        }

        let to_detected = |p: f64| match basis {
            PowerBasis::Detected => p,
            PowerBasis::Incident => p * mu,
        };
        let w = &file.sweep;
        let sweep_powers = w
            .powers_cps
            .as_ref()
            .map(|v| v.iter().map(|&p| to_detected(p)).collect());
        if let Some(v) = &w.powers_cps {
            if let Some(p) = v.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
                bail!("sweep.powers_cps: powers must be > 0, got {p}");
            }
        }
        for (field, v) in [
            ("sweep.power_min_cps", w.power_min_cps),
            ("sweep.power_max_cps", w.power_max_cps),
        ] {
            if let Some(p) = v {
                check(field, p > 0.0 && p.is_finite(), p, "> 0")?;
            }
        }
        if let (Some(lo), Some(hi)) = (w.power_min_cps, w.power_max_cps) {
            check(
                "sweep.power_max_cps",
                hi > lo,
                hi,
                "greater than power_min_cps",
            )?;
        }
        if let Some(n) = w.points {
            check("sweep.points", n >= 2, n, ">= 2")?;
        }
        let snr_target = w.snr_target.unwrap_or(DEFAULT_SNR_TARGET);
        check("sweep.snr_target", snr_target > 0.0, snr_target, "> 0")?;

        Ok(Self {
            preset,
            p_las: power.map(to_incident),
            p_detected: power.map(to_detected),
            t_int,
            scan,
            channels,
            sweep_powers,
            sweep_range: (
                w.power_min_cps.map(to_detected),
                w.power_max_cps.map(to_detected),
                w.points,
            ),
            reps: cli.reps.or(w.reps),
            snr_target,
            seed: cli.seed.or(file.seed).unwrap_or(0),
            out: cli.out.or(file.output_dir),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(json: &str) -> anyhow::Result<RunConfig> {
        RunConfig::resolve(ConfigFile::parse(json)?, Overrides::default())
    }

    #[test]
    fn empty_config_is_the_default_preset() {
        let c = resolve("{}").unwrap();
        assert_eq!(c.preset, Preset::fig3_dbatt());
        assert_eq!(c.channels, Channel::ALL.to_vec());
        assert_eq!(c.seed, 0);
        assert!(c.p_las.is_none());
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = resolve(r#"{"optics": {"zeta": 0.1, "eta": 2}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("optics"), "{err}");
        assert!(err.contains("eta"), "{err}");
        let err = resolve(r#"{"scan": {"n_pixels": "many"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("scan.n_pixels"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = resolve(r#"{"preset": "fig5_ideal", "optics": {"zeta": 1.0}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("optics.zeta"), "{err}");
        let err = resolve(r#"{"emitter": {"gamma2_ratio": 0.3}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("emitter.gamma2"), "{err}");
        let err = resolve(r#"{"scan": {"n_pixels": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("scan.n_pixels"), "{err}");
        assert!(resolve(r#"{"preset": "nope"}"#).is_err());
    }

    #[test]
    fn gamma1_units_and_default_ratio() {
        let c = resolve(r#"{"emitter": {"gamma1_hz": 1e6}}"#).unwrap();
        assert_eq!(c.preset.emitter.gamma1, TAU * 1e6);
        assert_eq!(c.preset.emitter.gamma2, 0.5 * TAU * 1e6);
        let c = resolve(
            r#"{"preset": "fig5_ideal", "emitter": {"gamma1_rad_s": 1e4, "gamma2_ratio": 2}}"#,
        )
        .unwrap();
        assert_eq!(
            (c.preset.emitter.gamma1, c.preset.emitter.gamma2),
            (1e4, 2e4)
        );
        assert!(resolve(r#"{"emitter": {"gamma1_hz": 1, "gamma1_rad_s": 1}}"#).is_err());
    }

    #[test]
    fn power_basis() {
        let c = resolve(r#"{"drive": {"power_cps": 1e6}}"#).unwrap();
        assert_eq!((c.p_las, c.p_detected), (Some(5e6), Some(1e6)));
        let c = resolve(r#"{"drive": {"power_cps": 1e6, "basis": "incident"}}"#).unwrap();
        assert_eq!(c.p_las, Some(1e6));
        let o = Overrides {
            power: Some(10.0),
            basis: Some(PowerBasis::Incident),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(ConfigFile::parse("{}").unwrap(), o).unwrap();
        assert_eq!(c.p_las, Some(10.0));
        assert!(resolve(r#"{"drive": {"power_cps": -1}}"#).is_err());
    }
}
