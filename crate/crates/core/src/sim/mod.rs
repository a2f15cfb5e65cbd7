//! Monte Carlo photon-counting frequency scans.
//!
//! A scan steps the laser across a detuning grid, dwells on each pixel and
//! records Poisson-distributed counts. Repeated scans are summed pixel by
//! pixel, as in a multi-scan acquisition that averages out slow drifts.

mod io;
mod rng;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    extinction_dip, fwhm, red_fluorescence, saturation_from_power, DetectorParams, DriveParams,
    EmitterParams, OpticsParams,
};
use crate::{Error, Result, Scalar};

pub use io::{read_csv, read_json, write_csv, write_json, SpectrumDocument};
use rng::{Lane, StreamFactory, MAX_INDEX};

/// Default number of summed scans.
pub const DEFAULT_N_SCANS: u32 = 100;
/// Default dwell per pixel and scan (s).
pub const DEFAULT_DWELL: f64 = 0.01;
pub const DEFAULT_N_PIXELS: usize = 200;
/// Default half-span of the grid in units of the power-broadened FWHM.
pub const DEFAULT_SPAN_FWHM: f64 = 10.0;
pub const MIN_PIXELS: usize = 8;

/// Detection channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Red-shifted emission behind a long-pass filter.
    Fluorescence,
    /// Transmitted laser behind a resonant filter.
    Extinction,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Fluorescence, Channel::Extinction];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Fluorescence => "fluorescence",
            Channel::Extinction => "extinction",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fluorescence" => Ok(Channel::Fluorescence),
            "extinction" => Ok(Channel::Extinction),
            other => Err(Error::invalid(
                "channel",
                format!("expected fluorescence or extinction, got {other:?}"),
            )),
        }
    }
}

/// Acquisition settings of one frequency scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// First grid detuning (rad/s).
    pub detuning_start: f64,
    /// Last grid detuning (rad/s).
    pub detuning_stop: f64,
    pub n_pixels: usize,
    /// Dwell per pixel and scan (s).
    pub dwell: f64,
    pub n_scans: u32,
    pub channel: Channel,
    pub seed: u64,
    /// Standard deviation of the per-scan line-center shift (rad/s).
    pub jitter_sigma: f64,
    /// Fraction of the detected laser power leaking through the long-pass filter.
    pub leak_fraction: f64,
}

impl ScanConfig {
    /// Default acquisition centred on the line: +-10 power-broadened FWHM,
    /// 200 pixels, 100 scans of 10 ms.
    pub fn around_line(channel: Channel, s: f64, em: &EmitterParams<f64>, seed: u64) -> Self {
        let half = DEFAULT_SPAN_FWHM * fwhm(s, em);
        Self {
            detuning_start: -half,
            detuning_stop: half,
            n_pixels: DEFAULT_N_PIXELS,
            dwell: DEFAULT_DWELL,
            n_scans: DEFAULT_N_SCANS,
            channel,
            seed,
            jitter_sigma: 0.0,
            leak_fraction: 0.0,
        }
    }

    /// Total integration time per pixel (s).
    pub fn t_int(&self) -> f64 {
        self.dwell * self.n_scans as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pixels < MIN_PIXELS || self.n_pixels as u64 > MAX_INDEX {
            return Err(Error::invalid(
                "scan.n_pixels",
                format!(
                    "must be in [{MIN_PIXELS}, {MAX_INDEX}], got {}",
                    self.n_pixels
                ),
            ));
        }
        if !(self.detuning_start.is_finite() && self.detuning_stop.is_finite())
            || !(self.detuning_stop > self.detuning_start)
        {
            return Err(Error::invalid(
                "scan.detuning_stop",
                "must be finite and greater than detuning_start",
            ));
        }
        if !(self.dwell > 0.0) || !self.dwell.is_finite() {
            return Err(Error::invalid(
                "scan.dwell",
                format!("must be > 0, got {}", self.dwell),
            ));
        }
        if self.n_scans == 0 || self.n_scans as u64 > MAX_INDEX {
            return Err(Error::invalid(
                "scan.n_scans",
                format!("must be >= 1, got {}", self.n_scans),
            ));
        }
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return Err(Error::invalid("scan.jitter_sigma", "must be >= 0"));
        }
        if !(self.leak_fraction >= 0.0) || !self.leak_fraction.is_finite() {
            return Err(Error::invalid("scan.leak_fraction", "must be >= 0"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_pixels;
        let span = self.detuning_stop - self.detuning_start;
        (0..n)
            .map(|i| self.detuning_start + span * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Everything needed to reproduce or interpret a recorded spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub channel: Channel,
    pub dwell: f64,
    /// Total number of scans summed into the counts.
    pub n_scans: u32,
    pub seed: u64,
    pub jitter_sigma: f64,
    pub leak_fraction: f64,
    /// Incident laser power (cps, before losses).
    pub p_las: f64,
    pub emitter: EmitterParams<f64>,
    pub optics: OpticsParams<f64>,
    pub detector: DetectorParams<f64>,
    /// (scan, pixel) cells whose noisy expected rate went negative and was clamped to zero.
    pub clamped_cells: u64,
}

impl SpectrumMeta {
    pub fn saturation(&self) -> f64 {
        saturation_from_power(self.p_las, &self.emitter, &self.optics)
    }

    pub fn p_las_detected(&self) -> f64 {
        self.optics.mu * self.p_las
    }

    pub fn t_int(&self) -> f64 {
        self.dwell * self.n_scans as f64
    }
}

/// Accumulated photon counts on a detuning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Detuning of each pixel (rad/s), increasing.
    pub detunings: Vec<f64>,
    pub counts: Vec<u64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Expected detector rate split into the part carried by laser light
/// (subject to intensity noise) and the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms<T> {
    pub laser: T,
    pub other: T,
}

impl<T: Scalar> RateTerms<T> {
    pub fn total(&self) -> T {
        self.laser + self.other
    }
}

pub fn rate_terms<T: Scalar>(
    channel: Channel,
    detuning: T,
    p_las: T,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    leak_fraction: T,
) -> Result<RateTerms<T>> {
    let s = saturation_from_power(p_las, em, opt);
    Ok(match channel {
        Channel::Fluorescence => RateTerms {
            laser: leak_fraction * opt.mu * p_las,
            other: opt.mu * red_fluorescence(s, detuning, em, opt) + det.p_drk,
        },
        Channel::Extinction => RateTerms {
            laser: opt.mu * p_las,
            other: det.p_drk - opt.mu * extinction_dip(s, detuning, em, opt)?,
        },
    })
}

/// Mean detector count rate (cps) for a channel at the given drive.
pub fn expected_rate<T: Scalar>(
    channel: Channel,
    drive: &DriveParams<T>,
    em: &EmitterParams<T>,
    opt: &OpticsParams<T>,
    det: &DetectorParams<T>,
    leak_fraction: T,
) -> Result<T> {
    let r = rate_terms(
        channel,
        drive.detuning,
        drive.p_las,
        em,
        opt,
        det,
        leak_fraction,
    )?;
    Ok(r.total().max(T::zero()))
}

fn poisson<R: rand::Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        // Only reachable for non-finite means, which validation excludes.
        Err(_) => 0,
    }
}

/// Simulates a multi-scan acquisition.
///
/// Each scan shifts the line centre by a Gaussian jitter. Each pixel
/// draws one laser intensity factor `max(0, 1 + kappa g)` applied to the
/// laser-derived part of its rate in every scan. Counts are the sum over scans
/// of Poisson draws with mean `rate * dwell`. Output is a pure function of the
/// inputs and `cfg.seed`, independent of the rayon thread count.
pub fn simulate_scan(
    cfg: &ScanConfig,
    drive: &DriveParams<f64>,
    em: &EmitterParams<f64>,
    opt: &OpticsParams<f64>,
    det: &DetectorParams<f64>,
) -> Result<Spectrum> {
    cfg.validate()?;
    drive.validate()?;
    em.validate()?;
    opt.validate()?;
    det.validate()?;
    if cfg.channel == Channel::Extinction && !(em.alpha * opt.zeta < 1.0) {
        return Err(Error::DipPrefactor(em.alpha * opt.zeta));
    }

    let streams = StreamFactory::new(cfg.seed);
    let centers: Vec<f64> = (0..cfg.n_scans as u64)
        .map(|scan| {
            if cfg.jitter_sigma > 0.0 {
                let mut rng = streams.stream(Lane::Jitter, scan, 0);
                Normal::new(0.0, cfg.jitter_sigma)
                    .expect("validated sigma")
                    .sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let grid = cfg.grid();
    let base_detuning = drive.detuning;

    let per_pixel: Vec<(u64, u64)> = grid
        .par_iter()
        .enumerate()
        .map(|(pixel, &x)| {
            let intensity = if det.rin_kappa > 0.0 {
                let mut rng = streams.stream(Lane::Intensity, 0, pixel as u64);
                let g: f64 = StandardNormal.sample(&mut rng);
                (1.0 + det.rin_kappa * g).max(0.0)
            } else {
                1.0
            };
            let mut total = 0u64;
            let mut clamped = 0u64;
            for (scan, &center) in centers.iter().enumerate() {
                let terms = rate_terms(
                    cfg.channel,
                    x + base_detuning - center,
                    drive.p_las,
                    em,
                    opt,
                    det,
                    cfg.leak_fraction,
                )
                .expect("prefactor checked above");
                let mut rate = terms.laser * intensity + terms.other;
                if rate < 0.0 {
                    rate = 0.0;
                    clamped += 1;
                }
                let mut rng = streams.stream(Lane::Counts, scan as u64, pixel as u64);
                total += poisson(rate * cfg.dwell, &mut rng);
            }
            (total, clamped)
        })
        .collect();

    Ok(Spectrum {
        detunings: grid,
        counts: per_pixel.iter().map(|p| p.0).collect(),
        meta: SpectrumMeta {
            channel: cfg.channel,
            dwell: cfg.dwell,
            n_scans: cfg.n_scans,
            seed: cfg.seed,
            jitter_sigma: cfg.jitter_sigma,
            leak_fraction: cfg.leak_fraction,
            p_las: drive.p_las,
            emitter: *em,
            optics: *opt,
            detector: *det,
            clamped_cells: per_pixel.iter().map(|p| p.1).sum(),
        },
    })
}

/// Pixel-wise sum of spectra recorded on the same grid and channel.
pub fn accumulate(spectra: &[Spectrum]) -> Result<Spectrum> {
    let (first, rest) = spectra.split_first().ok_or(Error::EmptyAccumulation)?;
    let mut out = first.clone();
    for s in rest {
        if s.detunings != first.detunings {
            return Err(Error::GridMismatch("detuning grids differ".into()));
        }
        if s.meta.channel != first.meta.channel {
            return Err(Error::GridMismatch("channels differ".into()));
        }
        if s.meta.dwell != first.meta.dwell {
            return Err(Error::GridMismatch("dwell times differ".into()));
        }
        for (acc, &c) in out.counts.iter_mut().zip(&s.counts) {
            *acc += c;
        }
        out.meta.n_scans += s.meta.n_scans;
        out.meta.clamped_cells += s.meta.clamped_cells;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dbatt(
        p_drk: f64,
        kappa: f64,
    ) -> (EmitterParams<f64>, OpticsParams<f64>, DetectorParams<f64>) {
        (
            EmitterParams::lifetime_limited(2.0 * PI * 17e6, 0.2).unwrap(),
            OpticsParams::new(0.5, 0.0126, 0.2).unwrap(),
            DetectorParams::new(p_drk, kappa).unwrap(),
        )
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn rate_examples() {
        let (em, opt, det) = dbatt(100.0, 0.0);
        let p = 1e6 / opt.mu;
        let far = DriveParams::new(p, 1e15).unwrap();
        let r = expected_rate(Channel::Extinction, &far, &em, &opt, &det, 0.0).unwrap();
        assert!((r - (1e6 + 100.0)).abs() < 1e-3);

        // Extinction on resonance at weak drive: 10 % dip.
        let p = 3e4 / opt.mu;
        let on = DriveParams::new(p, 0.0).unwrap();
        let r = expected_rate(Channel::Extinction, &on, &em, &opt, &det, 0.0).unwrap();
        let dip = 1.0 - (r - 100.0) / 3e4;
        assert!((dip - 0.10).abs() < 0.005, "{dip}");

        // Fluorescence at 3.2e4 cps detected barely exceeds the 100 cps dark rate.
        let on = DriveParams::from_detected(3.2e4, 0.0, &opt).unwrap();
        let r = expected_rate(Channel::Fluorescence, &on, &em, &opt, &det, 0.0).unwrap();
        assert!(r > 100.0 && r < 200.0, "{r}");

        let leak = expected_rate(Channel::Fluorescence, &on, &em, &opt, &det, 1e-3).unwrap();
        assert!((leak - r - 32.0).abs() < 1e-9);
    }

    #[test]
    fn rates_bounded() {
        let (em, opt, det) = dbatt(50.0, 0.0);
        for &p in &[0.0, 1e3, 1e6, 1e9, 1e12] {
            for &d in &[0.0, 1e7, -3e8] {
                let drive = DriveParams::new(p, d).unwrap();
                let e = expected_rate(Channel::Extinction, &drive, &em, &opt, &det, 0.0).unwrap();
                let f = expected_rate(Channel::Fluorescence, &drive, &em, &opt, &det, 0.0).unwrap();
                assert!(e >= 50.0 - 1e-9 && e <= opt.mu * p + 50.0);
                assert!(f >= 50.0);
            }
        }
    }

    #[test]
    fn dark_only_mean() {
        let (em, opt, det) = dbatt(100.0, 0.0);
        let mut cfg = ScanConfig::around_line(Channel::Fluorescence, 0.0, &em, 11);
        cfg.n_pixels = 10_000;
        cfg.n_scans = 10;
        let drive = DriveParams::new(0.0, 0.0).unwrap();
        let spec = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let (m, v) = mean_var(&spec.counts_f64());
        let expected = 100.0 * cfg.dwell * 10.0;
        let se = (v / 10_000.0).sqrt();
        assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected}");
    }

    #[test]
    fn poisson_dispersion() {
        // Far off resonance the extinction rate is flat: variance/mean ~ 1.
        let (em, opt, det) = dbatt(100.0, 0.0);
        let mut cfg = ScanConfig::around_line(Channel::Extinction, 0.0, &em, 3);
        cfg.detuning_start = 1e12;
        cfg.detuning_stop = 1.0001e12;
        cfg.n_pixels = 20_000;
        cfg.n_scans = 1;
        let drive = DriveParams::from_detected(1e4, 0.0, &opt).unwrap();
        let spec = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let (m, v) = mean_var(&spec.counts_f64());
        assert!((0.9..=1.1).contains(&(v / m)), "{}", v / m);
    }

    #[test]
    fn intensity_noise_matches_budget() {
        // Per-pixel factor is shared across scans, so the summed counts carry
        // (kappa * mu * P * t)^2 of extra variance.
        let (em, opt, det) = dbatt(0.0, 0.01);
        let mut cfg = ScanConfig::around_line(Channel::Extinction, 0.0, &em, 5);
        cfg.detuning_start = 1e12;
        cfg.detuning_stop = 1.0001e12;
        cfg.n_pixels = 20_000;
        cfg.n_scans = 4;
        let drive = DriveParams::from_detected(1e5, 0.0, &opt).unwrap();
        let spec = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let (m, v) = mean_var(&spec.counts_f64());
        let t = cfg.t_int();
        let expected = 1e5 * t + (0.01 * 1e5 * t).powi(2);
        assert!((v / expected - 1.0).abs() < 0.05, "{v} vs {expected}");
        assert!((m / (1e5 * t) - 1.0).abs() < 0.01);
    }

    #[test]
    fn huge_intensity_noise_clamps() {
        let (em, opt, det) = dbatt(0.0, 3.0);
        let mut cfg = ScanConfig::around_line(Channel::Extinction, 0.0, &em, 5);
        cfg.n_scans = 2;
        let drive = DriveParams::from_detected(1e5, 0.0, &opt).unwrap();
        let spec = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        assert!(spec.meta.clamped_cells > 0);
    }

    #[test]
    fn seed_determinism_and_thread_independence() {
        let (em, opt, det) = dbatt(100.0, 1e-3);
        let mut cfg = ScanConfig::around_line(Channel::Extinction, 1e-3, &em, 42);
        cfg.jitter_sigma = 1e7;
        let drive = DriveParams::from_detected(1e5, 0.0, &opt).unwrap();
        let a = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let b = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
        cfg.seed = 43;
        let d = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        assert_ne!(a.counts, d.counts);
    }

    #[test]
    fn accumulate_sums_pixelwise() {
        let (em, opt, det) = dbatt(100.0, 0.0);
        let cfg = ScanConfig::around_line(Channel::Extinction, 1e-3, &em, 1);
        let drive = DriveParams::from_detected(1e4, 0.0, &opt).unwrap();
        let a = simulate_scan(&cfg, &drive, &em, &opt, &det).unwrap();
        let sum = accumulate(&[a.clone(), a.clone()]).unwrap();
        assert!(sum.counts.iter().zip(&a.counts).all(|(s, x)| *s == 2 * x));
        assert_eq!(sum.meta.n_scans, 2 * cfg.n_scans);
        assert!(matches!(accumulate(&[]), Err(Error::EmptyAccumulation)));

        let mut other = cfg;
        other.n_pixels = 100;
        let b = simulate_scan(&other, &drive, &em, &opt, &det).unwrap();
        assert!(matches!(accumulate(&[a, b]), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn accumulated_single_scans_match_multiscan_distribution() {
        // Statistical oracle: n single-scan spectra summed vs one n-scan
        // simulation, compared via the mean and variance of a fixed pixel over
        // 1000 repetitions.
        let (em, opt, det) = dbatt(100.0, 0.0);
        let drive = DriveParams::from_detected(2e3, 0.0, &opt).unwrap();
        let mut base = ScanConfig::around_line(Channel::Extinction, 0.0, &em, 0);
        base.n_pixels = 9;
        base.detuning_start = -1e8;
        base.detuning_stop = 1e8;
        let n = 5u32;
        let reps = 1000u64;
        let pixel = 4;
        let mut summed = Vec::new();
        let mut direct = Vec::new();
        for r in 0..reps {
            let singles: Vec<Spectrum> = (0..n as u64)
                .map(|k| {
                    let mut c = base;
                    c.n_scans = 1;
                    c.seed = 1_000_000 + r * 16 + k;
                    simulate_scan(&c, &drive, &em, &opt, &det).unwrap()
                })
                .collect();
            summed.push(accumulate(&singles).unwrap().counts[pixel] as f64);
            let mut c = base;
            c.n_scans = n;
            c.seed = 5_000_000 + r;
            direct.push(simulate_scan(&c, &drive, &em, &opt, &det).unwrap().counts[pixel] as f64);
        }
        let (ma, va) = mean_var(&summed);
        let (mb, vb) = mean_var(&direct);
        let se_mean = ((va + vb) / reps as f64).sqrt();
        assert!((ma - mb).abs() < 3.0 * se_mean, "{ma} vs {mb}");
        // Variance of a Poisson sample variance ~ (m + 2 m^2)/n.
        let se_var =
            ((ma + 2.0 * ma * ma) / reps as f64 + (mb + 2.0 * mb * mb) / reps as f64).sqrt();
        assert!((va - vb).abs() < 3.0 * se_var, "{va} vs {vb}");
    }

    #[test]
    fn config_validation() {
        let (em, _, _) = dbatt(100.0, 0.0);
        let good = ScanConfig::around_line(Channel::Extinction, 0.0, &em, 0);
        assert!(good.validate().is_ok());
        let mut c = good;
        c.n_pixels = 7;
        assert!(c.validate().is_err());
        let mut c = good;
        c.detuning_stop = c.detuning_start;
        assert!(c.validate().is_err());
        let mut c = good;
        c.n_scans = 0;
        assert!(c.validate().is_err());
        let mut c = good;
        c.dwell = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(
            "extinction".parse::<Channel>().unwrap(),
            Channel::Extinction
        );
        assert!("red".parse::<Channel>().is_err());
    }
}
