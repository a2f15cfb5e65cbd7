//! Named parameter presets, power sweeps and the figure reproductions built on them.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::fitting::{extract_snr, fit_lorentzian_with, FitOptions, FitResult, Shape, SnrEstimate};
use crate::model::{
    fwhm, power_from_saturation, saturation_from_power, visibility, DetectorParams, DriveParams,
    EmitterParams, OpticsParams,
};
use crate::sim::{
    simulate_scan, Channel, ScanConfig, Spectrum, DEFAULT_DWELL, DEFAULT_N_PIXELS, DEFAULT_N_SCANS,
    DEFAULT_SPAN_FWHM,
};
use crate::snr::{crossover_saturation, snr_res_argmax, SnrPoint};
use crate::{Error, Result};

/// Collected fraction giving a fluorescence SNR of ~100 at 1e6 detected cps with the DBATT preset.
pub const ZETA_DEFAULT: f64 = 0.0126;
/// Linewidth `gamma1 / 2 pi` of the DBATT molecule (Hz).
pub const DBATT_LINEWIDTH_HZ: f64 = 17e6;
/// Detected powers of the three spectrum pairs (cps).
pub const FIG2_DETECTED_POWERS: [f64; 3] = [1e6, 3e4, 2e3];
/// Detected power of the 10 % visibility reference point (cps).
pub const FIG2_VISIBILITY_QUOTE_POWER: f64 = 3.2e4;
/// Saturation range of the weak-excitation comparison.
pub const FIG4_SATURATION_WINDOW: (f64, f64) = (6e-6, 1e-2);
/// Radiative decay rates (rad/s) of the weak-emitter survey.
pub const FIG5_GAMMA1_GRID: [f64; 6] = [1e3, 1e4, 1e5, 1e6, 1e7, 1e8];
pub const PRESET_NAMES: [&str; 3] = ["fig3_dbatt", "fig5_ideal", "fig5_realistic"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub emitter: EmitterParams<f64>,
    pub optics: OpticsParams<f64>,
    pub detector: DetectorParams<f64>,
}

impl Preset {
    /// DBATT in n-tetradecane: mu = 0.2, K = 0.5, alpha = 0.2, lifetime-limited
    /// 17 MHz line, 100 cps dark counts.
    pub fn fig3_dbatt() -> Self {
        Self {
            name: "fig3_dbatt",
            emitter: EmitterParams {
                gamma1: TAU * DBATT_LINEWIDTH_HZ,
                gamma2: TAU * DBATT_LINEWIDTH_HZ / 2.0,
                alpha: 0.2,
            },
            optics: OpticsParams {
                k_geom: 0.5,
                zeta: ZETA_DEFAULT,
                mu: 0.2,
            },
            detector: DetectorParams {
                p_drk: 100.0,
                rin_kappa: 0.0,
            },
        }
    }

    /// Ideal weak emitter: alpha = mu = 1, K = 0.5, 20 cps dark counts.
    pub fn fig5_ideal(gamma1: f64) -> Self {
        Self {
            name: "fig5_ideal",
            emitter: EmitterParams {
                gamma1,
                gamma2: gamma1 / 2.0,
                alpha: 1.0,
            },
            optics: OpticsParams {
                k_geom: 0.5,
                zeta: 0.0,
                mu: 1.0,
            },
            detector: DetectorParams {
                p_drk: 20.0,
                rin_kappa: 0.0,
            },
        }
    }

    /// Weak emitter with realistic detection: K = 0.5, alpha = 0.5, mu = 0.2.
    pub fn fig5_realistic(gamma1: f64) -> Self {
        let mut p = Self::fig5_ideal(gamma1);
        p.name = "fig5_realistic";
        p.emitter.alpha = 0.5;
        p.optics.mu = 0.2;
        p
    }

    /// Looks up a preset; `gamma1` overrides the decay rate of the weak-emitter
    /// presets (default 1e3 rad/s) and is ignored otherwise.
    pub fn by_name(name: &str, gamma1: Option<f64>) -> Result<Self> {
        let g = gamma1.unwrap_or(FIG5_GAMMA1_GRID[0]);
        match name {
            "fig3_dbatt" => Ok(Self::fig3_dbatt()),
            "fig5_ideal" => Ok(Self::fig5_ideal(g)),
            "fig5_realistic" => Ok(Self::fig5_realistic(g)),
            other => Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?}; expected one of {PRESET_NAMES:?}"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.emitter.validate()?;
        self.optics.validate()?;
        self.detector.validate()?;
        let az = self.emitter.alpha * self.optics.zeta;
        if az >= 1.0 {
            return Err(Error::invalid(
                "optics.zeta",
                format!("alpha * zeta must be below 1 for an extinction dip, got {az}"),
            ));
        }
        Ok(())
    }

    pub fn saturation(&self, p_las: f64) -> f64 {
        saturation_from_power(p_las, &self.emitter, &self.optics)
    }

    pub fn incident_from_detected(&self, p_detected: f64) -> f64 {
        p_detected / self.optics.mu
    }
}

/// Acquisition settings shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanTemplate {
    pub n_pixels: usize,
    pub dwell: f64,
    pub n_scans: u32,
    /// Half-width of the grid in power-broadened FWHM.
    pub span_fwhm: f64,
    pub jitter_sigma: f64,
    pub leak_fraction: f64,
}

impl Default for ScanTemplate {
    fn default() -> Self {
        Self {
            n_pixels: DEFAULT_N_PIXELS,
            dwell: DEFAULT_DWELL,
            n_scans: DEFAULT_N_SCANS,
            span_fwhm: DEFAULT_SPAN_FWHM,
            jitter_sigma: 0.0,
            leak_fraction: 0.0,
        }
    }
}

impl ScanTemplate {
    pub fn t_int(&self) -> f64 {
        self.dwell * self.n_scans as f64
    }

    pub fn config(
        &self,
        channel: Channel,
        s: f64,
        em: &EmitterParams<f64>,
        seed: u64,
    ) -> ScanConfig {
        let half = self.span_fwhm * fwhm(s, em);
        ScanConfig {
            detuning_start: -half,
            detuning_stop: half,
            n_pixels: self.n_pixels,
            dwell: self.dwell,
            n_scans: self.n_scans,
            channel,
            seed,
            jitter_sigma: self.jitter_sigma,
            leak_fraction: self.leak_fraction,
        }
    }
}

/// One simulated acquisition, its Lorentzian fit and the extracted SNR.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub spectrum: Spectrum,
    pub fit: FitResult<f64>,
    pub snr: SnrEstimate<f64>,
}

/// Simulates, fits and extracts the SNR at incident power `p_las`.
///
/// The fitted width is bounded below by the natural linewidth `2 gamma2`.
pub fn measure(
    preset: &Preset,
    channel: Channel,
    p_las: f64,
    scan: &ScanConfig,
) -> Result<Measurement> {
    let drive = DriveParams::new(p_las, 0.0)?;
    let spectrum = simulate_scan(
        scan,
        &drive,
        &preset.emitter,
        &preset.optics,
        &preset.detector,
    )?;
    let opts = FitOptions::natural_linewidth(&preset.emitter);
    let fit = fit_lorentzian_with(&spectrum, Shape::for_channel(channel), &opts)?;
    let snr = extract_snr(&spectrum, &fit)?;
    Ok(Measurement { spectrum, fit, snr })
}

/// Seed of one (point, channel, repetition) task, mixed with SplitMix64 finalization.
pub fn task_seed(base: u64, point: usize, channel: Channel, rep: usize) -> u64 {
    let mut z = base
        .wrapping_add((point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((rep as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add((channel as u64 + 1).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub preset: Preset,
    /// Detected laser powers `mu * P_las` (cps).
    pub powers_detected: Vec<f64>,
    pub channels: Vec<Channel>,
    pub scan: ScanTemplate,
    /// Simulated repetitions per point and channel; 0 for analytic only.
    pub reps: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn log_spaced(preset: Preset, lo: f64, hi: f64, points: usize) -> Self {
        Self {
            preset,
            powers_detected: log_space(lo, hi, points),
            channels: Channel::ALL.to_vec(),
            scan: ScanTemplate::default(),
            reps: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preset.validate()?;
        if self.powers_detected.len() < 2 {
            return Err(Error::invalid("sweep.powers", "need at least 2 points"));
        }
        if let Some(p) = self
            .powers_detected
            .iter()
            .find(|p| !(**p > 0.0) || !p.is_finite())
        {
            return Err(Error::invalid(
                "sweep.powers",
                format!("powers must be > 0, got {p}"),
            ));
        }
        if self.channels.is_empty() {
            return Err(Error::invalid(
                "sweep.channels",
                "need at least one channel",
            ));
        }
        Ok(())
    }
}

pub fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points)
                .map(|i| match i {
                    0 => lo,
                    i if i == points - 1 => hi,
                    _ => (a + (b - a) * i as f64 / (points - 1) as f64).exp(),
                })
                .collect()
        }
    }
}

/// Mean and standard error of the extracted SNR over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedSnr {
    pub channel: Channel,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub n_ok: usize,
    pub failures: Vec<String>,
}

impl SimulatedSnr {
    fn from_results(
        channel: Channel,
        results: Vec<Result<Measurement>>,
    ) -> (Self, Option<Spectrum>) {
        let mut values = Vec::new();
        let mut failures = Vec::new();
        let mut first = None;
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok(m) => {
                    values.push(m.snr.snr);
                    if first.is_none() {
                        first = Some(m.spectrum);
                    }
                }
                Err(e) => failures.push(format!("rep {rep}: {e}")),
            }
        }
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let stderr = (n > 1).then(|| {
            let m = mean.unwrap_or(0.0);
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64)
                .sqrt()
        });
        (
            Self {
                channel,
                mean,
                stderr,
                n_ok: n,
                failures,
            },
            first,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: SnrPoint<f64>,
    pub p_las: f64,
    pub simulated: Vec<SimulatedSnr>,
    /// First successful spectrum per simulated channel.
    pub spectra: Vec<Spectrum>,
}

impl SweepRow {
    pub fn simulated(&self, channel: Channel) -> Option<&SimulatedSnr> {
        self.simulated.iter().find(|s| s.channel == channel)
    }

    pub fn failures(&self) -> impl Iterator<Item = String> + '_ {
        self.simulated.iter().flat_map(|s| {
            s.failures
                .iter()
                .map(move |f| format!("{}: {f}", s.channel))
        })
    }
}

/// Flat CSV record of a sweep row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub p_las_detected_cps: f64,
    pub p_las_cps: f64,
    pub saturation: f64,
    pub t_int_s: f64,
    pub snr_red: Option<f64>,
    pub snr_res: f64,
    pub sim_snr_red_mean: Option<f64>,
    pub sim_snr_red_stderr: Option<f64>,
    pub sim_snr_red_n: Option<usize>,
    pub sim_snr_res_mean: Option<f64>,
    pub sim_snr_res_stderr: Option<f64>,
    pub sim_snr_res_n: Option<usize>,
    pub failures: usize,
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        let red = r.simulated(Channel::Fluorescence);
        let res = r.simulated(Channel::Extinction);
        Self {
            p_las_detected_cps: r.point.p_las_detected,
            p_las_cps: r.p_las,
            saturation: r.point.s,
            t_int_s: r.point.t_int,
            snr_red: r.point.snr_red,
            snr_res: r.point.snr_res,
            sim_snr_red_mean: red.and_then(|s| s.mean),
            sim_snr_red_stderr: red.and_then(|s| s.stderr),
            sim_snr_red_n: red.map(|s| s.n_ok),
            sim_snr_res_mean: res.and_then(|s| s.mean),
            sim_snr_res_stderr: res.and_then(|s| s.stderr),
            sim_snr_res_n: res.map(|s| s.n_ok),
            failures: r.failures().count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub preset: Preset,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn records(&self) -> Vec<SweepRecord> {
        self.rows.iter().map(SweepRecord::from).collect()
    }

    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|r| {
                let p = r.point.p_las_detected;
                r.failures()
                    .map(move |f| format!("{p} cps {f}"))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Evaluates the analytic SNRs at every power and, with `reps > 0`, the mean
/// extracted SNR of simulated spectra. Rows come back sorted by power.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let p = &spec.preset;
    let t_int = spec.scan.t_int();
    let mut rows: Vec<SweepRow> = spec
        .powers_detected
        .par_iter()
        .enumerate()
        .map(|(i, &p_det)| -> Result<SweepRow> {
            let p_las = p.incident_from_detected(p_det);
            let s = p.saturation(p_las);
            let point = SnrPoint::evaluate(s, &p.emitter, &p.optics, &p.detector, t_int)?;
            let mut simulated = Vec::new();
            let mut spectra = Vec::new();
            if spec.reps > 0 {
                for &ch in &spec.channels {
                    let results: Vec<Result<Measurement>> = (0..spec.reps)
                        .into_par_iter()
                        .map(|rep| {
                            let cfg = spec.scan.config(
                                ch,
                                s,
                                &p.emitter,
                                task_seed(spec.seed, i, ch, rep),
                            );
                            measure(p, ch, p_las, &cfg)
                        })
                        .collect();
                    let (stat, first) = SimulatedSnr::from_results(ch, results);
                    simulated.push(stat);
                    spectra.extend(first);
                }
            }
            Ok(SweepRow {
                point,
                p_las,
                simulated,
                spectra,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.point.p_las_detected.total_cmp(&b.point.p_las_detected));
    Ok(SweepTable {
        preset: spec.preset,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detectability {
    pub detectable: bool,
    /// Saturation parameter at the optimum.
    pub best_s: f64,
    /// Incident power at the optimum (cps).
    pub best_power: f64,
    pub best_power_detected: f64,
    /// Peak extinction SNR in sqrt(Hz).
    pub best_snr: f64,
    /// Peak extinction SNR after `t_int`.
    pub snr_at_t: f64,
}

/// Whether the best achievable extinction SNR reaches `snr_target` within `t_int`.
pub fn detectability(
    em: &EmitterParams<f64>,
    opt: &OpticsParams<f64>,
    det: &DetectorParams<f64>,
    snr_target: f64,
    t_int: f64,
) -> Result<Detectability> {
    let (s, snr) = snr_res_argmax(em, opt, det)?;
    let p = power_from_saturation(s, em, opt)?;
    let snr_at_t = snr * t_int.sqrt();
    Ok(Detectability {
        detectable: snr_at_t >= snr_target,
        best_s: s,
        best_power: p,
        best_power_detected: opt.mu * p,
        best_snr: snr,
        snr_at_t,
    })
}

pub fn write_records<W: Write, R: Serialize>(records: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One spectrum pair entry of the three-power comparison.
#[derive(Debug, Clone, Serialize)]
pub struct Fig2Record {
    pub p_las_detected_cps: f64,
    pub channel: Channel,
    pub saturation: f64,
    pub visibility_analytic: f64,
    pub snr_analytic: Option<f64>,
    pub fit_converged: bool,
    pub fit_amplitude: Option<f64>,
    pub fit_baseline: Option<f64>,
    pub fit_fwhm_hz: Option<f64>,
    pub fit_visibility: Option<f64>,
    pub snr_extracted: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Fig2 {
    pub records: Vec<Fig2Record>,
    pub spectra: Vec<Spectrum>,
}

/// Simulated spectrum pairs at the three detected powers with the default
/// 100 x 10 ms acquisition.
pub fn reproduce_fig2(
    preset: &Preset,
    powers_detected: &[f64],
    scan: &ScanTemplate,
    seed: u64,
) -> Result<Fig2> {
    preset.validate()?;
    let tasks: Vec<(usize, f64, Channel)> = powers_detected
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| Channel::ALL.into_iter().map(move |c| (i, p, c)))
        .collect();
    let results: Vec<(Fig2Record, Option<Spectrum>)> = tasks
        .par_iter()
        .map(|&(i, p_det, ch)| -> Result<_> {
            let p_las = preset.incident_from_detected(p_det);
            let s = preset.saturation(p_las);
            let point = SnrPoint::evaluate(
                s,
                &preset.emitter,
                &preset.optics,
                &preset.detector,
                scan.t_int(),
            )?;
            let cfg = scan.config(ch, s, &preset.emitter, task_seed(seed, i, ch, 0));
            let m = measure(preset, ch, p_las, &cfg);
            let snr_analytic = match ch {
                Channel::Fluorescence => point.snr_red,
                Channel::Extinction => Some(point.snr_res),
            };
            let mut rec = Fig2Record {
                p_las_detected_cps: p_det,
                channel: ch,
                saturation: s,
                visibility_analytic: visibility(p_las, &preset.emitter, &preset.optics)?,
                snr_analytic,
                fit_converged: false,
                fit_amplitude: None,
                fit_baseline: None,
                fit_fwhm_hz: None,
                fit_visibility: None,
                snr_extracted: None,
                error: None,
            };
            match m {
                Ok(m) => {
                    rec.fit_converged = m.fit.converged;
                    rec.fit_amplitude = Some(m.fit.amplitude);
                    rec.fit_baseline = Some(m.fit.baseline);
                    rec.fit_fwhm_hz = Some(m.fit.fwhm / TAU);
                    rec.fit_visibility = Some(m.fit.visibility());
                    rec.snr_extracted = Some(m.snr.snr);
                    Ok((rec, Some(m.spectrum)))
                }
                Err(e) => {
                    rec.error = Some(e.to_string());
                    let drive = DriveParams::new(p_las, 0.0)?;
                    let spec = simulate_scan(
                        &cfg,
                        &drive,
                        &preset.emitter,
                        &preset.optics,
                        &preset.detector,
                    )?;
                    Ok((rec, Some(spec)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let (records, spectra): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Fig2 {
        records,
        spectra: spectra.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Fig3Record {
    pub p_las_detected_cps: f64,
    pub saturation: f64,
    pub snr_res: f64,
}

#[derive(Debug, Clone)]
pub struct Fig3 {
    pub records: Vec<Fig3Record>,
    pub peak_s: f64,
    pub peak_snr: f64,
}

/// Extinction SNR against detected power; the exact optimum is inserted into the grid.
pub fn reproduce_fig3(preset: &Preset, lo: f64, hi: f64, points: usize) -> Result<Fig3> {
    preset.validate()?;
    let (em, opt, det) = (&preset.emitter, &preset.optics, &preset.detector);
    let (peak_s, peak_snr) = snr_res_argmax(em, opt, det)?;
    let mut powers = log_space(lo, hi, points);
    let peak_p = opt.mu * power_from_saturation(peak_s, em, opt)?;
    if peak_p > lo && peak_p < hi {
        powers.push(peak_p);
    }
    powers.sort_by(f64::total_cmp);
    let records = powers
        .iter()
        .map(|&p_det| {
            let s = preset.saturation(p_det / opt.mu);
            Ok(Fig3Record {
                p_las_detected_cps: p_det,
                saturation: s,
                snr_res: crate::snr::snr_res(s, em, opt, det, 1.0)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Fig3 {
        records,
        peak_s,
        peak_snr,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Fig4Record {
    pub saturation: f64,
    pub p_las_detected_cps: f64,
    pub snr_res: f64,
    pub snr_red: f64,
    pub sim_snr_res_mean: Option<f64>,
    pub sim_snr_red_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Fig4 {
    pub records: Vec<Fig4Record>,
    pub crossover: Option<f64>,
    pub sweep: SweepTable,
}

/// Both channels over the weak-excitation saturation window, optionally with simulated points.
pub fn reproduce_fig4(
    preset: &Preset,
    points: usize,
    reps: usize,
    scan: &ScanTemplate,
    seed: u64,
) -> Result<Fig4> {
    let (em, opt) = (&preset.emitter, &preset.optics);
    let (s_lo, s_hi) = FIG4_SATURATION_WINDOW;
    let powers = log_space(s_lo, s_hi, points)
        .into_iter()
        .map(|s| power_from_saturation(s, em, opt).map(|p| opt.mu * p))
        .collect::<Result<Vec<_>>>()?;
    let spec = SweepSpec {
        preset: *preset,
        powers_detected: powers,
        channels: Channel::ALL.to_vec(),
        scan: *scan,
        reps,
        seed,
    };
    let sweep = run_sweep(&spec)?;
    let records = sweep
        .rows
        .iter()
        .map(|r| Fig4Record {
            saturation: r.point.s,
            p_las_detected_cps: r.point.p_las_detected,
            snr_res: r.point.snr_res / r.point.t_int.sqrt(),
            snr_red: r.point.snr_red.unwrap_or(f64::NAN) / r.point.t_int.sqrt(),
            sim_snr_res_mean: r.simulated(Channel::Extinction).and_then(|s| s.mean),
            sim_snr_red_mean: r.simulated(Channel::Fluorescence).and_then(|s| s.mean),
        })
        .collect();
    Ok(Fig4 {
        records,
        crossover: crossover_saturation(em, opt, &preset.detector)?,
        sweep,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Fig5Record {
    pub preset: &'static str,
    pub gamma1_rad_s: f64,
    pub p_las_detected_cps: f64,
    pub saturation: f64,
    pub snr_res: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Fig5Peak {
    pub preset: &'static str,
    pub gamma1_rad_s: f64,
    pub best_saturation: f64,
    pub best_p_las_detected_cps: f64,
    pub peak_snr_res: f64,
    pub detectable_at_target: bool,
}

#[derive(Debug, Clone)]
pub struct Fig5 {
    pub records: Vec<Fig5Record>,
    pub peaks: Vec<Fig5Peak>,
}

/// Extinction SNR against detected power for each decay rate in `gamma1_grid`.
pub fn reproduce_fig5(
    make: fn(f64) -> Preset,
    gamma1_grid: &[f64],
    lo: f64,
    hi: f64,
    points: usize,
    snr_target: f64,
) -> Result<Fig5> {
    let mut records = Vec::new();
    let mut peaks = Vec::new();
    for &g in gamma1_grid {
        let p = make(g);
        p.validate()?;
        for p_det in log_space(lo, hi, points) {
            let s = p.saturation(p_det / p.optics.mu);
            records.push(Fig5Record {
                preset: p.name,
                gamma1_rad_s: g,
                p_las_detected_cps: p_det,
                saturation: s,
                snr_res: crate::snr::snr_res(s, &p.emitter, &p.optics, &p.detector, 1.0)?,
            });
        }
        let d = detectability(&p.emitter, &p.optics, &p.detector, snr_target, 1.0)?;
        peaks.push(Fig5Peak {
            preset: p.name,
            gamma1_rad_s: g,
            best_saturation: d.best_s,
            best_p_las_detected_cps: d.best_power_detected,
            peak_snr_res: d.best_snr,
            detectable_at_target: d.detectable,
        });
    }
    Ok(Fig5 { records, peaks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snr::{snr_red, snr_res};

    #[test]
    fn zeta_calibration() {
        // Solve the fluorescence SNR for zeta so that SNR_red = 100 at 1e6 cps detected.
        let p = Preset::fig3_dbatt();
        let (em, opt, det) = (p.emitter, p.optics, p.detector);
        let s = p.saturation(1e6 / opt.mu);
        let per_zeta =
            opt.mu * (1.0 - em.alpha) * em.gamma1 / (2.0 * det.p_drk.sqrt()) * s / (1.0 + s);
        let zeta = 100.0 / per_zeta;
        assert!((zeta - ZETA_DEFAULT).abs() < 5e-5, "{zeta}");
    }

    #[test]
    fn presets_validate_and_resolve() {
        for name in PRESET_NAMES {
            let p = Preset::by_name(name, None).unwrap();
            p.validate().unwrap();
            assert_eq!(p.name, name);
        }
        assert!(Preset::by_name("fig9", None).is_err());
        let r = Preset::by_name("fig5_realistic", Some(1e6)).unwrap();
        assert_eq!(r.emitter.gamma1, 1e6);
        assert_eq!(
            (r.optics.k_geom, r.emitter.alpha, r.optics.mu),
            (0.5, 0.5, 0.2)
        );

        let mut full = Preset::fig5_ideal(1e3);
        full.optics.zeta = 1.0;
        assert!(
            matches!(full.validate(), Err(Error::InvalidParameter { field, .. }) if field == "optics.zeta")
        );
    }

    #[test]
    fn single_point_sweep_delegates() {
        let p = Preset::fig3_dbatt();
        let mut spec = SweepSpec::log_spaced(p, 1e6, 1e6, 2);
        spec.scan.n_scans = 100;
        let t = run_sweep(&spec).unwrap();
        let s = p.saturation(1e6 / 0.2);
        assert_eq!(t.rows[0].point.s, s);
        assert_eq!(
            t.rows[0].point.snr_res,
            snr_res(s, &p.emitter, &p.optics, &p.detector, 1.0).unwrap()
        );
        assert_eq!(
            t.rows[0].point.snr_red.unwrap(),
            snr_red(s, &p.emitter, &p.optics, &p.detector, 1.0).unwrap()
        );
        assert!(t.rows[0].simulated.is_empty());
    }

    #[test]
    fn sweep_rows_sorted_and_validated() {
        let p = Preset::fig3_dbatt();
        let mut spec = SweepSpec::log_spaced(p, 1e3, 1e9, 5);
        spec.powers_detected.reverse();
        let t = run_sweep(&spec).unwrap();
        assert!(t
            .rows
            .windows(2)
            .all(|w| w[0].point.p_las_detected < w[1].point.p_las_detected));
        spec.powers_detected = vec![1e3];
        assert!(run_sweep(&spec).is_err());
        spec.powers_detected = vec![1e3, -1.0];
        assert!(run_sweep(&spec).is_err());
    }

    #[test]
    fn fig3_curve_unimodal_with_peak_at_unity() {
        let f = reproduce_fig3(&Preset::fig3_dbatt(), 1e3, 1e9, 61).unwrap();
        let imax = f
            .records
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.snr_res.total_cmp(&b.1.snr_res))
            .unwrap()
            .0;
        assert!((f.records[imax].saturation - 1.0).abs() < 0.05);
        assert!(f.records[..=imax]
            .windows(2)
            .all(|w| w[0].snr_res < w[1].snr_res));
        assert!(f.records[imax..]
            .windows(2)
            .all(|w| w[0].snr_res > w[1].snr_res));
    }

    #[test]
    fn fig4_extinction_leads_below_crossover() {
        let f = reproduce_fig4(&Preset::fig3_dbatt(), 40, 0, &ScanTemplate::default(), 0).unwrap();
        let sx = f.crossover.unwrap();
        assert!(sx > FIG4_SATURATION_WINDOW.0 && sx <= FIG4_SATURATION_WINDOW.1);
        for r in &f.records {
            if r.saturation < sx {
                assert!(r.snr_res > r.snr_red);
            }
        }
        assert!(f
            .records
            .windows(2)
            .all(|w| w[1].snr_res > w[0].snr_res && w[1].snr_red > w[0].snr_red));
    }

    #[test]
    fn fig5_peaks_grow_as_sqrt_gamma1() {
        let f = reproduce_fig5(Preset::fig5_ideal, &FIG5_GAMMA1_GRID, 1e-1, 1e11, 25, 5.0).unwrap();
        for w in f.peaks.windows(2) {
            let ratio = w[1].peak_snr_res / w[0].peak_snr_res;
            // Dark counts matter only for the slowest emitters.
            assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.02, "{ratio}");
        }
        assert!(f.peaks.iter().all(|p| p.detectable_at_target));
    }

    #[test]
    fn detectability_examples() {
        let ideal = Preset::fig5_ideal(1e3);
        let d = detectability(&ideal.emitter, &ideal.optics, &ideal.detector, 5.0, 1.0).unwrap();
        assert!(d.detectable);
        assert!((d.best_snr - 7.9).abs() < 0.1, "{}", d.best_snr);
        let d0 = detectability(&ideal.emitter, &ideal.optics, &ideal.detector, 0.0, 1e-9).unwrap();
        assert!(d0.detectable);

        let real = Preset::fig5_realistic(1e3);
        let d = detectability(&real.emitter, &real.optics, &real.detector, 5.0, 1.0).unwrap();
        assert!(!d.detectable);
        assert!((d.best_snr - 2.5).abs() < 0.1, "{}", d.best_snr);
        let need = (5.0 / d.best_snr).powi(2);
        assert!(need > 3.5 && need < 4.5, "{need}");
        assert!(
            detectability(&real.emitter, &real.optics, &real.detector, 5.0, 4.5)
                .unwrap()
                .detectable
        );
    }

    #[test]
    fn visibility_shrinks_with_saturation() {
        let p = Preset::fig3_dbatt();
        let weak = visibility(1e-6, &p.emitter, &p.optics).unwrap();
        for &s in &[0.1, 1.0, 10.0] {
            let pl = power_from_saturation(s, &p.emitter, &p.optics).unwrap();
            let v = visibility(pl, &p.emitter, &p.optics).unwrap();
            assert!((v / (weak / (1.0 + s)) - 1.0).abs() < 1e-9);
        }
        for &pd in &FIG2_DETECTED_POWERS[1..] {
            let v = visibility(p.incident_from_detected(pd), &p.emitter, &p.optics).unwrap();
            assert!((v - 0.10).abs() < 0.005);
        }
    }

    #[test]
    fn task_seeds_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..20 {
            for ch in Channel::ALL {
                for r in 0..20 {
                    assert!(seen.insert(task_seed(7, i, ch, r)));
                }
            }
        }
    }
}
