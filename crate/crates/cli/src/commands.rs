use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use emitterscope::fitting::{
    extract_snr, fit_lorentzian_with, saturation_from_spectrum, FitOptions, FitResult, Shape,
    SnrEstimate,
};
use emitterscope::model::{fwhm, power_from_saturation, visibility, DriveParams};
use emitterscope::scenarios::{
    log_space, reproduce_fig2, reproduce_fig3, reproduce_fig4, reproduce_fig5, run_sweep,
    task_seed, write_records, Preset, SweepSpec, FIG2_DETECTED_POWERS, FIG5_GAMMA1_GRID,
};
use emitterscope::sim::{read_csv, read_json, simulate_scan, write_csv, Channel, Spectrum};
use emitterscope::snr::{
    crossover_saturation, snr_res_argmax, snr_res_peak_weak_collection, SnrPoint,
};
use serde::Serialize;

use crate::config::RunConfig;

pub const DEFAULT_OUT_DIR: &str = "emitterscope-out";

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some points failed; an error manifest was written.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

/// Saturation range covered by default sweeps.
const DEFAULT_S_RANGE: (f64, f64) = (1e-6, 1e2);
const DEFAULT_SWEEP_POINTS: usize = 25;
const DEFAULT_FIG3_POINTS: usize = 201;
const DEFAULT_FIG4_POINTS: usize = 41;
const DEFAULT_FIG5_RANGE: (f64, f64) = (1e-3, 1e11);
const DEFAULT_FIG5_POINTS: usize = 281;

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv_file<R: Serialize>(path: &Path, records: &[R]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    write_records(records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_spectrum(path: &Path, spec: &Spectrum) -> anyhow::Result<()> {
    let mut w = create(path)?;
    write_csv(spec, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn spectrum_file_name(preset: &str, channel: Channel, p_detected: f64) -> String {
    format!("{preset}_{channel}_{p_detected}.csv")
}

#[derive(Debug, Serialize)]
struct ErrorEntry {
    context: String,
    error: String,
}

fn finish(errors: Vec<ErrorEntry>, manifest: &Path) -> anyhow::Result<Status> {
    if errors.is_empty() {
        return Ok(Status::Ok);
    }
    write_json_file(manifest, &errors)?;
    eprintln!("{} failure(s); see {}", errors.len(), manifest.display());
    Ok(Status::Partial)
}

fn require_power(cfg: &RunConfig) -> anyhow::Result<(f64, f64)> {
    match (cfg.p_las, cfg.p_detected) {
        (Some(p), Some(d)) => Ok((p, d)),
        _ => bail!("drive.power_cps: required (set it in the config or pass --power)"),
    }
}

#[derive(Debug, Serialize)]
pub struct AnalyticReport {
    pub preset: &'static str,
    pub p_las_cps: f64,
    pub p_las_detected_cps: f64,
    pub saturation: f64,
    pub t_int_s: f64,
    pub snr_red: Option<f64>,
    pub snr_res: f64,
    pub visibility: f64,
    pub fwhm_hz: f64,
    pub crossover_saturation: Option<f64>,
    pub argmax_saturation: f64,
    pub argmax_p_las_detected_cps: f64,
    pub argmax_snr_res: f64,
}

pub fn analytic_report(cfg: &RunConfig) -> anyhow::Result<AnalyticReport> {
    let (p_las, p_det) = require_power(cfg)?;
    let p = &cfg.preset;
    let (em, opt, det) = (&p.emitter, &p.optics, &p.detector);
    let s = p.saturation(p_las);
    let point = SnrPoint::evaluate(s, em, opt, det, cfg.t_int)?;
    let (s_star, peak) = snr_res_argmax(em, opt, det)?;
    Ok(AnalyticReport {
        preset: p.name,
        p_las_cps: p_las,
        p_las_detected_cps: p_det,
        saturation: s,
        t_int_s: cfg.t_int,
        snr_red: point.snr_red,
        snr_res: point.snr_res,
        visibility: visibility(p_las, em, opt)?,
        fwhm_hz: fwhm(s, em) / TAU,
        crossover_saturation: crossover_saturation(em, opt, det)?,
        argmax_saturation: s_star,
        argmax_p_las_detected_cps: opt.mu * power_from_saturation(s_star, em, opt)?,
        argmax_snr_res: peak * cfg.t_int.sqrt(),
    })
}

pub fn analytic(cfg: &RunConfig) -> anyhow::Result<Status> {
    let report = analytic_report(cfg)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if cfg.out.is_some() {
        let path = out_dir(cfg)?.join(format!(
            "{}_analytic_{}.json",
            report.preset, report.p_las_detected_cps
        ));
        write_json_file(&path, &report)?;
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub spectrum: String,
    pub channel: Channel,
    pub p_las_detected_cps: f64,
    pub saturation: f64,
    pub t_int_s: f64,
    pub snr_analytic: Option<f64>,
    pub fit: Option<FitResult<f64>>,
    pub fwhm_hz: Option<f64>,
    pub saturation_from_linewidth: Option<f64>,
    pub snr: Option<SnrEstimate<f64>>,
    pub error: Option<String>,
}

fn fit_report(spec: &Spectrum, name: String) -> FitReport {
    let m = &spec.meta;
    let s = m.saturation();
    let snr_analytic = SnrPoint::evaluate(s, &m.emitter, &m.optics, &m.detector, m.t_int())
        .ok()
        .and_then(|pt| match m.channel {
            Channel::Fluorescence => pt.snr_red,
            Channel::Extinction => Some(pt.snr_res),
        });
    let mut report = FitReport {
        spectrum: name,
        channel: m.channel,
        p_las_detected_cps: m.p_las_detected(),
        saturation: s,
        t_int_s: m.t_int(),
        snr_analytic,
        fit: None,
        fwhm_hz: None,
        saturation_from_linewidth: None,
        snr: None,
        error: None,
    };
    let opts = FitOptions::natural_linewidth(&m.emitter);
    match fit_lorentzian_with(spec, Shape::for_channel(m.channel), &opts) {
        Ok(f) => {
            report.fit = Some(f);
            report.fwhm_hz = Some(f.fwhm / TAU);
            report.saturation_from_linewidth = saturation_from_spectrum(&f, &m.emitter).ok();
            match extract_snr(spec, &f) {
                Ok(e) => report.snr = Some(e),
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

pub fn simulate(cfg: &RunConfig, verbose: bool) -> anyhow::Result<Status> {
    let (p_las, p_det) = require_power(cfg)?;
    let p = &cfg.preset;
    let dir = out_dir(cfg)?;
    let s = p.saturation(p_las);
    let drive = DriveParams::new(p_las, 0.0)?;
    let mut errors = Vec::new();
    for &ch in &cfg.channels {
        let scan = cfg
            .scan
            .config(ch, s, &p.emitter, task_seed(cfg.seed, 0, ch, 0));
        let spec = simulate_scan(&scan, &drive, &p.emitter, &p.optics, &p.detector)?;
        let name = spectrum_file_name(p.name, ch, p_det);
        let path = dir.join(&name);
        write_spectrum(&path, &spec)?;
        let report = fit_report(&spec, name.clone());
        let fit_path = path.with_file_name(format!("{}_fit.json", name.trim_end_matches(".csv")));
        write_json_file(&fit_path, &report)?;
        match (&report.snr, &report.error) {
            (Some(e), None) => println!(
                "{ch}: S={s:.4e} snr={:.3} analytic={} -> {}",
                e.snr,
                report
                    .snr_analytic
                    .map_or("n/a".into(), |v| format!("{v:.3}")),
                path.display()
            ),
            (_, err) => {
                let msg = err.clone().unwrap_or_default();
                println!("{ch}: S={s:.4e} fit failed ({msg}) -> {}", path.display());
                errors.push(ErrorEntry {
                    context: name,
                    error: msg,
                });
            }
        }
        if verbose {
            eprintln!("wrote {} and {}", path.display(), fit_path.display());
        }
    }
    finish(
        errors,
        &dir.join(format!("{}_simulate_errors.json", p.name)),
    )
}

pub fn fit(cfg: &RunConfig, input: &Path) -> anyhow::Result<Status> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rdr = BufReader::new(f);
    let spec = if input.extension().is_some_and(|e| e == "json") {
        read_json(rdr)
    } else {
        read_csv(rdr)
    }
    .with_context(|| format!("reading {}", input.display()))?;
    let name = input
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let report = fit_report(&spec, name.clone());
    println!("{}", serde_json::to_string_pretty(&report)?);
    if cfg.out.is_some() {
        let stem = input
            .file_stem()
            .map_or_else(|| "spectrum".into(), |s| s.to_string_lossy().into_owned());
        write_json_file(&out_dir(cfg)?.join(format!("{stem}_fit.json")), &report)?;
    }
    if let Some(e) = report.error {
        bail!("fit of {name} failed: {e}");
    }
    Ok(Status::Ok)
}

fn default_powers(p: &Preset, points: usize) -> anyhow::Result<Vec<f64>> {
    let (lo, hi) = DEFAULT_S_RANGE;
    let d = |s| -> anyhow::Result<f64> {
        Ok(p.optics.mu * power_from_saturation(s, &p.emitter, &p.optics)?)
    };
    Ok(log_space(d(lo)?, d(hi)?, points))
}

fn sweep_powers(cfg: &RunConfig, default_points: usize) -> anyhow::Result<Vec<f64>> {
    if let Some(v) = &cfg.sweep_powers {
        return Ok(v.clone());
    }
    let points = cfg.sweep_range.2.unwrap_or(default_points);
    let defaults = default_powers(&cfg.preset, 2)?;
    let lo = cfg.sweep_range.0.unwrap_or(defaults[0]);
    let hi = cfg.sweep_range.1.unwrap_or(defaults[1]);
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        bail!("sweep.power_max_cps: must be greater than power_min_cps ({lo} >= {hi})");
    }
    Ok(log_space(lo, hi, points))
}

fn sweep_errors(table: &emitterscope::scenarios::SweepTable) -> Vec<ErrorEntry> {
    table
        .rows
        .iter()
        .flat_map(|r| {
            let p = r.point.p_las_detected;
            r.failures().map(move |f| ErrorEntry {
                context: format!("{p} cps"),
                error: f,
            })
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, verbose: bool) -> anyhow::Result<Status> {
    let spec = SweepSpec {
        preset: cfg.preset,
        powers_detected: sweep_powers(cfg, DEFAULT_SWEEP_POINTS)?,
        channels: cfg.channels.clone(),
        scan: cfg.scan,
        reps: cfg.reps.unwrap_or(0),
        seed: cfg.seed,
    };
    let table = run_sweep(&spec)?;
    let dir = out_dir(cfg)?;
    let path = dir.join(format!("{}_sweep.csv", cfg.preset.name));
    write_csv_file(&path, &table.records())?;
    println!(
        "{} points x {} reps -> {}",
        table.rows.len(),
        spec.reps,
        path.display()
    );
    if verbose {
        for r in &table.rows {
            eprintln!(
                "{:.6e} cps: S={:.4e} snr_res={:.4}",
                r.point.p_las_detected, r.point.s, r.point.snr_res
            );
        }
    }
    finish(
        sweep_errors(&table),
        &dir.join(format!("{}_sweep_errors.json", cfg.preset.name)),
    )
}

#[derive(Debug, Serialize)]
struct Fig3Peak {
    preset: &'static str,
    peak_saturation: f64,
    peak_p_las_detected_cps: f64,
    peak_snr_res: f64,
    weak_collection_peak: f64,
}

#[derive(Debug, Serialize)]
struct Fig4Crossover {
    preset: &'static str,
    crossover_saturation: Option<f64>,
    window_min_saturation: f64,
    window_max_saturation: f64,
}

pub fn reproduce(cfg: &RunConfig, figure: Figure, verbose: bool) -> anyhow::Result<Status> {
    let dir = out_dir(cfg)?;
    let p = &cfg.preset;
    match figure {
        Figure::Fig2 => {
            let powers = cfg
                .sweep_powers
                .clone()
                .unwrap_or_else(|| FIG2_DETECTED_POWERS.to_vec());
            let fig = reproduce_fig2(p, &powers, &cfg.scan, cfg.seed)?;
            for spec in &fig.spectra {
                let path = dir.join(spectrum_file_name(
                    p.name,
                    spec.meta.channel,
                    spec.meta.p_las_detected(),
                ));
                write_spectrum(&path, spec)?;
                if verbose {
                    eprintln!("wrote {}", path.display());
                }
            }
            let path = dir.join("fig2_summary.csv");
            write_csv_file(&path, &fig.records)?;
            println!("{} spectra -> {}", fig.spectra.len(), path.display());
            let errors = fig
                .records
                .iter()
                .filter_map(|r| {
                    r.error.as_ref().map(|e| ErrorEntry {
                        context: format!("{} cps {}", r.p_las_detected_cps, r.channel),
                        error: e.clone(),
                    })
                })
                .collect();
            finish(errors, &dir.join("fig2_errors.json"))
        }
        Figure::Fig3 => {
            let powers = sweep_powers(cfg, DEFAULT_FIG3_POINTS)?;
            let (lo, hi) = (powers[0], powers[powers.len() - 1]);
            let fig = reproduce_fig3(p, lo, hi, powers.len())?;
            let path = dir.join("fig3_summary.csv");
            write_csv_file(&path, &fig.records)?;
            let peak = Fig3Peak {
                preset: p.name,
                peak_saturation: fig.peak_s,
                peak_p_las_detected_cps: p.optics.mu
                    * power_from_saturation(fig.peak_s, &p.emitter, &p.optics)?,
                peak_snr_res: fig.peak_snr,
                weak_collection_peak: snr_res_peak_weak_collection(&p.emitter, &p.optics),
            };
            write_json_file(&dir.join("fig3_peak.json"), &peak)?;
            println!(
                "peak snr_res={:.4} at S={:.6} -> {}",
                fig.peak_snr,
                fig.peak_s,
                path.display()
            );
            Ok(Status::Ok)
        }
        Figure::Fig4 => {
            let points = cfg.sweep_range.2.unwrap_or(DEFAULT_FIG4_POINTS);
            let fig = reproduce_fig4(p, points, cfg.reps.unwrap_or(0), &cfg.scan, cfg.seed)?;
            let path = dir.join("fig4_summary.csv");
            write_csv_file(&path, &fig.records)?;
            let (lo, hi) = emitterscope::scenarios::FIG4_SATURATION_WINDOW;
            let cross = Fig4Crossover {
                preset: p.name,
                crossover_saturation: fig.crossover,
                window_min_saturation: lo,
                window_max_saturation: hi,
            };
            write_json_file(&dir.join("fig4_crossover.json"), &cross)?;
            println!(
                "crossover S={} -> {}",
                fig.crossover.map_or("none".into(), |s| format!("{s:.4e}")),
                path.display()
            );
            finish(sweep_errors(&fig.sweep), &dir.join("fig4_errors.json"))
        }
        Figure::Fig5 => {
            let lo = cfg.sweep_range.0.unwrap_or(DEFAULT_FIG5_RANGE.0);
            let hi = cfg.sweep_range.1.unwrap_or(DEFAULT_FIG5_RANGE.1);
            let points = cfg.sweep_range.2.unwrap_or(DEFAULT_FIG5_POINTS);
            let mut records = Vec::new();
            let mut peaks = Vec::new();
            for make in [
                Preset::fig5_ideal as fn(f64) -> Preset,
                Preset::fig5_realistic,
            ] {
                let fig = reproduce_fig5(make, &FIG5_GAMMA1_GRID, lo, hi, points, cfg.snr_target)?;
                records.extend(fig.records);
                peaks.extend(fig.peaks);
            }
            let path = dir.join("fig5_summary.csv");
            write_csv_file(&path, &records)?;
            write_csv_file(&dir.join("fig5_peaks.csv"), &peaks)?;
            for pk in &peaks {
                println!(
                    "{} gamma1={:e} rad/s: peak snr_res={:.4} at {:.4e} cps",
                    pk.preset, pk.gamma1_rad_s, pk.peak_snr_res, pk.best_p_las_detected_cps
                );
            }
            println!("-> {}", path.display());
            Ok(Status::Ok)
        }
    }
}
