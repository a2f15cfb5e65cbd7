//! Spectrum files.
//!
//! CSV: a block of `# key=value` metadata lines, then a `detuning_hz,counts`
//! table. Detunings are written as ordinary frequencies (rad/s divided by
//! 2 pi). JSON carries the same metadata and columns in one document.
//! Floats use Rust's shortest round-trip representation, so no precision is
//! lost on re-reading.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Channel, Spectrum, SpectrumMeta};
use crate::model::{DetectorParams, EmitterParams, OpticsParams};
use crate::{Error, Result};

const KEYS: [&str; 19] = [
    "channel",
    "n_pixels",
    "dwell_s",
    "n_scans",
    "seed",
    "jitter_sigma_rad_s",
    "leak_fraction",
    "p_las_cps",
    "p_las_detected_cps",
    "saturation",
    "gamma1_rad_s",
    "gamma2_rad_s",
    "alpha",
    "k_geom",
    "zeta",
    "mu",
    "p_drk_cps",
    "rin_kappa",
    "clamped_cells",
];

fn meta_pairs(spec: &Spectrum) -> Vec<(&'static str, String)> {
    let m = &spec.meta;
    let values = [
        m.channel.to_string(),
        spec.len().to_string(),
        m.dwell.to_string(),
        m.n_scans.to_string(),
        m.seed.to_string(),
        m.jitter_sigma.to_string(),
        m.leak_fraction.to_string(),
        m.p_las.to_string(),
        m.p_las_detected().to_string(),
        m.saturation().to_string(),
        m.emitter.gamma1.to_string(),
        m.emitter.gamma2.to_string(),
        m.emitter.alpha.to_string(),
        m.optics.k_geom.to_string(),
        m.optics.zeta.to_string(),
        m.optics.mu.to_string(),
        m.detector.p_drk.to_string(),
        m.detector.rin_kappa.to_string(),
        m.clamped_cells.to_string(),
    ];
    KEYS.iter().copied().zip(values).collect()
}

pub fn write_csv<W: Write>(spec: &Spectrum, mut out: W) -> Result<()> {
    for (k, v) in meta_pairs(spec) {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["detuning_hz", "counts"])?;
    for (d, c) in spec.detunings.iter().zip(&spec.counts) {
        w.write_record([(d / TAU).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Format(format!("missing metadata key {key:?}")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("cannot parse metadata {key}={raw:?}")))
}

fn meta_from_map(map: &BTreeMap<String, String>) -> Result<SpectrumMeta> {
    let channel: String = field(map, "channel")?;
    Ok(SpectrumMeta {
        channel: channel.parse::<Channel>()?,
        dwell: field(map, "dwell_s")?,
        n_scans: field(map, "n_scans")?,
        seed: field(map, "seed")?,
        jitter_sigma: field(map, "jitter_sigma_rad_s")?,
        leak_fraction: field(map, "leak_fraction")?,
        p_las: field(map, "p_las_cps")?,
        emitter: EmitterParams::new(
            field(map, "gamma1_rad_s")?,
            field(map, "gamma2_rad_s")?,
            field(map, "alpha")?,
        )?,
        optics: OpticsParams::new(
            field(map, "k_geom")?,
            field(map, "zeta")?,
            field(map, "mu")?,
        )?,
        detector: DetectorParams::new(field(map, "p_drk_cps")?, field(map, "rin_kappa")?)?,
        clamped_cells: field(map, "clamped_cells")?,
    })
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Spectrum> {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metadata line without '=': {line:?}")))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }

    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "detuning_hz" || &headers[1] != "counts" {
        return Err(Error::Format(format!(
            "expected columns detuning_hz,counts, got {headers:?}"
        )));
    }
    let mut detunings = Vec::new();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let hz: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad detuning {:?}", &rec[0])))?;
        let c: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad count {:?}", &rec[1])))?;
        detunings.push(hz * TAU);
        counts.push(c);
    }
    if let Some(n) = meta.get("n_pixels") {
        if n.parse::<usize>().ok() != Some(counts.len()) {
            return Err(Error::Format(format!(
                "n_pixels={n} but {} rows",
                counts.len()
            )));
        }
    }
    Ok(Spectrum {
        detunings,
        counts,
        meta: meta_from_map(&meta)?,
    })
}

/// JSON form of a spectrum file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDocument {
    pub metadata: BTreeMap<String, String>,
    pub detuning_hz: Vec<f64>,
    pub counts: Vec<u64>,
}

impl SpectrumDocument {
    pub fn from_spectrum(spec: &Spectrum) -> Self {
        Self {
            metadata: meta_pairs(spec)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            detuning_hz: spec.detunings.iter().map(|d| d / TAU).collect(),
            counts: spec.counts.clone(),
        }
    }

    pub fn into_spectrum(self) -> Result<Spectrum> {
        if self.detuning_hz.len() != self.counts.len() {
            return Err(Error::Format(
                "detuning_hz and counts differ in length".into(),
            ));
        }
        Ok(Spectrum {
            detunings: self.detuning_hz.iter().map(|h| h * TAU).collect(),
            counts: self.counts,
            meta: meta_from_map(&self.metadata)?,
        })
    }
}

pub fn write_json<W: Write>(spec: &Spectrum, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &SpectrumDocument::from_spectrum(spec))?;
    Ok(())
}

pub fn read_json<R: std::io::Read>(input: R) -> Result<Spectrum> {
    let doc: SpectrumDocument = serde_json::from_reader(input)?;
    doc.into_spectrum()
}
