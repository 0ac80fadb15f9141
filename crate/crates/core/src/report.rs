//! Trial records, percentile aggregation and CSV/JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Metric the aggregate table summarizes.
pub const AGGREGATE_METRIC: &str = "rel_error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub method: String,
    pub param: String,
    pub timesteps: u64,
    pub seed: u64,
    pub trial_id: u64,
    pub metric: String,
    #[serde(serialize_with = "ser_value", deserialize_with = "de_value")]
    pub value: f64,
}

fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

fn ser_value<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_value(*v))
    }
}

fn de_value<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => parse_value(&t).ok_or_else(|| serde::de::Error::custom(format!("bad value {t:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Linear-interpolation percentile with `+inf` ordered above every finite value.
///
/// `p` is in `[0, 1]`. Interpolating towards an infinite neighbour gives `+inf`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let w = h - lo as f64;
    if w == 0.0 || lo + 1 >= v.len() {
        return v[lo];
    }
    let (a, b) = (v[lo], v[lo + 1]);
    if b.is_infinite() {
        return f64::INFINITY;
    }
    a + w * (b - a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub method: String,
    pub param: String,
    pub timesteps: u64,
    pub metric: String,
    #[serde(serialize_with = "ser_value", deserialize_with = "de_value")]
    pub p25: f64,
    #[serde(serialize_with = "ser_value", deserialize_with = "de_value")]
    pub median: f64,
    #[serde(serialize_with = "ser_value", deserialize_with = "de_value")]
    pub p75: f64,
    /// Fraction of trials with a finite value.
    pub frequency_stable: f64,
}

/// Percentiles of [`AGGREGATE_METRIC`] per (experiment, method, param, timesteps),
/// in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut groups: Vec<((&str, &str, &str, u64), Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| r.metric == AGGREGATE_METRIC) {
        let key = (r.experiment.as_str(), r.method.as_str(), r.param.as_str(), r.timesteps);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((experiment, method, param, timesteps), vals)| AggregateRow {
            experiment: experiment.into(),
            method: method.into(),
            param: param.into(),
            timesteps,
            metric: AGGREGATE_METRIC.into(),
            p25: percentile(&vals, 0.25),
            median: percentile(&vals, 0.5),
            p75: percentile(&vals, 0.75),
            frequency_stable: vals.iter().filter(|v| v.is_finite()).count() as f64 / vals.len() as f64,
        })
        .collect()
}

pub const CSV_HEADER: [&str; 7] = ["experiment", "method", "param", "timesteps", "seed", "metric", "value"];
pub const AGGREGATE_HEADER: [&str; 9] =
    ["experiment", "method", "param", "timesteps", "metric", "p25", "median", "p75", "frequency_stable"];

pub fn write_records_csv<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.method.clone(),
            r.param.clone(),
            r.timesteps.to_string(),
            r.seed.to_string(),
            r.metric.clone(),
            format_value(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV table. `trial_id` is not a column and comes back as the row index
/// within its (experiment, method, param, timesteps, metric) group.
pub fn read_records_csv<R: std::io::Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<TrialRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Config(format!("expected {} columns, found {}", CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| rec[i].parse::<u64>().map_err(|e| Error::Config(format!("bad integer {:?}: {e}", &rec[i])));
        let value = parse_value(&rec[6]).ok_or_else(|| Error::Config(format!("bad value {:?}", &rec[6])))?;
        let mut r = TrialRecord {
            experiment: rec[0].into(),
            method: rec[1].into(),
            param: rec[2].into(),
            timesteps: num(3)?,
            seed: num(4)?,
            trial_id: 0,
            metric: rec[5].into(),
            value,
        };
        r.trial_id = out
            .iter()
            .filter(|o| {
                o.experiment == r.experiment
                    && o.method == r.method
                    && o.param == r.param
                    && o.timesteps == r.timesteps
                    && o.metric == r.metric
            })
            .count() as u64;
        out.push(r);
    }
    Ok(out)
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.method.clone(),
            r.param.clone(),
            r.timesteps.to_string(),
            r.metric.clone(),
            format_value(r.p25),
            format_value(r.median),
            format_value(r.p75),
            format_value(r.frequency_stable),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_json<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, records)?;
    Ok(())
}

pub fn read_records_json<R: std::io::Read>(reader: R) -> Result<Vec<TrialRecord>> {
    Ok(serde_json::from_reader(reader)?)
}

/// Path of the aggregate companion file: `<path>.agg.csv`.
pub fn aggregate_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".agg.csv");
    PathBuf::from(s)
}

/// Writes the record table to `path` and the aggregate table next to it.
/// Returns the aggregate path.
pub fn emit_report(records: &[TrialRecord], path: &Path, format: Format) -> Result<PathBuf> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to write".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_records_csv(records, &mut out)?,
        Format::Json => write_records_json(records, &mut out)?,
    }
    out.flush()?;
    let agg = aggregate_path(path);
    let mut out = BufWriter::new(File::create(&agg)?);
    write_aggregate_csv(&aggregate(records), &mut out)?;
    out.flush()?;
    Ok(agg)
}
