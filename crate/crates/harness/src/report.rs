//! Report rows and their CSV / JSON-lines encodings.
//!
//! Floats are written at 6 significant digits; missing or non-finite
//! metrics are written as `NA` in CSV and `null` in JSON-lines.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::HarnessError;

pub const HEADER: [&str; 11] = [
    "scenario",
    "mode",
    "snr_db",
    "T",
    "seed",
    "frechet",
    "sliced_w",
    "mse",
    "psnr_db",
    "wall_ms",
    "var_ratio",
];

/// One (mode, snr, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub mode: String,
    #[serde(deserialize_with = "de_float")]
    pub snr_db: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seed: u64,
    pub frechet: Option<f64>,
    pub sliced_w: Option<f64>,
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    /// Present only for timed runs, so untimed reports stay reproducible.
    pub wall_ms: Option<f64>,
    /// `tr Cov(x̂) / tr Cov(x)` over the cell.
    pub var_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportRow {
    fn metrics(&self) -> [Option<f64>; 6] {
        [
            self.frechet,
            self.sliced_w,
            self.mse,
            self.psnr_db,
            self.wall_ms,
            self.var_ratio,
        ]
    }
}

/// `x` rounded to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// 6-significant-digit text; plain notation for magnitudes in `[1e-4, 1e6)`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    let r = round6(x);
    if r == 0.0 || (1e-4..1e6).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{x:.5e}")
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), format_float)
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        "NA" => None,
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

fn de_float<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => {
            parse_float(&s).ok_or_else(|| serde::de::Error::custom(format!("bad float `{s}`")))
        }
    }
}

fn json_float(x: f64) -> Value {
    if x.is_finite() {
        json!(round6(x))
    } else {
        json!(format_float(x))
    }
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(HEADER)?;
    for r in rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.mode.clone(),
            format_float(r.snr_db),
            r.steps.to_string(),
            r.seed.to_string(),
        ];
        rec.extend(r.metrics().into_iter().map(format_opt));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(rows: &[ReportRow], mut w: W) -> std::io::Result<()> {
    for r in rows {
        let mut obj = Map::new();
        obj.insert("scenario".into(), json!(r.scenario));
        obj.insert("mode".into(), json!(r.mode));
        obj.insert("snr_db".into(), json_float(r.snr_db));
        obj.insert("T".into(), json!(r.steps));
        obj.insert("seed".into(), json!(r.seed));
        for (k, v) in HEADER[5..].iter().zip(r.metrics()) {
            obj.insert((*k).into(), v.map_or(Value::Null, json_float));
        }
        serde_json::to_writer(&mut w, &Value::Object(obj))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io("<report>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
                path: "<report>".into(),
                line: Some(n + 1),
                message: e.to_string(),
            })?,
        );
    }
    Ok(rows)
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>, HarnessError> {
    let parse_err = |line: Option<usize>, message: String| HarnessError::Parse {
        path: "<report>".into(),
        line,
        message,
    };
    let mut rd = csv::Reader::from_reader(r);
    let header = rd
        .headers()
        .map_err(|e| parse_err(Some(1), e.to_string()))?
        .clone();
    if header.iter().ne(HEADER) {
        return Err(parse_err(Some(1), "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = Some(i + 2);
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |j: usize| parse_float(&rec[j]);
        let int = |j: usize| {
            rec[j]
                .parse::<u64>()
                .map_err(|e| parse_err(line, format!("{}: {e}", HEADER[j])))
        };
        rows.push(ReportRow {
            scenario: rec[0].to_string(),
            mode: rec[1].to_string(),
            snr_db: num(2).ok_or_else(|| parse_err(line, "snr_db".into()))?,
            steps: int(3)? as usize,
            seed: int(4)?,
            frechet: num(5),
            sliced_w: num(6),
            mse: num(7),
            psnr_db: num(8),
            wall_ms: num(9),
            var_ratio: num(10),
        });
    }
    Ok(rows)
}

/// Report bytes in `format`.
pub fn render(rows: &[ReportRow], format: ReportFormat) -> Vec<u8> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Csv => write_csv(rows, &mut buf).expect("writing to memory"),
        ReportFormat::Jsonl => write_jsonl(rows, &mut buf).expect("writing to memory"),
    }
    buf
}

/// Writes `rows` to `path`.
pub fn emit_report(
    rows: &[ReportRow],
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(HarnessError::validation("report", "no rows to emit"));
    }
    std::fs::write(path, render(rows, format)).map_err(|e| HarnessError::io(path, e))
}

/// `<report>.meta.json`.
pub fn meta_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Resolved config and version for a report, kept beside it so the report
/// itself stays a plain table.
pub fn write_meta(
    report: &Path,
    cfg: &ExperimentConfig,
    format: ReportFormat,
) -> Result<PathBuf, HarnessError> {
    let path = meta_path(report);
    let meta = json!({
        "version": crate::VERSION,
        "format": format,
        "report": report.file_name().map(|f| f.to_string_lossy().into_owned()),
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&meta).expect("meta is serializable");
    std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}
