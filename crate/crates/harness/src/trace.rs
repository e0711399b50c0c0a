//! Guidance trace export and plot-ready tabulation.

use std::io::{BufRead, Write};

use addps_core::guidance::StepRecord;
use serde::{Deserialize, Serialize};

use crate::report::format_float;
use crate::run::CellTrace;
use crate::HarnessError;

/// One sampler step tagged with its cell. Untagged core traces parse too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub record: StepRecord,
}

pub fn write_traces<W: Write>(traces: &[CellTrace], mut w: W) -> std::io::Result<()> {
    for t in traces {
        for record in &t.trace.steps {
            let line = TraceLine {
                mode: Some(t.mode.clone()),
                snr_db: Some(t.snr_db),
                seed: Some(t.seed),
                record: record.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<TraceLine>, HarnessError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
                path: "<trace>".into(),
                line: Some(n + 1),
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Long-format CSV with one row per guidance term.
pub fn tabulate<W: Write>(lines: &[TraceLine], w: W) -> Result<(), csv::Error> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record([
        "mode",
        "snr_db",
        "seed",
        "step",
        "domain",
        "zeta_t",
        "residual",
        "grad_norm",
    ])?;
    for l in lines {
        for t in &l.record.terms {
            let domain = serde_json::to_value(t.domain).expect("domain serializes");
            out.write_record([
                l.mode.clone().unwrap_or_else(|| "NA".into()),
                l.snr_db.map_or_else(|| "NA".into(), format_float),
                l.seed.map_or_else(|| "NA".into(), |s| s.to_string()),
                l.record.step.to_string(),
                domain.as_str().unwrap_or("NA").to_string(),
                format_float(l.record.zeta_t),
                format_float(t.residual),
                format_float(t.grad_norm),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use addps_core::guidance::{Domain, DomainRecord, GuidanceTrace};

    fn trace() -> CellTrace {
        let rec = |step, domain| StepRecord {
            step,
            zeta_t: 0.5,
            terms: vec![DomainRecord {
                domain,
                residual: 2.0,
                grad_norm: 0.25,
            }],
        };
        CellTrace {
            mode: "alternating".into(),
            snr_db: -1.0,
            seed: 4,
            trace: GuidanceTrace {
                steps: vec![rec(2, Domain::Z), rec(1, Domain::X)],
            },
        }
    }

    #[test]
    fn round_trip_and_tabulate() {
        let mut buf = Vec::new();
        write_traces(&[trace()], &mut buf).unwrap();
        let lines = read_traces(buf.as_slice()).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].mode.as_deref(), Some("alternating"));
        let mut csv = Vec::new();
        tabulate(&lines, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[1], "alternating,-1,4,2,z,0.5,2,0.25");
        assert_eq!(rows[2], "alternating,-1,4,1,x,0.5,2,0.25");
    }

    #[test]
    fn plain_core_traces_parse() {
        let mut buf = Vec::new();
        trace().trace.write_jsonl(&mut buf).unwrap();
        let lines = read_traces(buf.as_slice()).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].mode.is_none());
        assert!(matches!(
            read_traces("nope\n".as_bytes()),
            Err(HarnessError::Parse { line: Some(1), .. })
        ));
    }
}
