use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::NoiseMode;

use super::{SummaryRow, TrialRecord, TrialStatus};

pub const RECORD_HEADER: [&str; 14] = [
    "trial", "eta", "mode", "x0", "x1", "x2", "xhat0", "xhat1", "xhat2", "error_m", "bound_m",
    "status", "iters", "seconds",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "eta",
    "mode",
    "trials",
    "successes",
    "success_rate",
    "me_m",
    "me_stderr_m",
    "bias_m",
    "mean_bound_m",
    "bounds_available",
    "mean_seconds",
    "mean_iters",
];

/// Columns that vary between otherwise identical runs.
pub const TIMING_COLUMNS: [&str; 1] = ["seconds"];

// `Display` for f64 prints the shortest string that parses back exactly.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn record_row(r: &TrialRecord) -> Vec<String> {
    let mut row = vec![r.trial.to_string(), num(r.eta), r.mode.label().to_string()];
    for p in [r.x, r.x_hat] {
        row.extend((0..3).map(|i| opt(p.map(|p| p[i]))));
    }
    row.extend([
        opt(r.error),
        opt(r.bound),
        r.status.label().to_string(),
        r.iterations.to_string(),
        num(r.seconds),
    ]);
    row
}

pub fn write_records<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        w.write_record([
            num(s.eta),
            s.mode.label().to_string(),
            s.trials.to_string(),
            s.successes.to_string(),
            num(s.success_rate()),
            opt(s.me),
            opt(s.me_stderr),
            opt(s.bias),
            opt(s.mean_bound),
            s.bounds_available.to_string(),
            opt(s.mean_seconds),
            opt(s.mean_iterations),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Record CSV at `path`, and the per-cell summary at `summary_path` if given.
pub fn write_results(
    records: &[TrialRecord],
    summary: &[SummaryRow],
    path: impl AsRef<Path>,
    summary_path: Option<&Path>,
) -> Result<()> {
    write_records(records, std::fs::File::create(path)?)?;
    if let Some(p) = summary_path {
        write_summary(summary, std::fs::File::create(p)?)?;
    }
    Ok(())
}

fn field_error(line: u64, column: &str, value: &str) -> Error {
    Error::Config(format!("line {line}: bad `{column}` value `{value}`"))
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::Config(format!("line 1: unexpected header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("");
        let real = |i: usize| -> Result<f64> {
            get(i).parse().map_err(|_| field_error(line, RECORD_HEADER[i], get(i)))
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        let point = |i: usize| -> Result<Option<[f64; 3]>> {
            match (maybe(i)?, maybe(i + 1)?, maybe(i + 2)?) {
                (Some(a), Some(b), Some(c)) => Ok(Some([a, b, c])),
                (None, None, None) => Ok(None),
                _ => Err(field_error(line, RECORD_HEADER[i], get(i))),
            }
        };
        let int = |i: usize| -> Result<u64> {
            get(i).parse().map_err(|_| field_error(line, RECORD_HEADER[i], get(i)))
        };
        out.push(TrialRecord {
            trial: int(0)?,
            eta: real(1)?,
            mode: get(2).parse::<NoiseMode>().map_err(|_| field_error(line, "mode", get(2)))?,
            x: point(3)?,
            x_hat: point(6)?,
            error: maybe(9)?,
            bound: maybe(10)?,
            status: TrialStatus::parse(get(11))
                .ok_or_else(|| field_error(line, "status", get(11)))?,
            iterations: int(12)? as usize,
            seconds: real(13)?,
        });
    }
    Ok(out)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    read_records(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolveStatus;

    fn sample() -> Vec<TrialRecord> {
        vec![
            TrialRecord {
                trial: 3,
                eta: 0.01,
                mode: NoiseMode::QuantumAssisted,
                x: Some([0.1 + 0.2, -1.999_999_999_999_9, 1e-300]),
                x_hat: Some([0.3, -2.0, 6.02e23]),
                error: Some(std::f64::consts::PI),
                bound: None,
                status: TrialStatus::Solved(SolveStatus::MaxIters),
                iterations: 200,
                seconds: 0.123,
            },
            TrialRecord {
                trial: 4,
                eta: 0.04,
                mode: NoiseMode::Classical,
                x: None,
                x_hat: None,
                error: None,
                bound: None,
                status: TrialStatus::Skipped,
                iterations: 0,
                seconds: 0.0,
            },
        ]
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_records(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "trial,eta,mode,x0,x1,x2,xhat0,xhat1,xhat2,error_m,bound_m,status,iters,seconds\n"
        );
    }

    #[test]
    fn records_round_trip_exactly() {
        let mut buf = Vec::new();
        write_records(&sample(), &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn bad_field_names_line_and_column() {
        let text =
            "trial,eta,mode,x0,x1,x2,xhat0,xhat1,xhat2,error_m,bound_m,status,iters,seconds\n\
                    0,0.01,quantum,0,0,0,0,0,0,0,0.1,optimal,5,0.1\n\
                    1,0.01,quantum,0,0,0,0,0,0,zero,0.1,optimal,5,0.1\n";
        let err = read_records(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("error_m"), "{err}");
    }

    #[test]
    fn summary_marks_empty_cells() {
        let row = SummaryRow {
            eta: 0.02,
            mode: NoiseMode::Classical,
            trials: 2,
            successes: 0,
            me: None,
            me_stderr: None,
            bias: None,
            mean_bound: Some(0.5),
            bounds_available: 2,
            mean_seconds: None,
            mean_iterations: None,
        };
        let mut buf = Vec::new();
        write_summary(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.02,classical,2,0,0,,,,0.5,2,,");
    }
}
