//! `metrics.csv` rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub train_loss: f64,
    /// Empty when evaluation is disabled.
    pub eval_success_rate: Option<f64>,
    pub eval_mean_reward: Option<f64>,
    pub eval_reward_std: Option<f64>,
    pub wallclock_s: f64,
}

pub const HEADER: [&str; 6] = [
    "step",
    "train_loss",
    "eval_success_rate",
    "eval_mean_reward",
    "eval_reward_std",
    "wallclock_s",
];

/// Writes rows, creating the file with a header or appending to it.
pub fn write_rows(path: &Path, rows: &[MetricsRow], append: bool) -> CliResult<()> {
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !(append && exists) {
        w.write_record(HEADER).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

/// Parses a metrics file; malformed rows are reported with their line.
pub fn read_rows(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_rows(&text)
}

pub fn parse_rows(text: &str) -> CliResult<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| CliError::validation(format!("metrics header: {e}")))?;
    if header.iter().ne(HEADER) {
        return Err(CliError::validation(format!(
            "metrics line 1: expected header {}, found {}",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for rec in r.deserialize::<MetricsRow>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::validation(format!("metrics line {line}: {e}"))
        })?;
        if let Some(prev) = rows.last() {
            if row.step <= prev.step {
                return Err(CliError::validation(format!(
                    "metrics line {}: step {} does not follow step {}",
                    rows.len() + 2,
                    row.step,
                    prev.step
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> MetricsRow {
        MetricsRow {
            step,
            train_loss: 0.5,
            eval_success_rate: step.is_multiple_of(2).then_some(0.25),
            eval_mean_reward: None,
            eval_reward_std: None,
            wallclock_s: 1.5,
        }
    }

    #[test]
    fn write_append_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_rows(&p, &[row(1), row(2)], false).unwrap();
        write_rows(&p, &[row(3)], true).unwrap();
        assert_eq!(read_rows(&p).unwrap(), vec![row(1), row(2), row(3)]);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let text = format!("{}\n1,0.5,,,,1\n2,oops,,,,1\n", HEADER.join(","));
        let err = parse_rows(&text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let text = format!("{}\n2,0.5,,,,1\n2,0.5,,,,1\n", HEADER.join(","));
        assert!(parse_rows(&text).unwrap_err().to_string().contains("line 3"));
    }
}
