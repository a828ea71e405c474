//! Per-evaluation training records and their JSON-lines / CSV sinks.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss_source: f64,
    pub loss_target_labeled: f64,
    pub loss_consistency: f64,
    pub frac_above_threshold: f64,
    pub val_accuracy: f64,
    pub target_accuracy: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "step,loss_source,loss_target_labeled,loss_consistency,frac_above_threshold,val_accuracy,target_accuracy";

    pub fn csv_row(&self) -> String {
        // `{:?}` on f64 prints the shortest string that parses back exactly.
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.loss_source,
            self.loss_target_labeled,
            self.loss_consistency,
            self.frac_above_threshold,
            self.val_accuracy,
            self.target_accuracy
        )
    }
}

/// Appends records to `<stem>.jsonl` and mirrors them into `<stem>.csv`.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    jsonl_path: PathBuf,
}

impl MetricsWriter {
    pub fn create(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let jsonl_path = dir.join(format!("{stem}.jsonl"));
        let csv_path = dir.join(format!("{stem}.csv"));
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(p)
                .map_err(|e| Error::io(p, e))
        };
        let jsonl = BufWriter::new(open(&jsonl_path)?);
        let mut csv = BufWriter::new(open(&csv_path)?);
        writeln!(csv, "{}", MetricsRecord::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
        Ok(Self {
            jsonl,
            csv,
            jsonl_path,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io(&self.jsonl_path, e))?;
        writeln!(self.csv, "{}", record.csv_row()).map_err(|e| Error::io(&self.jsonl_path, e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.jsonl
            .flush()
            .and_then(|_| self.csv.flush())
            .map_err(|e| Error::io(&self.jsonl_path, e))
    }
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_strategy() -> impl Strategy<Value = MetricsRecord> {
        (
            any::<u32>(),
            0.0f64..1e3,
            0.0f64..1e3,
            0.0f64..1e3,
            0.0f64..=1.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
            .prop_map(|(step, a, b, c, f, v, t)| MetricsRecord {
                step: u64::from(step),
                loss_source: a,
                loss_target_labeled: b,
                loss_consistency: c,
                frac_above_threshold: f,
                val_accuracy: v,
                target_accuracy: t,
            })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(records in proptest::collection::vec(record_strategy(), 1..8)) {
            let dir = tempfile::tempdir().unwrap();
            let mut w = MetricsWriter::create(dir.path(), "metrics").unwrap();
            for r in &records {
                w.append(r).unwrap();
            }
            w.flush().unwrap();
            let back = read_jsonl(dir.path().join("metrics.jsonl")).unwrap();
            prop_assert_eq!(back, records);
        }
    }

    #[test]
    fn csv_mirror_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path(), "m").unwrap();
        let r = MetricsRecord {
            step: 3,
            loss_source: 0.5,
            loss_target_labeled: 0.25,
            loss_consistency: 0.0,
            frac_above_threshold: 0.1,
            val_accuracy: 0.75,
            target_accuracy: 0.5,
        };
        w.append(&r).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), MetricsRecord::CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "3,0.5,0.25,0.0,0.1,0.75,0.5");
    }
}
