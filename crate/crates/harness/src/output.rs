//! Result files: `metrics.csv`, `summary.json`, `rounds.jsonl`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use migo_core::engine::RoundRecord;
use migo_core::metrics::{MetricRow, SummaryReport};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";

/// CSV with a header row and one row per round; absent region estimates are
/// empty fields. Floats use the shortest round-tripping representation.
pub fn write_metrics<W: Write>(rows: &[MetricRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_rounds<W: Write>(records: &[RoundRecord], mut out: W) -> anyhow::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the three result files into `dir`, creating it if needed.
pub fn write_all(
    dir: &Path,
    rows: &[MetricRow],
    summary: &SummaryReport,
    records: &[RoundRecord],
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> anyhow::Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    };
    write_metrics(rows, create(METRICS_FILE)?)?;
    let mut s = create(SUMMARY_FILE)?;
    serde_json::to_writer_pretty(&mut s, summary)?;
    s.write_all(b"\n")?;
    s.flush()?;
    write_rounds(records, create(ROUNDS_FILE)?)?;
    Ok(())
}
