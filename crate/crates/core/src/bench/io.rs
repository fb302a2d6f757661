use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BenchmarkReport, PoseErrorRecord, ReportRow};
use crate::scene::{SceneConfig, SyntheticScene};
use crate::sfm::{MapConfig, ObjectMap};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    kind: &'a str,
    version: u32,
    data: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    kind: String,
    version: u32,
    data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub config: SceneConfig,
    pub scene: SyntheticScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub scene_config: SceneConfig,
    pub map_config: MapConfig,
    pub map: ObjectMap,
}

/// Writes `{"kind": kind, "version": FORMAT_VERSION, "data": value}`.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, kind: &str, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &EnvelopeOut { kind, version: FORMAT_VERSION, data: value })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_json`], checking kind and version.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T> {
    let env: EnvelopeIn<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if env.kind != kind {
        return Err(Error::Format(format!("expected a `{kind}` file, found `{}`", env.kind)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {kind} version {}", env.version)));
    }
    Ok(env.data)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn from_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

pub fn records_to_csv(records: &[PoseErrorRecord]) -> Result<String> {
    to_csv(records)
}

pub fn records_from_csv(text: &str) -> Result<Vec<PoseErrorRecord>> {
    from_csv(text)
}

/// Columns: `variant, r1, r3, r5, matches, ms`.
pub fn report_to_csv(report: &BenchmarkReport) -> Result<String> {
    to_csv(&report.rows)
}

pub fn report_from_csv(text: &str) -> Result<BenchmarkReport> {
    let rows: Vec<ReportRow> = from_csv(text)?;
    let report = BenchmarkReport { rows };
    report.check_invariants()?;
    Ok(report)
}
