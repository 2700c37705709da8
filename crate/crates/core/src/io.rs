//! Ingestion and output formats: NDJSON record batches, per-record CSV with a
//! JSON sidecar, labels CSV, and small JSON/CSV helpers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::signal::{CtgRecord, Metadata};
use crate::synth::GenLabel;
use crate::{Error, Result};

pub const RECORDS_FILE: &str = "records.ndjson";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    record_id: String,
    fhr: Vec<Option<f64>>,
    ua: Vec<Option<f64>>,
    metadata: Metadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    record_id: String,
    metadata: Metadata,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_ndjson(path: &Path, records: &[CtgRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        let line = RecordLine {
            record_id: r.record_id.clone(),
            fhr: r.fhr.clone(),
            ua: r.ua.clone(),
            metadata: r.metadata,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ndjson(path: &Path) -> Result<Vec<CtgRecord>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(CtgRecord::ingest(rec.record_id, rec.fhr, rec.ua, rec.metadata)?);
    }
    Ok(out)
}

/// Writes a `t,fhr,ua` CSV (4 Hz) plus `<stem>.json` sidecar. Missing cells are empty.
pub fn write_csv_record(csv_path: &Path, record: &CtgRecord) -> Result<()> {
    let mut w = create(csv_path)?;
    let err = |e| Error::io(csv_path, e);
    writeln!(w, "t,fhr,ua").map_err(err)?;
    for (i, (f, u)) in record.fhr.iter().zip(&record.ua).enumerate() {
        let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", i as f64 / 4.0, cell(f), cell(u)).map_err(err)?;
    }
    w.flush().map_err(err)?;
    write_json(
        &csv_path.with_extension("json"),
        &Sidecar {
            record_id: record.record_id.clone(),
            metadata: record.metadata,
        },
    )
}

fn parse_cell(s: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("{}:{line}: bad number `{s}`", path.display())))
}

/// Reads a `t,fhr,ua` CSV and its sidecar JSON. An FHR of 0 counts as missing.
pub fn read_csv_record(csv_path: &Path, sidecar: &Path) -> Result<CtgRecord> {
    let meta: Sidecar = read_json(sidecar)?;
    let mut lines = open(csv_path)?.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(csv_path, e))?
        .unwrap_or_default();
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let (fi, ui) = match (
        cols.iter().position(|c| *c == "fhr"),
        cols.iter().position(|c| *c == "ua"),
    ) {
        (Some(f), Some(u)) if cols.contains(&"t") => (f, u),
        _ => {
            return Err(Error::InvalidInput(format!(
                "{}: header must be t,fhr,ua",
                csv_path.display()
            )))
        }
    };
    let (mut fhr, mut ua) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(csv_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let get = |j: usize| cells.get(j).copied().unwrap_or("");
        fhr.push(parse_cell(get(fi), csv_path, i + 2)?.filter(|&x| x != 0.0));
        ua.push(parse_cell(get(ui), csv_path, i + 2)?);
    }
    CtgRecord::ingest(meta.record_id, fhr, ua, meta.metadata)
}

/// Loads every record under `dir`: all `*.ndjson` files, then every `*.csv`
/// (other than the labels file) that has a `.json` sidecar. Sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<CtgRecord>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in &paths {
        match p.extension().and_then(|e| e.to_str()) {
            Some("ndjson") => out.extend(read_ndjson(p)?),
            Some("csv") if p.file_name().and_then(|n| n.to_str()) != Some(LABELS_FILE) => {
                let side = p.with_extension("json");
                if side.exists() {
                    out.push(read_csv_record(p, &side)?);
                }
            }
            _ => {}
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no records found in {}", dir.display())));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, rows: &[(String, GenLabel)]) -> Result<()> {
    let mut w = create(path)?;
    let err = |e| Error::io(path, e);
    writeln!(w, "record_id,abnormal,near_delivery").map_err(err)?;
    for (id, l) in rows {
        writeln!(w, "{id},{},{}", l.abnormal, l.near_delivery).map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Binary label columns keyed by record id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, Vec<u8>>,
}

impl LabelTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut lines = open(path)?.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::InvalidInput(format!("{}: empty labels file", path.display())))?;
        let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if cols.first().map(String::as_str) != Some("record_id") || cols.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{}: header must start with record_id",
                path.display()
            )));
        }
        let mut rows = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(Error::InvalidInput(format!("{}:{}: wrong column count", path.display(), i + 2)));
            }
            let vals = cells[1..]
                .iter()
                .map(|c| match *c {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(Error::InvalidInput(format!("{}:{}: label `{c}` not 0/1", path.display(), i + 2))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.insert(cells[0].to_string(), vals);
        }
        Ok(LabelTable {
            columns: cols[1..].to_vec(),
            rows,
        })
    }

    pub fn get(&self, record_id: &str, task: &str) -> Result<Option<u8>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == task)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task `{task}`")))?;
        Ok(self.rows.get(record_id).map(|r| r[j]))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Writes a CSV from a header and pre-formatted rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    let err = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(err)?;
    for r in rows {
        writeln!(w, "{}", r.join(",")).map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Appends one JSON object per line.
pub fn write_ndjson_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
