//! Dataset directories.
//!
//! | file             | contents                                                      |
//! |------------------|---------------------------------------------------------------|
//! | `dataset.csv`    | `t,y,s,phi_0..phi_{d-1},x_<name>...,true_cate`; `x_*` empty when `s = 0` |
//! | `covariates.csv` | ground-truth `x_<name>...` for every record, same row order     |
//! | `split.csv`      | `index,part` with part `train` or `test`                        |
//! | `encoder.txt`    | encoder projection in the model matrix format                   |
//! | `dataset.json`   | benchmark, record count and encoder settings                    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::{Benchmark, Dataset, Encoder, EncoderConfig, Record, Split};
use crate::error::{Error, Result};
use crate::nn::{read_matrix, write_matrix};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub benchmark: Benchmark,
    pub records: usize,
    pub embed_dim: usize,
    pub encoder: EncoderConfig,
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn x_columns(benchmark: Benchmark) -> Vec<String> {
    benchmark.layout().names.iter().map(|n| format!("x_{n}")).collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let d = ds.embed_dim() + ds.benchmark.background_names().len();
    let xcols = x_columns(ds.benchmark);

    let mut w = csv::Writer::from_path(dir.join("dataset.csv"))?;
    let mut header: Vec<String> = vec!["t".into(), "y".into(), "s".into()];
    header.extend((0..d).map(|j| format!("phi_{j}")));
    header.extend(xcols.iter().cloned());
    header.push("true_cate".into());
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row: Vec<String> = vec![bit(r.t).into(), r.y.to_string(), bit(r.s).into()];
        row.extend(r.phi.iter().map(f64::to_string));
        match (&r.x, r.s) {
            (Some(x), true) => row.extend(x.iter().map(f64::to_string)),
            _ => row.extend(std::iter::repeat_n(String::new(), xcols.len())),
        }
        row.push(r.true_cate.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("covariates.csv"))?;
    w.write_record(&xcols)?;
    for x in &ds.covariates {
        w.write_record(x.iter().map(f64::to_string))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("split.csv"))?;
    w.write_record(["index", "part"])?;
    let mut parts: Vec<(usize, &str)> = ds
        .split
        .train
        .iter()
        .map(|&i| (i, "train"))
        .chain(ds.split.test.iter().map(|&i| (i, "test")))
        .collect();
    parts.sort_unstable();
    for (i, part) in parts {
        w.write_record([i.to_string().as_str(), part])?;
    }
    w.flush()?;

    let p = ds.encoder.projection();
    let mut w = BufWriter::new(File::create(dir.join("encoder.txt"))?);
    write_matrix(&mut w, p.rows, p.cols, &p.data)?;
    w.flush()?;

    let meta = DatasetMeta {
        schema_version: DATASET_SCHEMA_VERSION,
        benchmark: ds.benchmark,
        records: ds.len(),
        embed_dim: ds.embed_dim(),
        encoder: ds.encoder.config().clone(),
    };
    let mut w = BufWriter::new(File::create(dir.join("dataset.json"))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn num(field: &str, what: &'static str, row: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::format(what, format!("row {row}: bad number {field:?}")))
}

fn flag(field: &str, what: &'static str, row: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::format(what, format!("row {row}: expected 0 or 1, got {field:?}"))),
    }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_file = File::open(dir.join("dataset.json"))
        .map_err(|e| Error::Config(format!("no dataset at {}: {e}", dir.display())))?;
    let meta: DatasetMeta = serde_json::from_reader(BufReader::new(meta_file))?;
    if meta.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::format(
            "dataset.json",
            format!("unsupported schema version {}", meta.schema_version),
        ));
    }
    let projection = read_matrix(BufReader::new(File::open(dir.join("encoder.txt"))?))?;
    let encoder = Encoder::from_parts(&meta.encoder, projection)?;
    let k = meta.benchmark.layout().len();
    let d = meta.embed_dim + meta.benchmark.background_names().len();

    let mut records = Vec::with_capacity(meta.records);
    let mut r = csv::Reader::from_path(dir.join("dataset.csv"))?;
    let width = 3 + d + k + 1;
    if r.headers()?.len() != width {
        return Err(Error::format("dataset.csv", format!("expected {width} columns")));
    }
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let s = flag(&row[2], "dataset.csv", i)?;
        let phi = (3..3 + d).map(|j| num(&row[j], "dataset.csv", i)).collect::<Result<Vec<_>>>()?;
        let x = if s {
            Some((3 + d..3 + d + k).map(|j| num(&row[j], "dataset.csv", i)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        records.push(Record {
            t: flag(&row[0], "dataset.csv", i)?,
            y: num(&row[1], "dataset.csv", i)?,
            phi,
            x,
            s,
            true_cate: num(&row[width - 1], "dataset.csv", i)?,
        });
    }

    let mut covariates = Vec::with_capacity(meta.records);
    let mut r = csv::Reader::from_path(dir.join("covariates.csv"))?;
    for (i, row) in r.records().enumerate() {
        let row = row?;
        if row.len() != k {
            return Err(Error::format("covariates.csv", format!("row {i}: expected {k} columns")));
        }
        covariates.push(row.iter().map(|f| num(f, "covariates.csv", i)).collect::<Result<Vec<_>>>()?);
    }

    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut r = csv::Reader::from_path(dir.join("split.csv"))?;
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let idx: usize = row[0]
            .parse()
            .map_err(|_| Error::format("split.csv", format!("row {i}: bad index")))?;
        match &row[1] {
            "train" => split.train.push(idx),
            "test" => split.test.push(idx),
            other => return Err(Error::format("split.csv", format!("row {i}: bad part {other:?}"))),
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();

    let n = meta.records;
    if records.len() != n || covariates.len() != n || split.train.len() + split.test.len() != n {
        return Err(Error::format("dataset", format!("files disagree on the record count {n}")));
    }
    if split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(Error::format("split.csv", "index out of range".to_string()));
    }
    Ok(Dataset {
        benchmark: meta.benchmark,
        records,
        covariates,
        split,
        encoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::build_dataset;

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for b in [Benchmark::Synsum, Benchmark::Mimic] {
            let mut ds = build_dataset(b, 50, &EncoderConfig::default(), 3).unwrap();
            ds.records[4].s = true;
            ds.records[4].x = Some(ds.covariates[4].clone());
            let path = dir.path().join(b.as_str());
            write_dataset(&path, &ds).unwrap();
            assert_eq!(read_dataset(&path).unwrap(), ds);
        }
    }

    #[test]
    fn missing_directory_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(&dir.path().join("nope")), Err(Error::Config(_))));
    }
}
