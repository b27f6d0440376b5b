//! Report files. Every CSV has a fixed header; floats use Rust's shortest
//! round-trip formatting so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};
use tabclust_core::data::{read_csv, CsvOptions, Dataset, FeatureSpec};
use tabclust_core::metrics::{RankSummary, ScoreReport};

use crate::CliError;

pub const SCORES_HEADER: [&str; 5] = ["method", "cohort", "acc", "ari", "nmi"];
pub const TIMINGS_HEADER: [&str; 3] = ["method", "cohort", "wall_clock_seconds"];
pub const RANKS_HEADER: [&str; 4] = ["method", "mean_rank", "std_rank", "cells"];

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let f = File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::runtime(e)
}

/// Scores without timing, so the file depends only on labels.
pub fn write_scores_csv<W: Write>(reports: &[ScoreReport], w: W) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SCORES_HEADER).map_err(csv_err)?;
    for r in reports {
        wr.write_record([
            r.method.clone(),
            r.cohort.clone(),
            r.acc.to_string(),
            r.ari.to_string(),
            r.nmi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(reports: &[ScoreReport], w: W) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TIMINGS_HEADER).map_err(csv_err)?;
    for r in reports {
        wr.write_record([r.method.clone(), r.cohort.clone(), r.wall_clock_seconds.to_string()])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_ranks_csv<W: Write>(ranks: &[RankSummary], w: W) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RANKS_HEADER).map_err(csv_err)?;
    for r in ranks {
        wr.write_record([
            r.method.clone(),
            r.mean_rank.to_string(),
            r.std_rank.to_string(),
            r.cells.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// `z0..z{d-1}` columns, one row per sample.
pub fn write_matrix_csv<W: Write>(m: &Array2<f64>, w: W) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record((0..m.ncols()).map(|j| format!("z{j}"))).map_err(csv_err)?;
    for row in m.rows() {
        wr.write_record(row.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Read a CSV whose every column except `label_column` is an unbounded feature.
pub fn read_features_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset, CliError> {
    let text = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(text.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    if let Some(lc) = label_column {
        if !headers.iter().any(|h| h.trim() == lc) {
            return Err(CliError::Validation(format!("{}: no column `{lc}`", path.display())));
        }
    }
    let specs: Vec<FeatureSpec> = headers
        .iter()
        .map(str::trim)
        .filter(|h| Some(*h) != label_column)
        .map(FeatureSpec::unbounded)
        .collect();
    Ok(read_csv(text.as_slice(), &specs, label_column, &CsvOptions::default())?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_csv_has_fixed_header_and_no_timing() {
        let r = ScoreReport {
            method: "km".into(),
            cohort: "all".into(),
            acc: 0.75,
            ari: 0.1,
            nmi: 1.0,
            wall_clock_seconds: 3.0,
        };
        let mut buf = Vec::new();
        write_scores_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method,cohort,acc,ari,nmi\nkm,all,0.75,0.1,1\n");
    }

    #[test]
    fn empty_ranks_still_get_a_header() {
        let mut buf = Vec::new();
        write_ranks_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method,mean_rank,std_rank,cells\n");
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
