//! Cluster label containers shared by every clusterer and ensemble.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label {label} at index {index} is out of range for k = {k}")]
    OutOfRange { index: usize, label: usize, k: usize },
    #[error("label vectors differ in length or k: {0}")]
    Inconsistent(String),
    #[error("label matrix has no runs")]
    Empty,
    #[error("malformed label file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Integer cluster assignment per sample, every entry in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    k: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self, LabelError> {
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(LabelError::OutOfRange { index, label, k });
        }
        Ok(Self { labels, k })
    }

    /// Build from raw labels, taking `k = max + 1` (at least 1).
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().copied().max().map_or(1, |m| m + 1);
        Self { labels, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.labels
    }

    /// Number of positions where `self` and `other` carry the same label.
    pub fn agreement(&self, other: &LabelVector) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count()
    }

    /// Write `sample_index,label` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LabelError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sample_index", "label"])?;
        for (i, l) in self.labels.iter().enumerate() {
            wtr.write_record([i.to_string(), l.to_string()])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read a labels CSV. Accepts either `sample_index,label` or a single
    /// `label` column; rows must be in sample order.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, LabelError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or_else(|| LabelError::Malformed("no `label` column".into()))?;
        let idx_col = headers.iter().position(|h| h.trim() == "sample_index");
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if let Some(ic) = idx_col {
                let idx: usize = rec[ic].trim().parse().map_err(|_| {
                    LabelError::Malformed(format!("bad sample_index on row {row}"))
                })?;
                if idx != row {
                    return Err(LabelError::Malformed(format!(
                        "sample_index {idx} out of order on row {row}"
                    )));
                }
            }
            let l: usize = rec[col]
                .trim()
                .parse()
                .map_err(|_| LabelError::Malformed(format!("bad label on row {row}")))?;
            labels.push(l);
        }
        Ok(Self::from_labels(labels))
    }
}

impl AsRef<[usize]> for LabelVector {
    fn as_ref(&self) -> &[usize] {
        &self.labels
    }
}

/// Several clustering runs over the same samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    runs: Vec<LabelVector>,
    names: Vec<String>,
}

impl LabelMatrix {
    /// Runs are named `run0`, `run1`, ... unless named via [`Self::with_names`].
    pub fn new(runs: Vec<LabelVector>) -> Result<Self, LabelError> {
        let names = (0..runs.len()).map(|i| format!("run{i}")).collect();
        Self::with_names(runs, names)
    }

    pub fn with_names(runs: Vec<LabelVector>, names: Vec<String>) -> Result<Self, LabelError> {
        let first = runs.first().ok_or(LabelError::Empty)?;
        let (n, k) = (first.len(), first.k());
        if let Some(bad) = runs.iter().position(|r| r.len() != n || r.k() != k) {
            return Err(LabelError::Inconsistent(format!(
                "run {bad} has n={} k={}, expected n={n} k={k}",
                runs[bad].len(),
                runs[bad].k()
            )));
        }
        if names.len() != runs.len() {
            return Err(LabelError::Inconsistent(format!(
                "{} names for {} runs",
                names.len(),
                runs.len()
            )));
        }
        Ok(Self { runs, names })
    }

    pub fn runs(&self) -> &[LabelVector] {
        &self.runs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_samples(&self) -> usize {
        self.runs[0].len()
    }

    pub fn k(&self) -> usize {
        self.runs[0].k()
    }

    /// Rows are samples, columns are runs, header is the run names.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LabelError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.names)?;
        for i in 0..self.n_samples() {
            wtr.write_record(self.runs.iter().map(|r| r.as_slice()[i].to_string()))?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, LabelError> {
        let mut rdr = csv::Reader::from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let l = field
                    .trim()
                    .parse()
                    .map_err(|_| LabelError::Malformed(format!("bad label at row {row} col {c}")))?;
                cols[c].push(l);
            }
        }
        let k = cols
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(1, |m| m + 1);
        let runs = cols
            .into_iter()
            .map(|c| LabelVector::new(c, k))
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_names(runs, names)
    }
}
