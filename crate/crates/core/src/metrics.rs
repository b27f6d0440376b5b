//! External cluster-validity scores and cross-method ranking.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelVector;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("weight matrix is {0}x{1}, expected square")]
    NonSquare(usize, usize),
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("method {method} has no score for cell {cell}")]
    IncompleteGrid { method: String, cell: String },
    #[error("duplicate score for method {method} in cell {cell}")]
    DuplicateScore { method: String, cell: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[[a, b]]` = samples with truth `a` and prediction `b`.
    pub counts: Array2<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }
}

fn check_len(g: &LabelVector, p: &LabelVector) -> Result<(), MetricError> {
    if g.len() != p.len() {
        return Err(MetricError::LengthMismatch(g.len(), p.len()));
    }
    Ok(())
}

pub fn contingency(g: &LabelVector, p: &LabelVector) -> Result<ContingencyTable, MetricError> {
    check_len(g, p)?;
    if g.is_empty() {
        return Ok(ContingencyTable {
            counts: Array2::zeros((0, 0)),
            n: 0,
        });
    }
    let mut counts = Array2::<u64>::zeros((g.k(), p.k()));
    for (&a, &b) in g.as_slice().iter().zip(p.as_slice()) {
        counts[[a, b]] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: g.len() as u64,
    })
}

/// Minimum-cost assignment on a square matrix (shortest augmenting path with
/// potentials). Returns `col[row]` and the optimal cost.
fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (assignment, total)
}

fn best_on(weight: &Array2<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| -weight[[r, c]]).collect())
        .collect();
    -min_cost_assignment(&cost).1
}

/// Permutation `perm` (row `i` → column `perm[i]`) maximising total weight.
/// Among optimal permutations the lexicographically smallest is returned.
pub fn hungarian_max(weight: &Array2<f64>) -> Result<Vec<usize>, MetricError> {
    let (r, c) = weight.dim();
    if r != c {
        return Err(MetricError::NonSquare(r, c));
    }
    let n = r;
    let all: Vec<usize> = (0..n).collect();
    let optimum = best_on(weight, &all, &all);
    let tol = 1e-9 * optimum.abs().max(1.0);

    let mut perm = Vec::with_capacity(n);
    let mut free_cols = all.clone();
    let mut fixed = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != col).collect();
            let total = fixed + weight[[row, col]] + best_on(weight, &rest_rows, &rest_cols);
            if total >= optimum - tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("some column completes an optimal assignment");
        let col = free_cols.remove(pos);
        fixed += weight[[row, col]];
        perm.push(col);
    }
    Ok(perm)
}

fn square_counts(t: &ContingencyTable) -> Array2<f64> {
    let (a, b) = t.counts.dim();
    let s = a.max(b);
    let mut w = Array2::<f64>::zeros((s, s));
    for ((i, j), &v) in t.counts.indexed_iter() {
        w[[i, j]] = v as f64;
    }
    w
}

/// Clustering accuracy under the best one-to-one label mapping.
pub fn acc(g: &LabelVector, p: &LabelVector) -> Result<f64, MetricError> {
    check_len(g, p)?;
    if g.is_empty() {
        return Err(MetricError::TooFewSamples { needed: 1, found: 0 });
    }
    let t = contingency(g, p)?;
    let w = square_counts(&t);
    let perm = hungarian_max(&w)?;
    let hits: f64 = perm.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum();
    Ok(hits / t.n as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    let mut terms: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            c / n * (n / c).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Normalised mutual information, `2 I(G,P) / (H(G) + H(P))`, natural logs.
///
/// Both partitions single-cluster → 1; exactly one single-cluster → 0.
pub fn nmi(g: &LabelVector, p: &LabelVector) -> Result<f64, MetricError> {
    check_len(g, p)?;
    if g.is_empty() {
        return Err(MetricError::TooFewSamples { needed: 1, found: 0 });
    }
    let t = contingency(g, p)?;
    let rows = t.row_sums();
    let cols = t.col_sums();
    let occupied = |v: &[u64]| v.iter().filter(|&&c| c > 0).count();
    match (occupied(&rows) == 1, occupied(&cols) == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let n = t.n as f64;
    let mut terms: Vec<f64> = Vec::new();
    for ((a, b), &c) in t.counts.indexed_iter() {
        if c == 0 {
            continue;
        }
        let c = c as f64;
        terms.push(c / n * ((n * c) / (rows[a] as f64 * cols[b] as f64)).ln());
    }
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    let h = entropy(&rows, n) + entropy(&cols, n);
    Ok((2.0 * mi / h).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari(g: &LabelVector, p: &LabelVector) -> Result<f64, MetricError> {
    check_len(g, p)?;
    if g.len() < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, found: g.len() });
    }
    let t = contingency(g, p)?;
    let index: f64 = t.counts.iter().map(|&c| comb2(c)).sum();
    let sum_a: f64 = t.row_sums().into_iter().map(comb2).sum();
    let sum_b: f64 = t.col_sums().into_iter().map(comb2).sum();
    let expected = sum_a * sum_b / comb2(t.n);
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: String,
    pub cohort: String,
    pub acc: f64,
    pub ari: f64,
    pub nmi: f64,
    #[serde(default)]
    pub wall_clock_seconds: f64,
}

impl ScoreReport {
    pub fn compute(
        method: impl Into<String>,
        cohort: impl Into<String>,
        truth: &LabelVector,
        pred: &LabelVector,
        wall_clock_seconds: f64,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            method: method.into(),
            cohort: cohort.into(),
            acc: acc(truth, pred)?,
            ari: ari(truth, pred)?,
            nmi: nmi(truth, pred)?,
            wall_clock_seconds,
        })
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Acc => self.acc,
            Metric::Ari => self.ari,
            Metric::Nmi => self.nmi,
        }
    }

    pub fn write_csv<W: Write>(reports: &[ScoreReport], w: W) -> Result<(), MetricError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in reports {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<ScoreReport>, MetricError> {
        let mut rd = csv::Reader::from_reader(r);
        rd.deserialize().map(|row| row.map_err(MetricError::from)).collect()
    }

    pub fn write_json<W: Write>(reports: &[ScoreReport], w: W) -> Result<(), MetricError> {
        serde_json::to_writer_pretty(w, reports)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc,
    Ari,
    Nmi,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Acc, Metric::Ari, Metric::Nmi];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Ari => "ari",
            Metric::Nmi => "nmi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub method: String,
    pub mean_rank: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single cell.
    pub std_rank: f64,
    pub cells: usize,
}

/// Descending mid-ranks of `scores`; tied values share the mean of their ranks.
pub fn mid_ranks(scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .map(|&x| {
            let above = scores.iter().filter(|&&y| y > x).count() as f64;
            let tied = scores.iter().filter(|&&y| y == x).count() as f64;
            above + (tied + 1.0) / 2.0
        })
        .collect()
}

/// Mean and standard deviation of each method's rank over every
/// (cohort, metric) cell. Methods are reported in first-appearance order.
pub fn average_rank(reports: &[ScoreReport]) -> Result<Vec<RankSummary>, MetricError> {
    let mut methods: Vec<String> = Vec::new();
    let mut cohorts: Vec<String> = Vec::new();
    let mut table: BTreeMap<(String, String), &ScoreReport> = BTreeMap::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !cohorts.contains(&r.cohort) {
            cohorts.push(r.cohort.clone());
        }
        if table.insert((r.method.clone(), r.cohort.clone()), r).is_some() {
            return Err(MetricError::DuplicateScore {
                method: r.method.clone(),
                cell: r.cohort.clone(),
            });
        }
    }
    let mut ranks: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    for metric in Metric::ALL {
        for cohort in &cohorts {
            let mut scores = Vec::with_capacity(methods.len());
            for m in &methods {
                let r = table.get(&(m.clone(), cohort.clone())).ok_or_else(|| MetricError::IncompleteGrid {
                    method: m.clone(),
                    cell: format!("{cohort}/{}", metric.name()),
                })?;
                scores.push(r.metric(metric));
            }
            for (i, rank) in mid_ranks(&scores).into_iter().enumerate() {
                ranks[i].push(rank);
            }
        }
    }
    Ok(methods
        .into_iter()
        .zip(ranks)
        .map(|(method, rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().sum::<f64>() / n;
            let std = if rs.len() > 1 {
                (rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            RankSummary {
                method,
                mean_rank: mean,
                std_rank: std,
                cells: rs.len(),
            }
        })
        .collect())
}

pub fn write_ranks_csv<W: Write>(ranks: &[RankSummary], w: W) -> Result<(), MetricError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in ranks {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn lv(v: &[usize]) -> LabelVector {
        LabelVector::from_labels(v.to_vec())
    }

    #[test]
    fn contingency_examples() {
        let t = contingency(&lv(&[0, 0, 1, 1]), &lv(&[0, 0, 1, 1])).unwrap();
        assert_eq!(t.counts, array![[2, 0], [0, 2]]);
        let t = contingency(&lv(&[0, 0, 1, 1]), &lv(&[0, 1, 0, 1])).unwrap();
        assert_eq!(t.counts, array![[1, 1], [1, 1]]);
        let t = contingency(&lv(&[]), &lv(&[])).unwrap();
        assert_eq!((t.counts.dim(), t.n), ((0, 0), 0));
        assert!(contingency(&lv(&[0]), &lv(&[0, 1])).is_err());
    }

    #[test]
    fn hungarian_small() {
        assert_eq!(hungarian_max(&array![[4.0, 1.0], [2.0, 3.0]]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_max(&array![[1.0, 4.0], [3.0, 2.0]]).unwrap(), vec![1, 0]);
        assert_eq!(hungarian_max(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_max(&Array2::eye(4)).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(hungarian_max(&Array2::zeros((2, 3))), Err(MetricError::NonSquare(2, 3))));
        assert!(hungarian_max(&Array2::zeros((0, 0))).unwrap().is_empty());
    }

    #[test]
    fn acc_examples() {
        assert_eq!(acc(&lv(&[0, 1, 1, 0]), &lv(&[0, 1, 1, 0])).unwrap(), 1.0);
        assert_eq!(acc(&lv(&[0, 1, 1, 0]), &lv(&[1, 0, 0, 1])).unwrap(), 1.0);
        assert_eq!(acc(&lv(&[0, 0, 1, 1]), &lv(&[0, 1, 1, 1])).unwrap(), 0.75);
        assert_eq!(acc(&lv(&[0, 0, 0, 1]), &lv(&[0, 0, 0, 0])).unwrap(), 0.75);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&lv(&[0, 0, 1, 1]), &lv(&[0, 0, 1, 1])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&lv(&[0, 0, 1, 1]), &lv(&[0, 1, 0, 1])).unwrap(), 0.0);
        assert_eq!(nmi(&lv(&[0, 0, 0]), &lv(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(nmi(&lv(&[0, 0, 0]), &lv(&[0, 1, 1])).unwrap(), 0.0);
        let g = lv(&[0, 0, 1, 1, 2, 2, 0]);
        let p = lv(&[1, 0, 1, 1, 0, 2, 2]);
        assert_eq!(nmi(&g, &p).unwrap(), nmi(&p, &g).unwrap());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&lv(&[0, 0, 1, 1]), &lv(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert!((ari(&lv(&[0, 0, 1, 1]), &lv(&[0, 1, 0, 1])).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(ari(&lv(&[0, 0, 0]), &lv(&[0, 0, 0])).unwrap(), 1.0);
        assert!(matches!(ari(&lv(&[0]), &lv(&[0])), Err(MetricError::TooFewSamples { .. })));
    }

    fn report(method: &str, cohort: &str, s: f64) -> ScoreReport {
        ScoreReport {
            method: method.into(),
            cohort: cohort.into(),
            acc: s,
            ari: s,
            nmi: s,
            wall_clock_seconds: 0.0,
        }
    }

    #[test]
    fn ranks_best_everywhere_and_ties() {
        let r = average_rank(&[report("a", "c1", 0.9), report("b", "c1", 0.5)]).unwrap();
        assert_eq!((r[0].mean_rank, r[0].std_rank), (1.0, 0.0));
        assert_eq!(r[1].mean_rank, 2.0);

        let r = average_rank(&[
            report("a", "c1", 0.5),
            report("b", "c1", 0.5),
            report("a", "c2", 0.9),
            report("b", "c2", 0.1),
        ])
        .unwrap();
        assert_eq!(r[0].mean_rank, 1.25);
        assert_eq!(r[1].mean_rank, 1.75);
    }

    #[test]
    fn ranks_incomplete_and_duplicate() {
        let e = average_rank(&[report("a", "c1", 0.9), report("b", "c2", 0.5)]).unwrap_err();
        assert!(matches!(e, MetricError::IncompleteGrid { .. }));
        let e = average_rank(&[report("a", "c1", 0.9), report("a", "c1", 0.5)]).unwrap_err();
        assert!(matches!(e, MetricError::DuplicateScore { .. }));
    }

    #[test]
    fn score_csv_round_trip() {
        let rs = vec![report("kmeans_x", "combined", 0.75)];
        let mut buf = Vec::new();
        ScoreReport::write_csv(&rs, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("method,cohort,acc,ari,nmi,wall_clock_seconds\n"));
        assert_eq!(ScoreReport::read_csv(buf.as_slice()).unwrap(), rs);
    }
}
