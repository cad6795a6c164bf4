//! Corpus-level annotation statistics: verb frequencies, verbs chosen per
//! worker, pairwise co-occurrence and simple correlation checks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::annotations::{csv_error, AnnotationRecord, VerbVocabulary};
use crate::error::{Error, Result};

/// Pairwise co-selection statistics for one dataset.
///
/// `counts[(i, j)]` is the number of label sets containing both `i` and
/// `j` (`i != j`); the diagonal is kept at zero. `normalized` divides each
/// row by its sum, and `symmetric` averages `normalized` with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub counts: Array2<u64>,
    pub normalized: Array2<f64>,
    pub symmetric: Array2<f64>,
    pub dataset_tag: String,
}

impl CooccurrenceMatrix {
    /// Builds the matrix from label sets, each contributing one count to
    /// every unordered pair of distinct verbs it contains.
    pub fn from_label_sets<I, S>(sets: I, n_verbs: usize, dataset_tag: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = usize>,
    {
        let mut counts = Array2::<u64>::zeros((n_verbs, n_verbs));
        let mut seen_any = false;
        for set in sets {
            seen_any = true;
            let verbs: BTreeSet<usize> = set.into_iter().collect();
            if let Some(&index) = verbs.iter().next_back() {
                if index >= n_verbs {
                    return Err(Error::IndexOutOfRange { index, len: n_verbs });
                }
            }
            let verbs: Vec<usize> = verbs.into_iter().collect();
            for (a, &i) in verbs.iter().enumerate() {
                for &j in &verbs[a + 1..] {
                    counts[(i, j)] += 1;
                    counts[(j, i)] += 1;
                }
            }
        }
        if !seen_any {
            return Err(Error::Empty("co-occurrence source"));
        }
        Ok(Self::from_counts(counts, dataset_tag.into()))
    }

    /// One count per (worker, video) record.
    pub fn from_records(records: &[AnnotationRecord], n_verbs: usize, dataset_tag: impl Into<String>) -> Result<Self> {
        Self::from_label_sets(
            records.iter().map(|r| r.verbs_selected.iter().copied()),
            n_verbs,
            dataset_tag,
        )
    }

    /// Binarizes each prediction row at `alpha` (strictly greater) and
    /// counts one co-occurrence per video per pair present.
    pub fn from_predictions(predictions: ArrayView2<f64>, alpha: f64, dataset_tag: impl Into<String>) -> Result<Self> {
        let n_verbs = predictions.ncols();
        Self::from_label_sets(
            predictions.rows().into_iter().map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > alpha)
                    .map(|(j, _)| j)
                    .collect::<Vec<_>>()
            }),
            n_verbs,
            dataset_tag,
        )
    }

    fn from_counts(counts: Array2<u64>, dataset_tag: String) -> Self {
        let n = counts.nrows();
        let mut normalized = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let row_sum: u64 = counts.row(i).sum();
            if row_sum > 0 {
                for j in 0..n {
                    normalized[(i, j)] = counts[(i, j)] as f64 / row_sum as f64;
                }
            }
        }
        let mut symmetric = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let s = (normalized[(i, j)] + normalized[(j, i)]) / 2.0;
                symmetric[(i, j)] = s;
                symmetric[(j, i)] = s;
            }
        }
        Self {
            counts,
            normalized,
            symmetric,
            dataset_tag,
        }
    }

    pub fn n_verbs(&self) -> usize {
        self.counts.nrows()
    }

    /// Writes one row per co-selected pair `i < j`.
    pub fn write_csv(&self, writer: impl Write, vocab: &VerbVocabulary) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["verb_i", "verb_j", "count", "n_ij", "n_ji", "s", "dataset_tag"])
            .map_err(csv_error)?;
        let n = self.n_verbs();
        for i in 0..n {
            for j in (i + 1)..n {
                let c = self.counts[(i, j)];
                if c == 0 {
                    continue;
                }
                out.write_record([
                    vocab.verbs()[i].clone(),
                    vocab.verbs()[j].clone(),
                    c.to_string(),
                    format!("{:.6}", self.normalized[(i, j)]),
                    format!("{:.6}", self.normalized[(j, i)]),
                    format!("{:.6}", self.symmetric[(i, j)]),
                    self.dataset_tag.clone(),
                ])
                .map_err(csv_error)?;
            }
        }
        out.flush().map_err(|e| Error::InvalidRecord(e.to_string()))
    }
}

/// Groups records by dataset tag and builds one matrix per tag.
pub fn cooccurrence_by_dataset(
    records: &[AnnotationRecord],
    n_verbs: usize,
) -> Result<BTreeMap<String, CooccurrenceMatrix>> {
    if records.is_empty() {
        return Err(Error::Empty("co-occurrence source"));
    }
    let mut grouped: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.dataset_tag.as_str()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(tag, rs)| {
            let m =
                CooccurrenceMatrix::from_label_sets(rs.iter().map(|r| r.verbs_selected.iter().copied()), n_verbs, tag)?;
            Ok((tag.to_string(), m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    /// `(dataset_tag, S(i, j))` in the order the matrices were given.
    pub per_dataset: Vec<(String, f64)>,
    pub combined: f64,
}

/// The `k` verb pairs with the largest symmetric co-occurrence summed over
/// datasets. Only pairs with a nonzero sum are returned; ties are ordered
/// by `(i, j)`.
pub fn top_symmetric_pairs(matrices: &[CooccurrenceMatrix], k: usize) -> Result<Vec<PairScore>> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k requires k > 0".into()));
    }
    let Some(first) = matrices.first() else {
        return Err(Error::Empty("co-occurrence matrices"));
    };
    let n = first.n_verbs();
    if let Some(m) = matrices.iter().find(|m| m.n_verbs() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.n_verbs(),
        });
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let per_dataset: Vec<(String, f64)> = matrices
                .iter()
                .map(|m| (m.dataset_tag.clone(), m.symmetric[(i, j)]))
                .collect();
            let combined: f64 = per_dataset.iter().map(|(_, s)| s).sum();
            if combined > 0.0 {
                pairs.push(PairScore {
                    i,
                    j,
                    per_dataset,
                    combined,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
    pairs.truncate(k);
    Ok(pairs)
}

pub fn write_top_pairs(writer: impl Write, pairs: &[PairScore], vocab: &VerbVocabulary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let tags: Vec<String> = pairs
        .first()
        .map(|p| p.per_dataset.iter().map(|(t, _)| format!("s_{t}")).collect())
        .unwrap_or_default();
    let mut header = vec!["rank".to_string(), "verb_i".into(), "verb_j".into()];
    header.extend(tags);
    header.push("combined".into());
    out.write_record(&header).map_err(csv_error)?;
    for (rank, p) in pairs.iter().enumerate() {
        let mut row = vec![
            (rank + 1).to_string(),
            vocab.verbs()[p.i].clone(),
            vocab.verbs()[p.j].clone(),
        ];
        row.extend(p.per_dataset.iter().map(|(_, s)| format!("{s:.6}")));
        row.push(format!("{:.6}", p.combined));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::InvalidRecord(e.to_string()))
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// Quartiles use linear interpolation between order statistics.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("summary samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let quantile = |q: f64| {
            let h = (sorted.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        Ok(Self {
            count: sorted.len(),
            min: sorted[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: sorted[sorted.len() - 1],
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        })
    }
}

/// Number of verbs each worker selected, summarised per class label.
pub fn verbs_per_annotator(records: &[AnnotationRecord]) -> Result<BTreeMap<String, Summary>> {
    if records.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let mut by_class: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_class
            .entry(r.class_label.as_str())
            .or_default()
            .push(r.verbs_selected.len() as f64);
    }
    by_class
        .into_iter()
        .map(|(class, counts)| Ok((class.to_string(), Summary::from_samples(&counts)?)))
        .collect()
}

/// Distinct verbs selected by any worker, per class label.
pub fn unique_verbs_per_class(records: &[AnnotationRecord]) -> BTreeMap<String, usize> {
    let mut by_class: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        by_class
            .entry(r.class_label.as_str())
            .or_default()
            .extend(r.verbs_selected.iter().copied());
    }
    by_class
        .into_iter()
        .map(|(class, verbs)| (class.to_string(), verbs.len()))
        .collect()
}

/// Total selections of each verb over all records.
pub fn verb_counts(records: &[AnnotationRecord], n_verbs: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; n_verbs];
    for r in records {
        for &j in &r.verbs_selected {
            *counts
                .get_mut(j)
                .ok_or(Error::IndexOutOfRange { index: j, len: n_verbs })? += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatistics {
    pub class_label: String,
    pub records: usize,
    pub unique_verbs: usize,
    pub verbs_per_annotator: Summary,
}

pub fn class_statistics(records: &[AnnotationRecord]) -> Result<Vec<ClassStatistics>> {
    let unique = unique_verbs_per_class(records);
    Ok(verbs_per_annotator(records)?
        .into_iter()
        .map(|(class_label, summary)| ClassStatistics {
            unique_verbs: unique[&class_label],
            records: summary.count,
            class_label,
            verbs_per_annotator: summary,
        })
        .collect())
}

pub fn write_class_statistics(writer: impl Write, stats: &[ClassStatistics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "class_label",
        "records",
        "unique_verbs",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
    ])
    .map_err(csv_error)?;
    for s in stats {
        let v = &s.verbs_per_annotator;
        let mut row = vec![s.class_label.clone(), s.records.to_string(), s.unique_verbs.to_string()];
        row.extend([v.min, v.q1, v.median, v.q3, v.max, v.mean].map(|x| format!("{x:.6}")));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::InvalidRecord(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub x_name: String,
    pub y_name: String,
    pub r_squared: f64,
    pub n: usize,
}

/// Squared Pearson correlation of paired samples.
pub fn r_squared(
    x_name: impl Into<String>,
    x: &[f64],
    y_name: impl Into<String>,
    y: &[f64],
) -> Result<CorrelationReport> {
    let (x_name, y_name) = (x_name.into(), y_name.into());
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty("correlation needs at least 2 samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(x_name));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(y_name));
    }
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    Ok(CorrelationReport {
        x_name,
        y_name,
        r_squared: r2,
        n: x.len(),
    })
}
