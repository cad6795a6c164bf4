//! Evaluation: argmax accuracy, threshold-parameterised set-retrieval
//! accuracy, per-verb absolute error and threshold sweeps.
//!
//! All tie-breaks (argmax and top-k) prefer the lowest verb index, so
//! results do not depend on evaluation order.

use std::collections::{BTreeMap, HashSet};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statistics::Summary;

fn check_aligned(predictions: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<()> {
    if predictions.dim() != labels.dim() {
        let (pr, pc) = predictions.dim();
        let (lr, lc) = labels.dim();
        return Err(if pr != lr {
            Error::DimensionMismatch {
                expected: lr,
                found: pr,
            }
        } else {
            Error::DimensionMismatch {
                expected: lc,
                found: pc,
            }
        });
    }
    if labels.nrows() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha {alpha} must lie in (0, 1)")))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of videos whose predicted argmax equals the label argmax.
pub fn accuracy_classification(predictions: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<f64> {
    check_aligned(predictions, labels)?;
    let hits = predictions
        .rows()
        .into_iter()
        .zip(labels.rows())
        .filter(|(p, y)| argmax(*p) == argmax(*y))
        .count();
    Ok(hits as f64 / labels.nrows() as f64)
}

/// Verbs annotated with probability strictly above `alpha`, ascending.
pub fn annotated_set(y: ArrayView1<f64>, alpha: f64) -> Vec<usize> {
    y.iter()
        .enumerate()
        .filter(|(_, &p)| p > alpha)
        .map(|(j, _)| j)
        .collect()
}

/// Indices of the `k` largest entries, ascending. At the `k`-th value,
/// lower indices win.
pub fn predicted_set(y_hat: ArrayView1<f64>, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k requires k > 0".into()));
    }
    if k > y_hat.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: y_hat.len(),
        });
    }
    let mut order: Vec<usize> = (0..y_hat.len()).collect();
    order.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Size of the intersection of two index sets.
pub fn set_overlap(annotated: &[usize], predicted: &[usize]) -> usize {
    let predicted: HashSet<_> = predicted.iter().collect();
    annotated.iter().filter(|j| predicted.contains(j)).count()
}

/// Score of one video: overlap between its above-`alpha` verbs and the
/// equally sized top-k prediction, as `(hits, k)`. `None` when no verb is
/// annotated above `alpha`.
pub fn video_set_score(y: ArrayView1<f64>, y_hat: ArrayView1<f64>, alpha: f64) -> Result<Option<(usize, usize)>> {
    let annotated = annotated_set(y, alpha);
    if annotated.is_empty() {
        return Ok(None);
    }
    let predicted = predicted_set(y_hat, annotated.len())?;
    Ok(Some((set_overlap(&annotated, &predicted), annotated.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub alpha: f64,
    pub n_videos_evaluated: usize,
    pub avg_verbs_per_video: f64,
    /// Population standard deviation of the annotated-set sizes.
    pub std_verbs_per_video: f64,
    pub accuracy: f64,
    pub per_video_scores: BTreeMap<String, f64>,
}

/// Set-retrieval accuracy at threshold `alpha`. Videos with no verb above
/// `alpha` are left out of both the sum and the count.
pub fn accuracy_probabilistic(
    predictions: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    video_ids: &[String],
    alpha: f64,
) -> Result<EvalResult> {
    check_aligned(predictions, labels)?;
    check_alpha(alpha)?;
    if video_ids.len() != labels.nrows() {
        return Err(Error::DimensionMismatch {
            expected: labels.nrows(),
            found: video_ids.len(),
        });
    }
    let mut per_video_scores = BTreeMap::new();
    let mut scores = Vec::new();
    let mut sizes = Vec::new();
    for ((y, y_hat), id) in labels.rows().into_iter().zip(predictions.rows()).zip(video_ids) {
        if let Some((hits, k)) = video_set_score(y, y_hat, alpha)? {
            let score = hits as f64 / k as f64;
            if per_video_scores.insert(id.clone(), score).is_some() {
                return Err(Error::InvalidRecord(format!("duplicate video id `{id}`")));
            }
            scores.push(score);
            sizes.push(k as f64);
        }
    }
    if scores.is_empty() {
        return Err(Error::AlphaTooHigh { alpha });
    }
    let n = scores.len() as f64;
    let avg = sizes.iter().sum::<f64>() / n;
    let var = sizes.iter().map(|s| (s - avg) * (s - avg)).sum::<f64>() / n;
    Ok(EvalResult {
        alpha,
        n_videos_evaluated: scores.len(),
        avg_verbs_per_video: avg,
        std_verbs_per_video: var.sqrt(),
        accuracy: scores.iter().sum::<f64>() / n,
        per_video_scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerVerbError {
    pub verb: usize,
    pub per_video_errors: Vec<f64>,
    pub summary: Summary,
}

impl PerVerbError {
    pub fn mean(&self) -> f64 {
        self.summary.mean
    }

    pub fn median(&self) -> f64 {
        self.summary.median
    }
}

fn per_verb_with(
    predictions: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    err: impl Fn(f64) -> f64,
) -> Result<Vec<PerVerbError>> {
    check_aligned(predictions, labels)?;
    (0..labels.ncols())
        .map(|j| {
            let errors: Vec<f64> = labels
                .column(j)
                .iter()
                .zip(predictions.column(j))
                .map(|(y, p)| err(y - p))
                .collect();
            Ok(PerVerbError {
                verb: j,
                summary: Summary::from_samples(&errors)?,
                per_video_errors: errors,
            })
        })
        .collect()
}

/// Per-verb mean absolute difference between annotated and predicted
/// probability, with the per-video errors and their quartiles.
pub fn per_verb_error(predictions: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<Vec<PerVerbError>> {
    per_verb_with(predictions, labels, f64::abs)
}

/// Squared-difference variant of [`per_verb_error`].
pub fn per_verb_squared_error(predictions: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<Vec<PerVerbError>> {
    per_verb_with(predictions, labels, |d| d * d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// `None` when no video has a verb annotated above `alpha`.
    pub result: Option<EvalResult>,
}

/// 0.1, 0.2, ..., 0.9
pub fn default_alphas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
/// Range values are rounded to 12 decimals so `0.1:0.9:0.1` yields exactly
/// [`default_alphas`].
pub fn parse_alphas(list: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::InvalidConfig(format!("alpha list `{list}`: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let alphas = if list.contains(':') {
        let parts: Vec<&str> = list.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad("ranges take the form start:stop:step".into()));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        let ordered = step > 0.0 && stop >= start;
        if !ordered {
            return Err(bad("need step > 0 and stop >= start".into()));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect()
    } else {
        list.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(bad("thresholds must lie in (0, 1)".into()));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("thresholds must be strictly increasing".into()));
    }
    Ok(alphas)
}

pub fn alpha_sweep(
    predictions: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    video_ids: &[String],
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("empty alpha list".into()));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("alphas must be strictly increasing".into()));
    }
    alphas
        .iter()
        .map(
            |&alpha| match accuracy_probabilistic(predictions, labels, video_ids, alpha) {
                Ok(r) => Ok(SweepRow { alpha, result: Some(r) }),
                Err(Error::AlphaTooHigh { .. }) => Ok(SweepRow { alpha, result: None }),
                Err(e) => Err(e),
            },
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn classification_accuracy_cases() {
        let labels = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(accuracy_classification(labels.view(), labels.view()).unwrap(), 1.0);
        let wrong = array![[0.0, 0.9, 0.0], [0.0, 0.0, 0.9], [0.9, 0.0, 0.0]];
        assert_eq!(accuracy_classification(wrong.view(), labels.view()).unwrap(), 0.0);
        let two = array![[0.8, 0.1, 0.1], [0.2, 0.5, 0.3], [0.6, 0.3, 0.1]];
        assert_eq!(accuracy_classification(two.view(), labels.view()).unwrap(), 2.0 / 3.0);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(accuracy_classification(empty.view(), empty.view()).is_err());
    }

    #[test]
    fn annotated_set_is_strict() {
        let y = array![0.9, 0.5, 0.2];
        assert_eq!(annotated_set(y.view(), 0.5), vec![0]);
        assert_eq!(annotated_set(y.view(), 0.1), vec![0, 1, 2]);
        assert!(annotated_set(y.view(), 0.95).is_empty());
    }

    #[test]
    fn predicted_set_ties_and_bounds() {
        assert_eq!(predicted_set(array![0.1, 0.8, 0.8, 0.3].view(), 2).unwrap(), vec![1, 2]);
        assert_eq!(predicted_set(array![0.5, 0.5, 0.5].view(), 2).unwrap(), vec![0, 1]);
        assert_eq!(predicted_set(array![0.3, 0.1, 0.2].view(), 3).unwrap(), vec![0, 1, 2]);
        assert!(predicted_set(array![0.3, 0.1].view(), 0).is_err());
        assert!(predicted_set(array![0.3, 0.1].view(), 3).is_err());
    }

    #[test]
    fn disjoint_top_k_scores_zero() {
        let labels = array![[0.9, 0.9, 0.9, 0.9, 0.0, 0.0, 0.0, 0.0]];
        let preds = array![[0.0, 0.0, 0.0, 0.0, 0.5, 0.6, 0.7, 0.8]];
        let r = accuracy_probabilistic(preds.view(), labels.view(), &ids(1), 0.5).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.avg_verbs_per_video, 4.0);
    }

    #[test]
    fn empty_annotated_sets_are_excluded() {
        let labels = array![[0.9, 0.1], [0.3, 0.2]];
        let preds = array![[0.8, 0.2], [0.9, 0.0]];
        let r = accuracy_probabilistic(preds.view(), labels.view(), &ids(2), 0.5).unwrap();
        assert_eq!(r.n_videos_evaluated, 1);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_video_scores.contains_key("v0"));
        assert!(matches!(
            accuracy_probabilistic(preds.view(), labels.view(), &ids(2), 0.95),
            Err(Error::AlphaTooHigh { .. })
        ));
        assert!(accuracy_probabilistic(preds.view(), labels.view(), &ids(2), 1.0).is_err());
    }

    #[test]
    fn per_verb_error_cases() {
        let labels = array![[0.8, 0.1]];
        let preds = array![[0.6, 0.1]];
        let e = per_verb_error(preds.view(), labels.view()).unwrap();
        assert!((e[0].mean() - 0.2).abs() < 1e-15);
        assert_eq!(e[1].mean(), 0.0);
        let sq = per_verb_squared_error(preds.view(), labels.view()).unwrap();
        assert!((sq[0].mean() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sweep_marks_empty_rows() {
        let labels = array![[0.9, 0.3], [0.6, 0.55]];
        let preds = labels.clone();
        let rows = alpha_sweep(preds.view(), labels.view(), &ids(2), &[0.2, 0.5, 0.7, 0.95]).unwrap();
        let n: Vec<_> = rows
            .iter()
            .map(|r| r.result.as_ref().map_or(0, |e| e.n_videos_evaluated))
            .collect();
        assert_eq!(n, vec![2, 2, 1, 0]);
        assert!(rows[3].result.is_none());
        assert!(alpha_sweep(preds.view(), labels.view(), &ids(2), &[0.5, 0.3]).is_err());
    }

    #[test]
    fn default_alphas_are_tenths() {
        let a = default_alphas();
        assert_eq!(a.len(), 9);
        assert_eq!(a[0], 0.1);
        assert_eq!(a[4], 0.5);
        assert_eq!(a[8], 0.9);
    }

    #[test]
    fn alpha_lists() {
        assert_eq!(parse_alphas("0.1:0.9:0.1").unwrap(), default_alphas());
        assert_eq!(parse_alphas("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_alphas("0.3, 0.5,0.7").unwrap(), vec![0.3, 0.5, 0.7]);
        assert_eq!(parse_alphas("0.2:0.5:0.15").unwrap(), vec![0.2, 0.35, 0.5]);
        for bad in ["", "0", "1.0", "0.5,0.3", "0.1:0.9", "0.1:0.9:0", "x"] {
            assert!(matches!(parse_alphas(bad), Err(Error::InvalidConfig(_))), "{bad}");
        }
    }
}
