use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, FoldAssignment};
use crate::annotations::{
    aggregate, load_records, majority_vote, to_one_hot, AnnotationRecord, VerbVocabulary, VideoAnnotation,
};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{
    accuracy_classification, alpha_sweep, annotated_set, default_alphas, per_verb_error, EvalResult, SweepRow,
};
use crate::model::{predict_matrix, train, LossKind, TrainConfig};
use crate::statistics::{
    class_statistics, cooccurrence_by_dataset, r_squared, top_symmetric_pairs, verb_counts, ClassStatistics,
    CooccurrenceMatrix, CorrelationReport, PairScore, Summary,
};
use crate::tables::VideoTable;

pub const REPORT_VERSION: u32 = 1;

/// Aggregated annotations with feature rows aligned to `videos`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: VerbVocabulary,
    pub records: Vec<AnnotationRecord>,
    pub videos: Vec<VideoAnnotation>,
    pub features: Array2<f64>,
}

impl Corpus {
    pub fn new(vocab: VerbVocabulary, records: Vec<AnnotationRecord>, features: &VideoTable) -> Result<Self> {
        let videos = aggregate(&records, &vocab)?;
        let index: BTreeMap<&str, usize> = features
            .video_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = videos
            .iter()
            .map(|v| {
                index
                    .get(v.video_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidRecord(format!("no features for video `{}`", v.video_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = features.values.select(Axis(0), &rows);
        Ok(Self {
            vocab,
            records,
            videos,
            features,
        })
    }

    pub fn load(vocab: impl AsRef<Path>, records: impl AsRef<Path>, features: impl AsRef<Path>) -> Result<Self> {
        let vocab = VerbVocabulary::load(vocab)?;
        let records = load_records(records, &vocab)?;
        let features = VideoTable::load(features)?;
        Self::new(vocab, records, &features)
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    /// Annotation probabilities stacked row per video.
    pub fn distributions(&self) -> Array2<f64> {
        stack_distributions(&self.videos)
    }

    /// One-hot majority-vote targets stacked row per video.
    pub fn majority_one_hots(&self) -> Result<Array2<f64>> {
        let n = self.vocab.len();
        let mut out = Array2::zeros((self.videos.len(), n));
        for (i, v) in self.videos.iter().enumerate() {
            let j = majority_vote(v).context(|| format!("video `{}`", v.video_id))?;
            out.row_mut(i)
                .assign(&ndarray::Array1::from(to_one_hot(j, n)?.into_inner()));
        }
        Ok(out)
    }
}

pub fn stack_distributions(videos: &[VideoAnnotation]) -> Array2<f64> {
    let n = videos.first().map_or(0, |v| v.distribution.len());
    let mut out = Array2::zeros((videos.len(), n));
    for (mut row, v) in out.rows_mut().into_iter().zip(videos) {
        row.iter_mut().zip(v.distribution.as_slice()).for_each(|(o, &p)| *o = p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Shared optimiser settings. `loss` is overridden per method and
    /// `seed` is offset by the fold index.
    pub train: TrainConfig,
    /// Learning rate for the one-hot baseline when it should differ from
    /// `train.learning_rate`.
    #[serde(default)]
    pub baseline_learning_rate: Option<f64>,
    pub n_folds: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub top_k_pairs: usize,
    /// Threshold used to binarize predictions for co-occurrence counting.
    pub cooccurrence_alpha: f64,
    /// Train folds on separate threads. Results do not depend on this.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline_learning_rate: None,
            n_folds: 5,
            seed: 0,
            alphas: default_alphas(),
            top_k_pairs: 40,
            cooccurrence_alpha: 0.5,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    /// Trainer settings for the standard synthetic benchmark. The baseline's
    /// per-verb cross-entropy has gradients roughly `1/|verbs|` the size of
    /// the Euclidean loss, hence its larger learning rate.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 60,
                batch_size: 32,
                ..TrainConfig::default()
            },
            baseline_learning_rate: Some(0.5),
            seed,
            ..Self::default()
        }
    }
}

/// One threshold row without the per-video detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub alpha: f64,
    pub n_videos: usize,
    pub avg_verbs_per_video: Option<f64>,
    pub std_verbs_per_video: Option<f64>,
    pub accuracy: Option<f64>,
}

impl From<&SweepRow> for SweepSummary {
    fn from(row: &SweepRow) -> Self {
        let r = row.result.as_ref();
        Self {
            alpha: row.alpha,
            n_videos: r.map_or(0, |e| e.n_videos_evaluated),
            avg_verbs_per_video: r.map(|e| e.avg_verbs_per_video),
            std_verbs_per_video: r.map(|e| e.std_verbs_per_video),
            accuracy: r.map(|e| e.accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub loss: LossKind,
    /// Argmax accuracy against the majority vote.
    pub classification_accuracy: f64,
    pub sweep: Vec<SweepSummary>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub baseline: MethodResult,
    pub proposed: MethodResult,
}

/// Arithmetic mean of the fold rows. A threshold row averages the folds
/// in which it is non-empty and is `None` when it is empty in all folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMean {
    pub baseline_classification_accuracy: f64,
    pub proposed_classification_accuracy: f64,
    pub baseline_accuracy: Vec<Option<f64>>,
    pub proposed_accuracy: Vec<Option<f64>>,
}

/// Metrics over the union of all test folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub baseline_classification_accuracy: f64,
    pub proposed_classification_accuracy: f64,
    pub baseline_sweep: Vec<SweepRow>,
    pub proposed_sweep: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbError {
    pub verb: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPair {
    pub verb_i: String,
    pub verb_j: String,
    pub per_dataset: Vec<(String, f64)>,
    pub combined: f64,
}

impl NamedPair {
    fn from_score(p: &PairScore, vocab: &VerbVocabulary) -> Self {
        Self {
            verb_i: vocab.verbs()[p.i].clone(),
            verb_j: vocab.verbs()[p.j].clone(),
            per_dataset: p.per_dataset.clone(),
            combined: p.combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub n_records: usize,
    pub n_videos: usize,
    pub verb_counts: Vec<(String, u64)>,
    pub classes: Vec<ClassStatistics>,
    pub top_pairs: Vec<NamedPair>,
    /// Largest summed symmetric co-occurrence; below the number of datasets
    /// unless two verbs are fully interchangeable in every dataset.
    pub max_combined_cooccurrence: f64,
    pub n_datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub vocab_hash: String,
    pub verbs: Vec<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub n_videos: usize,
    pub folds: Vec<FoldResult>,
    pub fold_mean: FoldMean,
    pub pooled: PooledResult,
    pub test_fold: BTreeMap<String, usize>,
    /// Proposed model, pooled over test folds.
    pub per_verb_error: Vec<VerbError>,
    pub predicted_top_pairs: Vec<NamedPair>,
    pub annotations: AnnotationSummary,
    /// Annotated-set size vs per-video score at the co-occurrence threshold.
    pub set_size_vs_score: Option<CorrelationReport>,
    /// Annotated probability vs absolute error over entries above 0.1.
    pub probability_vs_error: Option<CorrelationReport>,
}

struct FoldOutput {
    result: FoldResult,
    test_rows: Vec<usize>,
    baseline_pred: Array2<f64>,
    proposed_pred: Array2<f64>,
}

fn train_and_predict(
    corpus_features: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    train_rows: &[usize],
    test_rows: &[usize],
    config: &TrainConfig,
) -> Result<(Array2<f64>, f64)> {
    let x = corpus_features.select(Axis(0), train_rows);
    let y = targets.select(Axis(0), train_rows);
    let outcome = train(x.view(), y.view(), config)?;
    let test_x = corpus_features.select(Axis(0), test_rows);
    let pred = predict_matrix(&outcome.params, test_x.view())?;
    Ok((pred, outcome.loss_trace.last().copied().unwrap_or(f64::NAN)))
}

fn method_result(
    loss: LossKind,
    pred: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    ids: &[String],
    alphas: &[f64],
    final_train_loss: f64,
) -> Result<MethodResult> {
    Ok(MethodResult {
        loss,
        classification_accuracy: accuracy_classification(pred, labels)?,
        sweep: alpha_sweep(pred, labels, ids, alphas)?
            .iter()
            .map(SweepSummary::from)
            .collect(),
        final_train_loss,
    })
}

fn run_fold(
    corpus: &Corpus,
    distributions: ArrayView2<f64>,
    one_hots: ArrayView2<f64>,
    folds: &FoldAssignment,
    fold: usize,
    config: &ExperimentConfig,
) -> Result<FoldOutput> {
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for (i, v) in corpus.videos.iter().enumerate() {
        if folds.fold_of(&v.video_id) == Some(fold) {
            test_rows.push(i);
        } else {
            train_rows.push(i);
        }
    }
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::InvalidConfig(format!("fold {fold} has an empty split")));
    }
    let seed = config.seed.wrapping_add(fold as u64);
    let base_cfg = TrainConfig {
        loss: LossKind::LogisticOneHot,
        seed,
        learning_rate: config.baseline_learning_rate.unwrap_or(config.train.learning_rate),
        ..config.train.clone()
    };
    let prop_cfg = TrainConfig {
        loss: LossKind::Euclidean,
        seed,
        ..config.train.clone()
    };
    let features = corpus.features.view();
    let (baseline_pred, base_loss) = train_and_predict(features, one_hots, &train_rows, &test_rows, &base_cfg)
        .context(|| format!("fold {fold}: baseline training"))?;
    let (proposed_pred, prop_loss) = train_and_predict(features, distributions, &train_rows, &test_rows, &prop_cfg)
        .context(|| format!("fold {fold}: proposed training"))?;

    let labels = distributions.select(Axis(0), &test_rows);
    let ids: Vec<String> = test_rows.iter().map(|&i| corpus.videos[i].video_id.clone()).collect();
    let baseline = method_result(
        LossKind::LogisticOneHot,
        baseline_pred.view(),
        labels.view(),
        &ids,
        &config.alphas,
        base_loss,
    )
    .context(|| format!("fold {fold}: baseline evaluation"))?;
    let proposed = method_result(
        LossKind::Euclidean,
        proposed_pred.view(),
        labels.view(),
        &ids,
        &config.alphas,
        prop_loss,
    )
    .context(|| format!("fold {fold}: proposed evaluation"))?;
    Ok(FoldOutput {
        result: FoldResult {
            fold,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            baseline,
            proposed,
        },
        test_rows,
        baseline_pred,
        proposed_pred,
    })
}

fn mean_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn fold_mean(folds: &[FoldResult], n_alphas: usize) -> FoldMean {
    let n = folds.len() as f64;
    let sweep_mean = |pick: fn(&FoldResult) -> &MethodResult| {
        (0..n_alphas)
            .map(|a| mean_option(folds.iter().map(|f| pick(f).sweep[a].accuracy)))
            .collect()
    };
    FoldMean {
        baseline_classification_accuracy: folds.iter().map(|f| f.baseline.classification_accuracy).sum::<f64>() / n,
        proposed_classification_accuracy: folds.iter().map(|f| f.proposed.classification_accuracy).sum::<f64>() / n,
        baseline_accuracy: sweep_mean(|f| &f.baseline),
        proposed_accuracy: sweep_mean(|f| &f.proposed),
    }
}

fn annotation_summary(corpus: &Corpus, top_k: usize) -> Result<AnnotationSummary> {
    let matrices: Vec<CooccurrenceMatrix> = cooccurrence_by_dataset(&corpus.records, corpus.vocab.len())?
        .into_values()
        .collect();
    let all_pairs = top_symmetric_pairs(&matrices, 1)?;
    let top = top_symmetric_pairs(&matrices, top_k)?;
    let counts = verb_counts(&corpus.records, corpus.vocab.len())?;
    Ok(AnnotationSummary {
        n_records: corpus.records.len(),
        n_videos: corpus.videos.len(),
        verb_counts: corpus.vocab.verbs().iter().cloned().zip(counts).collect(),
        classes: class_statistics(&corpus.records)?,
        top_pairs: top.iter().map(|p| NamedPair::from_score(p, &corpus.vocab)).collect(),
        max_combined_cooccurrence: all_pairs.first().map_or(0.0, |p| p.combined),
        n_datasets: matrices.len(),
    })
}

/// Predicted co-occurrences: one matrix per dataset tag from the binarized
/// pooled predictions.
fn predicted_pairs(
    corpus: &Corpus,
    order: &[usize],
    predictions: ArrayView2<f64>,
    alpha: f64,
    top_k: usize,
) -> Result<Vec<NamedPair>> {
    let mut by_tag: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, &video) in order.iter().enumerate() {
        by_tag
            .entry(corpus.videos[video].dataset_tag.as_str())
            .or_default()
            .push(row);
    }
    let matrices = by_tag
        .into_iter()
        .map(|(tag, rows)| CooccurrenceMatrix::from_predictions(predictions.select(Axis(0), &rows).view(), alpha, tag))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_symmetric_pairs(&matrices, top_k)?
        .iter()
        .map(|p| NamedPair::from_score(p, &corpus.vocab))
        .collect())
}

fn optional_r2(report: Result<CorrelationReport>) -> Result<Option<CorrelationReport>> {
    match report {
        Ok(r) => Ok(Some(r)),
        Err(Error::ZeroVariance(_)) | Err(Error::Empty(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Stratified cross-validation of the probability-trained model against
/// the majority-vote baseline.
///
/// Both models share optimiser settings and per-fold seeds; they differ
/// only in their targets and loss. Each video is predicted exactly once,
/// by the models of the fold that holds it out.
pub fn run_experiment(corpus: &Corpus, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.train.validate()?;
    if let Some(lr) = config.baseline_learning_rate {
        TrainConfig {
            learning_rate: lr,
            ..config.train.clone()
        }
        .validate()?;
    }
    if config.top_k_pairs == 0 {
        return Err(Error::InvalidConfig("top-k pairs must be positive".into()));
    }
    let videos: Vec<(String, String)> = corpus
        .videos
        .iter()
        .map(|v| (v.video_id.clone(), v.class_label.clone()))
        .collect();
    let folds = make_folds(&videos, config.n_folds, config.seed)?;
    let distributions = corpus.distributions();
    let one_hots = corpus.majority_one_hots()?;

    let outputs: Vec<FoldOutput> = if config.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.n_folds)
                .map(|fold| {
                    let (d, o, f) = (distributions.view(), one_hots.view(), &folds);
                    scope.spawn(move || run_fold(corpus, d, o, f, fold, config))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..config.n_folds)
            .map(|fold| run_fold(corpus, distributions.view(), one_hots.view(), &folds, fold, config))
            .collect::<Result<Vec<_>>>()?
    };

    // Pool test predictions in fold order.
    let order: Vec<usize> = outputs.iter().flat_map(|o| o.test_rows.iter().copied()).collect();
    let n_verbs = corpus.vocab.len();
    let mut baseline_pred = Array2::zeros((0, n_verbs));
    let mut proposed_pred = Array2::zeros((0, n_verbs));
    for o in &outputs {
        baseline_pred
            .append(Axis(0), o.baseline_pred.view())
            .expect("same width");
        proposed_pred
            .append(Axis(0), o.proposed_pred.view())
            .expect("same width");
    }
    let labels = distributions.select(Axis(0), &order);
    let ids: Vec<String> = order.iter().map(|&i| corpus.videos[i].video_id.clone()).collect();

    let pooled = PooledResult {
        baseline_classification_accuracy: accuracy_classification(baseline_pred.view(), labels.view())?,
        proposed_classification_accuracy: accuracy_classification(proposed_pred.view(), labels.view())?,
        baseline_sweep: alpha_sweep(baseline_pred.view(), labels.view(), &ids, &config.alphas)?,
        proposed_sweep: alpha_sweep(proposed_pred.view(), labels.view(), &ids, &config.alphas)?,
    };

    let per_verb_error = per_verb_error(proposed_pred.view(), labels.view())?
        .into_iter()
        .map(|e| VerbError {
            verb: corpus.vocab.verbs()[e.verb].clone(),
            summary: e.summary,
        })
        .collect();

    let predicted_top_pairs = predicted_pairs(
        corpus,
        &order,
        proposed_pred.view(),
        config.cooccurrence_alpha,
        config.top_k_pairs,
    )
    .context(|| "predicted co-occurrences".to_string())?;

    let set_size_vs_score = match crate::metrics::accuracy_probabilistic(
        proposed_pred.view(),
        labels.view(),
        &ids,
        config.cooccurrence_alpha,
    ) {
        Ok(eval) => optional_r2(set_size_correlation(&eval, &ids, labels.view()))?,
        Err(Error::AlphaTooHigh { .. }) => None,
        Err(e) => return Err(e),
    };
    let probability_vs_error = {
        let (mut p, mut err) = (Vec::new(), Vec::new());
        for (&y, &yh) in labels.iter().zip(proposed_pred.iter()) {
            if y > 0.1 {
                p.push(y);
                err.push((y - yh).abs());
            }
        }
        optional_r2(r_squared("annotated probability", &p, "absolute error", &err))?
    };

    let fold_results: Vec<FoldResult> = outputs.into_iter().map(|o| o.result).collect();
    Ok(ExperimentReport {
        format_version: REPORT_VERSION,
        vocab_hash: corpus.vocab.hash(),
        verbs: corpus.vocab.verbs().to_vec(),
        seed: config.seed,
        config: config.clone(),
        n_videos: corpus.videos.len(),
        fold_mean: fold_mean(&fold_results, config.alphas.len()),
        folds: fold_results,
        pooled,
        test_fold: folds.folds,
        per_verb_error,
        predicted_top_pairs,
        annotations: annotation_summary(corpus, config.top_k_pairs).context(|| "annotation statistics".into())?,
        set_size_vs_score,
        probability_vs_error,
    })
}

fn set_size_correlation(eval: &EvalResult, ids: &[String], labels: ArrayView2<f64>) -> Result<CorrelationReport> {
    let (mut sizes, mut scores) = (Vec::new(), Vec::new());
    for (id, y) in ids.iter().zip(labels.rows()) {
        if let Some(&s) = eval.per_video_scores.get(id) {
            sizes.push(annotated_set(y, eval.alpha).len() as f64);
            scores.push(s);
        }
    }
    r_squared("annotated set size", &sizes, "set accuracy", &scores)
}
