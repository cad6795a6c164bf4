use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{ExperimentReport, NamedPair, REPORT_VERSION};
use crate::annotations::csv_error;
use crate::error::{Error, Result};

/// Marker written in tables for a threshold at which no video survives.
pub const EMPTY_CELL: &str = "-";

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), |x| format!("{:.4}", x * scale))
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::InvalidRecord(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if report.format_version != REPORT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported report version {}", report.format_version),
            ));
        }
        Ok(report)
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(header).map_err(csv_error)?;
    for row in rows {
        out.write_record(row).map_err(csv_error)?;
    }
    out.into_inner().map_err(|e| Error::InvalidRecord(e.to_string()))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn pairs_table(pairs: &[NamedPair]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = strings(&["rank", "verb_i", "verb_j"]);
    if let Some(first) = pairs.first() {
        header.extend(first.per_dataset.iter().map(|(t, _)| format!("s_{t}")));
    }
    header.push("combined".into());
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(rank, p)| {
            let mut row = vec![(rank + 1).to_string(), p.verb_i.clone(), p.verb_j.clone()];
            row.extend(p.per_dataset.iter().map(|(_, s)| format!("{s:.6}")));
            row.push(format!("{:.6}", p.combined));
            row
        })
        .collect();
    (header, rows)
}

type CellFn<'a> = Box<dyn Fn(usize) -> String + 'a>;

/// Human-readable summary: the headline comparison and the threshold sweep.
pub fn render_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let p = &report.pooled;
    let alpha_main = report.config.cooccurrence_alpha;
    let main_row = |sweep: &[crate::metrics::SweepRow]| {
        sweep
            .iter()
            .find(|r| r.alpha == alpha_main)
            .and_then(|r| r.result.as_ref().map(|e| e.accuracy))
    };
    let _ = writeln!(
        s,
        "videos: {}  folds: {}  seed: {}",
        report.n_videos, report.config.n_folds, report.seed
    );
    let _ = writeln!(
        s,
        "vocabulary: {} verbs, hash {}",
        report.verbs.len(),
        report.vocab_hash
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Headline (pooled over test folds, %)");
    let _ = writeln!(
        s,
        "  classification, argmax accuracy      {:>8}",
        cell(Some(p.baseline_classification_accuracy), 100.0)
    );
    let _ = writeln!(
        s,
        "  proposed, set accuracy at alpha={alpha_main}  {:>8}",
        cell(main_row(&p.proposed_sweep), 100.0)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Threshold sweep (pooled, %)");
    let mut line = format!("  {:<26}", "alpha");
    for r in &p.proposed_sweep {
        let _ = write!(line, "{:>9}", format!("{:.2}", r.alpha));
    }
    let _ = writeln!(s, "{line}");
    let rows: [(&str, CellFn); 4] = [
        (
            "videos",
            Box::new(|a| {
                p.proposed_sweep[a]
                    .result
                    .as_ref()
                    .map_or_else(|| "0".to_string(), |e| e.n_videos_evaluated.to_string())
            }),
        ),
        (
            "avg verbs per video",
            Box::new(|a| cell(p.proposed_sweep[a].result.as_ref().map(|e| e.avg_verbs_per_video), 1.0)),
        ),
        (
            "scores from classification",
            Box::new(|a| cell(p.baseline_sweep[a].result.as_ref().map(|e| e.accuracy), 100.0)),
        ),
        (
            "proposed",
            Box::new(|a| cell(p.proposed_sweep[a].result.as_ref().map(|e| e.accuracy), 100.0)),
        ),
    ];
    for (name, f) in rows.iter() {
        let mut line = format!("  {name:<26}");
        for a in 0..p.proposed_sweep.len() {
            let _ = write!(line, "{:>9}", f(a));
        }
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "annotation co-occurrence: max combined S = {:.4} over {} dataset(s)",
        report.annotations.max_combined_cooccurrence, report.annotations.n_datasets
    );
    let below = report.per_verb_error.iter().filter(|e| e.summary.median < 0.1).count();
    let _ = writeln!(
        s,
        "per-verb absolute error: median below 0.1 for {below} of {} verbs",
        report.per_verb_error.len()
    );
    if let Some(r) = &report.set_size_vs_score {
        let _ = writeln!(s, "R^2({}, {}) = {:.4} (n={})", r.x_name, r.y_name, r.r_squared, r.n);
    }
    if let Some(r) = &report.probability_vs_error {
        let _ = writeln!(s, "R^2({}, {}) = {:.4} (n={})", r.x_name, r.y_name, r.r_squared, r.n);
    }
    s
}

/// Writes the structured report and every table derived from it into
/// `out_dir`, returning the paths written. Output bytes depend only on the
/// report.
pub fn emit_reports(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    written.push(write_file(dir, "report.json", report.to_json()?.as_bytes())?);
    written.push(write_file(dir, "summary.txt", render_summary(report).as_bytes())?);

    let p = &report.pooled;
    let main = report.config.cooccurrence_alpha;
    let at_main = |sweep: &[crate::metrics::SweepRow]| {
        sweep
            .iter()
            .find(|r| r.alpha == main)
            .and_then(|r| r.result.as_ref().map(|e| e.accuracy))
    };
    let fm = &report.fold_mean;
    let main_idx = report.config.alphas.iter().position(|&a| a == main);
    let headline = csv_bytes(
        &strings(&["method", "metric", "pooled", "fold_mean"]),
        &[
            vec![
                "classification".into(),
                "argmax_accuracy".into(),
                cell(Some(p.baseline_classification_accuracy), 1.0),
                cell(Some(fm.baseline_classification_accuracy), 1.0),
            ],
            vec![
                "proposed".into(),
                format!("set_accuracy_alpha_{main}"),
                cell(at_main(&p.proposed_sweep), 1.0),
                cell(main_idx.and_then(|i| fm.proposed_accuracy[i]), 1.0),
            ],
            vec![
                "proposed".into(),
                "argmax_accuracy".into(),
                cell(Some(p.proposed_classification_accuracy), 1.0),
                cell(Some(fm.proposed_classification_accuracy), 1.0),
            ],
        ],
    )?;
    written.push(write_file(dir, "headline.csv", &headline)?);

    let sweep_rows: Vec<Vec<String>> = p
        .proposed_sweep
        .iter()
        .zip(&p.baseline_sweep)
        .enumerate()
        .map(|(i, (prop, base))| {
            let r = prop.result.as_ref();
            vec![
                format!("{}", prop.alpha),
                r.map_or(0, |e| e.n_videos_evaluated).to_string(),
                cell(r.map(|e| e.avg_verbs_per_video), 1.0),
                cell(r.map(|e| e.std_verbs_per_video), 1.0),
                cell(base.result.as_ref().map(|e| e.accuracy), 1.0),
                cell(r.map(|e| e.accuracy), 1.0),
                cell(fm.baseline_accuracy[i], 1.0),
                cell(fm.proposed_accuracy[i], 1.0),
            ]
        })
        .collect();
    let sweep = csv_bytes(
        &strings(&[
            "alpha",
            "n_videos",
            "avg_verbs_per_video",
            "std_verbs_per_video",
            "baseline_score",
            "proposed_score",
            "baseline_fold_mean",
            "proposed_fold_mean",
        ]),
        &sweep_rows,
    )?;
    written.push(write_file(dir, "alpha_sweep.csv", &sweep)?);

    let fold_rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .flat_map(|f| {
            f.proposed.sweep.iter().zip(&f.baseline.sweep).map(move |(prop, base)| {
                vec![
                    f.fold.to_string(),
                    format!("{}", prop.alpha),
                    prop.n_videos.to_string(),
                    cell(base.accuracy, 1.0),
                    cell(prop.accuracy, 1.0),
                    cell(Some(f.baseline.classification_accuracy), 1.0),
                    cell(Some(f.proposed.classification_accuracy), 1.0),
                ]
            })
        })
        .collect();
    let folds = csv_bytes(
        &strings(&[
            "fold",
            "alpha",
            "n_videos",
            "baseline_score",
            "proposed_score",
            "baseline_argmax_accuracy",
            "proposed_argmax_accuracy",
        ]),
        &fold_rows,
    )?;
    written.push(write_file(dir, "folds.csv", &folds)?);

    let mut video_rows = Vec::new();
    for (base, prop) in p.baseline_sweep.iter().zip(&p.proposed_sweep) {
        let (Some(b), Some(r)) = (&base.result, &prop.result) else {
            continue;
        };
        for (id, score) in &r.per_video_scores {
            video_rows.push(vec![
                id.clone(),
                report.test_fold.get(id).map_or_else(String::new, |f| f.to_string()),
                format!("{}", prop.alpha),
                cell(b.per_video_scores.get(id).copied(), 1.0),
                cell(Some(*score), 1.0),
            ]);
        }
    }
    let per_video = csv_bytes(
        &strings(&["video_id", "fold", "alpha", "baseline_score", "proposed_score"]),
        &video_rows,
    )?;
    written.push(write_file(dir, "per_video_scores.csv", &per_video)?);

    let verb_rows: Vec<Vec<String>> = report
        .per_verb_error
        .iter()
        .map(|e| {
            let s = &e.summary;
            let mut row = vec![e.verb.clone()];
            row.extend([s.mean, s.min, s.q1, s.median, s.q3, s.max].map(|v| format!("{v:.6}")));
            row
        })
        .collect();
    let verbs = csv_bytes(
        &strings(&["verb", "mean", "min", "q1", "median", "q3", "max"]),
        &verb_rows,
    )?;
    written.push(write_file(dir, "per_verb_error.csv", &verbs)?);

    let (header, rows) = pairs_table(&report.predicted_top_pairs);
    written.push(write_file(
        dir,
        "predicted_cooccurrence.csv",
        &csv_bytes(&header, &rows)?,
    )?);
    let (header, rows) = pairs_table(&report.annotations.top_pairs);
    written.push(write_file(
        dir,
        "annotation_cooccurrence.csv",
        &csv_bytes(&header, &rows)?,
    )?);

    let class_rows: Vec<Vec<String>> = report
        .annotations
        .classes
        .iter()
        .map(|c| {
            let v = &c.verbs_per_annotator;
            let mut row = vec![c.class_label.clone(), c.records.to_string(), c.unique_verbs.to_string()];
            row.extend([v.min, v.q1, v.median, v.q3, v.max, v.mean].map(|x| format!("{x:.6}")));
            row
        })
        .collect();
    let classes = csv_bytes(
        &strings(&[
            "class_label",
            "records",
            "unique_verbs",
            "min",
            "q1",
            "median",
            "q3",
            "max",
            "mean",
        ]),
        &class_rows,
    )?;
    written.push(write_file(dir, "class_statistics.csv", &classes)?);

    let count_rows: Vec<Vec<String>> = report
        .annotations
        .verb_counts
        .iter()
        .map(|(v, c)| vec![v.clone(), c.to_string()])
        .collect();
    written.push(write_file(
        dir,
        "verb_counts.csv",
        &csv_bytes(&strings(&["verb", "count"]), &count_rows)?,
    )?);

    Ok(written)
}
