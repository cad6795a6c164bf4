//! Acceptance checks. Runs as a plain binary (no libtest harness) and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fail.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use verbprob::annotations::{aggregate, AnnotationRecord, VerbVocabulary};
use verbprob::metrics::{
    accuracy_classification, accuracy_probabilistic, alpha_sweep, default_alphas, per_verb_error, video_set_score,
};
use verbprob::model::{Architecture, LossKind, ModelParameters};
use verbprob::pipeline::{make_folds, run_experiment, Corpus, ExperimentConfig, ExperimentReport};
use verbprob::statistics::CooccurrenceMatrix;
use verbprob::synthetic::{default_vocabulary, generate, truth_gap, SynthConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)*));
        }
    };
}

fn err(e: verbprob::Error) -> String {
    e.to_string()
}

// 1 -------------------------------------------------------------------------

fn worked_example() -> Outcome {
    let vocab = VerbVocabulary::new(["put", "place", "move", "open", "take"]).map_err(err)?;
    let idx = |v: &str| vocab.index_of(v).unwrap();
    let mut y = vec![0.0; 5];
    for (v, p) in [
        ("put", 0.9),
        ("place", 0.8),
        ("move", 0.75),
        ("open", 0.2),
        ("take", 0.4),
    ] {
        y[idx(v)] = p;
    }
    let mut y_hat = vec![0.0; 5];
    for (v, p) in [
        ("put", 0.9),
        ("place", 0.1),
        ("move", 0.7),
        ("open", 0.8),
        ("take", 0.3),
    ] {
        y_hat[idx(v)] = p;
    }
    let (y, y_hat) = (ndarray::Array1::from(y), ndarray::Array1::from(y_hat));
    let (hits, k) = video_set_score(y.view(), y_hat.view(), 0.7)
        .map_err(err)?
        .ok_or("video dropped")?;
    ensure!((hits, k) == (2, 3), "expected 2/3, got {hits}/{k}");
    let labels = y.insert_axis(ndarray::Axis(0));
    let preds = y_hat.insert_axis(ndarray::Axis(0));
    let eval = accuracy_probabilistic(preds.view(), labels.view(), &["v".into()], 0.7).map_err(err)?;
    ensure!(eval.accuracy == 2.0 / 3.0, "A_P = {} != 2/3", eval.accuracy);
    Ok(format!("{hits}/{k} overlap, A_P(0.7) = {}", eval.accuracy))
}

// 2 -------------------------------------------------------------------------

fn max_relative_error(
    params: &ModelParameters,
    x: &Array2<f64>,
    y: &Array2<f64>,
    loss: LossKind,
    wd: f64,
) -> Result<f64, String> {
    let (_, grad) = params.gradient(x.view(), y.view(), loss, wd).map_err(err)?;
    let analytic = grad.flatten();
    let theta = params.flatten();
    let h = 1e-5;
    let mut probe = params.clone();
    let mut numeric = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        probe.set_flat(&t).map_err(err)?;
        let up = probe.objective(x.view(), y.view(), loss, wd).map_err(err)?;
        t[k] = theta[k] - h;
        probe.set_flat(&t).map_err(err)?;
        let down = probe.objective(x.view(), y.view(), loss, wd).map_err(err)?;
        numeric[k] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    Ok(diff / na.max(nn).max(1e-12))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    for case in 0..24 {
        let d = rng.random_range(1..=10);
        let c = rng.random_range(2..=10);
        let batch = rng.random_range(1..=6);
        let arch = if case % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Hidden {
                units: rng.random_range(1..=5),
            }
        };
        let wd = if case % 3 == 0 {
            0.0
        } else {
            rng.random_range(0.0..0.01)
        };
        let x = Array2::from_shape_fn((batch, d), |_| rng.random_range(-2.0..2.0));
        for loss in [LossKind::Euclidean, LossKind::LogisticOneHot] {
            let params = ModelParameters::init(arch, d, c, loss.output_activation(), &mut rng).map_err(err)?;
            let y = match loss {
                LossKind::Euclidean => Array2::from_shape_fn((batch, c), |_| rng.random::<f64>()),
                LossKind::LogisticOneHot => {
                    let mut y = Array2::zeros((batch, c));
                    for mut row in y.rows_mut() {
                        row[rng.random_range(0..c)] = 1.0;
                    }
                    y
                }
            };
            let rel = max_relative_error(&params, &x, &y, loss, wd)?;
            ensure!(
                rel < 1e-4,
                "case {case} {loss:?} {arch:?} D={d} C={c}: relative error {rel:.3e}"
            );
            worst = worst.max(rel);
            configs += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:.2?}");
    Ok(format!(
        "{configs} configurations, worst relative error {worst:.2e}, {elapsed:.2?}"
    ))
}

// 3, 4 ----------------------------------------------------------------------

fn benchmark_report() -> Result<(ExperimentReport, Duration), String> {
    let vocab = default_vocabulary();
    let synth = generate(&SynthConfig::benchmark(0), &vocab).map_err(err)?;
    let corpus = Corpus::new(vocab, synth.records, &synth.features).map_err(err)?;
    let config = ExperimentConfig::benchmark(0);
    assert!(!config.parallel);
    let start = Instant::now();
    let report = run_experiment(&corpus, &config).map_err(err)?;
    Ok((report, start.elapsed()))
}

fn accuracy_at(sweep: &[verbprob::metrics::SweepRow], alpha: f64) -> Option<(f64, usize)> {
    sweep
        .iter()
        .find(|r| r.alpha == alpha)
        .and_then(|r| r.result.as_ref())
        .map(|e| (e.accuracy, e.n_videos_evaluated))
}

fn benchmark_gap(report: &ExperimentReport, elapsed: Duration) -> Outcome {
    let p = &report.pooled;
    let base_cls = p.baseline_classification_accuracy;
    ensure!(
        (0.5..=0.8).contains(&base_cls),
        "baseline argmax accuracy {base_cls:.4} outside [0.5, 0.8]"
    );
    let (base, _) = accuracy_at(&p.baseline_sweep, 0.5).ok_or("no videos at 0.5")?;
    let (prop, _) = accuracy_at(&p.proposed_sweep, 0.5).ok_or("no videos at 0.5")?;
    ensure!(
        prop >= base + 0.05,
        "proposed A_P(0.5) {:.2} < baseline {:.2} + 5",
        100.0 * prop,
        100.0 * base
    );
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:.2?}");
    Ok(format!(
        "baseline argmax {:.2}%, A_P(0.5) proposed {:.2} vs baseline {:.2}, {elapsed:.2?}",
        100.0 * base_cls,
        100.0 * prop,
        100.0 * base
    ))
}

fn high_alpha_crossover(report: &ExperimentReport) -> Outcome {
    let n = report.n_videos as f64;
    let p = &report.pooled;
    let alpha = p
        .proposed_sweep
        .iter()
        .filter_map(|r| r.result.as_ref().map(|e| (r.alpha, e.n_videos_evaluated)))
        .filter(|&(_, survivors)| survivors as f64 <= 0.25 * n)
        .map(|(a, _)| a)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
        .ok_or("no threshold leaves between 1 video and 25% of videos")?;
    let (base, survivors) = accuracy_at(&p.baseline_sweep, alpha).ok_or("baseline row empty")?;
    let (prop, _) = accuracy_at(&p.proposed_sweep, alpha).ok_or("proposed row empty")?;
    ensure!(
        base >= prop - 0.03,
        "alpha {alpha}: baseline {:.2} < proposed {:.2} - 3",
        100.0 * base,
        100.0 * prop
    );
    Ok(format!(
        "alpha {alpha} ({survivors}/{} videos): baseline {:.2} vs proposed {:.2}",
        report.n_videos,
        100.0 * base,
        100.0 * prop
    ))
}

// 5 -------------------------------------------------------------------------

fn oracle() -> Outcome {
    let vocab = default_vocabulary();
    let mut checked_rows = 0;
    for seed in 0..4 {
        let synth = generate(
            &SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            &vocab,
        )
        .map_err(err)?;
        let videos = aggregate(&synth.records, &vocab).map_err(err)?;
        let labels = verbprob::pipeline::stack_distributions(&videos);
        let ids: Vec<String> = videos.iter().map(|v| v.video_id.clone()).collect();
        let cls = accuracy_classification(labels.view(), labels.view()).map_err(err)?;
        ensure!(cls == 1.0, "seed {seed}: argmax accuracy {cls}");
        for row in alpha_sweep(labels.view(), labels.view(), &ids, &default_alphas()).map_err(err)? {
            if let Some(e) = row.result {
                ensure!(e.accuracy == 1.0, "seed {seed}: A_P({}) = {}", row.alpha, e.accuracy);
                checked_rows += 1;
            }
        }
        for e in per_verb_error(labels.view(), labels.view()).map_err(err)? {
            ensure!(
                e.mean() == 0.0 && e.summary.max == 0.0,
                "seed {seed}: verb {} error {}",
                e.verb,
                e.mean()
            );
        }
    }
    Ok(format!(
        "4 corpora, {checked_rows} non-empty threshold rows all exactly 1"
    ))
}

// 6 -------------------------------------------------------------------------

fn random_records(rng: &mut impl Rng, n_records: usize, n_verbs: usize, n_videos: usize) -> Vec<AnnotationRecord> {
    (0..n_records)
        .map(|r| {
            let k = rng.random_range(1..=n_verbs.min(6));
            let verbs: Vec<usize> = (0..k).map(|_| rng.random_range(0..n_verbs)).collect();
            AnnotationRecord::new(format!("v{}", r % n_videos), format!("w{r}"), verbs)
        })
        .collect()
}

fn cooccurrence_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for corpus in 0..50 {
        let n_verbs = rng.random_range(2..=15);
        let n_records = rng.random_range(1..=100);
        let records = random_records(&mut rng, n_records, n_verbs, 10);
        let m = CooccurrenceMatrix::from_records(&records, n_verbs, "t").map_err(err)?;
        let mut brute = Array2::<u64>::zeros((n_verbs, n_verbs));
        for r in &records {
            for i in 0..n_verbs {
                for j in 0..n_verbs {
                    if i != j && r.verbs_selected.contains(&i) && r.verbs_selected.contains(&j) {
                        brute[(i, j)] += 1;
                    }
                }
            }
        }
        ensure!(m.counts == brute, "corpus {corpus}: counts differ from brute force");
        for i in 0..n_verbs {
            let row: f64 = m.normalized.row(i).sum();
            let any = brute.row(i).sum() > 0;
            ensure!(
                (row - if any { 1.0 } else { 0.0 }).abs() <= 1e-9,
                "corpus {corpus}: row {i} of N sums to {row}"
            );
            for j in 0..n_verbs {
                ensure!(
                    (m.symmetric[(i, j)] - m.symmetric[(j, i)]).abs() <= 1e-9,
                    "corpus {corpus}: S not symmetric at ({i}, {j})"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:.2?}");
    Ok(format!("50 corpora match brute force, {elapsed:.2?}"))
}

// 7 -------------------------------------------------------------------------

fn aggregation_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab = VerbVocabulary::new((0..12).map(|i| format!("verb{i}"))).map_err(err)?;
    let mut shuffles = 0;
    for corpus in 0..10 {
        let n_records = rng.random_range(20..=300);
        let n_videos = rng.random_range(1..=12);
        let records = random_records(&mut rng, n_records, vocab.len(), n_videos);
        let reference = aggregate(&records, &vocab).map_err(err)?;
        for va in &reference {
            let n = va.annotator_count as f64;
            for &p in va.distribution.as_slice() {
                let scaled = p * n;
                ensure!(
                    (scaled - scaled.round()).abs() <= 1e-9,
                    "corpus {corpus}: p*n = {scaled} for video {}",
                    va.video_id
                );
            }
        }
        let mut shuffled = records.clone();
        for _ in 0..100 {
            shuffled.shuffle(&mut rng);
            ensure!(
                aggregate(&shuffled, &vocab).map_err(err)? == reference,
                "corpus {corpus}: aggregation changed under shuffling"
            );
            shuffles += 1;
        }
    }
    Ok(format!("10 corpora integral, {shuffles} shuffles order-invariant"))
}

// 8 -------------------------------------------------------------------------

fn stratified_folds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let n_folds = rng.random_range(2..=7);
        let n_classes = rng.random_range(1..=8);
        let mut videos = Vec::new();
        for c in 0..n_classes {
            for v in 0..rng.random_range(1..=25) {
                videos.push((format!("c{c}-v{v}"), format!("class{c}")));
            }
        }
        if videos.len() < n_folds {
            continue;
        }
        let seed = rng.random();
        let f = make_folds(&videos, n_folds, seed).map_err(err)?;
        ensure!(
            f == make_folds(&videos, n_folds, seed).map_err(err)?,
            "case {case}: not deterministic"
        );
        ensure!(
            f.folds.len() == videos.len(),
            "case {case}: videos missing from assignment"
        );
        let tested: usize = (0..n_folds).map(|k| f.test_ids(k).len()).sum();
        ensure!(
            tested == videos.len(),
            "case {case}: test folds do not partition the videos"
        );
        let mut per_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (id, class) in &videos {
            per_class.entry(class).or_insert_with(|| vec![0; n_folds])[f.fold_of(id).unwrap()] += 1;
        }
        for (class, counts) in per_class {
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            ensure!(spread <= 1, "case {case}: class {class} fold counts {counts:?}");
        }
    }
    Ok("50 random class layouts stratified, partitioned and reproducible".into())
}

// 9 -------------------------------------------------------------------------

fn synthetic_fidelity() -> Outcome {
    let vocab = default_vocabulary();
    let config = SynthConfig {
        n_classes: 5,
        n_videos: 20,
        workers_min: 5000,
        workers_max: 5000,
        seed: 9,
        ..SynthConfig::default()
    };
    let synth = generate(&config, &vocab).map_err(err)?;
    let videos = aggregate(&synth.records, &vocab).map_err(err)?;
    let gap = truth_gap(&videos, &synth.truth).map_err(err)?;
    let frac = gap.fraction_below(0.05);
    ensure!(frac >= 0.99, "only {:.2}% of pairs within 0.05", 100.0 * frac);
    Ok(format!(
        "{:.2}% of {} (video, verb) pairs within 0.05, max gap {:.4}",
        100.0 * frac,
        gap.pair_gaps.len(),
        gap.quantile(1.0)
    ))
}

// 10 ------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_verbprob"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn crossval_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    run_cli(&[
        "synth",
        "--seed",
        "10",
        "--videos",
        "80",
        "--classes",
        "4",
        "--tags",
        "a,b",
        "--out",
        &path("data"),
    ])?;
    let mut reports = Vec::new();
    for run in ["run1", "run2"] {
        run_cli(&[
            "crossval",
            "--vocab",
            &path("data/vocab.txt"),
            "--records",
            &path("data/records.jsonl"),
            "--features",
            &path("data/features.csv"),
            "--seed",
            "10",
            "--epochs",
            "5",
            "--batch-size",
            "16",
            "--lr",
            "0.01",
            "--out",
            &path(run),
        ])?;
        reports.push(std::fs::read(path(&format!("{run}/report.json"))).map_err(|e| e.to_string())?);
    }
    ensure!(reports[0] == reports[1], "report.json differs between runs");
    Ok(format!("two runs, {}-byte reports identical", reports[0].len()))
}

fn main() {
    let mut failures = 0;
    let mut check = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{id}] {name}: {detail}");
            }
        }
    };

    check("1", "worked set-accuracy example", &mut worked_example);
    check("2", "finite-difference gradient check", &mut gradient_check);
    let bench = benchmark_report();
    check("3", "synthetic benchmark gap at alpha 0.5", &mut || {
        let (report, elapsed) = bench.as_ref().map_err(Clone::clone)?;
        benchmark_gap(report, *elapsed)
    });
    check("4", "high-alpha crossover", &mut || {
        let (report, _) = bench.as_ref().map_err(Clone::clone)?;
        high_alpha_crossover(report)
    });
    check("5", "ground-truth oracle scores perfectly", &mut oracle);
    check("6", "co-occurrence matches brute force", &mut cooccurrence_oracle);
    check("7", "aggregation exact and order invariant", &mut aggregation_exactness);
    check("8", "stratified folds", &mut stratified_folds);
    check("9", "synthetic fidelity at 5000 workers", &mut synthetic_fidelity);
    check("10", "crossval reports byte-identical", &mut crossval_determinism);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
