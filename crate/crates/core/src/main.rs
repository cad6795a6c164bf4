//! `verbprob` command-line interface.
//!
//! Exit codes: 0 success, 2 input/format error, 3 numerical failure,
//! 4 configuration error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use serde::Serialize;

use verbprob::annotations::{load_distributions, load_records, write_distributions, write_records, VerbVocabulary};
use verbprob::metrics::{accuracy_classification, alpha_sweep, parse_alphas, per_verb_error, SweepRow};
use verbprob::model::{predict_matrix, train, Architecture, Checkpoint, LossKind, TrainConfig};
use verbprob::pipeline::{emit_reports, render_summary, run_experiment, stack_distributions, Corpus, ExperimentConfig};
use verbprob::statistics::{
    class_statistics, cooccurrence_by_dataset, top_symmetric_pairs, verb_counts, write_class_statistics,
    write_top_pairs, CooccurrenceMatrix,
};
use verbprob::synthetic::{default_vocabulary, generate, SynthConfig};
use verbprob::tables::VideoTable;
use verbprob::{Error, Result};

const CONFIG_EXIT: u8 = 4;

/// `println!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "verbprob",
    version,
    about = "Probabilistic verb labelling from crowdsourced annotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate annotation records into per-video verb probabilities.
    Aggregate {
        #[command(flatten)]
        input: RecordArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotation statistics: per-class verb counts and co-occurrence tables.
    Stats {
        #[command(flatten)]
        input: RecordArgs,
        /// Number of top co-occurring verb pairs to list.
        #[arg(long, default_value_t = 40)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with known latent verb profiles.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint.
    Train {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict verb probabilities for every row of a feature table.
    Predict {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction table against aggregated distributions.
    Evaluate {
        #[arg(long)]
        vocab: PathBuf,
        /// Prediction table written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// Distribution table written by `aggregate`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "0.1:0.9:0.1", value_parser = alpha_list)]
        alpha: AlphaList,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified cross-validation of the probability-trained model
    /// against the majority-vote baseline.
    Crossval {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Learning rate for the baseline, if different from --lr.
        #[arg(long, allow_negative_numbers = true)]
        baseline_lr: Option<f64>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "0.1:0.9:0.1", value_parser = alpha_list)]
        alpha: AlphaList,
        /// Threshold for the predicted co-occurrence tables.
        #[arg(long, default_value_t = 0.5)]
        cooccurrence_alpha: f64,
        #[arg(long, default_value_t = 40)]
        top_k: usize,
        /// Train folds on separate threads.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render tables from a saved report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Annotation records, one JSON object per line.
    #[arg(long)]
    records: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    records: PathBuf,
    /// Feature table: video_id column followed by numeric columns.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "euclidean")]
    loss: LossKind,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    /// Hidden tanh units; omit for a linear model.
    #[arg(long)]
    hidden: Option<usize>,
    /// Epochs at which the learning rate drops tenfold, comma separated.
    #[arg(long, value_delimiter = ',')]
    lr_step: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            architecture: match self.hidden {
                Some(units) => Architecture::Hidden { units },
                None => Architecture::Linear,
            },
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            lr_step_epochs: self.lr_step.clone(),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Use the standard 20-class, 600-video benchmark settings; the
    /// size flags below are then ignored.
    #[arg(long)]
    benchmark: bool,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    videos: usize,
    #[arg(long, default_value_t = 30)]
    workers_min: usize,
    #[arg(long, default_value_t = 50)]
    workers_max: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Dataset tags, comma separated; classes are spread across them.
    #[arg(long, value_delimiter = ',', default_value = "synth")]
    tags: Vec<String>,
    /// Vocabulary to use instead of the built-in 90 verbs.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Threshold list parsed from `start:stop:step` or `a,b,c`.
#[derive(Clone)]
struct AlphaList(Vec<f64>);

fn alpha_list(s: &str) -> std::result::Result<AlphaList, String> {
    parse_alphas(s).map(AlphaList).map_err(|e| e.to_string())
}

fn print_summary(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn aggregate_cmd(input: &RecordArgs, out: &Path) -> Result<()> {
    let vocab = VerbVocabulary::load(&input.vocab)?;
    let records = load_records(&input.records, &vocab)?;
    let videos = verbprob::annotations::aggregate(&records, &vocab)?;
    create_dir(out)?;
    let path = out.join("distributions.csv");
    write_distributions(create_file(&path)?, &videos, &vocab).map_err(|e| e.context(path.display().to_string()))?;
    say!(
        "{} records, {} videos -> {}",
        records.len(),
        videos.len(),
        path.display()
    );
    Ok(())
}

fn stats_cmd(input: &RecordArgs, top_k: usize, out: &Path) -> Result<()> {
    let vocab = VerbVocabulary::load(&input.vocab)?;
    let records = load_records(&input.records, &vocab)?;
    create_dir(out)?;

    let classes = class_statistics(&records)?;
    write_class_statistics(create_file(&out.join("class_statistics.csv"))?, &classes)?;

    let counts = verb_counts(&records, vocab.len())?;
    let mut w = csv::Writer::from_path(out.join("verb_counts.csv")).map_err(|e| Error::InvalidRecord(e.to_string()))?;
    w.write_record(["verb", "count"])
        .map_err(|e| Error::InvalidRecord(e.to_string()))?;
    for (verb, count) in vocab.verbs().iter().zip(&counts) {
        w.write_record([verb.as_str(), &count.to_string()])
            .map_err(|e| Error::InvalidRecord(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(out.join("verb_counts.csv"), e))?;

    let by_tag = cooccurrence_by_dataset(&records, vocab.len())?;
    for (tag, m) in &by_tag {
        m.write_csv(create_file(&out.join(format!("cooccurrence_{tag}.csv")))?, &vocab)?;
    }
    let matrices: Vec<CooccurrenceMatrix> = by_tag.into_values().collect();
    let pairs = top_symmetric_pairs(&matrices, top_k)?;
    write_top_pairs(create_file(&out.join("top_pairs.csv"))?, &pairs, &vocab)?;

    say!(
        "{} records over {} classes and {} dataset(s)",
        records.len(),
        classes.len(),
        matrices.len()
    );
    for p in pairs.iter().take(10) {
        say!(
            "  {:>16} / {:<16} {:.4}",
            vocab.verbs()[p.i],
            vocab.verbs()[p.j],
            p.combined
        );
    }
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let vocab = match &args.vocab {
        Some(path) => VerbVocabulary::load(path)?,
        None => default_vocabulary(),
    };
    let config = if args.benchmark {
        SynthConfig::benchmark(args.seed)
    } else {
        SynthConfig {
            n_classes: args.classes,
            n_videos: args.videos,
            workers_min: args.workers_min,
            workers_max: args.workers_max,
            feature_dim: args.dim,
            noise_sigma: args.sigma,
            dataset_tags: args.tags.clone(),
            seed: args.seed,
            ..SynthConfig::default()
        }
    };
    let corpus = generate(&config, &vocab)?;
    let out = &args.out;
    create_dir(out)?;
    vocab.save(out.join("vocab.txt"))?;
    let path = out.join("records.jsonl");
    write_records(create_file(&path)?, &corpus.records, &vocab).map_err(|e| Error::io(&path, e))?;
    corpus.features.save(out.join("features.csv"))?;
    corpus.truth.save(out.join("truth.json"))?;
    write_json(&out.join("synth_config.json"), &config)?;
    say!(
        "{} records over {} videos -> {}",
        corpus.records.len(),
        corpus.features.video_ids.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(input: &CorpusArgs, args: &TrainArgs, out: &Path) -> Result<()> {
    let corpus = Corpus::load(&input.vocab, &input.records, &input.features)?;
    let config = args.config();
    let targets = match config.loss {
        LossKind::Euclidean => corpus.distributions(),
        LossKind::LogisticOneHot => corpus.majority_one_hots()?,
    };
    let outcome = train(corpus.features.view(), targets.view(), &config)?;
    create_dir(out)?;
    Checkpoint::new(&outcome.params, corpus.vocab.hash(), config).save(out.join("checkpoint.json"))?;
    let path = out.join("loss_trace.csv");
    let mut trace = String::from("epoch,objective\n");
    for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", epoch + 1, loss));
    }
    fs::write(&path, trace).map_err(|e| Error::io(&path, e))?;
    if let Some(last) = outcome.loss_trace.last() {
        say!("trained on {} videos, final objective {last:.6}", corpus.videos.len());
    }
    Ok(())
}

fn predict_cmd(vocab: &Path, checkpoint: &Path, features: &Path, out: &Path) -> Result<()> {
    let vocab = VerbVocabulary::load(vocab)?;
    let checkpoint = Checkpoint::load(checkpoint)?;
    if checkpoint.vocab_hash != vocab.hash() {
        return Err(Error::InvalidVocabulary(
            "checkpoint was trained with a different vocabulary".into(),
        ));
    }
    let params = checkpoint.params()?;
    let features = VideoTable::load(features)?;
    let pred = predict_matrix(&params, features.values.view())?;
    let table = VideoTable::new(vocab.verbs().to_vec(), features.video_ids.clone(), pred)?;
    create_dir(out)?;
    table.save(out.join("predictions.csv"))?;
    say!(
        "{} predictions -> {}",
        table.video_ids.len(),
        out.join("predictions.csv").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    vocab_hash: String,
    n_videos: usize,
    classification_accuracy: f64,
    sweep: Vec<SweepRow>,
    per_verb_mean_error: Vec<(String, f64)>,
}

fn evaluate_cmd(vocab: &Path, predictions: &Path, labels: &Path, alphas: &[f64], out: &Path) -> Result<()> {
    let vocab = VerbVocabulary::load(vocab)?;
    let table = VideoTable::load(predictions)?;
    if table.columns != vocab.verbs() {
        return Err(Error::format(
            predictions,
            "prediction columns do not match the vocabulary",
        ));
    }
    let videos = load_distributions(labels, &vocab)?;
    let rows = videos
        .iter()
        .map(|v| {
            table
                .row_of(&v.video_id)
                .ok_or_else(|| Error::format(predictions, format!("no prediction for video `{}`", v.video_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = table.values.select(Axis(0), &rows);
    let labels = stack_distributions(&videos);
    let ids: Vec<String> = videos.iter().map(|v| v.video_id.clone()).collect();

    let evaluation = Evaluation {
        vocab_hash: vocab.hash(),
        n_videos: ids.len(),
        classification_accuracy: accuracy_classification(pred.view(), labels.view())?,
        sweep: alpha_sweep(pred.view(), labels.view(), &ids, alphas)?,
        per_verb_mean_error: per_verb_error(pred.view(), labels.view())?
            .into_iter()
            .map(|e| (vocab.verbs()[e.verb].clone(), e.mean()))
            .collect(),
    };
    create_dir(out)?;
    write_json(&out.join("evaluation.json"), &evaluation)?;

    say!("videos: {}", evaluation.n_videos);
    say!("argmax accuracy: {:.2}%", 100.0 * evaluation.classification_accuracy);
    say!("{:>6} {:>8} {:>10} {:>10}", "alpha", "videos", "avg verbs", "accuracy");
    for row in &evaluation.sweep {
        match &row.result {
            Some(r) => say!(
                "{:>6} {:>8} {:>10.4} {:>9.2}%",
                row.alpha,
                r.n_videos_evaluated,
                r.avg_verbs_per_video,
                100.0 * r.accuracy
            ),
            None => say!("{:>6} {:>8} {:>10} {:>10}", row.alpha, 0, "-", "-"),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate { input, out } => aggregate_cmd(&input, &out),
        Command::Stats { input, top_k, out } => stats_cmd(&input, top_k, &out),
        Command::Synth(args) => synth_cmd(&args),
        Command::Train { input, train, out } => train_cmd(&input, &train, &out),
        Command::Predict {
            vocab,
            checkpoint,
            features,
            out,
        } => predict_cmd(&vocab, &checkpoint, &features, &out),
        Command::Evaluate {
            vocab,
            predictions,
            labels,
            alpha,
            out,
        } => evaluate_cmd(&vocab, &predictions, &labels, &alpha.0, &out),
        Command::Crossval {
            input,
            train,
            baseline_lr,
            folds,
            alpha,
            cooccurrence_alpha,
            top_k,
            parallel,
            out,
        } => {
            let corpus = Corpus::load(&input.vocab, &input.records, &input.features)?;
            let config = ExperimentConfig {
                seed: train.seed,
                train: train.config(),
                baseline_learning_rate: baseline_lr,
                n_folds: folds,
                alphas: alpha.0,
                top_k_pairs: top_k,
                cooccurrence_alpha,
                parallel,
            };
            let report = run_experiment(&corpus, &config)?;
            emit_reports(&report, &out)?;
            print_summary(&render_summary(&report));
            Ok(())
        }
        Command::Report { input, out } => {
            let report = verbprob::pipeline::ExperimentReport::load(&input)?;
            emit_reports(&report, &out)?;
            print_summary(&render_summary(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_EXIT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
