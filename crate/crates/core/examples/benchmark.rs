//! Runs the standard synthetic benchmark and prints the summary tables.
//!
//! cargo run --release --example benchmark -- [seed]

use verbprob::pipeline::{render_summary, run_experiment, Corpus, ExperimentConfig};
use verbprob::synthetic::{default_vocabulary, generate, SynthConfig};

fn main() -> verbprob::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let vocab = default_vocabulary();
    let synth = generate(&SynthConfig::benchmark(seed), &vocab)?;
    let corpus = Corpus::new(vocab, synth.records, &synth.features)?;
    let start = std::time::Instant::now();
    let report = run_experiment(&corpus, &ExperimentConfig::benchmark(seed))?;
    print!("{}", render_summary(&report));
    println!("elapsed: {:.2?}", start.elapsed());
    Ok(())
}
