//! Run the toy privacy experiment for one seed and print its report.
//!
//! Usage: `cargo run --release -p evanon --example toy_experiment [seed]`

use std::time::Instant;

use evanon::harness::report::format_report;
use evanon::harness::{run_experiment, ExperimentConfig};
use evanon::simulator::{generate_toy_corpus, CorpusConfig};

fn main() -> evanon::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let corpus = generate_toy_corpus(&CorpusConfig::default())?;
    let start = Instant::now();
    let outcome = run_experiment(&corpus, &ExperimentConfig::toy(seed))?;
    print!("{}", format_report(&outcome.to_report()?));
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
