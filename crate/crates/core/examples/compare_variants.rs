//! Trains baseline and `mo` on a reduced synthetic task and runs the paired bootstrap between them.
//! Pass seeds as arguments, e.g. `cargo run --release --example compare_variants -- 1 2 3`.

use morphnmt::experiment::{compare_variants, ExperimentConfig};
use morphnmt::model::Variant;

fn main() -> morphnmt::Result<()> {
    let mut seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if seeds.is_empty() {
        seeds.push(1);
    }
    let mut cfg = ExperimentConfig {
        train_size: 1500,
        dev_size: 100,
        test_size: 200,
        // one λ instead of the dev search keeps this to a few minutes
        lambda_grid: vec![0.7],
        variants: vec![Variant::Baseline, Variant::Mo],
        ..Default::default()
    };
    cfg.train.epochs = 12;
    let report = compare_variants(&cfg, &seeds, None, &mut |msg| eprintln!("{msg}"))?;
    for s in &report.summary {
        println!(
            "{:>8}: median test BLEU {:.4}, median delta {:+.4}, significant in {}/{} seeds",
            s.variant.to_string(),
            s.median_test_bleu,
            s.median_delta.unwrap_or(0.0),
            s.significant_seeds,
            s.seeds
        );
    }
    Ok(())
}
