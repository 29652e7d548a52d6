//! Average best-chunk mAP of the full model as the chunk size grows.
//!
//! cargo run --release --example chunk_sizes -- [epochs]

use chunkmix::dataset::{generate, FactorSpec};
use chunkmix::eval::chunk_size_ablation;
use chunkmix::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(2), |a| a.parse())?;
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let curve = chunk_size_ablation(&data, &[2, 4, 8, 16, 32], &base, |d, m| eprintln!("d={d}: {m:.4}"))?;
    print!("{}", curve.to_tsv());
    println!("max minus value at largest size: {:.4}", curve.plateau_gap());
    Ok(())
}
