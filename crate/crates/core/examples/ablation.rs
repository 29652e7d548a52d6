//! Ablation table over all eight method rows.
//!
//! cargo run --release --example ablation -- [epochs] [seeds...]

use chunkmix::dataset::{generate, FactorSpec};
use chunkmix::trainer::{ablation_suite, AblationRow, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(2), |a| a.parse())?;
    let mut seeds: Vec<u64> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        seeds.push(1);
    }
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let report = ablation_suite(&data, &AblationRow::ALL, &seeds, &base, |r| {
        eprintln!("{} seed {}: {:.4}", r.row.name(), r.seed, r.table.average())
    })?;
    print!("{}", report.to_tsv());
    Ok(())
}
