//! Short training run of the full model with checkpoint and log on disk.
//!
//! cargo run --release --example train -- [epochs] [out-dir]

use chunkmix::dataset::{generate, FactorSpec};
use chunkmix::eval::evaluate_retrieval;
use chunkmix::trainer::{train, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(3), |a| a.parse())?;
    let out = args.next().unwrap_or_else(|| "run".into());
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let options = TrainOptions {
        out_dir: Some(out.clone().into()),
        progress: true,
        ..TrainOptions::default()
    };
    let outcome = train(&config, data.train.images(), &options)?;
    let table = evaluate_retrieval(&outcome.params, &data)?;
    print!("{}", table.to_tsv());
    println!("average best-chunk mAP {:.4}; checkpoint and log in {out}", table.average());
    Ok(())
}
