//! Per-chunk retrieval mAP and linear probes for a checkpoint, or for
//! untrained features when no path is given.

use chunkmix::dataset::{generate, FactorSpec};
use chunkmix::eval::{evaluate_probes, evaluate_retrieval, probes_tsv};
use chunkmix::models::{load_checkpoint, ChunkLayout, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?.params,
        None => ModelParams::init(ChunkLayout::default(), 0),
    };
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let table = evaluate_retrieval(&params, &data)?;
    print!("{}", table.to_tsv());
    println!("average {:.4}", table.average());
    print!("{}", probes_tsv(&evaluate_probes(&params, &data)?));
    Ok(())
}
