//! Decoder sensitivity and classifier accuracy per chunk.

use chunkmix::dataset::{generate, FactorSpec};
use chunkmix::eval::{shortcut_report, DEFAULT_PAIRS};
use chunkmix::models::{load_checkpoint, ChunkLayout, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?.params,
        None => ModelParams::init(ChunkLayout::default(), 0),
    };
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let report = shortcut_report(&params, data.test.images(), DEFAULT_PAIRS, 0)?;
    print!("{}", report.to_tsv());
    println!("dead chunks: {}", report.dead_count());
    Ok(())
}
