//! Attribute-transfer grid for one chunk, written as a PPM image.
//!
//! cargo run --release --example transfer_grid -- [checkpoint] [chunk] [out.ppm]

use chunkmix::dataset::{gather, generate, FactorSpec};
use chunkmix::eval::{transfer_grid, write_ppm};
use chunkmix::models::{load_checkpoint, ChunkLayout, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let params = match args.next().filter(|a| a != "-") {
        Some(path) => load_checkpoint(path)?.params,
        None => ModelParams::init(ChunkLayout::default(), 0),
    };
    let chunk = args.next().map_or(Ok(0), |a| a.parse())?;
    let out = args.next().unwrap_or_else(|| "grid.ppm".into());
    let data = generate(&FactorSpec::default(), 0, 25)?;
    let images = data.test.images();
    let rows = gather(images, &(0..8).map(|i| i * 45).collect::<Vec<_>>());
    let cols = gather(images, &(0..8).map(|i| i * 45 + 7).collect::<Vec<_>>());
    let grid = transfer_grid(&params, &rows, &cols, chunk)?;
    write_ppm(out.as_ref(), &grid)?;
    println!("wrote {}x{} grid for chunk {chunk} to {out}", grid.shape()[2], grid.shape()[1]);
    Ok(())
}
