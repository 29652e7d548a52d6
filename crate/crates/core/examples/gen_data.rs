//! Renders the default sprite set and writes it to a directory.
//!
//! cargo run --release --example gen_data -- /tmp/chunkmix-data

use chunkmix::dataset::{generate, load, FactorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let data = generate(&FactorSpec::default(), 0, 25)?;
    data.write(dir.as_ref())?;
    print!("{}", data.manifest.to_text());
    let back = load(dir.as_ref())?;
    assert_eq!(back, data);
    println!("reloaded {} train and {} test images", back.train.len(), back.test.len());
    Ok(())
}
