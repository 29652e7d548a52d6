//! One mix/unmix cycle, first through an identity stub (x4 == x1 exactly),
//! then through freshly initialized networks.

use chunkmix::autodiff::Graph;
use chunkmix::dataset::{gather, generate, FactorSpec};
use chunkmix::mixing::{forward_cycle, loss_mix, run_cycle, sample_mask, IdentityCodec, Mask};
use chunkmix::models::{ChunkLayout, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate(&FactorSpec::default(), 0, 2)?;
    let x1 = gather(data.train.images(), &[0, 1, 2, 3]);
    let x2 = gather(data.train.images(), &[40, 41, 42, 43]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let masks: Vec<Mask> = (0..4).map(|_| sample_mask(&mut rng, 4)).collect::<Result<_, _>>()?;
    for m in &masks {
        println!("mask {:?}", m.bits());
    }

    let mut stub = IdentityCodec::new(ChunkLayout::new(4, 192)?, &[3, 16, 16])?;
    let mut g = Graph::new();
    let (a, b) = (g.constant(x1.clone()), g.constant(x2.clone()));
    let c = forward_cycle(&mut stub, &mut g, a, b, &masks)?;
    let lm = loss_mix(&mut g, c.x4, a)?;
    println!("identity stub: L_M = {}", g.value(lm).data()[0]);

    let params = ModelParams::init(ChunkLayout::default(), 0);
    let out = run_cycle(&params, &x1, &x2, &masks)?;
    let err: f64 = out.x4.data().iter().zip(x1.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 4.0;
    println!("untrained networks: f12 {:?}, x3 {:?}, L_M = {err:.4}", out.f12.shape(), out.x3.shape());
    Ok(())
}
