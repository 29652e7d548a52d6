use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::grad_check;
use crate::autodiff::{Graph, Tensor};
use crate::models::{ChunkLayout, ChunkedFeature, ForwardMode, ModelParams};

const IMAGE: [usize; 3] = [3, 16, 16];

fn scalar(g: &Graph, v: crate::autodiff::Var) -> f64 {
    g.value(v).item().unwrap()
}

fn identity_cycle(layout: ChunkLayout, x1: Tensor, x2: Tensor, masks: &[Mask]) -> (Graph, CycleOutput) {
    let mut codec = IdentityCodec::new(layout, &IMAGE).unwrap();
    let mut g = Graph::new();
    let a = g.constant(x1);
    let b = g.constant(x2);
    let out = forward_cycle(&mut codec, &mut g, a, b, masks).unwrap();
    (g, out)
}

fn divisor_layout() -> impl Strategy<Value = ChunkLayout> {
    prop::sample::select(vec![1usize, 2, 3, 4, 6, 8, 12, 16, 32, 48, 768])
        .prop_map(|n| ChunkLayout::new(n, 768 / n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn selector_algebra_recovers_x1(layout in divisor_layout(), seed in any::<u64>(), batch in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks: Vec<Mask> = (0..batch).map(|_| sample_mask(&mut rng, layout.chunks).unwrap()).collect();
        let img = |rng: &mut ChaCha8Rng| {
            use rand::Rng;
            Tensor::from_fn([batch, 3, 16, 16], |_| rng.random::<f64>())
        };
        let x1 = img(&mut rng);
        let x2 = img(&mut rng);
        let (mut g, c) = identity_cycle(layout, x1.clone(), x2, &masks);
        prop_assert_eq!(g.value(c.x4), &x1);
        let l = loss_mix(&mut g, c.x4, c.f1).err();
        prop_assert!(l.is_some());
        let x1v = g.constant(x1);
        let l = loss_mix(&mut g, c.x4, x1v).unwrap();
        prop_assert_eq!(scalar(&g, l), 0.0);
    }

    #[test]
    fn mix_swap_sums_to_inputs(n in 1usize..6, d in 1usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = ChunkLayout::new(n, d).unwrap();
        let mut v = || ChunkedFeature::new(layout, (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let (f1, f2) = (v(), v());
        let m = sample_mask(&mut rng, n).unwrap();
        let a = mix(&f1, &f2, &m).unwrap();
        let b = mix(&f2, &f1, &m).unwrap();
        for i in 0..n * d {
            prop_assert_eq!(a.values()[i] + b.values()[i], f1.values()[i] + f2.values()[i]);
        }
        // mix with the complement swaps the operands
        prop_assert_eq!(mix(&f1, &f2, &m.complement()).unwrap(), b);
        // perfect autoencoder: f3 = f12
        prop_assert_eq!(unmix(&a, &f1, &m).unwrap(), f1.clone());
        for i in 0..n {
            let expect = if m.bits()[i] == 1 { f1.chunk(i) } else { f2.chunk(i) };
            prop_assert_eq!(a.chunk(i), expect);
        }
    }
}

#[test]
fn all_ones_mask_with_identity_nets_reproduces_x1_at_x3() {
    let layout = ChunkLayout::new(4, 192).unwrap();
    let x1 = Tensor::from_fn([2, 3, 16, 16], |i| (i % 17) as f64 / 17.0);
    let x2 = Tensor::from_fn([2, 3, 16, 16], |i| (i % 5) as f64 / 5.0);
    let (g, c) = identity_cycle(layout, x1.clone(), x2.clone(), &[Mask::ones(4), Mask::ones(4)]);
    assert_eq!(g.value(c.x3), &x1);
    let (g, c) = identity_cycle(layout, x1, x2.clone(), &[Mask::zeros(4), Mask::zeros(4)]);
    assert_eq!(g.value(c.x3), &x2);
}

#[test]
fn in_graph_mix_agrees_with_chunk_mix() {
    let layout = ChunkLayout::new(3, 2).unwrap();
    let a = Tensor::from_fn([2, 6], |i| i as f64);
    let b = Tensor::from_fn([2, 6], |i| -(i as f64) - 0.5);
    let masks = [Mask::new(vec![1, 0, 1]).unwrap(), Mask::new(vec![0, 0, 1]).unwrap()];
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let m = mix_vars(&mut g, layout, va, vb, &masks).unwrap();
    for r in 0..2 {
        let fa = ChunkedFeature::new(layout, a.data()[r * 6..r * 6 + 6].to_vec()).unwrap();
        let fb = ChunkedFeature::new(layout, b.data()[r * 6..r * 6 + 6].to_vec()).unwrap();
        let want = mix(&fa, &fb, &masks[r]).unwrap();
        assert_eq!(&g.value(m).data()[r * 6..r * 6 + 6], want.values());
    }
    assert!(mix_vars(&mut g, layout, va, vb, &masks[..1]).is_err());
}

#[test]
fn network_cycle_has_seven_batched_fields() {
    let mut p = ModelParams::init(ChunkLayout::default(), 3);
    let layout = p.layout();
    let x1 = Tensor::from_fn([2, 3, 16, 16], |i| (i % 13) as f64 / 13.0);
    let x2 = Tensor::from_fn([2, 3, 16, 16], |i| (i % 7) as f64 / 7.0);
    let masks = [Mask::new(vec![1, 0, 1, 0]).unwrap(), Mask::new(vec![0, 0, 1, 1]).unwrap()];
    let mut g = Graph::new();
    let enc_w = p.encoder.bind(&mut g, true);
    let dec_w = p.decoder.bind(&mut g, true);
    let (a, b) = (g.constant(x1.clone()), g.constant(x2.clone()));
    let mut codec = NetCodec::new(layout, &mut p.encoder, &enc_w, &mut p.decoder, &dec_w, ForwardMode::Train);
    let c = forward_cycle(&mut codec, &mut g, a, b, &masks).unwrap();
    for f in [c.f1, c.f2, c.f12, c.f3, c.f31] {
        assert_eq!(g.shape(f), &[2, 32]);
    }
    for x in [c.x3, c.x4] {
        assert_eq!(g.shape(x), &[2, 3, 16, 16]);
    }
    // chunks of f12 are exact copies
    let (f1, f2, f12) = (g.value(c.f1).data(), g.value(c.f2).data(), g.value(c.f12).data());
    for (r, m) in masks.iter().enumerate() {
        for i in 0..32 {
            let src = if m.bits()[i / 8] == 1 { f1 } else { f2 };
            assert_eq!(f12[r * 32 + i], src[r * 32 + i]);
        }
    }
    let l = loss_mix(&mut g, c.x4, a).unwrap();
    g.backward(l).unwrap();
    assert!(enc_w.iter().chain(&dec_w).all(|&w| g.grad(w).unwrap().is_finite()));

    let t = run_cycle(&p, &x1, &x2, &masks).unwrap();
    assert_eq!(t.x4.shape(), &[2, 3, 16, 16]);
    assert_eq!(t, run_cycle(&p, &x1, &x2, &masks).unwrap());
    assert!(run_cycle(&p, &x1, &x2, &masks[..1]).is_err());
}

#[test]
fn loss_mix_examples() {
    let x1 = Tensor::from_fn([2, 3, 16, 16], |i| (i % 10) as f64 / 10.0);
    let x4 = Tensor::new(x1.shape(), x1.data().iter().map(|v| v + 0.1).collect()).unwrap();
    let mut g = Graph::new();
    let (a, b) = (g.constant(x4), g.constant(x1.clone()));
    let l = loss_mix(&mut g, a, b).unwrap();
    assert!((scalar(&g, l) - 7.68).abs() < 1e-9);
    let z = loss_mix(&mut g, b, b).unwrap();
    assert_eq!(scalar(&g, z), 0.0);
    let bad = g.constant(Tensor::zeros([2, 3, 16, 15]));
    assert!(matches!(loss_mix(&mut g, bad, b), Err(MixError::Shape(_))));

    let mut g = Graph::new();
    let x4 = g.param(Tensor::from_fn([2, 4], |i| i as f64 * 0.3));
    let x1 = g.constant(Tensor::from_fn([2, 4], |i| 1.0 - i as f64 * 0.1));
    let l = loss_mix(&mut g, x4, x1).unwrap();
    g.backward(l).unwrap();
    let want: Vec<f64> = (0..8).map(|i| 2.0 * (i as f64 * 0.3 - (1.0 - i as f64 * 0.1)) / 2.0).collect();
    for (a, b) in g.grad(x4).unwrap().data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let x1t = g.value(x1).clone();
    let e = grad_check(
        |g, x| {
            let c = g.constant(x1t.clone());
            loss_mix(g, x, c).map_err(|e| match e {
                MixError::Autodiff(a) => a,
                _ => unreachable!(),
            })
        },
        &Tensor::from_fn([2, 4], |i| i as f64 * 0.3),
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-6, "{e}");
}

#[test]
fn loss_gan_examples() {
    let mut g = Graph::new();
    let half = g.constant(Tensor::full([4], 0.5));
    let l = loss_gan(&mut g, half, half).unwrap();
    assert!((scalar(&g, l.d_loss) - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((scalar(&g, l.d_loss) - 1.3863).abs() < 1e-4);

    let near_one = g.constant(Tensor::full([4], 1.0 - 1e-12));
    let l = loss_gan(&mut g, half, near_one).unwrap();
    assert!(scalar(&g, l.g_loss) < 1e-11);

    for bad in [0.0, 1.0, -0.1, f64::NAN] {
        let s = g.constant(Tensor::full([2], bad));
        let ok = g.constant(Tensor::full([2], 0.5));
        assert!(matches!(loss_gan(&mut g, s, ok), Err(MixError::OutOfRange { .. })));
        assert!(loss_gan(&mut g, ok, s).is_err());
    }
}

#[test]
fn loss_gan_logits_agree_with_probabilities() {
    let zr = Tensor::new([3], vec![-1.2, 0.3, 2.0]).unwrap();
    let zf = Tensor::new([3], vec![0.7, -0.4, 1.5]).unwrap();
    let mut g = Graph::new();
    let (a, b) = (g.constant(zr.clone()), g.constant(zf.clone()));
    let logit = loss_gan_logits(&mut g, a, b).unwrap();
    let (sa, sb) = (g.sigmoid(a), g.sigmoid(b));
    let prob = loss_gan(&mut g, sa, sb).unwrap();
    assert!((scalar(&g, logit.d_loss) - scalar(&g, prob.d_loss)).abs() < 1e-12);
    assert!((scalar(&g, logit.g_loss) - scalar(&g, prob.g_loss)).abs() < 1e-12);

    // gradient of d_loss with respect to the logits
    let zf2 = zf.clone();
    let e = grad_check(
        |g, z| {
            let f = g.constant(zf2.clone());
            let s = g.sigmoid(z);
            let sf = g.sigmoid(f);
            loss_gan(g, s, sf).map(|l| l.d_loss).map_err(|e| match e {
                MixError::Autodiff(a) => a,
                _ => unreachable!(),
            })
        },
        &zr,
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-4, "{e}");
}

#[test]
fn loss_cls_examples() {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let masks: Vec<Mask> = (0..3).map(|_| sample_mask(&mut rng, n).unwrap()).collect();
    let mut g = Graph::new();
    let y = g.constant(Tensor::full([3, n], 0.5));
    let l = loss_cls(&mut g, y, &masks).unwrap();
    assert!((scalar(&g, l.loss) - 8.0 * 2f64.ln()).abs() < 1e-12);
    assert!((scalar(&g, l.loss) - 5.5452).abs() < 1e-4);
    assert_eq!(l.clamped, 0);

    let m: Vec<f64> = masks.iter().flat_map(|m| m.bits().iter().map(|&b| b as f64)).collect();
    let y = g.constant(Tensor::new([3, n], m.clone()).unwrap());
    let l = loss_cls(&mut g, y, &masks).unwrap();
    assert!(scalar(&g, l.loss).abs() < 1e-5);
    assert_eq!(l.clamped, 3 * n);

    let y = g.constant(Tensor::new([3, n], m.iter().map(|b| 1.0 - b).collect()).unwrap());
    let l = loss_cls(&mut g, y, &masks).unwrap();
    let ceiling = -(PROB_CLAMP.ln());
    assert!((scalar(&g, l.loss) - 8.0 * ceiling).abs() < 1e-6);
    assert!((scalar(&g, l.loss) - 8.0 * 1e7f64.ln()).abs() < 1e-5);

    let bad = g.constant(Tensor::full([3, n], 1.5));
    assert!(matches!(loss_cls(&mut g, bad, &masks), Err(MixError::OutOfRange { .. })));
    let wrong = g.constant(Tensor::full([3, 4], 0.5));
    assert!(matches!(loss_cls(&mut g, wrong, &masks), Err(MixError::Shape(_))));
}

#[test]
fn loss_cls_logits_agree_with_probabilities() {
    let masks = [Mask::new(vec![1, 0, 1]).unwrap(), Mask::new(vec![0, 1, 1]).unwrap()];
    let z = Tensor::new([2, 3], vec![0.3, -2.0, 1.1, 4.0, -0.2, 0.0]).unwrap();
    let mut g = Graph::new();
    let zv = g.constant(z);
    let a = loss_cls_logits(&mut g, zv, &masks).unwrap();
    let y = g.sigmoid(zv);
    let b = loss_cls(&mut g, y, &masks).unwrap();
    assert!((scalar(&g, a) - scalar(&g, b.loss)).abs() < 1e-12);
}

#[test]
fn total_objective_examples() {
    let mut g = Graph::new();
    let terms = LossTerms {
        l_m: Some(g.constant(Tensor::scalar(2.0))),
        recon: Some(g.constant(Tensor::scalar(100.0))),
        g_loss: Some(g.constant(Tensor::scalar(3.0))),
        l_c: Some(g.constant(Tensor::scalar(5.0))),
        d_loss: Some(g.constant(Tensor::scalar(7.0))),
    };
    let (min, dsc) = total_objective(&mut g, &terms, Weights::default(), Toggles::ALL).unwrap();
    assert_eq!(scalar(&g, min), 10.0);
    assert_eq!(scalar(&g, dsc.unwrap()), 7.0);

    let w = Weights {
        lambda_m: 0.5,
        lambda_g: 2.0,
        lambda_c: 0.1,
    };
    let (min, _) = total_objective(&mut g, &terms, w, Toggles::ALL).unwrap();
    assert!((scalar(&g, min) - (1.0 + 6.0 + 0.5)).abs() < 1e-12);

    let mix_only = Weights {
        lambda_m: 1.0,
        lambda_g: 0.0,
        lambda_c: 0.0,
    };
    let (min, _) = total_objective(&mut g, &terms, mix_only, Toggles::ALL).unwrap();
    assert_eq!(scalar(&g, min), 2.0);

    let zero = Weights {
        lambda_m: 0.0,
        lambda_g: 0.0,
        lambda_c: 0.0,
    };
    let (min, _) = total_objective(&mut g, &terms, zero, Toggles::ALL).unwrap();
    assert_eq!(scalar(&g, min), 0.0);

    let ae = Toggles {
        mix_cycle: false,
        plain_recon: true,
        gan: false,
        cls: false,
    };
    let (min, dsc) = total_objective(&mut g, &terms, Weights::default(), ae).unwrap();
    assert_eq!(scalar(&g, min), 100.0);
    assert!(dsc.is_none());

    let partial = LossTerms {
        l_c: None,
        ..terms
    };
    assert!(matches!(
        total_objective(&mut g, &partial, Weights::default(), Toggles::ALL),
        Err(MixError::MissingTerm("L_C"))
    ));
    let neg = Weights {
        lambda_m: -1.0,
        ..Weights::default()
    };
    assert!(total_objective(&mut g, &terms, neg, Toggles::ALL).is_err());
}

#[test]
fn full_cycle_gradients_match_finite_differences() {
    for seed in 0..5 {
        let e = cycle_gradient_check(seed).unwrap();
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}
