use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::{generate, FactorSpec};
use crate::mixing::{Codec, IdentityCodec, MixError};

fn fm(n: usize, d: usize, values: Vec<f64>, labels: &[&[usize]]) -> FeatureMatrix {
    let labels = labels.iter().map(|l| FactorLabels::new(l.to_vec())).collect();
    FeatureMatrix::new(ChunkLayout::new(n, d).unwrap(), values, labels).unwrap()
}

#[test]
fn clustered_features_give_perfect_map() {
    let f = fm(1, 2, vec![0.0, 0.0, 0.1, 0.0, 5.0, 5.0, 5.1, 5.0], &[&[0], &[0], &[1], &[1]]);
    assert_eq!(retrieval_map(&f, 0, 0).unwrap(), 1.0);
}

#[test]
fn hand_enumerated_average_precision() {
    assert_eq!(average_precision([false, true, true]), Some((0.5 + 2.0 / 3.0) / 2.0));
    assert!((average_precision([false, true, true]).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    assert_eq!(average_precision([false, false]), None);
    // query 0 sees [wrong, right, right]
    let f = fm(1, 1, vec![0.0, 0.5, 0.7, 0.1], &[&[0], &[0], &[0], &[1]]);
    let ap = query_average_precision(&f, 0, 0, 0).unwrap().unwrap();
    assert!((ap - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn ties_break_by_index() {
    // items 1 and 2 are equidistant from 0; index 1 ranks first
    let f = fm(1, 1, vec![0.0, 1.0, -1.0, 9.0], &[&[0], &[1], &[0], &[1]]);
    let ap = query_average_precision(&f, 0, 0, 0).unwrap().unwrap();
    assert_eq!(ap, 0.5);
}

#[test]
fn random_features_on_balanced_classes_are_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 360;
    let values: Vec<f64> = (0..n * 8).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<Vec<usize>> = (0..n).map(|i| vec![i % 2]).collect();
    let refs: Vec<&[usize]> = labels.iter().map(|l| l.as_slice()).collect();
    let f = fm(1, 8, values, &refs);
    let m = retrieval_map(&f, 0, 0).unwrap();
    assert!((0.48..=0.52).contains(&m), "{m}");
}

#[test]
fn retrieval_errors() {
    let f = fm(2, 1, vec![0.0, 1.0, 2.0, 3.0], &[&[0, 1], &[0, 0]]);
    assert!(matches!(retrieval_map(&f, 0, 0), Err(EvalError::SingleClass { factor: 0 })));
    assert!(retrieval_map(&f, 2, 1).is_err());
    assert!(retrieval_map(&f, 0, 5).is_err());
    assert!(FeatureMatrix::new(ChunkLayout::new(1, 1).unwrap(), vec![f64::NAN], vec![FactorLabels::new(vec![0])]).is_err());
}

#[test]
fn best_chunk_table_shape_and_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = 24;
    let labels: Vec<Vec<usize>> = (0..rows).map(|i| vec![i % 2, i % 3, (i / 2) % 4]).collect();
    let refs: Vec<&[usize]> = labels.iter().map(|l| l.as_slice()).collect();
    let f = fm(5, 2, (0..rows * 10).map(|_| rng.random::<f64>()).collect(), &refs);
    let t = best_chunk_table(&f).unwrap();
    assert_eq!(t.rows().len(), 3);
    assert!(t.rows().iter().all(|r| r.len() == 5 + 2));
    let tsv = t.to_tsv();
    assert_eq!(tsv.lines().count(), 4);
    assert!(tsv.lines().next().unwrap().starts_with("factor\tchunk0"));
    for (f_idx, row) in t.maps.iter().enumerate() {
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(t.best_map[f_idx], max);
        assert_eq!(t.best_chunk[f_idx], row.iter().position(|&m| m == max).unwrap());
    }
    assert!((t.average() - t.best_map.iter().sum::<f64>() / 3.0).abs() < 1e-15);

    // identical chunks tie; the lowest index wins
    let same: Vec<f64> = (0..rows).flat_map(|i| [i as f64, i as f64]).collect();
    let g = fm(2, 1, same, &refs);
    assert!(best_chunk_table(&g).unwrap().best_chunk.iter().all(|&c| c == 0));

    let single = fm(1, 10, (0..rows * 10).map(|_| rng.random::<f64>()).collect(), &refs);
    assert!(best_chunk_table(&single).unwrap().best_chunk.iter().all(|&c| c == 0));
}

#[test]
fn probe_hand_example() {
    let rows: Vec<&[f64]> = vec![&[2.0, 0.0], &[4.0, 0.0], &[0.0, 2.0], &[0.0, 4.0]];
    let labels = [1, 1, -1, -1];
    let p = fit_raw(&rows, &labels).unwrap();
    assert_eq!(p.w, vec![3.0, -3.0]);
    let scores: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 3.0 * r[1]).collect();
    for b in [-5.0, 5.0] {
        assert_eq!(hinge_loss(&scores, &labels, b), 0.0);
    }
    assert!(hinge_loss(&scores, &labels, -11.0) > 0.0);
    assert!(hinge_loss(&scores, &labels, 11.0) > 0.0);
    assert_eq!(p.b, -5.0);
    assert_eq!(p.accuracy(&rows, &labels), 1.0);
}

#[test]
fn probe_on_identical_distributions_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mk = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<Vec<f64>>, Vec<i8>) {
        let rows = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        (rows, labels)
    };
    let (tr, trl) = mk(&mut rng, 2000);
    let (te, tel) = mk(&mut rng, 2000);
    let acc = linear_probe(&view(&tr), &trl, &view(&te), &tel).unwrap();
    assert!((0.45..=0.55).contains(&acc), "{acc}");
}

#[test]
fn probe_is_invariant_to_uniform_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<i8> = rows.iter().map(|r| if r[0] + 0.3 * r[2] > 0.1 { 1 } else { -1 }).collect();
    let view: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let p = ProbeModel::fit(&view, &labels).unwrap();
    for k in [0.25, 3.7, 1000.0] {
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let sv: Vec<&[f64]> = scaled.iter().map(|r| r.as_slice()).collect();
        let q = ProbeModel::fit(&sv, &labels).unwrap();
        let a: Vec<i8> = view.iter().map(|r| p.predict(r)).collect();
        let b: Vec<i8> = sv.iter().map(|r| q.predict(r)).collect();
        assert_eq!(a, b, "scale {k}");
    }
}

#[test]
fn probe_errors() {
    let rows: Vec<&[f64]> = vec![&[1.0], &[2.0]];
    assert!(matches!(fit_raw(&rows, &[1, 1]), Err(EvalError::SingleClass { .. })));
    assert!(fit_raw(&rows, &[1, 0]).is_err());
    assert!(fit_raw(&rows, &[1]).is_err());
}

#[test]
fn probe_factor_on_generated_data() {
    let data = generate(&FactorSpec::default(), 4, 5).unwrap();
    let layout = ChunkLayout::new(1, 768).unwrap();
    let train = FeatureMatrix::new(layout, data.train.images().data().to_vec(), data.train.labels().to_vec()).unwrap();
    let test = FeatureMatrix::new(layout, data.test.images().data().to_vec(), data.test.labels().to_vec()).unwrap();
    for f in 0..4 {
        let acc = probe_factor(&train, &test, f).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    // hue is linearly decodable from raw pixels
    assert!(probe_factor(&train, &test, 1).unwrap() > 0.8);
}

fn view(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|r| r.as_slice()).collect()
}

fn sources(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, 3, 16, 16], |_| rng.random::<f64>())
}

#[test]
fn grid_extents_and_source_borders() {
    let p = ModelParams::init(ChunkLayout::default(), 2);
    let (rows, cols) = (sources(3, 1), sources(2, 2));
    let grid = transfer_grid(&p, &rows, &cols, 1).unwrap();
    assert_eq!(grid.shape(), &[3, 4 * 16, 3 * 16]);
    let bytes = ppm_bytes(&grid).unwrap();
    let (w, h, rgb) = parse_ppm(&bytes).unwrap();
    assert_eq!((w, h), (48, 64));
    let px = |x: usize, y: usize, c: usize| rgb[(y * w + x) * 3 + c];
    for y in 0..16 {
        for x in 0..16 {
            for c in 0..3 {
                assert_eq!(px(x, y, c), 0);
                for j in 0..2 {
                    assert_eq!(px((j + 1) * 16 + x, y, c), to_byte(cols.data()[j * 768 + c * 256 + y * 16 + x]));
                }
                for i in 0..3 {
                    assert_eq!(px(x, (i + 1) * 16 + y, c), to_byte(rows.data()[i * 768 + c * 256 + y * 16 + x]));
                }
            }
        }
    }
    assert!(transfer_grid(&p, &rows, &cols, 4).is_err());
}

#[test]
fn rounding_is_half_up() {
    assert_eq!(to_byte(0.0), 0);
    assert_eq!(to_byte(1.0), 255);
    assert_eq!(to_byte(0.5), 128);
    assert_eq!(to_byte(0.5 / 255.0), 1);
    assert_eq!(to_byte(-3.0), 0);
    assert_eq!(ppm_bytes(&Tensor::zeros([3, 2, 5])).unwrap()[..11], *b"P6\n5 2\n255\n");
}

#[test]
fn identity_grid_with_whole_feature_chunk_copies_top_images() {
    let layout = ChunkLayout::new(1, 768).unwrap();
    let mut codec = IdentityCodec::new(layout, &[3, 16, 16]).unwrap();
    let (rows, cols) = (sources(2, 5), sources(3, 6));
    let grid = transfer_grid_with(&mut codec, &rows, &cols, 0).unwrap();
    let w = 4 * 16;
    for i in 0..2 {
        for j in 0..3 {
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        let g = grid.data()[c * 48 * w + ((i + 1) * 16 + y) * w + (j + 1) * 16 + x];
                        assert_eq!(g, cols.data()[j * 768 + c * 256 + y * 16 + x]);
                    }
                }
            }
        }
    }
}

#[test]
fn self_mixing_reproduces_reconstruction() {
    let p = ModelParams::init(ChunkLayout::default(), 4);
    let x = sources(1, 9);
    let recon = p.decode(&p.encode(&x).unwrap()).unwrap();
    for chunk in 0..4 {
        let grid = transfer_grid(&p, &x, &x, chunk).unwrap();
        let w = 32;
        for c in 0..3 {
            for y in 0..16 {
                for xx in 0..16 {
                    let g = grid.data()[c * 32 * w + (16 + y) * w + 16 + xx];
                    assert_eq!(g, recon.data()[c * 256 + y * 16 + xx]);
                }
            }
        }
    }
}

#[test]
fn untrained_networks_have_no_dead_chunks() {
    let data = generate(&FactorSpec::default(), 0, 2).unwrap();
    for seed in 0..3 {
        let p = ModelParams::init(ChunkLayout::default(), seed);
        let r = shortcut_report(&p, data.test.images(), 64, seed).unwrap();
        assert_eq!(r.chunks.len(), 4);
        assert_eq!(r.dead_count(), 0, "{}", r.to_tsv());
    }
}

/// Identity codec whose decoder zeroes every chunk except the first.
struct FirstChunkOnly(IdentityCodec);

impl Codec for FirstChunkOnly {
    fn layout(&self) -> ChunkLayout {
        self.0.layout()
    }

    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError> {
        self.0.encode(g, x)
    }

    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError> {
        let shape = g.shape(f).to_vec();
        let d = self.layout().dim;
        let keep = g.constant(Tensor::from_fn(shape, |i| if i % (4 * d) < d { 1.0 } else { 0.0 }));
        let kept = g.mul(f, keep)?;
        self.0.decode(g, kept)
    }
}

#[test]
fn decoder_ignoring_chunks_flags_them_dead() {
    let data = generate(&FactorSpec::default(), 1, 2).unwrap();
    let layout = ChunkLayout::new(4, 192).unwrap();
    let mut codec = FirstChunkOnly(IdentityCodec::new(layout, &[3, 16, 16]).unwrap());
    let chance = |_: &Tensor, _: &Tensor, x3: &Tensor| Ok(Tensor::full([x3.shape()[0], 4], 0.5));
    let r = shortcut_report_with(&mut codec, chance, data.test.images(), 128, 3).unwrap();
    assert!(!r.chunks[0].dead);
    assert!(r.chunks[1..].iter().all(|c| c.dead), "{}", r.to_tsv());
    assert_eq!(r.dead_count(), 3);
}
