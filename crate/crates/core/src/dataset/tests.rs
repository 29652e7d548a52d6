use std::collections::{BTreeMap, HashSet};

use super::*;

fn lab(v: [usize; 4]) -> FactorLabels {
    FactorLabels::new(v.to_vec())
}

fn at(px: &[f32], c: usize, row: usize, col: usize) -> f32 {
    px[c * 256 + row * 16 + col]
}

#[test]
fn large_centered_square_fills_its_box() {
    let spec = FactorSpec::default();
    let px = render(&spec, &lab([1, 2, 1, 1])).unwrap();
    for row in 0..16 {
        for col in 0..16 {
            let inside = (3..=12).contains(&row) && (3..=12).contains(&col);
            for c in 0..3 {
                let want = if inside { spec.hues[2][c] } else { BACKGROUND };
                assert_eq!(at(&px, c, row, col), want, "({row},{col})");
            }
        }
    }
}

#[test]
fn pixels_outside_bounding_box_are_background() {
    let spec = FactorSpec::default();
    for combo in 0..spec.combinations() {
        let l = spec.combination(combo);
        for jitter in -1..=1 {
            let px = render_jittered(&spec, &l, jitter).unwrap();
            let v = l.values();
            let s = spec.sizes[v[3]] as i32;
            let cx = 8 + spec.x_positions[v[2]];
            let cy = 8 + jitter;
            for row in 0..16i32 {
                for col in 0..16i32 {
                    let in_box = col >= cx - s && col < cx + s && row >= cy - s && row < cy + s;
                    if !in_box {
                        for c in 0..3 {
                            assert_eq!(at(&px, c, row as usize, col as usize), BACKGROUND);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn combinations_render_distinct_and_deterministic() {
    let spec = FactorSpec::default();
    assert_eq!(spec.combinations(), 72);
    let mut seen = HashSet::new();
    for combo in 0..72 {
        let l = spec.combination(combo);
        let a = render(&spec, &l).unwrap();
        assert_eq!(a, render(&spec, &l).unwrap());
        assert!(seen.insert(a.iter().map(|p| p.to_bits()).collect::<Vec<_>>()));
    }
}

#[test]
fn every_factor_is_identifiable() {
    let spec = FactorSpec::default();
    let cards = spec.cardinalities();
    for combo in 0..72 {
        let base = spec.combination(combo);
        for f in 0..4 {
            for v in 0..cards[f] {
                let mut other = base.values().to_vec();
                if other[f] == v {
                    continue;
                }
                other[f] = v;
                let a = render(&spec, &base).unwrap();
                let b = render(&spec, &FactorLabels::new(other)).unwrap();
                assert_ne!(a, b);
            }
        }
    }
}

#[test]
fn out_of_range_labels_are_errors() {
    let spec = FactorSpec::default();
    assert!(matches!(render(&spec, &lab([3, 0, 0, 0])), Err(DatasetError::Labels(_))));
    assert!(render(&spec, &lab([0, 4, 0, 0])).is_err());
    assert!(render(&spec, &FactorLabels::new(vec![0, 0])).is_err());
}

#[test]
fn palette_is_separable() {
    let hues = FactorSpec::default().hues;
    for i in 0..hues.len() {
        for j in i + 1..hues.len() {
            let d = (0..3).map(|c| (hues[i][c] - hues[j][c]).abs()).fold(0.0, f32::max);
            assert!(d >= 0.5);
        }
    }
}

#[test]
fn default_counts_and_stratification() {
    let d = generate(&FactorSpec::default(), 11, DEFAULT_COPIES).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (1440, 360));
    assert_eq!(d.train.images().shape(), &[1440, 3, 16, 16]);
    let count = |s: &Split| {
        let mut m = BTreeMap::new();
        for l in s.labels() {
            *m.entry(l.clone()).or_insert(0) += 1;
        }
        m
    };
    let (tr, te) = (count(&d.train), count(&d.test));
    assert_eq!(tr.len(), 72);
    assert_eq!(te.len(), 72);
    assert!(tr.values().all(|&c| c == 20) && te.values().all(|&c| c == 5));
}

#[test]
fn jitter_is_used_and_bounded() {
    let spec = FactorSpec::default();
    let d = generate(&spec, 3, 10).unwrap();
    let mut seen = HashSet::new();
    for (i, l) in d.train.labels().iter().enumerate() {
        let px: Vec<f32> = d.train.pixels(i).iter().map(|&p| p as f32).collect();
        let j = (-1..=1)
            .find(|&j| render_jittered(&spec, l, j).unwrap() == px)
            .expect("image matches a jitter in -1..=1");
        seen.insert(j);
    }
    assert_eq!(seen.len(), 3);
}

#[test]
fn small_copy_counts() {
    assert_eq!(test_copies(1), 0);
    assert_eq!(test_copies(2), 1);
    assert_eq!(test_copies(25), 5);
    let d = generate(&FactorSpec::default(), 0, 1).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (72, 0));
    assert!(generate(&FactorSpec::default(), 0, 0).is_err());
}

#[test]
fn file_round_trip_and_regeneration_are_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FactorSpec::default();
    let d = generate(&spec, 5, 4).unwrap();
    d.write(dir.path()).unwrap();
    let back = load(dir.path()).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.train.labels()[7], d.train.labels()[7]);

    let other = tempfile::tempdir().unwrap();
    generate(&spec, 5, 4).unwrap().write(other.path()).unwrap();
    for f in [TRAIN_FILE, TEST_FILE, MANIFEST_FILE] {
        let a = std::fs::read(dir.path().join(f)).unwrap();
        let b = std::fs::read(other.path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let bytes = std::fs::read(dir.path().join(TRAIN_FILE)).unwrap();
    assert_eq!(bytes.len(), header_bytes(4) + d.train.len() * record_bytes(4));
    assert_eq!(&bytes[8..12], &(d.train.len() as u32).to_le_bytes());
    let third = generate(&spec, 6, 4).unwrap();
    assert_ne!(third.train, d.train);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate(&FactorSpec::default(), 1, 2).unwrap().write(dir.path()).unwrap();
    let path = dir.path().join(TRAIN_FILE);
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[..7].copy_from_slice(b"XXDATA9");
    std::fs::write(&path, &bad).unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("expected") && err.contains("found") && err.contains("CMDATA1"), "{err}");

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    let err = load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("bytes"), "{err}");

    std::fs::write(&path, &good).unwrap();
    std::fs::remove_file(dir.path().join(TEST_FILE)).unwrap();
    let err = load(dir.path()).unwrap_err();
    assert!(matches!(err, DatasetError::Io { .. }));
    assert!(err.to_string().contains(TEST_FILE));
}

#[test]
fn gather_selects_rows() {
    let d = generate(&FactorSpec::default(), 2, 2).unwrap();
    let b = gather(d.train.images(), &[3, 0]);
    assert_eq!(b.shape(), &[2, 3, 16, 16]);
    assert_eq!(&b.data()[..768], d.train.pixels(3));
    assert_eq!(&b.data()[768..], d.train.pixels(0));
}
