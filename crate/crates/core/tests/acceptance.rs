//! Acceptance suite: one PASS/FAIL line per criterion on stdout.
//!
//! Criteria 5 to 7 train thirteen desk-scale models and take over an hour on
//! one core; everything else finishes in seconds.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use chunkmix::autodiff::gradcheck::op_suite;
use chunkmix::autodiff::{Graph, Precision, Tensor};
use chunkmix::cli;
use chunkmix::dataset::{gather, generate, Dataset, FactorLabels, FactorSpec};
use chunkmix::eval::{
    evaluate_retrieval, fit_raw, hinge_loss, parse_ppm, ppm_bytes, retrieval_map, shortcut_report, to_byte,
    transfer_grid, FeatureMatrix, DEFAULT_PAIRS,
};
use chunkmix::mixing::{
    cycle_gradient_check, forward_cycle, loss_cls, loss_gan, loss_mix, mix, sample_mask, unmix, IdentityCodec, Mask,
};
use chunkmix::models::{ChunkLayout, ChunkedFeature, ModelParams};
use chunkmix::trainer::{ablation_suite, train, AblationRow, TrainConfig, TrainOptions};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SECONDS: f64 = 120.0;
const GRAD_SEEDS: u64 = 20;
const SELECTOR_CASES: usize = 1000;
const LOSS_TOL: f64 = 1e-9;
const PROBE_W_TOL: f64 = 1e-12;
const ORDER_OVER_RANDOM: f64 = 0.15;
const ORDER_OVER_AE: f64 = 0.03;
const PLATEAU_GAP: f64 = 0.1;
const SEEDS: [u64; 3] = [1, 2, 3];
const SIZES: [usize; 5] = [2, 4, 8, 16, 32];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(n: usize, title: &str, o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "criterion {n} {tag} {title}: {}", o.detail);
    let _ = out.flush();
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in 0..GRAD_SEEDS {
        for c in op_suite(seed, Precision::F64).unwrap() {
            if c.max_rel_err > worst.0 {
                worst = (c.max_rel_err, c.name.to_string());
            }
        }
        let cycle = cycle_gradient_check(seed).unwrap();
        if cycle > worst.0 {
            worst = (cycle, "full_cycle".into());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < GRAD_TOL && secs < GRAD_SECONDS,
        format!(
            "max rel err {:.2e} ({}) over {GRAD_SEEDS} seeds < {GRAD_TOL:.0e}; {secs:.1}s < {GRAD_SECONDS}s",
            worst.0, worst.1
        ),
    )
}

fn selector_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let chunk_counts = [1, 2, 3, 4, 6, 8, 12, 16];
    let mut failures = 0;
    for _ in 0..SELECTOR_CASES {
        let n = chunk_counts[rng.random_range(0..chunk_counts.len())];
        let layout = ChunkLayout::new(n, 768 / n).unwrap();
        let batch = rng.random_range(1..=3);
        let x1 = Tensor::from_fn([batch, 3, 16, 16], |_| rng.random::<f64>());
        let x2 = Tensor::from_fn([batch, 3, 16, 16], |_| rng.random::<f64>());
        let masks: Vec<Mask> = (0..batch).map(|_| sample_mask(&mut rng, n).unwrap()).collect();

        let mut stub = IdentityCodec::new(layout, &[3, 16, 16]).unwrap();
        let mut g = Graph::new();
        let (a, b) = (g.constant(x1.clone()), g.constant(x2.clone()));
        let c = forward_cycle(&mut stub, &mut g, a, b, &masks).unwrap();
        let lm = loss_mix(&mut g, c.x4, a).unwrap();
        let mut ok = g.value(c.x4) == &x1 && g.value(lm).data()[0] == 0.0;

        let f1 = ChunkedFeature::new(layout, x1.data()[..768].to_vec()).unwrap();
        let f2 = ChunkedFeature::new(layout, x2.data()[..768].to_vec()).unwrap();
        let m = &masks[0];
        let f12 = mix(&f1, &f2, m).unwrap();
        ok &= unmix(&f12, &f1, m).unwrap() == f1;
        ok &= mix(&f2, &f1, &m.complement()).unwrap() == f12;
        ok &= mix(&f1, &f2, &Mask::ones(n)).unwrap() == f1;
        ok &= mix(&f1, &f2, &Mask::zeros(n)).unwrap() == f2;
        for i in 0..n {
            let src = if m.bits()[i] == 1 { &f1 } else { &f2 };
            ok &= f12.chunk(i) == src.chunk(i);
        }
        if !ok {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of {SELECTOR_CASES} randomized cases violated"))
}

fn loss_units() -> Outcome {
    let masks: Vec<Mask> = (0..2).map(|i| Mask::new(vec![i as u8, 1 - i as u8, 1, 0, 1, 1, 0, 0]).unwrap()).collect();
    let mut g = Graph::new();
    let y = g.constant(Tensor::full([2, 8], 0.5));
    let cls = loss_cls(&mut g, y, &masks).unwrap();
    let cls_v = g.value(cls.loss).data()[0];
    let s = g.constant(Tensor::full([5, 1], 0.5));
    let gan = loss_gan(&mut g, s, s).unwrap();
    let d_v = g.value(gan.d_loss).data()[0];
    let x = g.constant(Tensor::from_fn([2, 3, 16, 16], |i| (i % 7) as f64 / 7.0));
    let lm = loss_mix(&mut g, x, x).unwrap();
    let lm_v = g.value(lm).data()[0];
    let ln2 = std::f64::consts::LN_2;
    let pass = (cls_v - 8.0 * ln2).abs() <= LOSS_TOL && (d_v - 2.0 * ln2).abs() <= LOSS_TOL && lm_v == 0.0;
    outcome(
        pass,
        format!(
            "loss_cls {:.1e} from 8 ln 2, d_loss {:.1e} from 2 ln 2 (tol {LOSS_TOL:.0e}), loss_mix {lm_v}",
            (cls_v - 8.0 * ln2).abs(),
            (d_v - 2.0 * ln2).abs()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ap_mismatch = 0;
    let instances = 100;
    for case in 0..instances {
        let n = rng.random_range(4..=64);
        let d = rng.random_range(1..=3);
        let classes = rng.random_range(2..=4).min(n / 2);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| if case % 2 == 0 { rng.random_range(0..3) as f64 } else { rng.random::<f64>() })
                    .collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| (i + rng.random_range(0..2) * (i % 3)) % classes).collect();
        if (0..classes).any(|c| labels.iter().filter(|&&l| l == c).count() < 1) || labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let fm = FeatureMatrix::new(
            ChunkLayout::new(1, d).unwrap(),
            pts.concat(),
            labels.iter().map(|&l| FactorLabels::new(vec![l])).collect(),
        )
        .unwrap();
        if retrieval_map(&fm, 0, 0).unwrap() != brute_force_map(&pts, &labels) {
            ap_mismatch += 1;
        }
    }
    let (mut w_err, mut b_bad) = (0.0f64, 0);
    for _ in 0..20 {
        let dim = rng.random_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..16).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut labels: Vec<i8> = (0..16).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        labels.swap(rng.random_range(0..16), rng.random_range(0..16));
        let view: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = fit_raw(&view, &labels).unwrap();
        for (a, b) in p.w.iter().zip(two_pass_centroid(&rows, &labels)) {
            w_err = w_err.max((a - b).abs());
        }
        let scores: Vec<f64> = rows.iter().map(|r| r.iter().zip(&p.w).map(|(x, y)| x * y).sum()).collect();
        let bg = grid_search_bias(&scores, &labels, 200_000);
        let gap = gap_around(&breakpoints(&scores, &labels), bg);
        let worse = hinge_loss(&scores, &labels, p.b) > hinge_loss(&scores, &labels, bg) + 1e-9;
        if (p.b - bg).abs() > gap || worse {
            b_bad += 1;
        }
    }
    outcome(
        ap_mismatch == 0 && w_err <= PROBE_W_TOL && b_bad == 0,
        format!(
            "mAP mismatches {ap_mismatch}/{instances}; probe w max err {w_err:.1e} (tol {PROBE_W_TOL:.0e}); \
             b outside one breakpoint gap {b_bad}/20"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Heavy {
    five: Outcome,
    six: Outcome,
    seven: Outcome,
}

fn heavy(data: &Dataset) -> Heavy {
    let base = TrainConfig::default();
    let rows = [AblationRow::Random, AblationRow::Ae, AblationRow::MixGan, AblationRow::MixClsGan];
    let mut dead: Vec<(AblationRow, u64, usize)> = Vec::new();
    let report = ablation_suite(data, &rows, &SEEDS, &base, |r| {
        let s = shortcut_report(&r.params, data.test.images(), DEFAULT_PAIRS, r.seed).unwrap();
        eprintln!("{}\tseed {}\tavg mAP {:.4}\tdead {}", r.row.name(), r.seed, r.table.average(), s.dead_count());
        dead.push((r.row, r.seed, s.dead_count()));
    })
    .unwrap();
    eprint!("{}", report.to_tsv());

    let random = report.median_average(AblationRow::Random);
    let ae = report.median_average(AblationRow::Ae);
    let full = report.median_average(AblationRow::MixClsGan);
    let five = outcome(
        full >= random + ORDER_OVER_RANDOM && full >= ae + ORDER_OVER_AE,
        format!(
            "median avg mAP MIX+C+G {full:.4}, AE {ae:.4}, Random {random:.4}; \
             need >= Random + {ORDER_OVER_RANDOM} and >= AE + {ORDER_OVER_AE}"
        ),
    );

    let dead_of = |row| -> Vec<usize> { dead.iter().filter(|d| d.0 == row).map(|d| d.2).collect() };
    let (mcg, mg) = (dead_of(AblationRow::MixClsGan), dead_of(AblationRow::MixGan));
    let med = |v: &[usize]| median(v.iter().map(|&x| x as f64).collect());
    let six = outcome(
        med(&mcg) <= med(&mg) && med(&mcg) == 0.0,
        format!("dead chunks per seed MIX+C+G {mcg:?} (median {}), MIX+G {mg:?} (median {})", med(&mcg), med(&mg)),
    );

    // the d = 8 point is the seed-1 MIX+C+G run above
    let reuse = report
        .for_row(AblationRow::MixClsGan)
        .into_iter()
        .find(|r| r.seed == SEEDS[0])
        .map(|r| r.table.average())
        .unwrap();
    let mut curve = Vec::new();
    for d in SIZES {
        let avg = if d == base.layout.dim {
            reuse
        } else {
            let mut cfg = AblationRow::MixClsGan
                .config(&TrainConfig {
                    seed: SEEDS[0],
                    ..base.clone()
                })
                .unwrap();
            cfg.layout = ChunkLayout::new(base.layout.chunks, d).unwrap();
            let out = train(&cfg, data.train.images(), &TrainOptions::default()).unwrap();
            evaluate_retrieval(&out.params, data).unwrap().average()
        };
        eprintln!("chunk size {d}\tavg mAP {avg:.4}");
        curve.push((d, avg));
    }
    let max = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let gap = max - curve.last().unwrap().1;
    let pts: Vec<String> = curve.iter().map(|(d, m)| format!("{d}:{m:.4}")).collect();
    let seven = outcome(
        gap < PLATEAU_GAP,
        format!("curve {}; max minus value at 32 = {gap:.4} < {PLATEAU_GAP}", pts.join(" ")),
    );
    Heavy { five, six, seven }
}

fn run_cli(args: &[&str]) -> i32 {
    let mut sink = Vec::new();
    cli::run(std::iter::once("chunkmix").chain(args.iter().copied()), &mut sink)
}

fn experiment(root: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = root.join("data");
    let run = root.join("run");
    let reports = root.join("reports");
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, format!("epochs = 1\nbatch = 8\nseed = 5\ndata = {}\nout = {}\n", s(&data), s(&run))).unwrap();
    let ck = run.join("checkpoint.bin");
    let grid = root.join("grid.ppm");
    let codes = [
        run_cli(&["gen-data", "--out", &s(&data), "--seed", "3", "--copies", "2"]),
        run_cli(&["train", "--config", &s(&cfg), "--quiet"]),
        run_cli(&["eval", "--checkpoint", &s(&ck), "--data", &s(&data), "--out", &s(&reports), "--pairs", "32"]),
        run_cli(&["grid", "--checkpoint", &s(&ck), "--data", &s(&data), "--chunk", "1", "--rows", "3", "--cols", "4", "--seed", "9", "--out", &s(&grid)]),
    ];
    assert_eq!(codes, [0; 4], "experiment commands");
    let mut files = Vec::new();
    for p in [
        data.join("train.bin"),
        data.join("test.bin"),
        data.join("manifest.txt"),
        ck,
        run.join("train_log.tsv"),
        reports.join("retrieval.tsv"),
        reports.join("probes.tsv"),
        reports.join("shortcut.tsv"),
        grid,
    ] {
        let name = p.strip_prefix(root).unwrap().display().to_string();
        files.push((name, std::fs::read(&p).unwrap()));
    }
    files
}

fn determinism() -> Outcome {
    // same directory both times, since the checkpoint records the config paths
    let dir = tempfile::tempdir().unwrap();
    let fa = experiment(dir.path());
    for sub in ["data", "run", "reports"] {
        std::fs::remove_dir_all(dir.path().join(sub)).unwrap();
    }
    let fb = experiment(dir.path());
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        format!("{} artifacts compared byte for byte, differing: {differing:?}", fa.len()),
    )
}

fn grid_format(data: &Dataset) -> Outcome {
    let params = ModelParams::init(ChunkLayout::default(), 0);
    let images = data.test.images();
    let mut problems = Vec::new();
    for (r, c) in [(8usize, 8usize), (3, 5), (1, 1)] {
        let rows = gather(images, &(0..r).map(|i| i * 11).collect::<Vec<_>>());
        let cols = gather(images, &(0..c).map(|i| i * 13 + 5).collect::<Vec<_>>());
        let bytes = ppm_bytes(&transfer_grid(&params, &rows, &cols, 2).unwrap()).unwrap();
        let (w, h, rgb) = parse_ppm(&bytes).unwrap();
        if (w, h) != ((c + 1) * 16, (r + 1) * 16) {
            problems.push(format!("{r}x{c}: got {w}x{h}"));
            continue;
        }
        let px = |x: usize, y: usize, ch: usize| rgb[(y * w + x) * 3 + ch];
        let mut bad = 0;
        for y in 0..16 {
            for x in 0..16 {
                for ch in 0..3 {
                    let off = ch * 256 + y * 16 + x;
                    bad += (0..c).filter(|&j| px((j + 1) * 16 + x, y, ch) != to_byte(cols.data()[j * 768 + off])).count();
                    bad += (0..r).filter(|&i| px(x, (i + 1) * 16 + y, ch) != to_byte(rows.data()[i * 768 + off])).count();
                }
            }
        }
        if bad > 0 {
            problems.push(format!("{r}x{c}: {bad} border bytes differ"));
        }
    }
    outcome(problems.is_empty(), format!("grids 8x8 (144x144), 3x5, 1x1; problems {problems:?}"))
}

#[test]
fn acceptance() {
    let data = generate(&FactorSpec::default(), 0, 25).unwrap();
    assert_eq!(data.train.len() + data.test.len(), 1800);
    let mut results = Vec::new();
    let mut record = |n: usize, title: &str, o: Outcome| {
        report(n, title, &o);
        results.push((n, o.pass));
    };
    record(1, "gradient suite", gradient_suite());
    record(2, "selector algebra", selector_algebra());
    record(3, "loss unit values", loss_units());
    record(4, "oracle equivalence", oracle_equivalence());
    record(8, "determinism", determinism());
    record(9, "grid format", grid_format(&data));
    let h = heavy(&data);
    record(5, "desk-scale ordering", h.five);
    record(6, "shortcut mitigation", h.six);
    record(7, "chunk-size plateau", h.seven);
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
