//! Central finite-difference verification of recorded gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, BatchNormMode, Graph, Precision, RunningStats, Tensor, Var};

/// Relative error floor for 64-bit checks.
const DENOM_FLOOR: f64 = 1e-8;
/// Relative error floor for 32-bit checks; f32-rounded differences cannot
/// resolve gradients much below this.
const F32_DENOM_FLOOR: f64 = 1e-3;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum tolerated relative error for a given precision.
pub fn tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F64 => 1e-4,
        Precision::F32 => 1e-2,
    }
}

/// `|a - c| / max(1e-8, |a| + |c|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, DENOM_FLOOR)
}

fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / floor.max(analytic.abs() + numeric.abs())
}

/// Max relative error between the analytic gradient of `f` at `x0` and its
/// central difference with step `h`.
pub fn grad_check<F>(f: F, x0: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    grad_check_multi(|g, xs| f(g, xs[0]), std::slice::from_ref(x0), h, Precision::F64)
}

/// [`grad_check`] over several inputs at once; the result is the max over
/// all coordinates of all inputs.
///
/// `precision` selects the mode of the analytic pass. The finite-difference
/// reference is always evaluated in 64-bit so that it resolves the small
/// differences a 32-bit forward pass would round away.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor], h: f64, precision: Precision) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::with_precision(precision);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).expect("param")).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::with_precision(Precision::F64);
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let floor = match precision {
        Precision::F64 => DENOM_FLOOR,
        Precision::F32 => F32_DENOM_FLOOR,
    };
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error_with_floor(analytic[i].data()[j], numeric, floor));
        }
    }
    Ok(worst)
}

/// Outcome of checking one registered op.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Pushes values within `1e-2` of zero out to `±1e-2`, away from the
/// leaky ReLU kink.
fn nudge_from_zero(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -1e-2 } else { 1e-2 };
        }
    }
    t
}

/// Reduces any output to a scalar with fixed random weights so every
/// output coordinate contributes to the check.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var, AutodiffError> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: Vec<usize>,
    build: Builder,
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut v = Vec::new();
    let pair = |rng: &mut ChaCha8Rng, s: &[usize]| vec![uniform(rng, s), uniform(rng, s)];

    v.push(Case {
        name: "add",
        inputs: pair(rng, &[2, 3]),
        out_shape: vec![2, 3],
        build: Box::new(|g, x| g.add(x[0], x[1])),
    });
    v.push(Case {
        name: "sub",
        inputs: pair(rng, &[2, 3]),
        out_shape: vec![2, 3],
        build: Box::new(|g, x| g.sub(x[0], x[1])),
    });
    v.push(Case {
        name: "mul",
        inputs: pair(rng, &[2, 3]),
        out_shape: vec![2, 3],
        build: Box::new(|g, x| g.mul(x[0], x[1])),
    });
    v.push(Case {
        name: "mul_broadcast",
        inputs: vec![uniform(rng, &[2, 3]), uniform(rng, &[1])],
        out_shape: vec![2, 3],
        build: Box::new(|g, x| g.mul(x[0], x[1])),
    });
    v.push(Case {
        name: "scalar_affine",
        inputs: vec![uniform(rng, &[5])],
        out_shape: vec![5],
        build: Box::new(|g, x| {
            let y = g.mul_scalar(x[0], -1.7);
            Ok(g.add_scalar(y, 0.3))
        }),
    });
    v.push(Case {
        name: "leaky_relu",
        inputs: vec![nudge_from_zero(uniform(rng, &[3, 4]))],
        out_shape: vec![3, 4],
        build: Box::new(|g, x| g.leaky_relu(x[0], 0.2)),
    });
    v.push(Case {
        name: "sigmoid",
        inputs: vec![uniform(rng, &[6])],
        out_shape: vec![6],
        build: Box::new(|g, x| Ok(g.sigmoid(x[0]))),
    });
    v.push(Case {
        name: "softplus",
        inputs: vec![uniform(rng, &[6])],
        out_shape: vec![6],
        build: Box::new(|g, x| Ok(g.softplus(x[0]))),
    });
    let positive = Tensor::from_fn([6], |_| rng.random_range(0.5..2.0));
    v.push(Case {
        name: "log",
        inputs: vec![positive],
        out_shape: vec![6],
        build: Box::new(|g, x| g.log(x[0])),
    });
    v.push(Case {
        name: "matmul",
        inputs: vec![uniform(rng, &[3, 4]), uniform(rng, &[4, 2])],
        out_shape: vec![3, 2],
        build: Box::new(|g, x| g.matmul(x[0], x[1])),
    });
    v.push(Case {
        name: "mean",
        inputs: vec![uniform(rng, &[2, 5])],
        out_shape: vec![],
        build: Box::new(|g, x| Ok(g.mean(x[0]))),
    });
    v.push(Case {
        name: "sum",
        inputs: vec![uniform(rng, &[2, 5])],
        out_shape: vec![],
        build: Box::new(|g, x| Ok(g.sum(x[0]))),
    });
    v.push(Case {
        name: "add_channel_bias",
        inputs: vec![uniform(rng, &[2, 3, 2, 2]), uniform(rng, &[3])],
        out_shape: vec![2, 3, 2, 2],
        build: Box::new(|g, x| g.add_channel_bias(x[0], x[1])),
    });
    v.push(Case {
        name: "conv2d",
        inputs: vec![uniform(rng, &[1, 2, 5, 5]), uniform(rng, &[3, 2, 3, 3])],
        out_shape: vec![1, 3, 3, 3],
        build: Box::new(|g, x| g.conv2d(x[0], x[1], 1, 0)),
    });
    v.push(Case {
        name: "conv2d_stride2_pad1",
        inputs: vec![uniform(rng, &[2, 2, 5, 5]), uniform(rng, &[3, 2, 3, 3])],
        out_shape: vec![2, 3, 3, 3],
        build: Box::new(|g, x| g.conv2d(x[0], x[1], 2, 1)),
    });
    v.push(Case {
        name: "upsample2x",
        inputs: vec![uniform(rng, &[2, 2, 3, 3])],
        out_shape: vec![2, 2, 6, 6],
        build: Box::new(|g, x| g.upsample2x(x[0])),
    });
    v.push(Case {
        name: "batchnorm_train",
        inputs: vec![uniform(rng, &[4, 2, 3, 3]), uniform(rng, &[2]), uniform(rng, &[2])],
        out_shape: vec![4, 2, 3, 3],
        build: Box::new(|g, x| g.batchnorm(x[0], x[1], x[2], BatchNormMode::Train(None))),
    });
    let stats = RunningStats {
        mean: vec![0.1, -0.2],
        var: vec![0.5, 1.5],
    };
    v.push(Case {
        name: "batchnorm_infer",
        inputs: vec![uniform(rng, &[3, 2, 2, 2]), uniform(rng, &[2]), uniform(rng, &[2])],
        out_shape: vec![3, 2, 2, 2],
        build: Box::new(move |g, x| g.batchnorm(x[0], x[1], x[2], BatchNormMode::Infer(&stats))),
    });
    v.push(Case {
        name: "concat_channels",
        inputs: vec![uniform(rng, &[2, 1, 2, 2]), uniform(rng, &[2, 3, 2, 2])],
        out_shape: vec![2, 4, 2, 2],
        build: Box::new(|g, x| g.concat_channels(x)),
    });
    v.push(Case {
        name: "reshape",
        inputs: vec![uniform(rng, &[2, 6])],
        out_shape: vec![3, 4],
        build: Box::new(|g, x| g.reshape(x[0], &[3, 4])),
    });
    let composite_weights = uniform(rng, &[3, 2, 4, 4]);
    v.push(Case {
        name: "conv_bn_lrelu_mean",
        inputs: vec![
            uniform(rng, &[3, 2, 4, 4]),
            uniform(rng, &[2, 2, 3, 3]),
            uniform(rng, &[2]),
            uniform(rng, &[2]),
        ],
        out_shape: vec![],
        build: Box::new(move |g, x| {
            let c = g.conv2d(x[0], x[1], 1, 1)?;
            let b = g.batchnorm(c, x[2], x[3], BatchNormMode::Train(None))?;
            let a = g.leaky_relu(b, 0.2)?;
            // Unweighted statistics of a batch-normalized tensor are nearly
            // constant, which would leave only rounding noise to compare.
            let w = g.constant(composite_weights.clone());
            let aw = g.mul(a, w)?;
            Ok(g.mean(aw))
        }),
    });
    v
}

/// Checks every registered op on random inputs drawn from `seed`.
pub fn op_suite(seed: u64, precision: Precision) -> Result<Vec<OpCheck>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DEFAULT_STEP;
    let mut results = Vec::new();
    for case in cases(&mut rng) {
        let weights = uniform(&mut rng, &case.out_shape);
        let build = &case.build;
        let err = grad_check_multi(
            |g, xs| {
                let out = build(g, xs)?;
                if g.value(out).numel() == 1 {
                    Ok(out)
                } else {
                    project(g, out, &weights)
                }
            },
            &case.inputs,
            h,
            precision,
        )?;
        results.push(OpCheck {
            name: case.name,
            max_rel_err: err,
        });
    }
    Ok(results)
}
