use super::{EvalError, FeatureMatrix};

pub const VARIANCE_EPS: f64 = 1e-8;

/// Linear classifier `sign(wᵀ(s ⊙ f) + b)` with per-coordinate scales `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub scales: Vec<f64>,
}

/// `Σ max(0, 1 − cᵢ(sᵢ + b))` for projections `s` and labels `c`.
pub fn hinge_loss(scores: &[f64], labels: &[i8], b: f64) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &c)| (1.0 - c as f64 * (s + b)).max(0.0))
        .sum()
}

/// Bias minimizing the hinge loss over the breakpoints `1 − sᵢ` (positives)
/// and `−1 − sᵢ` (negatives). Ties go to the smallest `|b|`, then the
/// smallest `b`.
pub fn hinge_bias(scores: &[f64], labels: &[i8]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for (&s, &c) in scores.iter().zip(labels) {
        let cand = if c > 0 { 1.0 - s } else { -1.0 - s };
        let loss = hinge_loss(scores, labels, cand);
        let better = match best {
            None => true,
            Some((bl, bb)) => {
                loss < bl || (loss == bl && (cand.abs() < bb.abs() || (cand.abs() == bb.abs() && cand < bb)))
            }
        };
        if better {
            best = Some((loss, cand));
        }
    }
    best.map_or(0.0, |(_, b)| b)
}

fn check_labels(rows: usize, labels: &[i8]) -> Result<(), EvalError> {
    if rows != labels.len() {
        return Err(EvalError::InvalidArgument(format!("{rows} rows but {} labels", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| l.abs() != 1) {
        return Err(EvalError::InvalidArgument(format!("probe labels must be +1 or -1, got {l}")));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(EvalError::SingleClass { factor: usize::MAX });
    }
    Ok(())
}

/// Difference of class means, with `b` from [`hinge_bias`]; no scaling.
pub fn fit_raw(rows: &[&[f64]], labels: &[i8]) -> Result<ProbeModel, EvalError> {
    check_labels(rows.len(), labels)?;
    let dim = rows[0].len();
    let (mut pos, mut neg) = (vec![0.0; dim], vec![0.0; dim]);
    let (mut np, mut nn) = (0usize, 0usize);
    for (r, &c) in rows.iter().zip(labels) {
        let (acc, k) = if c > 0 { (&mut pos, &mut np) } else { (&mut neg, &mut nn) };
        *k += 1;
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    let w: Vec<f64> = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p / np as f64 - n / nn as f64)
        .collect();
    let scores: Vec<f64> = rows.iter().map(|r| dot(&w, r)).collect();
    let b = hinge_bias(&scores, labels);
    Ok(ProbeModel {
        w,
        b,
        scales: vec![1.0; dim],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-coordinate `1 / sqrt(var + ε)` from the given rows.
pub fn unit_variance_scales(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    let dim = rows.first().map_or(0, |r| r.len());
    (0..dim)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            1.0 / (var + VARIANCE_EPS).sqrt()
        })
        .collect()
}

fn scaled(rows: &[&[f64]], scales: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(scales).map(|(v, s)| v * s).collect())
        .collect()
}

impl ProbeModel {
    /// Scales every coordinate to unit variance, then [`fit_raw`].
    pub fn fit(rows: &[&[f64]], labels: &[i8]) -> Result<Self, EvalError> {
        check_labels(rows.len(), labels)?;
        let scales = unit_variance_scales(rows);
        let s = scaled(rows, &scales);
        let views: Vec<&[f64]> = s.iter().map(|r| r.as_slice()).collect();
        let raw = fit_raw(&views, labels)?;
        Ok(ProbeModel { scales, ..raw })
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.scales)
            .zip(&self.w)
            .map(|((v, s), w)| v * s * w)
            .sum::<f64>()
            + self.b
    }

    /// `+1` or `−1`; a zero score counts as positive.
    pub fn predict(&self, row: &[f64]) -> i8 {
        if self.score(row) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn accuracy(&self, rows: &[&[f64]], labels: &[i8]) -> f64 {
        let hits = rows.iter().zip(labels).filter(|(r, &c)| self.predict(r) == c).count();
        hits as f64 / rows.len().max(1) as f64
    }
}

/// Fits on the training rows and reports test accuracy.
pub fn linear_probe(
    train: &[&[f64]],
    train_labels: &[i8],
    test: &[&[f64]],
    test_labels: &[i8],
) -> Result<f64, EvalError> {
    if test.len() != test_labels.len() {
        return Err(EvalError::InvalidArgument("test rows and labels differ in count".into()));
    }
    Ok(ProbeModel::fit(train, train_labels)?.accuracy(test, test_labels))
}

/// Probe accuracy on one factor of the whole feature vector. Binary
/// factors use one probe; larger ones average one-vs-rest probes over the
/// classes.
pub fn probe_factor(train: &FeatureMatrix, test: &FeatureMatrix, factor: usize) -> Result<f64, EvalError> {
    let tr_labels = train.factor(factor)?;
    let te_labels = test.factor(factor)?;
    let classes = tr_labels.iter().chain(&te_labels).max().map_or(0, |m| m + 1);
    let tr_rows = train.rows();
    let te_rows = test.rows();
    let positives: Vec<usize> = if classes <= 2 { vec![1] } else { (0..classes).collect() };
    let mut total = 0.0;
    for &k in &positives {
        let c = |ls: &[usize]| ls.iter().map(|&l| if l == k { 1 } else { -1 }).collect::<Vec<i8>>();
        total += linear_probe(&tr_rows, &c(&tr_labels), &te_rows, &c(&te_labels)).map_err(|e| match e {
            EvalError::SingleClass { .. } => EvalError::SingleClass { factor },
            other => other,
        })?;
    }
    Ok(total / positives.len() as f64)
}
