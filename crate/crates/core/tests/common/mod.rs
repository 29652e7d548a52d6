//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use chunkmix::eval::hinge_loss;

/// AP of query `q` by explicit rank counting: item `r` sits at rank
/// `1 + #{j != q : d_j < d_r, or d_j == d_r and j < r}`.
pub fn brute_force_ap(points: &[Vec<f64>], labels: &[usize], q: usize) -> Option<f64> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let n = points.len();
    let d: Vec<f64> = (0..n).map(|j| dist(&points[q], &points[j])).collect();
    let rank = |r: usize| 1 + (0..n).filter(|&j| j != q && (d[j] < d[r] || (d[j] == d[r] && j < r))).count();
    let mut relevant: Vec<usize> = (0..n).filter(|&j| j != q && labels[j] == labels[q]).collect();
    if relevant.is_empty() {
        return None;
    }
    // accumulate in rank order so the float sum is reproduced exactly
    relevant.sort_by_key(|&r| rank(r));
    let mut total = 0.0;
    for &r in &relevant {
        let k = rank(r);
        let hits = relevant.iter().filter(|&&o| rank(o) <= k).count();
        total += hits as f64 / k as f64;
    }
    Some(total / relevant.len() as f64)
}

pub fn brute_force_map(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let aps: Vec<f64> = (0..points.len()).filter_map(|q| brute_force_ap(points, labels, q)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Class-mean difference with each mean computed in two passes: a first
/// pass for a provisional mean, a second accumulating the residuals.
pub fn two_pass_centroid(rows: &[Vec<f64>], labels: &[i8]) -> Vec<f64> {
    let dim = rows[0].len();
    let mean = |sign: i8| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &c)| c == sign).map(|(r, _)| r).collect();
        let k = members.len() as f64;
        (0..dim)
            .map(|j| {
                let m0 = members.iter().map(|r| r[j]).sum::<f64>() / k;
                m0 + members.iter().map(|r| r[j] - m0).sum::<f64>() / k
            })
            .collect()
    };
    let (p, n) = (mean(1), mean(-1));
    p.iter().zip(&n).map(|(a, b)| a - b).collect()
}

/// Hinge breakpoints `1 − sᵢ` (positives) and `−1 − sᵢ` (negatives), sorted.
pub fn breakpoints(scores: &[f64], labels: &[i8]) -> Vec<f64> {
    let mut b: Vec<f64> = scores.iter().zip(labels).map(|(s, &c)| c as f64 - s).collect();
    b.sort_by(f64::total_cmp);
    b
}

/// Best bias on a uniform grid spanning the breakpoints with margin.
pub fn grid_search_bias(scores: &[f64], labels: &[i8], steps: usize) -> f64 {
    let bp = breakpoints(scores, labels);
    let (lo, hi) = (bp[0] - 1.0, bp[bp.len() - 1] + 1.0);
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let b = lo + (hi - lo) * i as f64 / steps as f64;
        let l = hinge_loss(scores, labels, b);
        if l < best.0 {
            best = (l, b);
        }
    }
    best.1
}

/// Length of the breakpoint interval containing `b`.
pub fn gap_around(bp: &[f64], b: f64) -> f64 {
    let i = bp.partition_point(|&x| x <= b);
    match (i.checked_sub(1).map(|j| bp[j]), bp.get(i)) {
        (Some(lo), Some(&hi)) => hi - lo,
        _ => f64::INFINITY,
    }
}
