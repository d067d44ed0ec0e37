//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rxlearn::data::FeatureMatrix;

/// Weighted sum of squares around the weighted mean, computed directly.
pub fn weighted_sse(y: &[f64], w: &[f64]) -> f64 {
    let ws: f64 = w.iter().sum();
    let m = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / ws;
    y.iter().zip(w).map(|(y, w)| w * (y - m) * (y - m)).sum()
}

pub fn weighted_mean(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / w.iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
    pub left: f64,
    pub right: f64,
}

/// Tries every feature and every midpoint between adjacent distinct values,
/// partitions the rows from scratch and keeps the smallest child SSE. Earlier
/// candidates (lower feature, then lower threshold) win exact ties.
pub fn brute_force_stump(
    x: &FeatureMatrix,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    min_leaf: usize,
) -> Option<Stump> {
    let mut best: Option<Stump> = None;
    for j in 0..x.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x.get(i, j)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let t = 0.5 * (pair[0] + pair[1]);
            let (mut yl, mut wl, mut yr, mut wr) = (vec![], vec![], vec![], vec![]);
            for &i in rows {
                if x.get(i, j) <= t {
                    yl.push(y[i]);
                    wl.push(w[i]);
                } else {
                    yr.push(y[i]);
                    wr.push(w[i]);
                }
            }
            if yl.len() < min_leaf || yr.len() < min_leaf {
                continue;
            }
            let sse = weighted_sse(&yl, &wl) + weighted_sse(&yr, &wr);
            if best.is_none_or(|b| sse < b.sse) {
                best = Some(Stump {
                    feature: j,
                    threshold: t,
                    sse,
                    left: weighted_mean(&yl, &wl),
                    right: weighted_mean(&yr, &wr),
                });
            }
        }
    }
    best
}

/// Plain recursive CART used to check the weighted tree under unit weights.
pub enum Cart {
    Leaf(f64),
    Split(usize, f64, Box<Cart>, Box<Cart>),
}

impl Cart {
    pub fn fit(x: &FeatureMatrix, y: &[f64], max_depth: usize, min_leaf: usize) -> Cart {
        let rows: Vec<usize> = (0..x.rows()).collect();
        Self::grow(x, y, &rows, max_depth, min_leaf)
    }

    fn grow(x: &FeatureMatrix, y: &[f64], rows: &[usize], depth: usize, min_leaf: usize) -> Cart {
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let ones = vec![1.0; ys.len()];
        let mean = weighted_mean(&ys, &ones);
        let sse = weighted_sse(&ys, &ones);
        if depth == 0 || rows.len() < 2 * min_leaf || sse <= 0.0 {
            return Cart::Leaf(mean);
        }
        let w = vec![1.0; y.len()];
        match brute_force_stump(x, rows, y, &w, min_leaf) {
            Some(s) if sse - s.sse > 1e-9 * sse => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| x.get(i, s.feature) <= s.threshold);
                Cart::Split(
                    s.feature,
                    s.threshold,
                    Box::new(Self::grow(x, y, &l, depth - 1, min_leaf)),
                    Box::new(Self::grow(x, y, &r, depth - 1, min_leaf)),
                )
            }
            _ => Cart::Leaf(mean),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Cart::Leaf(v) => *v,
            Cart::Split(j, t, l, r) => {
                if x[*j] <= *t {
                    l.predict(x)
                } else {
                    r.predict(x)
                }
            }
        }
    }
}

/// Random stump-search instance: `n` rows, `d` features, positive weights.
/// Every third instance rounds features to one decimal to create ties.
pub fn random_instance(seed: u64, n: usize, d: usize) -> (FeatureMatrix, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = seed.is_multiple_of(3);
    let vals: Vec<f64> = (0..n * d)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if coarse {
                (v * 10.0).round() / 10.0
            } else {
                v
            }
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let w = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
    (FeatureMatrix::new(n, d, vals).unwrap(), y, w)
}
