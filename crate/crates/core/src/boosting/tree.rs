use serde::{Deserialize, Serialize};

use super::BoostConfig;
use crate::data::FeatureMatrix;
use crate::error::{ensure, Result};

/// Instance weights below this are raised to it when searching splits.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Relative gain below which a split is not worth taking.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Vec<f64> {
        (0..features.rows())
            .map(|i| self.predict_row(features.row(i)))
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Every child index points forward into the array and every node is
    /// reached exactly once.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(k) = stack.pop() {
            if k >= self.nodes.len() || seen[k] {
                return false;
            }
            seen[k] = true;
            if let Node::Split { left, right, .. } = self.nodes[k] {
                if left <= k || right <= k {
                    return false;
                }
                stack.push(left);
                stack.push(right);
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Row orderings by each feature plus a column-major copy of the matrix,
/// shared by every tree grown on the same features.
#[derive(Debug, Clone)]
pub struct Presorted {
    n: usize,
    columns: Vec<f64>,
    orders: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(features: &FeatureMatrix) -> Self {
        let n = features.rows();
        let mut columns = Vec::with_capacity(n * features.cols());
        for j in 0..features.cols() {
            columns.extend((0..n).map(|i| features.get(i, j)));
        }
        let orders = (0..features.cols())
            .map(|j| {
                let col = &columns[j * n..(j + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_unstable_by(|&a, &b| {
                    col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Presorted { n, columns, orders }
    }

    #[inline]
    fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j * self.n + i]
    }
}

struct Builder<'a> {
    features: &'a Presorted,
    targets: &'a [f64],
    weights: Vec<f64>,
    config: &'a BoostConfig,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    /// `sorted[j]` holds this node's rows ordered by feature `j`.
    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let (mut w_sum, mut wy_sum) = (0.0, 0.0);
        for &i in rows {
            let i = i as usize;
            w_sum += self.weights[i];
            wy_sum += self.weights[i] * self.targets[i];
        }
        let mean = wy_sum / w_sum;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });

        if depth >= self.config.max_depth || rows.len() < 2 * self.config.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&sorted, mean) else {
            return id;
        };

        for &i in rows {
            let i = i as usize;
            self.goes_left[i] = self.features.value(i, best.feature) <= best.threshold;
        }
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.into_iter().partition(|&i| self.goes_left[i as usize]);
            left.push(l);
            right.push(r);
        }
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&self, sorted: &[Vec<u32>], mean: f64) -> Option<BestSplit> {
        let rows = &sorted[0];
        let n = rows.len();
        let min_leaf = self.config.min_samples_leaf;
        let min_w = self.config.min_child_weight;

        // centred targets: the node SSE is Σ w c², the gain of a split is
        // S_L²/W_L + S_R²/W_R with S the weighted sum of centred targets
        let (mut w_total, mut s_total, mut sse) = (0.0, 0.0, 0.0);
        for &i in rows {
            let i = i as usize;
            let c = self.targets[i] - mean;
            w_total += self.weights[i];
            s_total += self.weights[i] * c;
            sse += self.weights[i] * c * c;
        }
        if !(sse > 0.0) {
            return None;
        }
        let parent = s_total * s_total / w_total;

        let mut best: Option<BestSplit> = None;
        for (j, order) in sorted.iter().enumerate() {
            let (mut w_l, mut s_l) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = order[k] as usize;
                w_l += self.weights[i];
                s_l += self.weights[i] * (self.targets[i] - mean);
                let n_l = k + 1;
                if n_l < min_leaf {
                    continue;
                }
                if n - n_l < min_leaf {
                    break;
                }
                let v = self.features.value(i, j);
                let next = self.features.value(order[k + 1] as usize, j);
                if v == next {
                    continue;
                }
                let w_r = w_total - w_l;
                if w_l < min_w || w_r < min_w {
                    continue;
                }
                let s_r = s_total - s_l;
                let gain = s_l * s_l / w_l + s_r * s_r / w_r - parent;
                // a later candidate must beat the incumbent by more than rounding, so
                // partitions with equal gain keep the documented tie order
                let margin = MIN_RELATIVE_GAIN * sse;
                if gain > margin && best.as_ref().is_none_or(|b| gain > b.gain + margin) {
                    let mut threshold = 0.5 * (v + next);
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        feature: j,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Greedy top-down weighted least-squares tree. Splits maximize the reduction
/// in weighted SSE over thresholds at midpoints between distinct sorted
/// values; each leaf holds the weighted mean of its targets. Ties go to the
/// lowest feature index, then the lowest threshold.
pub fn fit_tree(
    features: &FeatureMatrix,
    targets: &[f64],
    instance_weights: &[f64],
    config: &BoostConfig,
) -> Result<RegressionTree> {
    fit_tree_presorted(&Presorted::new(features), targets, instance_weights, config)
}

/// [`fit_tree`] with the per-feature orderings computed once by the caller.
pub fn fit_tree_presorted(
    features: &Presorted,
    targets: &[f64],
    instance_weights: &[f64],
    config: &BoostConfig,
) -> Result<RegressionTree> {
    let n = features.n;
    ensure!(
        targets.len() == n,
        "targets has {} entries for {n} rows",
        targets.len()
    );
    ensure!(
        instance_weights.len() == n,
        "instance_weights has {} entries for {n} rows",
        instance_weights.len()
    );
    ensure!(
        targets.iter().all(|t| t.is_finite()),
        "tree targets must be finite"
    );
    ensure!(
        instance_weights.iter().all(|w| *w >= 0.0 && w.is_finite()),
        "instance weights must be finite and non-negative"
    );
    ensure!(
        instance_weights.iter().any(|&w| w > 0.0),
        "at least one instance weight must be positive"
    );

    let weights: Vec<f64> = instance_weights
        .iter()
        .map(|w| w.max(WEIGHT_FLOOR))
        .collect();
    if weights.iter().sum::<f64>() < config.min_child_weight {
        let (mut ws, mut wy) = (0.0, 0.0);
        for (w, t) in weights.iter().zip(targets) {
            ws += w;
            wy += w * t;
        }
        return Ok(RegressionTree::leaf(wy / ws));
    }

    let sorted = features.orders.clone();
    let mut b = Builder {
        features,
        targets,
        weights,
        config,
        nodes: Vec::new(),
        goes_left: vec![false; n],
    };
    b.build(sorted, 0);
    Ok(RegressionTree { nodes: b.nodes })
}
