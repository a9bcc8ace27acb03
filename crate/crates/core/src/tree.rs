//! Greedy variance-reduction regression trees used as learned intervention rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_LEAF: usize = 5;
pub const DEFAULT_MAX_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        prediction: f64,
        count: usize,
    },
    /// Routes `x[feature] < threshold` left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn route(&self, x: &[f64]) -> &TreeNode {
        match self {
            TreeNode::Leaf { .. } => self,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] < *threshold {
                    left.route(x)
                } else {
                    right.route(x)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

/// A fitted tree plus the training-target mean it is compared against. Targets are
/// losses, so the rule fires where the tree predicts a worse than average outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRule {
    pub root: TreeNode,
    pub n_features: usize,
    pub max_depth: usize,
    pub baseline: f64,
}

impl TreeRule {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        match self.root.route(x) {
            TreeNode::Leaf { prediction, .. } => Ok(*prediction),
            TreeNode::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    pub fn fires(&self, x: &[f64]) -> Result<bool> {
        Ok(self.predict(x)? > self.baseline)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaves(&self) -> usize {
        self.root.leaves()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_count: usize,
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len() as f64
}

/// Exhaustive search over midpoints between consecutive distinct feature values,
/// keeping both sides at least `min_leaf` long. Ties go to the lower feature index,
/// then the lower threshold.
pub(crate) fn best_split(xs: &[&[f64]], ys: &[f64], min_leaf: usize) -> Option<BestSplit> {
    let n = ys.len();
    if n < 2 * min_leaf {
        return None;
    }
    let mu = mean(ys);
    let centered: Vec<f64> = ys.iter().map(|y| y - mu).collect();
    let total_sse: f64 = centered.iter().map(|c| c * c).sum();
    let mut best: Option<BestSplit> = None;
    let p = xs[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for f in 0..p {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        let sum_all: f64 = centered.iter().sum();
        for i in 1..n {
            let c = centered[order[i - 1]];
            sum_l += c;
            sq_l += c * c;
            let (lo, hi) = (xs[order[i - 1]][f], xs[order[i]][f]);
            if i < min_leaf || n - i < min_leaf || lo >= hi {
                continue;
            }
            let sum_r = sum_all - sum_l;
            let sq_r = total_sse - sq_l;
            let sse = (sq_l - sum_l * sum_l / i as f64) + (sq_r - sum_r * sum_r / (n - i) as f64);
            let gain = total_sse - sse;
            let better = match best {
                None => true,
                Some(b) => gain > b.gain,
            };
            if better {
                best = Some(BestSplit {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    gain,
                    left_count: i,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12 * total_sse.max(f64::MIN_POSITIVE) && total_sse > 0.0)
}

fn grow(xs: &[&[f64]], ys: &[f64], depth: usize, max_depth: usize, min_leaf: usize) -> TreeNode {
    let leaf = TreeNode::Leaf {
        prediction: mean(ys),
        count: ys.len(),
    };
    if depth >= max_depth {
        return leaf;
    }
    let Some(split) = best_split(xs, ys, min_leaf) else {
        return leaf;
    };
    let (mut lx, mut ly, mut rx, mut ry) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (x, y) in xs.iter().zip(ys) {
        if x[split.feature] < split.threshold {
            lx.push(*x);
            ly.push(*y);
        } else {
            rx.push(*x);
            ry.push(*y);
        }
    }
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(&lx, &ly, depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(&rx, &ry, depth + 1, max_depth, min_leaf)),
    }
}

/// CART regression on (feature vector, loss) pairs with leaves of at least five.
pub fn fit_tree_rule(features: &[Vec<f64>], targets: &[f64], max_depth: usize) -> Result<TreeRule> {
    if features.len() != targets.len() {
        return Err(Error::InvalidConfig(format!(
            "{} feature rows for {} targets",
            features.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 * MIN_LEAF {
        return Err(Error::InvalidConfig(format!(
            "tree needs at least {} samples, got {}",
            2 * MIN_LEAF,
            targets.len()
        )));
    }
    let p = features[0].len();
    for row in features {
        if row.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: row.len(),
            });
        }
    }
    if features
        .iter()
        .flatten()
        .chain(targets)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidConfig(
            "tree training data must be finite".into(),
        ));
    }
    let xs: Vec<&[f64]> = features.iter().map(|r| r.as_slice()).collect();
    Ok(TreeRule {
        root: grow(&xs, targets, 0, max_depth, MIN_LEAF),
        n_features: p,
        max_depth,
        baseline: mean(targets),
    })
}
