//! Gradient-boosted regression trees with squared loss.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.2,
            max_depth: 4,
            min_samples_leaf: 1,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn score(&self, sum: f64, n: usize) -> f64 {
        sum * sum / (n as f64 + self.params.lambda)
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.residual[i]).sum();
        let parent = self.score(total, n);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for feature in 0..self.x.first().map_or(0, Vec::len) {
            order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let mut left = 0.0;
            for (j, pair) in order.windows(2).enumerate() {
                left += self.residual[pair[0]];
                let (lo, hi) = (self.x[pair[0]][feature], self.x[pair[1]][feature]);
                let nl = j + 1;
                if lo == hi || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let gain = self.score(left, nl) + self.score(total - left, n - nl) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        feature,
                        threshold: lo + (hi - lo) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let sum: f64 = idx.iter().map(|&i| self.residual[i]).sum();
        self.nodes.push(TreeNode::Leaf(
            self.params.learning_rate * sum / (idx.len() as f64 + self.params.lambda),
        ));
        if depth >= self.params.max_depth {
            return id;
        }
        let Some(s) = self.best_split(idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: s.feature,
            threshold: s.threshold,
            left,
            right,
        };
        id
    }
}

/// Boosted tree regressor. Fitting and prediction are deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    params: GbdtParams,
    base: f64,
    trees: Vec<Tree>,
}

impl CostModel {
    pub fn new(params: GbdtParams) -> Self {
        Self {
            params,
            base: 0.0,
            trees: Vec::new(),
        }
    }

    /// Refits from scratch. An empty sample set leaves a zero predictor.
    pub fn fit(&mut self, x: &[Vec<f64>], y: &[f64]) {
        assert_eq!(x.len(), y.len(), "one target per feature row");
        self.trees.clear();
        self.base = if y.is_empty() {
            0.0
        } else {
            y.iter().sum::<f64>() / y.len() as f64
        };
        let mut pred = vec![self.base; y.len()];
        let idx: Vec<usize> = (0..y.len()).collect();
        for _ in 0..self.params.rounds {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            if residual.iter().all(|r| r.abs() < 1e-12) {
                break;
            }
            let mut b = Builder {
                x,
                residual: &residual,
                params: &self.params,
                nodes: Vec::new(),
            };
            b.grow(&idx, 0);
            let tree = Tree { nodes: b.nodes };
            for (p, row) in pred.iter_mut().zip(x) {
                *p += tree.predict(row);
            }
            self.trees.push(tree);
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::new(GbdtParams::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_predicts_its_target() {
        let mut m = CostModel::default();
        m.fit(&[vec![1.0, 2.0]], &[3.5]);
        assert_eq!(m.predict(&[1.0, 2.0]), 3.5);
        assert_eq!(m.predict(&[-9.0, 0.0]), 3.5);
    }

    #[test]
    fn empty_fit_is_zero() {
        let mut m = CostModel::default();
        m.fit(&[], &[]);
        assert_eq!(m.predict(&[1.0]), 0.0);
    }

    #[test]
    fn learns_a_step_and_an_interaction() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for a in 0..8 {
            for b in 0..8 {
                x.push(vec![a as f64, b as f64]);
                y.push(if a < 4 { 1.0 } else { 5.0 } + (a * b) as f64 / 8.0);
            }
        }
        let mut m = CostModel::new(GbdtParams {
            rounds: 300,
            ..GbdtParams::default()
        });
        m.fit(&x, &y);
        let err = x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).abs()).fold(0.0, f64::max);
        assert!(err < 0.25, "max training error {err}");
        // order of the extremes is preserved
        assert!(m.predict(&[0.0, 0.0]) < m.predict(&[7.0, 7.0]));
    }

    #[test]
    fn refit_is_deterministic() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 7) as f64, (i / 3) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 37) % 11) as f64).collect();
        let mut a = CostModel::default();
        let mut b = CostModel::default();
        a.fit(&x, &y);
        b.fit(&x, &y);
        assert_eq!(a, b);
    }
}
