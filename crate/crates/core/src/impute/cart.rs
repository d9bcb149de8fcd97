//! Greedy CART: squared-error splits for continuous targets, Gini for binary
//! ones. Leaves predict the mean target, which for binary targets is the
//! class-1 frequency.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitCriterion {
    SquaredError,
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a Matrix,
    t: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    criterion: SplitCriterion,
    nodes: Vec<Node>,
}

/// Impurity of a node from its count, target sum and sum of squares.
fn impurity(criterion: SplitCriterion, n: f64, s: f64, ss: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match criterion {
        SplitCriterion::SquaredError => ss - s * s / n,
        SplitCriterion::Gini => {
            let p = s / n;
            n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
        }
    }
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.t[i]).sum::<f64>() / n as f64;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            return at;
        };
        let mut left: Vec<usize> = idx.iter().copied().filter(|&i| self.x.get(i, feature) <= threshold).collect();
        let mut right: Vec<usize> = idx.iter().copied().filter(|&i| self.x.get(i, feature) > threshold).collect();
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        at
    }

    fn best_split(&self, idx: &mut [usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let (tot_s, tot_ss) = idx
            .iter()
            .fold((0.0, 0.0), |(s, ss), &i| (s + self.t[i], ss + self.t[i] * self.t[i]));
        let parent = impurity(self.criterion, n as f64, tot_s, tot_ss);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x.cols() {
            idx.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)).then(a.cmp(&b)));
            let (mut s, mut ss) = (0.0, 0.0);
            for k in 0..n - 1 {
                let ti = self.t[idx[k]];
                s += ti;
                ss += ti * ti;
                let nl = k + 1;
                let (xa, xb) = (self.x.get(idx[k], f), self.x.get(idx[k + 1], f));
                if nl < self.min_leaf || n - nl < self.min_leaf || xa == xb {
                    continue;
                }
                let child = impurity(self.criterion, nl as f64, s, ss)
                    + impurity(self.criterion, (n - nl) as f64, tot_s - s, tot_ss - ss);
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (xa + xb)));
                }
            }
        }
        best.map(|(_, f, thr)| (f, thr))
    }
}

impl RegressionTree {
    pub fn fit(x: &Matrix, t: &[f64], max_depth: usize, min_leaf: usize, criterion: SplitCriterion) -> Self {
        let mut b = Builder {
            x,
            t,
            max_depth,
            min_leaf: min_leaf.max(1),
            criterion,
            nodes: Vec::new(),
        };
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        if idx.is_empty() {
            return Self {
                nodes: vec![Node::Leaf(0.0)],
            };
        }
        b.build(&mut idx, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_learned() {
        let rows: Vec<[f64; 2]> = (0..100).map(|i| [i as f64 / 100.0, (i % 7) as f64]).collect();
        let x = Matrix::from_rows(2, &rows).unwrap();
        let t: Vec<f64> = rows.iter().map(|r| if r[0] < 0.5 { 1.0 } else { 3.0 }).collect();
        let tree = RegressionTree::fit(&x, &t, 6, 5, SplitCriterion::SquaredError);
        assert_eq!(tree.n_leaves(), 2);
        assert_eq!(tree.predict(&[0.2, 0.0]), 1.0);
        assert_eq!(tree.predict(&[0.9, 0.0]), 3.0);
    }

    #[test]
    fn gini_leaves_are_frequencies() {
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [i as f64]).collect();
        let x = Matrix::from_rows(1, &rows).unwrap();
        let t: Vec<f64> = (0..40).map(|i| if i >= 20 { 1.0 } else { 0.0 }).collect();
        let tree = RegressionTree::fit(&x, &t, 3, 5, SplitCriterion::Gini);
        assert_eq!(tree.predict(&[3.0]), 0.0);
        assert_eq!(tree.predict(&[30.0]), 1.0);
    }

    #[test]
    fn min_leaf_and_depth_limit_growth() {
        let rows: Vec<[f64; 1]> = (0..30).map(|i| [i as f64]).collect();
        let x = Matrix::from_rows(1, &rows).unwrap();
        let t: Vec<f64> = (0..30).map(|i| (i * i) as f64).collect();
        assert_eq!(RegressionTree::fit(&x, &t, 0, 1, SplitCriterion::SquaredError).n_leaves(), 1);
        assert_eq!(RegressionTree::fit(&x, &t, 10, 20, SplitCriterion::SquaredError).n_leaves(), 1);
        assert!(RegressionTree::fit(&x, &t, 10, 10, SplitCriterion::SquaredError).n_leaves() <= 3);
    }
}
