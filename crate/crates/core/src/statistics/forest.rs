//! Random forests of CART trees with impurity-decrease importance.
//!
//! Regression trees split on variance, classification trees on Gini
//! impurity. Each tree sees a bootstrap sample and `mtry` candidate features
//! per node. A feature's importance is its total weighted impurity decrease,
//! averaged over trees.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForestTask {
    Regression,
    Classification(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    /// Candidate features per split; `None` takes `ceil(sqrt(q))` for
    /// classification and `ceil(q / 3)` for regression.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 100, mtry: None, min_leaf: 5, bootstrap: true, max_depth: None }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<f64>),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    task: ForestTask,
    trees: Vec<Tree>,
    importance: DVector<f64>,
    oob: DMatrix<f64>,
}

/// Per-node scratch for the split search.
struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    task: ForestTask,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    importance: Vec<f64>,
    n_total: f64,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        match self.task {
            ForestTask::Regression => {
                vec![rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64]
            }
            ForestTask::Classification(k) => {
                let mut p = vec![0.0; k];
                for &i in rows {
                    p[self.y[i] as usize] += 1.0;
                }
                let n = rows.len() as f64;
                p.iter_mut().for_each(|v| *v /= n);
                p
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>, rng: &mut ChaCha8Rng) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(Vec::new()));
        let split = if rows.len() >= 2 * self.min_leaf && depth < self.max_depth {
            self.best_split(&rows, rng)
        } else {
            None
        };
        match split {
            None => nodes[id] = Node::Leaf(self.leaf_value(&rows)),
            Some(s) => {
                self.importance[s.feature] += s.gain / self.n_total;
                let left = self.grow(s.left, depth + 1, nodes, rng);
                let right = self.grow(s.right, depth + 1, nodes, rng);
                nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let q = self.x.ncols();
        let n = rows.len();
        let classes = match self.task {
            ForestTask::Regression => 0,
            ForestTask::Classification(k) => k,
        };
        let mut best: Option<(usize, f64, f64, usize)> = None; // feature, threshold, gain, left size
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut left_counts = vec![0.0; classes];
        let mut total_counts = vec![0.0; classes];
        let (mut total_sum, mut total_sq) = (0.0, 0.0);
        for &i in rows {
            let v = self.y[i];
            if classes > 0 {
                total_counts[v as usize] += 1.0;
            } else {
                total_sum += v;
            }
        }
        if classes > 0 {
            total_sq = total_counts.iter().map(|c| c * c).sum::<f64>();
        }
        let parent = if classes > 0 { total_sq / n as f64 } else { total_sum * total_sum / n as f64 };
        for feature in index::sample(rng, q, self.mtry.min(q)).into_iter() {
            order.clear();
            order.extend(rows.iter().map(|&i| (self.x[(i, feature)], i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            left_counts.iter_mut().for_each(|c| *c = 0.0);
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            let mut right_sq = total_sq;
            for pos in 0..n - 1 {
                let v = self.y[order[pos].1];
                if classes > 0 {
                    let c = v as usize;
                    let (l, r) = (left_counts[c], total_counts[c] - left_counts[c]);
                    left_sq += 2.0 * l + 1.0;
                    right_sq -= 2.0 * r - 1.0;
                    left_counts[c] += 1.0;
                } else {
                    left_sum += v;
                }
                let nl = pos + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf || order[pos].0 == order[pos + 1].0 {
                    continue;
                }
                let children = if classes > 0 {
                    left_sq / nl as f64 + right_sq / nr as f64
                } else {
                    let right_sum = total_sum - left_sum;
                    left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                };
                let gain = children - parent;
                if gain > 1e-12 * parent.abs().max(1.0) && best.is_none_or(|b| gain > b.2) {
                    let threshold = 0.5 * (order[pos].0 + order[pos + 1].0);
                    best = Some((feature, threshold, gain, nl));
                }
            }
        }
        let (feature, threshold, gain, _) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        Some(BestSplit { feature, threshold, gain, left, right })
    }
}

impl Forest {
    /// Fits a forest. For classification, `target` holds labels
    /// `0..classes` stored as floats.
    pub fn fit(
        design: &DMatrix<f64>,
        target: &DVector<f64>,
        task: ForestTask,
        params: &ForestParams,
        seed: SeedStream,
    ) -> Result<Forest> {
        let (n, q) = design.shape();
        if n != target.len() || n == 0 || q == 0 {
            return Err(invalid("forest: inconsistent or empty inputs"));
        }
        if params.trees == 0 || params.min_leaf == 0 {
            return Err(invalid("forest needs trees >= 1 and min_leaf >= 1"));
        }
        if let ForestTask::Classification(k) = task {
            if target.iter().any(|&v| v < 0.0 || v >= k as f64 || v.fract() != 0.0) {
                return Err(invalid(format!("forest labels must be integers in 0..{k}")));
            }
        }
        let mtry = params.mtry.unwrap_or(match task {
            ForestTask::Classification(_) => (q as f64).sqrt().ceil() as usize,
            ForestTask::Regression => q.div_ceil(3),
        });
        if mtry == 0 {
            return Err(invalid("mtry must be at least 1"));
        }
        let width = match task {
            ForestTask::Regression => 1,
            ForestTask::Classification(k) => k,
        };
        let y: Vec<f64> = target.iter().copied().collect();
        let mut builder = Builder {
            x: design,
            y: &y,
            task,
            mtry,
            min_leaf: params.min_leaf,
            max_depth: params.max_depth.unwrap_or(usize::MAX),
            importance: vec![0.0; q],
            n_total: n as f64,
        };
        let mut trees = Vec::with_capacity(params.trees);
        let mut oob_sum = DMatrix::<f64>::zeros(n, width);
        let mut oob_count = vec![0usize; n];
        let mut row = vec![0.0; q];
        for t in 0..params.trees {
            let mut rng = seed.derive(t as u64).rng();
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            rows.iter().for_each(|&i| in_bag[i] = true);
            let mut nodes = Vec::new();
            builder.grow(rows, 0, &mut nodes, &mut rng);
            let tree = Tree { nodes };
            for i in (0..n).filter(|&i| !in_bag[i]) {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = design[(i, j)]);
                for (c, v) in tree.leaf(&row).iter().enumerate() {
                    oob_sum[(i, c)] += v;
                }
                oob_count[i] += 1;
            }
            trees.push(tree);
        }
        let importance = DVector::from_vec(builder.importance) / params.trees as f64;
        let mut forest = Forest { task, trees, importance, oob: DMatrix::zeros(n, width) };
        // rows that were never out of bag fall back to the full-forest prediction
        for i in 0..n {
            if oob_count[i] > 0 {
                for c in 0..width {
                    forest.oob[(i, c)] = oob_sum[(i, c)] / oob_count[i] as f64;
                }
            } else {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = design[(i, j)]);
                let p = forest.predict_row(&row);
                forest.oob.row_mut(i).copy_from_slice(&p);
            }
        }
        Ok(forest)
    }

    pub fn task(&self) -> ForestTask {
        self.task
    }

    /// Mean impurity decrease per feature.
    pub fn importance(&self) -> &DVector<f64> {
        &self.importance
    }

    fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.oob.ncols()];
        for tree in &self.trees {
            for (a, v) in acc.iter_mut().zip(tree.leaf(row)) {
                *a += v;
            }
        }
        let t = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
        acc
    }

    /// Predictions: one column for regression, class probabilities otherwise.
    pub fn predict(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(design.nrows(), self.oob.ncols());
        let mut row = vec![0.0; design.ncols()];
        for i in 0..design.nrows() {
            row.iter_mut().enumerate().for_each(|(j, v)| *v = design[(i, j)]);
            out.row_mut(i).copy_from_slice(&self.predict_row(&row));
        }
        out
    }

    /// Out-of-bag predictions on the training rows.
    pub fn oob_predictions(&self) -> &DMatrix<f64> {
        &self.oob
    }
}
