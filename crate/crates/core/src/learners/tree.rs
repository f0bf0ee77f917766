//! CART trees. Classification trees split on the largest decrease in Gini
//! impurity; the same node layout backs the regression trees used by
//! gradient boosting.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{LearnError, Matrix, TrainMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// Flat binary tree; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Midpoint threshold between two distinct sorted values, nudged so that
/// `lo` goes left and `hi` goes right under rounding.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Count-weighted Gini impurity, `n * (1 - p0^2 - p1^2)`.
fn weighted_gini(n0: f64, n1: f64) -> f64 {
    let n = n0 + n1;
    if n == 0.0 {
        0.0
    } else {
        n - (n0 * n0 + n1 * n1) / n
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features drawn per split; `None` searches all.
    pub mtry: Option<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
    n_left: usize,
}

/// Grows a classification tree on `rows` (indices into `x`, repeats allowed
/// for bootstrap samples). Leaves hold the class-1 proportion. Each accepted
/// split's Gini decrease is added to `importance[feature]`.
pub(crate) fn grow_classification(
    x: &Matrix,
    y: &[u8],
    rows: Vec<usize>,
    params: GrowParams,
    mut rng: Option<&mut Rng>,
    importance: &mut [f64],
) -> Tree {
    let mut nodes = Vec::new();
    let mut buf: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
    // (rows, depth, node slot)
    let mut stack = vec![(rows, 0usize, 0usize)];
    nodes.push(Node::Leaf { value: 0.0 });
    while let Some((rows, depth, slot)) = stack.pop() {
        let n1 = rows.iter().filter(|&&r| y[r] == 1).count();
        let n = rows.len();
        let leaf = Node::Leaf {
            value: n1 as f64 / n as f64,
        };
        let pure = n1 == 0 || n1 == n;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * params.min_leaf.max(1) {
            nodes[slot] = leaf;
            continue;
        }
        let features: Vec<usize> = match (params.mtry, rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < x.cols() => sample(rng, x.cols(), m).into_vec(),
            _ => (0..x.cols()).collect(),
        };
        let parent = weighted_gini((n - n1) as f64, n1 as f64);
        let mut best: Option<BestSplit> = None;
        for &j in &features {
            buf.clear();
            buf.extend(rows.iter().map(|&r| (x.get(r, j), y[r])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left1 = 0usize;
            for i in 0..n - 1 {
                left1 += buf[i].1 as usize;
                let n_left = i + 1;
                if buf[i].0 == buf[i + 1].0 || n_left < params.min_leaf || n - n_left < params.min_leaf {
                    continue;
                }
                let gl = weighted_gini((n_left - left1) as f64, left1 as f64);
                let gr = weighted_gini((n - n_left - (n1 - left1)) as f64, (n1 - left1) as f64);
                let decrease = parent - gl - gr;
                if decrease > 1e-12 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    best = Some(BestSplit {
                        feature: j,
                        threshold: midpoint(buf[i].0, buf[i + 1].0),
                        decrease,
                        n_left,
                    });
                }
            }
        }
        let Some(split) = best else {
            nodes[slot] = leaf;
            continue;
        };
        importance[split.feature] += split.decrease;
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| x.get(r, split.feature) <= split.threshold);
        debug_assert_eq!(left_rows.len(), split.n_left);
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[slot] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: left as u32,
            right: (left + 1) as u32,
        };
        stack.push((right_rows, depth + 1, left + 1));
        stack.push((left_rows, depth + 1, left));
    }
    Tree { nodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub tree: Tree,
    pub n_features: usize,
    /// Total Gini decrease per feature.
    pub importance: Vec<f64>,
}

impl TreeModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        self.tree.predict_row(row)
    }
}

/// Single CART tree on all rows and all features. A single-class input
/// yields a root leaf.
pub fn fit_tree(train: &TrainMatrix, spec: &TreeSpec) -> Result<super::Model, LearnError> {
    let mut importance = vec![0.0; train.n_features()];
    let tree = grow_classification(
        train.x(),
        train.y(),
        (0..train.n_obs()).collect(),
        GrowParams {
            max_depth: spec.max_depth,
            min_leaf: spec.min_leaf.max(1),
            mtry: None,
        },
        None,
        &mut importance,
    );
    Ok(super::Model::Tree(TreeModel {
        tree,
        n_features: train.n_features(),
        importance,
    }))
}
