//! Gradient boosting on the logistic loss. Every round fits a depth-limited
//! regression tree to the residuals `y - p` and sets each leaf to a Newton
//! step, shrunk by the learning rate.

use serde::{Deserialize, Serialize};

use super::tree::{midpoint, Node, Tree};
use super::{logistic_loss, sigmoid, LearnError, Matrix, Model, TrainMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmSpec {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbmSpec {
    fn default() -> Self {
        Self {
            rounds: 500,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    /// Log-odds of the training base rate.
    pub init: f64,
    pub learning_rate: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

impl GbmModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.score(row))
    }
}

pub fn fit_gbm(train: &TrainMatrix, spec: &GbmSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::Gbm(fit_gbm_traced(train, spec, seed)?.0))
}

/// Fits the model and returns the mean training loss before the first and
/// after every round.
pub fn fit_gbm_traced(
    train: &TrainMatrix,
    spec: &GbmSpec,
    seed: u64,
) -> Result<(GbmModel, Vec<f64>), LearnError> {
    if !(spec.learning_rate.is_finite() && spec.learning_rate >= 0.0) {
        return Err(LearnError::InvalidData("learning rate must be finite and non-negative".into()));
    }
    let x = train.x();
    let y = train.y();
    let n = train.n_obs();
    let rate = train.base_rate().clamp(1e-12, 1.0 - 1e-12);
    let init = (rate / (1.0 - rate)).ln();
    let mut score = vec![init; n];
    let order: Vec<Vec<u32>> = (0..x.cols())
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mean_loss = |s: &[f64]| s.iter().zip(y).map(|(&z, &c)| logistic_loss(z, c)).sum::<f64>() / n as f64;
    let mut trace = vec![mean_loss(&score)];
    let mut trees = Vec::with_capacity(spec.rounds);
    let mut resid = vec![0.0; n];
    let mut node_of = vec![0usize; n];
    for _ in 0..spec.rounds {
        for i in 0..n {
            resid[i] = f64::from(y[i]) - sigmoid(score[i]);
        }
        let mut nodes = grow_regression(x, &order, &resid, spec.max_depth, spec.min_leaf.max(1), &mut node_of);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, &leaf) in node_of.iter().enumerate() {
            members[leaf].push(i);
        }
        for (slot, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let (num, den) = rows.iter().fold((0.0, 0.0), |(a, b), &i| {
                let p = sigmoid(score[i]);
                (a + resid[i], b + p * (1.0 - p))
            });
            let mut step = spec.learning_rate * num / den.max(1e-12);
            // halve until this leaf's rows do not get worse
            let before: f64 = rows.iter().map(|&i| logistic_loss(score[i], y[i])).sum();
            let mut tries = 0;
            while step != 0.0 {
                let after: f64 = rows.iter().map(|&i| logistic_loss(score[i] + step, y[i])).sum();
                if after <= before {
                    break;
                }
                tries += 1;
                step = if tries > 60 { 0.0 } else { step / 2.0 };
            }
            for &i in rows {
                score[i] += step;
            }
            nodes[slot] = Node::Leaf { value: step };
        }
        trees.push(Tree::from_nodes(nodes));
        trace.push(mean_loss(&score));
    }
    Ok((
        GbmModel {
            init,
            learning_rate: spec.learning_rate,
            trees,
            n_features: x.cols(),
            seed,
        },
        trace,
    ))
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct Running {
    sum: f64,
    count: usize,
    prev: f64,
}

/// Level-wise least-squares regression tree over presorted feature orders.
/// On return `node_of[i]` is the leaf slot of row `i`; leaf values are left
/// for the caller to fill.
fn grow_regression(
    x: &Matrix,
    order: &[Vec<u32>],
    resid: &[f64],
    max_depth: usize,
    min_leaf: usize,
    node_of: &mut [usize],
) -> Vec<Node> {
    let n = resid.len();
    node_of.iter_mut().for_each(|v| *v = 0);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut active = vec![0usize];
    for _ in 0..max_depth {
        if active.is_empty() {
            break;
        }
        let mut slot_to_active = vec![usize::MAX; nodes.len()];
        for (a, &s) in active.iter().enumerate() {
            slot_to_active[s] = a;
        }
        let mut total = vec![(0.0f64, 0usize); active.len()];
        for i in 0..n {
            let a = slot_to_active[node_of[i]];
            if a != usize::MAX {
                total[a].0 += resid[i];
                total[a].1 += 1;
            }
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut run = vec![Running { sum: 0.0, count: 0, prev: f64::NAN }; active.len()];
        for (j, idx) in order.iter().enumerate() {
            run.iter_mut().for_each(|r| *r = Running { sum: 0.0, count: 0, prev: f64::NAN });
            for &r in idx {
                let r = r as usize;
                let a = slot_to_active[node_of[r]];
                if a == usize::MAX {
                    continue;
                }
                let v = x.get(r, j);
                let st = &mut run[a];
                let (s, c) = total[a];
                if st.count >= min_leaf && c - st.count >= min_leaf && v != st.prev {
                    let sr = s - st.sum;
                    let gain = st.sum * st.sum / st.count as f64 + sr * sr / (c - st.count) as f64
                        - s * s / c as f64;
                    if gain > 1e-12 && best[a].is_none_or(|b| gain > b.gain) {
                        best[a] = Some(Candidate {
                            gain,
                            feature: j,
                            threshold: midpoint(st.prev, v),
                        });
                    }
                }
                st.sum += resid[r];
                st.count += 1;
                st.prev = v;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![(0usize, 0usize); active.len()];
        for (a, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[active[a]] = Node::Split {
                    feature: c.feature as u32,
                    threshold: c.threshold,
                    left: left as u32,
                    right: (left + 1) as u32,
                };
                children[a] = (left, left + 1);
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..n {
            let a = slot_to_active[node_of[i]];
            if a != usize::MAX {
                if let Some(c) = best[a] {
                    node_of[i] = if x.get(i, c.feature) <= c.threshold { children[a].0 } else { children[a].1 };
                }
            }
        }
        active = next;
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testdata::{accuracy, blobs};

    #[test]
    fn zero_rate_predicts_base_rate() {
        let data = blobs(10, 3, 1.0, 1.0, 1).subset(&(0..17).collect::<Vec<_>>());
        let spec = GbmSpec { learning_rate: 0.0, rounds: 20, ..GbmSpec::default() };
        let model = fit_gbm(&data, &spec, 0).unwrap();
        for p in model.predict_proba(data.x()).unwrap() {
            assert!((p - 7.0 / 17.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let data = blobs(40, 5, 1.0, 1.0, 3);
        for rate in [0.1, 1.0, 5.0] {
            let spec = GbmSpec { learning_rate: rate, rounds: 60, ..GbmSpec::default() };
            let (_, trace) = fit_gbm_traced(&data, &spec, 0).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "rate {rate}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = blobs(50, 3, 8.0, 0.5, 4);
        let spec = GbmSpec { rounds: 100, ..GbmSpec::default() };
        assert_eq!(accuracy(&fit_gbm(&data, &spec, 0).unwrap(), &data), 1.0);
    }

    #[test]
    fn trees_respect_depth() {
        let data = blobs(50, 4, 1.0, 1.0, 5);
        let spec = GbmSpec { rounds: 10, max_depth: 2, ..GbmSpec::default() };
        let Model::Gbm(m) = fit_gbm(&data, &spec, 0).unwrap() else { unreachable!() };
        assert!(m.trees.iter().all(|t| t.depth() <= 2 && t.n_leaves() <= 4));
    }

    #[test]
    fn regression_tree_matches_exhaustive_first_split() {
        // root split must be the best least-squares split over all thresholds
        let data = blobs(15, 3, 0.5, 1.0, 9);
        let x = data.x();
        let resid: Vec<f64> = data.y().iter().map(|&v| f64::from(v) - 0.5).collect();
        let order: Vec<Vec<u32>> = (0..3)
            .map(|j| {
                let mut idx: Vec<u32> = (0..30).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)));
                idx
            })
            .collect();
        let mut node_of = vec![0; 30];
        let nodes = grow_regression(x, &order, &resid, 1, 1, &mut node_of);
        let Node::Split { feature, threshold, .. } = nodes[0] else { panic!("no split") };
        let sse = |j: usize, t: f64| {
            let (l, r): (Vec<f64>, Vec<f64>) = (0..30).map(|i| (x.get(i, j), resid[i])).fold(
                (vec![], vec![]),
                |(mut l, mut r), (v, e)| {
                    if v <= t { l.push(e) } else { r.push(e) }
                    (l, r)
                },
            );
            let part = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            };
            part(&l) + part(&r)
        };
        let chosen = sse(feature as usize, threshold);
        for j in 0..3 {
            for i in 0..30 {
                let t = x.get(i, j);
                if (0..30).any(|k| x.get(k, j) > t) {
                    assert!(chosen <= sse(j, t) + 1e-9);
                }
            }
        }
    }
}
