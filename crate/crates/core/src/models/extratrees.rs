//! Extremely randomised trees for binary classification.
//!
//! Every tree is grown on the full training set. At each node a fixed number
//! of non-constant attributes is drawn without replacement, each gets one cut
//! point drawn uniformly between its node minimum and maximum, and the cut with
//! the best Gini impurity reduction is kept. Nodes become leaves when pure,
//! when smaller than `min_samples_split`, or when every attribute is constant.
//! Tree `t` draws from its own stream seeded with `seed + t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, ModelError, TrainConfig};
use crate::features::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    /// `x[attribute] < cut` goes left.
    Split {
        #[serde(rename = "a")]
        attribute: usize,
        #[serde(rename = "c")]
        cut: f64,
        #[serde(rename = "l")]
        left: u32,
        #[serde(rename = "r")]
        right: u32,
    },
    Leaf {
        #[serde(rename = "w")]
        rework: u32,
        #[serde(rename = "p")]
        passed: u32,
    },
}

/// Nodes in creation order; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Leaf reached by `x`.
    pub fn leaf(&self, x: &[f64]) -> (u32, u32) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    attribute,
                    cut,
                    left,
                    right,
                } => i = if x[attribute] < cut { left } else { right } as usize,
                TreeNode::Leaf { rework, passed } => return (rework, passed),
            }
        }
    }

    /// Rework fraction of the leaf reached by `x`.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (rework, passed) = self.leaf(x);
        rework as f64 / (rework + passed) as f64
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Split { left, right, .. } => {
                    1 + walk(t, left as usize).max(walk(t, right as usize))
                }
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraTreesModel {
    pub dim: usize,
    pub n_trees: usize,
    pub attributes_per_split: usize,
    pub min_samples_split: usize,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl ExtraTreesModel {
    /// Mean over trees of the leaf rework fraction.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.dim, x)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn per_tree_proba(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_dim(self.dim, x)?;
        Ok(self.trees.iter().map(|t| t.predict_proba(x)).collect())
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Inconsistent(m));
        if self.trees.len() != self.n_trees || self.trees.is_empty() {
            return bad(format!("expected {} trees, found {}", self.n_trees, self.trees.len()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} is empty"));
            }
            for node in &tree.nodes {
                match *node {
                    TreeNode::Split {
                        attribute,
                        left,
                        right,
                        cut,
                    } => {
                        let n = tree.nodes.len() as u32;
                        if attribute >= self.dim || left >= n || right >= n || !cut.is_finite() {
                            return bad(format!("tree {t} has an invalid split"));
                        }
                    }
                    TreeNode::Leaf { rework, passed } => {
                        if rework + passed == 0 {
                            return bad(format!("tree {t} has an empty leaf"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Column-major copy of the training matrix plus 0/1 targets.
struct Columns {
    n: usize,
    values: Vec<f64>,
    rework: Vec<bool>,
}

impl Columns {
    fn new(data: &Dataset) -> Self {
        let (n, d) = (data.len(), data.dim());
        let mut values = vec![0.0; n * d];
        for i in 0..n {
            for (a, v) in data.row(i).iter().enumerate() {
                values[a * n + i] = *v;
            }
        }
        Self {
            n,
            values,
            rework: data.labels().iter().map(|l| l.is_rework()).collect(),
        }
    }

    fn column(&self, a: usize) -> &[f64] {
        &self.values[a * self.n..(a + 1) * self.n]
    }
}

struct Grower<'a> {
    cols: &'a Columns,
    dim: usize,
    attributes_per_split: usize,
    min_samples_split: usize,
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng) -> Tree {
        let mut samples: Vec<u32> = (0..self.cols.n as u32).collect();
        let mut attrs: Vec<usize> = (0..self.dim).collect();
        let mut nodes = vec![TreeNode::Leaf { rework: 0, passed: 0 }];
        let mut stack = vec![(0usize, 0usize, samples.len())];

        while let Some((slot, lo, hi)) = stack.pop() {
            let part = &mut samples[lo..hi];
            let rework = part.iter().filter(|&&i| self.cols.rework[i as usize]).count() as u32;
            let passed = part.len() as u32 - rework;
            let leaf = TreeNode::Leaf { rework, passed };
            if rework == 0 || passed == 0 || part.len() < self.min_samples_split {
                nodes[slot] = leaf;
                continue;
            }
            let Some((attribute, cut)) = self.pick_split(part, rework, &mut attrs, rng) else {
                nodes[slot] = leaf;
                continue;
            };
            let column = self.cols.column(attribute);
            let mut split = 0;
            for k in 0..part.len() {
                if column[part[k] as usize] < cut {
                    part.swap(k, split);
                    split += 1;
                }
            }
            let left = nodes.len() as u32;
            nodes.push(TreeNode::Leaf { rework: 0, passed: 0 });
            nodes.push(TreeNode::Leaf { rework: 0, passed: 0 });
            nodes[slot] = TreeNode::Split {
                attribute,
                cut,
                left,
                right: left + 1,
            };
            stack.push((left as usize + 1, lo + split, hi));
            stack.push((left as usize, lo, lo + split));
        }
        Tree { nodes }
    }

    /// Draws attributes without replacement until enough non-constant ones
    /// have been scored; returns the best `(attribute, cut)`.
    fn pick_split(
        &self,
        part: &[u32],
        rework: u32,
        attrs: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Option<(usize, f64)> {
        let n = part.len() as f64;
        let total_rework = rework as f64;
        let total_passed = n - total_rework;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut scored = 0;
        for drawn in 0..self.dim {
            if scored == self.attributes_per_split {
                break;
            }
            let j = rng.random_range(drawn..self.dim);
            attrs.swap(drawn, j);
            let a = attrs[drawn];
            let column = self.cols.column(a);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in part {
                let v = column[i as usize];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                continue;
            }
            scored += 1;
            // (lo, hi]: both sides of the cut stay non-empty
            let u: f64 = 1.0 - rng.random::<f64>();
            let mut cut = lo + u * (hi - lo);
            if !(cut > lo) {
                cut = hi;
            }
            let (mut left_n, mut left_rework) = (0.0, 0.0);
            for &i in part {
                if column[i as usize] < cut {
                    left_n += 1.0;
                    if self.cols.rework[i as usize] {
                        left_rework += 1.0;
                    }
                }
            }
            let right_n = n - left_n;
            let right_rework = total_rework - left_rework;
            let left_passed = left_n - left_rework;
            let right_passed = total_passed - left_passed;
            // maximising this minimises the size-weighted Gini impurity
            let score = (left_rework * left_rework + left_passed * left_passed) / left_n
                + (right_rework * right_rework + right_passed * right_passed) / right_n;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, a, cut));
            }
        }
        best.map(|(_, a, cut)| (a, cut))
    }
}

pub fn train_extratrees(data: &Dataset, config: &TrainConfig) -> Result<ExtraTreesModel, ModelError> {
    config.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let params = &config.extratrees;
    let dim = data.dim();
    let cols = Columns::new(data);
    let grower = Grower {
        cols: &cols,
        dim,
        attributes_per_split: params.attributes_for(dim),
        min_samples_split: params.min_samples_split,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
            grower.grow(&mut rng)
        })
        .collect();
    Ok(ExtraTreesModel {
        dim,
        n_trees: params.n_trees,
        attributes_per_split: grower.attributes_per_split,
        min_samples_split: params.min_samples_split,
        seed: config.seed,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ElementId, Label};
    use crate::models::{load_model, save_model, Model, ModelFile};
    use crate::FeatureConfig;
    use rand_distr::{Distribution, Normal};

    /// Two well-separated Gaussian blobs in `dim` dimensions.
    fn blobs(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut data = Dataset::new(dim);
        for i in 0..n {
            let rework = i % 2 == 0;
            let centre = if rework { 3.0 } else { -3.0 };
            let x: Vec<f64> = (0..dim).map(|_| centre + noise.sample(&mut rng)).collect();
            data.push("toy", ElementId(i as u64 + 1), &x, Label::from_flag(rework))
                .unwrap();
        }
        data
    }

    #[test]
    fn same_seed_same_model() {
        let data = blobs(120, 4, 1);
        let config = TrainConfig {
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train_extratrees(&data, &config).unwrap();
        let b = train_extratrees(&data, &config).unwrap();
        assert_eq!(a, b);
        let other = train_extratrees(&data, &TrainConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn single_class_gives_single_leaves() {
        let mut data = Dataset::new(3);
        for i in 0..10 {
            data.push("m", ElementId(i + 1), &[i as f64, 1.0, -(i as f64)], Label::Passed)
                .unwrap();
        }
        let model = train_extratrees(&data, &TrainConfig::default()).unwrap();
        assert_eq!(model.trees.len(), 100);
        for tree in &model.trees {
            assert_eq!(tree.nodes, vec![TreeNode::Leaf { rework: 0, passed: 10 }]);
        }
        assert_eq!(model.predict_proba(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let data = blobs(200, 5, 7);
        let model = train_extratrees(&data, &TrainConfig::extratrees(3)).unwrap();
        let correct = (0..data.len())
            .filter(|&i| {
                let p = model.predict_proba(data.row(i)).unwrap();
                (p >= 0.5) == data.label(i).is_rework()
            })
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn ensemble_is_mean_of_trees() {
        let data = blobs(80, 3, 2);
        let model = train_extratrees(&data, &TrainConfig::extratrees(9)).unwrap();
        let x = [0.1, -0.2, 0.05];
        let per_tree = model.per_tree_proba(&x).unwrap();
        let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        assert_eq!(model.predict_proba(&x).unwrap(), mean);
        assert!(matches!(
            model.predict_proba(&[0.0; 2]),
            Err(ModelError::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn hand_built_trees() {
        let pure = |rework| Tree {
            nodes: vec![TreeNode::Leaf {
                rework: if rework { 3 } else { 0 },
                passed: if rework { 0 } else { 5 },
            }],
        };
        let mut model = ExtraTreesModel {
            dim: 1,
            n_trees: 2,
            attributes_per_split: 1,
            min_samples_split: 2,
            seed: 0,
            trees: vec![pure(true), pure(true)],
        };
        assert_eq!(model.predict_proba(&[0.0]).unwrap(), 1.0);
        model.trees[1] = pure(false);
        assert_eq!(model.predict_proba(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn single_tree_matches_manual_leaf_lookup() {
        let data = blobs(60, 2, 11);
        let config = TrainConfig {
            extratrees: crate::models::ExtraTreesParams {
                n_trees: 1,
                ..Default::default()
            },
            ..TrainConfig::extratrees(5)
        };
        let model = train_extratrees(&data, &config).unwrap();
        let text = serde_json::to_value(&model.trees[0]).unwrap();
        let nodes = text["nodes"].as_array().unwrap();
        for i in 0..data.len() {
            let x = data.row(i);
            let mut k = 0usize;
            let leaf = loop {
                let node = &nodes[k];
                if let Some(a) = node.get("a") {
                    let a = a.as_u64().unwrap() as usize;
                    k = if x[a] < node["c"].as_f64().unwrap() { &node["l"] } else { &node["r"] }
                        .as_u64()
                        .unwrap() as usize;
                } else {
                    break (node["w"].as_f64().unwrap(), node["p"].as_f64().unwrap());
                };
            };
            let expected = leaf.0 / (leaf.0 + leaf.1);
            assert_eq!(model.predict_proba(x).unwrap(), expected);
        }
    }

    #[test]
    fn roundtrip_keeps_predictions() {
        let data = blobs(100, 21, 4);
        let model = Model::ExtraTrees(train_extratrees(&data, &TrainConfig::extratrees(1)).unwrap());
        let features = FeatureConfig {
            k_max: 0,
            ..FeatureConfig::default()
        };
        let file = ModelFile::new(features, model);
        let text = save_model(&file);
        let back = load_model(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(save_model(&back), text);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..21).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(
                file.model.predict_proba(&x).unwrap(),
                back.model.predict_proba(&x).unwrap()
            );
        }
    }

    #[test]
    fn corrupted_split_is_rejected() {
        let data = blobs(40, 21, 4);
        let mut model = train_extratrees(&data, &TrainConfig::extratrees(1)).unwrap();
        if let TreeNode::Split { attribute, .. } = &mut model.trees[0].nodes[0] {
            *attribute = 99;
        }
        let file = ModelFile::new(
            FeatureConfig {
                k_max: 0,
                ..FeatureConfig::default()
            },
            Model::ExtraTrees(model),
        );
        assert!(matches!(
            load_model(&save_model(&file)),
            Err(ModelError::Inconsistent(_))
        ));
    }
}
