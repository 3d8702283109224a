//! Isolation forest over the 2-D embedding `(x_t, x_t - x_{t-1})` of a
//! differenced series.
//!
//! Trees isolate points by recursive random axis-aligned splits; anomalies
//! end up on short paths. The score is `2^(-E[h(x)] / c(psi))` where `c` is
//! the average unsuccessful-search path length of a binary search tree over
//! `psi` points.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::quantile;

pub type Point = [f64; 2];

pub const MIN_TRAINING_POINTS: usize = 64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IForestParams {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub contamination: f64,
}

impl Default for IForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            subsample_size: 256,
            contamination: 0.05,
        }
    }
}

impl IForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.subsample_size < 2 {
            return Err(Error::Config("isolation forest needs trees and a subsample >= 2".into()));
        }
        if !(self.contamination > 0.0 && self.contamination < 0.5) {
            return Err(Error::Config("contamination must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn build(points: &[Point], rng: &mut ChaCha8Rng, max_depth: usize) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.grow(points, &mut idx, 0, max_depth, rng);
        tree
    }

    fn grow(
        &mut self,
        points: &[Point],
        idx: &mut [usize],
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { size: idx.len() });
        if idx.len() <= 1 || depth >= max_depth {
            return id;
        }
        let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 2];
        for &i in idx.iter() {
            for (f, b) in bounds.iter_mut().enumerate() {
                b.0 = b.0.min(points[i][f]);
                b.1 = b.1.max(points[i][f]);
            }
        }
        let splittable: Vec<usize> = (0..2).filter(|&f| bounds[f].1 > bounds[f].0).collect();
        if splittable.is_empty() {
            return id;
        }
        let feature = splittable[rng.random_range(0..splittable.len())];
        let (lo, hi) = bounds[feature];
        let threshold = rng.random_range(lo..hi);

        let mut cut = 0;
        for k in 0..idx.len() {
            if points[idx[k]][feature] < threshold {
                idx.swap(k, cut);
                cut += 1;
            }
        }
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(points, l, depth + 1, max_depth, rng);
        let right = self.grow(points, r, depth + 1, max_depth, rng);
        self.nodes[id as usize] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn path_length(&self, x: &Point) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { *left } else { *right } as usize;
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IForestModel {
    pub params: IForestParams,
    /// Subsample size actually used (capped by the training set size).
    pub subsample_size: usize,
    pub score_threshold: f64,
    trees: Vec<Tree>,
}

impl IForestModel {
    /// Fits the forest and sets the threshold at the `1 - contamination`
    /// quantile of the training scores.
    pub fn fit(points: &[Point], params: IForestParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if points.len() < MIN_TRAINING_POINTS {
            return Err(Error::InsufficientData(format!(
                "isolation forest needs {MIN_TRAINING_POINTS} samples, got {}; use rule-only screening",
                points.len()
            )));
        }
        if points.iter().all(|p| p == &points[0]) {
            return Err(Error::Degenerate(
                "constant training data, isolation forest disabled for this window".into(),
            ));
        }
        let psi = params.subsample_size.min(points.len());
        let max_depth = (psi as f64).log2().ceil() as usize;
        let trees: Vec<Tree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(seed, &[rng::STREAM_IFOREST, &t.to_string()]);
                let sample: Vec<Point> = index::sample(&mut rng, points.len(), psi)
                    .into_iter()
                    .map(|i| points[i])
                    .collect();
                Tree::build(&sample, &mut rng, max_depth)
            })
            .collect();
        let mut model = Self {
            params,
            subsample_size: psi,
            score_threshold: f64::INFINITY,
            trees,
        };
        let scores = model.score_all(points);
        model.score_threshold =
            quantile(&scores, 1.0 - params.contamination).expect("non-empty training scores");
        Ok(model)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn score(&self, x: &Point) -> f64 {
        let mean_path =
            self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean_path / average_path_length(self.subsample_size))
    }

    pub fn score_all(&self, xs: &[Point]) -> Vec<f64> {
        xs.iter().map(|x| self.score(x)).collect()
    }

    pub fn is_anomalous(&self, x: &Point) -> bool {
        self.score(x) > self.score_threshold
    }

    /// Fraction of `xs` scoring above the threshold.
    pub fn anomalous_fraction(&self, xs: &[Point]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        xs.iter().filter(|x| self.is_anomalous(x)).count() as f64 / xs.len() as f64
    }
}

/// Embeds a (differenced) series as `(x_t, x_t - x_{t-1})`, keeping only
/// slots where both values are present. Returns the points and their slots.
pub fn embed(values: &[Option<f64>]) -> (Vec<Point>, Vec<usize>) {
    values
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| match (w[0], w[1]) {
            (Some(prev), Some(cur)) => Some(([cur, cur - prev], i + 1)),
            _ => None,
        })
        .unzip()
}
