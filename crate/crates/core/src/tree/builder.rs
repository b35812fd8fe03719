//! Greedy recursive partitioning shared by every tree family.
//!
//! Rows enter with integer multiplicities (bootstrap counts); a row with
//! weight 0 is absent. Each node carries, for every feature the tree may use,
//! its rows sorted by that feature, so a split costs one linear pass per
//! candidate feature and children inherit sorted order by stable partition.

use super::{MaxFeatures, Node, RegressionTree};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Splits whose improvement is below this fraction of `Σ w·t²` are treated
/// as rounding noise.
const GAIN_EPS: f64 = 1e-12;

/// Row order of each feature column, computed once per fit.
#[derive(Debug, Clone)]
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub(crate) fn new(x: &Matrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| {
                    x.get(a as usize, j)
                        .total_cmp(&x.get(b as usize, j))
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Criterion {
    /// Least squares: score `S²/W`, leaf `S/W`.
    Sse,
    /// Regularized second-order objective with unit hessians: score
    /// `soft(G, α)²/(H + λ)`, leaf `−η·soft(G, α)/(H + λ)`.
    SecondOrder {
        alpha: f64,
        lambda: f64,
        learning_rate: f64,
    },
}

pub(crate) fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return g;
    }
    g.signum() * (g.abs() - alpha).max(0.0)
}

impl Criterion {
    #[inline]
    fn score(&self, sum: f64, weight: f64) -> f64 {
        match *self {
            Criterion::Sse => sum * sum / weight,
            Criterion::SecondOrder { alpha, lambda, .. } => {
                let g = soft_threshold(sum, alpha);
                g * g / (weight + lambda)
            }
        }
    }

    #[inline]
    fn leaf_value(&self, sum: f64, weight: f64) -> f64 {
        match *self {
            Criterion::Sse => sum / weight,
            Criterion::SecondOrder {
                alpha,
                lambda,
                learning_rate,
            } => -learning_rate * soft_threshold(sum, alpha) / (weight + lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Splitter {
    /// Exhaustive midpoints between consecutive distinct values.
    Best,
    /// One uniform threshold per candidate feature (extremely randomized).
    Random,
}

#[derive(Debug, Clone)]
pub(crate) struct GrowConfig {
    pub criterion: Criterion,
    pub splitter: Splitter,
    pub max_depth: Option<usize>,
    pub min_samples_split: u64,
    pub min_samples_leaf: u64,
    pub max_features: MaxFeatures,
    /// Features the tree may split on, ascending. `None` means all.
    pub allowed_features: Option<Vec<usize>>,
}

struct Candidate {
    score: f64,
    feature_pos: usize,
    threshold: f64,
}

struct Builder<'a> {
    x: &'a Matrix,
    target: &'a [f64],
    weights: &'a [u32],
    cfg: &'a GrowConfig,
    features: Vec<usize>,
    per_node: usize,
    rng: SplitMix64,
    goes_left: Vec<bool>,
    nodes: Vec<Node>,
}

/// Grows one tree. `target` is the quantity fitted (labels, residuals or
/// gradients); `weights[i]` is the multiplicity of row `i`.
pub(crate) fn grow(
    x: &Matrix,
    presorted: &Presorted,
    target: &[f64],
    weights: &[u32],
    cfg: &GrowConfig,
    rng: SplitMix64,
) -> RegressionTree {
    let features = cfg
        .allowed_features
        .clone()
        .unwrap_or_else(|| (0..x.cols()).collect());
    let per_node = cfg.max_features.resolve(features.len());
    let lists: Vec<Vec<u32>> = features
        .iter()
        .map(|&f| {
            presorted.order[f]
                .iter()
                .copied()
                .filter(|&r| weights[r as usize] > 0)
                .collect()
        })
        .collect();
    let mut b = Builder {
        x,
        target,
        weights,
        cfg,
        features,
        per_node,
        rng,
        goes_left: vec![false; x.rows()],
        nodes: Vec::new(),
    };
    if lists.first().map_or(true, Vec::is_empty) {
        // No rows or no usable features: a leaf over whatever rows exist.
        let (w, s) = (0..x.rows()).fold((0u64, 0.0), |(w, s), r| {
            (w + weights[r] as u64, s + weights[r] as f64 * target[r])
        });
        let value = if w > 0 { cfg.criterion.leaf_value(s, w as f64) } else { 0.0 };
        b.nodes.push(Node::Leaf { value, n_samples: w });
    } else {
        b.build(lists, 0);
    }
    RegressionTree {
        nodes: b.nodes,
        n_features: x.cols(),
    }
}

impl Builder<'_> {
    fn build(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let mut weight = 0u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let first_target = self.target[lists[0][0] as usize];
        let mut pure = true;
        for &r in &lists[0] {
            let (w, t) = (self.weights[r as usize], self.target[r as usize]);
            weight += w as u64;
            sum += w as f64 * t;
            sumsq += w as f64 * t * t;
            pure &= t == first_target;
        }
        let value = self.cfg.criterion.leaf_value(sum, weight as f64);
        let index = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value,
            n_samples: weight,
        });

        let depth_ok = self.cfg.max_depth.map_or(true, |d| depth < d);
        if pure
            || !depth_ok
            || weight < self.cfg.min_samples_split
            || weight < 2 * self.cfg.min_samples_leaf
        {
            return index;
        }
        let Some(best) = self.find_split(&lists, sum, weight) else {
            return index;
        };
        let parent_score = self.cfg.criterion.score(sum, weight as f64);
        if !(best.score - parent_score > GAIN_EPS * sumsq) {
            return index;
        }

        let feature = self.features[best.feature_pos];
        for &r in &lists[0] {
            self.goes_left[r as usize] = self.x.get(r as usize, feature) <= best.threshold;
        }
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.into_iter().partition(|&r| self.goes_left[r as usize]);
            left_lists.push(l);
            right_lists.push(r);
        }
        let left = self.build(left_lists, depth + 1);
        let right = self.build(right_lists, depth + 1);
        self.nodes[index] = Node::Split {
            feature,
            threshold: best.threshold,
            left,
            right,
            value,
            n_samples: weight,
        };
        index
    }

    fn candidate_positions(&mut self) -> Vec<usize> {
        let n = self.features.len();
        if self.per_node >= n {
            (0..n).collect()
        } else {
            let mut picks = self.rng.choose_distinct(n, self.per_node);
            picks.sort_unstable();
            picks
        }
    }

    fn find_split(&mut self, lists: &[Vec<u32>], sum: f64, weight: u64) -> Option<Candidate> {
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        for pos in self.candidate_positions() {
            let list = &lists[pos];
            let feature = self.features[pos];
            let value_of = |r: u32| self.x.get(r as usize, feature);
            match self.cfg.splitter {
                Splitter::Best => {
                    let mut left_sum = 0.0;
                    let mut left_w = 0u64;
                    for k in 0..list.len() - 1 {
                        let r = list[k] as usize;
                        let w = self.weights[r];
                        left_sum += w as f64 * self.target[r];
                        left_w += w as u64;
                        let (v, next) = (value_of(list[k]), value_of(list[k + 1]));
                        if !(next > v) {
                            continue;
                        }
                        let right_w = weight - left_w;
                        if left_w < min_leaf || right_w < min_leaf {
                            continue;
                        }
                        let score = self.cfg.criterion.score(left_sum, left_w as f64)
                            + self.cfg.criterion.score(sum - left_sum, right_w as f64);
                        if best.as_ref().map_or(true, |b| score > b.score) {
                            let mut threshold = 0.5 * (v + next);
                            if !(threshold < next) {
                                threshold = v;
                            }
                            best = Some(Candidate {
                                score,
                                feature_pos: pos,
                                threshold,
                            });
                        }
                    }
                }
                Splitter::Random => {
                    let lo = value_of(list[0]);
                    let hi = value_of(list[list.len() - 1]);
                    if !(hi > lo) {
                        continue;
                    }
                    let mut threshold = lo + self.rng.next_open01() * (hi - lo);
                    if !(threshold < hi) {
                        threshold = lo;
                    }
                    let mut left_sum = 0.0;
                    let mut left_w = 0u64;
                    for &r in list {
                        if value_of(r) > threshold {
                            break;
                        }
                        let w = self.weights[r as usize];
                        left_sum += w as f64 * self.target[r as usize];
                        left_w += w as u64;
                    }
                    let right_w = weight - left_w;
                    if left_w < min_leaf || right_w < min_leaf {
                        continue;
                    }
                    let score = self.cfg.criterion.score(left_sum, left_w as f64)
                        + self.cfg.criterion.score(sum - left_sum, right_w as f64);
                    if best.as_ref().map_or(true, |b| score > b.score) {
                        best = Some(Candidate {
                            score,
                            feature_pos: pos,
                            threshold,
                        });
                    }
                }
            }
        }
        best
    }
}
