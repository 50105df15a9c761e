//! Gradient-boosted regression trees over motif occurrence features.
//!
//! Trees are grown leaf-wise (best-first) up to `num_leaves` leaves with exact
//! split search over sorted feature values. L1 boosting fits trees to the sign
//! of the residual and sets each leaf to the median residual of its samples;
//! L2 boosting fits the residual itself with mean leaf values.

use std::io::{Read, Write};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mae,
    Rmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub feature_fraction: f64,
    pub rounds: usize,
    pub min_samples_leaf: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            num_leaves: 63,
            learning_rate: 0.05,
            feature_fraction: 0.7,
            rounds: 100,
            min_samples_leaf: 5,
            loss: Loss::Mae,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Samples with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Binary tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Split features used anywhere in the tree.
    pub fn features_used(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub config: GbdtConfig,
    pub trees: Vec<RegressionTree>,
}

impl GbdtModel {
    /// `base + learning_rate * sum of tree outputs`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features);
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_prediction + self.learning_rate * sum
    }

    pub fn try_predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::LengthMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(self.predict(x))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.try_predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbdtModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(
    columns: &[Vec<f64>],
    grad: &[f64],
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n = samples.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total: f64 = samples.iter().map(|&i| grad[i]).sum();
    let total_sq: f64 = samples.iter().map(|&i| grad[i] * grad[i]).sum();
    let parent = total * total / n as f64;
    let min_gain = 1e-12 * total_sq.max(f64::MIN_POSITIVE);

    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        pairs.clear();
        pairs.extend(samples.iter().map(|&i| (columns[f][i], grad[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = 0.0;
        for k in 1..n {
            left += pairs[k - 1].1;
            if k < min_leaf || n - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
                continue;
            }
            let right = total - left;
            let gain = left * left / k as f64 + right * right / (n - k) as f64 - parent;
            if gain > min_gain && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    threshold: 0.5 * (pairs[k - 1].0 + pairs[k].0),
                });
            }
        }
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn leaf_value(loss: Loss, residual: &[f64], samples: &[usize]) -> f64 {
    let mut r: Vec<f64> = samples.iter().map(|&i| residual[i]).collect();
    match loss {
        Loss::Mae => median(&mut r),
        Loss::Rmse => r.iter().sum::<f64>() / r.len() as f64,
    }
}

struct OpenLeaf {
    node: usize,
    samples: Vec<usize>,
    split: Option<SplitCandidate>,
}

fn grow_tree(
    columns: &[Vec<f64>],
    grad: &[f64],
    residual: &[f64],
    features: &[usize],
    config: &GbdtConfig,
) -> (RegressionTree, Vec<(Vec<usize>, f64)>) {
    let n = grad.len();
    let all: Vec<usize> = (0..n).collect();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut open = vec![OpenLeaf {
        node: 0,
        split: best_split(columns, grad, &all, features, config.min_samples_leaf),
        samples: all,
    }];

    while open.len() < config.num_leaves.max(1) {
        // first leaf with the strictly largest gain
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(s) = leaf.split {
                if pick.is_none_or(|p| s.gain > open[p].split.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = open.remove(pick);
        let split = leaf.split.unwrap();
        let (l, r): (Vec<usize>, Vec<usize>) = leaf
            .samples
            .iter()
            .partition(|&&i| columns[split.feature][i] < split.threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: li,
            right: ri,
        };
        for (node, samples) in [(li, l), (ri, r)] {
            let split = best_split(columns, grad, &samples, features, config.min_samples_leaf);
            open.insert(pick.min(open.len()), OpenLeaf { node, samples, split });
        }
    }

    let mut assignments = Vec::with_capacity(open.len());
    open.sort_by_key(|l| l.node);
    for leaf in open {
        let value = leaf_value(config.loss, residual, &leaf.samples);
        nodes[leaf.node] = Node::Leaf { value };
        assignments.push((leaf.samples, value));
    }
    (RegressionTree { nodes }, assignments)
}

fn validate_config(config: &GbdtConfig) -> Result<()> {
    if !(config.feature_fraction > 0.0 && config.feature_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "feature fraction {} outside (0, 1]",
            config.feature_fraction
        )));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return Err(Error::InvalidInput("learning rate must be finite and non-negative".into()));
    }
    if config.num_leaves < 1 {
        return Err(Error::InvalidInput("num_leaves must be at least 1".into()));
    }
    Ok(())
}

/// Fit a boosted ensemble to `features` (rows = samples) and `targets`.
pub fn fit(features: &[Vec<f64>], targets: &[f64], config: &GbdtConfig) -> Result<GbdtModel> {
    validate_config(config)?;
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: targets.len(),
        });
    }
    let p = features[0].len();
    if p == 0 {
        return Err(Error::InvalidInput("feature matrix has no columns".into()));
    }
    if let Some(row) = features.iter().find(|r| r.len() != p) {
        return Err(Error::LengthMismatch {
            expected: p,
            actual: row.len(),
        });
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in training data".into()));
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|j| features.iter().map(|r| r[j]).collect()).collect();
    let base = match config.loss {
        Loss::Mae => median(&mut targets.to_vec()),
        Loss::Rmse => targets.iter().sum::<f64>() / n as f64,
    };
    let per_round = ((config.feature_fraction * p as f64).ceil() as usize).clamp(1, p);

    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(config.rounds);
    let mut residual = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for round in 0..config.rounds {
        for i in 0..n {
            residual[i] = targets[i] - pred[i];
            grad[i] = match config.loss {
                Loss::Mae => {
                    if residual[i] > 0.0 {
                        1.0
                    } else if residual[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Loss::Rmse => residual[i],
            };
        }
        let mut subset: Vec<usize> = if per_round == p {
            (0..p).collect()
        } else {
            let mut r = rng::stream(config.seed, &[round as u64]);
            sample(&mut r, p, per_round).into_vec()
        };
        subset.sort_unstable();

        let (tree, leaves) = grow_tree(&columns, &grad, &residual, &subset, config);
        for (samples, value) in leaves {
            for i in samples {
                pred[i] += config.learning_rate * value;
            }
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        n_features: p,
        base_prediction: base,
        learning_rate: config.learning_rate,
        config: config.clone(),
        trees,
    })
}

pub fn predict(model: &GbdtModel, features: &[f64]) -> Result<f64> {
    model.try_predict(features)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub pearson: f64,
    pub mae: f64,
    pub rmse: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidInput("pearson correlation of a constant vector".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation, mean absolute error and root mean squared error.
pub fn evaluate(model: &GbdtModel, features: &[Vec<f64>], targets: &[f64]) -> Result<FitQuality> {
    if features.len() < 2 || features.len() != targets.len() {
        return Err(Error::InvalidInput("evaluation needs at least two labelled rows".into()));
    }
    let pred = model.predict_batch(features)?;
    quality(&pred, targets)
}

pub fn quality(pred: &[f64], targets: &[f64]) -> Result<FitQuality> {
    let n = targets.len() as f64;
    let mae = pred.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt();
    Ok(FitQuality {
        pearson: pearson(pred, targets)?,
        mae,
        rmse,
    })
}

/// Feature matrix CSV: one column per feature plus a trailing `fitness`
/// column.
pub fn write_feature_csv<W: Write>(w: W, names: &[String], rows: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("fitness");
    wtr.write_record(&header)?;
    for (row, t) in rows.iter().zip(targets) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(t.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

pub fn read_feature_csv<R: Read>(r: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().last() != Some("fitness") {
        return Err(Error::InvalidInput("feature CSV must end with a fitness column".into()));
    }
    let names: Vec<String> = header.iter().take(header.len() - 1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let (row, t) = values.split_at(values.len() - 1);
        rows.push(row.to_vec());
        targets.push(t[0]);
    }
    Ok(FeatureTable { names, rows, targets })
}
