//! Shapley attribution of motif-count features and the motif role table.
//!
//! The value of a coalition `S` is interventional: features in `S` take the
//! explained instance's values, the rest are filled from each background row,
//! and predictions are averaged over the background.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng;
use crate::surrogate::GbdtModel;

/// Largest feature count accepted by [`exact_shapley`].
pub const MAX_EXACT_FEATURES: usize = 16;

/// Smallest explained sample accepted by [`build_role_table`].
pub const MIN_ROLE_SAMPLE: usize = 30;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub phi: Vec<f64>,
    /// Standard error per feature; zero in exact mode.
    pub std_err: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
}

fn check_inputs(model: &GbdtModel, x: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if background.is_empty() {
        return Err(Error::InvalidInput("background must contain at least one row".into()));
    }
    if x.len() != model.n_features {
        return Err(Error::LengthMismatch {
            expected: model.n_features,
            actual: x.len(),
        });
    }
    if let Some(b) = background.iter().find(|b| b.len() != model.n_features) {
        return Err(Error::LengthMismatch {
            expected: model.n_features,
            actual: b.len(),
        });
    }
    Ok(())
}

/// Mean prediction over background rows with the features in `subset` taken
/// from `x`.
pub fn value_function(model: &GbdtModel, x: &[f64], subset: &[usize], background: &[Vec<f64>]) -> Result<f64> {
    check_inputs(model, x, background)?;
    if let Some(&i) = subset.iter().find(|&&i| i >= x.len()) {
        return Err(Error::InvalidInput(format!("feature index {i} out of range")));
    }
    let mut z = vec![0.0; x.len()];
    let mut total = 0.0;
    for b in background {
        z.copy_from_slice(b);
        for &i in subset {
            z[i] = x[i];
        }
        total += model.predict(&z);
    }
    Ok(total / background.len() as f64)
}

/// `s! (d - s - 1)! / d!` for `s = 0..d`.
fn shapley_weights(d: usize) -> Vec<f64> {
    let mut fact = vec![1.0f64; d + 1];
    for k in 1..=d {
        fact[k] = fact[k - 1] * k as f64;
    }
    (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect()
}

/// Exact Shapley values by subset enumeration.
///
/// For a single background row only the features where `x` and the row
/// differ can change the prediction, so each row's game is enumerated over
/// those features alone and the per-row values are averaged.
pub fn exact_shapley(model: &GbdtModel, x: &[f64], background: &[Vec<f64>]) -> Result<ShapExplanation> {
    check_inputs(model, x, background)?;
    let n = x.len();
    if n > MAX_EXACT_FEATURES {
        return Err(Error::InvalidInput(format!(
            "exact Shapley supports at most {MAX_EXACT_FEATURES} features, got {n}"
        )));
    }
    let weights: Vec<Vec<f64>> = (0..=n).map(shapley_weights).collect();
    let mut phi = vec![0.0; n];
    let mut base = 0.0;
    let mut z = vec![0.0; n];
    let mut values: Vec<f64> = Vec::new();
    for b in background {
        base += model.predict(b);
        let diff: Vec<usize> = (0..n).filter(|&i| x[i] != b[i]).collect();
        let d = diff.len();
        if d == 0 {
            continue;
        }
        values.clear();
        for mask in 0..1usize << d {
            z.copy_from_slice(b);
            for (k, &i) in diff.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    z[i] = x[i];
                }
            }
            values.push(model.predict(&z));
        }
        let w = &weights[d];
        for (k, &i) in diff.iter().enumerate() {
            let bit = 1usize << k;
            let mut acc = 0.0;
            for mask in 0..1usize << d {
                if mask & bit == 0 {
                    acc += w[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
                }
            }
            phi[i] += acc;
        }
    }
    let m = background.len() as f64;
    phi.iter_mut().for_each(|p| *p /= m);
    Ok(ShapExplanation {
        phi,
        std_err: vec![0.0; n],
        base_value: base / m,
        prediction: model.predict(x),
    })
}

/// Permutation-sampling Shapley estimate.
///
/// Each sample draws a feature ordering and a background row, then records
/// the marginal contribution of every feature as it is switched from the
/// background value to the instance value in that order.
pub fn sampled_shapley(
    model: &GbdtModel,
    x: &[f64],
    background: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    check_inputs(model, x, background)?;
    if permutations == 0 {
        return Err(Error::InvalidInput("at least one permutation is required".into()));
    }
    let n = x.len();
    let mut r = rng::stream(seed, &[0x7368_6170]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..permutations {
        order.shuffle(&mut r);
        let b = &background[r.random_range(0..background.len())];
        z.copy_from_slice(b);
        let mut prev = model.predict(&z);
        for &i in &order {
            let delta = if z[i] == x[i] {
                0.0
            } else {
                z[i] = x[i];
                let cur = model.predict(&z);
                let d = cur - prev;
                prev = cur;
                d
            };
            sum[i] += delta;
            sum_sq[i] += delta * delta;
        }
    }
    let p = permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / p).collect();
    let std_err = if permutations > 1 {
        sum_sq
            .iter()
            .zip(&phi)
            .map(|(sq, mean)| ((sq - p * mean * mean).max(0.0) / (p - 1.0) / p).sqrt())
            .collect()
    } else {
        vec![f64::INFINITY; n]
    };
    let base_value = background.iter().map(|b| model.predict(b)).sum::<f64>() / background.len() as f64;
    Ok(ShapExplanation {
        phi,
        std_err,
        base_value,
        prediction: model.predict(x),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Activator,
    Repressor,
    Neutral,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Activator, Role::Repressor, Role::Neutral];

    pub fn of_reward(reward: f64) -> Role {
        if reward > 0.0 {
            Role::Activator
        } else if reward < 0.0 {
            Role::Repressor
        } else {
            Role::Neutral
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Activator => "activator",
            Role::Repressor => "repressor",
            Role::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activator" => Ok(Role::Activator),
            "repressor" => Ok(Role::Repressor),
            "neutral" => Ok(Role::Neutral),
            other => Err(Error::InvalidInput(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapMode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEntry {
    pub motif_id: String,
    pub mean_shap: f64,
    pub p_value: f64,
    pub role: Role,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTable {
    pub alpha: f64,
    pub entries: Vec<RoleEntry>,
}

/// Two-sided one-sample z-test of the mean of `values` against zero.
pub fn z_test_p_value(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let se = (var / m).sqrt();
    if se == 0.0 {
        return if mean == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (mean / se).abs();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Gated motif reward: `alpha * mean_shap` if significant, else zero.
pub fn tfbs_reward(mean_shap: f64, p_value: f64, alpha: f64) -> f64 {
    if p_value < SIGNIFICANCE_LEVEL {
        let r = alpha * mean_shap;
        // no negative zero
        if r == 0.0 {
            0.0
        } else {
            r
        }
    } else {
        0.0
    }
}

impl RoleEntry {
    pub fn new(motif_id: String, mean_shap: f64, p_value: f64, alpha: f64) -> Self {
        let reward = tfbs_reward(mean_shap, p_value, alpha);
        RoleEntry {
            motif_id,
            mean_shap,
            p_value,
            role: Role::of_reward(reward),
            reward,
        }
    }
}

/// Explain every row of `sample` and aggregate per-feature Shapley values
/// into motif roles.
pub fn build_role_table(
    model: &GbdtModel,
    motif_ids: &[String],
    sample: &[Vec<f64>],
    background: &[Vec<f64>],
    alpha: f64,
    mode: ShapMode,
) -> Result<RoleTable> {
    if sample.len() < MIN_ROLE_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "role inference needs at least {MIN_ROLE_SAMPLE} explained sequences, got {}",
            sample.len()
        )));
    }
    if motif_ids.len() != model.n_features {
        return Err(Error::VocabularyMismatch(format!(
            "{} motif ids for a model over {} features",
            motif_ids.len(),
            model.n_features
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("invalid alpha {alpha}")));
    }
    let explanations: Vec<ShapExplanation> = sample
        .par_iter()
        .enumerate()
        .map(|(j, x)| match mode {
            ShapMode::Exact => exact_shapley(model, x, background),
            ShapMode::Sampled { permutations, seed } => {
                sampled_shapley(model, x, background, permutations, rng::derive_seed(seed, &[j as u64]))
            }
        })
        .collect::<Result<_>>()?;

    let entries = motif_ids
        .iter()
        .enumerate()
        .map(|(t, id)| {
            let phi: Vec<f64> = explanations.iter().map(|e| e.phi[t]).collect();
            let mean = phi.iter().sum::<f64>() / phi.len() as f64;
            RoleEntry::new(id.clone(), mean, z_test_p_value(&phi), alpha)
        })
        .collect();
    Ok(RoleTable { alpha, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    /// A single all-zero row: every motif absent.
    Zero,
    /// Rows drawn from the feature table.
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    pub alpha: f64,
    pub sample_size: usize,
    pub background: BackgroundKind,
    pub background_rows: usize,
    /// Permutations per instance when the vocabulary is too large for
    /// exact enumeration.
    pub permutations: usize,
    pub seed: u64,
}

impl Default for RoleConfig {
    fn default() -> Self {
        RoleConfig {
            alpha: 0.01,
            sample_size: 256,
            background: BackgroundKind::Zero,
            background_rows: 64,
            permutations: 2000,
            seed: 0,
        }
    }
}

/// Draw the explained sample and background from `features`, pick exact or
/// sampled Shapley by vocabulary size, and build the role table.
pub fn infer_roles(model: &GbdtModel, motif_ids: &[String], features: &[Vec<f64>], config: &RoleConfig) -> Result<RoleTable> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no feature rows to explain".into()));
    }
    let pick = |n: usize, tag: u64| -> Vec<Vec<f64>> {
        let mut idx: Vec<usize> = (0..features.len()).collect();
        idx.shuffle(&mut rng::stream(config.seed, &[tag]));
        idx.truncate(n.min(features.len()));
        idx.sort_unstable();
        idx.into_iter().map(|i| features[i].clone()).collect()
    };
    let sample = pick(config.sample_size, 0x7361_6d70);
    let background = match config.background {
        BackgroundKind::Zero => vec![vec![0.0; model.n_features]],
        BackgroundKind::Data => {
            if config.background_rows == 0 {
                return Err(Error::InvalidInput("background needs at least one row".into()));
            }
            pick(config.background_rows, 0x6267_6e64)
        }
    };
    let mode = if model.n_features <= MAX_EXACT_FEATURES {
        ShapMode::Exact
    } else {
        ShapMode::Sampled {
            permutations: config.permutations,
            seed: config.seed,
        }
    };
    build_role_table(model, motif_ids, &sample, &background, config.alpha, mode)
}

#[derive(Serialize, Deserialize)]
struct RoleRow {
    motif_id: String,
    mean_shap: f64,
    p_value: f64,
    role: String,
    reward: f64,
}

impl RoleTable {
    pub fn motif_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.motif_id.as_str())
    }

    pub fn role_of(&self, motif_id: &str) -> Option<Role> {
        self.entries.iter().find(|e| e.motif_id == motif_id).map(|e| e.role)
    }

    /// Rewards reordered to match `motif_ids`, which must be the same set.
    pub fn rewards_for<'a>(&self, motif_ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<f64>> {
        let ids: Vec<&str> = motif_ids.into_iter().collect();
        if ids.len() != self.entries.len() {
            return Err(Error::VocabularyMismatch(format!(
                "role table has {} motifs, scanner has {}",
                self.entries.len(),
                ids.len()
            )));
        }
        ids.iter()
            .map(|id| {
                self.entries
                    .iter()
                    .find(|e| e.motif_id == *id)
                    .map(|e| e.reward)
                    .ok_or_else(|| Error::VocabularyMismatch(format!("motif {id} missing from role table")))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(RoleRow {
                motif_id: e.motif_id.clone(),
                mean_shap: e.mean_shap,
                p_value: e.p_value,
                role: e.role.to_string(),
                reward: e.reward,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parse a role table. `alpha` is recovered from the significant rows
    /// and is zero when no row carries a reward.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: RoleRow = row?;
            let role: Role = row.role.parse()?;
            if !(0.0..=1.0).contains(&row.p_value) {
                return Err(Error::InvalidInput(format!(
                    "motif {}: p-value {} outside [0, 1]",
                    row.motif_id, row.p_value
                )));
            }
            if !row.reward.is_finite() || role != Role::of_reward(row.reward) {
                return Err(Error::InvalidInput(format!(
                    "motif {}: role {role} inconsistent with reward {}",
                    row.motif_id, row.reward
                )));
            }
            if row.p_value >= SIGNIFICANCE_LEVEL && row.reward != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "motif {}: non-significant motif carries reward {}",
                    row.motif_id, row.reward
                )));
            }
            entries.push(RoleEntry {
                motif_id: row.motif_id,
                mean_shap: row.mean_shap,
                p_value: row.p_value,
                role,
                reward: row.reward,
            });
        }
        let alpha = entries
            .iter()
            .find(|e| e.reward != 0.0 && e.mean_shap != 0.0)
            .map_or(0.0, |e| e.reward / e.mean_shap);
        Ok(RoleTable { alpha, entries })
    }
}

/// One Venn region for one role class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennRegion {
    pub role: Role,
    /// Indices of the conditions defining the region.
    pub conditions: Vec<usize>,
    /// Motifs with this role in exactly these conditions.
    pub exclusive: usize,
    /// Motifs with this role in at least these conditions.
    pub intersection: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleComparison {
    pub labels: Vec<String>,
    pub motif_ids: Vec<String>,
    /// `roles[motif][condition]`.
    pub roles: Vec<Vec<Role>>,
    pub regions: Vec<VennRegion>,
}

/// Cross-condition Venn counts of motif roles.
pub fn compare_roles(labels: &[String], tables: &[RoleTable]) -> Result<RoleComparison> {
    if tables.len() < 2 {
        return Err(Error::InvalidInput("role comparison needs at least two tables".into()));
    }
    if labels.len() != tables.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} tables",
            labels.len(),
            tables.len()
        )));
    }
    if tables.len() > 16 {
        return Err(Error::InvalidInput("role comparison supports at most 16 tables".into()));
    }
    let motif_ids: Vec<String> = tables[0].motif_ids().map(str::to_owned).collect();
    let mut roles = vec![Vec::with_capacity(tables.len()); motif_ids.len()];
    for table in tables {
        let mut by_id: BTreeMap<&str, Role> = BTreeMap::new();
        for e in &table.entries {
            by_id.insert(&e.motif_id, e.role);
        }
        if by_id.len() != motif_ids.len() || motif_ids.iter().any(|id| !by_id.contains_key(id.as_str())) {
            return Err(Error::VocabularyMismatch(
                "role tables cover different motif vocabularies".into(),
            ));
        }
        for (row, id) in roles.iter_mut().zip(&motif_ids) {
            row.push(by_id[id.as_str()]);
        }
    }

    let c = tables.len();
    let mut regions = Vec::new();
    for role in Role::ALL {
        let masks: Vec<usize> = roles
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &r)| r == role)
                    .fold(0, |m, (j, _)| m | 1 << j)
            })
            .collect();
        for region in 1..1usize << c {
            regions.push(VennRegion {
                role,
                conditions: (0..c).filter(|j| region >> j & 1 == 1).collect(),
                exclusive: masks.iter().filter(|&&m| m == region).count(),
                intersection: masks.iter().filter(|&&m| m & region == region).count(),
            });
        }
    }
    Ok(RoleComparison {
        labels: labels.to_vec(),
        motif_ids,
        roles,
        regions,
    })
}

impl RoleComparison {
    pub fn region(&self, role: Role, conditions: &[usize]) -> Option<&VennRegion> {
        self.regions
            .iter()
            .find(|r| r.role == role && r.conditions == conditions)
    }

    /// Columns `role,conditions,exclusive,intersection`; conditions are
    /// joined with `&`.
    pub fn write_venn_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["role", "conditions", "exclusive", "intersection"])?;
        for r in &self.regions {
            let names: Vec<&str> = r.conditions.iter().map(|&j| self.labels[j].as_str()).collect();
            out.write_record([
                r.role.as_str(),
                &names.join("&"),
                &r.exclusive.to_string(),
                &r.intersection.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per motif with its role under each condition.
    pub fn write_membership_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["motif_id"];
        header.extend(self.labels.iter().map(String::as_str));
        out.write_record(&header)?;
        for (id, row) in self.motif_ids.iter().zip(&self.roles) {
            let mut rec = vec![id.as_str()];
            rec.extend(row.iter().map(|r| r.as_str()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}
