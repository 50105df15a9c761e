//! Policy-gradient sequence optimization with motif-shaped rewards, and a
//! greedy directed-evolution reference.
//!
//! Each round samples `K` sequences from the policy. A base completing a
//! motif hit earns that motif's role reward at that step; the final step also
//! earns the normalized guide fitness. The policy is then updated by
//! REINFORCE with a moving-average baseline, an entropy bonus and an
//! imitation term on sequences drawn from a hill-climbing replay buffer.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{tfbs_reward, RoleTable};
use crate::error::{Error, Result};
use crate::landscape::{Landscape, Normalization};
use crate::metrics::{round_metrics, select_best, top_k_mean, Scored, TOP_K};
use crate::motifs::{MotifHit, Scanner, Sequence};
use crate::policy::{
    clip_grad_norm, objective_and_grad, sgd_step, CompiledPolicy, ObjectiveTerm, PolicyParams,
};
use crate::rng;
use crate::surrogate::GbdtModel;

/// Raw (unnormalized) fitness of a sequence.
pub trait FitnessGuide: Sync {
    fn score(&self, seq: &Sequence) -> Result<f64>;
}

/// Ground-truth landscape.
pub struct OracleGuide<'a>(pub &'a Landscape);

impl FitnessGuide for OracleGuide<'_> {
    fn score(&self, seq: &Sequence) -> Result<f64> {
        Ok(self.0.fitness(seq))
    }
}

/// Boosted-tree surrogate applied to motif counts.
pub struct SurrogateGuide<'a> {
    pub model: &'a GbdtModel,
    pub scanner: &'a Scanner,
}

impl FitnessGuide for SurrogateGuide<'_> {
    fn score(&self, seq: &Sequence) -> Result<f64> {
        self.model
            .try_predict(&self.scanner.extract_features(seq).as_f64())
    }
}

/// Adapter for closures.
pub struct FnGuide<F>(pub F);

impl<F: Fn(&Sequence) -> Result<f64> + Sync> FitnessGuide for FnGuide<F> {
    fn score(&self, seq: &Sequence) -> Result<f64> {
        (self.0)(seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub sequence: Sequence,
    /// Motif shaping reward per step; the terminal fitness is kept separate.
    pub step_rewards: Vec<f64>,
    /// Guide fitness mapped to [0, 1] by the dataset bounds.
    pub terminal_fitness: f64,
    pub raw_fitness: f64,
    pub step_logprobs: Vec<f64>,
    pub step_entropies: Vec<f64>,
    pub hits: Vec<MotifHit>,
}

impl EpisodeTrace {
    pub fn total_return(&self) -> f64 {
        self.step_rewards.iter().sum::<f64>() + self.terminal_fitness
    }

    /// Per-step rewards with the terminal fitness added to the last step.
    pub fn rewards(&self) -> Vec<f64> {
        let mut r = self.step_rewards.clone();
        if let Some(last) = r.last_mut() {
            *last += self.terminal_fitness;
        }
        r
    }
}

/// Per-motif shaping rewards aligned to the scanner's motif order, with the
/// significance gate re-applied at `alpha`.
pub fn shaping_rewards(table: &RoleTable, scanner: &Scanner, alpha: f64) -> Result<Vec<f64>> {
    let ids: Vec<&str> = scanner.motif_ids().collect();
    table.rewards_for(ids.iter().copied())?;
    Ok(ids
        .iter()
        .map(|id| {
            let e = table
                .entries
                .iter()
                .find(|e| e.motif_id == *id)
                .expect("checked by rewards_for");
            tfbs_reward(e.mean_shap, e.p_value, alpha)
        })
        .collect())
}

/// Shaping reward per step from hits completing at each prefix end.
pub fn step_rewards(scanner: &Scanner, rewards: &[f64], seq: &Sequence) -> (Vec<f64>, Vec<MotifHit>) {
    let codes = seq.codes();
    let mut out = vec![0.0; codes.len()];
    let mut hits = Vec::new();
    for i in 1..=codes.len() {
        for hit in scanner.incremental_hits(&codes[..i]) {
            out[i - 1] += rewards[hit.motif];
            hits.push(hit);
        }
    }
    (out, hits)
}

/// Sample `k` episodes from stream `(seed, round, episode)` and score them.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    params: &PolicyParams,
    rewards: &[f64],
    scanner: &Scanner,
    guide: &dyn FitnessGuide,
    normalization: &Normalization,
    k: usize,
    len: usize,
    seed: u64,
    round: u64,
) -> Result<Vec<EpisodeTrace>> {
    if rewards.len() != scanner.len() {
        return Err(Error::VocabularyMismatch(format!(
            "{} shaping rewards for {} motifs",
            rewards.len(),
            scanner.len()
        )));
    }
    if len == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    let policy = CompiledPolicy::new(params)?;
    (0..k)
        .into_par_iter()
        .map(|e| {
            let mut r = rng::stream(seed, &[0x726f_6c6c, round, e as u64]);
            let sample = policy.sample(len, &mut r);
            let (step_rewards, hits) = step_rewards(scanner, rewards, &sample.sequence);
            let raw = guide.score(&sample.sequence).map_err(|err| Error::Episode {
                episode: e,
                source: Box::new(err),
            })?;
            if !raw.is_finite() {
                return Err(Error::Episode {
                    episode: e,
                    source: Box::new(Error::Numeric(format!("guide returned {raw}"))),
                });
            }
            Ok(EpisodeTrace {
                sequence: sample.sequence,
                step_rewards,
                terminal_fitness: normalization.apply_clamped(raw),
                raw_fitness: raw,
                step_logprobs: sample.log_probs,
                step_entropies: sample.entropies,
                hits,
            })
        })
        .collect()
}

/// Best-so-far sequences, unique, ordered by fitness descending then
/// sequence ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub entries: Vec<(Sequence, f64)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_fitness(&self) -> Option<f64> {
        self.entries.last().map(|e| e.1)
    }

    pub fn max_fitness(&self) -> Option<f64> {
        self.entries.first().map(|e| e.1)
    }

    pub fn insert_all(&mut self, items: impl IntoIterator<Item = (Sequence, f64)>) {
        let mut best: BTreeMap<Sequence, f64> = self.entries.drain(..).collect();
        for (seq, f) in items {
            let slot = best.entry(seq).or_insert(f);
            if f > *slot {
                *slot = f;
            }
        }
        let mut all: Vec<(Sequence, f64)> = best.into_iter().collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(self.capacity);
        self.entries = all;
    }

    /// Uniform draws (with replacement) from the better half.
    pub fn sample_top_half<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Sequence> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        let half = self.entries.len().div_ceil(2);
        (0..n)
            .map(|_| &self.entries[rng.random_range(0..half)].0)
            .collect()
    }
}

pub fn update_replay(replay: &mut ReplayBuffer, traces: &[EpisodeTrace]) {
    replay.insert_all(traces.iter().map(|t| (t.sequence.clone(), t.terminal_fitness)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    MovingAverage,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OracleGuided,
    OfflineMbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub proposals: usize,
    pub rounds: usize,
    pub length: usize,
    pub alpha: f64,
    pub policy_lr: f64,
    pub entropy_coef: f64,
    pub replay_fraction: f64,
    /// Buffer sequences imitated per update.
    pub replay_batch: usize,
    pub replay_capacity: usize,
    pub baseline: Baseline,
    pub baseline_decay: f64,
    pub clip_norm: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            proposals: 256,
            rounds: 100,
            length: 80,
            alpha: 0.01,
            policy_lr: 0.05,
            entropy_coef: 0.01,
            replay_fraction: 0.25,
            replay_batch: 64,
            replay_capacity: 512,
            baseline: Baseline::MovingAverage,
            baseline_decay: 0.9,
            clip_norm: 1.0,
            mode: Mode::OracleGuided,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.proposals < TOP_K {
            return bad("proposals per round must be at least 16");
        }
        if self.rounds == 0 {
            return bad("at least one round is required");
        }
        if self.length == 0 {
            return bad("sequence length must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) || !(0.0..=1.0).contains(&self.baseline_decay) {
            return bad("fractions must lie in [0, 1]");
        }
        if !(self.policy_lr >= 0.0) || !(self.entropy_coef >= 0.0) || !self.alpha.is_finite() {
            return bad("learning rate and entropy coefficient must be non-negative, alpha finite");
        }
        if !(self.clip_norm > 0.0) || self.replay_capacity == 0 {
            return bad("clip norm and replay capacity must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub loss: f64,
    pub mean_return: f64,
    pub mean_entropy: f64,
    pub baseline: f64,
    pub grad_norm: f64,
    pub buffer_min: f64,
    pub buffer_max: f64,
}

/// Loss and gradient of the policy objective for one round:
///
/// `-mean_k[(G_k - b) sum_i ln pi(a_i)] - beta * mean_steps H
///  + replay_fraction * mean_r NLL(replay_r)`.
pub fn reinforce_loss_and_grad(
    params: &PolicyParams,
    traces: &[EpisodeTrace],
    baseline: f64,
    entropy_coef: f64,
    replay: &[&Sequence],
    replay_fraction: f64,
) -> Result<(f64, Vec<f64>)> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces to learn from".into()));
    }
    let k = traces.len() as f64;
    let steps: usize = traces.iter().map(|t| t.sequence.len()).sum();
    let mut terms: Vec<ObjectiveTerm> = traces
        .iter()
        .map(|t| ObjectiveTerm {
            sequence: &t.sequence,
            logp_weight: -(t.total_return() - baseline) / k,
            entropy_weight: -entropy_coef / steps as f64,
        })
        .collect();
    if !replay.is_empty() && replay_fraction > 0.0 {
        let w = -replay_fraction / replay.len() as f64;
        terms.extend(replay.iter().map(|s| ObjectiveTerm {
            sequence: s,
            logp_weight: w,
            entropy_weight: 0.0,
        }));
    }
    objective_and_grad(params, &terms)
}

/// Mutable optimizer state carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub params: PolicyParams,
    pub replay: ReplayBuffer,
    pub baseline: Option<f64>,
    pub round: u64,
}

impl OptimizerState {
    pub fn new(params: PolicyParams, config: &RunConfig) -> Self {
        OptimizerState {
            params,
            replay: ReplayBuffer::new(config.replay_capacity),
            baseline: None,
            round: 0,
        }
    }
}

/// One clipped SGD step on the round objective. The replay buffer should
/// already contain this round's traces.
pub fn reinforce_update(state: &mut OptimizerState, traces: &[EpisodeTrace], config: &RunConfig) -> Result<UpdateDiagnostics> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces to learn from".into()));
    }
    let k = traces.len() as f64;
    let mean_return = traces.iter().map(EpisodeTrace::total_return).sum::<f64>() / k;
    let steps: usize = traces.iter().map(|t| t.step_entropies.len()).sum();
    let mean_entropy = traces.iter().flat_map(|t| &t.step_entropies).sum::<f64>() / steps.max(1) as f64;
    let b = match config.baseline {
        Baseline::None => 0.0,
        Baseline::MovingAverage => state.baseline.unwrap_or(mean_return),
    };
    let mut r = rng::stream(config.seed, &[0x7265_706c, state.round]);
    let replay = if config.replay_fraction > 0.0 {
        state.replay.sample_top_half(config.replay_batch, &mut r)
    } else {
        Vec::new()
    };
    let (loss, mut grad) = reinforce_loss_and_grad(
        &state.params,
        traces,
        b,
        config.entropy_coef,
        &replay,
        config.replay_fraction,
    )?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "round {}: non-finite policy loss {loss} (mean return {mean_return}, baseline {b}, buffer size {})",
            state.round,
            state.replay.len()
        )));
    }
    let grad_norm = clip_grad_norm(&mut grad, config.clip_norm);
    sgd_step(&mut state.params, &grad, config.policy_lr);
    if config.baseline == Baseline::MovingAverage {
        state.baseline = Some(config.baseline_decay * b + (1.0 - config.baseline_decay) * mean_return);
    }
    Ok(UpdateDiagnostics {
        loss,
        mean_return,
        mean_entropy,
        baseline: b,
        grad_norm,
        buffer_min: state.replay.min_fitness().unwrap_or(f64::NAN),
        buffer_max: state.replay.max_fitness().unwrap_or(f64::NAN),
    })
}

/// One row of a run log. Fitness columns are on the normalized scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub top: f64,
    pub medium: f64,
    pub diversity: f64,
    pub emb_similarity: f64,
    pub mean_return: f64,
    pub mean_entropy: Option<f64>,
    pub buffer_min: f64,
    pub buffer_max: f64,
    /// Oracle-scored Top of the same proposals, when the guide is not the
    /// oracle.
    pub oracle_top: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub sequence: Sequence,
    pub guide_score: f64,
    pub oracle_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub log: Vec<RoundLog>,
    pub proposals: Vec<Proposal>,
    pub state: OptimizerState,
}

fn score_all(guide: &dyn FitnessGuide, seqs: &[Sequence]) -> Result<Vec<f64>> {
    seqs.par_iter()
        .enumerate()
        .map(|(i, s)| {
            let v = guide.score(s).map_err(|e| Error::Episode {
                episode: i,
                source: Box::new(e),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!("guide returned {v} for proposal {i}")))
            }
        })
        .collect()
}

fn scored(seqs: &[Sequence], raw: &[f64], norm: &Normalization) -> Vec<Scored> {
    seqs.iter()
        .zip(raw)
        .map(|(s, &f)| Scored::new(s.clone(), norm.apply(f)))
        .collect()
}

/// The full loop: rollout, replay update, policy update and metrics for
/// each round. `evaluator` (the oracle in offline mode) only scores
/// proposals for reporting.
#[allow(clippy::too_many_arguments)]
pub fn run_optimization(
    config: &RunConfig,
    guide: &dyn FitnessGuide,
    evaluator: Option<&dyn FitnessGuide>,
    scanner: &Scanner,
    roles: &RoleTable,
    normalization: &Normalization,
    params: PolicyParams,
) -> Result<RunResult> {
    config.validate()?;
    let rewards = shaping_rewards(roles, scanner, config.alpha)?;
    let mut state = OptimizerState::new(params, config);
    let mut log = Vec::with_capacity(config.rounds);
    let mut last: Vec<EpisodeTrace> = Vec::new();
    for round in 1..=config.rounds {
        state.round = round as u64;
        let traces = rollout_batch(
            &state.params,
            &rewards,
            scanner,
            guide,
            normalization,
            config.proposals,
            config.length,
            config.seed,
            round as u64,
        )?;
        update_replay(&mut state.replay, &traces);
        let diag = reinforce_update(&mut state, &traces, config)?;

        let seqs: Vec<Sequence> = traces.iter().map(|t| t.sequence.clone()).collect();
        let raw: Vec<f64> = traces.iter().map(|t| t.raw_fitness).collect();
        let m = round_metrics(&scored(&seqs, &raw, normalization))?;
        let oracle_top = match evaluator {
            Some(ev) => {
                let o = score_all(ev, &seqs)?;
                Some(top_k_mean(&scored(&seqs, &o, normalization), TOP_K)?)
            }
            None => None,
        };
        log.push(RoundLog {
            round,
            top: m.top,
            medium: m.medium,
            diversity: m.diversity,
            emb_similarity: m.emb_similarity,
            mean_return: diag.mean_return,
            mean_entropy: Some(diag.mean_entropy),
            buffer_min: diag.buffer_min,
            buffer_max: diag.buffer_max,
            oracle_top,
        });
        last = traces;
    }
    let seqs: Vec<Sequence> = last.iter().map(|t| t.sequence.clone()).collect();
    let oracle = match evaluator {
        Some(ev) => Some(score_all(ev, &seqs)?),
        None => None,
    };
    let proposals = last
        .iter()
        .enumerate()
        .map(|(i, t)| Proposal {
            sequence: t.sequence.clone(),
            guide_score: t.raw_fitness,
            oracle_score: oracle.as_ref().map(|o| o[i]),
        })
        .collect();
    Ok(RunResult { log, proposals, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    pub proposals: usize,
    pub rounds: usize,
    pub keep_fraction: f64,
    /// Per-base mutation probability; `None` means `1 / L`.
    pub mutation_rate: Option<f64>,
    pub seed: u64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            proposals: 256,
            rounds: 100,
            keep_fraction: 0.1,
            mutation_rate: None,
            seed: 0,
        }
    }
}

fn mutate<R: Rng + ?Sized>(parent: &Sequence, rate: f64, rng: &mut R) -> Sequence {
    let mut codes = parent.codes().to_vec();
    for c in &mut codes {
        if rate > 0.0 && rng.random_bool(rate) {
            // a different base, uniformly
            *c = (*c + rng.random_range(1..4u8)) % 4;
        }
    }
    Sequence::from_codes(codes).expect("mutated codes are bases")
}

/// Greedy directed evolution: keep the best `keep_fraction * proposals`
/// distinct sequences, refill the pool with point-mutated copies of
/// survivors, re-score.
pub fn greedy_baseline(
    config: &GreedyConfig,
    guide: &dyn FitnessGuide,
    evaluator: Option<&dyn FitnessGuide>,
    normalization: &Normalization,
    seeds: &[Sequence],
) -> Result<RunResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("greedy baseline needs a non-empty seed set".into()));
    }
    if config.proposals < 2 || config.rounds == 0 || !(config.keep_fraction > 0.0 && config.keep_fraction <= 1.0) {
        return Err(Error::InvalidInput("invalid greedy configuration".into()));
    }
    let len = seeds[0].len();
    if let Some(s) = seeds.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: s.len(),
        });
    }
    let rate = config.mutation_rate.unwrap_or(1.0 / len as f64);
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("mutation rate {rate} outside [0, 1]")));
    }
    let mut pool: Vec<Scored> = seeds
        .iter()
        .cloned()
        .zip(score_all(guide, seeds)?)
        .map(|(s, f)| Scored::new(s, f))
        .collect();
    let elite = ((config.proposals as f64 * config.keep_fraction).ceil() as usize).clamp(1, config.proposals);
    let mut log = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let mut unique: BTreeMap<Sequence, f64> = BTreeMap::new();
        for p in pool {
            unique.entry(p.sequence).or_insert(p.fitness);
        }
        let unique: Vec<Scored> = unique.into_iter().map(|(s, f)| Scored::new(s, f)).collect();
        let keep = elite.min(unique.len());
        let survivors: Vec<Scored> = select_best(&unique, keep)?.into_iter().cloned().collect();
        let mut r = rng::stream(config.seed, &[0x6772_6479, round as u64]);
        let children: Vec<Sequence> = (survivors.len()..config.proposals)
            .map(|_| mutate(&survivors[r.random_range(0..survivors.len())].sequence, rate, &mut r))
            .collect();
        let child_scores = score_all(guide, &children)?;
        let elite_min = survivors.last().map(|s| normalization.apply(s.fitness)).unwrap_or(f64::NAN);
        let elite_max = survivors.first().map(|s| normalization.apply(s.fitness)).unwrap_or(f64::NAN);
        pool = survivors;
        pool.extend(children.into_iter().zip(child_scores).map(|(s, f)| Scored::new(s, f)));

        let seqs: Vec<Sequence> = pool.iter().map(|p| p.sequence.clone()).collect();
        let raw: Vec<f64> = pool.iter().map(|p| p.fitness).collect();
        let normalized = scored(&seqs, &raw, normalization);
        let m = round_metrics(&normalized)?;
        let oracle_top = match evaluator {
            Some(ev) => Some(top_k_mean(&scored(&seqs, &score_all(ev, &seqs)?, normalization), TOP_K)?),
            None => None,
        };
        log.push(RoundLog {
            round,
            top: m.top,
            medium: m.medium,
            diversity: m.diversity,
            emb_similarity: m.emb_similarity,
            mean_return: normalized.iter().map(|p| p.fitness).sum::<f64>() / normalized.len() as f64,
            mean_entropy: None,
            buffer_min: elite_min,
            buffer_max: elite_max,
            oracle_top,
        });
    }
    let seqs: Vec<Sequence> = pool.iter().map(|p| p.sequence.clone()).collect();
    let oracle = match evaluator {
        Some(ev) => Some(score_all(ev, &seqs)?),
        None => None,
    };
    let proposals = pool
        .iter()
        .enumerate()
        .map(|(i, p)| Proposal {
            sequence: p.sequence.clone(),
            guide_score: p.fitness,
            oracle_score: oracle.as_ref().map(|o| o[i]),
        })
        .collect();
    let dummy = PolicyParams {
        shape: Default::default(),
        values: Vec::new(),
    };
    Ok(RunResult {
        log,
        proposals,
        state: OptimizerState {
            params: dummy,
            replay: ReplayBuffer::new(0),
            baseline: None,
            round: config.rounds as u64,
        },
    })
}

pub fn write_run_log<W: Write>(w: W, log: &[RoundLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in log {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_run_log<R: Read>(r: R) -> Result<Vec<RoundLog>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_proposals_csv<W: Write>(w: W, proposals: &[Proposal]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in proposals {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_proposals_csv<R: Read>(r: R) -> Result<Vec<Proposal>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{Role, RoleEntry};
    use crate::landscape::LandscapeSpec;
    use crate::motifs::{synthetic_vocabulary, Pfm, Strand};
    use crate::policy::{nll_and_grad, PolicyShape};
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_norm() -> Normalization {
        Normalization { min: 0.0, max: 1.0 }
    }

    fn zero_table(scanner: &Scanner) -> RoleTable {
        RoleTable {
            alpha: 0.01,
            entries: scanner
                .motif_ids()
                .map(|id| RoleEntry::new(id.to_string(), 0.0, 1.0, 0.01))
                .collect(),
        }
    }

    fn setup() -> (Vec<Pfm>, Scanner) {
        let vocab = synthetic_vocabulary(16, 0);
        let scanner = Scanner::new(&vocab, 0.85).unwrap();
        (vocab, scanner)
    }

    fn small_params(seed: u64) -> PolicyParams {
        let shape = PolicyShape {
            window: 3,
            embed_dim: 4,
            hidden: 6,
        };
        let mut p = PolicyParams::init(shape, seed).unwrap();
        let mut r = rng::stream(seed, &[5]);
        let n = p.values.len();
        for v in &mut p.values[n - 6 * 4 - 4..] {
            *v = r.random_range(-0.5..0.5);
        }
        p
    }

    #[test]
    fn zero_rewards_leave_only_terminal_fitness() {
        let (_, scanner) = setup();
        let table = zero_table(&scanner);
        let rewards = shaping_rewards(&table, &scanner, 0.01).unwrap();
        let guide = FnGuide(|s: &Sequence| Ok(s.codes().iter().filter(|&&c| c == 0).count() as f64));
        let norm = Normalization { min: 0.0, max: 40.0 };
        let p = PolicyParams::init(PolicyShape::default(), 0).unwrap();
        let traces = rollout_batch(&p, &rewards, &scanner, &guide, &norm, 8, 40, 1, 1).unwrap();
        for t in &traces {
            assert!(t.step_rewards.iter().all(|&r| r == 0.0));
            let a = t.sequence.codes().iter().filter(|&&c| c == 0).count() as f64;
            assert_eq!(t.terminal_fitness, (a / 40.0).clamp(0.0, 1.0));
            assert_eq!(t.total_return(), t.terminal_fitness);
            let r = t.rewards();
            assert_eq!(r[39], t.terminal_fitness);
        }
    }

    #[test]
    fn single_activator_hit_is_rewarded_at_its_end() {
        let (vocab, scanner) = setup();
        let mut table = zero_table(&scanner);
        table.entries[0] = RoleEntry::new(vocab[0].motif_id.clone(), 0.4, 0.001, 0.01);
        let rewards = shaping_rewards(&table, &scanner, 0.01).unwrap();
        // find a background sequence with no hits, then plant motif 0 ending at 17
        let consensus = vocab[0].consensus();
        let mut r = rng::stream(3, &[]);
        let seq = loop {
            let mut codes = Sequence::random(40, &mut r).codes().to_vec();
            let start = 17 - consensus.len();
            codes[start..17].copy_from_slice(consensus.codes());
            let s = Sequence::from_codes(codes).unwrap();
            let hits = scanner.scan(&s);
            if hits.len() == 1 && hits[0].motif == 0 && hits[0].end == 17 {
                break s;
            }
        };
        let (steps, hits) = step_rewards(&scanner, &rewards, &seq);
        assert_eq!(hits.len(), 1);
        assert!((steps[16] - 0.004).abs() < 1e-15);
        for (i, &v) in steps.iter().enumerate() {
            if i != 16 {
                assert_eq!(v, 0.0);
            }
        }
        assert_eq!(hits[0].strand, Strand::Forward);
    }

    #[test]
    fn stored_rewards_match_full_scan() {
        let (vocab, scanner) = setup();
        let spec = LandscapeSpec::planted_default(vocab.iter().map(|p| p.motif_id.clone()).collect(), 1).unwrap();
        let table = RoleTable {
            alpha: 0.01,
            entries: vocab
                .iter()
                .zip(&spec.weights)
                .map(|(p, &w)| RoleEntry::new(p.motif_id.clone(), w, if w == 0.0 { 0.5 } else { 0.0 }, 0.01))
                .collect(),
        };
        let rewards = shaping_rewards(&table, &scanner, 0.01).unwrap();
        let guide = FnGuide(|_: &Sequence| Ok(0.5));
        let p = PolicyParams::init(PolicyShape::default(), 2).unwrap();
        let traces = rollout_batch(&p, &rewards, &scanner, &guide, &unit_norm(), 64, 80, 2, 1).unwrap();
        let mut any = false;
        for t in &traces {
            let mut expected = vec![0.0; 80];
            for h in scanner.scan(&t.sequence) {
                expected[h.end - 1] += table.entries[h.motif].reward;
                any = true;
            }
            assert_eq!(t.step_rewards, expected);
            assert_eq!(t.hits, scanner.scan(&t.sequence));
        }
        assert!(any);
    }

    #[test]
    fn guide_failure_names_the_episode() {
        let (_, scanner) = setup();
        let rewards = vec![0.0; 16];
        let guide = FnGuide(|s: &Sequence| {
            if s.codes()[0] == 3 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(0.0)
            }
        });
        let p = PolicyParams::init(PolicyShape::default(), 2).unwrap();
        let err = rollout_batch(&p, &rewards, &scanner, &guide, &unit_norm(), 32, 10, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Episode { .. }));
        assert!(rollout_batch(&p, &[0.0; 3], &scanner, &guide, &unit_norm(), 4, 10, 0, 1).is_err());
    }

    #[test]
    fn alpha_zero_disables_shaping() {
        let (vocab, scanner) = setup();
        let table = RoleTable {
            alpha: 0.01,
            entries: vocab
                .iter()
                .map(|p| RoleEntry::new(p.motif_id.clone(), 1.0, 0.0, 0.01))
                .collect(),
        };
        assert!(shaping_rewards(&table, &scanner, 0.0).unwrap().iter().all(|&r| r == 0.0));
        assert!(shaping_rewards(&table, &scanner, 0.01).unwrap().iter().all(|&r| r == 0.01));
        assert_eq!(table.entries[0].role, Role::Activator);
    }

    fn trace_of(seq: Sequence, ret: f64) -> EpisodeTrace {
        let n = seq.len();
        EpisodeTrace {
            sequence: seq,
            step_rewards: vec![0.0; n],
            terminal_fitness: ret,
            raw_fitness: ret,
            step_logprobs: vec![0.0; n],
            step_entropies: vec![0.0; n],
            hits: Vec::new(),
        }
    }

    fn random_traces(n: usize, len: usize, seed: u64) -> Vec<EpisodeTrace> {
        let mut r = rng::stream(seed, &[8]);
        (0..n)
            .map(|_| {
                let s = Sequence::random(len, &mut r);
                let mut t = trace_of(s, r.random_range(0.0..1.0));
                t.step_rewards[len / 2] = r.random_range(-0.1..0.1);
                t
            })
            .collect()
    }

    #[test]
    fn equal_returns_give_zero_gradient() {
        let p = small_params(1);
        let mut r = rng::stream(4, &[]);
        let traces: Vec<EpisodeTrace> = (0..6).map(|_| trace_of(Sequence::random(9, &mut r), 0.3)).collect();
        let (_, grad) = reinforce_loss_and_grad(&p, &traces, 0.3, 0.0, &[], 0.25).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));

        let config = RunConfig {
            entropy_coef: 0.0,
            ..RunConfig::default()
        };
        let mut state = OptimizerState::new(p.clone(), &config);
        let diag = reinforce_update(&mut state, &traces, &config).unwrap();
        assert_eq!(state.params, p);
        assert_eq!(diag.baseline, 0.3);
    }

    #[test]
    fn single_episode_gradient_is_scaled_likelihood_gradient() {
        let p = small_params(2);
        let seq = Sequence::random(11, &mut rng::stream(5, &[]));
        let g_ret = 0.73;
        let (_, grad) = reinforce_loss_and_grad(&p, &[trace_of(seq.clone(), g_ret)], 0.0, 0.0, &[], 0.0).unwrap();
        let (_, nll_grad) = nll_and_grad(&p, &[seq]).unwrap();
        for (a, b) in grad.iter().zip(&nll_grad) {
            assert!((a - g_ret * b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for draw in 0..20u64 {
            let p = small_params(100 + draw);
            let traces = random_traces(4, 7, draw);
            let mut r = rng::stream(draw, &[6]);
            let extra: Vec<Sequence> = (0..2).map(|_| Sequence::random(7, &mut r)).collect();
            let replay: Vec<&Sequence> = extra.iter().collect();
            let f = |q: &PolicyParams| reinforce_loss_and_grad(q, &traces, 0.4, 0.05, &replay, 0.25).unwrap();
            let (_, grad) = f(&p);
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..p.values.len() {
                let mut a = p.clone();
                a.values[i] += h;
                let mut b = p.clone();
                b.values[i] -= h;
                let fd = (f(&a).0 - f(&b).0) / (2.0 * h);
                worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "draw {draw}: {worst}");
        }
    }

    #[test]
    fn replay_buffer_semantics() {
        let s = |t: &str| -> Sequence { t.parse().unwrap() };
        let mut buf = ReplayBuffer::new(3);
        buf.insert_all([(s("AAA"), 0.5), (s("CCC"), 0.7), (s("GGG"), 0.9)]);
        let before = buf.clone();
        buf.insert_all([(s("TTT"), 0.1)]);
        assert_eq!(buf, before);
        buf.insert_all([(s("AAA"), 0.8)]);
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.entries[1], (s("AAA"), 0.8));
        buf.insert_all([(s("AAA"), 0.2)]);
        assert_eq!(buf.entries[1], (s("AAA"), 0.8));
        let mut tied = ReplayBuffer::new(2);
        tied.insert_all([(s("TTT"), 1.0), (s("CCC"), 1.0), (s("AAA"), 1.0)]);
        assert_eq!(tied.entries, vec![(s("AAA"), 1.0), (s("CCC"), 1.0)]);
    }

    proptest! {
        #[test]
        fn replay_matches_sort_oracle(seed in 0u64..300, cap in 1usize..20) {
            let mut r = rng::stream(seed, &[]);
            let mut buf = ReplayBuffer::new(cap);
            let mut all: Vec<(Sequence, f64)> = Vec::new();
            let mut prev_min: Option<f64> = None;
            for _ in 0..10 {
                let batch: Vec<(Sequence, f64)> = (0..r.random_range(1..8))
                    .map(|_| (Sequence::random(3, &mut r), r.random_range(0..10) as f64))
                    .collect();
                all.extend(batch.clone());
                buf.insert_all(batch);
                if buf.len() == cap {
                    if let Some(m) = prev_min {
                        prop_assert!(buf.min_fitness().unwrap() >= m);
                    }
                    prev_min = buf.min_fitness();
                }
                // brute force: max per sequence, sort, truncate
                let mut best: Vec<(Sequence, f64)> = Vec::new();
                for (s, f) in &all {
                    match best.iter_mut().find(|(t, _)| t == s) {
                        Some(e) => e.1 = e.1.max(*f),
                        None => best.push((s.clone(), *f)),
                    }
                }
                best.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                best.truncate(cap);
                prop_assert_eq!(&buf.entries, &best);
            }
        }
    }

    fn tiny_run_config(rounds: usize) -> RunConfig {
        RunConfig {
            proposals: 32,
            rounds,
            length: 30,
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_round_run_and_determinism() {
        let (vocab, scanner) = setup();
        let spec = LandscapeSpec::planted_default(vocab.iter().map(|p| p.motif_id.clone()).collect(), 0).unwrap();
        let land = Landscape::new(spec, vocab, 0.85).unwrap();
        let guide = OracleGuide(&land);
        let norm = Normalization { min: -3.0, max: 3.0 };
        let p = PolicyParams::init(PolicyShape::default(), 1).unwrap();
        let table = zero_table(&scanner);
        let one = run_optimization(&tiny_run_config(1), &guide, None, &scanner, &table, &norm, p.clone()).unwrap();
        assert_eq!(one.log.len(), 1);
        assert_eq!(one.proposals.len(), 32);
        let a = run_optimization(&tiny_run_config(3), &guide, Some(&guide), &scanner, &table, &norm, p.clone()).unwrap();
        let b = run_optimization(&tiny_run_config(3), &guide, Some(&guide), &scanner, &table, &norm, p).unwrap();
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        write_run_log(&mut la, &a.log).unwrap();
        write_run_log(&mut lb, &b.log).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.log[0].oracle_top, Some(a.log[0].top));
        assert_eq!(read_run_log(&la[..]).unwrap(), a.log);
        let header = String::from_utf8(la).unwrap();
        assert!(header.starts_with(
            "round,top,medium,diversity,emb_similarity,mean_return,mean_entropy,buffer_min,buffer_max,oracle_top\n"
        ));
        let mut pc = Vec::new();
        write_proposals_csv(&mut pc, &a.proposals).unwrap();
        assert_eq!(read_proposals_csv(&pc[..]).unwrap(), a.proposals);
    }

    #[test]
    fn greedy_without_mutation_freezes_the_pool() {
        let mut r = rng::stream(9, &[]);
        let seeds: Vec<Sequence> = (0..50).map(|_| Sequence::random(20, &mut r)).collect();
        let guide = FnGuide(|s: &Sequence| Ok(s.codes().iter().filter(|&&c| c == 0).count() as f64));
        let config = GreedyConfig {
            proposals: 20,
            rounds: 4,
            mutation_rate: Some(0.0),
            ..GreedyConfig::default()
        };
        let run = greedy_baseline(&config, &guide, None, &unit_norm(), &seeds).unwrap();
        let set = |p: &[Proposal]| {
            let mut v: Vec<String> = p.iter().map(|x| x.sequence.to_string()).collect();
            v.sort();
            v.dedup();
            v
        };
        let run1 = greedy_baseline(&GreedyConfig { rounds: 1, ..config.clone() }, &guide, None, &unit_norm(), &seeds).unwrap();
        assert_eq!(set(&run.proposals), set(&run1.proposals));
        assert!(greedy_baseline(&config, &guide, None, &unit_norm(), &[]).is_err());
    }

    #[test]
    fn greedy_selection_is_monotone() {
        let mut r = rng::stream(10, &[]);
        let seeds: Vec<Sequence> = (0..100).map(|_| Sequence::random(30, &mut r)).collect();
        let guide = FnGuide(|s: &Sequence| Ok(s.codes().iter().filter(|&&c| c == 0).count() as f64));
        let config = GreedyConfig {
            proposals: 64,
            rounds: 15,
            ..GreedyConfig::default()
        };
        let run = greedy_baseline(&config, &guide, None, &Normalization { min: 0.0, max: 30.0 }, &seeds).unwrap();
        for w in run.log.windows(2) {
            assert!(w[1].buffer_max >= w[0].buffer_max);
            assert!(w[1].buffer_min >= w[0].buffer_min);
        }
        assert!(run.log.last().unwrap().top > run.log[0].top);
    }
}
