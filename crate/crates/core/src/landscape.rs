//! Synthetic ground-truth fitness landscape with planted motif roles.
//!
//! Fitness is a clamped function of motif occurrence counts:
//!
//! ```text
//! f(X) = clamp(b + sum_t w_t h_t(X) + sum_(a,b) c_ab min(h_a(X), h_b(X)), -B, B)
//! ```
//!
//! Oracle queries are noiseless; label noise is only added to generated
//! datasets.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motifs::{FeatureVector, Pfm, Scanner, Sequence};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub motif_a: String,
    pub motif_b: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    pub vocab_ids: Vec<String>,
    /// Positive = planted activator, negative = repressor, zero = neutral.
    pub weights: Vec<f64>,
    pub interactions: Vec<Interaction>,
    pub intercept: f64,
    pub saturation_bound: f64,
    pub label_noise_sd: f64,
    pub seed: u64,
}

impl LandscapeSpec {
    /// Randomly assign `activators` weights of +1 and `repressors` weights of
    /// -1 over `vocab_ids`; the rest are neutral.
    pub fn planted(vocab_ids: Vec<String>, activators: usize, repressors: usize, seed: u64) -> Result<Self> {
        if activators + repressors > vocab_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{activators} activators + {repressors} repressors exceed vocabulary of {}",
                vocab_ids.len()
            )));
        }
        let mut order: Vec<usize> = (0..vocab_ids.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0x726f_6c65]));
        let mut weights = vec![0.0; vocab_ids.len()];
        for (rank, &i) in order.iter().enumerate() {
            if rank < activators {
                weights[i] = 1.0;
            } else if rank < activators + repressors {
                weights[i] = -1.0;
            }
        }
        Ok(LandscapeSpec {
            vocab_ids,
            weights,
            interactions: Vec::new(),
            intercept: 0.0,
            saturation_bound: 10.0,
            label_noise_sd: 0.0,
            seed,
        })
    }

    /// Default desk-scale landscape: 6 activators, 6 repressors and the
    /// remaining motifs neutral, with one synergy between two activators.
    pub fn planted_default(vocab_ids: Vec<String>, seed: u64) -> Result<Self> {
        Self::planted_with(vocab_ids, 6, 6, 0.5, 0.02, seed)
    }

    /// [`planted`](Self::planted) plus a synergy of `synergy` between the
    /// first two activators (in vocabulary order) and label noise.
    pub fn planted_with(
        vocab_ids: Vec<String>,
        activators: usize,
        repressors: usize,
        synergy: f64,
        label_noise_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut spec = Self::planted(vocab_ids, activators, repressors, seed)?;
        let act: Vec<&String> = spec
            .vocab_ids
            .iter()
            .zip(&spec.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(id, _)| id)
            .collect();
        if synergy != 0.0 && act.len() >= 2 {
            spec.interactions.push(Interaction {
                motif_a: act[0].clone(),
                motif_b: act[1].clone(),
                coefficient: synergy,
            });
        }
        spec.label_noise_sd = label_noise_sd;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.vocab_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} motifs",
                self.weights.len(),
                self.vocab_ids.len()
            )));
        }
        if !(self.saturation_bound > 0.0) {
            return Err(Error::InvalidInput("saturation bound must be positive".into()));
        }
        if !(self.label_noise_sd >= 0.0) {
            return Err(Error::InvalidInput("label noise sd must be non-negative".into()));
        }
        for int in &self.interactions {
            for id in [&int.motif_a, &int.motif_b] {
                if !self.vocab_ids.contains(id) {
                    return Err(Error::InvalidInput(format!("interaction references unknown motif {id}")));
                }
            }
        }
        Ok(())
    }

    fn index_of(&self, id: &str) -> usize {
        self.vocab_ids.iter().position(|v| v == id).expect("validated")
    }

    /// Fitness as a function of occurrence counts.
    pub fn fitness_from_features(&self, h: &FeatureVector) -> f64 {
        let mut f = self.intercept;
        for (w, &c) in self.weights.iter().zip(&h.0) {
            f += w * c as f64;
        }
        for int in &self.interactions {
            let a = h.0[self.index_of(&int.motif_a)];
            let b = h.0[self.index_of(&int.motif_b)];
            f += int.coefficient * a.min(b) as f64;
        }
        f.clamp(-self.saturation_bound, self.saturation_bound)
    }
}

fn check_vocab<'a>(spec: &LandscapeSpec, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let ids: Vec<&str> = ids.collect();
    if ids.len() != spec.vocab_ids.len() || ids.iter().zip(&spec.vocab_ids).any(|(a, b)| *a != b) {
        return Err(Error::VocabularyMismatch(format!(
            "landscape expects {:?}, scanner has {:?}",
            spec.vocab_ids, ids
        )));
    }
    Ok(())
}

/// Noiseless ground-truth fitness of `seq`.
pub fn oracle_fitness(seq: &Sequence, spec: &LandscapeSpec, scanner: &Scanner) -> Result<f64> {
    check_vocab(spec, scanner.motif_ids())?;
    Ok(spec.fitness_from_features(&scanner.extract_features(seq)))
}

/// A landscape bound to its motif vocabulary.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub spec: LandscapeSpec,
    pub vocab: Vec<Pfm>,
    scanner: Scanner,
}

impl Landscape {
    pub fn new(spec: LandscapeSpec, vocab: Vec<Pfm>, threshold_fraction: f64) -> Result<Self> {
        spec.validate()?;
        let scanner = Scanner::new(&vocab, threshold_fraction)?;
        check_vocab(&spec, scanner.motif_ids())?;
        Ok(Landscape { spec, vocab, scanner })
    }

    pub fn scanner(&self) -> &Scanner {
        &self.scanner
    }

    pub fn fitness(&self, seq: &Sequence) -> f64 {
        self.spec.fitness_from_features(&self.scanner.extract_features(seq))
    }

    /// Random sequences with Poisson-planted consensus sites, labelled by the
    /// oracle plus Gaussian noise. Record `i` draws from its own stream, so
    /// the output does not depend on scheduling.
    pub fn generate_dataset(&self, n: usize, length: usize, embed_rate: f64, seed: u64) -> Result<LabeledDataset> {
        if n == 0 {
            return Err(Error::InvalidInput("dataset size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&embed_rate) {
            return Err(Error::InvalidInput(format!("invalid embed rate {embed_rate}")));
        }
        if embed_rate > 0.0 && length < self.scanner.max_motif_len() {
            return Err(Error::InvalidInput(format!(
                "sequence length {length} is shorter than the longest motif ({})",
                self.scanner.max_motif_len()
            )));
        }
        let consensus: Vec<Sequence> = self.vocab.iter().map(Pfm::consensus).collect();
        let noise = Normal::new(0.0, self.spec.label_noise_sd)
            .map_err(|e| Error::InvalidInput(format!("label noise: {e}")))?;
        let poisson = if embed_rate > 0.0 {
            Some(Poisson::new(embed_rate).map_err(|e| Error::InvalidInput(format!("embed rate: {e}")))?)
        } else {
            None
        };

        let records = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, &[i as u64]);
                let mut codes = Sequence::random(length, &mut r).codes().to_vec();
                let k = poisson.as_ref().map_or(0, |p| p.sample(&mut r) as usize);
                let mut placed: Vec<(usize, usize)> = Vec::with_capacity(k);
                for _ in 0..k {
                    let motif = &consensus[r.random_range(0..consensus.len())];
                    let site = if r.random_bool(0.5) {
                        motif.clone()
                    } else {
                        motif.reverse_complement()
                    };
                    let span = length - site.len() + 1;
                    let mut start = r.random_range(0..span);
                    for _ in 0..20 {
                        if placed.iter().all(|&(s, e)| start + site.len() <= s || start >= e) {
                            break;
                        }
                        start = r.random_range(0..span);
                    }
                    codes[start..start + site.len()].copy_from_slice(site.codes());
                    placed.push((start, start + site.len()));
                }
                let sequence = Sequence::from_codes(codes).expect("valid codes");
                let mut fitness = self.fitness(&sequence);
                if self.spec.label_noise_sd > 0.0 {
                    fitness += noise.sample(&mut r);
                }
                Record { sequence, fitness }
            })
            .collect();
        Ok(LabeledDataset {
            records,
            normalization: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub sequence: Sequence,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return Err(Error::InvalidInput(
                "min-max normalisation needs at least two distinct fitness values".into(),
            ));
        }
        Ok(Normalization { min, max })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.min) / (self.max - self.min)
    }

    /// `apply` clamped to `[0, 1]`.
    pub fn apply_clamped(&self, raw: f64) -> f64 {
        self.apply(raw).clamp(0.0, 1.0)
    }

    pub fn invert(&self, normalized: f64) -> f64 {
        normalized * (self.max - self.min) + self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    /// Present when `fitness` values are min-max normalised.
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sequences(&self) -> Vec<Sequence> {
        self.records.iter().map(|r| r.sequence.clone()).collect()
    }

    pub fn fitness(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fitness).collect()
    }

    /// CSV with header `sequence,fitness`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sequence", "fitness"])?;
        for r in &self.records {
            wtr.write_record([r.sequence.to_string(), r.fitness.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr
            .deserialize::<Record>()
            .map(|row| row.map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            records,
            normalization: None,
        })
    }
}

/// Map fitness to `[0, 1]` by the dataset's own min and max. Already
/// normalised datasets are returned unchanged.
pub fn minmax_normalize(ds: &LabeledDataset) -> Result<LabeledDataset> {
    if ds.normalization.is_some() {
        return Ok(ds.clone());
    }
    let norm = Normalization::from_values(ds.records.iter().map(|r| r.fitness))?;
    Ok(LabeledDataset {
        records: ds
            .records
            .iter()
            .map(|r| Record {
                sequence: r.sequence.clone(),
                fitness: norm.apply(r.fitness),
            })
            .collect(),
        normalization: Some(norm),
    })
}

/// Undo [`minmax_normalize`].
pub fn denormalize(ds: &LabeledDataset) -> LabeledDataset {
    match ds.normalization {
        None => ds.clone(),
        Some(norm) => LabeledDataset {
            records: ds
                .records
                .iter()
                .map(|r| Record {
                    sequence: r.sequence.clone(),
                    fitness: norm.invert(r.fitness),
                })
                .collect(),
            normalization: None,
        },
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Easy,
    Middle,
    Hard,
    Offline95,
    Full,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffMode {
    #[default]
    Percentile,
    /// Bounds are raw fitness values.
    Absolute,
}

/// Fitness band `[lower, upper)`; an upper percentile of 100 is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub mode: CutoffMode,
}

impl PartitionSpec {
    pub fn of_kind(kind: PartitionKind) -> Self {
        let (lower, upper) = match kind {
            PartitionKind::Hard => (20.0, 40.0),
            PartitionKind::Middle => (40.0, 60.0),
            PartitionKind::Easy => (60.0, 80.0),
            PartitionKind::Offline95 => (0.0, 95.0),
            PartitionKind::Full | PartitionKind::Custom => (0.0, 100.0),
        };
        PartitionSpec {
            kind,
            lower,
            upper,
            mode: CutoffMode::Percentile,
        }
    }

    pub fn percentiles(lower: f64, upper: f64) -> Self {
        PartitionSpec {
            kind: PartitionKind::Custom,
            lower,
            upper,
            mode: CutoffMode::Percentile,
        }
    }

    pub fn absolute(lower: f64, upper: f64) -> Self {
        PartitionSpec {
            kind: PartitionKind::Custom,
            lower,
            upper,
            mode: CutoffMode::Absolute,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !(self.lower < self.upper) || (self.mode == CutoffMode::Percentile && !(in_range(self.lower) && in_range(self.upper))) {
            return Err(Error::InvalidInput(format!(
                "invalid partition bounds [{}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "easy" => PartitionKind::Easy,
            "middle" => PartitionKind::Middle,
            "hard" => PartitionKind::Hard,
            "offline95" => PartitionKind::Offline95,
            "full" => PartitionKind::Full,
            other => return Err(Error::InvalidInput(format!("unknown partition {other:?}"))),
        })
    }
}

/// Records whose fitness falls in the band described by `spec`.
pub fn partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot partition an empty dataset".into()));
    }
    if spec.kind == PartitionKind::Full {
        return Ok(ds.clone());
    }
    let (lo, hi, hi_inclusive) = match spec.mode {
        CutoffMode::Absolute => (spec.lower, spec.upper, false),
        CutoffMode::Percentile => {
            let mut sorted = ds.fitness();
            sorted.sort_by(f64::total_cmp);
            (
                percentile_sorted(&sorted, spec.lower),
                percentile_sorted(&sorted, spec.upper),
                spec.upper >= 100.0,
            )
        }
    };
    let records: Vec<Record> = ds
        .records
        .iter()
        .filter(|r| r.fitness >= lo && (r.fitness < hi || (hi_inclusive && r.fitness <= hi)))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "partition [{}, {}) selected no records",
            spec.lower, spec.upper
        )));
    }
    Ok(LabeledDataset {
        records,
        normalization: ds.normalization,
    })
}

/// Offline training subset: a random half of the data, then everything below
/// its 95th fitness percentile.
pub fn offline_subset(ds: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x6f66_666c]));
    let mut half: Vec<usize> = idx[..ds.len().div_ceil(2)].to_vec();
    half.sort_unstable();
    let halved = LabeledDataset {
        records: half.into_iter().map(|i| ds.records[i].clone()).collect(),
        normalization: ds.normalization,
    };
    partition(&halved, &PartitionSpec::of_kind(PartitionKind::Offline95))
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub landscape: LandscapeSpec,
    pub vocabulary: Vec<Pfm>,
    pub threshold_fraction: f64,
    pub n: usize,
    pub length: usize,
    pub embed_rate: f64,
    pub seed: u64,
    /// Bounds of the raw labels of the full dataset.
    pub normalization: Normalization,
}
