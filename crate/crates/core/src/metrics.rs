//! Per-round proposal metrics: Top, Medium, Diversity and k-mer embedding
//! similarity.
//!
//! "Best" always means highest fitness, with ties broken by lexicographic
//! sequence order so results do not depend on proposal order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motifs::Sequence;

pub const TOP_K: usize = 16;
pub const MEDIUM_M: usize = 128;
pub const EMBED_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub sequence: Sequence,
    pub fitness: f64,
}

impl Scored {
    pub fn new(sequence: Sequence, fitness: f64) -> Self {
        Scored { sequence, fitness }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub top: f64,
    pub medium: f64,
    pub diversity: f64,
    pub emb_similarity: f64,
}

fn best_first(a: &Scored, b: &Scored) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then_with(|| a.sequence.cmp(&b.sequence))
}

/// The `m` best proposals, best first.
pub fn select_best(proposals: &[Scored], m: usize) -> Result<Vec<&Scored>> {
    if let Some(p) = proposals.iter().find(|p| p.fitness.is_nan()) {
        return Err(Error::Numeric(format!("NaN fitness for {}", p.sequence)));
    }
    if m > proposals.len() {
        return Err(Error::InvalidInput(format!(
            "need at least {m} proposals, got {}",
            proposals.len()
        )));
    }
    let mut sorted: Vec<&Scored> = proposals.iter().collect();
    sorted.sort_by(|a, b| best_first(a, b));
    sorted.truncate(m);
    Ok(sorted)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

/// Mean fitness of the `k` best proposals.
pub fn top_k_mean(proposals: &[Scored], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let best = select_best(proposals, k)?;
    if best[0].fitness == best[k - 1].fitness {
        return Ok(best[0].fitness);
    }
    Ok(best.iter().map(|p| p.fitness).sum::<f64>() / k as f64)
}

/// Median fitness of the `m` best proposals.
pub fn median_of_top(proposals: &[Scored], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    let best = select_best(proposals, m)?;
    Ok(median(best.iter().map(|p| p.fitness).collect()))
}

/// Median pairwise Hamming distance among the `m` best proposals.
pub fn diversity(proposals: &[Scored], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidInput("diversity needs at least two sequences".into()));
    }
    let best = select_best(proposals, m)?;
    let len = best[0].sequence.len();
    if let Some(p) = best.iter().find(|p| p.sequence.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: p.sequence.len(),
        });
    }
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(best[i].sequence.hamming(&best[j].sequence) as f64);
        }
    }
    Ok(median(d))
}

/// Overlapping forward-strand k-mer counts, indexed base-4.
pub fn kmer_counts(seq: &Sequence, k: usize) -> Vec<f64> {
    let mut counts = vec![0.0; 1 << (2 * k)];
    let codes = seq.codes();
    if k == 0 || codes.len() < k {
        return counts;
    }
    for w in codes.windows(k) {
        let idx = w.iter().fold(0usize, |acc, &c| acc << 2 | c as usize);
        counts[idx] += 1.0;
    }
    counts
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean pairwise cosine similarity of k-mer count vectors of the `m` best
/// proposals.
pub fn emb_similarity(proposals: &[Scored], m: usize, k: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidInput("similarity needs at least two sequences".into()));
    }
    if !(1..=8).contains(&k) {
        return Err(Error::InvalidInput(format!("k-mer size {k} outside 1..=8")));
    }
    let best = select_best(proposals, m)?;
    let emb: Vec<Vec<f64>> = best.iter().map(|p| kmer_counts(&p.sequence, k)).collect();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += cosine(&emb[i], &emb[j]);
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// All four metrics with the standard sizes, shrunk to the proposal count
/// when fewer proposals are available.
pub fn round_metrics(proposals: &[Scored]) -> Result<RoundMetrics> {
    let n = proposals.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 proposals, got {n}")));
    }
    let m = MEDIUM_M.min(n);
    Ok(RoundMetrics {
        top: top_k_mean(proposals, TOP_K.min(n))?,
        medium: median_of_top(proposals, m)?,
        diversity: diversity(proposals, m)?,
        emb_similarity: emb_similarity(proposals, m, EMBED_K)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn seq(s: &str) -> Sequence {
        s.parse().unwrap()
    }

    fn numbered(n: usize) -> Vec<Scored> {
        let mut r = rng::stream(1, &[]);
        (1..=n)
            .map(|i| Scored::new(Sequence::random(10, &mut r), i as f64))
            .collect()
    }

    #[test]
    fn top_and_medium_on_ranks() {
        let p = numbered(256);
        assert_eq!(top_k_mean(&p, 16).unwrap(), 248.5);
        assert_eq!(median_of_top(&p, 128).unwrap(), 192.5);
        assert_eq!(median_of_top(&p, 1).unwrap(), 256.0);
        assert_eq!(top_k_mean(&p, 256).unwrap(), 128.5);
        assert!(top_k_mean(&p[..10], 16).is_err());
    }

    #[test]
    fn constant_fitness() {
        let mut r = rng::stream(2, &[]);
        let p: Vec<Scored> = (0..16).map(|_| Scored::new(Sequence::random(5, &mut r), 0.7)).collect();
        assert_eq!(top_k_mean(&p, 16).unwrap(), 0.7);
        assert_eq!(median_of_top(&p, 16).unwrap(), 0.7);
    }

    #[test]
    fn ties_break_lexicographically() {
        let p = vec![
            Scored::new(seq("TTTT"), 1.0),
            Scored::new(seq("AAAA"), 1.0),
            Scored::new(seq("CCCC"), 0.0),
        ];
        let best = select_best(&p, 2).unwrap();
        assert_eq!(best[0].sequence, seq("AAAA"));
        assert_eq!(best[1].sequence, seq("TTTT"));
        // m = 2 keeps AAAA and TTTT
        assert_eq!(diversity(&p, 2).unwrap(), 4.0);
    }

    #[test]
    fn diversity_examples() {
        let same = vec![Scored::new(seq("ACGTACGT"), 1.0); 5];
        assert_eq!(diversity(&same, 5).unwrap(), 0.0);
        let two = vec![Scored::new(seq("ACGTACGT"), 1.0), Scored::new(seq("ACCTAGGA"), 2.0)];
        assert_eq!(diversity(&two, 2).unwrap(), 3.0);
        let bad = vec![Scored::new(seq("ACG"), 1.0), Scored::new(seq("ACGT"), 2.0)];
        assert!(diversity(&bad, 2).is_err());
    }

    #[test]
    fn similarity_examples() {
        let same = vec![Scored::new(seq("ACGTTGCAAC"), 1.0); 3];
        assert!((emb_similarity(&same, 3, 4).unwrap() - 1.0).abs() < 1e-12);
        let ortho = vec![Scored::new(seq("AAAA"), 1.0), Scored::new(seq("CCCC"), 0.5)];
        assert_eq!(emb_similarity(&ortho, 2, 1).unwrap(), 0.0);
        assert_eq!(kmer_counts(&seq("ACGT"), 2), {
            let mut v = vec![0.0; 16];
            v[0b0001] = 1.0;
            v[0b0110] = 1.0;
            v[0b1011] = 1.0;
            v
        });
    }

    #[test]
    fn nan_fitness_is_rejected() {
        let p = vec![Scored::new(seq("A"), f64::NAN), Scored::new(seq("C"), 1.0)];
        assert!(top_k_mean(&p, 1).is_err());
    }

    #[test]
    fn round_metrics_shrinks_to_set_size() {
        let p = numbered(20);
        let m = round_metrics(&p).unwrap();
        assert_eq!(m.top, (5..=20).sum::<usize>() as f64 / 16.0);
        assert_eq!(m.medium, 10.5);
        assert!(m.top >= m.medium);
    }

    proptest! {
        #[test]
        fn invariants(seed in 0u64..200, n in 2usize..300, len in 1usize..12) {
            let mut r = rng::stream(seed, &[]);
            let mut p: Vec<Scored> = (0..n)
                .map(|_| Scored::new(Sequence::random(len, &mut r), r.random_range(0..5) as f64))
                .collect();
            let a = round_metrics(&p).unwrap();
            if n >= 2 * TOP_K {
                prop_assert!(a.top >= a.medium);
            }
            prop_assert!(a.diversity >= 0.0 && a.diversity <= len as f64);
            prop_assert!(a.emb_similarity >= 0.0 && a.emb_similarity <= 1.0 + 1e-12);
            let m = MEDIUM_M.min(n);
            let best = select_best(&p, m).unwrap();
            let all_same = best.iter().all(|b| b.sequence == best[0].sequence);
            prop_assert_eq!(a.diversity == 0.0, all_same);
            p.shuffle(&mut r);
            let b = round_metrics(&p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
