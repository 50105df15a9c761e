//! Motif matrices, binding-site scanning and occurrence features.
//!
//! A window is scored by the log of the product of per-position base
//! probabilities taken from the pseudocounted, row-normalised frequency
//! matrix. Hit calling uses a per-motif cutoff expressed as a fraction of the
//! best achievable score measured against a uniform background:
//!
//! ```text
//! hit  <=>  score - L_t ln(1/4)  >=  f * (max_score - L_t ln(1/4))
//! ```
//!
//! Both strands are scanned; a reverse-strand window is scored as the reverse
//! complement of the forward window.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Nucleotide symbols in column order.
pub const ALPHABET: [u8; 4] = *b"ACGT";

pub const DEFAULT_PSEUDOCOUNT: f64 = 0.1;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.85;

const LN_QUARTER: f64 = -std::f64::consts::LN_2 * 2.0;

#[inline]
pub fn complement(code: u8) -> u8 {
    3 - code
}

pub fn base_code(symbol: u8) -> Option<u8> {
    match symbol {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

/// A DNA sequence stored as base codes `0..4` (A, C, G, T).
///
/// Ordering is lexicographic over the nucleotide string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Sequence(Vec<u8>);

impl Sequence {
    pub fn from_codes(codes: Vec<u8>) -> Result<Self> {
        if let Some(bad) = codes.iter().find(|&&c| c > 3) {
            return Err(Error::InvalidSequence(format!("base code {bad} out of range")));
        }
        Ok(Sequence(codes))
    }

    pub fn codes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, code: u8) {
        debug_assert!(code < 4);
        self.0.push(code);
    }

    pub fn reverse_complement(&self) -> Sequence {
        Sequence(self.0.iter().rev().map(|&c| complement(c)).collect())
    }

    pub fn hamming(&self, other: &Sequence) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Uniformly random sequence of length `len`.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Sequence {
        Sequence((0..len).map(|_| rng.random_range(0..4u8)).collect())
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.bytes()
            .enumerate()
            .map(|(i, b)| {
                base_code(b).ok_or_else(|| {
                    Error::InvalidSequence(format!("invalid nucleotide {:?} at {}", b as char, i))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.0.iter().map(|&c| ALPHABET[c as usize] as char).collect();
        f.write_str(&s)
    }
}

impl Serialize for Sequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Sequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Position frequency matrix of one motif, `L_t x 4` with columns A, C, G, T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pfm {
    pub motif_id: String,
    pub name: String,
    pub counts: Vec<[f64; 4]>,
    pub pseudocount: f64,
}

impl Pfm {
    pub fn new(
        motif_id: impl Into<String>,
        name: impl Into<String>,
        counts: Vec<[f64; 4]>,
        pseudocount: f64,
    ) -> Result<Self> {
        let pfm = Pfm {
            motif_id: motif_id.into(),
            name: name.into(),
            counts,
            pseudocount,
        };
        pfm.validate()?;
        Ok(pfm)
    }

    fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::InvalidInput(format!("motif {} has no positions", self.motif_id)));
        }
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "motif {}: pseudocount must be a non-negative finite number",
                self.motif_id
            )));
        }
        for (k, row) in self.counts.iter().enumerate() {
            if row.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
                return Err(Error::InvalidInput(format!(
                    "motif {} position {}: counts must be non-negative and finite",
                    self.motif_id,
                    k + 1
                )));
            }
            if row.iter().sum::<f64>() + 4.0 * self.pseudocount <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "motif {} position {}: all-zero row",
                    self.motif_id,
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Row-normalised probabilities after adding the pseudocount.
    pub fn probabilities(&self) -> Vec<[f64; 4]> {
        self.counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().map(|c| c + self.pseudocount).sum();
                let mut p = [0.0; 4];
                for (j, c) in row.iter().enumerate() {
                    p[j] = (c + self.pseudocount) / total;
                }
                p
            })
            .collect()
    }

    fn log_probabilities(&self) -> Vec<[f64; 4]> {
        self.probabilities()
            .into_iter()
            .map(|p| [p[0].ln(), p[1].ln(), p[2].ln(), p[3].ln()])
            .collect()
    }

    /// Highest achievable window log score.
    pub fn max_log_score(&self) -> f64 {
        self.log_probabilities()
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }

    /// Most probable base at every position (first column wins ties).
    pub fn consensus(&self) -> Sequence {
        let codes = self
            .counts
            .iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..4 {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best as u8
            })
            .collect();
        Sequence(codes)
    }
}

/// Log of the product of per-position probabilities of `window` under `pfm`.
pub fn window_log_score(window: &[u8], pfm: &Pfm) -> Result<f64> {
    if window.len() != pfm.len() {
        return Err(Error::LengthMismatch {
            expected: pfm.len(),
            actual: window.len(),
        });
    }
    let lp = pfm.log_probabilities();
    Ok(window.iter().zip(&lp).map(|(&b, row)| row[b as usize]).sum())
}

/// Parse JASPAR-format count matrices.
///
/// Each record is a `>ID NAME` header followed by rows labelled A, C, G, T
/// (in that order), each holding one count per motif position. Brackets
/// around the counts are optional.
pub fn parse_jaspar(text: &str) -> Result<Vec<Pfm>> {
    parse_jaspar_with_pseudocount(text, DEFAULT_PSEUDOCOUNT)
}

pub fn parse_jaspar_with_pseudocount(text: &str, pseudocount: f64) -> Result<Vec<Pfm>> {
    let mut out = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    while let Some((line_no, header)) = lines.next() {
        let header = header.strip_prefix('>').ok_or_else(|| Error::MotifParse {
            line: line_no,
            message: "expected header line starting with '>'".into(),
        })?;
        let mut parts = header.split_whitespace();
        let motif_id = parts.next().ok_or_else(|| Error::MotifParse {
            line: line_no,
            message: "malformed header: missing motif id".into(),
        })?;
        let name = parts.collect::<Vec<_>>().join(" ");

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(4);
        for expected in ALPHABET {
            let (row_line, row) = lines.next().ok_or_else(|| Error::MotifParse {
                line: line_no,
                message: format!("record {motif_id} is missing the {} row", expected as char),
            })?;
            rows.push(parse_count_row(row_line, row, expected)?);
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::MotifParse {
                line: line_no,
                message: format!("record {motif_id} has no positions"),
            });
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::MotifParse {
                line: line_no,
                message: format!(
                    "row-length mismatch in record {motif_id}: {:?}",
                    rows.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            });
        }
        let counts = (0..width)
            .map(|k| [rows[0][k], rows[1][k], rows[2][k], rows[3][k]])
            .collect();
        let pfm = Pfm::new(motif_id, name, counts, pseudocount).map_err(|e| Error::MotifParse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(pfm);
    }
    Ok(out)
}

fn parse_count_row(line_no: usize, row: &str, expected: u8) -> Result<Vec<f64>> {
    let mut chars = row.chars();
    let label = chars.next().unwrap_or(' ');
    if !label.eq_ignore_ascii_case(&(expected as char)) {
        return Err(Error::MotifParse {
            line: line_no,
            message: format!(
                "unknown nucleotide row label {label:?}, expected {}",
                expected as char
            ),
        });
    }
    let body = chars.as_str().replace(['[', ']'], " ");
    body.split_whitespace()
        .map(|tok| {
            let v: f64 = tok.parse().map_err(|_| Error::MotifParse {
                line: line_no,
                message: format!("invalid count {tok:?}"),
            })?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::MotifParse {
                    line: line_no,
                    message: format!("negative count {tok}"),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Render matrices in JASPAR format; `parse_jaspar` reads this back exactly.
pub fn to_jaspar(vocab: &[Pfm]) -> String {
    let mut out = String::new();
    for pfm in vocab {
        if pfm.name.is_empty() {
            out.push_str(&format!(">{}\n", pfm.motif_id));
        } else {
            out.push_str(&format!(">{} {}\n", pfm.motif_id, pfm.name));
        }
        for (j, &sym) in ALPHABET.iter().enumerate() {
            let row: Vec<String> = pfm.counts.iter().map(|r| format!("{}", r[j])).collect();
            out.push_str(&format!("{}  [ {} ]\n", sym as char, row.join(" ")));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strand {
    Forward,
    Reverse,
}

impl Strand {
    pub fn symbol(self) -> char {
        match self {
            Strand::Forward => '+',
            Strand::Reverse => '-',
        }
    }
}

/// Which quantity is reported as a hit's score. The set of hits is the same
/// in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Log of the probability product.
    #[default]
    LogProb,
    /// Log-odds against a uniform background.
    LogOdds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifHit {
    /// Index of the motif in the scanner vocabulary.
    pub motif: usize,
    pub motif_id: String,
    /// 1-based position of the last covered base.
    pub end: usize,
    pub strand: Strand,
    pub log_score: f64,
}

#[derive(Debug, Clone)]
struct CompiledMotif {
    id: String,
    forward: Vec<[f64; 4]>,
    reverse: Vec<[f64; 4]>,
    cutoff: f64,
}

impl CompiledMotif {
    fn len(&self) -> usize {
        self.forward.len()
    }
}

/// Vocabulary compiled for scanning at a fixed threshold.
#[derive(Debug, Clone)]
pub struct Scanner {
    motifs: Vec<CompiledMotif>,
    threshold_fraction: f64,
    score_mode: ScoreMode,
    min_len: usize,
    max_len: usize,
}

impl Scanner {
    pub fn new(vocab: &[Pfm], threshold_fraction: f64) -> Result<Self> {
        Self::with_mode(vocab, threshold_fraction, ScoreMode::LogProb)
    }

    pub fn with_mode(vocab: &[Pfm], threshold_fraction: f64, score_mode: ScoreMode) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidInput("motif vocabulary is empty".into()));
        }
        if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "threshold fraction {threshold_fraction} outside (0, 1]"
            )));
        }
        let mut motifs = Vec::with_capacity(vocab.len());
        for pfm in vocab {
            pfm.validate()?;
            let forward = pfm.log_probabilities();
            let n = forward.len();
            let reverse = (0..n)
                .map(|k| {
                    let row = &forward[n - 1 - k];
                    [row[3], row[2], row[1], row[0]]
                })
                .collect();
            let background = n as f64 * LN_QUARTER;
            let cutoff = threshold_fraction * (pfm.max_log_score() - background) + background;
            motifs.push(CompiledMotif {
                id: pfm.motif_id.clone(),
                forward,
                reverse,
                cutoff,
            });
        }
        let min_len = motifs.iter().map(CompiledMotif::len).min().unwrap_or(0);
        let max_len = motifs.iter().map(CompiledMotif::len).max().unwrap_or(0);
        Ok(Scanner {
            motifs,
            threshold_fraction,
            score_mode,
            min_len,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    pub fn threshold_fraction(&self) -> f64 {
        self.threshold_fraction
    }

    pub fn motif_ids(&self) -> impl Iterator<Item = &str> {
        self.motifs.iter().map(|m| m.id.as_str())
    }

    pub fn max_motif_len(&self) -> usize {
        self.max_len
    }

    /// Raw log-score cutoff for motif `index`.
    pub fn cutoff(&self, index: usize) -> f64 {
        self.motifs[index].cutoff
    }

    fn reported(&self, motif: &CompiledMotif, raw: f64) -> f64 {
        match self.score_mode {
            ScoreMode::LogProb => raw,
            ScoreMode::LogOdds => raw - motif.len() as f64 * LN_QUARTER,
        }
    }

    /// Hits whose window ends at `end` (1-based), in (motif_id, strand) order.
    fn hits_ending_at(&self, codes: &[u8], end: usize, out: &mut Vec<MotifHit>) {
        let start_len = out.len();
        for (index, motif) in self.motifs.iter().enumerate() {
            let n = motif.len();
            if n > end {
                continue;
            }
            let window = &codes[end - n..end];
            for (strand, table) in [(Strand::Forward, &motif.forward), (Strand::Reverse, &motif.reverse)] {
                let score: f64 = window.iter().zip(table).map(|(&b, row)| row[b as usize]).sum();
                if score >= motif.cutoff {
                    out.push(MotifHit {
                        motif: index,
                        motif_id: motif.id.clone(),
                        end,
                        strand,
                        log_score: self.reported(motif, score),
                    });
                }
            }
        }
        out[start_len..].sort_by(|a, b| a.motif_id.cmp(&b.motif_id).then(a.strand.cmp(&b.strand)));
    }

    /// All hits in `seq`, sorted by (end, motif_id, strand).
    pub fn scan(&self, seq: &Sequence) -> Vec<MotifHit> {
        let mut hits = Vec::new();
        for end in self.min_len.max(1)..=seq.len() {
            self.hits_ending_at(seq.codes(), end, &mut hits);
        }
        hits
    }

    /// Hits completed by the last base of `prefix`.
    pub fn incremental_hits(&self, prefix: &[u8]) -> Vec<MotifHit> {
        let mut hits = Vec::new();
        if prefix.len() >= self.min_len && !prefix.is_empty() {
            self.hits_ending_at(prefix, prefix.len(), &mut hits);
        }
        hits
    }

    /// Per-motif hit counts over both strands.
    pub fn extract_features(&self, seq: &Sequence) -> FeatureVector {
        let mut counts = vec![0u32; self.motifs.len()];
        for hit in self.scan(seq) {
            counts[hit.motif] += 1;
        }
        FeatureVector(counts)
    }
}

pub fn scan(seq: &Sequence, vocab: &[Pfm], threshold_fraction: f64) -> Result<Vec<MotifHit>> {
    Ok(Scanner::new(vocab, threshold_fraction)?.scan(seq))
}

pub fn incremental_hits(prefix: &Sequence, vocab: &[Pfm], threshold_fraction: f64) -> Result<Vec<MotifHit>> {
    Ok(Scanner::new(vocab, threshold_fraction)?.incremental_hits(prefix.codes()))
}

pub fn extract_features(seq: &Sequence, vocab: &[Pfm], threshold_fraction: f64) -> Result<FeatureVector> {
    Ok(Scanner::new(vocab, threshold_fraction)?.extract_features(seq))
}

/// Occurrence counts `h(X)`, one entry per vocabulary motif.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<u32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

/// Synthetic vocabulary of `n` high-information motifs with lengths cycling
/// through 6, 7 and 8. Identical for identical `(n, seed)`.
pub fn synthetic_vocabulary(n: usize, seed: u64) -> Vec<Pfm> {
    let mut rng = crate::rng::stream(seed, &[0x6d6f_7469_66]);
    (0..n)
        .map(|i| {
            let len = 6 + i % 3;
            let counts = (0..len)
                .map(|_| {
                    let consensus = rng.random_range(0..4usize);
                    let top = rng.random_range(80..=97) as f64;
                    let mut rest = 100.0 - top;
                    let mut row = [0.0; 4];
                    row[consensus] = top;
                    let others: Vec<usize> = (0..4).filter(|&j| j != consensus).collect();
                    for (k, &j) in others.iter().enumerate() {
                        let share = if k + 1 == others.len() {
                            rest
                        } else {
                            rng.random_range(0..=rest as u32) as f64
                        };
                        row[j] = share;
                        rest -= share;
                    }
                    row
                })
                .collect();
            Pfm::new(format!("M{:04}", i + 1), format!("SYN{}", i + 1), counts, DEFAULT_PSEUDOCOUNT)
                .expect("synthetic counts are valid")
        })
        .collect()
}

/// Write sequences as FASTA with `>seq_<index>` headers and 60-column lines.
pub fn write_fasta<W: Write>(mut w: W, seqs: &[Sequence]) -> std::io::Result<()> {
    for (i, seq) in seqs.iter().enumerate() {
        writeln!(w, ">seq_{i}")?;
        let text = seq.to_string();
        for chunk in text.as_bytes().chunks(60) {
            w.write_all(chunk)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_fasta<R: BufRead>(r: R) -> Result<Vec<(String, Sequence)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('>') {
            out.push((h.trim().to_string(), String::new()));
        } else {
            match out.last_mut() {
                Some((_, body)) => body.push_str(line),
                None => return Err(Error::InvalidSequence("FASTA body before first header".into())),
            }
        }
    }
    out.into_iter()
        .map(|(h, s)| Ok((h, s.parse()?)))
        .collect()
}

/// Hits as CSV with columns `motif_id,end,strand,log_score`.
pub fn write_hits_csv<W: Write>(w: W, hits: &[MotifHit]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["motif_id", "end", "strand", "log_score"])?;
    for h in hits {
        wtr.write_record([
            h.motif_id.clone(),
            h.end.to_string(),
            h.strand.symbol().to_string(),
            h.log_score.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn seq(s: &str) -> Sequence {
        s.parse().unwrap()
    }

    fn deterministic(consensus: &str, pseudocount: f64) -> Pfm {
        let counts = seq(consensus)
            .codes()
            .iter()
            .map(|&c| {
                let mut row = [0.0; 4];
                row[c as usize] = 10.0;
                row
            })
            .collect();
        Pfm::new("D", "det", counts, pseudocount).unwrap()
    }

    const SAMPLE: &str = "\
>MA0004.1 Arnt
A  [ 4 19  0  0  0  0 ]
C  [16  0 20  0  0  0 ]
G  [ 0  1  0 20  0 20 ]
T  [ 0  0  0  0 20  0 ]
>MA0006.1 Ahr::Arnt
A  [ 3  0  0  0  0  0 ]
C  [ 8  0 23  0  0  0 ]
G  [ 2 23  0 23  0 24 ]
T  [11  1  1  1 24  0 ]
";

    #[test]
    fn parses_jaspar_records() {
        let v = parse_jaspar(SAMPLE).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].motif_id, "MA0004.1");
        assert_eq!(v[0].name, "Arnt");
        assert_eq!(v[1].name, "Ahr::Arnt");
        assert_eq!(v[0].len(), 6);
        assert_eq!(v[0].counts[0], [4.0, 16.0, 0.0, 0.0]);
        assert_eq!(v[0].counts[1], [19.0, 0.0, 1.0, 0.0]);
        assert_eq!(v[0].consensus().to_string(), "CACGTG");
    }

    #[test]
    fn five_column_record_transposes() {
        let text = ">X1 five\nA [1 2 3 4 5]\nC [0 0 0 0 0]\nG [6 7 8 9 10]\nT [0 1 0 1 0]\n";
        let v = parse_jaspar(text).unwrap();
        assert_eq!(v[0].len(), 5);
        for k in 0..5 {
            assert_eq!(v[0].counts[k][0], (k + 1) as f64);
            assert_eq!(v[0].counts[k][2], (k + 6) as f64);
        }
    }

    #[test]
    fn empty_input_parses_to_nothing() {
        assert!(parse_jaspar("").unwrap().is_empty());
        assert!(parse_jaspar("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn jaspar_errors() {
        let mismatch = ">X\nA [1 2 3 4]\nC [1 2 3 4]\nG [1 2 3 4]\nT [1 2 3]\n";
        let err = parse_jaspar(mismatch).unwrap_err().to_string();
        assert!(err.contains("row-length mismatch"), "{err}");

        let negative = ">X\nA [1 -2]\nC [1 2]\nG [1 2]\nT [1 2]\n";
        assert!(parse_jaspar(negative).unwrap_err().to_string().contains("negative"));

        let label = ">X\nA [1 2]\nC [1 2]\nU [1 2]\nT [1 2]\n";
        assert!(parse_jaspar(label).unwrap_err().to_string().contains("unknown nucleotide row label"));

        let header = "MA0001 foo\nA [1]\nC [1]\nG [1]\nT [1]\n";
        assert!(parse_jaspar(header).unwrap_err().to_string().contains("header"));

        let truncated = ">X\nA [1]\nC [1]\n";
        assert!(parse_jaspar(truncated).is_err());
    }

    #[test]
    fn jaspar_round_trip() {
        let v = synthetic_vocabulary(16, 3);
        let back = parse_jaspar(&to_jaspar(&v)).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn consensus_of_deterministic_matrix_scores_zero() {
        let pfm = deterministic("ACGTTGCA", 0.0);
        assert_eq!(window_log_score(seq("ACGTTGCA").codes(), &pfm).unwrap(), 0.0);
        assert_eq!(window_log_score(seq("ACGTTGCC").codes(), &pfm).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_matrix_scores_length_times_ln_quarter() {
        let pfm = Pfm::new("U", "", vec![[1.0; 4]; 7], 0.1).unwrap();
        let s = window_log_score(seq("GATTACA").codes(), &pfm).unwrap();
        assert!((s - 7.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn window_score_matches_per_position_product() {
        let v = parse_jaspar(SAMPLE).unwrap();
        let pfm = &v[1];
        let window = seq("TGCGTG");
        let mut product = 1.0;
        for (k, &b) in window.codes().iter().enumerate() {
            let row = pfm.counts[k];
            let total: f64 = row.iter().map(|c| c + 0.1).sum();
            product *= (row[b as usize] + 0.1) / total;
        }
        let s = window_log_score(window.codes(), pfm).unwrap();
        assert!((s - product.ln()).abs() < 1e-12);
    }

    #[test]
    fn window_score_length_mismatch() {
        let pfm = deterministic("ACGT", 0.1);
        assert!(matches!(
            window_log_score(seq("ACG").codes(), &pfm),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn score_is_additive_over_concatenated_parts() {
        let a = deterministic("ACGT", 0.3);
        let b = deterministic("GGCA", 0.3);
        let mut counts = a.counts.clone();
        counts.extend(b.counts.iter().copied());
        let joined = Pfm::new("AB", "", counts, 0.3).unwrap();
        let w = seq("ACTTGCCA");
        let whole = window_log_score(w.codes(), &joined).unwrap();
        let parts = window_log_score(&w.codes()[..4], &a).unwrap()
            + window_log_score(&w.codes()[4..], &b).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn embedded_consensus_gives_single_forward_hit() {
        let pfm = deterministic("GATTACAG", 0.1);
        let scanner = Scanner::new(std::slice::from_ref(&pfm), 0.85).unwrap();
        let s = seq("CCCCCCCCCCGATTACAGCCCCCCCC");
        let hits = scanner.scan(&s);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].end, 18);
        assert_eq!(hits[0].strand, Strand::Forward);

        // exhaustive oracle over every window and strand
        let mut expected = Vec::new();
        for end in pfm.len()..=s.len() {
            let w = &s.codes()[end - pfm.len()..end];
            let rc = Sequence(w.to_vec()).reverse_complement();
            for (strand, win) in [(Strand::Forward, w.to_vec()), (Strand::Reverse, rc.0)] {
                if window_log_score(&win, &pfm).unwrap() >= scanner.cutoff(0) {
                    expected.push((end, strand));
                }
            }
        }
        assert_eq!(expected, vec![(18, Strand::Forward)]);
    }

    #[test]
    fn motif_longer_than_sequence_has_no_hits() {
        let pfm = deterministic("ACGTACGTAC", 0.1);
        let scanner = Scanner::new(&[pfm], 0.5).unwrap();
        assert!(scanner.scan(&seq("ACGTACG")).is_empty());
    }

    #[test]
    fn palindrome_hits_both_strands() {
        let pfm = deterministic("GAATTC", 0.1);
        let scanner = Scanner::new(&[pfm], 0.85).unwrap();
        let hits = scanner.scan(&seq("TTTTGAATTCTTTT"));
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].end, 10);
        assert_eq!(hits[1].end, 10);
        assert_eq!(hits[0].strand, Strand::Forward);
        assert_eq!(hits[1].strand, Strand::Reverse);
        assert_eq!(hits[0].log_score, hits[1].log_score);
    }

    #[test]
    fn incremental_hits_short_prefix_and_completion() {
        let pfm = deterministic("GATTACA", 0.1);
        let scanner = Scanner::new(&[pfm], 0.85).unwrap();
        assert!(scanner.incremental_hits(seq("GATTAC").codes()).is_empty());
        assert!(scanner.incremental_hits(&[]).is_empty());
        let s = seq("CCGATTACA");
        let hits = scanner.incremental_hits(s.codes());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].end, 9);
    }

    #[test]
    fn features_count_embedded_copies() {
        let vocab = synthetic_vocabulary(6, 11);
        let scanner = Scanner::new(&vocab, 0.85).unwrap();
        let filler = "A".repeat(10);
        assert!(scanner.scan(&seq(&filler.repeat(6))).is_empty());
        let c3 = vocab[3].consensus().to_string();
        let s = seq(&format!("{filler}{c3}{filler}{filler}{c3}{filler}"));
        let direct = scanner.extract_features(&s);
        let mut oracle = vec![0u32; vocab.len()];
        for h in scanner.scan(&s) {
            oracle[h.motif] += 1;
        }
        assert_eq!(direct.0, oracle);
        let mut expected = vec![0u32; vocab.len()];
        expected[3] = 2;
        assert_eq!(direct.0, expected);
    }

    #[test]
    fn all_a_sequence_against_no_a_affinity_motifs() {
        let counts = vec![[0.0, 5.0, 5.0, 0.0]; 6];
        let pfm = Pfm::new("CG", "", counts, 0.0).unwrap();
        let scanner = Scanner::new(&[pfm], 0.85).unwrap();
        assert_eq!(scanner.extract_features(&seq(&"A".repeat(40))).0, vec![0]);
    }

    #[test]
    fn scanner_rejects_bad_configuration() {
        assert!(Scanner::new(&[], 0.85).is_err());
        let v = synthetic_vocabulary(2, 0);
        assert!(Scanner::new(&v, 0.0).is_err());
        assert!(Scanner::new(&v, 1.5).is_err());
    }

    #[test]
    fn log_odds_mode_reports_shifted_scores_on_the_same_hits() {
        let v = synthetic_vocabulary(8, 5);
        let a = Scanner::new(&v, 0.7).unwrap();
        let b = Scanner::with_mode(&v, 0.7, ScoreMode::LogOdds).unwrap();
        let mut rng = crate::rng::stream(1, &[]);
        for _ in 0..20 {
            let s = Sequence::random(80, &mut rng);
            let ha = a.scan(&s);
            let hb = b.scan(&s);
            assert_eq!(ha.len(), hb.len());
            for (x, y) in ha.iter().zip(&hb) {
                let shift = v[x.motif].len() as f64 * LN_QUARTER;
                assert!((y.log_score - (x.log_score - shift)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fasta_round_trip_wraps_at_sixty() {
        let mut rng = crate::rng::stream(2, &[]);
        let seqs: Vec<Sequence> = (0..3).map(|_| Sequence::random(130, &mut rng)).collect();
        let mut buf = Vec::new();
        write_fasta(&mut buf, &seqs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(">seq_0\n"));
        assert!(text.lines().all(|l| l.len() <= 60));
        let back = read_fasta(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].0, "seq_2");
        assert_eq!(back.into_iter().map(|(_, s)| s).collect::<Vec<_>>(), seqs);
    }

    #[test]
    fn hits_csv_has_expected_header() {
        let pfm = deterministic("GAATTC", 0.1);
        let scanner = Scanner::new(&[pfm], 0.85).unwrap();
        let hits = scanner.scan(&seq("TTGAATTCTT"));
        let mut buf = Vec::new();
        write_hits_csv(&mut buf, &hits).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("motif_id,end,strand,log_score"));
        assert!(lines.next().unwrap().starts_with("D,8,+,"));
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = Sequence> {
        prop::collection::vec(0u8..4, 1..max_len).prop_map(Sequence)
    }

    fn key(h: &MotifHit) -> (usize, String, Strand) {
        (h.end, h.motif_id.clone(), h.strand)
    }

    proptest! {
        #[test]
        fn incremental_union_equals_full_scan(s in arb_seq(60), f in 0.4f64..0.9) {
            let vocab = synthetic_vocabulary(9, 4);
            let scanner = Scanner::new(&vocab, f).unwrap();
            let mut inc = Vec::new();
            for i in 1..=s.len() {
                inc.extend(scanner.incremental_hits(&s.codes()[..i]));
            }
            prop_assert_eq!(inc, scanner.scan(&s));
        }

        #[test]
        fn reverse_complement_duality(s in arb_seq(50), f in 0.4f64..0.9) {
            let vocab = synthetic_vocabulary(9, 8);
            let scanner = Scanner::new(&vocab, f).unwrap();
            let l = s.len();
            let mirrored: BTreeSet<_> = scanner
                .scan(&s)
                .iter()
                .map(|h| {
                    let lt = vocab[h.motif].len();
                    let strand = match h.strand { Strand::Forward => Strand::Reverse, Strand::Reverse => Strand::Forward };
                    (l - h.end + lt, h.motif_id.clone(), strand)
                })
                .collect();
            let rc: BTreeSet<_> = scanner.scan(&s.reverse_complement()).iter().map(key).collect();
            prop_assert_eq!(mirrored, rc);
        }

        #[test]
        fn raising_threshold_never_adds_hits(s in arb_seq(60), lo in 0.3f64..0.7, delta in 0.0f64..0.3) {
            let vocab = synthetic_vocabulary(9, 12);
            let low: BTreeSet<_> = Scanner::new(&vocab, lo).unwrap().scan(&s).iter().map(key).collect();
            let high: BTreeSet<_> = Scanner::new(&vocab, lo + delta).unwrap().scan(&s).iter().map(key).collect();
            prop_assert!(high.is_subset(&low));
        }

        #[test]
        fn hits_respect_bounds_and_cutoff(s in arb_seq(60)) {
            let vocab = synthetic_vocabulary(9, 1);
            let scanner = Scanner::new(&vocab, 0.6).unwrap();
            let hits = scanner.scan(&s);
            for h in &hits {
                prop_assert!(h.end >= vocab[h.motif].len() && h.end <= s.len());
                prop_assert!(h.log_score >= scanner.cutoff(h.motif));
            }
            prop_assert_eq!(hits.clone(), scanner.scan(&s));
        }
    }
}
