//! BLEU scoring: modified n-gram precision with clipping, geometric mean
//! over n = 1..4, and the brevity penalty. Precisions are kept as exact
//! integer ratios; floating point enters only at the geometric-mean stage.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("n-gram order must be >= 1")]
    ZeroOrder,
    #[error("at least one reference is required")]
    NoReferences,
}

/// Multiset of n-grams with counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    pub n: usize,
    pub counts: HashMap<Vec<String>, u64>,
}

impl NGramProfile {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Sliding-window n-gram counts. Token lists shorter than n give an empty
/// profile.
pub fn ngram_profile(tokens: &[String], n: usize) -> Result<NGramProfile, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NGramProfile { n, counts })
}

/// Clipped modified precision as an exact integer ratio: Σ over candidate
/// n-gram types of min(candidate count, max count in any single reference),
/// over the candidate's total n-gram count.
pub fn modified_precision(
    candidate: &[String],
    references: &[Vec<String>],
    n: usize,
) -> Result<(u64, u64), MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    let cand = ngram_profile(candidate, n)?;
    let refs: Vec<NGramProfile> = references
        .iter()
        .map(|r| ngram_profile(r, n))
        .collect::<Result<_, _>>()?;
    let mut clipped = 0u64;
    for (gram, &count) in &cand.counts {
        let max_ref = refs
            .iter()
            .map(|r| r.counts.get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        clipped += count.min(max_ref);
    }
    Ok((clipped, cand.total()))
}

/// Full sentence-level BLEU breakdown.
#[derive(Debug, Clone)]
pub struct BleuReport {
    /// (clipped, total) per n-gram order 1..=max_n.
    pub precisions: Vec<(u64, u64)>,
    pub brevity_penalty: f64,
    pub score: f64,
    pub candidate_len: usize,
    pub effective_ref_len: usize,
    /// Set when the candidate was empty and the score is 0 by fiat.
    pub degenerate: bool,
}

/// Reference length closest to the candidate length; ties go to the shorter
/// reference.
fn effective_reference_length(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| {
            (
                (len as i64 - candidate_len as i64).abs(),
                len,
            )
        })
        .unwrap_or(0)
}

/// score = BP · exp(Σ (1/W)·ln p_n) over the orders n with a nonzero
/// denominator (so a single-word candidate is scored on unigrams alone). Any
/// used p_n = 0 zeroes the score; there is no smoothing.
pub fn sentence_bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
) -> Result<BleuReport, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    if max_n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let c = candidate.len();
    let r = effective_reference_length(c, references);
    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        precisions.push(modified_precision(candidate, references, n)?);
    }
    if c == 0 {
        return Ok(BleuReport {
            precisions,
            brevity_penalty: 0.0,
            score: 0.0,
            candidate_len: 0,
            effective_ref_len: r,
            degenerate: true,
        });
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let used: Vec<&(u64, u64)> = precisions.iter().filter(|(_, total)| *total > 0).collect();
    let score = if used.iter().any(|(clipped, _)| *clipped == 0) {
        0.0
    } else {
        let w = 1.0 / used.len() as f64;
        let log_sum: f64 = used
            .iter()
            .map(|(clipped, total)| w * (*clipped as f64 / *total as f64).ln())
            .sum();
        bp * log_sum.exp()
    };
    Ok(BleuReport {
        precisions,
        brevity_penalty: bp,
        score,
        candidate_len: c,
        effective_ref_len: r,
        degenerate: false,
    })
}

/// Arithmetic mean of per-sentence BLEU on a 0–100 scale.
pub fn corpus_average_bleu(
    pairs: &[(Vec<String>, Vec<Vec<String>>)],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    let mut sum = 0.0;
    for (cand, refs) in pairs {
        sum += sentence_bleu(cand, refs, max_n)?.score;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

/// Canonical corpus BLEU with pooled counts: numerators/denominators and
/// lengths are summed over the corpus before the geometric mean.
pub fn corpus_pooled_bleu(
    pairs: &[(Vec<String>, Vec<Vec<String>>)],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    let mut clipped = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let mut c_len = 0usize;
    let mut r_len = 0usize;
    for (cand, refs) in pairs {
        for n in 1..=max_n {
            let (cl, tot) = modified_precision(cand, refs, n)?;
            clipped[n - 1] += cl;
            totals[n - 1] += tot;
        }
        c_len += cand.len();
        r_len += effective_reference_length(cand.len(), refs);
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let used: Vec<(u64, u64)> = clipped
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&c, &t)| (c, t))
        .collect();
    if used.is_empty() || used.iter().any(|(c, _)| *c == 0) {
        return Ok(0.0);
    }
    let w = 1.0 / used.len() as f64;
    let log_sum: f64 = used
        .iter()
        .map(|(c, t)| w * (*c as f64 / *t as f64).ln())
        .sum();
    Ok(100.0 * bp * log_sum.exp())
}
