//! Beam-search caption inference over joint log-probability, with greedy
//! decoding as the width-1 case.

use thiserror::Error;

use crate::data::FeatureTable;
use crate::model::{
    encode_image, step_probabilities, LstmState, ModelError, ModelParams, StepInput,
};
use crate::numeric::{Vector, PROB_FLOOR};
use crate::vocab::{START_ID, STOP_ID};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam width K must be >= 1")]
    ZeroBeam,
    #[error("max_len must be >= 1")]
    ZeroMaxLen,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A partial caption: generated token ids (START excluded, STOP included
/// once finished), the accumulated joint log-probability, and the LSTM state
/// after consuming the last token.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    state: LstmState,
    /// Distribution over the next token, given everything consumed so far.
    next_probs: Vector,
    pub finished: bool,
}

/// Ranked hypotheses, best first; ties broken by lexicographic token-id
/// order.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub hypotheses: Vec<(Vec<usize>, f64)>,
}

impl DecodeResult {
    pub fn best(&self) -> &(Vec<usize>, f64) {
        &self.hypotheses[0]
    }
}

fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap()
        .then_with(|| a.0.cmp(&b.0))
}

/// Candidate during expansion: score plus the token sequence, with enough
/// provenance to materialize the LSTM state only for survivors.
struct Candidate {
    tokens: Vec<usize>,
    log_prob: f64,
    /// Expansion of live hypothesis `parent` with `word`.
    parent: usize,
    word: usize,
}

/// Beam search per the training objective's factorization: start from the
/// image step followed by START, then repeatedly expand every live
/// hypothesis over the whole vocabulary, keeping the K best unfinished
/// expansions as the next beam. A hypothesis is frozen as soon as it emits
/// STOP and is retained for final ranking no matter how the beam evolves
/// afterwards; this keeps the top score non-decreasing in K, which pruning
/// finished hypotheses out of the beam would not. After `max_len` word
/// steps, unfinished survivors compete as-is. The result is the K best of
/// all frozen hypotheses and survivors by raw joint log-probability; no
/// length normalization.
///
/// Note that freezing makes width 1 slightly stronger than step-wise argmax
/// on an unconfident model: an early STOP expansion stays ranked even when
/// the argmax path continued past it and decayed below its score. On a
/// trained model the two coincide.
pub fn beam_search(
    params: &ModelParams,
    feature: &Vector,
    k: usize,
    max_len: usize,
) -> Result<DecodeResult, DecodeError> {
    if k == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if max_len == 0 {
        return Err(DecodeError::ZeroMaxLen);
    }
    let v = params.dims.v;

    let s0 = LstmState::zero(params.dims.h);
    let img = encode_image(params, feature)?;
    let (_, s1) = step_probabilities(params, &s0, StepInput::ImageEmbedding(&img))?;
    let (p0, s2) = step_probabilities(params, &s1, StepInput::Token(START_ID))?;

    let mut beam = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: s2,
        next_probs: p0,
        finished: false,
    }];

    let mut frozen: Vec<(Vec<usize>, f64)> = Vec::new();

    for _ in 0..max_len {
        if beam.is_empty() {
            break;
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for (idx, hyp) in beam.iter().enumerate() {
            for word in 0..v {
                let lp = hyp.log_prob + hyp.next_probs[word].max(PROB_FLOOR).ln();
                let mut tokens = hyp.tokens.clone();
                tokens.push(word);
                if word == STOP_ID {
                    frozen.push((tokens, lp));
                } else {
                    candidates.push(Candidate {
                        tokens,
                        log_prob: lp,
                        parent: idx,
                        word,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(k);

        let mut next_beam = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let (probs, state) =
                step_probabilities(params, &beam[cand.parent].state, StepInput::Token(cand.word))?;
            next_beam.push(BeamHypothesis {
                tokens: cand.tokens,
                log_prob: cand.log_prob,
                state,
                next_probs: probs,
                finished: false,
            });
        }
        beam = next_beam;
    }

    let mut ranked: Vec<(Vec<usize>, f64)> = frozen;
    ranked.extend(beam.into_iter().map(|h| (h.tokens, h.log_prob)));
    ranked.sort_by(rank);
    ranked.truncate(k);
    Ok(DecodeResult { hypotheses: ranked })
}

/// Convenience alias for width-1 beam search.
pub fn greedy_decode(
    params: &ModelParams,
    feature: &Vector,
    max_len: usize,
) -> Result<DecodeResult, DecodeError> {
    beam_search(params, feature, 1, max_len)
}

/// Independent decoding of every image in the table, in table order.
pub fn caption_batch(
    params: &ModelParams,
    features: &FeatureTable,
    k: usize,
    max_len: usize,
) -> Result<Vec<(i64, DecodeResult)>, DecodeError> {
    let mut out = Vec::with_capacity(features.len());
    for &id in features.ids() {
        let feature = features.get(id).expect("id from table");
        out.push((id, beam_search(params, feature, k, max_len)?));
    }
    Ok(out)
}
