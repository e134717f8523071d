//! Built-in verification suite: gradient checks against central
//! differences, beam search against an exhaustive enumerator written here
//! (independent of the beam implementation), and exact BLEU fixtures.

use anyhow::bail;

use capnet_core::decode::beam_search;
use capnet_core::metrics::{modified_precision, sentence_bleu};
use capnet_core::model::{
    backward, encode_image, forward_caption, step_probabilities, LstmState, ModelParams,
    StepInput,
};
use capnet_core::numeric::{finite_difference_check, ParamBlocks, Vector};
use capnet_core::testkit::{decode_instance, grad_check_instance};
use capnet_core::vocab::{tokenize, START_ID, STOP_ID};

/// Exhaustive search over every decodable sequence: depth-first over all
/// tokens, freezing on STOP, bounded by `max_len` steps. Returns the best
/// (tokens, log_prob) with the same tie-break (lexicographic token order) as
/// the decoder contract.
pub fn exhaustive_best(
    params: &ModelParams,
    feature: &Vector,
    max_len: usize,
) -> (Vec<usize>, f64) {
    let s0 = LstmState::zero(params.dims.h);
    let img = encode_image(params, feature).unwrap();
    let (_, s1) = step_probabilities(params, &s0, StepInput::ImageEmbedding(&img)).unwrap();
    let (p0, s2) = step_probabilities(params, &s1, StepInput::Token(START_ID)).unwrap();

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0f64, s2, p0)];
    while let Some((tokens, lp, state, probs)) = stack.pop() {
        for word in 0..params.dims.v {
            let lp2 = lp + probs[word].max(1e-12).ln();
            let mut seq = tokens.clone();
            seq.push(word);
            let complete = word == STOP_ID || seq.len() == max_len;
            if complete {
                let better = match &best {
                    None => true,
                    Some((bt, bl)) => lp2 > *bl || (lp2 == *bl && seq < *bt),
                };
                if better {
                    best = Some((seq, lp2));
                }
            } else {
                let (probs2, state2) =
                    step_probabilities(params, &state, StepInput::Token(word)).unwrap();
                stack.push((seq, lp2, state2, probs2));
            }
        }
    }
    best.unwrap()
}

struct CheckRow {
    name: &'static str,
    detail: String,
    pass: bool,
}

pub fn run(seed: u64, corrupt_gradients: bool) -> anyhow::Result<()> {
    let mut rows = Vec::new();

    // gradient check on five deterministic instances
    let mut worst = 0.0f64;
    let mut grad_pass = true;
    for k in 0..5 {
        let (params, feature, ids) = grad_check_instance(k);
        let trace = forward_caption(&params, &feature, &ids)?;
        let mut grads = backward(&params, &trace)?;
        if corrupt_gradients {
            for g in grads.block_mut("b_out") {
                *g *= 2.0;
            }
        }
        let report = finite_difference_check(
            |p: &ModelParams| forward_caption(p, &feature, &ids).unwrap().loss,
            &params,
            &grads,
            1e-5,
            1e-4,
        )?;
        worst = worst.max(report.max_relative_error);
        grad_pass &= report.pass;
    }
    rows.push(CheckRow {
        name: "gradient-check",
        detail: format!("5 instances, max rel err {worst:.2e}, tol 1e-4"),
        pass: grad_pass,
    });

    // beam search vs exhaustive enumeration
    let mut beam_pass = true;
    for k in 0..5u64 {
        let v = 3 + (k as usize % 4);
        let max_len = 2 + (k as usize % 3);
        let (params, feature) = decode_instance(seed.wrapping_add(100 + k), v, 3);
        let full_width = v.pow(max_len as u32);
        let beam = beam_search(&params, &feature, full_width, max_len)?;
        let (oracle_seq, oracle_lp) = exhaustive_best(&params, &feature, max_len);
        let (beam_seq, beam_lp) = beam.best();
        if beam_seq != &oracle_seq || (beam_lp - oracle_lp).abs() > 1e-10 {
            beam_pass = false;
        }
    }
    rows.push(CheckRow {
        name: "beam-vs-exhaustive",
        detail: "5 random models, full-width beam equals enumeration".into(),
        pass: beam_pass,
    });

    // beam dominance in K
    let mut dom_pass = true;
    for k in 0..5u64 {
        let (params, feature) = decode_instance(seed.wrapping_add(200 + k), 6, 3);
        let mut prev = f64::NEG_INFINITY;
        for width in [1usize, 2, 4, 8] {
            let top = beam_search(&params, &feature, width, 4)?.best().1;
            if top < prev - 1e-12 {
                dom_pass = false;
            }
            prev = top;
        }
    }
    rows.push(CheckRow {
        name: "beam-dominance",
        detail: "top score non-decreasing over K in {1,2,4,8}".into(),
        pass: dom_pass,
    });

    // BLEU fixtures, exact
    let clip = modified_precision(
        &tokenize("the the the the the the the"),
        &[tokenize("the cat is on the mat")],
        1,
    )?;
    let cand = tokenize("a cat sat on the mat");
    let perfect = sentence_bleu(&cand, &[cand.clone()], 4)?;
    let bleu_pass = clip == (2, 7) && perfect.score == 1.0;
    rows.push(CheckRow {
        name: "bleu-fixtures",
        detail: format!("clipping 2/7 → {:?}; self-match score {}", clip, perfect.score),
        pass: bleu_pass,
    });

    println!("{:-22} {:-6} detail", "check", "result");
    let mut all_pass = true;
    for row in &rows {
        println!(
            "{:-22} {:-6} {}",
            row.name,
            if row.pass { "PASS" } else { "FAIL" },
            row.detail
        );
        all_pass &= row.pass;
    }
    if !all_pass {
        bail!("selfcheck failed");
    }
    Ok(())
}
