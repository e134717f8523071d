//! Test-only oracles, kept independent of the implementation paths they
//! check.

use capnet_core::model::{
    encode_image, step_probabilities, LstmState, ModelParams, StepInput,
};
use capnet_core::numeric::Vector;
use capnet_core::vocab::{START_ID, STOP_ID};

/// Exhaustive decoding oracle: depth-first enumeration of every sequence
/// that either emits STOP or runs to `max_len` tokens, scored by summed log
/// probabilities, ties broken toward the lexicographically smaller token
/// sequence. Independent of the beam-search implementation.
#[allow(dead_code)]
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
            if word == STOP_ID || seq.len() == max_len {
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

/// Naive scalar reimplementation of the teacher-forced caption loss, written
/// with plain loops and no shared numeric helpers. Oracle for
/// `forward_caption`.
#[allow(dead_code)] // not every test target uses both oracles
pub fn naive_caption_loss(p: &ModelParams, feature: &[f64], ids: &[usize]) -> f64 {
    let (d, e, h, v) = (p.dims.d, p.dims.e, p.dims.h, p.dims.v);
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());

    // image embedding
    let mut x: Vec<f64> = (0..e)
        .map(|r| {
            let mut acc = p.b_img[r];
            for c in 0..d {
                acc += p.w_img.get(r, c) * feature[c];
            }
            acc
        })
        .collect();

    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    let mut loss = 0.0;
    let mut step = 0usize;
    loop {
        // one LSTM step on input x
        let gate = |w: &capnet_core::Matrix, u: &capnet_core::Matrix, b: &capnet_core::Vector, r: usize| {
            let mut acc = b[r];
            for c in 0..e {
                acc += w.get(r, c) * x[c];
            }
            for c in 0..h {
                acc += u.get(r, c) * hs[c];
            }
            acc
        };
        let mut new_h = vec![0.0; h];
        let mut new_c = vec![0.0; h];
        for r in 0..h {
            let i = sig(gate(&p.input_gate.w, &p.input_gate.u, &p.input_gate.b, r));
            let f = sig(gate(&p.forget_gate.w, &p.forget_gate.u, &p.forget_gate.b, r));
            let o = sig(gate(&p.output_gate.w, &p.output_gate.u, &p.output_gate.b, r));
            let g = gate(
                &p.candidate_gate.w,
                &p.candidate_gate.u,
                &p.candidate_gate.b,
                r,
            )
            .tanh();
            new_c[r] = f * cs[r] + i * g;
            new_h[r] = o * new_c[r].tanh();
        }
        hs = new_h;
        cs = new_c;

        if step > 0 {
            // word step `step-1` scored target ids[step]
            let logits: Vec<f64> = (0..v)
                .map(|r| {
                    let mut acc = p.b_out[r];
                    for c in 0..h {
                        acc += p.w_out.get(r, c) * hs[c];
                    }
                    acc
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let target = ids[step];
            let p_target = (logits[target] - max).exp() / z;
            loss += -p_target.max(1e-12).ln();
        }
        if step == ids.len() - 1 {
            break;
        }
        // next input: embedding of ids[step]
        x = (0..e).map(|c| p.emb.get(ids[step], c)).collect();
        step += 1;
    }
    loss
}
