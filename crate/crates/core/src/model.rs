//! The captioning model: a fully connected image encoder into word-embedding
//! space, a single-layer LSTM over the embedded sequence, and a softmax
//! projection to vocabulary logits. Loss is the summed per-word negative
//! log-likelihood; gradients are hand-derived backpropagation through time.
//!
//! The image is consumed exactly once, as the input to the step before
//! START. Word steps then feed the embedding of each caption token and score
//! the following token. The image step carries no loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numeric::{
    add, hadamard, matmul, matmul_transpose, neg_log_likelihood, outer_add, sigmoid_vec, softmax,
    tanh_vec, Matrix, NumericError, ParamBlocks, Vector,
};
use crate::vocab::{START_ID, STOP_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("caption ids must be framed by START and STOP (length >= 2), got {0:?}")]
    Unframed(Vec<usize>),
    #[error("token id {id} out of range for vocabulary size {v}")]
    TokenOutOfRange { id: usize, v: usize },
}

/// Model dimensions: feature D, embedding E, hidden H, vocabulary V.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub e: usize,
    pub h: usize,
    pub v: usize,
}

/// Weights for one LSTM gate: input weight, recurrent weight, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix, // H x E
    pub u: Matrix, // H x H
    pub b: Vector, // H
}

impl Gate {
    fn zeros(h: usize, e: usize) -> Self {
        Gate {
            w: Matrix::zeros(h, e),
            u: Matrix::zeros(h, h),
            b: Vector::zeros(h),
        }
    }

    /// Pre-activation W·x + U·h + b.
    fn preact(&self, x: &Vector, h: &Vector) -> Result<Vector, NumericError> {
        let wx = matmul(&self.w, x)?;
        let uh = matmul(&self.u, h)?;
        add(&add(&wx, &uh)?, &self.b)
    }
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub w_img: Matrix, // E x D
    pub b_img: Vector, // E
    pub emb: Matrix,   // V x E, row per token
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    pub candidate_gate: Gate,
    pub w_out: Matrix, // V x H
    pub b_out: Vector, // V
}

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { d, e, h, v } = dims;
        ModelParams {
            dims,
            w_img: Matrix::zeros(e, d),
            b_img: Vector::zeros(e),
            emb: Matrix::zeros(v, e),
            input_gate: Gate::zeros(h, e),
            forget_gate: Gate::zeros(h, e),
            output_gate: Gate::zeros(h, e),
            candidate_gate: Gate::zeros(h, e),
            w_out: Matrix::zeros(v, h),
            b_out: Vector::zeros(v),
        }
    }

    /// Uniform [−r, r] with r = 1/sqrt(fan-in) per matrix; biases zero except
    /// the forget-gate bias, initialized to 1.0. Deterministic from seed.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        fill_uniform(&mut p.w_img, dims.d, &mut rng);
        fill_uniform(&mut p.emb, dims.e, &mut rng);
        for gate in [
            &mut p.input_gate,
            &mut p.forget_gate,
            &mut p.output_gate,
            &mut p.candidate_gate,
        ] {
            fill_uniform(&mut gate.w, dims.e, &mut rng);
            fill_uniform(&mut gate.u, dims.h, &mut rng);
        }
        fill_uniform(&mut p.w_out, dims.h, &mut rng);
        for i in 0..dims.h {
            p.forget_gate.b[i] = 1.0;
        }
        p
    }

    fn gate(&self, name: &str) -> &Gate {
        match name {
            "input" => &self.input_gate,
            "forget" => &self.forget_gate,
            "output" => &self.output_gate,
            "candidate" => &self.candidate_gate,
            _ => panic!("unknown gate {name}"),
        }
    }

    fn gate_mut(&mut self, name: &str) -> &mut Gate {
        match name {
            "input" => &mut self.input_gate,
            "forget" => &mut self.forget_gate,
            "output" => &mut self.output_gate,
            "candidate" => &mut self.candidate_gate,
            _ => panic!("unknown gate {name}"),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.block_names()
            .iter()
            .all(|n| self.block(n).iter().all(|v| v.is_finite()))
    }
}

fn fill_uniform(m: &mut Matrix, fan_in: usize, rng: &mut ChaCha8Rng) {
    let r = 1.0 / (fan_in as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-r..=r);
    }
}

impl ParamBlocks for ModelParams {
    fn block_names(&self) -> Vec<String> {
        let mut names = vec!["w_img".to_string(), "b_img".to_string(), "emb".to_string()];
        for g in GATE_NAMES {
            names.push(format!("w_{g}"));
            names.push(format!("u_{g}"));
            names.push(format!("b_{g}"));
        }
        names.push("w_out".to_string());
        names.push("b_out".to_string());
        names
    }

    fn block(&self, name: &str) -> &[f64] {
        match name {
            "w_img" => self.w_img.as_slice(),
            "b_img" => self.b_img.as_slice(),
            "emb" => self.emb.as_slice(),
            "w_out" => self.w_out.as_slice(),
            "b_out" => self.b_out.as_slice(),
            _ => {
                let (kind, g) = name.split_once('_').expect("block name");
                let gate = self.gate(g);
                match kind {
                    "w" => gate.w.as_slice(),
                    "u" => gate.u.as_slice(),
                    "b" => gate.b.as_slice(),
                    _ => panic!("unknown block {name}"),
                }
            }
        }
    }

    fn block_mut(&mut self, name: &str) -> &mut [f64] {
        match name {
            "w_img" => self.w_img.as_mut_slice(),
            "b_img" => self.b_img.as_mut_slice(),
            "emb" => self.emb.as_mut_slice(),
            "w_out" => self.w_out.as_mut_slice(),
            "b_out" => self.b_out.as_mut_slice(),
            _ => {
                let (kind, g) = name.split_once('_').expect("block name");
                let gate = self.gate_mut(g);
                match kind {
                    "w" => gate.w.as_mut_slice(),
                    "u" => gate.u.as_mut_slice(),
                    "b" => gate.b.as_mut_slice(),
                    _ => panic!("unknown block {name}"),
                }
            }
        }
    }
}

/// LSTM hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zero(h: usize) -> Self {
        LstmState {
            h: Vector::zeros(h),
            c: Vector::zeros(h),
        }
    }
}

/// W_img·f + b_img — linear projection of the feature vector into the
/// word-embedding space.
pub fn encode_image(p: &ModelParams, f: &Vector) -> Result<Vector, ModelError> {
    Ok(add(&matmul(&p.w_img, f)?, &p.b_img)?)
}

struct GateActivations {
    i: Vector,
    f: Vector,
    o: Vector,
    g: Vector,
}

fn lstm_gates(p: &ModelParams, s: &LstmState, x: &Vector) -> Result<GateActivations, ModelError> {
    Ok(GateActivations {
        i: sigmoid_vec(&p.input_gate.preact(x, &s.h)?),
        f: sigmoid_vec(&p.forget_gate.preact(x, &s.h)?),
        o: sigmoid_vec(&p.output_gate.preact(x, &s.h)?),
        g: tanh_vec(&p.candidate_gate.preact(x, &s.h)?),
    })
}

/// One LSTM step: i=σ(·), f=σ(·), o=σ(·), g=tanh(·), c'=f⊙c+i⊙g,
/// h'=o⊙tanh(c').
pub fn lstm_step(p: &ModelParams, s: &LstmState, x: &Vector) -> Result<LstmState, ModelError> {
    let act = lstm_gates(p, s, x)?;
    let c = add(&hadamard(&act.f, &s.c)?, &hadamard(&act.i, &act.g)?)?;
    let h = hadamard(&act.o, &tanh_vec(&c))?;
    Ok(LstmState { h, c })
}

/// Per-step cache retained by the forward pass for backward.
struct StepCache {
    /// Input at this step: the image embedding for step 0, a word embedding
    /// otherwise.
    x: Vector,
    /// Token whose embedding row was fed (None for the image step).
    input_token: Option<usize>,
    h_prev: Vector,
    c_prev: Vector,
    i: Vector,
    f: Vector,
    o: Vector,
    g: Vector,
    tanh_c: Vector,
    h: Vector,
    /// Softmax over vocabulary and the scored target; None for the image step.
    probs: Option<Vector>,
    target: Option<usize>,
}

/// Everything backward needs, plus the total loss.
pub struct ForwardTrace {
    steps: Vec<StepCache>,
    feature: Vector,
    pub loss: f64,
}

impl ForwardTrace {
    /// Number of loss-bearing word steps (caption length − 1).
    pub fn word_steps(&self) -> usize {
        self.steps.len() - 1
    }

    /// Per-step probability vectors in order, word steps only.
    pub fn step_probabilities(&self) -> impl Iterator<Item = &Vector> {
        self.steps.iter().filter_map(|s| s.probs.as_ref())
    }
}

fn run_step(
    p: &ModelParams,
    state: &LstmState,
    x: Vector,
    input_token: Option<usize>,
) -> Result<(StepCache, LstmState), ModelError> {
    let act = lstm_gates(p, state, &x)?;
    let c = add(&hadamard(&act.f, &state.c)?, &hadamard(&act.i, &act.g)?)?;
    let tanh_c = tanh_vec(&c);
    let h = hadamard(&act.o, &tanh_c)?;
    let next = LstmState {
        h: h.clone(),
        c: c.clone(),
    };
    Ok((
        StepCache {
            x,
            input_token,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i: act.i,
            f: act.f,
            o: act.o,
            g: act.g,
            tanh_c,
            h,
            probs: None,
            target: None,
        },
        next,
    ))
}

fn embedding_row(p: &ModelParams, id: usize) -> Result<Vector, ModelError> {
    if id >= p.dims.v {
        return Err(ModelError::TokenOutOfRange { id, v: p.dims.v });
    }
    Ok(Vector::new(p.emb.row(id).to_vec()))
}

/// Teacher-forced forward pass over one caption. `ids` must be
/// [START, ..., STOP]. Returns the trace with total loss
/// Σ_t −log p_t(target_t) over the word steps.
pub fn forward_caption(
    p: &ModelParams,
    f: &Vector,
    ids: &[usize],
) -> Result<ForwardTrace, ModelError> {
    if ids.len() < 2 || ids[0] != START_ID || *ids.last().unwrap() != STOP_ID {
        return Err(ModelError::Unframed(ids.to_vec()));
    }
    let mut state = LstmState::zero(p.dims.h);
    let mut steps = Vec::with_capacity(ids.len());
    let mut loss = 0.0;

    // image step: no loss
    let x_img = encode_image(p, f)?;
    let (cache, next) = run_step(p, &state, x_img, None)?;
    steps.push(cache);
    state = next;

    // word steps: feed ids[t], score ids[t+1]
    for t in 0..ids.len() - 1 {
        let x = embedding_row(p, ids[t])?;
        let (mut cache, next) = run_step(p, &state, x, Some(ids[t]))?;
        let logits = add(&matmul(&p.w_out, &next.h)?, &p.b_out)?;
        let probs = softmax(&logits);
        let target = ids[t + 1];
        loss += neg_log_likelihood(&probs, target)?;
        cache.probs = Some(probs);
        cache.target = Some(target);
        steps.push(cache);
        state = next;
    }

    Ok(ForwardTrace {
        steps,
        feature: f.clone(),
        loss,
    })
}

/// Analytic gradients of the trace's loss with respect to every parameter,
/// via backpropagation through time. Returned in a `ModelParams` with the
/// same shapes.
pub fn backward(p: &ModelParams, trace: &ForwardTrace) -> Result<ModelParams, ModelError> {
    let h = p.dims.h;
    let mut grads = ModelParams::zeros(p.dims);
    let mut dh_next = Vector::zeros(h);
    let mut dc_next = Vector::zeros(h);

    for step in trace.steps.iter().rev() {
        let mut dh = dh_next.clone();
        if let (Some(probs), Some(target)) = (&step.probs, step.target) {
            // d(-log softmax)/dlogits = p - onehot(target)
            let mut dlogits = probs.clone();
            dlogits[target] -= 1.0;
            for k in 0..p.dims.v {
                grads.b_out[k] += dlogits[k];
            }
            outer_add(&mut grads.w_out, &dlogits, &step.h);
            dh = add(&dh, &matmul_transpose(&p.w_out, &dlogits)?)?;
        }

        // h = o ⊙ tanh(c)
        let d_o = hadamard(&dh, &step.tanh_c)?;
        let mut dc = dc_next.clone();
        for k in 0..h {
            dc[k] += dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
        }

        // c = f ⊙ c_prev + i ⊙ g
        let d_f = hadamard(&dc, &step.c_prev)?;
        let d_i = hadamard(&dc, &step.g)?;
        let d_g = hadamard(&dc, &step.i)?;
        dc_next = hadamard(&dc, &step.f)?;

        // back through the nonlinearities to pre-activations
        let da_i = Vector::new(
            (0..h)
                .map(|k| d_i[k] * step.i[k] * (1.0 - step.i[k]))
                .collect(),
        );
        let da_f = Vector::new(
            (0..h)
                .map(|k| d_f[k] * step.f[k] * (1.0 - step.f[k]))
                .collect(),
        );
        let da_o = Vector::new(
            (0..h)
                .map(|k| d_o[k] * step.o[k] * (1.0 - step.o[k]))
                .collect(),
        );
        let da_g = Vector::new(
            (0..h)
                .map(|k| d_g[k] * (1.0 - step.g[k] * step.g[k]))
                .collect(),
        );

        let mut dx = Vector::zeros(p.dims.e);
        let mut dh_prev = Vector::zeros(h);
        for (gate_name, da) in [
            ("input", &da_i),
            ("forget", &da_f),
            ("output", &da_o),
            ("candidate", &da_g),
        ] {
            let gate = p.gate(gate_name);
            let ggate = grads.gate_mut(gate_name);
            outer_add(&mut ggate.w, da, &step.x);
            outer_add(&mut ggate.u, da, &step.h_prev);
            for k in 0..h {
                ggate.b[k] += da[k];
            }
            dx = add(&dx, &matmul_transpose(&gate.w, da)?)?;
            dh_prev = add(&dh_prev, &matmul_transpose(&gate.u, da)?)?;
        }

        match step.input_token {
            Some(id) => {
                let row = grads.emb.row_mut(id);
                for (k, v) in row.iter_mut().enumerate() {
                    *v += dx[k];
                }
            }
            None => {
                // image step: x = W_img·feature + b_img
                outer_add(&mut grads.w_img, &dx, &trace.feature);
                for k in 0..p.dims.e {
                    grads.b_img[k] += dx[k];
                }
            }
        }

        dh_next = dh_prev;
    }

    Ok(grads)
}

/// Input to an incremental decoding step.
pub enum StepInput<'a> {
    /// Pre-computed image embedding (output of `encode_image`).
    ImageEmbedding(&'a Vector),
    Token(usize),
}

/// One incremental step: advance the LSTM and return the softmax over the
/// vocabulary. No trace retained.
pub fn step_probabilities(
    p: &ModelParams,
    s: &LstmState,
    input: StepInput,
) -> Result<(Vector, LstmState), ModelError> {
    let x = match input {
        StepInput::ImageEmbedding(e) => e.clone(),
        StepInput::Token(id) => embedding_row(p, id)?,
    };
    let next = lstm_step(p, s, &x)?;
    let logits = add(&matmul(&p.w_out, &next.h)?, &p.b_out)?;
    Ok((softmax(&logits), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_difference_check;

    fn small_dims() -> Dims {
        Dims { d: 3, e: 2, h: 2, v: 4 }
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let dims = small_dims();
        let p1 = ModelParams::init(dims, 9);
        let p2 = ModelParams::init(dims, 9);
        assert_eq!(p1, p2);
        assert!(p1.forget_gate.b.iter().all(|&b| b == 1.0));

        let tiny = ModelParams::init(Dims { d: 1, e: 1, h: 1, v: 2 }, 0);
        for g in [&tiny.input_gate, &tiny.forget_gate, &tiny.output_gate, &tiny.candidate_gate] {
            assert!(g.w.get(0, 0).abs() <= 1.0);
        }
    }

    #[test]
    fn encode_image_cases() {
        let dims = Dims { d: 2, e: 2, h: 2, v: 3 };
        let mut p = ModelParams::zeros(dims);
        p.w_img = Matrix::identity(2);
        let e1 = Vector::new(vec![1.0, 0.0]);
        assert_eq!(encode_image(&p, &e1).unwrap(), e1);

        p.b_img = Vector::new(vec![0.5, -0.5]);
        let z = Vector::zeros(2);
        assert_eq!(encode_image(&p, &z).unwrap(), p.b_img);
    }

    #[test]
    fn encode_image_hand_case() {
        let dims = Dims { d: 3, e: 2, h: 1, v: 3 };
        let mut p = ModelParams::zeros(dims);
        p.w_img = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        p.b_img = Vector::new(vec![0.1, 0.2]);
        let f = Vector::new(vec![1.0, 0.0, -1.0]);
        let out = encode_image(&p, &f).unwrap();
        assert!((out[0] - (-2.0 + 0.1)).abs() < 1e-15);
        assert!((out[1] - (-2.0 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn lstm_step_zero_weights() {
        let dims = small_dims();
        let p = ModelParams::zeros(dims);
        let s = LstmState::zero(dims.h);
        let x = Vector::new(vec![1.0, -1.0]);
        let out = lstm_step(&p, &s, &x).unwrap();
        assert!(out.h.iter().all(|&v| v == 0.0));
        assert!(out.c.iter().all(|&v| v == 0.0));
    }

    // independent scalar evaluation of the gate equations for H=E=1
    fn scalar_lstm(
        wi: f64, ui: f64, bi: f64,
        wf: f64, uf: f64, bf: f64,
        wo: f64, uo: f64, bo: f64,
        wg: f64, ug: f64, bg: f64,
        h0: f64, c0: f64, x: f64,
    ) -> (f64, f64) {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(wi * x + ui * h0 + bi);
        let f = sig(wf * x + uf * h0 + bf);
        let o = sig(wo * x + uo * h0 + bo);
        let g = (wg * x + ug * h0 + bg).tanh();
        let c = f * c0 + i * g;
        (o * c.tanh(), c)
    }

    #[test]
    fn lstm_step_scalar_oracle() {
        let dims = Dims { d: 1, e: 1, h: 1, v: 3 };
        let mut p = ModelParams::zeros(dims);
        let vals = [0.3, -0.7, 0.2, 0.5, 0.1, 1.0, -0.4, 0.9, -0.1, 0.8, -0.6, 0.05];
        p.input_gate.w.set(0, 0, vals[0]);
        p.input_gate.u.set(0, 0, vals[1]);
        p.input_gate.b[0] = vals[2];
        p.forget_gate.w.set(0, 0, vals[3]);
        p.forget_gate.u.set(0, 0, vals[4]);
        p.forget_gate.b[0] = vals[5];
        p.output_gate.w.set(0, 0, vals[6]);
        p.output_gate.u.set(0, 0, vals[7]);
        p.output_gate.b[0] = vals[8];
        p.candidate_gate.w.set(0, 0, vals[9]);
        p.candidate_gate.u.set(0, 0, vals[10]);
        p.candidate_gate.b[0] = vals[11];

        let s = LstmState {
            h: Vector::new(vec![0.25]),
            c: Vector::new(vec![-0.5]),
        };
        let x = Vector::new(vec![0.7]);
        let out = lstm_step(&p, &s, &x).unwrap();
        let (h_ref, c_ref) = scalar_lstm(
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8],
            vals[9], vals[10], vals[11], 0.25, -0.5, 0.7,
        );
        assert!((out.h[0] - h_ref).abs() < 1e-12);
        assert!((out.c[0] - c_ref).abs() < 1e-12);
    }

    #[test]
    fn lstm_step_saturated_forget_gate() {
        // b_f = 10, zero other weights, c0 = 1: c' = sigmoid(10)*1 + 0.5*tanh(0) = sigmoid(10)
        let dims = Dims { d: 1, e: 1, h: 1, v: 3 };
        let mut p = ModelParams::zeros(dims);
        p.forget_gate.b[0] = 10.0;
        let s = LstmState {
            h: Vector::new(vec![0.0]),
            c: Vector::new(vec![1.0]),
        };
        let out = lstm_step(&p, &s, &Vector::new(vec![0.0])).unwrap();
        let expected_c = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((out.c[0] - expected_c).abs() < 1e-12);
        assert!(expected_c > 0.9999);
    }

    #[test]
    fn forward_minimal_caption() {
        let dims = small_dims();
        let p = ModelParams::init(dims, 1);
        let f = Vector::new(vec![0.5, -0.5, 1.0]);
        let trace = forward_caption(&p, &f, &[START_ID, STOP_ID]).unwrap();
        assert_eq!(trace.word_steps(), 1);
        let probs = trace.step_probabilities().next().unwrap();
        assert!((trace.loss + probs[STOP_ID].ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_rigged_zero_loss() {
        // huge b_out on the target makes p(target) ~ 1 at every step
        let dims = Dims { d: 1, e: 1, h: 1, v: 3 };
        let mut p = ModelParams::zeros(dims);
        p.b_out[STOP_ID] = 200.0;
        let f = Vector::new(vec![0.0]);
        let trace = forward_caption(&p, &f, &[START_ID, STOP_ID]).unwrap();
        assert!(trace.loss < 1e-9, "loss {}", trace.loss);
    }

    #[test]
    fn forward_rejects_unframed() {
        let dims = small_dims();
        let p = ModelParams::init(dims, 1);
        let f = Vector::new(vec![0.0, 0.0, 0.0]);
        assert!(forward_caption(&p, &f, &[START_ID]).is_err());
        assert!(forward_caption(&p, &f, &[3, STOP_ID]).is_err());
        assert!(forward_caption(&p, &f, &[START_ID, 3]).is_err());
    }

    #[test]
    fn backward_b_out_closed_form_single_step() {
        // one word step: grad b_out = p - onehot(target)
        let dims = small_dims();
        let p = ModelParams::init(dims, 5);
        let f = Vector::new(vec![0.1, 0.2, 0.3]);
        let trace = forward_caption(&p, &f, &[START_ID, STOP_ID]).unwrap();
        let grads = backward(&p, &trace).unwrap();
        let probs = trace.step_probabilities().next().unwrap();
        for k in 0..dims.v {
            let expected = probs[k] - if k == STOP_ID { 1.0 } else { 0.0 };
            assert!((grads.b_out[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check_small_instance() {
        let dims = Dims { d: 3, e: 3, h: 3, v: 5 };
        let p = ModelParams::init(dims, 11);
        let f = Vector::new(vec![0.4, -0.2, 0.9]);
        let ids = vec![START_ID, 3, 4, STOP_ID];
        let trace = forward_caption(&p, &f, &ids).unwrap();
        let grads = backward(&p, &trace).unwrap();
        let report = finite_difference_check(
            |q: &ModelParams| forward_caption(q, &f, &ids).unwrap().loss,
            &p,
            &grads,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_relative_error);
    }

    #[test]
    fn step_probabilities_match_forward_trace() {
        let dims = small_dims();
        let p = ModelParams::init(dims, 3);
        let f = Vector::new(vec![0.3, 0.1, -0.8]);
        let ids = vec![START_ID, 3, 3, STOP_ID];
        let trace = forward_caption(&p, &f, &ids).unwrap();

        let emb = encode_image(&p, &f).unwrap();
        let mut state = LstmState::zero(dims.h);
        let (_, next) = step_probabilities(&p, &state, StepInput::ImageEmbedding(&emb)).unwrap();
        state = next;
        for (t, expected) in trace.step_probabilities().enumerate() {
            let (probs, next) =
                step_probabilities(&p, &state, StepInput::Token(ids[t])).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for k in 0..dims.v {
                assert!((probs[k] - expected[k]).abs() < 1e-12);
            }
            state = next;
        }
    }

    #[test]
    fn step_probabilities_bad_token() {
        let dims = small_dims();
        let p = ModelParams::init(dims, 3);
        let s = LstmState::zero(dims.h);
        assert!(matches!(
            step_probabilities(&p, &s, StepInput::Token(99)),
            Err(ModelError::TokenOutOfRange { .. })
        ));
    }
}
