//! Training loop, optimizers, and checkpoint persistence.
//!
//! Gradients are summed per batch in a fixed order and averaged, then one
//! optimizer step is taken per batch. All randomness derives from the config
//! seed, so (seed, config, dataset) fully determines the parameter
//! trajectory, and resuming from a checkpoint is bit-exact.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{make_batches, CaptionedExample, DataError};
use crate::model::{backward, forward_caption, Dims, ModelError, ModelParams};
use crate::numeric::ParamBlocks;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CAPN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (param norm {param_norm:.3e}, grad norm {grad_norm:.3e})")]
    NonFiniteLoss {
        epoch: u64,
        batch: usize,
        param_norm: f64,
        grad_norm: f64,
    },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint refused: {0}")]
    Refused(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.learning_rate >= 0.0, "learning rate must be >= 0");
        assert!(self.epochs >= 1, "epochs must be >= 1");
        assert!(self.batch_size >= 1, "batch size must be >= 1");
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam_default(),
            grad_clip_norm: Some(5.0),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Optimizer accumulators; Adam keeps first/second moments shaped like the
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        t: u64,
        m: Box<ModelParams>,
        v: Box<ModelParams>,
    },
}

impl OptimizerState {
    pub fn new(kind: &OptimizerKind, dims: Dims) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { .. } => OptimizerState::Adam {
                t: 0,
                m: Box::new(ModelParams::zeros(dims)),
                v: Box::new(ModelParams::zeros(dims)),
            },
        }
    }
}

fn global_norm(grads: &ModelParams) -> f64 {
    let mut sq = 0.0;
    for name in grads.block_names() {
        for g in grads.block(&name) {
            sq += g * g;
        }
    }
    sq.sqrt()
}

/// Optional global-norm clipping, then one SGD or Adam update in place.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &mut ModelParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
) {
    if let Some(clip) = config.grad_clip_norm {
        let norm = global_norm(grads);
        if norm > clip {
            let scale = clip / norm;
            for name in grads.block_names() {
                for g in grads.block_mut(&name) {
                    *g *= scale;
                }
            }
        }
    }
    let lr = config.learning_rate;
    match (config.optimizer, &mut *state) {
        (OptimizerKind::Sgd, OptimizerState::Sgd) => {
            for name in params.block_names() {
                let gs = grads.block(&name).to_vec();
                for (p, g) in params.block_mut(&name).iter_mut().zip(gs) {
                    *p -= lr * g;
                }
            }
        }
        (
            OptimizerKind::Adam { beta1, beta2, eps },
            OptimizerState::Adam { t, m, v },
        ) => {
            *t += 1;
            let bc1 = 1.0 - beta1.powi(*t as i32);
            let bc2 = 1.0 - beta2.powi(*t as i32);
            for name in params.block_names() {
                let gs = grads.block(&name).to_vec();
                let ms = m.block_mut(&name);
                for (mk, g) in ms.iter_mut().zip(&gs) {
                    *mk = beta1 * *mk + (1.0 - beta1) * g;
                }
                let vs = v.block_mut(&name);
                for (vk, g) in vs.iter_mut().zip(&gs) {
                    *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                }
                let ms = m.block(&name).to_vec();
                let vs = v.block(&name).to_vec();
                for (i, p) in params.block_mut(&name).iter_mut().enumerate() {
                    let mhat = ms[i] / bc1;
                    let vhat = vs[i] / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        _ => panic!("optimizer state does not match optimizer kind"),
    }
}

/// Mutable training state; checkpoints serialize exactly this plus the seed.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptimizerState,
    /// Epochs completed so far.
    pub epoch: u64,
}

impl TrainState {
    pub fn fresh(params: ModelParams, config: &TrainConfig) -> Self {
        let opt = OptimizerState::new(&config.optimizer, params.dims);
        TrainState {
            params,
            opt,
            epoch: 0,
        }
    }
}

/// Per-epoch shuffle seed, a pure function of (config seed, epoch) so that
/// resumed runs shuffle identically.
fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x2545f4914f6cdd1d)
}

/// One epoch: shuffle, then for each batch average per-example gradients in
/// batch order and take a single optimizer step. Returns mean per-token loss.
pub fn run_epoch(
    state: &mut TrainState,
    examples: &[CaptionedExample],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let batches = make_batches(examples, config.batch_size, epoch_seed(config.seed, state.epoch))?;
    let mut loss_sum = 0.0;
    let mut token_count = 0usize;
    for (bi, batch) in batches.iter().enumerate() {
        let mut grads = ModelParams::zeros(state.params.dims);
        let mut batch_loss = 0.0;
        for ex in batch {
            let trace = forward_caption(&state.params, &ex.feature, &ex.caption_ids)?;
            batch_loss += trace.loss;
            token_count += ex.caption_ids.len() - 1;
            let g = backward(&state.params, &trace)?;
            for name in grads.block_names() {
                let src = g.block(&name).to_vec();
                for (acc, gi) in grads.block_mut(&name).iter_mut().zip(src) {
                    *acc += gi;
                }
            }
        }
        if !batch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: state.epoch,
                batch: bi,
                param_norm: global_norm(&state.params),
                grad_norm: global_norm(&grads),
            });
        }
        loss_sum += batch_loss;
        let inv = 1.0 / batch.len() as f64;
        for name in grads.block_names() {
            for g in grads.block_mut(&name) {
                *g *= inv;
            }
        }
        optimizer_step(&mut state.params, &mut grads, &mut state.opt, config);
    }
    state.epoch += 1;
    Ok(loss_sum / token_count as f64)
}

/// Train from the state's current epoch up to `config.epochs`. Returns the
/// mean per-token loss of each epoch run.
pub fn train(
    state: &mut TrainState,
    examples: &[CaptionedExample],
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    config.validate();
    if examples.is_empty() {
        return Err(TrainError::Data(DataError::EmptyExamples));
    }
    let mut history = Vec::new();
    while state.epoch < config.epochs {
        history.push(run_epoch(state, examples, config)?);
    }
    Ok(history)
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Dims,
    pub vocab_hash: [u8; 32],
    pub epoch: u64,
    pub seed: u64,
    pub params: ModelParams,
    pub opt: OptimizerState,
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn params(&mut self, p: &ModelParams) {
        for name in p.block_names() {
            self.floats(p.block(&name));
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn params(&mut self, dims: Dims) -> Result<ModelParams, TrainError> {
        let mut p = ModelParams::zeros(dims);
        for name in p.block_names() {
            let len = p.block(&name).len();
            let bytes = self.take(len * 8)?;
            for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                p.block_mut(&name)[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(p)
    }
}

/// Binary layout: magic, version, dims, vocab hash, epoch, seed, parameter
/// blocks as little-endian f64 in block-name order, optimizer state, then a
/// trailing SHA-256 of everything before it.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(ckpt.version);
    w.u32(ckpt.dims.d as u32);
    w.u32(ckpt.dims.e as u32);
    w.u32(ckpt.dims.h as u32);
    w.u32(ckpt.dims.v as u32);
    w.0.extend_from_slice(&ckpt.vocab_hash);
    w.u64(ckpt.epoch);
    w.u64(ckpt.seed);
    w.params(&ckpt.params);
    match &ckpt.opt {
        OptimizerState::Sgd => w.0.push(0),
        OptimizerState::Adam { t, m, v } => {
            w.0.push(1);
            w.u64(*t);
            w.params(m);
            w.params(v);
        }
    }
    let digest: [u8; 32] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    std::fs::write(path, &w.0)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let buf = std::fs::read(path)?;
    if buf.len() < 32 {
        return Err(TrainError::Corrupt("file too short".into()));
    }
    let (body, stored) = buf.split_at(buf.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != stored {
        return Err(TrainError::Corrupt("checksum mismatch".into()));
    }
    let mut r = ByteReader { buf: body, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Refused(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let dims = Dims {
        d: r.u32()? as usize,
        e: r.u32()? as usize,
        h: r.u32()? as usize,
        v: r.u32()? as usize,
    };
    let mut vocab_hash = [0u8; 32];
    vocab_hash.copy_from_slice(r.take(32)?);
    let epoch = r.u64()?;
    let seed = r.u64()?;
    let params = r.params(dims)?;
    let opt = match r.take(1)?[0] {
        0 => OptimizerState::Sgd,
        1 => OptimizerState::Adam {
            t: r.u64()?,
            m: Box::new(r.params(dims)?),
            v: Box::new(r.params(dims)?),
        },
        tag => return Err(TrainError::Corrupt(format!("bad optimizer tag {tag}"))),
    };
    if r.pos != body.len() {
        return Err(TrainError::Corrupt("trailing bytes".into()));
    }
    Ok(Checkpoint {
        version,
        dims,
        vocab_hash,
        epoch,
        seed,
        params,
        opt,
    })
}

/// Refuse a checkpoint whose dims or vocabulary don't match the run.
pub fn validate_checkpoint(
    ckpt: &Checkpoint,
    dims: Option<Dims>,
    vocab_hash: &[u8; 32],
) -> Result<(), TrainError> {
    if let Some(d) = dims {
        if ckpt.dims != d {
            return Err(TrainError::Refused(format!(
                "dimension mismatch: checkpoint {:?}, run {:?}",
                ckpt.dims, d
            )));
        }
    }
    if &ckpt.vocab_hash != vocab_hash {
        return Err(TrainError::Refused(
            "vocabulary hash mismatch: checkpoint was trained against a different vocabulary"
                .into(),
        ));
    }
    Ok(())
}
