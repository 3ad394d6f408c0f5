//! Single-domain CTR model, the two-tower transfer network, training and checkpoints.

mod adapter;
mod checkpoint;
mod ctnet;
mod objective;
mod single;
mod suite;

use thiserror::Error;

use crate::error::KernelError;
use crate::features::{FeatureError, Record};
use crate::numkern::Parameter;

pub use adapter::{Adapter, AdapterKind, AdapterStack, AdapterTrace, GATE_INIT_STD};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ctnet::{warm_start, CTNetModel, CTNetTrace};
pub use objective::BatchObjective;
pub use suite::{grad_check_suite, SuiteCase};
pub use single::{AttentionConfig, AuxEmbeddings, Dense, ModelConfig, SingleDomainModel, TowerConfig, TowerTrace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("checkpoint error at byte offset {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Either kind of scorer; this is what checkpoints hold.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Single(SingleDomainModel),
    CTNet(CTNetModel),
}

/// Common surface of trainable CTR scorers.
pub trait CtrModel {
    fn logit(&self, record: &Record) -> Result<f64, ModelError>;
    /// Forward, loss and backward for one record; gradients are weighted by `scale`.
    /// Returns the unweighted loss.
    fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError>;
    fn apply_step(&mut self, lr: f64) -> Result<(), ModelError>;
    fn zero_grad(&mut self);
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;
    /// Rounds all stored values to checkpoint precision.
    fn round_to_f32(&mut self);

    /// Unique display names, aligned with [`CtrModel::params`].
    fn param_labels(&self) -> Vec<String> {
        self.params().iter().map(|p| p.name.clone()).collect()
    }

    /// Order-sensitive FNV-1a digest over every value and accumulator bit pattern.
    fn fingerprint(&self) -> u64 {
        fingerprint(self.params().into_iter())
    }
}

pub fn fingerprint<'a>(params: impl Iterator<Item = &'a Parameter>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for p in params {
        for v in p.value.data().iter().chain(p.accum.data()) {
            eat(v.to_bits());
        }
        eat(u64::from(p.trainable));
    }
    h
}

impl CtrModel for SingleDomainModel {
    fn logit(&self, record: &Record) -> Result<f64, ModelError> {
        self.forward(record)
    }
    fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError> {
        SingleDomainModel::accumulate(self, record, scale)
    }
    fn apply_step(&mut self, lr: f64) -> Result<(), ModelError> {
        SingleDomainModel::apply_step(self, lr)
    }
    fn zero_grad(&mut self) {
        SingleDomainModel::zero_grad(self)
    }
    fn params(&self) -> Vec<&Parameter> {
        SingleDomainModel::params(self)
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        SingleDomainModel::params_mut(self)
    }
    fn round_to_f32(&mut self) {
        SingleDomainModel::round_to_f32(self)
    }
}

impl CtrModel for CTNetModel {
    fn logit(&self, record: &Record) -> Result<f64, ModelError> {
        self.forward(record)
    }
    fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError> {
        CTNetModel::accumulate(self, record, scale)
    }
    fn apply_step(&mut self, lr: f64) -> Result<(), ModelError> {
        CTNetModel::apply_step(self, lr)
    }
    fn zero_grad(&mut self) {
        CTNetModel::zero_grad(self)
    }
    /// Source tower, then target tower, then adapters.
    fn params(&self) -> Vec<&Parameter> {
        let mut out = self.source.params();
        out.extend(self.target.params());
        out.extend(self.adapters.params());
        out
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let CTNetModel {
            source,
            target,
            adapters,
            ..
        } = self;
        let mut out = source.params_mut();
        out.extend(target.params_mut());
        out.extend(adapters.params_mut());
        out
    }
    fn round_to_f32(&mut self) {
        CTNetModel::round_to_f32(self)
    }
    fn param_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.source.params().iter().map(|p| format!("source/{}", p.name)).collect();
        out.extend(self.target.params().iter().map(|p| format!("target/{}", p.name)));
        out.extend(self.adapters.params().iter().map(|p| p.name.clone()));
        out
    }
}

impl CtrModel for AnyModel {
    fn logit(&self, record: &Record) -> Result<f64, ModelError> {
        match self {
            AnyModel::Single(m) => m.forward(record),
            AnyModel::CTNet(m) => m.forward(record),
        }
    }
    fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError> {
        match self {
            AnyModel::Single(m) => m.accumulate(record, scale),
            AnyModel::CTNet(m) => m.accumulate(record, scale),
        }
    }
    fn apply_step(&mut self, lr: f64) -> Result<(), ModelError> {
        match self {
            AnyModel::Single(m) => m.apply_step(lr),
            AnyModel::CTNet(m) => m.apply_step(lr),
        }
    }
    fn zero_grad(&mut self) {
        match self {
            AnyModel::Single(m) => m.zero_grad(),
            AnyModel::CTNet(m) => m.zero_grad(),
        }
    }
    fn params(&self) -> Vec<&Parameter> {
        match self {
            AnyModel::Single(m) => CtrModel::params(m),
            AnyModel::CTNet(m) => CtrModel::params(m),
        }
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            AnyModel::Single(m) => CtrModel::params_mut(m),
            AnyModel::CTNet(m) => CtrModel::params_mut(m),
        }
    }
    fn round_to_f32(&mut self) {
        match self {
            AnyModel::Single(m) => m.round_to_f32(),
            AnyModel::CTNet(m) => m.round_to_f32(),
        }
    }
    fn param_labels(&self) -> Vec<String> {
        match self {
            AnyModel::Single(m) => m.param_labels(),
            AnyModel::CTNet(m) => m.param_labels(),
        }
    }
}

/// Mean BCE over `batch`, backpropagated through trainable parameters only, followed by
/// one AdaGrad step. Returns the mean loss before the update.
pub fn train_step<M: CtrModel + ?Sized>(model: &mut M, batch: &[Record], lr: f64) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for r in batch {
        total += model.accumulate(r, scale)?;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        model.zero_grad();
        return Err(ModelError::NonFinite("training loss".into()));
    }
    model.apply_step(lr)?;
    Ok(loss)
}

/// Mean BCE of `model` on `records` without touching gradients.
pub fn mean_loss<M: CtrModel + ?Sized>(model: &M, records: &[Record]) -> Result<f64, ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for r in records {
        total += crate::numkern::bce_with_logits(model.logit(r)?, r.label).0;
    }
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests;
