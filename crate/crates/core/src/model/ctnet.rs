use super::adapter::{AdapterKind, AdapterStack, AdapterTrace};
use super::single::{SingleDomainModel, TowerTrace};
use super::ModelError;
use crate::features::Record;
use crate::numkern::{bce_with_logits, RngStream, ADAGRAD_EPS};

/// Frozen source tower, trainable target tower, and per-level adapters between them.
#[derive(Clone, Debug, PartialEq)]
pub struct CTNetModel {
    pub source: SingleDomainModel,
    pub target: SingleDomainModel,
    pub adapters: AdapterStack,
    pub share_sequence: bool,
}

/// Intermediates of one CTNet forward pass.
#[derive(Clone, Debug)]
pub struct CTNetTrace {
    pub source: TowerTrace,
    pub adapter_traces: Vec<AdapterTrace>,
    pub target: TowerTrace,
}

fn adapter_dims(source: &SingleDomainModel, target: &SingleDomainModel) -> Vec<(usize, usize)> {
    let mut dims = vec![(target.input_dim(), source.input_dim())];
    dims.extend(target.widths().into_iter().zip(source.widths()));
    dims
}

impl CTNetModel {
    /// Assembles a CTNet, checking that both towers and the adapters line up. The source
    /// tower is frozen here.
    pub fn new(
        mut source: SingleDomainModel,
        target: SingleDomainModel,
        adapters: AdapterStack,
        share_sequence: bool,
    ) -> Result<Self, ModelError> {
        if source.depth() != target.depth() {
            return Err(ModelError::Architecture(format!(
                "source tower has {} layers, target tower {}",
                source.depth(),
                target.depth()
            )));
        }
        if !source.schema.is_subset_of(&target.schema) {
            return Err(ModelError::Architecture(
                "source schema fields must be a subset of the target schema".into(),
            ));
        }
        if source.layout != target.layout {
            return Err(ModelError::Architecture("towers read different record layouts".into()));
        }
        let dims = adapter_dims(&source, &target);
        if adapters.layers.len() != dims.len() {
            return Err(ModelError::Architecture(format!(
                "expected {} adapters, got {}",
                dims.len(),
                adapters.layers.len()
            )));
        }
        for (l, (a, d)) in adapters.layers.iter().zip(&dims).enumerate() {
            if a.shape() != *d || a.kind() != adapters.kind {
                return Err(ModelError::Architecture(format!("adapter {l} has shape {:?}, expected {d:?}", a.shape())));
            }
        }
        source.set_trainable(false);
        let mut model = CTNetModel {
            source,
            target,
            adapters,
            share_sequence: false,
        };
        model.set_share_sequence(share_sequence)?;
        Ok(model)
    }

    /// Toggles feeding the source tower's attention output to the target tower.
    pub fn set_share_sequence(&mut self, on: bool) -> Result<(), ModelError> {
        if on && self.source.attention.output_dim() != self.target.attention.output_dim() {
            return Err(ModelError::Architecture(
                "sequence sharing needs equal attention output widths".into(),
            ));
        }
        self.share_sequence = on;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.target.depth()
    }

    pub fn forward_trace(&self, record: &Record) -> Result<CTNetTrace, ModelError> {
        let source = self.source.forward_trace(record, None, None)?;
        let mut injections = Vec::with_capacity(self.adapters.layers.len());
        let mut adapter_traces = Vec::with_capacity(self.adapters.layers.len());
        for (adapter, z) in self.adapters.layers.iter().zip(&source.z) {
            let (out, trace) = adapter.forward(z);
            injections.push(out);
            adapter_traces.push(trace);
        }
        let shared = if self.share_sequence {
            let att = source.attention.as_ref().expect("source tower runs its own attention");
            Some(att.out.as_slice())
        } else {
            None
        };
        let target = self.target.forward_trace(record, shared, Some(&injections))?;
        Ok(CTNetTrace {
            source,
            adapter_traces,
            target,
        })
    }

    pub fn forward(&self, record: &Record) -> Result<f64, ModelError> {
        Ok(self.forward_trace(record)?.target.logit)
    }

    pub fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError> {
        let trace = self.forward_trace(record)?;
        let (loss, d) = bce_with_logits(trace.target.logit, record.label);
        let d_inject = self.target.backward(record, &trace.target, d * scale);
        for ((adapter, z), (t, up)) in self
            .adapters
            .layers
            .iter_mut()
            .zip(&trace.source.z)
            .zip(trace.adapter_traces.iter().zip(&d_inject))
        {
            adapter.backward(z, t, up);
        }
        Ok(loss)
    }

    /// Updates the target tower and adapters; the source tower is never touched.
    pub fn apply_step(&mut self, lr: f64) -> Result<(), ModelError> {
        self.target.apply_step(lr)?;
        for p in self.adapters.params_mut() {
            if p.trainable {
                p.adagrad_step(lr, ADAGRAD_EPS)?;
            }
        }
        // Frozen tower: discard whatever gradient bookkeeping accumulated.
        self.source.zero_grad();
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.source.zero_grad();
        self.target.zero_grad();
        for p in self.adapters.params_mut() {
            p.zero_grad();
        }
    }

    /// Replaces the source tower with a frozen copy of `latest`. Target tower and
    /// adapters are untouched.
    pub fn refresh_source(&mut self, latest: &SingleDomainModel) -> Result<(), ModelError> {
        if !self.source.same_architecture(latest) {
            return Err(ModelError::Architecture(
                "refresh requires the same source architecture".into(),
            ));
        }
        let mut fresh = latest.clone();
        fresh.set_trainable(false);
        fresh.zero_grad();
        self.source = fresh;
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.source.round_to_f32();
        self.target.round_to_f32();
        for p in self.adapters.params_mut() {
            p.round_to_f32();
        }
    }
}

/// Builds a CTNet whose target tower is `prev_target` (weights and optimizer state) and
/// whose source tower is a frozen copy of `latest_source`. Linear adapter paths start
/// at exactly zero, so the new model scores every record exactly as `prev_target` does.
pub fn warm_start(
    prev_target: &SingleDomainModel,
    latest_source: &SingleDomainModel,
    kind: AdapterKind,
    rng: &mut RngStream,
) -> Result<CTNetModel, ModelError> {
    let mut target = prev_target.clone();
    target.zero_grad();
    let mut source = latest_source.clone();
    source.zero_grad();
    if source.depth() != target.depth() {
        return Err(ModelError::Architecture(format!(
            "source tower has {} layers, target tower {}",
            source.depth(),
            target.depth()
        )));
    }
    let adapters = AdapterStack::warm(kind, &adapter_dims(&source, &target), rng);
    CTNetModel::new(source, target, adapters, false)
}
