use super::{CtrModel, ModelError};
use crate::error::KernelError;
use crate::features::Record;
use crate::numkern::{Differentiable, Parameter};

/// Mean BCE of a model over a fixed batch, exposed for finite-difference checking.
pub struct BatchObjective<'a, M> {
    pub model: M,
    pub batch: &'a [Record],
    labels: Vec<String>,
}

impl<'a, M: CtrModel> BatchObjective<'a, M> {
    pub fn new(model: M, batch: &'a [Record]) -> Self {
        Self::with_labels(model, batch, None)
    }

    /// `labels[i]` names parameter `i` in reports (defaults to the parameter name).
    pub fn with_labels(model: M, batch: &'a [Record], labels: Option<Vec<String>>) -> Self {
        let labels = labels.unwrap_or_else(|| model.param_labels());
        BatchObjective { model, batch, labels }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

fn to_kernel(e: ModelError) -> KernelError {
    match e {
        ModelError::Kernel(k) => k,
        other => KernelError::NonFinite {
            name: other.to_string(),
            index: 0,
        },
    }
}

impl<M: CtrModel> Differentiable for BatchObjective<'_, M> {
    fn param_count(&self) -> usize {
        self.labels.len()
    }

    fn param(&self, index: usize) -> &Parameter {
        self.model.params()[index]
    }

    fn param_mut(&mut self, index: usize) -> &mut Parameter {
        self.model.params_mut().swap_remove(index)
    }

    fn loss(&self) -> Result<f64, KernelError> {
        super::mean_loss(&self.model, self.batch).map_err(to_kernel)
    }

    fn compute_grads(&mut self) -> Result<f64, KernelError> {
        self.model.zero_grad();
        let scale = 1.0 / self.batch.len() as f64;
        let mut total = 0.0;
        for r in self.batch {
            total += self.model.accumulate(r, scale).map_err(to_kernel)?;
        }
        Ok(total * scale)
    }

    fn param_label(&self, index: usize) -> String {
        self.labels[index].clone()
    }
}
