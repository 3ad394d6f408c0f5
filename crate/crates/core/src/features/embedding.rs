use super::record::{FieldRef, Record};
use super::schema::FieldSpec;
use super::FeatureError;
use crate::numkern::{Parameter, RngStream};

pub const EMBEDDING_INIT_RANGE: f64 = 0.01;

/// Lookup table for one categorical field, bound to the record column it reads.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub field: String,
    pub source: FieldRef,
    pub table: Parameter,
    /// Rows that received gradient since the last optimizer step.
    pub(crate) touched: Vec<usize>,
}

impl EmbeddingTable {
    pub fn new(spec: &FieldSpec, source: FieldRef, param_name: impl Into<String>, rng: &mut RngStream) -> Self {
        let value = rng.uniform_tensor(spec.vocab_size, spec.embedding_dim, -EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE);
        Self::from_parameter(spec.name.clone(), source, Parameter::new(param_name, value))
    }

    pub fn from_parameter(field: String, source: FieldRef, table: Parameter) -> Self {
        EmbeddingTable {
            field,
            source,
            table,
            touched: Vec::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn lookup(&self, id: u32) -> Result<&[f64], FeatureError> {
        if id as usize >= self.vocab_size() {
            return Err(FeatureError::Invalid(format!(
                "{} id {id} out of range (vocab {})",
                self.field,
                self.vocab_size()
            )));
        }
        Ok(self.table.value.row(id as usize))
    }

    /// Adds `scale · grad` into row `id` of the gradient buffer.
    pub fn accumulate(&mut self, id: u32, grad: &[f64], scale: f64) {
        let row = self.table.grad.row_mut(id as usize);
        for (g, d) in row.iter_mut().zip(grad) {
            *g += scale * d;
        }
        self.touched.push(id as usize);
    }

    /// AdaGrad over the rows touched since the last step.
    pub fn step(&mut self, lr: f64, eps: f64) -> Result<(), crate::error::KernelError> {
        self.touched.sort_unstable();
        self.touched.dedup();
        let rows = std::mem::take(&mut self.touched);
        self.table.adagrad_step_rows(&rows, lr, eps)
    }

    pub fn clear_touched(&mut self) {
        for &r in &self.touched {
            self.table.grad.row_mut(r).fill(0.0);
        }
        self.touched.clear();
    }
}

/// Concatenates the embedding rows of `record` for each table, in table order.
pub fn embed_concat(record: &Record, tables: &[EmbeddingTable]) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(tables.iter().map(EmbeddingTable::dim).sum());
    for t in tables {
        if let FieldRef::Extra(k) = t.source {
            if k >= record.cats.len() {
                return Err(FeatureError::Invalid(format!("record lacks field `{}`", t.field)));
            }
        }
        out.extend_from_slice(t.lookup(record.id(t.source))?);
    }
    Ok(out)
}
