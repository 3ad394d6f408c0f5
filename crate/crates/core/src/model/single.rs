use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::{
    embed_concat, EmbeddingTable, FeatureSchema, Record, RecordLayout, ITEM_FIELD, USER_FIELD,
};
use crate::numkern::{
    bce_with_logits, matvec_into, matvec_t_accum, outer_accum, relu_scalar, Parameter, RngStream, Tensor2D,
    ADAGRAD_EPS,
};
use crate::seqmodel::{AttentionParams, AttentionTrace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerConfig {
    pub layer_widths: Vec<usize>,
}

impl TowerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(ModelError::Architecture(
                "tower needs at least one hidden layer and positive widths".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig {
            layer_widths: vec![64, 32, 16],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { heads: 2, head_dim: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tower: TowerConfig,
    pub attention: AttentionConfig,
}

/// Fully connected layer `w · x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    fn new(name: &str, inputs: usize, outputs: usize, std: f64, rng: &mut RngStream) -> Self {
        Dense {
            w: Parameter::new(format!("{name}.w"), rng.normal_tensor(outputs, inputs, std)),
            b: Parameter::zeros(format!("{name}.b"), outputs, 1),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.value.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.value.rows()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        matvec_into(&self.w.value, x, out);
        for (o, b) in out.iter_mut().zip(self.b.value.data()) {
            *o += b;
        }
    }
}

/// Cached, frozen source-domain user/item embeddings appended to `e` as auxiliary inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxEmbeddings {
    pub user: Parameter,
    pub item: Parameter,
}

impl AuxEmbeddings {
    pub fn dim(&self) -> usize {
        self.user.value.cols() + self.item.value.cols()
    }
}

/// Forward intermediates of one tower on one record.
#[derive(Clone, Debug)]
pub struct TowerTrace {
    pub attention: Option<AttentionTrace>,
    /// `z[0]` is the tower input (embedding concat plus any injection); `z[l]` the
    /// post-activation output of hidden layer `l`.
    pub z: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Embedding tables, target attention, ReLU MLP and a linear logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleDomainModel {
    pub schema: FeatureSchema,
    pub layout: RecordLayout,
    pub config: ModelConfig,
    pub tables: Vec<EmbeddingTable>,
    pub attention: AttentionParams,
    pub layers: Vec<Dense>,
    pub head: Dense,
    pub aux: Option<AuxEmbeddings>,
    item_table: usize,
}

impl SingleDomainModel {
    /// Builds a randomly initialized model reading records laid out as `layout`.
    pub fn new(
        schema: FeatureSchema,
        layout: RecordLayout,
        config: ModelConfig,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        schema.validate()?;
        config.tower.validate()?;
        if config.attention.heads == 0 || config.attention.head_dim == 0 {
            return Err(ModelError::Architecture("attention needs heads >= 1 and head_dim >= 1".into()));
        }
        let mut tables = Vec::with_capacity(schema.fields.len());
        for f in &schema.fields {
            let source = layout
                .resolve(&f.name)
                .ok_or_else(|| ModelError::Architecture(format!("records carry no column for field `{}`", f.name)))?;
            let mut table_rng = rng.split_named(&f.name);
            tables.push(EmbeddingTable::new(f, source, format!("emb.{}", f.name), &mut table_rng));
        }
        let item_table = schema.field_index(ITEM_FIELD).expect("validated");
        let item_dim = schema.fields[item_table].embedding_dim;
        let mut attn_rng = rng.split_named("attention");
        let attention = AttentionParams::new(config.attention.heads, config.attention.head_dim, item_dim, "attn", &mut attn_rng);
        let mut mlp_rng = rng.split_named("mlp");
        let mut inputs = schema.feat_dim() + attention.output_dim();
        let mut layers = Vec::with_capacity(config.tower.layer_widths.len());
        for (l, &w) in config.tower.layer_widths.iter().enumerate() {
            layers.push(Dense::new(&format!("mlp.{l}"), inputs, w, (2.0 / inputs as f64).sqrt(), &mut mlp_rng));
            inputs = w;
        }
        let head = Dense::new("head", inputs, 1, (1.0 / inputs as f64).sqrt(), &mut mlp_rng);
        Ok(SingleDomainModel {
            schema,
            layout,
            config,
            tables,
            attention,
            layers,
            head,
            aux: None,
            item_table,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::outputs).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn item_table(&self) -> &EmbeddingTable {
        &self.tables[self.item_table]
    }

    pub fn table(&self, field: &str) -> Option<&EmbeddingTable> {
        self.tables.iter().find(|t| t.field == field)
    }

    pub fn table_mut(&mut self, field: &str) -> Option<&mut EmbeddingTable> {
        self.tables.iter_mut().find(|t| t.field == field)
    }

    /// Every parameter in a fixed order: tables, attention, MLP, head, auxiliary caches.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.tables.iter().map(|t| &t.table).collect();
        out.extend(self.attention.params());
        for d in self.layers.iter().chain(std::iter::once(&self.head)) {
            out.push(&d.w);
            out.push(&d.b);
        }
        if let Some(aux) = &self.aux {
            out.push(&aux.user);
            out.push(&aux.item);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let SingleDomainModel {
            tables,
            attention,
            layers,
            head,
            aux,
            ..
        } = self;
        let mut out: Vec<&mut Parameter> = tables.iter_mut().map(|t| &mut t.table).collect();
        out.extend(attention.params_mut());
        for d in layers.iter_mut().chain(std::iter::once(head)) {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        if let Some(aux) = aux {
            out.push(&mut aux.user);
            out.push(&mut aux.item);
        }
        out
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.trainable = trainable;
        }
        if let Some(aux) = &mut self.aux {
            aux.user.trainable = false;
            aux.item.trainable = false;
        }
    }

    fn sequence<'r>(&self, record: &'r Record) -> &'r [u32] {
        let max = self.schema.sequence_max_len;
        &record.seq[record.seq.len().saturating_sub(max)..]
    }

    fn check_record(&self, record: &Record) -> Result<(), ModelError> {
        let items = self.item_table().vocab_size();
        if let Some(&bad) = record.seq.iter().find(|&&j| j as usize >= items) {
            return Err(ModelError::Record(format!("sequence item {bad} out of range (vocab {items})")));
        }
        Ok(())
    }

    /// Embedding concat, attention output and auxiliary inputs: the tower input `e`.
    /// `ta_override` replaces this model's own attention output.
    fn embed(&self, record: &Record, ta_override: Option<&[f64]>) -> Result<(Vec<f64>, Option<AttentionTrace>), ModelError> {
        self.check_record(record)?;
        let mut e = embed_concat(record, &self.tables)?;
        let trace = match ta_override {
            Some(ta) => {
                if ta.len() != self.attention.output_dim() {
                    return Err(ModelError::Architecture(format!(
                        "shared attention output has {} entries, tower expects {}",
                        ta.len(),
                        self.attention.output_dim()
                    )));
                }
                e.extend_from_slice(ta);
                None
            }
            None => {
                let items = &self.tables[self.item_table].table.value;
                let seq = self.sequence(record);
                let behaviors: Vec<&[f64]> = seq.iter().map(|&j| items.row(j as usize)).collect();
                let mask = vec![true; behaviors.len()];
                let target = items.row(record.item_id as usize);
                let t = self.attention.forward(target, &behaviors, &mask)?;
                e.extend_from_slice(&t.out);
                Some(t)
            }
        };
        if let Some(aux) = &self.aux {
            e.extend_from_slice(aux.user.value.row(record.user_id as usize));
            e.extend_from_slice(aux.item.value.row(record.item_id as usize));
        }
        Ok((e, trace))
    }

    /// Full forward pass. `inject[0]` is added to the tower input and `inject[l]` to the
    /// pre-activation of hidden layer `l`.
    pub fn forward_trace(
        &self,
        record: &Record,
        ta_override: Option<&[f64]>,
        inject: Option<&[Vec<f64>]>,
    ) -> Result<TowerTrace, ModelError> {
        let (mut z0, attention) = self.embed(record, ta_override)?;
        if let Some(inj) = inject {
            if inj.len() != self.layers.len() + 1 {
                return Err(ModelError::Architecture("injection count does not match tower depth".into()));
            }
            for (z, g) in z0.iter_mut().zip(&inj[0]) {
                *z += g;
            }
        }
        let mut z = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        z.push(z0);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut p = vec![0.0; layer.outputs()];
            layer.forward_into(&z[l], &mut p);
            if let Some(inj) = inject {
                for (a, g) in p.iter_mut().zip(&inj[l + 1]) {
                    *a += g;
                }
            }
            z.push(p.iter().map(|&x| relu_scalar(x)).collect());
            pre.push(p);
        }
        let mut logit = [0.0];
        self.head.forward_into(&z[self.layers.len()], &mut logit);
        Ok(TowerTrace {
            attention,
            z,
            pre,
            logit: logit[0],
        })
    }

    pub fn forward(&self, record: &Record) -> Result<f64, ModelError> {
        Ok(self.forward_trace(record, None, None)?.logit)
    }

    /// Backpropagates `dlogit` through the tower, accumulating into every trainable
    /// parameter's gradient. Returns the gradient w.r.t. each injection point
    /// (`[dz_0, dpre_1, …, dpre_L]`).
    pub fn backward(&mut self, record: &Record, trace: &TowerTrace, dlogit: f64) -> Vec<Vec<f64>> {
        let depth = self.layers.len();
        let mut d_inject = vec![Vec::new(); depth + 1];
        if self.head.w.trainable {
            outer_accum(&mut self.head.w.grad, &[dlogit], &trace.z[depth], 1.0);
            self.head.b.grad.data_mut()[0] += dlogit;
        }
        let mut dz = vec![0.0; trace.z[depth].len()];
        matvec_t_accum(&self.head.w.value, &[dlogit], &mut dz);
        for l in (0..depth).rev() {
            let dpre: Vec<f64> = dz
                .iter()
                .zip(&trace.pre[l])
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect();
            let layer = &mut self.layers[l];
            if layer.w.trainable {
                outer_accum(&mut layer.w.grad, &dpre, &trace.z[l], 1.0);
                for (g, d) in layer.b.grad.data_mut().iter_mut().zip(&dpre) {
                    *g += d;
                }
            }
            let mut below = vec![0.0; trace.z[l].len()];
            matvec_t_accum(&layer.w.value, &dpre, &mut below);
            d_inject[l + 1] = dpre;
            dz = below;
        }
        self.backward_embedding(record, trace, &dz);
        d_inject[0] = dz;
        d_inject
    }

    fn backward_embedding(&mut self, record: &Record, trace: &TowerTrace, de: &[f64]) {
        let mut offset = 0;
        for t in &mut self.tables {
            let d = t.dim();
            if t.table.trainable {
                t.accumulate(record.id(t.source), &de[offset..offset + d], 1.0);
            }
            offset += d;
        }
        let ta_dim = self.attention.output_dim();
        let d_ta = &de[offset..offset + ta_dim];
        let Some(att) = &trace.attention else { return };
        if att.valid.is_empty() {
            return;
        }
        let max = self.schema.sequence_max_len;
        let seq = &record.seq[record.seq.len().saturating_sub(max)..];
        let item_idx = self.item_table;
        let (d_target, d_behaviors) = {
            let items = &self.tables[item_idx].table.value;
            let behaviors: Vec<&[f64]> = seq.iter().map(|&j| items.row(j as usize)).collect();
            let target = items.row(record.item_id as usize);
            // Frozen projections still receive gradient; apply_step never reads it.
            self.attention.backward_into(target, &behaviors, att, d_ta, 1.0)
        };
        let table = &mut self.tables[item_idx];
        if table.table.trainable {
            table.accumulate(record.item_id, &d_target, 1.0);
            for (&j, g) in seq.iter().zip(&d_behaviors) {
                table.accumulate(j, g, 1.0);
            }
        }
    }

    /// One AdaGrad update on every trainable parameter; embedding tables only update
    /// the rows referenced since the previous step.
    pub fn apply_step(&mut self, lr: f64) -> Result<(), ModelError> {
        for t in &mut self.tables {
            if t.table.trainable {
                t.step(lr, ADAGRAD_EPS)?;
            } else {
                t.clear_touched();
            }
        }
        for p in self.attention.params_mut() {
            if p.trainable {
                p.adagrad_step(lr, ADAGRAD_EPS)?;
            }
        }
        for d in self.layers.iter_mut().chain(std::iter::once(&mut self.head)) {
            for p in [&mut d.w, &mut d.b] {
                if p.trainable {
                    p.adagrad_step(lr, ADAGRAD_EPS)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tables {
            t.clear_touched();
        }
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Forward, BCE and backward for one record with gradient weight `scale`.
    pub fn accumulate(&mut self, record: &Record, scale: f64) -> Result<f64, ModelError> {
        let trace = self.forward_trace(record, None, None)?;
        let (loss, d) = bce_with_logits(trace.logit, record.label);
        self.backward(record, &trace, d * scale);
        Ok(loss)
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.round_to_f32();
        }
    }

    /// Appends cached user/item embeddings as frozen auxiliary inputs. The first layer
    /// gains zero-initialized columns, so outputs are unchanged until training moves them.
    pub fn attach_aux(&mut self, user: Tensor2D, item: Tensor2D) -> Result<(), ModelError> {
        if self.aux.is_some() {
            return Err(ModelError::Architecture("auxiliary embeddings already attached".into()));
        }
        if user.rows() != self.schema.user_vocab() || item.rows() != self.item_table().vocab_size() {
            return Err(ModelError::Architecture("auxiliary tables do not match the user/item vocabularies".into()));
        }
        let extra = user.cols() + item.cols();
        let first = &mut self.layers[0];
        let widen = |t: &Tensor2D| -> Tensor2D {
            let (r, c) = t.shape();
            let mut out = Tensor2D::zeros(r, c + extra);
            for i in 0..r {
                out.row_mut(i)[..c].copy_from_slice(t.row(i));
            }
            out
        };
        first.w.value = widen(&first.w.value);
        first.w.accum = widen(&first.w.accum);
        first.w.grad = Tensor2D::zeros(first.w.value.rows(), first.w.value.cols());
        let mut aux = AuxEmbeddings {
            user: Parameter::new(format!("aux.{USER_FIELD}"), user),
            item: Parameter::new(format!("aux.{ITEM_FIELD}"), item),
        };
        aux.user.trainable = false;
        aux.item.trainable = false;
        self.aux = Some(aux);
        Ok(())
    }

    /// Replaces the cached auxiliary embedding values.
    pub fn refresh_aux(&mut self, user: &Tensor2D, item: &Tensor2D) -> Result<(), ModelError> {
        let aux = self
            .aux
            .as_mut()
            .ok_or_else(|| ModelError::Architecture("no auxiliary embeddings attached".into()))?;
        if aux.user.value.shape() != user.shape() || aux.item.value.shape() != item.shape() {
            return Err(ModelError::Architecture("auxiliary table shape changed".into()));
        }
        aux.user.value = user.clone();
        aux.item.value = item.clone();
        Ok(())
    }

    /// Overwrites embedding values of every field shared with `other` (same vocabulary and
    /// dimension). Accumulators are kept. Returns the names of the copied fields.
    pub fn overwrite_shared_embeddings(&mut self, other: &SingleDomainModel) -> Vec<String> {
        let mut copied = Vec::new();
        for t in &mut self.tables {
            if let Some(o) = other.table(&t.field) {
                if o.table.value.shape() == t.table.value.shape() {
                    t.table.value = o.table.value.clone();
                    copied.push(t.field.clone());
                }
            }
        }
        copied
    }

    /// A model over `schema` that inherits everything it can from `source`: shared
    /// embedding tables, attention, hidden layers and head. Fields absent from `source`
    /// get fresh embeddings and fresh first-layer columns drawn from `rng`.
    pub fn transplant(
        source: &SingleDomainModel,
        schema: FeatureSchema,
        layout: RecordLayout,
        rng: &mut RngStream,
    ) -> Result<SingleDomainModel, ModelError> {
        if source.aux.is_some() {
            return Err(ModelError::Architecture("cannot transplant a model with auxiliary inputs".into()));
        }
        let mut fresh = SingleDomainModel::new(schema, layout, source.config.clone(), rng)?;
        let mut src_offsets = std::collections::BTreeMap::new();
        let mut off = 0;
        for t in &source.tables {
            src_offsets.insert(t.field.clone(), (off, t.dim()));
            off += t.dim();
        }
        let src_ta = off;
        let (src_w0, dst_w0) = (&source.layers[0].w, &mut fresh.layers[0].w);
        let rows = dst_w0.value.rows();
        let mut dst_off = 0;
        for t in &mut fresh.tables {
            let d = t.dim();
            if let Some(&(so, sd)) = src_offsets.get(&t.field) {
                let src_table = source.table(&t.field).expect("offset implies table");
                if sd == d && src_table.vocab_size() == t.vocab_size() {
                    t.table.value = src_table.table.value.clone();
                    t.table.accum = src_table.table.accum.clone();
                    for r in 0..rows {
                        for c in 0..d {
                            dst_w0.value.set(r, dst_off + c, src_w0.value.get(r, so + c));
                            dst_w0.accum.set(r, dst_off + c, src_w0.accum.get(r, so + c));
                        }
                    }
                }
            }
            dst_off += d;
        }
        let ta = source.attention.output_dim();
        for r in 0..rows {
            for c in 0..ta {
                dst_w0.value.set(r, dst_off + c, src_w0.value.get(r, src_ta + c));
                dst_w0.accum.set(r, dst_off + c, src_w0.accum.get(r, src_ta + c));
            }
        }
        fresh.layers[0].b = source.layers[0].b.clone();
        for l in 1..fresh.layers.len() {
            fresh.layers[l] = source.layers[l].clone();
        }
        fresh.head = source.head.clone();
        fresh.attention = source.attention.clone();
        fresh.set_trainable(true);
        Ok(fresh)
    }

    /// Whether `other` has the same schema, layout and layer shapes.
    pub fn same_architecture(&self, other: &SingleDomainModel) -> bool {
        self.schema == other.schema
            && self.layout == other.layout
            && self.config == other.config
            && self.aux.as_ref().map(|a| (a.user.shape(), a.item.shape()))
                == other.aux.as_ref().map(|a| (a.user.shape(), a.item.shape()))
            && self.params().iter().zip(other.params()).all(|(a, b)| a.shape() == b.shape())
    }
}

