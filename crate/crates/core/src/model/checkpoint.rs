//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `CTN1` magic, `u16` version, `u32` metadata length + UTF-8 `key=value` lines, then for
//! each tensor: `u32` name length, name bytes, `u32` rows, `u32` cols, `rows*cols` f32
//! values, `rows*cols` f32 accumulator entries. The tensor count is in the metadata and
//! nothing may follow the last tensor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::adapter::{AdapterKind, AdapterStack};
use super::ctnet::CTNetModel;
use super::single::{AttentionConfig, ModelConfig, SingleDomainModel, TowerConfig};
use super::{AnyModel, CtrModel, ModelError};
use crate::features::{FeatureSchema, FieldSpec, RecordLayout};
use crate::numkern::{Parameter, RngStream, Tensor2D};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTN1";
pub const CHECKPOINT_VERSION: u16 = 1;

fn named_tensors(model: &AnyModel) -> Vec<(String, &Parameter)> {
    model.param_labels().into_iter().zip(model.params()).collect()
}

fn named_tensors_mut(model: &mut AnyModel) -> Vec<(String, &mut Parameter)> {
    model.param_labels().into_iter().zip(model.params_mut()).collect()
}

fn describe_model(meta: &mut String, prefix: &str, m: &SingleDomainModel) {
    let fields: Vec<String> = m
        .schema
        .fields
        .iter()
        .map(|f| format!("{}:{}:{}", f.name, f.vocab_size, f.embedding_dim))
        .collect();
    let widths: Vec<String> = m.config.tower.layer_widths.iter().map(usize::to_string).collect();
    let _ = writeln!(meta, "{prefix}.fields={}", fields.join(","));
    let _ = writeln!(meta, "{prefix}.sequence_max_len={}", m.schema.sequence_max_len);
    let _ = writeln!(meta, "{prefix}.num_periods={}", m.schema.num_periods);
    let _ = writeln!(meta, "{prefix}.widths={}", widths.join(","));
    let _ = writeln!(meta, "{prefix}.heads={}", m.config.attention.heads);
    let _ = writeln!(meta, "{prefix}.head_dim={}", m.config.attention.head_dim);
    match &m.aux {
        Some(a) => {
            let _ = writeln!(meta, "{prefix}.aux={}:{}", a.user.value.cols(), a.item.value.cols());
        }
        None => {
            let _ = writeln!(meta, "{prefix}.aux=0");
        }
    }
}

fn metadata(model: &AnyModel, tensors: &[(String, &Parameter)]) -> String {
    let mut meta = String::new();
    let layout = match model {
        AnyModel::Single(m) => &m.layout,
        AnyModel::CTNet(m) => &m.target.layout,
    };
    match model {
        AnyModel::Single(m) => {
            meta.push_str("kind=single\n");
            let _ = writeln!(meta, "layout={}", layout.extra.join(","));
            describe_model(&mut meta, "model", m);
        }
        AnyModel::CTNet(m) => {
            meta.push_str("kind=ctnet\n");
            let _ = writeln!(meta, "layout={}", layout.extra.join(","));
            let _ = writeln!(meta, "adapter_kind={}", m.adapters.kind);
            let _ = writeln!(meta, "share_sequence={}", u8::from(m.share_sequence));
            describe_model(&mut meta, "source", &m.source);
            describe_model(&mut meta, "target", &m.target);
        }
    }
    let _ = writeln!(meta, "tensors={}", tensors.len());
    for (name, p) in tensors {
        let _ = writeln!(meta, "trainable.{name}={}", u8::from(p.trainable));
    }
    meta
}

/// Serializes `model`. Values are stored as f32.
pub fn write_checkpoint(model: &AnyModel) -> Vec<u8> {
    let tensors = named_tensors(model);
    let meta = metadata(model, &tensors);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for (name, p) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let (r, c) = p.shape();
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for t in [&p.value, &p.accum] {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn save_checkpoint(model: &AnyModel, path: &Path) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel, ModelError> {
    read_checkpoint(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> ModelError {
        ModelError::Checkpoint {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what} ({n} bytes needed, {} left)",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.fail("tensor too large"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }
}

type Meta = BTreeMap<String, String>;

fn meta_get<'m>(meta: &'m Meta, key: &str) -> Result<&'m str, ModelError> {
    meta.get(key).map(String::as_str).ok_or_else(|| ModelError::Checkpoint {
        offset: 6,
        message: format!("metadata lacks `{key}`"),
    })
}

fn meta_usize(meta: &Meta, key: &str) -> Result<usize, ModelError> {
    meta_get(meta, key)?.parse().map_err(|_| ModelError::Checkpoint {
        offset: 6,
        message: format!("metadata `{key}` is not a count"),
    })
}

fn bad_meta(message: String) -> ModelError {
    ModelError::Checkpoint { offset: 6, message }
}

fn parse_counts(s: &str, key: &str) -> Result<Vec<usize>, ModelError> {
    s.split(',')
        .map(|w| w.parse().map_err(|_| bad_meta(format!("metadata `{key}` has bad entry `{w}`"))))
        .collect()
}

fn skeleton(meta: &Meta, prefix: &str, layout: &RecordLayout) -> Result<SingleDomainModel, ModelError> {
    let fields = meta_get(meta, &format!("{prefix}.fields"))?
        .split(',')
        .map(|f| {
            let parts: Vec<&str> = f.split(':').collect();
            match parts.as_slice() {
                [name, vocab, dim] => Ok(FieldSpec::new(
                    *name,
                    vocab.parse().map_err(|_| bad_meta(format!("bad vocab in `{f}`")))?,
                    dim.parse().map_err(|_| bad_meta(format!("bad dim in `{f}`")))?,
                )),
                _ => Err(bad_meta(format!("bad field spec `{f}`"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let schema = FeatureSchema::new(
        fields,
        meta_usize(meta, &format!("{prefix}.sequence_max_len"))?,
        meta_usize(meta, &format!("{prefix}.num_periods"))?,
    )?;
    let widths_key = format!("{prefix}.widths");
    let config = ModelConfig {
        tower: TowerConfig {
            layer_widths: parse_counts(meta_get(meta, &widths_key)?, &widths_key)?,
        },
        attention: AttentionConfig {
            heads: meta_usize(meta, &format!("{prefix}.heads"))?,
            head_dim: meta_usize(meta, &format!("{prefix}.head_dim"))?,
        },
    };
    let mut model = SingleDomainModel::new(schema, layout.clone(), config, &mut RngStream::new(0))?;
    let aux = meta_get(meta, &format!("{prefix}.aux"))?;
    if aux != "0" {
        let (u, i) = aux
            .split_once(':')
            .ok_or_else(|| bad_meta(format!("bad aux spec `{aux}`")))?;
        let u: usize = u.parse().map_err(|_| bad_meta(format!("bad aux spec `{aux}`")))?;
        let i: usize = i.parse().map_err(|_| bad_meta(format!("bad aux spec `{aux}`")))?;
        let users = model.schema.user_vocab();
        let items = model.item_table().vocab_size();
        model.attach_aux(Tensor2D::zeros(users, u), Tensor2D::zeros(items, i))?;
    }
    Ok(model)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<AnyModel, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint {
            offset: 0,
            message: "bad magic; not a checkpoint".into(),
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint {
            offset: 4,
            message: format!("unsupported format version {version} (expected {CHECKPOINT_VERSION})"),
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_start = r.pos;
    let text = std::str::from_utf8(r.take(meta_len, "metadata")?).map_err(|_| ModelError::Checkpoint {
        offset: meta_start,
        message: "metadata is not UTF-8".into(),
    })?;
    let mut meta = Meta::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| bad_meta(format!("bad metadata line `{line}`")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let layout_text = meta_get(&meta, "layout")?;
    let layout = RecordLayout {
        extra: if layout_text.is_empty() {
            vec![]
        } else {
            layout_text.split(',').map(str::to_string).collect()
        },
    };
    let mut model = match meta_get(&meta, "kind")? {
        "single" => AnyModel::Single(skeleton(&meta, "model", &layout)?),
        "ctnet" => {
            let source = skeleton(&meta, "source", &layout)?;
            let target = skeleton(&meta, "target", &layout)?;
            let kind: AdapterKind = meta_get(&meta, "adapter_kind")?.parse().map_err(bad_meta)?;
            let share = meta_get(&meta, "share_sequence")? == "1";
            let mut dims = vec![(target.input_dim(), source.input_dim())];
            dims.extend(target.widths().into_iter().zip(source.widths()));
            let adapters = AdapterStack::warm(kind, &dims, &mut RngStream::new(0));
            AnyModel::CTNet(CTNetModel::new(source, target, adapters, share)?)
        }
        other => return Err(bad_meta(format!("unknown model kind `{other}`"))),
    };

    let count = meta_usize(&meta, "tensors")?;
    let mut slots = named_tensors_mut(&mut model);
    if slots.len() != count {
        return Err(bad_meta(format!(
            "metadata declares {count} tensors, architecture has {}",
            slots.len()
        )));
    }
    let mut filled = vec![false; slots.len()];
    for _ in 0..count {
        let name_at = r.pos;
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.fail("tensor name is not UTF-8"))?
            .to_string();
        let idx = slots.iter().position(|(n, _)| *n == name).ok_or_else(|| ModelError::Checkpoint {
            offset: name_at,
            message: format!("unexpected tensor `{name}`"),
        })?;
        if filled[idx] {
            return Err(ModelError::Checkpoint {
                offset: name_at,
                message: format!("duplicate tensor `{name}`"),
            });
        }
        let shape_at = r.pos;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let slot = &mut slots[idx].1;
        if (rows, cols) != slot.shape() {
            return Err(ModelError::Checkpoint {
                offset: shape_at,
                message: format!("tensor `{name}` is {rows}x{cols}, architecture expects {:?}", slot.shape()),
            });
        }
        let value = r.f32s(rows * cols, &format!("values of `{name}`"))?;
        let accum = r.f32s(rows * cols, &format!("accumulator of `{name}`"))?;
        slot.value = Tensor2D::from_vec(rows, cols, value)?;
        slot.accum = Tensor2D::from_vec(rows, cols, accum)?;
        slot.zero_grad();
        slot.trainable = meta_get(&meta, &format!("trainable.{name}"))? == "1";
        filled[idx] = true;
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
    }
    Ok(model)
}
