//! Finite-difference check of every trainable parameter group at toy dimensions.

use super::adapter::AdapterKind;
use super::ctnet::warm_start;
use super::objective::BatchObjective;
use super::single::{AttentionConfig, ModelConfig, SingleDomainModel, TowerConfig};
use super::{AnyModel, ModelError};
use crate::features::{Domain, FeatureSchema, FieldSpec, Record, RecordLayout};
use crate::numkern::{grad_check, GradCheckReport, RngStream};

/// One checked configuration.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn toy_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FieldSpec::new("user_id", 5, 3),
            FieldSpec::new("item_id", 7, 3),
            FieldSpec::new("item_category", 3, 2),
            FieldSpec::new("user_segment", 3, 2),
        ],
        5,
        2,
    )
    .expect("toy schema is valid")
}

fn toy_records(n: usize, rng: &mut RngStream) -> Vec<Record> {
    (0..n)
        .map(|_| {
            let len = rng.below(6);
            Record {
                domain: Domain::Target,
                period: 0,
                user_id: rng.below(5) as u32,
                item_id: rng.below(7) as u32,
                cats: vec![rng.below(3) as u32, rng.below(3) as u32],
                seq: (0..len).map(|_| rng.below(7) as u32).collect(),
                label: rng.below(2) as u8,
            }
        })
        .collect()
}

/// Embeddings and biases at unit scale so every ReLU sees both signs.
fn toy_tower(schema: FeatureSchema, layout: &RecordLayout, rng: &mut RngStream) -> Result<SingleDomainModel, ModelError> {
    let config = ModelConfig {
        tower: TowerConfig {
            layer_widths: vec![4, 3],
        },
        attention: AttentionConfig { heads: 2, head_dim: 2 },
    };
    let mut m = SingleDomainModel::new(schema, layout.clone(), config, rng)?;
    for t in &mut m.tables {
        let (r, c) = t.table.shape();
        t.table.value = rng.uniform_tensor(r, c, -1.0, 1.0);
    }
    for d in &mut m.layers {
        let (r, c) = d.b.shape();
        d.b.value = rng.uniform_tensor(r, c, -0.3, 0.3);
    }
    Ok(m)
}

/// Checks the single-domain model, CTNet with GLU and linear adapters (with and without
/// sequence sharing) and a model with cached auxiliary inputs.
pub fn grad_check_suite(seed: u64, tolerance: f64) -> Result<Vec<SuiteCase>, ModelError> {
    let root = RngStream::new(seed);
    let schema = toy_schema();
    let layout = RecordLayout::from_schema(&schema);
    let source_schema = schema.without(&["user_segment".to_string()])?;
    let batch = toy_records(6, &mut root.split_named("records"));
    let source = toy_tower(source_schema, &layout, &mut root.split_named("source"))?;
    let target = toy_tower(schema, &layout, &mut root.split_named("target"))?;
    let mut cases = Vec::new();
    let mut run = |name: String, model: AnyModel| -> Result<(), ModelError> {
        let mut obj = BatchObjective::new(model, &batch);
        cases.push(SuiteCase {
            name,
            report: grad_check(&mut obj, tolerance)?,
        });
        Ok(())
    };

    run("single".into(), AnyModel::Single(target.clone()))?;
    for kind in [AdapterKind::Glu, AdapterKind::Linear] {
        for share in [false, true] {
            let mut rng = root.split_named(&format!("adapters/{kind}/{share}"));
            let mut c = warm_start(&target, &source, kind, &mut rng)?;
            // Away from the zero warm start so every path carries gradient.
            for p in c.adapters.params_mut() {
                let (r, k) = p.shape();
                p.value = rng.normal_tensor(r, k, 0.5);
            }
            c.set_share_sequence(share)?;
            let label = if share { "shared sequence" } else { "own sequence" };
            run(format!("ctnet {kind}, {label}"), AnyModel::CTNet(c))?;
        }
    }
    let mut aux = target.clone();
    let user = source.table("user_id").expect("toy schema has user ids").table.value.clone();
    aux.attach_aux(user, source.item_table().table.value.clone())?;
    let mut rng = root.split_named("aux");
    let cols = aux.input_dim();
    aux.layers[0].w.value = rng.normal_tensor(aux.layers[0].outputs(), cols, 0.5);
    run("single with cached source embeddings".into(), AnyModel::Single(aux))?;
    Ok(cases)
}
