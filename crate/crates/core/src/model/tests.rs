use super::*;
use crate::features::{Domain, FeatureSchema, FieldSpec, RecordLayout};
use crate::numkern::{grad_check, GroupStatus, RngStream, Tensor2D};

fn target_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FieldSpec::new("user_id", 5, 2),
            FieldSpec::new("item_id", 6, 2),
            FieldSpec::new("item_category", 3, 2),
            FieldSpec::new("user_segment", 3, 1),
        ],
        4,
        3,
    )
    .unwrap()
}

fn source_schema() -> FeatureSchema {
    target_schema().without(&["user_segment".to_string()]).unwrap()
}

fn layout() -> RecordLayout {
    RecordLayout::from_schema(&target_schema())
}

fn config(widths: &[usize], heads: usize, head_dim: usize) -> ModelConfig {
    ModelConfig {
        tower: TowerConfig {
            layer_widths: widths.to_vec(),
        },
        attention: AttentionConfig { heads, head_dim },
    }
}

fn record(rng: &mut RngStream) -> Record {
    let len = rng.below(7);
    Record {
        domain: Domain::Target,
        period: 0,
        user_id: rng.below(5) as u32,
        item_id: rng.below(6) as u32,
        cats: vec![rng.below(3) as u32, rng.below(3) as u32],
        seq: (0..len).map(|_| rng.below(6) as u32).collect(),
        label: rng.below(2) as u8,
    }
}

fn records(n: usize, seed: u64) -> Vec<Record> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|_| record(&mut rng)).collect()
}

/// Rescales embeddings and biases so the toy towers have non-trivial activations.
fn enliven(m: &mut SingleDomainModel, seed: u64) {
    let mut rng = RngStream::new(seed);
    for t in &mut m.tables {
        let (r, c) = t.table.shape();
        t.table.value = rng.uniform_tensor(r, c, -1.0, 1.0);
    }
    for d in &mut m.layers {
        let (r, c) = d.b.shape();
        d.b.value = rng.uniform_tensor(r, c, -0.3, 0.3);
    }
}

fn towers(widths: &[usize], seed: u64) -> (SingleDomainModel, SingleDomainModel) {
    let rng = RngStream::new(seed);
    let mut source = SingleDomainModel::new(source_schema(), layout(), config(widths, 2, 2), &mut rng.split(1)).unwrap();
    let mut target = SingleDomainModel::new(target_schema(), layout(), config(widths, 2, 2), &mut rng.split(2)).unwrap();
    enliven(&mut source, seed + 10);
    enliven(&mut target, seed + 20);
    (source, target)
}

fn randomize_adapters(c: &mut CTNetModel, seed: u64) {
    let mut rng = RngStream::new(seed);
    for p in c.adapters.params_mut() {
        let (r, k) = p.shape();
        p.value = rng.normal_tensor(r, k, 0.5);
    }
}

fn bits(m: &SingleDomainModel) -> Vec<u64> {
    m.params()
        .iter()
        .flat_map(|p| p.value.data().iter().chain(p.accum.data()).map(|v| v.to_bits()))
        .collect()
}

// ---- scalar oracles ----

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn mat_vec(w: &Tensor2D, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum()).collect()
}

fn oracle_attention(m: &SingleDomainModel, r: &Record) -> Vec<f64> {
    let heads = m.config.attention.heads;
    let dh = m.config.attention.head_dim;
    let items = &m.item_table().table.value;
    let seq = &r.seq[r.seq.len().saturating_sub(m.schema.sequence_max_len)..];
    let mut out = vec![0.0; heads * dh];
    if seq.is_empty() {
        return out;
    }
    let q = mat_vec(&m.attention.wq.value, items.row(r.item_id as usize));
    let ks: Vec<Vec<f64>> = seq.iter().map(|&j| mat_vec(&m.attention.wk.value, items.row(j as usize))).collect();
    let vs: Vec<Vec<f64>> = seq.iter().map(|&j| mat_vec(&m.attention.wv.value, items.row(j as usize))).collect();
    for h in 0..heads {
        let span = h * dh..(h + 1) * dh;
        let scores: Vec<f64> = ks.iter().map(|k| dot(&q[span.clone()], &k[span.clone()]) / (dh as f64).sqrt()).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for (s, v) in scores.iter().zip(&vs) {
            let a = (s - top).exp() / z;
            for i in span.clone() {
                out[i] += a * v[i];
            }
        }
    }
    out
}

fn oracle_input(m: &SingleDomainModel, r: &Record, shared_ta: Option<Vec<f64>>) -> Vec<f64> {
    let mut e = Vec::new();
    for t in &m.tables {
        let id = r.id(t.source) as usize;
        e.extend_from_slice(t.table.value.row(id));
    }
    e.extend(shared_ta.unwrap_or_else(|| oracle_attention(m, r)));
    e
}

/// Returns (logit, [e, z_1..z_L]) for a tower with optional additive injections.
fn oracle_tower(m: &SingleDomainModel, e: Vec<f64>, inject: Option<&[Vec<f64>]>) -> (f64, Vec<Vec<f64>>) {
    let mut z = e;
    if let Some(g) = inject {
        for i in 0..z.len() {
            z[i] += g[0][i];
        }
    }
    let mut zs = vec![z.clone()];
    for (l, layer) in m.layers.iter().enumerate() {
        let mut next = mat_vec(&layer.w.value, &z);
        for i in 0..next.len() {
            next[i] += layer.b.value.get(i, 0);
            if let Some(g) = inject {
                next[i] += g[l + 1][i];
            }
            next[i] = if next[i] > 0.0 { next[i] } else { 0.0 };
        }
        z = next;
        zs.push(z.clone());
    }
    let logit = mat_vec(&m.head.w.value, &z)[0] + m.head.b.value.get(0, 0);
    (logit, zs)
}

fn oracle_adapter(a: &Adapter, z: &[f64]) -> Vec<f64> {
    match a {
        Adapter::Glu { u1, u2 } => {
            let lin = mat_vec(&u1.value, z);
            let gate = mat_vec(&u2.value, z);
            lin.iter().zip(&gate).map(|(l, g)| l / (1.0 + (-g).exp())).collect()
        }
        Adapter::Linear { u } => mat_vec(&u.value, z),
    }
}

fn oracle_ctnet(c: &CTNetModel, r: &Record) -> f64 {
    let (_, zs) = oracle_tower(&c.source, oracle_input(&c.source, r, None), None);
    let inject: Vec<Vec<f64>> = c.adapters.layers.iter().zip(&zs).map(|(a, z)| oracle_adapter(a, z)).collect();
    let shared = c.share_sequence.then(|| oracle_attention(&c.source, r));
    oracle_tower(&c.target, oracle_input(&c.target, r, shared), Some(&inject)).0
}

// ---- forward_single ----

#[test]
fn zero_weights_give_zero_logit() {
    let (_, mut m) = towers(&[3, 2], 1);
    for p in m.params_mut() {
        p.value.fill(0.0);
    }
    for r in records(20, 2) {
        assert_eq!(m.forward(&r).unwrap(), 0.0);
    }
}

#[test]
fn forward_is_deterministic() {
    let (_, m) = towers(&[3, 2], 3);
    for r in records(20, 4) {
        assert_eq!(m.forward(&r).unwrap().to_bits(), m.forward(&r).unwrap().to_bits());
    }
}

#[test]
fn single_tower_matches_scalar_oracle() {
    let (_, m) = towers(&[3, 2], 5);
    for r in records(50, 6) {
        let (want, _) = oracle_tower(&m, oracle_input(&m, &r, None), None);
        let got = m.forward(&r).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn sequence_longer_than_max_keeps_most_recent() {
    let (_, m) = towers(&[3, 2], 7);
    let mut r = records(1, 8).pop().unwrap();
    r.seq = vec![5, 4, 1, 2, 3, 0];
    let mut short = r.clone();
    short.seq = vec![1, 2, 3, 0];
    assert_eq!(m.forward(&r).unwrap().to_bits(), m.forward(&short).unwrap().to_bits());
}

#[test]
fn out_of_range_sequence_item_is_rejected() {
    let (_, m) = towers(&[3, 2], 7);
    let mut r = records(1, 8).pop().unwrap();
    r.seq = vec![99];
    assert!(matches!(m.forward(&r), Err(ModelError::Record(_))));
}

#[test]
fn empty_tower_config_is_rejected() {
    let r = SingleDomainModel::new(target_schema(), layout(), config(&[], 1, 2), &mut RngStream::new(0));
    assert!(matches!(r, Err(ModelError::Architecture(_))));
}

// ---- forward_ctnet ----

#[test]
fn ctnet_matches_scalar_oracle() {
    for kind in [AdapterKind::Glu, AdapterKind::Linear] {
        let (source, target) = towers(&[3, 2], 9);
        let mut c = warm_start(&target, &source, kind, &mut RngStream::new(1)).unwrap();
        randomize_adapters(&mut c, 11);
        for share in [false, true] {
            c.set_share_sequence(share).unwrap();
            for r in records(40, 12) {
                let want = oracle_ctnet(&c, &r);
                let got = c.forward(&r).unwrap();
                assert!((got - want).abs() <= 1e-12, "{kind} share={share}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn warm_start_is_bitwise_identity() {
    for kind in [AdapterKind::Glu, AdapterKind::Linear] {
        let (source, target) = towers(&[3, 2], 13);
        let c = warm_start(&target, &source, kind, &mut RngStream::new(2)).unwrap();
        for r in records(1000, 14) {
            assert_eq!(c.forward(&r).unwrap().to_bits(), target.forward(&r).unwrap().to_bits());
        }
    }
}

#[test]
fn warm_start_flags_and_init() {
    let (source, target) = towers(&[3, 2], 15);
    let c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(3)).unwrap();
    assert!(c.source.params().iter().all(|p| !p.trainable));
    assert!(c.target.params().iter().all(|p| p.trainable));
    assert!(c.adapters.params().iter().all(|p| p.trainable));
    assert_eq!(c.adapters.layers.len(), 3);
    assert_eq!(c.adapters.max_linear_magnitude(), 0.0);
    let gate_sd: Vec<f64> = c
        .adapters
        .layers
        .iter()
        .filter_map(|a| match a {
            Adapter::Glu { u2, .. } => Some(u2.value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))),
            Adapter::Linear { .. } => None,
        })
        .collect();
    assert!(gate_sd.iter().all(|&m| m > 0.0 && m < 1e-2));
    assert_eq!(c.adapters.layers[0].shape(), (target.input_dim(), source.input_dim()));
    assert_eq!(c.adapters.layers[1].shape(), (3, 3));
    // Accumulators come along with the target weights.
    assert_eq!(bits(&c.target), bits(&target));
}

#[test]
fn depth_mismatch_is_rejected_at_construction() {
    let (source, _) = towers(&[3, 2], 17);
    let (_, target) = towers(&[3], 18);
    assert!(matches!(
        warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(0)),
        Err(ModelError::Architecture(_))
    ));
}

#[test]
fn schema_superset_is_required() {
    let (source, target) = towers(&[3, 2], 19);
    // Swapped roles: the "source" has a field the target lacks.
    let r = CTNetModel::new(
        target.clone(),
        source.clone(),
        AdapterStack::warm(AdapterKind::Glu, &[(7, 9), (3, 3), (2, 2)], &mut RngStream::new(0)),
        false,
    );
    assert!(matches!(r, Err(ModelError::Architecture(_))));
}

#[test]
fn share_sequence_with_equal_attention_is_invisible() {
    let (mut source, target) = towers(&[3, 2], 21);
    source.attention = target.attention.clone();
    let item = target.item_table().table.clone();
    source.table_mut("item_id").unwrap().table.value = item.value;
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(4)).unwrap();
    randomize_adapters(&mut c, 22);
    for r in records(100, 23) {
        c.set_share_sequence(false).unwrap();
        let off = c.forward(&r).unwrap();
        c.set_share_sequence(true).unwrap();
        assert_eq!(off.to_bits(), c.forward(&r).unwrap().to_bits());
    }
}

#[test]
fn linear_and_glu_agree_at_zero() {
    let (source, target) = towers(&[3, 2], 25);
    let glu = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(5)).unwrap();
    let lin = warm_start(&target, &source, AdapterKind::Linear, &mut RngStream::new(5)).unwrap();
    for r in records(200, 26) {
        assert_eq!(glu.forward(&r).unwrap().to_bits(), lin.forward(&r).unwrap().to_bits());
    }
}

#[test]
fn concurrent_tower_evaluation_matches_sequential() {
    let (source, target) = towers(&[3, 2], 27);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(6)).unwrap();
    randomize_adapters(&mut c, 28);
    let recs = records(64, 29);
    let sequential: Vec<u64> = recs.iter().map(|r| c.forward(r).unwrap().to_bits()).collect();
    let parallel: Vec<u64> = std::thread::scope(|s| {
        let handles: Vec<_> = recs
            .chunks(16)
            .map(|chunk| s.spawn(|| chunk.iter().map(|r| c.forward(r).unwrap().to_bits()).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}

// ---- train_step ----

#[test]
fn empty_batch_is_an_error() {
    let (_, mut m) = towers(&[3, 2], 31);
    assert!(matches!(train_step(&mut m, &[], 0.01), Err(ModelError::EmptyBatch)));
}

#[test]
fn ctnet_training_leaves_source_bitwise_intact() {
    let (source, target) = towers(&[3, 2], 33);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(7)).unwrap();
    let before = bits(&c.source);
    let batch = records(32, 34);
    for _ in 0..20 {
        train_step(&mut c, &batch, 0.05).unwrap();
    }
    assert_eq!(bits(&c.source), before);
    assert_ne!(bits(&c.target), bits(&target));
}

#[test]
fn returned_loss_is_pre_update_mean() {
    let (_, mut m) = towers(&[3, 2], 35);
    let batch = records(16, 36);
    let before = mean_loss(&m, &batch).unwrap();
    let reported = train_step(&mut m, &batch, 0.01).unwrap();
    assert!((before - reported).abs() < 1e-12);
}

#[test]
fn loss_decreases_on_separable_data() {
    let (_, mut m) = towers(&[3, 2], 37);
    let mut batch = records(64, 38);
    for r in &mut batch {
        r.label = u8::from(r.user_id % 2 == 0);
    }
    let start = mean_loss(&m, &batch).unwrap();
    for _ in 0..50 {
        train_step(&mut m, &batch, 0.05).unwrap();
    }
    let end = mean_loss(&m, &batch).unwrap();
    assert!(end < 0.8 * start, "{start} -> {end}");
}

#[test]
fn untouched_embedding_rows_stay_bitwise() {
    let (_, mut m) = towers(&[3, 2], 39);
    for d in &mut m.layers {
        d.b.value.fill(1.0);
    }
    let mut r = records(1, 40).pop().unwrap();
    r.user_id = 1;
    r.item_id = 2;
    r.seq = vec![3];
    let users_before = m.table("user_id").unwrap().table.value.clone();
    let items_before = m.table("item_id").unwrap().table.value.clone();
    train_step(&mut m, &[r], 0.1).unwrap();
    let users = &m.table("user_id").unwrap().table.value;
    let items = &m.table("item_id").unwrap().table.value;
    for u in [0, 2, 3, 4] {
        assert_eq!(users.row(u), users_before.row(u));
    }
    assert_ne!(users.row(1), users_before.row(1));
    for i in [0, 1, 4, 5] {
        assert_eq!(items.row(i), items_before.row(i));
    }
    assert_ne!(items.row(2), items_before.row(2));
    assert_ne!(items.row(3), items_before.row(3));
}

#[test]
fn gated_path_learns_from_zero() {
    let (source, target) = towers(&[3, 2], 41);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(8)).unwrap();
    let batch = records(32, 42);
    for _ in 0..100 {
        train_step(&mut c, &batch, 0.01).unwrap();
    }
    assert!(c.adapters.max_linear_magnitude() > 0.0);
}

fn check(model: AnyModel, batch: &[Record]) -> crate::numkern::GradCheckReport {
    let mut obj = BatchObjective::new(model, batch);
    grad_check(&mut obj, 1e-4).unwrap()
}

#[test]
fn single_model_grad_check() {
    let (_, m) = towers(&[3, 2], 43);
    let report = check(AnyModel::Single(m), &records(6, 44));
    assert!(report.passed(), "{report}");
}

#[test]
fn full_ctnet_grad_check() {
    for kind in [AdapterKind::Glu, AdapterKind::Linear] {
        for share in [false, true] {
            let (source, target) = towers(&[3, 2], 45);
            let mut c = warm_start(&target, &source, kind, &mut RngStream::new(9)).unwrap();
            randomize_adapters(&mut c, 46);
            c.set_share_sequence(share).unwrap();
            let report = check(AnyModel::CTNet(c), &records(6, 47));
            assert!(report.passed(), "{kind} share={share}\n{report}");
            for g in ["source/emb.user_id", "source/mlp.0.w", "source/attn.wq"] {
                assert!(matches!(report.group(g).unwrap().status, GroupStatus::Skipped));
            }
            let mut checked = vec![
                "target/emb.user_id",
                "target/emb.item_id",
                "target/emb.user_segment",
                "target/mlp.0.w",
                "target/mlp.1.b",
                "target/head.w",
                "adapter.0.u1",
                "adapter.2.u1",
            ];
            if kind == AdapterKind::Linear {
                checked.truncate(6);
                checked.extend(["adapter.0.u", "adapter.2.u"]);
            }
            if !share {
                checked.push("target/attn.wk");
            }
            for g in checked {
                let status = &report.group(g).unwrap_or_else(|| panic!("{g} missing")).status;
                assert!(matches!(status, GroupStatus::Checked { .. }), "{g}");
            }
        }
    }
}

#[test]
fn aux_inputs_grad_check() {
    let (source, mut target) = towers(&[3, 2], 49);
    target
        .attach_aux(source.table("user_id").unwrap().table.value.clone(), source.item_table().table.value.clone())
        .unwrap();
    let mut rng = RngStream::new(50);
    target.layers[0].w.value = rng.normal_tensor(3, target.input_dim(), 0.5);
    let report = check(AnyModel::Single(target), &records(6, 51));
    assert!(report.passed(), "{report}");
    assert!(matches!(report.group("aux.user_id").unwrap().status, GroupStatus::Skipped));
}

// ---- variants used by the baselines ----

#[test]
fn attach_aux_preserves_outputs() {
    let (source, mut target) = towers(&[3, 2], 53);
    let before: Vec<u64> = records(100, 54).iter().map(|r| target.forward(r).unwrap().to_bits()).collect();
    target
        .attach_aux(source.table("user_id").unwrap().table.value.clone(), source.item_table().table.value.clone())
        .unwrap();
    assert_eq!(target.input_dim(), target.schema.feat_dim() + target.attention.output_dim() + 4);
    let after: Vec<u64> = records(100, 54).iter().map(|r| target.forward(r).unwrap().to_bits()).collect();
    assert_eq!(before, after);
    let user_aux = target.aux.as_ref().unwrap().user.value.clone();
    let batch = records(32, 55);
    for _ in 0..5 {
        train_step(&mut target, &batch, 0.05).unwrap();
    }
    assert_eq!(target.aux.as_ref().unwrap().user.value, user_aux);
}

#[test]
fn transplant_keeps_source_behaviour_for_shared_parts() {
    let (source, _) = towers(&[3, 2], 57);
    let mut m = SingleDomainModel::transplant(&source, target_schema(), layout(), &mut RngStream::new(58)).unwrap();
    assert!(m.params().iter().all(|p| p.trainable));
    assert_eq!(m.table("user_id").unwrap().table, source.table("user_id").unwrap().table);
    assert_eq!(m.layers[1], source.layers[1]);
    // Zeroing the new field's first-layer columns recovers the source logit exactly.
    let seg_col = 2 + 2 + 2;
    for r in 0..3 {
        m.layers[0].w.value.set(r, seg_col, 0.0);
    }
    for r in records(50, 59) {
        let got = m.forward(&r).unwrap();
        let want = source.forward(&r).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn overwrite_shared_embeddings_copies_values_only() {
    let (source, mut target) = towers(&[3, 2], 61);
    target.table_mut("user_id").unwrap().table.accum.fill(0.25);
    let copied = target.overwrite_shared_embeddings(&source);
    assert_eq!(copied, vec!["user_id", "item_id", "item_category"]);
    let t = target.table("user_id").unwrap();
    assert_eq!(t.table.value, source.table("user_id").unwrap().table.value);
    assert!(t.table.accum.data().iter().all(|&a| a == 0.25));
}

// ---- refresh_source ----

#[test]
fn refresh_with_identical_source_changes_nothing() {
    let (source, target) = towers(&[3, 2], 63);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(10)).unwrap();
    randomize_adapters(&mut c, 64);
    let before = c.clone();
    c.refresh_source(&source).unwrap();
    assert_eq!(c, before);
}

#[test]
fn refresh_with_perturbed_source_changes_logits_only_via_source() {
    let (source, target) = towers(&[3, 2], 65);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(11)).unwrap();
    randomize_adapters(&mut c, 66);
    let mut newer = source.clone();
    newer.set_trainable(true);
    let mut rng = RngStream::new(67);
    for p in newer.params_mut() {
        let (r, k) = p.shape();
        let noise = rng.normal_tensor(r, k, 0.1);
        p.value = p.value.add(&noise).unwrap();
    }
    let recs = records(50, 68);
    let before: Vec<f64> = recs.iter().map(|r| c.forward(r).unwrap()).collect();
    let target_bits = bits(&c.target);
    let adapters = c.adapters.clone();
    c.refresh_source(&newer).unwrap();
    let after: Vec<f64> = recs.iter().map(|r| c.forward(r).unwrap()).collect();
    assert!(before.iter().zip(&after).any(|(a, b)| a != b));
    assert_eq!(bits(&c.target), target_bits);
    assert_eq!(c.adapters, adapters);
    assert!(c.source.params().iter().all(|p| !p.trainable));
}

#[test]
fn refresh_rejects_other_architecture() {
    let (source, target) = towers(&[3, 2], 69);
    let mut c = warm_start(&target, &source, AdapterKind::Glu, &mut RngStream::new(12)).unwrap();
    let (other, _) = towers(&[4, 2], 70);
    assert!(matches!(c.refresh_source(&other), Err(ModelError::Architecture(_))));
}

// ---- checkpoints ----

fn trained_ctnet(kind: AdapterKind) -> AnyModel {
    let (source, target) = towers(&[3, 2], 71);
    let mut c = warm_start(&target, &source, kind, &mut RngStream::new(13)).unwrap();
    c.set_share_sequence(true).unwrap();
    let batch = records(16, 72);
    for _ in 0..3 {
        train_step(&mut c, &batch, 0.05).unwrap();
    }
    let mut m = AnyModel::CTNet(c);
    m.round_to_f32();
    m
}

fn checkpoint_models() -> Vec<AnyModel> {
    let (source, mut target) = towers(&[3, 2], 73);
    let mut single = AnyModel::Single(source.clone());
    single.round_to_f32();
    target.attach_aux(Tensor2D::zeros(5, 2), Tensor2D::zeros(6, 2)).unwrap();
    let mut aux = AnyModel::Single(target);
    aux.round_to_f32();
    vec![single, aux, trained_ctnet(AdapterKind::Glu), trained_ctnet(AdapterKind::Linear)]
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for m in checkpoint_models() {
        let bytes = write_checkpoint(&m);
        let loaded = read_checkpoint(&bytes).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(write_checkpoint(&loaded), bytes);
        for r in records(50, 74) {
            assert_eq!(loaded.logit(&r).unwrap().to_bits(), m.logit(&r).unwrap().to_bits());
        }
    }
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("m.ckpt");
    let m = trained_ctnet(AdapterKind::Glu);
    save_checkpoint(&m, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    save_checkpoint(&load_checkpoint(&path).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn checkpoint_rejects_bad_magic_and_version() {
    let mut bytes = write_checkpoint(&checkpoint_models()[0]);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(ModelError::Checkpoint { offset: 0, .. })));
    bytes[4] = 9;
    let err = read_checkpoint(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn every_truncation_is_an_error() {
    let bytes = write_checkpoint(&trained_ctnet(AdapterKind::Glu));
    for cut in (0..bytes.len()).step_by(7).chain([bytes.len() - 1]) {
        match read_checkpoint(&bytes[..cut]) {
            Err(ModelError::Checkpoint { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(read_checkpoint(&longer), Err(ModelError::Checkpoint { .. })));
}

#[test]
fn tampered_tensor_shape_is_an_error() {
    let m = checkpoint_models().remove(0);
    let bytes = write_checkpoint(&m);
    let meta_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let first = 10 + meta_len;
    let name_len = u32::from_le_bytes(bytes[first..first + 4].try_into().unwrap()) as usize;
    let rows_at = first + 4 + name_len;
    let mut tampered = bytes.clone();
    tampered[rows_at] = tampered[rows_at].wrapping_add(1);
    match read_checkpoint(&tampered) {
        Err(ModelError::Checkpoint { offset, .. }) => assert_eq!(offset, rows_at),
        other => panic!("{other:?}"),
    }
}

#[test]
fn fingerprint_tracks_values() {
    let (source, _) = towers(&[3, 2], 75);
    let mut other = source.clone();
    assert_eq!(source.fingerprint(), other.fingerprint());
    other.head.b.value.data_mut()[0] += 1e-9;
    assert_ne!(source.fingerprint(), other.fingerprint());
}

#[test]
fn toy_suite_passes() {
    let cases = grad_check_suite(1, 1e-4).unwrap();
    assert_eq!(cases.len(), 6);
    for c in &cases {
        assert!(c.report.passed(), "{}\n{}", c.name, c.report);
    }
}
