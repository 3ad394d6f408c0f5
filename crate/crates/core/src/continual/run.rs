use std::ops::Range;

use super::plan::{ExperimentPlan, MethodKind, MethodSpec, TransferMode};
use super::ContinualError;
use crate::features::{
    read_dataset_dir, split_prequential, FeatureSchema, PeriodData, PrequentialSplit, Record,
    RecordLayout, SyntheticWorld,
};
use crate::metrics::{evaluate_logits, EvalBatch, MetricSet};
use crate::model::{
    train_step, warm_start, AdapterKind, AnyModel, CTNetModel, CtrModel, SingleDomainModel,
};
use crate::numkern::RngStream;

/// A period-structured stream with its prequential split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub source_schema: FeatureSchema,
    pub layout: RecordLayout,
    pub periods: Vec<PeriodData>,
    pub split: PrequentialSplit,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, periods: Vec<PeriodData>, plan: &ExperimentPlan) -> Result<Self, ContinualError> {
        if periods.len() != plan.stream_periods() {
            return Err(ContinualError::Plan(format!(
                "plan needs {} periods ({} training + 1 evaluation), data has {}",
                plan.stream_periods(),
                plan.periods,
                periods.len()
            )));
        }
        for (p, data) in periods.iter().enumerate() {
            if data.target.is_empty() || (p < plan.periods && data.source.is_empty()) {
                return Err(ContinualError::Plan(format!("period {p} is missing source or target records")));
            }
        }
        for f in &plan.target_only_fields {
            if schema.field(f).is_none() {
                return Err(ContinualError::Plan(format!("target-only field `{f}` is not in the schema")));
            }
        }
        let source_schema = schema.without(&plan.target_only_fields)?;
        let split = split_prequential(&periods, plan.eval_fraction)?;
        for p in plan.reported_boundaries() {
            if split.periods[p].eval.is_empty() {
                return Err(ContinualError::Plan(format!("evaluation set of period {p} is empty")));
            }
        }
        Ok(Dataset {
            layout: RecordLayout::from_schema(&schema),
            schema,
            source_schema,
            periods,
            split,
        })
    }

    /// The synthetic stream for `seed`, or the plan's dataset directory.
    pub fn load(plan: &ExperimentPlan, seed: u64, threads: usize) -> Result<Self, ContinualError> {
        match &plan.data_dir {
            Some(dir) => {
                let (mut schema, periods) = read_dataset_dir(dir)?;
                if let Some(path) = &plan.schema_file {
                    schema = FeatureSchema::read_file(path)?;
                    for data in &periods {
                        for r in data.source.iter().chain(&data.target) {
                            r.validate(&schema)?;
                        }
                    }
                }
                Dataset::new(schema, periods, plan)
            }
            None => {
                let data = SyntheticWorld::new(plan.synth_for_seed(seed))?.generate(threads);
                Dataset::new(data.schema, data.periods, plan)
            }
        }
    }

    pub fn eval_records(&self, boundary: usize) -> &[Record] {
        self.split.eval_records(&self.periods, boundary)
    }

    pub fn train_records(&self, period: usize) -> &[Record] {
        self.split.train_records(&self.periods, period)
    }
}

/// Metrics of one method at one boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryMetrics {
    pub boundary: usize,
    pub metrics: MetricSet,
}

/// Source and base target models after each training period, and the base model's
/// metrics at every boundary.
#[derive(Clone, Debug)]
pub struct Pretrained {
    /// `source[p]` has been trained through period `p`.
    pub source: Vec<SingleDomainModel>,
    /// `base[p]` has been trained through period `p`.
    pub base: Vec<SingleDomainModel>,
    /// Boundaries `1 ..= periods`.
    pub base_metrics: Vec<BoundaryMetrics>,
}

impl Pretrained {
    /// Rebuilds the pretraining result from stored per-period models, recomputing the base
    /// model's boundary metrics.
    pub fn assemble(
        plan: &ExperimentPlan,
        data: &Dataset,
        source: Vec<SingleDomainModel>,
        base: Vec<SingleDomainModel>,
    ) -> Result<Self, ContinualError> {
        if source.len() != plan.periods || base.len() != plan.periods {
            return Err(ContinualError::Plan(format!(
                "expected {} source and base models, got {} and {}",
                plan.periods,
                source.len(),
                base.len()
            )));
        }
        let base_metrics = (1..=plan.periods)
            .map(|b| {
                Ok(BoundaryMetrics {
                    boundary: b,
                    metrics: evaluate(&base[b - 1], data.eval_records(b))?,
                })
            })
            .collect::<Result<Vec<_>, ContinualError>>()?;
        Ok(Pretrained {
            source,
            base,
            base_metrics,
        })
    }
}

/// What one method run produced.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub spec: MethodSpec,
    pub seed: u64,
    pub metrics: Vec<BoundaryMetrics>,
    /// The model scored at each reported boundary, in checkpoint precision.
    pub models: Vec<(usize, AnyModel)>,
    /// Target records trained on: `(period, index range)`.
    pub trained: Vec<(usize, Range<usize>)>,
    /// Target records evaluated: `(boundary, index range)`.
    pub evaluated: Vec<(usize, Range<usize>)>,
    /// Source-tower fingerprints before and after each period of target training.
    pub source_checks: Vec<(u64, u64)>,
}

pub fn model_rng(seed: u64) -> RngStream {
    RngStream::new(seed).split_named("models")
}

pub fn evaluate<M: CtrModel + ?Sized>(model: &M, records: &[Record]) -> Result<MetricSet, ContinualError> {
    let mut batch = EvalBatch::default();
    for r in records {
        batch.push(model.logit(r)?, r.label, r.user_id);
    }
    Ok(evaluate_logits(&batch)?)
}

/// One pass over `records` in order, in mini-batches, then rounding to checkpoint precision.
pub fn train_period<M: CtrModel + ?Sized>(
    model: &mut M,
    records: &[Record],
    plan: &ExperimentPlan,
) -> Result<(), ContinualError> {
    for batch in records.chunks(plan.batch_size) {
        train_step(model, batch, plan.learning_rate)?;
    }
    model.round_to_f32();
    Ok(())
}

fn fresh_model(
    schema: &FeatureSchema,
    data: &Dataset,
    config: &crate::model::ModelConfig,
    rng: &mut RngStream,
) -> Result<SingleDomainModel, ContinualError> {
    let mut m = SingleDomainModel::new(schema.clone(), data.layout.clone(), config.clone(), rng)?;
    m.round_to_f32();
    Ok(m)
}

/// Trains the source model on every source period and the base target model on every
/// target training split, incrementally.
pub fn run_pretrain(plan: &ExperimentPlan, data: &Dataset, seed: u64) -> Result<Pretrained, ContinualError> {
    let root = model_rng(seed);
    let mut source = fresh_model(&data.source_schema, data, &plan.source, &mut root.split_named("source"))?;
    let mut sources = Vec::with_capacity(plan.periods);
    for p in 0..plan.periods {
        train_period(&mut source, &data.periods[p].source, plan)?;
        sources.push(source.clone());
    }
    let (base, base_metrics) = run_base(plan, data, seed)?;
    Ok(Pretrained {
        source: sources,
        base,
        base_metrics,
    })
}

fn run_base(
    plan: &ExperimentPlan,
    data: &Dataset,
    seed: u64,
) -> Result<(Vec<SingleDomainModel>, Vec<BoundaryMetrics>), ContinualError> {
    let root = model_rng(seed);
    let mut target = fresh_model(&data.schema, data, &plan.target, &mut root.split_named("target"))?;
    let mut models = Vec::with_capacity(plan.periods);
    let mut metrics = Vec::with_capacity(plan.periods);
    for p in 0..plan.periods {
        if p > 0 {
            metrics.push(BoundaryMetrics {
                boundary: p,
                metrics: evaluate(&target, data.eval_records(p))?,
            });
        }
        train_period(&mut target, data.train_records(p), plan)?;
        models.push(target.clone());
    }
    metrics.push(BoundaryMetrics {
        boundary: plan.periods,
        metrics: evaluate(&target, data.eval_records(plan.periods))?,
    });
    Ok((models, metrics))
}

/// A target-side model under one of the recipes.
enum Learner {
    Single(SingleDomainModel),
    CTNet(CTNetModel),
}

impl Learner {
    fn as_model(&self) -> &dyn CtrModel {
        match self {
            Learner::Single(m) => m,
            Learner::CTNet(m) => m,
        }
    }

    fn as_model_mut(&mut self) -> &mut dyn CtrModel {
        match self {
            Learner::Single(m) => m,
            Learner::CTNet(m) => m,
        }
    }

    fn snapshot(&self) -> AnyModel {
        match self {
            Learner::Single(m) => AnyModel::Single(m.clone()),
            Learner::CTNet(m) => AnyModel::CTNet(m.clone()),
        }
    }
}

fn aux_tables(source: &SingleDomainModel) -> (crate::numkern::Tensor2D, crate::numkern::Tensor2D) {
    let user = source.table(crate::features::USER_FIELD).expect("schemas always carry user ids");
    (user.table.value.clone(), source.item_table().table.value.clone())
}

/// The target-side model at the start of the deployment period `t0`, built from the
/// checkpoints trained through `t0 - 1`.
fn deploy(
    spec: MethodSpec,
    plan: &ExperimentPlan,
    data: &Dataset,
    pre: &Pretrained,
    seed: u64,
) -> Result<Learner, ContinualError> {
    let t0 = plan.deploy_period;
    let base = &pre.base[t0 - 1];
    let source = &pre.source[t0 - 1];
    let root = model_rng(seed);
    Ok(match spec.kind {
        MethodKind::Base => Learner::Single(base.clone()),
        MethodKind::SourceModel => Learner::Single(source.clone()),
        MethodKind::FinetuneEmbeddings => {
            let mut m = base.clone();
            m.overwrite_shared_embeddings(source);
            Learner::Single(m)
        }
        MethodKind::FinetuneAll => {
            let mut m = SingleDomainModel::transplant(
                source,
                data.schema.clone(),
                data.layout.clone(),
                &mut root.split_named("finetune_all"),
            )?;
            m.round_to_f32();
            Learner::Single(m)
        }
        MethodKind::ExtraEmbedding => {
            let mut m = base.clone();
            let (user, item) = aux_tables(source);
            m.attach_aux(user, item)?;
            Learner::Single(m)
        }
        MethodKind::CtnetGlu | MethodKind::CtnetLinear => {
            let kind: AdapterKind = spec.kind.adapter().expect("ctnet kinds carry an adapter kind");
            let mut c = warm_start(base, source, kind, &mut root.split_named(&format!("adapters/{kind}")))?;
            c.set_share_sequence(plan.share_sequence)?;
            c.round_to_f32();
            Learner::CTNet(c)
        }
    })
}

/// Applies the mode's per-boundary source refresh at the start of period `p > t0`.
fn refresh(learner: &mut Learner, spec: MethodSpec, latest: &SingleDomainModel) -> Result<(), ContinualError> {
    if spec.mode != TransferMode::Continual {
        return Ok(());
    }
    match learner {
        Learner::CTNet(c) => c.refresh_source(latest)?,
        Learner::Single(m) => {
            let (user, item) = aux_tables(latest);
            m.refresh_aux(&user, &item)?;
        }
    }
    Ok(())
}

/// Runs one recipe and reports boundaries `t0+1 ..= periods`.
pub fn run_method(
    spec: MethodSpec,
    plan: &ExperimentPlan,
    data: &Dataset,
    pre: &Pretrained,
    seed: u64,
) -> Result<MethodOutcome, ContinualError> {
    spec.validate()?;
    let mut out = MethodOutcome {
        spec,
        seed,
        metrics: Vec::new(),
        models: Vec::new(),
        trained: Vec::new(),
        evaluated: Vec::new(),
        source_checks: Vec::new(),
    };
    let t0 = plan.deploy_period;
    let record = |out: &mut MethodOutcome, b: usize, model: &dyn CtrModel, snapshot: AnyModel| {
        let metrics = evaluate(model, data.eval_records(b))?;
        out.evaluated.push((b, data.split.periods[b].eval.clone()));
        out.metrics.push(BoundaryMetrics { boundary: b, metrics });
        out.models.push((b, snapshot));
        Ok::<(), ContinualError>(())
    };

    match spec.kind {
        MethodKind::Base => {
            let mut model = pre.base[t0 - 1].clone();
            for p in t0..plan.periods {
                out.trained.push((p, data.split.periods[p].train.clone()));
                train_period(&mut model, data.train_records(p), plan)?;
                record(&mut out, p + 1, &model, AnyModel::Single(model.clone()))?;
            }
        }
        MethodKind::SourceModel => {
            for b in plan.reported_boundaries() {
                let model = &pre.source[b - 1];
                record(&mut out, b, model, AnyModel::Single(model.clone()))?;
            }
        }
        _ => {
            let mut learner = deploy(spec, plan, data, pre, seed)?;
            for p in t0..plan.periods {
                if p > t0 {
                    refresh(&mut learner, spec, &pre.source[p - 1])?;
                }
                let before = match &learner {
                    Learner::CTNet(c) => Some(c.source.fingerprint()),
                    Learner::Single(_) => None,
                };
                out.trained.push((p, data.split.periods[p].train.clone()));
                train_period(learner.as_model_mut(), data.train_records(p), plan)?;
                if let (Some(before), Learner::CTNet(c)) = (before, &learner) {
                    let after = c.source.fingerprint();
                    out.source_checks.push((before, after));
                    if before != after {
                        return Err(ContinualError::FrozenViolation(p));
                    }
                }
                record(&mut out, p + 1, learner.as_model(), learner.snapshot())?;
            }
        }
    }
    Ok(out)
}
