use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ContinualError;
use crate::features::{SynthConfig, SEGMENT_FIELD};
use crate::model::{AdapterKind, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Base,
    SourceModel,
    FinetuneEmbeddings,
    FinetuneAll,
    ExtraEmbedding,
    CtnetGlu,
    CtnetLinear,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Base,
        MethodKind::SourceModel,
        MethodKind::FinetuneEmbeddings,
        MethodKind::FinetuneAll,
        MethodKind::ExtraEmbedding,
        MethodKind::CtnetGlu,
        MethodKind::CtnetLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Base => "base",
            MethodKind::SourceModel => "source_model",
            MethodKind::FinetuneEmbeddings => "finetune_embeddings",
            MethodKind::FinetuneAll => "finetune_all",
            MethodKind::ExtraEmbedding => "extra_embedding",
            MethodKind::CtnetGlu => "ctnet_glu",
            MethodKind::CtnetLinear => "ctnet_linear",
        }
    }

    pub fn adapter(self) -> Option<AdapterKind> {
        match self {
            MethodKind::CtnetGlu => Some(AdapterKind::Glu),
            MethodKind::CtnetLinear => Some(AdapterKind::Linear),
            _ => None,
        }
    }

    /// Transfer modes this recipe is defined for.
    pub fn modes(self) -> &'static [TransferMode] {
        match self {
            MethodKind::Base | MethodKind::SourceModel => &[TransferMode::NoTransfer],
            MethodKind::FinetuneEmbeddings | MethodKind::FinetuneAll => &[TransferMode::OneTime],
            MethodKind::ExtraEmbedding | MethodKind::CtnetGlu | MethodKind::CtnetLinear => {
                &[TransferMode::OneTime, TransferMode::Continual]
            }
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = MethodKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Whether and how often the source model's knowledge reaches the target model. The
/// deployment period lives in the plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    #[serde(rename = "none")]
    NoTransfer,
    OneTime,
    Continual,
}

impl TransferMode {
    pub fn name(self) -> &'static str {
        match self {
            TransferMode::NoTransfer => "none",
            TransferMode::OneTime => "one_time",
            TransferMode::Continual => "continual",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(TransferMode::NoTransfer),
            "one_time" => Ok(TransferMode::OneTime),
            "continual" => Ok(TransferMode::Continual),
            other => Err(format!("unknown mode `{other}` (expected none, one_time or continual)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub mode: TransferMode,
}

impl MethodSpec {
    pub const fn new(kind: MethodKind, mode: TransferMode) -> Self {
        MethodSpec { kind, mode }
    }

    pub fn validate(&self) -> Result<(), ContinualError> {
        if self.kind.modes().contains(&self.mode) {
            Ok(())
        } else {
            let allowed: Vec<&str> = self.kind.modes().iter().map(|m| m.name()).collect();
            Err(ContinualError::Plan(format!(
                "method `{}` is not defined for mode `{}` (allowed: {})",
                self.kind,
                self.mode,
                allowed.join(", ")
            )))
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.mode)
    }
}

/// Everything needed to reproduce an experiment.
///
/// `periods` counts training periods; the stream holds one more period whose leading
/// slice only serves as the final evaluation set. Without `data_dir` each seed gets its
/// own synthetic stream (`synth.seed` and `synth.periods` are overridden).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub periods: usize,
    pub deploy_period: usize,
    pub eval_fraction: f64,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub share_sequence: bool,
    /// Dataset fields the source model does not see.
    pub target_only_fields: Vec<String>,
    pub data_dir: Option<PathBuf>,
    /// Overrides `<data_dir>/schema.txt`.
    pub schema_file: Option<PathBuf>,
    pub synth: SynthConfig,
    pub source: ModelConfig,
    pub target: ModelConfig,
    pub methods: Vec<MethodSpec>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            periods: 5,
            deploy_period: 2,
            eval_fraction: 0.2,
            seeds: vec![1, 2, 3, 4, 5],
            batch_size: 256,
            learning_rate: 0.01,
            share_sequence: false,
            target_only_fields: vec![SEGMENT_FIELD.to_string()],
            data_dir: None,
            schema_file: None,
            synth: SynthConfig::default(),
            source: ModelConfig::default(),
            target: ModelConfig::default(),
            methods: default_methods(),
        }
    }
}

pub fn default_methods() -> Vec<MethodSpec> {
    use MethodKind::*;
    use TransferMode::*;
    vec![
        MethodSpec::new(Base, NoTransfer),
        MethodSpec::new(SourceModel, NoTransfer),
        MethodSpec::new(FinetuneEmbeddings, OneTime),
        MethodSpec::new(FinetuneAll, OneTime),
        MethodSpec::new(ExtraEmbedding, OneTime),
        MethodSpec::new(ExtraEmbedding, Continual),
        MethodSpec::new(CtnetLinear, OneTime),
        MethodSpec::new(CtnetLinear, Continual),
        MethodSpec::new(CtnetGlu, OneTime),
        MethodSpec::new(CtnetGlu, Continual),
    ]
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self, ContinualError> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| ContinualError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Reads a plan file; relative data paths resolve against the file's directory.
    pub fn read_file(path: &Path) -> Result<Self, ContinualError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ContinualError::Plan(format!("cannot read plan {}: {e}", path.display())))?;
        let mut plan = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut plan.data_dir, &mut plan.schema_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans always serialize")
    }

    pub fn validate(&self) -> Result<(), ContinualError> {
        let bad = |m: String| Err(ContinualError::Plan(m));
        if self.periods < 2 {
            return bad(format!("need at least 2 training periods, got {}", self.periods));
        }
        if self.deploy_period == 0 || self.deploy_period >= self.periods {
            return bad(format!(
                "deploy_period must satisfy 1 <= t0 < periods ({}), got {}",
                self.periods, self.deploy_period
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad(format!("eval_fraction must lie in (0, 1), got {}", self.eval_fraction));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        for m in &self.methods {
            m.validate()?;
        }
        let mut methods = self.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("duplicate method entries".into());
        }
        for c in [&self.source, &self.target] {
            c.tower.validate().map_err(|e| ContinualError::Plan(e.to_string()))?;
            if c.attention.heads == 0 || c.attention.head_dim == 0 {
                return bad("attention heads and head_dim must be positive".into());
            }
        }
        if self.source.tower.layer_widths.len() != self.target.tower.layer_widths.len() {
            return bad("source and target towers must have the same depth".into());
        }
        if self.share_sequence && self.source.attention != self.target.attention {
            return bad("share_sequence needs identical attention configs".into());
        }
        if self.data_dir.is_none() {
            self.synth.validate().map_err(|e| ContinualError::Plan(e.to_string()))?;
        }
        Ok(())
    }

    /// Number of periods in the stream: training periods plus the evaluation-only one.
    pub fn stream_periods(&self) -> usize {
        self.periods + 1
    }

    /// Boundaries reported by every method: `t0+1 ..= periods`.
    pub fn reported_boundaries(&self) -> std::ops::RangeInclusive<usize> {
        self.deploy_period + 1..=self.periods
    }

    pub fn synth_for_seed(&self, seed: u64) -> SynthConfig {
        let mut cfg = self.synth.clone();
        cfg.seed = seed;
        cfg.periods = self.stream_periods();
        cfg
    }
}
