//! `ctnet`: generate data, pretrain, run transfer methods, compare them and replay
//! checkpoints.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ctnet_core::continual::{
    compare_report, outcome_rows, results_csv, run_method, run_pretrain, ContinualError, Dataset, ExperimentPlan,
    MethodKind, MethodSpec, Pretrained, ResultRow, TransferMode,
};
use ctnet_core::features::{read_dataset, write_dataset, write_dataset_dir, FeatureSchema, SyntheticWorld, SCHEMA_FILE};
use ctnet_core::model::{grad_check_suite, load_checkpoint, save_checkpoint, AnyModel, ModelError};
use ctnet_core::numkern::GroupStatus;

#[derive(Parser, Debug)]
#[command(name = "ctnet", version, about = "Continual transfer learning for cross-domain CTR prediction")]
struct Cli {
    /// Directory for datasets, checkpoints and reports.
    #[arg(long, global = true, default_value = "ctnet-out")]
    out_dir: PathBuf,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for synthetic data generation. Never changes results.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic stream of every plan seed as CSV datasets.
    GenData {
        plan: PathBuf,
        /// Only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the source and base target models through every period and save checkpoints.
    Pretrain { plan: PathBuf },
    /// Run one method for one seed.
    Run {
        plan: PathBuf,
        #[arg(long)]
        method: MethodKind,
        #[arg(long)]
        mode: TransferMode,
        #[arg(long)]
        seed: u64,
    },
    /// Run every method of the plan for every seed and print the comparison.
    Compare { plan: PathBuf },
    /// Finite-difference check of all analytic gradients at toy dimensions.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Score a dataset file with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Schema of the data file; defaults to schema.txt next to it.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ContinualError> for Failure {
    fn from(e: ContinualError) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION };
        Failure { code, error: e.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        ContinualError::from(e).into()
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error,
        }
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    out_dir: PathBuf,
    quiet: bool,
    threads: usize,
}

impl Ctx {
    fn say(&self, text: &str) {
        if !self.quiet {
            println!("{text}");
        }
    }

    fn note(&self, text: &str) {
        if !self.quiet {
            eprintln!("{text}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    let ctx = Ctx {
        out_dir: cli.out_dir,
        quiet: cli.quiet,
        threads: cli.threads,
    };
    let result = match cli.command {
        Command::GenData { plan, seed } => gen_data(&ctx, &plan, seed),
        Command::Pretrain { plan } => pretrain(&ctx, &plan),
        Command::Run {
            plan,
            method,
            mode,
            seed,
        } => run(&ctx, &plan, MethodSpec::new(method, mode), seed),
        Command::Compare { plan } => compare(&ctx, &plan),
        Command::GradCheck { tolerance, seed } => grad_check(&ctx, tolerance, seed),
        Command::Eval {
            checkpoint,
            data,
            schema,
        } => eval(&ctx, &checkpoint, &data, schema.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_plan(path: &Path) -> Result<ExperimentPlan, Failure> {
    Ok(ExperimentPlan::read_file(path)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gen_data(ctx: &Ctx, plan_path: &Path, only: Option<u64>) -> Outcome {
    let plan = load_plan(plan_path)?;
    let seeds = only.map_or(plan.seeds.clone(), |s| vec![s]);
    for seed in seeds {
        let data = SyntheticWorld::new(plan.synth_for_seed(seed))
            .map_err(ContinualError::from)?
            .generate(ctx.threads);
        let dir = ctx.out_dir.join("data").join(format!("seed{seed}"));
        write_dataset_dir(&dir, &data.schema, &data.periods).map_err(ContinualError::from)?;
        ctx.note(&format!("wrote {} periods to {}", data.periods.len(), dir.display()));
    }
    Ok(())
}

fn pretrain_dir(ctx: &Ctx, seed: u64) -> PathBuf {
    ctx.out_dir.join("pretrain").join(format!("seed{seed}"))
}

fn save_pretrained(ctx: &Ctx, plan: &ExperimentPlan, seed: u64, pre: &Pretrained) -> Outcome {
    let dir = pretrain_dir(ctx, seed);
    for (p, (s, b)) in pre.source.iter().zip(&pre.base).enumerate() {
        save_checkpoint(&AnyModel::Single(s.clone()), &dir.join(format!("source_{p}.ckpt")))?;
        save_checkpoint(&AnyModel::Single(b.clone()), &dir.join(format!("base_{p}.ckpt")))?;
    }
    let rows: Vec<ResultRow> = pre
        .base_metrics
        .iter()
        .map(|m| ResultRow {
            spec: MethodSpec::new(MethodKind::Base, TransferMode::NoTransfer),
            seed,
            boundary: m.boundary,
            auc: m.metrics.auc,
            gauc: m.metrics.gauc,
            logloss: m.metrics.logloss,
        })
        .collect();
    write(&dir.join("base_metrics.csv"), results_csv(&rows))?;
    // Written last: its presence marks a complete, plan-matched set of checkpoints.
    write(&dir.join("plan.toml"), plan.to_toml())?;
    Ok(())
}

/// Stored pretraining checkpoints for `seed` if they were produced by the same plan.
fn load_pretrained(ctx: &Ctx, plan: &ExperimentPlan, data: &Dataset, seed: u64) -> Result<Option<Pretrained>, Failure> {
    let dir = pretrain_dir(ctx, seed);
    match std::fs::read_to_string(dir.join("plan.toml")) {
        Ok(text) if text == plan.to_toml() => {}
        _ => return Ok(None),
    }
    let single = |path: PathBuf| -> Result<_, Failure> {
        match load_checkpoint(&path)? {
            AnyModel::Single(m) => Ok(m),
            AnyModel::CTNet(_) => Err(anyhow::anyhow!("{} is not a single-domain checkpoint", path.display()).into()),
        }
    };
    let mut source = Vec::new();
    let mut base = Vec::new();
    for p in 0..plan.periods {
        source.push(single(dir.join(format!("source_{p}.ckpt")))?);
        base.push(single(dir.join(format!("base_{p}.ckpt")))?);
    }
    Ok(Some(Pretrained::assemble(plan, data, source, base)?))
}

fn pretrain(ctx: &Ctx, plan_path: &Path) -> Outcome {
    let plan = load_plan(plan_path)?;
    for &seed in &plan.seeds {
        let data = Dataset::load(&plan, seed, ctx.threads)?;
        let pre = run_pretrain(&plan, &data, seed)?;
        save_pretrained(ctx, &plan, seed, &pre)?;
        ctx.note(&format!("seed {seed}: checkpoints in {}", pretrain_dir(ctx, seed).display()));
    }
    Ok(())
}

fn run(ctx: &Ctx, plan_path: &Path, spec: MethodSpec, seed: u64) -> Outcome {
    let plan = load_plan(plan_path)?;
    spec.validate()?;
    let data = Dataset::load(&plan, seed, ctx.threads)?;
    let pre = match load_pretrained(ctx, &plan, &data, seed)? {
        Some(pre) => pre,
        None => {
            let pre = run_pretrain(&plan, &data, seed)?;
            save_pretrained(ctx, &plan, seed, &pre)?;
            pre
        }
    };
    let outcome = run_method(spec, &plan, &data, &pre, seed)?;
    let dir = ctx
        .out_dir
        .join("runs")
        .join(format!("{}-{}-seed{seed}", spec.kind, spec.mode));
    write(&dir.join(SCHEMA_FILE), data.schema.to_text())?;
    for (b, model) in &outcome.models {
        save_checkpoint(model, &dir.join(format!("boundary_{b}.ckpt")))?;
        write_dataset(data.eval_records(*b), &data.schema, &dir.join(format!("eval_{b}.csv")))
            .map_err(ContinualError::from)?;
    }
    let csv = results_csv(&outcome_rows(&outcome));
    write(&dir.join("results.csv"), &csv)?;
    ctx.say(csv.trim_end());
    Ok(())
}

fn compare(ctx: &Ctx, plan_path: &Path) -> Outcome {
    let plan = load_plan(plan_path)?;
    let mut rows = Vec::new();
    for &seed in &plan.seeds {
        let data = Dataset::load(&plan, seed, ctx.threads)?;
        let pre = run_pretrain(&plan, &data, seed)?;
        for &spec in &plan.methods {
            let outcome = run_method(spec, &plan, &data, &pre, seed)?;
            rows.extend(outcome_rows(&outcome));
            ctx.note(&format!("seed {seed}: {spec} done"));
        }
    }
    let report = compare_report(&rows)?;
    write(&ctx.out_dir.join("results.csv"), results_csv(&rows))?;
    write(&ctx.out_dir.join("report.csv"), report.to_csv())?;
    let text = report.render();
    write(&ctx.out_dir.join("report.txt"), &text)?;
    ctx.say(text.trim_end());
    Ok(())
}

fn grad_check(ctx: &Ctx, tolerance: f64, seed: u64) -> Outcome {
    let cases = grad_check_suite(seed, tolerance).map_err(|e| Failure {
        code: EXIT_NUMERICAL,
        error: e.into(),
    })?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for case in &cases {
        worst = worst.max(case.report.max_rel_error());
        if !case.report.passed() {
            failed.push(case.name.clone());
        }
        if !ctx.quiet {
            println!("== {}", case.name);
            for g in &case.report.groups {
                match g.status {
                    GroupStatus::Checked { max_rel_error, entries } => {
                        println!("  {:<28} {:>4} entries  max rel. error {:.3e}", g.name, entries, max_rel_error)
                    }
                    GroupStatus::Skipped => println!("  {:<28} skipped (frozen)", g.name),
                }
            }
        }
    }
    ctx.say(&format!("max rel. error {worst:.3e} (tolerance {tolerance:e})"));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            error: anyhow::anyhow!("gradient check failed for: {}", failed.join(", ")),
        })
    }
}

fn eval(ctx: &Ctx, checkpoint: &Path, data: &Path, schema: Option<&Path>) -> Outcome {
    let model = load_checkpoint(checkpoint)?;
    let schema_path = match schema {
        Some(p) => p.to_path_buf(),
        None => data.parent().unwrap_or(Path::new("")).join(SCHEMA_FILE),
    };
    let schema = FeatureSchema::read_file(&schema_path).map_err(ContinualError::from)?;
    let records = read_dataset(data, &schema).map_err(ContinualError::from)?;
    let m = ctnet_core::continual::evaluate(&model, &records)?;
    ctx.say(&format!("auc={}\ngauc={}\nlogloss={}", m.auc, m.gauc, m.logloss));
    Ok(())
}
