//! Command-line experiment runner: dataset generation, named experiments,
//! report rendering, and paired significance tests.

use crate::layers::{CellKind, InitKind};
use crate::patterns::{generate_task, LabelledDataset, TaskId, TaskSpec};
use crate::prior::WidthPolicy;
use crate::seqdata::{
    load_embeddings, make_windows, synth_periodic_text, synth_repeat_walk, Corpus, Encoding,
    UnitKind,
};
use crate::stats::{mean_std, wilcoxon_signed_rank, PairedSamples, Sided};
use crate::train::{
    train_classifier, train_lm, ErbpPreset, LmMetric, OptimiserSpec, RbpMode, RunResult,
    TrainConfig,
};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

// Synthetic-task defaults; resolved values are echoed into every summary's
// provenance block.
const EPOCHS_SYNTH: usize = 20;
const HIDDEN_SYNTH: usize = 20;
const ADAM_LR: f64 = 0.01;
const LM_ADAM_LR: f64 = 0.001;
const SGD_LR: f64 = 0.01;
const DEFAULT_LAMBDA: f64 = 1.0;
const LM_LAMBDA: f64 = 0.3;

#[derive(Parser)]
#[command(
    name = "erbp",
    version,
    about = "Relational weight priors for abstract pattern learning: experiment runner"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit synthetic datasets (JSONL) and corpora (text) for inspection.
    Gen(GenArgs),
    /// Run a named experiment and write results CSV + summary JSON.
    Run(RunArgs),
    /// Render a results CSV as grouped mean (std) tables with significance.
    Report(ReportArgs),
    /// Paired Wilcoxon test between two results CSVs (paired on task+seed).
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Task to emit: task1..task5, combined, concrete_only, or all.
    #[arg(long, default_value = "all")]
    task: String,
    /// Also emit a synthetic corpus: periodic (char) or walk (integer).
    #[arg(long)]
    corpus: Option<SynthCorpus>,
    /// Symbol count for generated corpora.
    #[arg(long, default_value_t = 200_000)]
    length: usize,
    #[arg(long, env = "ERBP_SEED", default_value_t = 7)]
    seed: u64,
    #[arg(long, env = "ERBP_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthCorpus {
    /// Locally periodic character text.
    Periodic,
    /// Integer random walk with 30% exact repeats at lag 2.
    Walk,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentName {
    Table1,
    Depth,
    Optimiser,
    LambdaSweep,
    Init,
    Combined,
    ConcreteOnly,
    CharLm,
    WordLm,
    PitchLm,
}

impl ExperimentName {
    fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::Table1 => "table1",
            ExperimentName::Depth => "depth",
            ExperimentName::Optimiser => "optimiser",
            ExperimentName::LambdaSweep => "lambda_sweep",
            ExperimentName::Init => "init",
            ExperimentName::Combined => "combined",
            ExperimentName::ConcreteOnly => "concrete_only",
            ExperimentName::CharLm => "char_lm",
            ExperimentName::WordLm => "word_lm",
            ExperimentName::PitchLm => "pitch_lm",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CellArg {
    Rnn,
    Gru,
    Lstm,
}

impl CellArg {
    fn kind(&self) -> CellKind {
        match self {
            CellArg::Rnn => CellKind::Simple,
            CellArg::Gru => CellKind::Gru,
            CellArg::Lstm => CellKind::Lstm,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            CellArg::Rnn => "rnn",
            CellArg::Gru => "gru",
            CellArg::Lstm => "lstm",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WidthPolicyArg {
    Expand,
    Truncate,
}

impl WidthPolicyArg {
    fn policy(&self) -> WidthPolicy {
        match self {
            WidthPolicyArg::Expand => WidthPolicy::Expand,
            WidthPolicyArg::Truncate => WidthPolicy::Truncate,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    experiment: ExperimentName,
    /// Base seed; run seeds derive from it deterministically.
    #[arg(long, env = "ERBP_SEED", default_value_t = 7)]
    seed: u64,
    /// Parallel run slots; 1 reproduces strictly sequential execution.
    #[arg(long, env = "ERBP_JOBS", default_value_t = 1)]
    jobs: usize,
    #[arg(long, env = "ERBP_OUT", default_value = "results")]
    out: PathBuf,
    /// Override the experiment's default regularisation strength.
    #[arg(long, env = "ERBP_LAMBDA")]
    lambda: Option<f64>,
    /// Context window length for sequence experiments.
    #[arg(long, env = "ERBP_CONTEXT")]
    context: Option<usize>,
    /// Restrict sequence experiments to one cell kind (default: all).
    #[arg(long, env = "ERBP_CELL", value_enum)]
    cell: Option<CellArg>,
    #[arg(long, env = "ERBP_WIDTH_POLICY", value_enum, default_value_t = WidthPolicyArg::Expand)]
    width_policy: WidthPolicyArg,
    /// Corpus file for the language-model experiments (synthesised if absent
    /// where possible).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Embedding table ("token v1 .. vd" lines) for word_lm.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Number of paired seeds per configuration.
    #[arg(long, env = "ERBP_SEEDS", default_value_t = 10)]
    seeds: usize,
    /// Override the experiment's default epoch count.
    #[arg(long, env = "ERBP_EPOCHS")]
    epochs: Option<usize>,
    /// Length of synthesised corpora.
    #[arg(long, env = "ERBP_LENGTH", default_value_t = 200_000)]
    length: usize,
    /// Record real wall-clock times in the CSV. Off by default so re-runs
    /// are byte-identical.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ReportArgs {
    csv: PathBuf,
    /// Where to write the plottable (x,y) series file.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    csv_a: PathBuf,
    csv_b: PathBuf,
    #[arg(long, value_enum, default_value_t = SidedArg::Two)]
    sided: SidedArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SidedArg {
    Two,
    One,
}

/// Entry point used by the binary.
pub fn run_cli() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

// ---------------------------------------------------------------------------
// CSV schema
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "experiment,task,model,seed,lambda,epochs,hidden,depth,metric_name,metric_value,selected_epoch,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment: String,
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub lambda: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub depth: usize,
    pub metric_name: String,
    pub metric_value: f64,
    pub selected_epoch: usize,
    pub wall_ms: u64,
}

impl CsvRow {
    fn from_run(experiment: &str, task: &str, r: &RunResult, timing: bool) -> Self {
        CsvRow {
            experiment: experiment.to_string(),
            task: task.to_string(),
            model: r.label.clone(),
            seed: r.seed,
            lambda: r.lambda,
            epochs: r.epochs,
            hidden: r.hidden,
            depth: r.depth,
            metric_name: if r.failed() {
                "failed".to_string()
            } else {
                r.metric_name.clone()
            },
            metric_value: r.metric_value,
            selected_epoch: r.selected_epoch,
            wall_ms: if timing { r.wall_ms } else { 0 },
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.task,
            self.model,
            self.seed,
            self.lambda,
            self.epochs,
            self.hidden,
            self.depth,
            self.metric_name,
            self.metric_value,
            self.selected_epoch,
            self.wall_ms
        )
    }
}

pub fn write_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    out
}

pub fn read_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file, expected a CSV header".into(),
    })?;
    if header != CSV_HEADER {
        let got: Vec<&str> = header.split(',').collect();
        let want: Vec<&str> = CSV_HEADER.split(',').collect();
        let missing: Vec<&str> = want.iter().filter(|c| !got.contains(c)).cloned().collect();
        let extra: Vec<&str> = got.iter().filter(|c| !want.contains(c)).cloned().collect();
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "schema mismatch: missing columns {missing:?}, unexpected columns {extra:?}"
            ),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 12 fields, got {}", f.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: i + 1,
            message: format!("invalid {what}"),
        };
        rows.push(CsvRow {
            experiment: f[0].to_string(),
            task: f[1].to_string(),
            model: f[2].to_string(),
            seed: f[3].parse().map_err(|_| parse_err("seed"))?,
            lambda: f[4].parse().map_err(|_| parse_err("lambda"))?,
            epochs: f[5].parse().map_err(|_| parse_err("epochs"))?,
            hidden: f[6].parse().map_err(|_| parse_err("hidden"))?,
            depth: f[7].parse().map_err(|_| parse_err("depth"))?,
            metric_name: f[8].to_string(),
            metric_value: f[9].parse().map_err(|_| parse_err("metric_value"))?,
            selected_epoch: f[10].parse().map_err(|_| parse_err("selected_epoch"))?,
            wall_ms: f[11].parse().map_err(|_| parse_err("wall_ms"))?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn parse_task(name: &str) -> Result<TaskId> {
    match name {
        "task1" => Ok(TaskId::AbaVsOther),
        "task2" => Ok(TaskId::AbbVsOther),
        "task3" => Ok(TaskId::AbaBabVsOther),
        "task4" => Ok(TaskId::AbaVsAbb),
        "task5" => Ok(TaskId::AbcVsOther),
        "combined" => Ok(TaskId::Combined),
        "concrete_only" => Ok(TaskId::ConcreteOnly),
        other => Err(Error::Config(format!("unknown task {other:?}"))),
    }
}

const ALL_TASKS: [TaskId; 7] = [
    TaskId::AbaVsOther,
    TaskId::AbbVsOther,
    TaskId::AbaBabVsOther,
    TaskId::AbaVsAbb,
    TaskId::AbcVsOther,
    TaskId::Combined,
    TaskId::ConcreteOnly,
];

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let tasks: Vec<TaskId> = if args.task == "all" {
        ALL_TASKS.to_vec()
    } else {
        vec![parse_task(&args.task)?]
    };
    for task in tasks {
        let data = generate_task(&TaskSpec {
            task,
            seed: args.seed,
        })?;
        let path = args.out.join(format!("{}.jsonl", task.name()));
        write_file(&path, &data.to_jsonl())?;
        println!("wrote {}", path.display());
    }
    match args.corpus {
        Some(SynthCorpus::Periodic) => {
            let path = args.out.join("periodic.txt");
            write_file(&path, &synth_periodic_text(args.length, args.seed))?;
            println!("wrote {}", path.display());
        }
        Some(SynthCorpus::Walk) => {
            let path = args.out.join("walk.txt");
            write_file(&path, &synth_repeat_walk(args.length, args.seed))?;
            println!("wrote {}", path.display());
        }
        None => {}
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Seed of the i-th paired run under base seed `s`.
fn run_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1000).wrapping_add(i as u64)
}

fn classifier_cfg(model: &str, seed: u64, lambda: f64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(model);
    cfg.seed = seed;
    cfg.epochs = EPOCHS_SYNTH;
    cfg.hidden = HIDDEN_SYNTH;
    cfg.optimiser = OptimiserSpec::adam(ADAM_LR);
    match model {
        "standard" => {}
        "erbp_l1" => {
            cfg.erbp = ErbpPreset::L1;
            cfg.lambda = lambda;
            cfg.init = InitKind::Erbp;
        }
        "erbp_l2" => {
            cfg.erbp = ErbpPreset::L2;
            cfg.lambda = lambda;
            cfg.init = InitKind::Erbp;
        }
        "early" => cfg.rbp = RbpMode::Early,
        "mid" => cfg.rbp = RbpMode::Mid,
        "erbp_init" => cfg.init = InitKind::Erbp,
        other => return Err(Error::Config(format!("unknown model variant {other:?}"))),
    }
    Ok(cfg)
}

fn run_classifier_jobs(
    experiment: &str,
    jobs: Vec<(TaskId, TrainConfig)>,
    data_seed: u64,
    timing: bool,
) -> Result<(Vec<CsvRow>, Vec<(TaskId, RunResult)>)> {
    let mut datasets: HashMap<TaskId, LabelledDataset> = HashMap::new();
    for (task, _) in &jobs {
        if !datasets.contains_key(task) {
            datasets.insert(
                *task,
                generate_task(&TaskSpec {
                    task: *task,
                    seed: data_seed,
                })?,
            );
        }
    }
    let results: Vec<(TaskId, RunResult)> = jobs
        .par_iter()
        .map(|(task, cfg)| {
            train_classifier(cfg, &datasets[task]).map(|r| (*task, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = results
        .iter()
        .map(|(task, r)| CsvRow::from_run(experiment, task.name(), r, timing))
        .collect();
    Ok((rows, results))
}

/// Per-(task, model) mean/std aggregates over completed runs.
fn aggregate(rows: &[CsvRow]) -> Vec<serde_json::Value> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut failures: BTreeMap<(String, String), usize> = BTreeMap::new();
    for row in rows {
        let key = (row.task.clone(), row.model.clone());
        if row.metric_value.is_finite() {
            groups.entry(key).or_default().push(row.metric_value);
        } else {
            *failures.entry(key).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    let empty = Vec::new();
    let keys: std::collections::BTreeSet<(String, String)> = groups
        .keys()
        .cloned()
        .chain(failures.keys().cloned())
        .collect();
    for key in keys {
        let values = groups.get(&key).unwrap_or(&empty);
        let failed = failures.get(&key).copied().unwrap_or(0);
        let (mean, std) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let ms = mean_std(values).expect("non-empty");
            (ms.mean, ms.std)
        };
        out.push(json!({
            "task": key.0,
            "model": key.1,
            "mean": mean,
            "std": std,
            "n": values.len(),
            "failed": failed,
        }));
    }
    out
}

/// Paired per-seed Wilcoxon of every model against `baseline`, per task.
fn significance_vs_baseline(rows: &[CsvRow], baseline: &str) -> Vec<serde_json::Value> {
    let mut by_task_model: BTreeMap<(String, String), BTreeMap<u64, f64>> = BTreeMap::new();
    for row in rows {
        if row.metric_value.is_finite() {
            by_task_model
                .entry((row.task.clone(), row.model.clone()))
                .or_default()
                .insert(row.seed, row.metric_value);
        }
    }
    let mut out = Vec::new();
    let tasks: std::collections::BTreeSet<String> =
        by_task_model.keys().map(|(t, _)| t.clone()).collect();
    for task in tasks {
        let Some(base) = by_task_model.get(&(task.clone(), baseline.to_string())) else {
            continue;
        };
        for ((t, model), values) in &by_task_model {
            if t != &task || model == baseline {
                continue;
            }
            let paired: Vec<(f64, f64)> = values
                .iter()
                .filter_map(|(seed, v)| base.get(seed).map(|b| (*v, *b)))
                .collect();
            if paired.is_empty() {
                continue;
            }
            let a: Vec<f64> = paired.iter().map(|p| p.0).collect();
            let b: Vec<f64> = paired.iter().map(|p| p.1).collect();
            let samples = PairedSamples::new(a, b).expect("equal lengths");
            if let Ok(w) = wilcoxon_signed_rank(&samples, Sided::Two) {
                out.push(json!({
                    "task": task,
                    "model": model,
                    "baseline": baseline,
                    "statistic": w.statistic,
                    "p_value": w.p_value,
                    "method": w.method,
                    "n_effective": w.n_effective,
                }));
            }
        }
    }
    out
}

fn provenance(args: &RunArgs, lambda: f64, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "tool": "erbp",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": args.experiment.as_str(),
        "seed": args.seed,
        "seeds": args.seeds,
        "jobs": args.jobs,
        "lambda": lambda,
        "context": args.context,
        "cell": args.cell.map(|c| c.label()),
        "width_policy": args.width_policy.policy(),
        "corpus": args.corpus.as_ref().map(|p| p.display().to_string()),
        "embeddings": args.embeddings.as_ref().map(|p| p.display().to_string()),
        "epochs_override": args.epochs,
        "length": args.length,
        "timing": args.timing,
        "adam_lr": ADAM_LR,
        "sgd_lr": SGD_LR,
        "defaults": extra,
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    // Install the requested parallelism once; later calls are no-ops.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build_global();

    let (rows, summary) = match args.experiment {
        ExperimentName::Table1 => exp_table1(&args)?,
        ExperimentName::Depth => exp_depth(&args)?,
        ExperimentName::Optimiser => exp_optimiser(&args)?,
        ExperimentName::LambdaSweep => exp_lambda_sweep(&args)?,
        ExperimentName::Init => exp_init(&args)?,
        ExperimentName::Combined => exp_combined(&args)?,
        ExperimentName::ConcreteOnly => exp_concrete(&args)?,
        ExperimentName::CharLm => exp_sequence(&args, SequenceKind::Char)?,
        ExperimentName::WordLm => exp_sequence(&args, SequenceKind::Word)?,
        ExperimentName::PitchLm => exp_sequence(&args, SequenceKind::Pitch)?,
    };

    let name = args.experiment.as_str();
    let csv_path = args.out.join(format!("{name}_results.csv"));
    write_file(&csv_path, &write_csv(&rows))?;
    let summary_path = args.out.join(format!("{name}_summary.json"));
    let body = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Contract(format!("summary serialisation: {e}")))?;
    write_file(&summary_path, &body)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", summary_path.display());
    let failed = rows.iter().filter(|r| !r.metric_value.is_finite()).count();
    println!("{} runs, {} failed", rows.len(), failed);
    Ok(())
}

type Experiment = (Vec<CsvRow>, serde_json::Value);

const FIVE_TASKS: [TaskId; 5] = [
    TaskId::AbaVsOther,
    TaskId::AbbVsOther,
    TaskId::AbaBabVsOther,
    TaskId::AbaVsAbb,
    TaskId::AbcVsOther,
];

fn exp_table1(args: &RunArgs) -> Result<Experiment> {
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    let mut jobs = Vec::new();
    for task in FIVE_TASKS {
        for model in ["standard", "erbp_l1", "erbp_l2", "early", "mid"] {
            for i in 0..args.seeds {
                let mut cfg = classifier_cfg(model, run_seed(args.seed, i), lambda)?;
                if let Some(e) = args.epochs {
                    cfg.epochs = e;
                }
                jobs.push((task, cfg));
            }
        }
    }
    let (rows, _) = run_classifier_jobs("table1", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, lambda, json!({"epochs": EPOCHS_SYNTH, "hidden": HIDDEN_SYNTH})),
        "aggregates": aggregate(&rows),
        "significance": significance_vs_baseline(&rows, "standard"),
    });
    Ok((rows, summary))
}

fn exp_depth(args: &RunArgs) -> Result<Experiment> {
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    let mut jobs = Vec::new();
    for depth in 2..=5usize {
        for model in ["standard", "erbp_l1", "erbp_l2"] {
            for i in 0..args.seeds {
                let mut cfg = classifier_cfg(model, run_seed(args.seed, i), lambda)?;
                cfg.depth = depth;
                cfg.label = format!("{model}_d{depth}");
                if let Some(e) = args.epochs {
                    cfg.epochs = e;
                }
                jobs.push((TaskId::AbaVsOther, cfg));
            }
        }
    }
    let (rows, _) = run_classifier_jobs("depth", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, lambda, json!({"depths": [2,3,4,5]})),
        "aggregates": aggregate(&rows),
    });
    Ok((rows, summary))
}

fn exp_optimiser(args: &RunArgs) -> Result<Experiment> {
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    // (label, erbp?, optimiser, λ)
    let variants: Vec<(String, bool, OptimiserSpec, f64)> = vec![
        ("standard_adam".into(), false, OptimiserSpec::adam(ADAM_LR), 0.0),
        ("standard_sgd".into(), false, OptimiserSpec::sgd(SGD_LR), 0.0),
        ("erbp_l2_adam".into(), true, OptimiserSpec::adam(ADAM_LR), lambda),
        ("erbp_l2_sgd_l1".into(), true, OptimiserSpec::sgd(SGD_LR), lambda),
        ("erbp_l2_sgd_l10".into(), true, OptimiserSpec::sgd(SGD_LR), 10.0),
        ("erbp_l2_sgd_l30".into(), true, OptimiserSpec::sgd(SGD_LR), 30.0),
    ];
    let mut jobs = Vec::new();
    for (label, erbp, opt, l) in &variants {
        for i in 0..args.seeds {
            let base = if *erbp { "erbp_l2" } else { "standard" };
            let mut cfg = classifier_cfg(base, run_seed(args.seed, i), *l)?;
            cfg.label = label.clone();
            cfg.optimiser = *opt;
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            jobs.push((TaskId::AbaVsOther, cfg));
        }
    }
    let (rows, _) = run_classifier_jobs("optimiser", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, lambda, json!({"sgd_lambdas": [lambda, 10.0, 30.0]})),
        "aggregates": aggregate(&rows),
    });
    Ok((rows, summary))
}

fn exp_lambda_sweep(args: &RunArgs) -> Result<Experiment> {
    let lambdas = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0];
    let mut jobs = Vec::new();
    for model in ["erbp_l1", "erbp_l2"] {
        for &l in &lambdas {
            for i in 0..args.seeds {
                let mut cfg = classifier_cfg(model, run_seed(args.seed, i), l)?;
                if let Some(e) = args.epochs {
                    cfg.epochs = e;
                }
                jobs.push((TaskId::AbaVsOther, cfg));
            }
        }
    }
    let (rows, _) = run_classifier_jobs("lambda_sweep", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, f64::NAN, json!({"lambdas": lambdas})),
        "aggregates": aggregate_by_lambda(&rows),
    });
    Ok((rows, summary))
}

/// Per-(model, λ) aggregates for the sweep.
fn aggregate_by_lambda(rows: &[CsvRow]) -> Vec<serde_json::Value> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if row.metric_value.is_finite() {
            groups
                .entry((row.model.clone(), format!("{}", row.lambda)))
                .or_default()
                .push(row.metric_value);
        }
    }
    groups
        .into_iter()
        .map(|((model, lambda), values)| {
            let ms = mean_std(&values).expect("non-empty");
            json!({
                "model": model,
                "lambda": lambda,
                "mean": ms.mean,
                "std": ms.std,
                "n": values.len(),
            })
        })
        .collect()
}

fn exp_init(args: &RunArgs) -> Result<Experiment> {
    let mut jobs = Vec::new();
    for task in FIVE_TASKS {
        for model in ["standard", "erbp_init"] {
            for i in 0..args.seeds {
                let mut cfg = classifier_cfg(model, run_seed(args.seed, i), 0.0)?;
                if let Some(e) = args.epochs {
                    cfg.epochs = e;
                }
                jobs.push((task, cfg));
            }
        }
    }
    let (rows, _) = run_classifier_jobs("init", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, 0.0, json!({"note": "initialisation only; no deviation penalty"})),
        "aggregates": aggregate(&rows),
        "significance": significance_vs_baseline(&rows, "standard"),
    });
    Ok((rows, summary))
}

fn exp_combined(args: &RunArgs) -> Result<Experiment> {
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    let mut jobs = Vec::new();
    for model in ["standard", "erbp_l1", "erbp_l2", "early", "mid"] {
        for i in 0..args.seeds {
            let mut cfg = classifier_cfg(model, run_seed(args.seed, i), lambda)?;
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            jobs.push((TaskId::Combined, cfg));
        }
    }
    let (rows, _) = run_classifier_jobs("combined", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, lambda, json!({"classes": 4})),
        "aggregates": aggregate(&rows),
        "significance": significance_vs_baseline(&rows, "standard"),
    });
    Ok((rows, summary))
}

fn exp_concrete(args: &RunArgs) -> Result<Experiment> {
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    let mut jobs = Vec::new();
    for model in ["standard", "erbp_l2"] {
        for i in 0..args.seeds {
            let mut cfg = classifier_cfg(model, run_seed(args.seed, i), lambda)?;
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            jobs.push((TaskId::ConcreteOnly, cfg));
        }
    }
    let (rows, _) = run_classifier_jobs("concrete_only", jobs, args.seed, args.timing)?;
    let summary = json!({
        "provenance": provenance(args, lambda, json!({})),
        "aggregates": aggregate(&rows),
    });
    Ok((rows, summary))
}

// ---------------------------------------------------------------------------
// Sequence experiments
// ---------------------------------------------------------------------------

enum SequenceKind {
    Char,
    Word,
    Pitch,
}

struct LmPlan {
    task: String,
    corpus: Corpus,
    encoding: Encoding,
    context: usize,
    base_hidden: usize,
    cells: Vec<CellArg>,
    epochs: usize,
    metric: LmMetric,
}

fn sequence_plan(args: &RunArgs, kind: &SequenceKind) -> Result<LmPlan> {
    match kind {
        SequenceKind::Char => {
            let text = match &args.corpus {
                Some(path) => std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?,
                None => synth_periodic_text(args.length, args.seed),
            };
            Ok(LmPlan {
                task: "char".into(),
                corpus: Corpus::from_text(UnitKind::Char, &text, (0.5, 0.25, 0.25))?,
                encoding: Encoding::IntegerScalar { normalised: true },
                context: args.context.unwrap_or(10),
                base_hidden: 50,
                cells: args
                    .cell
                    .map(|c| vec![c])
                    .unwrap_or_else(|| vec![CellArg::Rnn, CellArg::Gru, CellArg::Lstm]),
                epochs: args.epochs.unwrap_or(2),
                metric: LmMetric::Perplexity,
            })
        }
        SequenceKind::Word => {
            let corpus_path = args.corpus.as_ref().ok_or_else(|| {
                Error::Config("word_lm requires --corpus <text file>".into())
            })?;
            let emb_path = args.embeddings.as_ref().ok_or_else(|| {
                Error::Config("word_lm requires --embeddings <table file>".into())
            })?;
            let text = std::fs::read_to_string(corpus_path)
                .map_err(|e| Error::io(corpus_path.display().to_string(), e))?;
            let dim = embedding_dimension(emb_path)?;
            let table = load_embeddings(emb_path, dim)?;
            Ok(LmPlan {
                task: "word".into(),
                corpus: Corpus::from_text(UnitKind::Word, &text, (0.5, 0.25, 0.25))?,
                encoding: Encoding::Embedding(table),
                context: args.context.unwrap_or(3),
                base_hidden: 50,
                cells: args.cell.map(|c| vec![c]).unwrap_or(vec![CellArg::Rnn]),
                epochs: args.epochs.unwrap_or(2),
                metric: LmMetric::Perplexity,
            })
        }
        SequenceKind::Pitch => {
            let text = match &args.corpus {
                Some(path) => std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?,
                None => synth_repeat_walk(args.length.min(20_000), args.seed),
            };
            Ok(LmPlan {
                task: "pitch".into(),
                corpus: Corpus::from_text(UnitKind::Integer, &text, (0.5, 0.25, 0.25))?,
                encoding: Encoding::IntegerScalar { normalised: true },
                context: args.context.unwrap_or(5),
                base_hidden: 50,
                cells: args.cell.map(|c| vec![c]).unwrap_or(vec![CellArg::Rnn]),
                epochs: args.epochs.unwrap_or(3),
                metric: LmMetric::CrossEntropy,
            })
        }
    }
}

/// Dimension of the first data line of an embedding file.
fn embedding_dimension(path: &Path) -> Result<usize> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "embedding file is empty".into(),
        })?;
    Ok(line.split_whitespace().count().saturating_sub(1))
}

/// One LM model variant: standard or ERBP at each matched width.
struct LmVariant {
    label_suffix: &'static str,
    erbp: bool,
    policy: WidthPolicy,
    hidden: usize,
    /// Explicit first-layer width for the wide standard model so its
    /// topology matches the expand-policy ERBP model (only the first
    /// hidden layer is widened).
    first_hidden: Option<usize>,
}

fn exp_sequence(args: &RunArgs, kind: SequenceKind) -> Result<Experiment> {
    let plan = sequence_plan(args, &kind)?;
    let lambda = args.lambda.unwrap_or(LM_LAMBDA);
    let name = match kind {
        SequenceKind::Char => "char_lm",
        SequenceKind::Word => "word_lm",
        SequenceKind::Pitch => "pitch_lm",
    };
    let symbol_width = plan.encoding.symbol_width(plan.corpus.vocabulary_size());
    let required = plan.context * (plan.context - 1) * symbol_width;
    let expanded = required.max(plan.base_hidden);

    // The expand-policy ERBP model is paired against a standard model with
    // the same topology (first layer widened to the comparison-matrix row
    // count, later layers at the base width); the truncate-policy model is
    // paired against the base size.
    let variants = vec![
        LmVariant {
            label_suffix: "standard_base",
            erbp: false,
            policy: WidthPolicy::Expand,
            hidden: plan.base_hidden,
            first_hidden: None,
        },
        LmVariant {
            label_suffix: "standard_wide",
            erbp: false,
            policy: WidthPolicy::Expand,
            hidden: plan.base_hidden,
            first_hidden: Some(expanded),
        },
        LmVariant {
            label_suffix: "erbp_l2_truncate",
            erbp: true,
            policy: WidthPolicy::Truncate,
            hidden: plan.base_hidden,
            first_hidden: None,
        },
        LmVariant {
            label_suffix: "erbp_l2_expand",
            erbp: true,
            policy: WidthPolicy::Expand,
            hidden: plan.base_hidden,
            first_hidden: None,
        },
    ];

    let (train, val, test) = make_windows(&plan.corpus, plan.context, &plan.encoding)?;
    let vocab = plan.corpus.vocabulary_size();

    let mut jobs: Vec<(CellArg, TrainConfig)> = Vec::new();
    for cell in &plan.cells {
        for v in &variants {
            for i in 0..args.seeds {
                let mut cfg = TrainConfig::new(&format!("{}_{}", cell.label(), v.label_suffix));
                cfg.seed = run_seed(args.seed, i);
                cfg.epochs = plan.epochs;
                cfg.hidden = v.hidden;
                cfg.first_hidden = v.first_hidden;
                cfg.depth = 2;
                cfg.context = Some(plan.context);
                cfg.width_policy = v.policy;
                cfg.optimiser = OptimiserSpec::adam(LM_ADAM_LR);
                if v.erbp {
                    cfg.erbp = ErbpPreset::L2;
                    cfg.lambda = lambda;
                    cfg.init = InitKind::Erbp;
                }
                jobs.push((*cell, cfg));
            }
        }
    }

    let results: Vec<(CellArg, RunResult)> = jobs
        .par_iter()
        .map(|(cell, cfg)| {
            train_lm(
                cfg,
                (&train, &val, &test),
                vocab,
                cell.kind(),
                plan.metric,
            )
            .map(|r| (*cell, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<CsvRow> = results
        .iter()
        .map(|(_, r)| CsvRow::from_run(name, &plan.task, r, args.timing))
        .collect();

    // Paired comparisons: per-seed metric wins and per-(seed, segment)
    // Wilcoxon, ERBP vs its width-matched standard model.
    let mut comparisons = Vec::new();
    for cell in &plan.cells {
        for (erbp_suffix, std_suffix) in [
            ("erbp_l2_truncate", "standard_base"),
            ("erbp_l2_expand", "standard_wide"),
        ] {
            let pick = |suffix: &str| -> Vec<&RunResult> {
                results
                    .iter()
                    .filter(|(c, r)| {
                        *c == *cell
                            && r.label == format!("{}_{}", cell.label(), suffix)
                            && !r.failed()
                    })
                    .map(|(_, r)| r)
                    .collect()
            };
            let erbp_runs = pick(erbp_suffix);
            let std_runs = pick(std_suffix);
            let mut wins = 0usize;
            let mut pairs = 0usize;
            let mut seg_a = Vec::new();
            let mut seg_b = Vec::new();
            for er in &erbp_runs {
                if let Some(sr) = std_runs.iter().find(|r| r.seed == er.seed) {
                    pairs += 1;
                    if er.metric_value <= sr.metric_value {
                        wins += 1;
                    }
                    for (x, y) in er.test_segment_nll.iter().zip(&sr.test_segment_nll) {
                        seg_a.push(*x);
                        seg_b.push(*y);
                    }
                }
            }
            let wilcoxon = if seg_a.is_empty() {
                None
            } else {
                PairedSamples::new(seg_a, seg_b)
                    .and_then(|s| wilcoxon_signed_rank(&s, Sided::Two))
                    .ok()
            };
            comparisons.push(json!({
                "cell": cell.label(),
                "erbp": format!("{}_{}", cell.label(), erbp_suffix),
                "standard": format!("{}_{}", cell.label(), std_suffix),
                "paired_seeds": pairs,
                "erbp_wins": wins,
                "segment_wilcoxon": wilcoxon.map(|w| json!({
                    "statistic": w.statistic,
                    "p_value": w.p_value,
                    "method": w.method,
                    "n_effective": w.n_effective,
                })),
            }));
        }
    }

    let summary = json!({
        "provenance": provenance(args, lambda, json!({
            "context": plan.context,
            "base_hidden": plan.base_hidden,
            "expanded_hidden": expanded,
            "epochs": plan.epochs,
            "vocabulary": vocab,
            "encoding_width": symbol_width,
            "depth": 2,
        })),
        "aggregates": aggregate(&rows),
        "paired_comparisons": comparisons,
    });
    Ok((rows, summary))
}

// ---------------------------------------------------------------------------
// report / stats
// ---------------------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.csv)
        .map_err(|e| Error::io(args.csv.display().to_string(), e))?;
    let rows = read_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::Contract("no runs in results file".into()));
    }
    let experiment = rows[0].experiment.clone();
    println!("experiment: {experiment} ({} runs)", rows.len());
    println!("{:<16} {:<24} {:>18} {:>4} {:>7}", "task", "model", "mean (std)", "n", "failed");
    for entry in aggregate(&rows) {
        println!(
            "{:<16} {:<24} {:>18} {:>4} {:>7}",
            entry["task"].as_str().unwrap_or(""),
            entry["model"].as_str().unwrap_or(""),
            format!(
                "{:.2} ({:.2})",
                entry["mean"].as_f64().unwrap_or(f64::NAN),
                entry["std"].as_f64().unwrap_or(f64::NAN)
            ),
            entry["n"],
            entry["failed"],
        );
    }
    let sig = significance_vs_baseline(&rows, "standard");
    if !sig.is_empty() {
        println!("\nWilcoxon vs standard (two-sided, paired by seed):");
        for s in sig {
            println!(
                "  {} {}: W = {}, p = {}",
                s["task"].as_str().unwrap_or(""),
                s["model"].as_str().unwrap_or(""),
                s["statistic"],
                s["p_value"],
            );
        }
    }

    // Plot series: one (x=lambda, y=mean metric) line per model when the file
    // sweeps λ, otherwise one (x=index, y=mean) line per task/model group.
    let plot_path = args
        .plot
        .unwrap_or_else(|| args.csv.with_extension("plot.dat"));
    let mut plot = String::from("# series x y\n");
    let lambdas: std::collections::BTreeSet<String> =
        rows.iter().map(|r| format!("{}", r.lambda)).collect();
    if lambdas.len() > 1 {
        for entry in aggregate_by_lambda(&rows) {
            plot.push_str(&format!(
                "{} {} {}\n",
                entry["model"].as_str().unwrap_or(""),
                entry["lambda"].as_str().unwrap_or(""),
                entry["mean"],
            ));
        }
    } else {
        for (i, entry) in aggregate(&rows).iter().enumerate() {
            plot.push_str(&format!(
                "{}/{} {} {}\n",
                entry["task"].as_str().unwrap_or(""),
                entry["model"].as_str().unwrap_or(""),
                i,
                entry["mean"],
            ));
        }
    }
    write_file(&plot_path, &plot)?;
    println!("\nwrote {}", plot_path.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<CsvRow>> {
        let text =
            std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        read_csv(&text)
    };
    let a = read(&args.csv_a)?;
    let b = read(&args.csv_b)?;
    let index = |rows: &[CsvRow]| -> BTreeMap<(String, u64), f64> {
        rows.iter()
            .filter(|r| r.metric_value.is_finite())
            .map(|r| ((r.task.clone(), r.seed), r.metric_value))
            .collect()
    };
    let ia = index(&a);
    let ib = index(&b);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (key, va) in &ia {
        if let Some(vb) = ib.get(key) {
            xs.push(*va);
            ys.push(*vb);
        }
    }
    if xs.is_empty() {
        return Err(Error::Contract(
            "no (task, seed) pairs shared between the two files".into(),
        ));
    }
    let sided = match args.sided {
        SidedArg::Two => Sided::Two,
        SidedArg::One => Sided::One,
    };
    let n = xs.len();
    let samples = PairedSamples::new(xs, ys)?;
    let w = wilcoxon_signed_rank(&samples, sided)?;
    let out = json!({
        "pairs": n,
        "statistic": w.statistic,
        "p_value": w.p_value,
        "method": w.method,
        "n_effective": w.n_effective,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&out)
            .map_err(|e| Error::Contract(format!("stats serialisation: {e}")))?
    );
    Ok(())
}
