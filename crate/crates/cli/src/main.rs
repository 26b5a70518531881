use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use ucpo_core::generators::{generate, generate_dataset, Difficulty, GenConfig};
use ucpo_core::harness::{
    ablate, ablation_csv, evaluate, grad_check, load_checkpoint, params_hash, save_checkpoint, seed_override,
    standard_cases, summary_csv, train, write_records_jsonl, AblationGrid, DataSource, EvalConfig, TrainConfig,
};
use ucpo_core::losses::{BetaKind, LossKind, Pairing};
use ucpo_core::oracle::{solve_exact, OracleStatus};
use ucpo_core::policy::{PolicyHyper, PolicyParams, Preset};
use ucpo_core::problems::{read_jsonl, write_jsonl, LagrangianConfig, ProblemInstance, Variant};
use ucpo_core::ranking::RelationKind;
use ucpo_core::Exec;

#[derive(Parser)]
#[command(name = "ucpo", version, about = "Preference-based fine-tuning of constrained routing policies")]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate instances as JSONL.
    Gen(GenArgs),
    /// Solve instances exactly; one JSON result per line.
    Oracle(OracleArgs),
    /// Train or fine-tune a policy.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a settings grid.
    Ablate(AblateArgs),
    /// Compare loss gradients with central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    difficulty: Option<Difficulty>,
    #[arg(long)]
    seed: Option<u64>,
    /// Easy/Medium TSPTW windows anchored on a random tour.
    #[arg(long)]
    anchored: bool,
    /// Keep only instances the oracle proves feasible.
    #[arg(long)]
    certify: bool,
    #[arg(long, default_value_t = 0)]
    offset: u64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    /// Node-expansion budget per instance.
    #[arg(long, default_value_t = 5_000_000)]
    budget: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossFlags {
    /// Preference relation: default, c, p, d or t:<alpha>.
    #[arg(long)]
    relation: Option<RelationKind>,
    /// ucpo or reinforce.
    #[arg(long)]
    loss: Option<LossKind>,
    /// default, d, p, c or c:<C>.
    #[arg(long)]
    beta: Option<BetaKind>,
    /// default, subsets, bw or argmax.
    #[arg(long)]
    pairing: Option<Pairing>,
    #[arg(long)]
    tie_alpha: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Uniform constraint multiplier.
    #[arg(long)]
    lambda: Option<f64>,
    /// tiny or small.
    #[arg(long)]
    policy_preset: Option<Preset>,
}

impl LossFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(r) = self.relation {
            cfg.relation = r;
        }
        if let Some(k) = self.loss {
            cfg.loss.kind = k;
        }
        if let Some(b) = self.beta {
            cfg.loss.beta = b;
        }
        if let Some(p) = self.pairing {
            cfg.loss.pairing = p;
        }
        if let Some(a) = self.tie_alpha {
            cfg.loss.tie_alpha = Some(a);
        }
        if let Some(k) = self.stride {
            cfg.loss.stride_k = k;
        }
        if let Some(l) = self.lambda {
            cfg.lagrangian = LagrangianConfig::uniform(l);
        }
        if let Some(p) = self.policy_preset {
            cfg.policy = PolicyHyper::preset(p);
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON TrainConfig; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    loss: LossFlags,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_in: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Fixed training set (JSONL) instead of on-the-fly generation.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Held-out set for periodic evaluation.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    optima: Option<PathBuf>,
    /// Per-epoch metrics as JSONL.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Oracle output from `ucpo oracle`.
    #[arg(long)]
    optima: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// Disable the 8-fold augmentation.
    #[arg(long)]
    no_aug: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value = "UCPO")]
    label: String,
}

#[derive(Args)]
struct AblateArgs {
    /// Base JSON TrainConfig.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON AblationGrid.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    eval_data: PathBuf,
    #[arg(long)]
    optima: Option<PathBuf>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Full per-cell results as JSON.
    #[arg(long)]
    cells: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value = "tsptw")]
    variant: Variant,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tiny")]
    policy_preset: Preset,
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    /// Check every k-th parameter.
    #[arg(long, default_value_t = 1)]
    param_stride: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_instances(path: &Path) -> Result<Vec<ProblemInstance>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

/// Optimal objectives from `ucpo oracle` output, by line.
fn read_optima(path: &Path, expected: usize) -> Result<Vec<Option<f64>>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: OracleRow = serde_json::from_str(&line)?;
        out.push((row.status == OracleStatus::Optimal).then_some(row.best_objective).flatten());
    }
    if out.len() != expected {
        bail!("{} oracle rows for {} instances", out.len(), expected);
    }
    Ok(out)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct OracleRow {
    instance_id: usize,
    status: OracleStatus,
    best_objective: Option<f64>,
    best_trajectory: Option<Vec<usize>>,
    nodes_expanded: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn seed_or(flag: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(seed_override()?.or(flag).unwrap_or(fallback))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.cmd {
        Cmd::Gen(a) => {
            let mut cfg: GenConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => GenConfig::default(),
            };
            if let Some(v) = a.variant {
                cfg.variant = v;
            }
            if let Some(n) = a.n {
                cfg.n = n;
            }
            if let Some(d) = a.difficulty {
                cfg.difficulty = d;
            }
            cfg.seed = seed_or(a.seed, cfg.seed)?;
            cfg.anchored |= a.anchored;
            cfg.certify |= a.certify;
            let data = generate_dataset(&cfg, a.offset, a.count, exec)?;
            let mut w = create(&a.out)?;
            write_jsonl(&mut w, &data)?;
            w.flush()?;
            eprintln!("wrote {} instances to {}", data.len(), a.out.display());
        }
        Cmd::Oracle(a) => {
            let data = read_instances(&a.data)?;
            let results = exec.map(&data, |_, inst| solve_exact(inst, a.budget));
            let mut w = create(&a.out)?;
            let mut optimal = 0;
            for (i, r) in results.into_iter().enumerate() {
                optimal += usize::from(r.status == OracleStatus::Optimal);
                let row = OracleRow {
                    instance_id: i,
                    status: r.status,
                    best_objective: r.best_objective,
                    best_trajectory: r.best_trajectory.map(|t| t.steps),
                    nodes_expanded: r.nodes_expanded,
                };
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            eprintln!("{optimal}/{} solved to optimality", data.len());
        }
        Cmd::Train(a) => {
            let mut cfg: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            a.loss.apply(&mut cfg);
            if a.epochs.is_some() {
                cfg.epochs = a.epochs;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            if a.samples.is_some() {
                cfg.samples = a.samples;
            }
            if let Some(lr) = a.lr {
                cfg.optimizer.lr = lr;
            }
            if a.checkpoint_in.is_some() {
                cfg.checkpoint_in = a.checkpoint_in.clone();
            }
            cfg.seed = seed_or(a.seed, cfg.seed)?;
            if cli.sequential {
                cfg.exec = Exec::Sequential;
                cfg.eval.exec = Exec::Sequential;
            }
            let source = match &a.train_data {
                Some(p) => DataSource::Fixed(read_instances(p)?),
                None => DataSource::Generate(cfg.data.clone()),
            };
            let eval_data = a.eval_data.as_deref().map(read_instances).transpose()?;
            let optima = match (&a.optima, &eval_data) {
                (Some(p), Some(d)) => Some(read_optima(p, d.len())?),
                (Some(_), None) => bail!("--optima needs --eval-data"),
                _ => None,
            };
            let eval_set = eval_data.as_deref().map(|d| (d, optima.as_deref()));
            let out = train(&cfg, &source, eval_set)?;
            save_checkpoint(&a.checkpoint_out, &out.params, out.e_base)?;
            if let Some(p) = &a.history {
                let mut w = create(p)?;
                for r in out.history.iter().chain(&out.evals) {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            if let Some(last) = out.history.last() {
                eprintln!(
                    "epoch {} loss {:.5} train infeasible {:.3}",
                    last.epoch, last.loss_total, last.infeasible_rate
                );
            }
            if let Some(last) = out.evals.last() {
                eprintln!("held-out infeasible {:.3} gap {:?}", last.infeasible_rate, last.mean_gap_pct);
            }
            println!("{}", params_hash(&out.params));
        }
        Cmd::Eval(a) => {
            let ck = load_checkpoint(&a.checkpoint)?;
            let data = read_instances(&a.data)?;
            let optima = a.optima.as_deref().map(|p| read_optima(p, data.len())).transpose()?;
            let cfg = EvalConfig {
                n_samples: a.samples,
                aug8: !a.no_aug,
                seed: seed_or(a.seed, 0)?,
                exec,
                ..EvalConfig::default()
            };
            let out = evaluate(&ck.params, &data, optima.as_deref(), &cfg)?;
            if let Some(p) = &a.records {
                let mut w = create(p)?;
                write_records_jsonl(&mut w, &out.records)?;
                w.flush()?;
            }
            let table = summary_csv(&[(a.label, out.metrics)])?;
            match &a.summary {
                Some(p) => std::fs::write(p, &table)?,
                None => print!("{table}"),
            }
        }
        Cmd::Ablate(a) => {
            let mut cfg: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = seed_or(a.seed, cfg.seed)?;
            if cli.sequential {
                cfg.exec = Exec::Sequential;
            }
            let grid: AblationGrid = read_json(&a.grid)?;
            let data = read_instances(&a.eval_data)?;
            let optima = a.optima.as_deref().map(|p| read_optima(p, data.len())).transpose()?;
            let eval = EvalConfig {
                n_samples: a.eval_samples,
                seed: cfg.seed,
                exec,
                ..cfg.eval.clone()
            };
            let cells = ablate(
                &cfg,
                &grid,
                &DataSource::Generate(cfg.data.clone()),
                &data,
                optima.as_deref(),
                &eval,
            );
            std::fs::write(&a.out, ablation_csv(&cells)?)?;
            if let Some(p) = &a.cells {
                std::fs::write(p, serde_json::to_string_pretty(&cells)?)?;
            }
            let failed = cells.iter().filter(|c| c.metrics().is_none()).count();
            eprintln!("{} cells, {failed} failed", cells.len());
        }
        Cmd::GradCheck(a) => {
            let gen = GenConfig::new(a.variant, a.n, Difficulty::Medium, seed_or(Some(a.seed), 0)?);
            let inst = generate(&gen, 0)?;
            let params = PolicyParams::init(PolicyHyper::preset(a.policy_preset), gen.seed)?;
            let reports = grad_check(
                &inst,
                &params,
                a.samples,
                gen.seed,
                None,
                &LagrangianConfig::default(),
                &standard_cases(),
                a.h,
                a.param_stride,
                exec,
            )?;
            let mut worst = 0.0f64;
            for r in &reports {
                println!(
                    "{:<18} loss {:>12.6} max_rel_err {:.3e} (param {}, {} checked)",
                    r.case, r.loss, r.max_rel_err, r.worst_param, r.checked
                );
                worst = worst.max(r.max_rel_err);
            }
            if !(worst < a.tolerance) {
                bail!("max relative error {worst:.3e} exceeds {:.1e}", a.tolerance);
            }
        }
    }
    Ok(())
}
