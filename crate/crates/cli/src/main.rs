use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pomo_core::cvrp::{brute_force_optimal, clarke_wright, generate_set, parse_records, write_records, DemandDistribution};
use pomo_core::cvrplib::{read_best_known, write_bucket_csv, write_gap_csv, Rounding};
use pomo_core::eval::{eval_cvrplib, eval_dataset, list_vrp_files, write_results_csv, InferConfig};
use pomo_core::model::{Mode, Model};
use pomo_core::policy::{DecodeMode, ModelConfig};
use pomo_core::trainer::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default output directory when `--out`/`--out-dir` is not given.
const OUT_DIR_ENV: &str = "POMO_OUT_DIR";
const BRUTE_FORCE_LIMIT: usize = 9;

#[derive(Parser)]
#[command(name = "pomo", version, about = "Multi-start policy optimization for capacitated vehicle routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a shard of random instances.
    Gen(GenArgs),
    /// Train a policy (and, in pomo+ mode, the start-node agent).
    Train(Box<TrainArgs>),
    /// Solve every instance of a shard and write per-instance costs.
    Eval(EvalArgs),
    /// Solve a directory of CVRPLIB files and report gaps to best-known costs.
    Cvrplib(CvrplibArgs),
    /// Solve a shard with Clarke-Wright and, for small instances, brute force.
    Oracle(OracleArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pomo,
    #[value(name = "pomo+")]
    PomoPlus,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pomo => Mode::Pomo,
            ModeArg::PomoPlus => Mode::PomoPlus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DemandArg {
    Integer,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    Exact,
    Nearest,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "integer")]
    demand: DemandArg,
    #[arg(long, default_value = "inst")]
    prefix: String,
    /// Output file; defaults to `cvrp<n>_seed<seed>.txt` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "pomo")]
    mode: ModeArg,
    /// Small model and budget for a single CPU.
    #[arg(long)]
    desk_scale: bool,
    /// `key=value` settings applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint with the same mode and architecture.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    instances_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    validation_size: Option<usize>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long)]
    aux_lr: Option<f64>,
    #[arg(long)]
    aux_accum_steps: Option<usize>,
    #[arg(long)]
    aux_k: Option<usize>,
    #[arg(long)]
    aux_temperature: Option<f64>,
    #[arg(long, value_enum)]
    demand: Option<DemandArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model checkpoint; an untrained desk-scale model is used when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Expected mode; a checkpoint of the other mode is rejected.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Deterministic argmax decoding instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Rollout sets per augmentation when sampling.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Instance shard written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Per-instance CSV; defaults to `eval_<shard>.csv` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvrplibArgs {
    #[arg(long)]
    dir: PathBuf,
    /// CSV with columns name,cost,k.
    #[arg(long)]
    best_known: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    rounding: RoundingArg,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(*a),
        Command::Eval(a) => eval(a),
        Command::Cvrplib(a) => cvrplib(a),
        Command::Oracle(a) => oracle(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn demand(d: DemandArg) -> DemandDistribution {
    match d {
        DemandArg::Integer => DemandDistribution::IntegerUniform,
        DemandArg::Continuous => DemandDistribution::ContinuousUniform,
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let set = generate_set(a.n, a.count, demand(a.demand), &a.prefix, &mut rng)?;
    let path = a
        .out
        .unwrap_or_else(|| out_dir().join(format!("cvrp{}_seed{}.txt", a.n, a.seed)));
    create_parent(&path)?;
    fs::write(&path, write_records(&set)).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} instances to {}", set.len(), path.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mode = Mode::from(a.mode);
    let mut cfg = if a.desk_scale {
        TrainConfig::desk(a.n, mode)
    } else {
        TrainConfig::new(a.n, mode)
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
        // Explicit flags win over the file.
        cfg.n_customers = a.n;
        cfg.mode = mode;
    }
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    apply!(epochs, instances_per_epoch, batch_size, validation_size, policy_lr, aux_lr, aux_accum_steps, aux_temperature, seed);
    if let Some(k) = a.aux_k {
        cfg.aux_k = Some(k);
    }
    if let Some(d) = a.demand {
        cfg.demand = demand(d);
    }
    cfg.out_dir = Some(a.out_dir.unwrap_or_else(|| out_dir().join(format!("train_{}_n{}", mode, a.n))));
    let mut trainer = match &a.resume {
        Some(path) => Trainer::with_model(cfg.clone(), Model::load(path)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    let out = trainer.fit()?;
    let dir = cfg.out_dir.as_deref().expect("set above");
    if let Some(last) = out.epochs.last() {
        println!(
            "trained {} epochs ({} steps): validation mean reward {:.4} (untrained {:.4})",
            out.epochs.len(),
            last.steps,
            last.validation.mean_reward,
            out.initial_validation.mean_reward
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn load_model(d: &DecodeArgs) -> Result<Model> {
    let model = match &d.checkpoint {
        Some(path) => Model::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let mode = d.mode.map(Mode::from).unwrap_or(Mode::Pomo);
            log::warn!("no checkpoint given; using an untrained {mode} model");
            Model::new(ModelConfig::desk(), mode, d.seed)?
        }
    };
    if let Some(expected) = d.mode.map(Mode::from) {
        if expected != model.mode {
            bail!("checkpoint holds a {} model but --mode {} was requested", model.mode, expected);
        }
    }
    Ok(model)
}

fn infer_config(d: &DecodeArgs) -> InferConfig {
    InferConfig {
        decode: if d.greedy { DecodeMode::Greedy } else { DecodeMode::Sample },
        augment: !d.no_augment,
        samples: d.samples,
        seed: d.seed,
        aux_k: None,
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.decode)?;
    let text = fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let instances = parse_records(&text)?;
    let report = eval_dataset(&model, &instances, &infer_config(&a.decode))?;
    let path = a.out.unwrap_or_else(|| {
        let stem = a.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out_dir().join(format!("eval_{stem}.csv"))
    });
    create_parent(&path)?;
    write_results_csv(BufWriter::new(File::create(&path)?), &report.results)?;
    println!("mean cost {:.6} over {} instances; results in {}", report.mean_cost, report.results.len(), path.display());
    Ok(())
}

fn cvrplib(a: CvrplibArgs) -> Result<()> {
    let model = load_model(&a.decode)?;
    let best: BTreeMap<_, _> = read_best_known(File::open(&a.best_known).with_context(|| format!("opening {}", a.best_known.display()))?)?;
    let files = list_vrp_files(&a.dir)?;
    if files.is_empty() {
        bail!("no .vrp files in {}", a.dir.display());
    }
    let rounding = match a.rounding {
        RoundingArg::Exact => Rounding::Exact,
        RoundingArg::Nearest => Rounding::Nearest,
    };
    let report = eval_cvrplib(&model, &files, &best, &infer_config(&a.decode), rounding)?;
    let dir = a.out_dir.unwrap_or_else(out_dir);
    fs::create_dir_all(&dir)?;
    let gaps = dir.join("cvrplib_gaps.csv");
    let buckets = dir.join("cvrplib_buckets.csv");
    write_gap_csv(BufWriter::new(File::create(&gaps)?), &report.reports)?;
    write_bucket_csv(BufWriter::new(File::create(&buckets)?), &report.buckets)?;
    println!("{} instances evaluated; wrote {} and {}", report.reports.len(), gaps.display(), buckets.display());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let text = fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let instances = parse_records(&text)?;
    let path = a.out.unwrap_or_else(|| {
        let stem = a.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out_dir().join(format!("oracle_{stem}.csv"))
    });
    create_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["id", "n", "clarke_wright", "brute_force"])?;
    let (mut cw_sum, mut bf_sum, mut bf_count) = (0.0, 0.0, 0usize);
    for inst in &instances {
        let (_, cw) = clarke_wright(inst);
        cw_sum += cw;
        let bf = if inst.n() <= BRUTE_FORCE_LIMIT {
            let (_, c) = brute_force_optimal(inst)?;
            bf_sum += c;
            bf_count += 1;
            c.to_string()
        } else {
            String::new()
        };
        w.write_record([inst.id.clone(), inst.n().to_string(), cw.to_string(), bf])?;
    }
    w.flush()?;
    println!("Clarke-Wright mean {:.6} over {} instances", cw_sum / instances.len().max(1) as f64, instances.len());
    if bf_count > 0 {
        println!("brute-force mean {:.6} over {} instances", bf_sum / bf_count as f64, bf_count);
    }
    println!("results in {}", path.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    let mut total = 0;
    for seed in 0..a.seeds {
        let mut checks = pomo_numerics::gradcheck::primitive_suite(seed)?;
        checks.extend(pomo_core::gradcheck::composite_suite(seed)?);
        for c in checks {
            total += 1;
            worst = worst.max(c.max_rel_error);
            if !c.passed() {
                failed.push(format!("{} ({:.3e})", c.name, c.max_rel_error));
            }
        }
    }
    println!("{total} checks over {} seeds, worst relative error {worst:.3e}", a.seeds);
    if !failed.is_empty() {
        bail!("{} checks failed: {}", failed.len(), failed.join(", "));
    }
    Ok(())
}
