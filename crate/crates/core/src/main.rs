//! Command-line front end: train or evaluate single runs, execute sweep
//! configs, solve the dual reference, check gradients, and summarize
//! result tables.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdnet::autodiff::gradcheck;
use pdnet::baselines::{cmac_dual_oracle, OracleSolveConfig};
use pdnet::distributed::{train_distributed, DistributedPolicy, Topology};
use pdnet::harness::{
    parse_problem, resolve_config, resolve_out_dir, run_experiment_with, run_name, scale_defaults,
    summarize, sweep_seed, write_outputs, HarnessError, ResultTable,
};
use pdnet::problems::{ProblemKind, ProblemSpec};
use pdnet::trainer::{
    derive_seed, evaluate, train, CentralizedPolicy, EvalConfig, EvalReport, TrainReport,
};

type CmdResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "pdnet", version, about = "Constrained training of power-control policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one policy; writes a checkpoint and a convergence trace.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on the standard test stream.
    Eval(EvalArgs),
    /// Run a sweep config; writes a result table, plotspec and traces.
    Sweep(SweepArgs),
    /// Solve the dual reference for the multiple-access problem.
    Oracle(OracleArgs),
    /// Finite-difference checks of all graph operations; exit 0 iff all pass.
    Gradcheck(GradcheckArgs),
    /// Summarize a result table, averaged over seeds.
    Report(ReportArgs),
}

/// Problem selection shared by the single-run subcommands.
#[derive(Args)]
struct ProblemArgs {
    /// Problem id: p3 (sum capacity), p4 (sum rate) or p5 (min rate).
    #[arg(long, default_value = "p3")]
    problem: String,
    /// Node count; defaults to 2 for p3 and 3 for p4/p5.
    #[arg(long)]
    n: Option<usize>,
    /// Linear average power equals 10^(snr/10).
    #[arg(long = "snr-db", default_value_t = 5.0)]
    snr_db: f64,
    /// Interference-temperature bound (p3 only).
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Peak over average power ratio (p4/p5 only).
    #[arg(long = "peak-ratio", default_value_t = 1.0)]
    peak_ratio: f64,
}

impl ProblemArgs {
    fn spec(&self) -> Result<ProblemSpec, HarnessError> {
        let kind = parse_problem(&self.problem)?;
        let n = self.n.unwrap_or(match kind {
            ProblemKind::CmacSumCapacity => 2,
            _ => 3,
        });
        if n == 0 {
            return Err(HarnessError::Config("n must be at least 1".into()));
        }
        if kind != ProblemKind::CmacSumCapacity && self.peak_ratio < 1.0 {
            return Err(HarnessError::Config("peak_ratio must be at least 1".into()));
        }
        Ok(ProblemSpec::from_snr_db(kind, n, self.snr_db, self.gamma, self.peak_ratio))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// "centralized" or "distributed".
    #[arg(long, default_value = "centralized")]
    method: String,
    /// Backhaul bits per link (distributed method).
    #[arg(long = "backhaul-bits", default_value_t = 1)]
    backhaul_bits: u32,
    /// Trainer defaults: "desk" or "paper".
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden-layer count override for the centralized network.
    #[arg(long = "hidden-layers")]
    hidden_layers: Option<usize>,
    #[arg(long = "hidden-width")]
    hidden_width: Option<usize>,
    #[arg(long = "eval-size", default_value_t = 10_000)]
    eval_size: usize,
    /// Output directory; default PDNET_OUT, then "results".
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// "centralized" or "distributed".
    #[arg(long, default_value = "centralized")]
    method: String,
    #[arg(long = "backhaul-bits", default_value_t = 1)]
    backhaul_bits: u32,
    /// Checkpoint file (centralized) or directory (distributed).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-stream seed; defaults to the problem's standard stream.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "hidden-layers")]
    hidden_layers: Option<usize>,
    #[arg(long = "hidden-width")]
    hidden_width: Option<usize>,
    #[arg(long = "eval-size", default_value_t = 10_000)]
    eval_size: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Preset name or TOML config path.
    #[arg(long)]
    config: String,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's scale ("desk" or "paper").
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Seed of the sample set the duals are tuned on.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "saa-size", default_value_t = 100_000)]
    saa_size: usize,
    #[arg(long = "eval-size", default_value_t = 10_000)]
    eval_size: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases per operation.
    #[arg(long = "per-op", default_value_t = 12)]
    per_op: usize,
    /// Print passing cases too.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Result CSV to summarize.
    #[arg(long, conflicts_with = "config")]
    csv: Option<PathBuf>,
    /// Config or preset name whose table lives at <out>/<name>.csv.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => run_train(args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::Sweep(args) => run_sweep(args),
        Cmd::Oracle(args) => run_oracle(args),
        Cmd::Gradcheck(args) => {
            return if run_gradcheck(args) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
        Cmd::Report(args) => run_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

// ── subcommands ─────────────────────────────────────────────────────────

fn run_train(args: TrainArgs) -> CmdResult {
    let problem = args.problem.spec()?;
    let mut cfg = scale_defaults(&args.scale)?;
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    cfg.seed = args.seed;
    let out = resolve_out_dir(args.out.as_deref(), None);
    fs::create_dir_all(&out)?;
    let eval_cfg = EvalConfig::new(args.eval_size, sweep_seed(&problem));

    match args.method.as_str() {
        "centralized" => {
            let run = run_name("centralized", args.problem.snr_db, None, args.seed);
            eprintln!("training {run}: {} iterations, batch {}", cfg.iters, cfg.batch);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
            let mut policy = match (args.hidden_layers, args.hidden_width) {
                (None, None) => CentralizedPolicy::new(&problem, &mut rng),
                (layers, width) => {
                    let (dl, dw) = pdnet::trainer::default_centralized_arch(&problem);
                    CentralizedPolicy::with_arch(
                        &problem,
                        layers.unwrap_or(dl),
                        width.unwrap_or(dw),
                        &mut rng,
                    )
                }
            };
            let report = train(&mut policy, &problem, &cfg)?;
            let ckpt = out.join(format!("{run}.ckpt"));
            policy.save(&ckpt)?;
            report.log.write_csv(&out.join(format!("{run}-trace.csv")))?;
            print_train_summary(&report);
            println!("checkpoint {}", ckpt.display());
            print_eval(&evaluate(&mut policy, &problem, &eval_cfg)?);
        }
        "distributed" => {
            let run = run_name("distributed", args.problem.snr_db, Some(args.backhaul_bits), args.seed);
            eprintln!("training {run}: {} iterations, batch {}", cfg.iters, cfg.batch);
            let topology = Topology::uniform(problem.n, args.backhaul_bits as f64);
            let (mut policy, report) = train_distributed(&problem, topology, &cfg)?;
            let dir = out.join(&run);
            policy.save_dir(&dir)?;
            report.log.write_csv(&out.join(format!("{run}-trace.csv")))?;
            print_train_summary(&report);
            println!("checkpoint {}", dir.display());
            let mut eval_cfg = eval_cfg;
            eval_cfg.stochastic = true;
            print_eval(&evaluate(&mut policy, &problem, &eval_cfg)?);
        }
        other => Err(format!("method must be centralized or distributed, got '{other}'"))?,
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> CmdResult {
    let problem = args.problem.spec()?;
    let stream = args.seed.unwrap_or_else(|| sweep_seed(&problem));
    let mut cfg = EvalConfig::new(args.eval_size, stream);
    // Parameters are overwritten by the checkpoint; the init stream only
    // needs to produce the right shapes.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match args.method.as_str() {
        "centralized" => {
            let mut policy = match (args.hidden_layers, args.hidden_width) {
                (None, None) => CentralizedPolicy::new(&problem, &mut rng),
                (layers, width) => {
                    let (dl, dw) = pdnet::trainer::default_centralized_arch(&problem);
                    CentralizedPolicy::with_arch(
                        &problem,
                        layers.unwrap_or(dl),
                        width.unwrap_or(dw),
                        &mut rng,
                    )
                }
            };
            policy.load(&args.checkpoint)?;
            print_eval(&evaluate(&mut policy, &problem, &cfg)?);
        }
        "distributed" => {
            let topology = Topology::uniform(problem.n, args.backhaul_bits as f64);
            let mut policy = DistributedPolicy::new(&problem, topology, &mut rng, derive_seed(stream, "binarize"));
            policy.load_dir(&args.checkpoint)?;
            cfg.stochastic = true;
            print_eval(&evaluate(&mut policy, &problem, &cfg)?);
        }
        other => Err(format!("method must be centralized or distributed, got '{other}'"))?,
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> CmdResult {
    let mut cfg = resolve_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(scale) = &args.scale {
        cfg.scale = scale.clone();
    }
    cfg.validate()?;
    let out = resolve_out_dir(args.out.as_deref(), Some(&cfg));
    eprintln!(
        "sweep {}: problem {}, {} snr points, methods [{}], seeds {:?}",
        cfg.name,
        cfg.problem,
        cfg.snr_db.len(),
        cfg.methods.join(", "),
        cfg.seeds
    );
    let output = run_experiment_with(&cfg, |msg| eprintln!("  {msg}"))?;
    let paths = write_outputs(&output, &out)?;
    for p in paths.iter().take(2) {
        println!("wrote {}", p.display());
    }
    if !output.logs.is_empty() {
        println!(
            "wrote {} convergence traces under {}",
            output.logs.len(),
            out.join(format!("{}-logs", cfg.name)).display()
        );
    }
    print_summary(&output.table);
    Ok(())
}

fn run_oracle(args: OracleArgs) -> CmdResult {
    let problem = args.problem.spec()?;
    let solve = OracleSolveConfig { saa_size: args.saa_size, seed: args.seed, ..Default::default() };
    let eval_cfg = EvalConfig::new(args.eval_size, sweep_seed(&problem));
    let result = cmac_dual_oracle(&problem, &solve, &eval_cfg)?;
    println!("lambda {}", join(&result.lambda));
    println!("duality_gap {}", result.duality_gap);
    println!("dual_evals {}", result.iterations);
    println!("solve_metric_mean {}", result.solve_metric_mean);
    println!("solve_constraint_means {}", join(&result.solve_constraint_means));
    print_eval(&result.eval);
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> bool {
    let report = gradcheck::run_full_suite(args.seed, args.per_op);
    for case in &report.cases {
        if args.verbose || !case.pass {
            let status = if case.pass { "ok" } else { "FAIL" };
            println!("{status:4} {} max_err {:.3e}", case.name, case.max_err);
        }
    }
    println!(
        "{} cases, worst relative error {:.3e}: {}",
        report.len(),
        report.worst(),
        if report.pass() { "all passed" } else { "FAILED" }
    );
    report.pass()
}

fn run_report(args: ReportArgs) -> CmdResult {
    let table = match (&args.csv, &args.config) {
        (Some(path), _) => ResultTable::read_csv(path)?,
        (None, Some(name)) => {
            let cfg = resolve_config(name)?;
            let out = resolve_out_dir(args.out.as_deref(), Some(&cfg));
            ResultTable::read_csv(&out.join(format!("{}.csv", cfg.name)))?
        }
        (None, None) => Err("pass --csv <path> or --config <name>")?,
    };
    println!("table {} ({} rows)", table.name, table.rows.len());
    print_summary(&table);
    Ok(())
}

// ── output helpers ──────────────────────────────────────────────────────

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn print_train_summary(report: &TrainReport) {
    println!("iterations {}", report.iterations_run);
    println!("lambda {}", join(&report.lambda));
    if report.skipped_steps > 0 {
        println!("skipped_steps {}", report.skipped_steps);
    }
    if let Some(msg) = &report.aborted {
        println!("rolled_back {msg}");
    }
}

fn print_eval(report: &EvalReport) {
    println!("samples {}", report.samples);
    println!("metric_mean {}", report.metric_mean);
    println!("metric_ci95 {}", report.metric_ci95);
    if let Some(s) = report.metric_mean_stochastic {
        println!("metric_mean_stochastic {s}");
    }
    println!("feasible {}", report.feasible);
    println!("max_rel_violation {}", report.max_rel_violation);
    println!("constraint_means {}", join(&report.constraint_means));
    println!("constraint_bounds {}", join(&report.bounds));
}

fn print_summary(table: &ResultTable) {
    println!(
        "{:<18} {:>3} {:>7} {:>12} {:>6} {:>7} {:>9}",
        "method", "B", "snr_db", "mean", "seeds", "failed", "feasible"
    );
    for line in summarize(table) {
        let bits = line.backhaul_bits.map(|b| b.to_string()).unwrap_or_default();
        println!(
            "{:<18} {:>3} {:>7} {:>12.5} {:>6} {:>7} {:>9}",
            line.method,
            bits,
            line.snr_db,
            line.mean,
            line.seeds,
            line.failed,
            if line.all_feasible { "yes" } else { "no" }
        );
    }
}
