use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use policy_compress::cmp::{occupancy, policy_probs};
use policy_compress::envs::{builtin, SWIM_UP};
use policy_compress::error::{Error, Result};
use policy_compress::instances::random_params;
use policy_compress::io::{self, ReportFile};
use policy_compress::psca::{compress, PscaConfig};
use policy_compress::sampling::sample_discounted;
use policy_compress::tasks::{
    action_discretization, best_in_set, epsilon_greedy, exact_return_occ, first_crossing,
    is_estimate_occ, mis_estimate_occ, optimistic_select, OptimistConfig, RewardFn,
};
use policy_compress::{CoverSet, PolicyParams, TabularCmp};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Parser)]
#[command(name = "policy-compress", version, about = "Policy space compression for tabular CMPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a certified σ-compression.
    Compress(CompressArgs),
    /// Off-policy evaluation of an ε-greedy target from cover samples.
    Evaluate(EvaluateArgs),
    /// Optimistic selection over the cover and uniform discretizations.
    Optimize(OptimizeArgs),
    /// Print a report as per-state action-probability tables.
    Inspect {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in environment name.
    #[arg(long, default_value = "river-swim", conflicts_with = "cmp_file")]
    env: String,
    /// CMP document to load instead of a built-in environment.
    #[arg(long)]
    cmp_file: Option<PathBuf>,
    /// Discount override.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 10.0)]
    sigma: f64,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Leader learning rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Follower learning rate.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_k: Option<usize>,
    /// Best-response random restarts.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Report whose cover supplies the behavior policies; compressed on the
    /// fly when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    trajectories: usize,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

fn load_model(args: &ModelArgs) -> Result<(String, TabularCmp, Option<RewardFn>)> {
    match &args.cmp_file {
        Some(path) => {
            let (cmp, reward) = io::load_cmp(path)?;
            let cmp = match args.gamma {
                Some(g) => cmp.with_discount(g)?,
                None => cmp,
            };
            Ok((path.display().to_string(), cmp, reward))
        }
        None => {
            let (cmp, reward) = builtin(&args.env, args.gamma)?;
            Ok((args.env.clone(), cmp, reward))
        }
    }
}

fn require_reward(reward: Option<RewardFn>) -> Result<RewardFn> {
    reward.ok_or_else(|| Error::Config("this command needs a model with a reward table".into()))
}

impl RunArgs {
    fn seeds(&self) -> Vec<u64> {
        match (self.seed, self.seeds.is_empty()) {
            (Some(s), _) => vec![s],
            (None, true) => vec![0],
            (None, false) => self.seeds.clone(),
        }
    }

    fn psca_config(&self) -> Result<PscaConfig> {
        let mut cfg = PscaConfig::default();
        if let Some(a) = self.alpha {
            cfg.gda.leader_rate = a;
        }
        if let Some(b) = self.beta {
            cfg.gda.follower_rate = b;
        }
        if let Some(k) = self.max_k {
            cfg.max_k = k;
        }
        if let Some(r) = self.restarts {
            cfg.gda.restarts = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn check_sigma(&self) -> Result<()> {
        if !(self.sigma > 1.0) {
            return Err(Error::InfeasibleSigma(self.sigma));
        }
        Ok(())
    }
}

fn write_rows<T: Serialize>(rows: &[T], dir: &Path, stem: &str, format: Format) -> Result<()> {
    match format {
        Format::Csv => io::save_csv(rows, &dir.join(format!("{stem}.csv"))),
        Format::Json => {
            let mut text = serde_json::to_string_pretty(rows)?;
            text.push('\n');
            fs::write(dir.join(format!("{stem}.json")), text)?;
            Ok(())
        }
    }
}

fn cmd_compress(args: &CompressArgs) -> Result<u8> {
    args.run.check_sigma()?;
    let cfg = args.run.psca_config()?;
    let (name, cmp, _) = load_model(&args.model)?;
    fs::create_dir_all(&args.run.out)?;
    let seeds = args.run.seeds();
    let reports = seeds
        .par_iter()
        .map(|&seed| compress(&cmp, args.run.sigma, &cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut all_converged = true;
    for report in reports {
        let seed = report.seed;
        println!(
            "seed {seed}: K={} B={:.6} converged={}",
            report.k(),
            report.final_bound(),
            report.converged
        );
        all_converged &= report.converged;
        let rows = io::trace_rows(&report);
        write_rows(&rows, &args.run.out, &format!("trace-seed{seed}"), args.run.format)?;
        let file = ReportFile::new(&name, &cmp, report)?;
        io::save_report(&file, &args.run.out.join(format!("report-seed{seed}.json")))?;
    }
    Ok(if all_converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn obtain_cover(
    report: &Option<PathBuf>,
    cmp: &TabularCmp,
    run: &RunArgs,
) -> Result<CoverSet> {
    match report {
        Some(path) => {
            let file = io::load_report(path)?;
            let (stored, _) = file.cmp.to_model()?;
            if stored.n_states() != cmp.n_states() || stored.n_actions() != cmp.n_actions() {
                return Err(Error::Dimension("report does not match the model".into()));
            }
            Ok(file.report.cover)
        }
        None => {
            run.check_sigma()?;
            let seed = run.seeds()[0];
            info!("no report given, compressing with seed {seed}");
            let report = compress(cmp, run.sigma, &run.psca_config()?, seed)?;
            if !report.converged {
                warn!("compression did not reach sigma, using the K-cap cover");
            }
            Ok(report.cover)
        }
    }
}

#[derive(Serialize)]
struct EvalRow {
    seed: u64,
    estimator: String,
    behavior: String,
    estimate: f64,
    exact: f64,
    abs_error: f64,
    ci_low: f64,
    ci_high: f64,
    divergence: f64,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<u8> {
    let (_, cmp, reward) = load_model(&args.model)?;
    let reward = require_reward(reward)?;
    let cover = obtain_cover(&args.report, &cmp, &args.run)?;
    let target = epsilon_greedy(&cmp, &reward, args.epsilon)?;
    let target_occ = occupancy(&cmp, &target)?;
    let gamma = cmp.discount();
    let exact = exact_return_occ(&target_occ, &reward, gamma);
    let n = args.trajectories * args.horizon;
    fs::create_dir_all(&args.run.out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random_mix: Vec<PolicyParams> = (0..3).map(|_| random_params(&mut rng, &cmp, 1.0)).collect();
    let mut named: Vec<(String, PolicyParams)> = vec![("target".into(), target.clone())];
    for (k, p) in cover.components.iter().enumerate() {
        named.push((format!("cover{}", k + 1), p.clone()));
    }
    named.push(("uniform".into(), PolicyParams::uniform(&cmp)));
    for (k, p) in random_mix.iter().enumerate() {
        named.push((format!("random{}", k + 1), p.clone()));
    }
    let occs = named
        .iter()
        .map(|(_, p)| occupancy(&cmp, p))
        .collect::<Result<Vec<_>>>()?;
    let n_cover = cover.k();

    let per_seed = args
        .run
        .seeds()
        .par_iter()
        .map(|&seed| -> Result<Vec<EvalRow>> {
            let batches = named
                .iter()
                .enumerate()
                .map(|(i, (_, p))| sample_discounted(&cmp, p, seed.wrapping_mul(1000) + i as u64, n))
                .collect::<Result<Vec<_>>>()?;
            let row = |estimator: &str, behavior: &str, r: policy_compress::tasks::EvalResult| EvalRow {
                seed,
                estimator: estimator.into(),
                behavior: behavior.into(),
                estimate: r.estimate,
                exact,
                abs_error: (r.estimate - exact).abs(),
                ci_low: r.estimate - r.bound_radius,
                ci_high: r.estimate + r.bound_radius,
                divergence: r.divergence,
            };
            let mut rows = Vec::new();
            for (i, (name, _)) in named.iter().enumerate() {
                let kind = if i == 0 { "on_policy" } else { "is" };
                match is_estimate_occ(&target_occ, &occs[i], &reward, gamma, &batches[i], args.delta) {
                    Ok(r) => rows.push(row(kind, name, r)),
                    Err(Error::EstimatorRefused(why)) => warn!("{name}: {why}"),
                    Err(e) => return Err(e),
                }
            }
            let groups = [("cover", 1..1 + n_cover), ("random", 2 + n_cover..5 + n_cover)];
            for (label, range) in groups {
                let r = mis_estimate_occ(
                    &target_occ,
                    &occs[range.clone()],
                    &reward,
                    gamma,
                    &batches[range],
                    args.delta,
                );
                match r {
                    Ok(r) => rows.push(row("mis", label, r)),
                    Err(Error::EstimatorRefused(why)) => warn!("{label} mixture: {why}"),
                    Err(e) => return Err(e),
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<EvalRow> = per_seed.into_iter().flatten().collect();
    write_rows(&rows, &args.run.out, "evaluation", args.run.format)?;
    println!("target J = {exact:.6}, {} rows written", rows.len());
    Ok(0)
}

#[derive(Serialize)]
struct CurveRow {
    set: String,
    seed: u64,
    iteration: usize,
    chosen: usize,
    value: f64,
    ci_low: f64,
    ci_high: f64,
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<u8> {
    let (_, cmp, reward) = load_model(&args.model)?;
    let reward = require_reward(reward)?;
    let cover = obtain_cover(&args.report, &cmp, &args.run)?;
    let mut sets = vec![("sigma".to_string(), cover)];
    if cmp.n_actions() == 2 {
        for n in [3, 20] {
            sets.push((format!("disc{n}"), action_discretization(&cmp, n, SWIM_UP)?));
        }
    }
    fs::create_dir_all(&args.run.out)?;
    let seeds = args.run.seeds();
    let mut rows = Vec::new();
    for (name, set) in &sets {
        let best = best_in_set(&cmp, &reward, set, args.run.sigma.max(1.0))?;
        let curves = seeds
            .par_iter()
            .map(|&seed| {
                let cfg = OptimistConfig {
                    iterations: args.iterations,
                    per_iter_samples: args.samples,
                    delta: args.delta,
                    seed,
                    ..OptimistConfig::default()
                };
                optimistic_select(&cmp, &reward, set, &cfg).map(|s| (seed, s))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut crossings = Vec::new();
        for (seed, steps) in curves {
            crossings.push(first_crossing(&steps, best.value, 1e-9));
            for s in steps {
                rows.push(CurveRow {
                    set: name.clone(),
                    seed,
                    iteration: s.iteration,
                    chosen: s.chosen,
                    value: s.value,
                    ci_low: s.estimate - s.bonus,
                    ci_high: s.estimate + s.bonus,
                });
            }
        }
        println!(
            "{name}: K={} in-set J*={:.4} optimal J={:.4} first crossings {:?}",
            set.k(),
            best.value,
            best.optimal_value,
            crossings
        );
    }
    write_rows(&rows, &args.run.out, "curves", args.run.format)?;
    Ok(0)
}

fn cmd_inspect(path: &Path) -> Result<u8> {
    let file = io::load_report(path)?;
    let (cmp, _) = file.cmp.to_model()?;
    let report = &file.report;
    println!("environment: {}", file.environment);
    println!("tool version: {}", file.tool_version);
    println!(
        "sigma = {}, seed = {}, K = {}, converged = {}",
        report.sigma,
        report.seed,
        report.k(),
        report.converged
    );
    for (i, ((v, b), z)) in report
        .lp_value_trace
        .iter()
        .zip(&report.cover_bound_trace)
        .zip(&report.z_estimate_trace)
        .enumerate()
    {
        println!("  K={}: V={v} B={b} z={z}", i + 1);
    }
    for (k, params) in report.cover.components.iter().enumerate() {
        println!("policy {}:", k + 1);
        let probs = policy_probs(&cmp, params)?;
        let header: Vec<String> = (0..cmp.n_actions()).map(|a| format!("a{a}")).collect();
        println!("  state  {}", header.join("  "));
        for s in 0..cmp.n_states() {
            let row: Vec<String> = probs[s * cmp.n_actions()..(s + 1) * cmp.n_actions()]
                .iter()
                .map(|p| format!("{p:.3}"))
                .collect();
            println!("  {s:>5}  {}", row.join(" "));
        }
    }
    Ok(0)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InfeasibleSigma(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Inspect { path } => cmd_inspect(path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
