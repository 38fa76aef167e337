//! Subcommands of the `uips` binary.
//!
//! Every subcommand is a pure function of the resolved configuration: inputs
//! that are not passed explicitly (`--env`, `--data`, `--model`) are rebuilt
//! from the config and seed. Output directory precedence is `--out`, then
//! `UIPS_OUT_DIR`, then `out_dir` in the config, then `uips-out`.

use std::fs;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bandit::{LoggedDataset, Policy, SoftmaxLinearPolicy};
use crate::config::ExperimentConfig;
use crate::env::{build_env, epsilon_greedy_policy, generate_log_per_instance, BanditEnv, EpsilonGreedyPolicy};
use crate::error::{Error, Result};
use crate::estimators::{ope_mse_experiment, EvalTable, NamedEstimator, OpeResult, PropensityWeighting};
use crate::learning::{train, TrainConfig, TrainTrace};
use crate::logging::{fit_logging_policy, uncertainty_by_frequency, LoggingModel};
use crate::metrics::{evaluate_scores, RankingMetrics};
use crate::weights::{phi_star_with_branch, WeightInput};
use crate::{parallel, rng};

pub const OUT_DIR_ENV: &str = "UIPS_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "uips-out";

#[derive(Debug, Parser)]
#[command(
    name = "uips",
    version,
    about = "Off-policy evaluation and learning with uncertainty-adjusted propensity weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; all keys default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Inputs {
    /// Environment JSON written by `generate`.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Logged dataset JSONL written by `generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Logging model JSON written by `fit-logging`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the synthetic environment and its training log.
    Generate(#[command(flatten)] Common),
    /// Fit the estimated logging policy and its Gram matrices.
    FitLogging {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Train one policy with the `[train]` settings.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Grid-search every `[sweep]` method, select by validation NDCG@K.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Mean squared error of off-policy estimators over regenerated logs.
    Ope {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Per-sample propensities, uncertainties and instance weights.
    InspectWeights {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        }
        .resolve(common.seed)?;
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        fs::create_dir_all(&out)?;
        Ok(Ctx {
            hash: cfg.hash(),
            cfg,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv(&self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(self.path(name))?);
        writeln!(f, "# config_hash={}", self.hash)?;
        writeln!(f, "{header}")?;
        for r in rows {
            writeln!(f, "{r}")?;
        }
        f.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn report<T: Serialize>(&self, name: &str, results: T) -> Result<()> {
        self.json(
            name,
            &json!({
                "tool_version": env!("CARGO_PKG_VERSION"),
                "seed": self.cfg.seed,
                "config_hash": self.hash,
                "config": self.cfg,
                "results": results,
            }),
        )
    }

    fn env(&self, inputs: Option<&Inputs>) -> Result<BanditEnv> {
        match inputs.and_then(|i| i.env.as_ref()) {
            Some(p) => BanditEnv::from_json(&fs::read_to_string(p)?),
            None => build_env(&self.cfg.env),
        }
    }

    fn data(&self, env: &BanditEnv, inputs: Option<&Inputs>) -> Result<LoggedDataset> {
        match inputs.and_then(|i| i.data.as_ref()) {
            Some(p) => LoggedDataset::read_jsonl(BufReader::new(fs::File::open(p)?), Some(env.action_count)),
            None => training_log(&self.cfg, env),
        }
    }

    fn model(&self, data: &LoggedDataset, inputs: Option<&Inputs>) -> Result<LoggingModel> {
        match inputs.and_then(|i| i.model.as_ref()) {
            Some(p) => LoggingModel::from_json(&fs::read_to_string(p)?),
            None => fit_logging_policy(data, &self.cfg.fit),
        }
    }
}

/// The training log: `draws_per_context` logged actions per train context.
pub fn training_log(cfg: &ExperimentConfig, env: &BanditEnv) -> Result<LoggedDataset> {
    let mut rng = rng::stream(rng::child_seed(cfg.seed, 6), 0);
    generate_log_per_instance(env, &env.train, cfg.data.draws_per_context, &mut rng)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => cmd_generate(&Ctx::new(&common)?),
        Command::FitLogging { common, inputs } => cmd_fit_logging(&Ctx::new(&common)?, &inputs),
        Command::Train { common, inputs } => cmd_train(&Ctx::new(&common)?, &inputs),
        Command::Sweep { common, inputs } => cmd_sweep(&Ctx::new(&common)?, &inputs),
        Command::Ope { common, inputs } => cmd_ope(&Ctx::new(&common)?, &inputs),
        Command::InspectWeights { common, inputs } => cmd_inspect(&Ctx::new(&common)?, &inputs),
    }
}

fn cmd_generate(ctx: &Ctx) -> Result<()> {
    let env = build_env(&ctx.cfg.env)?;
    let data = training_log(&ctx.cfg, &env)?;
    let mut text = env.to_json()?;
    text.push('\n');
    fs::write(ctx.path("env.json"), text)?;
    let mut f = std::io::BufWriter::new(fs::File::create(ctx.path("log.jsonl"))?);
    data.write_jsonl(&mut f)?;
    f.flush()?;
    ctx.json(
        "manifest.json",
        &json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": ctx.cfg.seed,
            "config_hash": ctx.hash,
            "n_samples": data.len(),
            "action_count": env.action_count,
            "dim": env.dim,
            "files": ["env.json", "log.jsonl"],
        }),
    )?;
    println!("wrote {} logged samples to {}", data.len(), ctx.out.display());
    Ok(())
}

fn cmd_fit_logging(ctx: &Ctx, inputs: &Inputs) -> Result<()> {
    let env = ctx.env(Some(inputs))?;
    let data = ctx.data(&env, Some(inputs))?;
    let model = fit_logging_policy(&data, &ctx.cfg.fit)?;
    let mut text = model.to_json()?;
    text.push('\n');
    fs::write(ctx.path("logging_model.json"), text)?;
    println!(
        "final loss {:.6}, logged action above median in {:.1}% of records",
        model.fit_diagnostics.final_loss,
        100.0 * model.fit_diagnostics.above_median_rate
    );
    Ok(())
}

fn metrics_cells(m: &RankingMetrics) -> String {
    format!("{},{},{}", m.precision, m.recall, m.ndcg)
}

fn test_metrics(policy: &SoftmaxLinearPolicy, env: &BanditEnv, k: usize) -> Result<RankingMetrics> {
    evaluate_scores(&env.test, k, |x| policy.scores(x))
}

fn trace_rows(trace: &TrainTrace) -> Vec<String> {
    trace
        .epochs
        .iter()
        .map(|e| {
            let m = e.validation.map(|m| metrics_cells(&m)).unwrap_or_else(|| ",,".into());
            format!("{},{},{},{},{}", e.epoch, e.value, m, e.grad_norm, e.max_weight)
        })
        .collect()
}

fn cmd_train(ctx: &Ctx, inputs: &Inputs) -> Result<()> {
    let env = ctx.env(Some(inputs))?;
    let data = ctx.data(&env, Some(inputs))?;
    let model = ctx.model(&data, Some(inputs))?;
    let (policy, trace) = train(&data, &model, &env.validation, &ctx.cfg.train)?;
    let test = test_metrics(&policy, &env, ctx.cfg.train.k)?;
    let mut text = serde_json::to_string(&policy)?;
    text.push('\n');
    fs::write(ctx.path("policy.json"), text)?;
    ctx.csv(
        "trace.csv",
        "epoch,value,precision,recall,ndcg,grad_norm,max_weight",
        trace_rows(&trace),
    )?;
    ctx.report(
        "train_report.json",
        json!({ "weighting": ctx.cfg.train.weighting.label(), "test": test, "trace": trace }),
    )?;
    println!(
        "test P@{k} {:.4} R@{k} {:.4} NDCG@{k} {:.4}",
        test.precision,
        test.recall,
        test.ndcg,
        k = ctx.cfg.train.k
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub method: String,
    pub weighting: PropensityWeighting,
    pub learning_rate: f64,
    pub validation: RankingMetrics,
    pub test: RankingMetrics,
}

/// Trains every (method, grid point, learning rate) with the `[train]`
/// settings, in parallel, and returns all runs plus the per-method winner by
/// validation NDCG@K (earliest grid point on ties).
pub fn run_sweep(
    cfg: &ExperimentConfig,
    env: &BanditEnv,
    data: &LoggedDataset,
    model: &LoggingModel,
) -> Result<(Vec<SweepRun>, Vec<SweepRun>)> {
    cfg.validate_sweep()?;
    let mut jobs = Vec::new();
    for m in &cfg.sweep.methods {
        for w in m.expand()? {
            for &lr in &cfg.sweep.learning_rates {
                jobs.push((m.name.clone(), w, lr));
            }
        }
    }
    let runs = parallel::try_map_indexed(jobs.len(), |i| -> Result<SweepRun> {
        let (method, weighting, learning_rate) = jobs[i].clone();
        let tc = TrainConfig {
            weighting,
            learning_rate,
            eval_every: cfg.train.epochs,
            ..cfg.train.clone()
        };
        let (policy, trace) = train(data, model, &env.validation, &tc)?;
        let validation = trace.final_validation().expect("last epoch is evaluated");
        Ok(SweepRun {
            method,
            weighting,
            learning_rate,
            validation,
            test: test_metrics(&policy, env, tc.k)?,
        })
    })?;
    let mut best: Vec<SweepRun> = Vec::new();
    for m in &cfg.sweep.methods {
        let winner = runs
            .iter()
            .filter(|r| r.method == m.name)
            .fold(None::<&SweepRun>, |acc, r| match acc {
                Some(b) if b.validation.ndcg >= r.validation.ndcg => Some(b),
                _ => Some(r),
            })
            .expect("method has at least one grid point");
        best.push(winner.clone());
    }
    Ok((runs, best))
}

fn sweep_row(r: &SweepRun) -> String {
    format!(
        "{},\"{}\",{},{},{}",
        r.method,
        r.weighting.label(),
        r.learning_rate,
        metrics_cells(&r.validation),
        metrics_cells(&r.test)
    )
}

fn cmd_sweep(ctx: &Ctx, inputs: &Inputs) -> Result<()> {
    ctx.cfg.validate_sweep()?;
    let env = ctx.env(Some(inputs))?;
    let data = ctx.data(&env, Some(inputs))?;
    let model = ctx.model(&data, Some(inputs))?;
    let (runs, best) = run_sweep(&ctx.cfg, &env, &data, &model)?;
    let header =
        "method,weighting,learning_rate,val_precision,val_recall,val_ndcg,test_precision,test_recall,test_ndcg";
    ctx.csv("sweep_runs.csv", header, runs.iter().map(sweep_row))?;
    ctx.csv("leaderboard.csv", header, best.iter().map(sweep_row))?;
    ctx.report("sweep_report.json", json!({ "leaderboard": best, "runs": runs }))?;
    for r in &best {
        println!(
            "{:<12} test NDCG@{} {:.4}  ({}, lr {})",
            r.method,
            ctx.cfg.train.k,
            r.test.ndcg,
            r.weighting.label(),
            r.learning_rate
        );
    }
    Ok(())
}

/// Expanded estimator list of the `[ope]` section.
pub fn ope_estimators(cfg: &ExperimentConfig) -> Result<Vec<NamedEstimator>> {
    let mut out = Vec::new();
    for m in &cfg.ope.estimators {
        let ests = m.estimators()?;
        if ests.len() == 1 {
            out.push(NamedEstimator {
                name: m.name.clone(),
                weighting: ests[0].weighting,
            });
        } else {
            out.extend(ests);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("[ope] estimator list is empty".into()));
    }
    Ok(out)
}

/// Lowest-MSE grid point per `[ope]` method.
pub fn ope_best_per_method(cfg: &ExperimentConfig, result: &OpeResult) -> Vec<(String, String, f64, f64)> {
    cfg.ope
        .estimators
        .iter()
        .filter_map(|m| {
            result
                .summary
                .iter()
                .filter(|s| s.estimator == m.name || s.estimator.starts_with(&format!("{}[", m.name)))
                .min_by(|a, b| a.mse.total_cmp(&b.mse))
                .map(|s| (m.name.clone(), s.estimator.clone(), s.mse, s.mse_std))
        })
        .collect()
}

fn cmd_ope(ctx: &Ctx, inputs: &Inputs) -> Result<()> {
    let ests = ope_estimators(&ctx.cfg)?;
    let env = ctx.env(Some(inputs))?;
    let target = epsilon_greedy_policy(&env, ctx.cfg.ope.epsilon)?;
    let result = ope_mse_experiment(&env, &target, &ests, &ctx.cfg.ope_config())?;
    let mut body = Vec::new();
    result.write_csv(&mut body)?;
    let text = String::from_utf8(body).expect("csv is utf-8");
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    ctx.csv("ope.csv", &header, lines.map(str::to_string))?;
    let best = ope_best_per_method(&ctx.cfg, &result);
    ctx.csv(
        "ope_summary.csv",
        "method,selected,mse,mse_std",
        best.iter().map(|(m, s, mse, sd)| format!("{m},\"{s}\",{mse},{sd}")),
    )?;
    let table: serde_json::Map<String, serde_json::Value> = best
        .iter()
        .map(|(m, s, mse, sd)| (m.clone(), json!({ "selected": s, "mse": mse, "mse_std": sd })))
        .collect();
    ctx.report(
        "ope_summary.json",
        json!({ "true_value": result.true_value, "table": table, "grid": result.summary }),
    )?;
    for (m, _, mse, sd) in &best {
        println!("{m:<12} MSE {mse:.6} ± {sd:.6}");
    }
    Ok(())
}

fn cmd_inspect(ctx: &Ctx, inputs: &Inputs) -> Result<()> {
    let env = ctx.env(Some(inputs))?;
    let data = ctx.data(&env, Some(inputs))?;
    let model = ctx.model(&data, Some(inputs))?;
    let ic = &ctx.cfg.inspect;
    let target = EpsilonGreedyPolicy::from_instances(&env.train, env.action_count, ic.epsilon)?;
    let table = EvalTable::build(&data, &target, Some(&model))?;
    let us = table.uncertainties();
    let mut rows = Vec::with_capacity(data.len());
    for (i, s) in data.samples.iter().enumerate() {
        let pi = target.prob(&s.context, s.action)?;
        let bh = model.beta_hat(&s.context, s.action)?;
        let input = WeightInput {
            pi,
            beta_hat: bh,
            u: us[i],
        };
        let (phi, branch) = phi_star_with_branch(&input, &ic.hyper_params);
        rows.push(format!(
            "{i},{},{pi},{bh},{},{phi},{}",
            s.action.0,
            us[i],
            branch.as_str()
        ));
    }
    ctx.csv("weights.csv", "sample,action,pi,beta_hat,u,phi_star,branch", rows)?;
    let contexts: Vec<_> = env.train.iter().map(|i| i.features.clone()).collect();
    let bins = uncertainty_by_frequency(&model, &data, &contexts, ic.bins.min(env.action_count))?;
    ctx.csv(
        "uncertainty_bins.csv",
        "bin,actions,min_count,max_count,mean_u,mean_beta_hat",
        bins.iter().map(|b| {
            format!(
                "{},{},{},{},{},{}",
                b.bin,
                b.actions.len(),
                b.min_count,
                b.max_count,
                b.mean_u,
                b.mean_beta_hat
            )
        }),
    )?;
    for b in &bins {
        println!(
            "bin {} (logged {}..={} times): mean U {:.4}",
            b.bin, b.min_count, b.max_count, b.mean_u
        );
    }
    Ok(())
}
