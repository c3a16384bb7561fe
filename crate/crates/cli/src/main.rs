//! `procure`: run and audit posted-price procurement experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use procure_core::arrival::{check_seq_bound, pairwise_joint_frequency, ParticipationEstimate};
use procure_core::harness::output::{from_jsonl, line_chart_svg, table_csv, walk_csv, write_atomic, Series};
use procure_core::harness::{
    self, ExperimentConfig, Family, MechanismChoice, Outputs, ProfileSpec, TrialRecord,
};
use procure_core::mechanisms::{non_adaptive_experiment, Sampling};
use procure_core::prediction::{walk_statistics, WalkTrace};
use procure_core::rng::trial_rng;
use procure_core::{ConstantsProfile, CostModel, MarketKind, PowerTower};

/// Exit status for a failed audit or check.
const EXIT_AUDIT: u8 = 2;
/// Exit status for unusable input: bad flags, missing or malformed files.
const EXIT_CONFIG: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "procure", version, about = "Posted-price mechanisms for budget-feasible procurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed; every subcommand is deterministic given it.
    #[arg(long, env = "PROCURE_BENCH_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = ["default", "desk"])]
    profile: Option<String>,
    /// Directory for CSV, JSON and SVG outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    fn profile(&self) -> anyhow::Result<ConstantsProfile> {
        Ok(ConstantsProfile::by_name(self.profile.as_deref().unwrap_or("default"))?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Every fixed price `B/2^i` against the lower-bound distribution.
    Lowerbound {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        budget: f64,
        /// Stratify the instance draws to cut variance of rare instances.
        #[arg(long)]
        stratified: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo check of round participation frequencies.
    RoundsCheck {
        /// Comma-separated length parameters of consecutive rounds.
        #[arg(long, value_delimiter = ',', default_value = "0.3333333333333333,0.5,0.25")]
        params: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Allowed deviation in standard deviations.
        #[arg(long, default_value_t = 4.0)]
        sigmas: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Print power-tower endpoints and the per-index sequence bound.
    Towers {
        #[arg(long, default_value_t = 1.0)]
        vmax: f64,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the prediction mechanism over prediction errors.
    Predict {
        #[arg(long, default_value_t = 1 << 18)]
        n: usize,
        /// OPT / vmax of the generated market.
        #[arg(long, default_value_t = 1 << 15)]
        k: usize,
        #[arg(long, default_value = "additive", value_parser = parse_snake::<MarketKind>)]
        market: MarketKind,
        #[arg(long, default_value = "uniform_random", value_parser = parse_snake::<CostModel>)]
        cost_model: CostModel,
        /// Predictions as multiples of OPT.
        #[arg(long, value_delimiter = ',', default_value = "0.0000009765625,0.001953125,0.125,1,8,512,1048576")]
        ratios: Vec<f64>,
        #[arg(long)]
        rounds_per_phase: Option<usize>,
        #[arg(long)]
        length_param: Option<f64>,
        /// Also write walk traces per ratio (needs --out).
        #[arg(long)]
        walks: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run stored trial records from their config and re-audit them.
    AuditReplay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Lowerbound { common, .. }
            | Command::RoundsCheck { common, .. }
            | Command::Towers { common, .. }
            | Command::Predict { common, .. }
            | Command::AuditReplay { common, .. } => common,
        }
    }
}

fn parse_snake<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(text.to_string())).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Config(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Input errors exit with [`EXIT_CONFIG`], everything else with 1.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

impl From<procure_core::Error> for Failure {
    fn from(err: procure_core::Error) -> Self {
        Failure::Runtime(err.into())
    }
}

fn config<T, E: Into<anyhow::Error>>(result: Result<T, E>) -> Result<T, Failure> {
    result.map_err(|e| Failure::Config(e.into()))
}

fn verdict(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_AUDIT)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    if let Some(jobs) = cli.command.common().jobs {
        config(rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global())?;
    }
    match cli.command {
        Command::Simulate { config: path, common } => simulate(&path, &common),
        Command::Lowerbound {
            n,
            budget,
            stratified,
            common,
        } => lowerbound(n, budget, stratified, &common),
        Command::RoundsCheck {
            params,
            n,
            sigmas,
            common,
        } => rounds_check(&params, n, sigmas, &common),
        Command::Towers { vmax, n, common } => towers(vmax, n, &common),
        Command::Predict {
            n,
            k,
            market,
            cost_model,
            ratios,
            rounds_per_phase,
            length_param,
            walks,
            common,
        } => predict(
            PredictSweep {
                n,
                k,
                market,
                cost_model,
                ratios,
                rounds_per_phase,
                length_param,
                walks,
            },
            &common,
        ),
        Command::AuditReplay {
            config: path,
            records,
            common,
        } => audit_replay(&path, &records, &common),
    }
}

/// Applies command-line overrides on top of a loaded config.
fn apply_overrides(cfg: &mut ExperimentConfig, common: &Common) -> Result<(), Failure> {
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(name) = &common.profile {
        cfg.profile = ProfileSpec::Named(name.clone());
    }
    if let Some(dir) = &common.out {
        let outputs = &mut cfg.outputs;
        outputs.records.get_or_insert_with(|| dir.join("records.jsonl"));
        outputs.summary.get_or_insert_with(|| dir.join("summary.json"));
    }
    config(cfg.validate())
}

fn load_config(path: &Path, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = config(ExperimentConfig::load(path))?;
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

fn simulate(path: &Path, common: &Common) -> Result<ExitCode, Failure> {
    let cfg = load_config(path, common)?;
    let outcome = harness::run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary).context("serializing summary")?);
    if !outcome.summary.passed {
        eprintln!("audit failed");
    }
    Ok(verdict(outcome.summary.passed))
}

fn lowerbound(n: usize, budget: f64, stratified: bool, common: &Common) -> Result<ExitCode, Failure> {
    let trials = common.trials.unwrap_or(100_000);
    let sampling = if stratified { Sampling::Stratified } else { Sampling::Independent };
    let table = config(non_adaptive_experiment(n, budget, trials, sampling, &mut trial_rng(common.seed_or(0), 0)))?;
    println!("n = {}, B = {}, trials = {}", table.n, table.budget, table.trials);
    println!("E[OPT] = {:?} (sampled {:.4})", table.expected_opt, table.empirical_opt);
    println!("{:>5} {:>14} {:>12} {:>10}", "i", "price", "E[value]", "std err");
    let mut rows = Vec::new();
    for row in &table.rows {
        println!("{:>5} {:>14.6e} {:>12.4} {:>10.4}", row.index, row.price, row.mean_value, row.std_error);
        rows.push(vec![
            row.index.to_string(),
            row.price.to_string(),
            row.mean_value.to_string(),
            row.std_error.to_string(),
        ]);
    }
    if let Some(dir) = &common.out {
        write_atomic(&dir.join("lowerbound.csv"), &table_csv(&["index", "price", "mean_value", "std_error"], &rows)?)?;
        let json = serde_json::to_vec_pretty(&table).context("serializing table")?;
        write_atomic(&dir.join("lowerbound.json"), &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn rounds_check(params: &[f64], n: usize, sigmas: f64, common: &Common) -> Result<ExitCode, Failure> {
    let trials = common.trials.unwrap_or(100_000);
    let mut rng = trial_rng(common.seed_or(0), 0);
    let mut estimates: Vec<ParticipationEstimate> = Vec::new();
    // Every prefix of the schedule is its own participation check.
    for len in 1..=params.len() {
        estimates.push(config(pairwise_joint_frequency(&params[..len], n, trials, &mut rng))?);
    }
    println!("{:>6} {:>10} {:>10} {:>8} {:>12} {:>12} {:>8}", "rounds", "q", "single", "ok", "q^2", "joint", "ok");
    let mut passed = true;
    for est in &estimates {
        let (single_ok, joint_ok) = (est.single_within(sigmas), est.joint_within(sigmas));
        passed &= single_ok && joint_ok;
        println!(
            "{:>6} {:>10.6} {:>10.6} {:>8} {:>12.3e} {:>12.3e} {:>8}",
            est.params.len(),
            est.theory,
            est.single,
            single_ok,
            est.theory * est.theory,
            est.joint,
            joint_ok
        );
    }
    if let Some(dir) = &common.out {
        let json = serde_json::to_vec_pretty(&estimates).context("serializing estimates")?;
        write_atomic(&dir.join("rounds_check.json"), &json)?;
    }
    Ok(verdict(passed))
}

fn sci(x: f64) -> String {
    if x != 0.0 && !(1e-3..1e6).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn towers(vmax: f64, n: usize, common: &Common) -> Result<ExitCode, Failure> {
    let profile = config(common.profile())?;
    let tower = config(PowerTower::build(vmax, n, &profile))?;
    let endpoints: Vec<String> = tower.endpoints().iter().map(|&t| sci(t)).collect();
    println!("profile {}: endpoints {}", profile.name, endpoints.join(", "));
    let report = check_seq_bound(&tower, &profile);
    if report.rows.is_empty() {
        println!("no tested thresholds; sequence bound holds vacuously");
    } else {
        println!("{:>5} {:>12} {:>12} {:>12} {:>12} {:>10}", "i", "a_i", "rounds", "product", "i^-10", "margin");
        for row in &report.rows {
            println!(
                "{:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3e}",
                row.index,
                row.length_param,
                row.phase_len,
                row.product,
                row.bound,
                row.bound / row.product
            );
        }
    }
    println!("sequence bound {}", if report.holds() { "holds" } else { "FAILS" });
    if let Some(dir) = &common.out {
        let json = serde_json::to_vec_pretty(&report).context("serializing report")?;
        write_atomic(&dir.join("towers.json"), &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

struct PredictSweep {
    n: usize,
    k: usize,
    market: MarketKind,
    cost_model: CostModel,
    ratios: Vec<f64>,
    rounds_per_phase: Option<usize>,
    length_param: Option<f64>,
    walks: bool,
}

fn predict(sweep: PredictSweep, common: &Common) -> Result<ExitCode, Failure> {
    if sweep.walks && common.out.is_none() {
        return Err(Failure::Config(anyhow::anyhow!("--walks needs --out")));
    }
    let mut passed = true;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    println!(
        "{:>14} {:>5} {:>12} {:>10} {:>10} {:>9} {:>8} {:>8}",
        "t_hat/OPT", "i*", "E[value]", "std err", "OPT/E[v]", "positive", "reach", "return"
    );
    for &ratio in &sweep.ratios {
        let cfg = ExperimentConfig {
            family: Family::LargeMarket {
                market: sweep.market,
                n: sweep.n,
                k_target: sweep.k,
                cost_model: sweep.cost_model,
                budget: 1.0,
            },
            mechanism: MechanismChoice::Prediction {
                ratio,
                rounds_per_phase: sweep.rounds_per_phase,
                length_param: sweep.length_param,
            },
            profile: ProfileSpec::Named(common.profile.clone().unwrap_or_else(|| "default".into())),
            trials: common.trials.unwrap_or(200),
            master_seed: common.seed_or(0),
            outputs: Outputs::default(),
            events: false,
        };
        config(cfg.validate())?;
        let outcome = harness::run_experiment(&cfg)?;
        let summary = &outcome.summary;
        passed &= summary.passed;
        let traces: Vec<WalkTrace> = outcome.records.iter().filter_map(|r| r.walk.clone()).collect();
        let i_star = outcome.records.iter().find_map(|r| r.i_star).unwrap_or(0);
        let walk = walk_statistics(&traces, i_star);
        println!(
            "{:>14} {:>5} {:>12.3} {:>10.3} {:>10} {:>9.3} {:>8.3} {:>8.3}",
            sci(ratio),
            i_star,
            summary.mean_value,
            summary.value_std_error,
            summary.competitive_ratio.map_or("inf".into(), |r| format!("{r:.2}")),
            summary.positive_value.estimate,
            walk.reach_frequency,
            walk.return_frequency
        );
        rows.push(vec![
            ratio.to_string(),
            i_star.to_string(),
            summary.mean_value.to_string(),
            summary.value_std_error.to_string(),
            summary.competitive_ratio.map_or(String::new(), |r| r.to_string()),
            summary.positive_value.estimate.to_string(),
            walk.reach_frequency.to_string(),
            walk.return_frequency.to_string(),
        ]);
        points.push((ratio, summary.mean_value));
        if let (true, Some(dir)) = (sweep.walks, &common.out) {
            let with_walks = outcome.records.iter().filter_map(|r: &TrialRecord| r.walk.as_ref().map(|w| (r.trial, w)));
            write_atomic(&dir.join(format!("walks_{}.csv", sci(ratio))), &walk_csv(with_walks)?)?;
        }
    }
    if let Some(dir) = &common.out {
        let header = ["ratio", "i_star", "mean_value", "std_error", "competitive_ratio", "positive", "reach", "return"];
        write_atomic(&dir.join("predict.csv"), &table_csv(&header, &rows)?)?;
        let svg = line_chart_svg(
            "Value against prediction error",
            "t_hat / OPT",
            "mean value",
            &[Series {
                name: "prediction".into(),
                points,
            }],
        );
        write_atomic(&dir.join("predict.svg"), svg.as_bytes())?;
    }
    Ok(verdict(passed))
}

fn audit_replay(path: &Path, records_path: &Path, common: &Common) -> Result<ExitCode, Failure> {
    let cfg = load_config(path, &Common { out: None, ..common.clone() })?;
    let text = config(
        std::fs::read_to_string(records_path).with_context(|| format!("reading {}", records_path.display())),
    )?;
    let stored: Vec<TrialRecord> = config(from_jsonl(&text))?;
    if stored.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("{} holds no records", records_path.display())));
    }
    if let Some(bad) = stored.iter().find(|r| r.trial >= cfg.trials as u64) {
        let err = anyhow::anyhow!("record for trial {} is outside the config's {} trials", bad.trial, cfg.trials);
        return Err(Failure::Config(err));
    }
    let report = harness::replay(&cfg, &stored)?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    if let Some(dir) = &common.out {
        write_atomic(&dir.join("replay.json"), serde_json::to_string_pretty(&report).context("serializing")?.as_bytes())?;
    }
    Ok(verdict(report.passed()))
}
