use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use cmc_forge::ablation::{align_table, plot_csv, run_ablation_suite, runs_csv, trends_csv, RunCache, Suite};
use cmc_forge::container::Container;
use cmc_forge::dataset::Dataset;
use cmc_forge::trainer::{run_experiment, verify_manifest, Branches, Evaluator, ExperimentConfig, MetricRow, RunOptions};
use cmc_forge::{Error, Result};

#[derive(Parser)]
#[command(name = "cmc-forge", version, about = "Cross-modal weakly-supervised segmentation on synthetic scenes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the benchmark dataset.
    Gen(Common),
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a paired multi-seed ablation suite.
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed range `N..M` (exclusive) or `N..=M`.
        #[arg(long, default_value = "0..6")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate the last checkpoint of a training run.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a trends CSV as an aligned table and a plot-ready CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Overlays `user` onto `base`, rejecting keys the base does not know.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let here = format!("{path}.{k}");
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(Error::Config(format!("unknown config key `{}`", &here[1..]))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        let mut user: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        // written run configs carry their hash; it is derived, not an input
        if let Value::Object(m) = &mut user {
            m.remove("config_hash");
        }
        merge(&mut value, user, "")?;
    }
    let mut config: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed range `{s}` (expected N..M or N..=M)"));
    let (a, b, inclusive) = match s.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = s.split_once("..").ok_or_else(bad)?;
            (a, b, false)
        }
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn print_metrics(m: &MetricRow) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    println!(
        "epoch {}  2d teacher {:.2}  2d student {:.2}  3d (true) {}  3d (unprojected) {}",
        m.epoch,
        m.miou_2d_teacher,
        m.miou_2d_student,
        opt(m.miou_3d_true),
        opt(m.miou_3d_unprojected)
    );
}

fn latest_checkpoint(run: &Path) -> Result<PathBuf> {
    let dir = run.join("checkpoints");
    let mut bins: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    bins.pop().ok_or_else(|| Error::Config(format!("no checkpoints in {}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => {
            let config = load_config(c.config.as_deref(), c.seed)?;
            let data = Dataset::generate(&config.dataset, config.seed)?;
            data.write(&c.out)?;
            println!("wrote {} train and {} eval scenes to {}", data.train.len(), data.eval.len(), c.out.display());
        }
        Command::Train { common: c, resume } => {
            let config = load_config(c.config.as_deref(), c.seed)?;
            let data = Dataset::generate(&config.dataset, config.seed)?;
            let summary = run_experiment(&config, &data, &RunOptions { out_dir: Some(c.out.clone()), resume, stop_after: None })?;
            println!("config {}", summary.config_hash);
            print_metrics(summary.final_metrics());
        }
        Command::Ablate { suite, config, seeds, out } => {
            let suite = Suite::parse(&suite)?;
            let base = load_config(config.as_deref(), None)?;
            let seeds = parse_seeds(&seeds)?;
            if seeds.len() < 5 {
                return Err(Error::Config(format!("an ablation needs at least 5 seeds, got {}", seeds.len())));
            }
            let result = run_ablation_suite(suite, &base, &seeds, &RunCache::default())?;
            fs::create_dir_all(&out)?;
            let trends = trends_csv(&result.trends)?;
            fs::write(out.join(format!("{}_trends.csv", suite.name())), &trends)?;
            fs::write(out.join(format!("{}_runs.csv", suite.name())), runs_csv(&result.runs)?)?;
            print!("{}", align_table(&String::from_utf8_lossy(&trends))?);
        }
        Command::Eval { run } => {
            verify_manifest(&run)?;
            let config = load_config(Some(&run.join("config.json")), None)?;
            let data = Dataset::generate(&config.dataset, config.seed)?;
            let (container, _) = Container::read(&latest_checkpoint(&run)?)?;
            let mut branches = Branches::init(&config);
            branches.load(&container)?;
            let epoch = config.schedule.total_epochs;
            print_metrics(&Evaluator::new(&data)?.evaluate(&branches, epoch)?);
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input)?;
            let table = align_table(&text)?;
            fs::create_dir_all(&out)?;
            let stem = input.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
            fs::write(out.join(format!("{stem}.txt")), &table)?;
            fs::write(out.join(format!("{stem}_plot.csv")), plot_csv(&text)?)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4..=6").unwrap(), vec![4, 5, 6]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn merge_rejects_unknown_keys() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": 2}});
        merge(&mut base, serde_json::json!({"a": {"b": 5}}), "").unwrap();
        assert_eq!(base, serde_json::json!({"a": {"b": 5, "c": 2}}));
        assert!(matches!(merge(&mut base, serde_json::json!({"a": {"z": 1}}), ""), Err(Error::Config(_))));
    }
}
