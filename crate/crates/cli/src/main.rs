use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use caal_core::aerosol::{self, mixing_state_index, ParticlePopulation, SpeciesGrouping};
use caal_core::experiment::{self, prepare, run_prepared, ExperimentConfig, ExperimentOutput};
use caal_core::{Error, ObjectiveKind, Result, StrategyKind};

/// Confidence-aware active learning experiments and aerosol metrics.
#[derive(Debug, Parser)]
#[command(name = "caal", version)]
struct Cli {
    /// Directory that relative `output_dir` values are resolved against.
    #[arg(long, global = true, env = "CAAL_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one active-learning experiment.
    Run { config: PathBuf },
    /// Run one experiment per value of a hyperparameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
    },
    /// Run the same experiment under several strategies.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        strategies: Vec<String>,
    },
    /// Mixing-state index of a particle population CSV.
    Chi {
        population: PathBuf,
        #[arg(long, value_enum, default_value_t = Grouping::Abundance)]
        grouping: Grouping,
        /// Absorbing species column (name or zero-based index) for optical grouping.
        #[arg(long)]
        absorbing: Option<String>,
    },
    /// Coating volume ratio from a CSV with `dp` and `dc` columns.
    Vr { diameters: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Beta,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Grouping {
    Abundance,
    Optical,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let line = serde_json::json!({
                "error": class.name(),
                "code": class.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(class.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let root = cli.output_root.as_deref();
    match &cli.command {
        Command::Run { config } => cmd_run(config, root),
        Command::Sweep { config, param, values } => cmd_sweep(config, *param, values, root),
        Command::Compare { config, strategies } => cmd_compare(config, strategies, root),
        Command::Chi {
            population,
            grouping,
            absorbing,
        } => cmd_chi(population, *grouping, absorbing.as_deref()),
        Command::Vr { diameters } => cmd_vr(diameters),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let cfg = ExperimentConfig::from_json(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if cfg.output_dir.is_relative() => r.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_run(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    experiment::write_outputs(out, dir)?;
    write_file(&dir.join("config.json"), &(cfg.to_json() + "\n"))
}

fn report(label: &str, out: &ExperimentOutput) {
    if let Some(last) = out.records.last() {
        println!(
            "{label}: rounds={} n_labelled={} r2={} rmse={}",
            last.round, last.n_labelled, last.test_r2, last.test_rmse
        );
    }
}

fn cmd_run(config: &Path, root: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let prepared = prepare(&cfg.data)?;
    let out = run_prepared(&cfg, &prepared)?;
    let dir = output_dir(&cfg, root);
    write_run(&cfg, &out, &dir)?;
    report(&dir.display().to_string(), &out);
    Ok(())
}

/// Runs every variant into `<output_dir>/<name>` and writes a summary CSV
/// whose first column is `key`. All variants are validated before any run.
fn run_variants(
    base: &ExperimentConfig,
    variants: Vec<(String, ExperimentConfig)>,
    key: &str,
    summary_name: &str,
    root: Option<&Path>,
) -> Result<()> {
    for (_, cfg) in &variants {
        cfg.validate()?;
    }
    let prepared = prepare(&base.data)?;
    let dir = output_dir(base, root);
    let mut summary = format!("{key},best_r2,best_rmse,config_hash\n");
    for (label, cfg) in &variants {
        let out = run_prepared(cfg, &prepared)?;
        let sub = dir.join(label);
        write_run(cfg, &out, &sub)?;
        report(label, &out);
        let curve = out.curve()?;
        let value = label.split_once('=').map_or(label.as_str(), |(_, v)| v);
        summary.push_str(&format!(
            "{value},{},{},{}\n",
            curve.best_r2().unwrap_or(f64::NAN),
            curve.best_rmse().unwrap_or(f64::NAN),
            config_hash(cfg)
        ));
    }
    write_file(&dir.join(summary_name), &summary)
}

fn cmd_sweep(config: &Path, param: SweepParam, values: &[f64], root: Option<&Path>) -> Result<()> {
    let base = load_config(config)?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(Error::Config(format!("duplicate sweep value {v}")));
        }
    }
    let name = match param {
        SweepParam::Beta => "beta",
        SweepParam::Lambda => "lambda",
    };
    let variants = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Beta => match cfg.strategy {
                    StrategyKind::Caal { .. } => cfg.strategy = StrategyKind::Caal { beta: v },
                    other => {
                        return Err(Error::Config(format!(
                            "beta sweeps need the caal strategy, config uses `{}`",
                            other.name()
                        )))
                    }
                },
                SweepParam::Lambda => match cfg.objective {
                    ObjectiveKind::Decoupled { .. } => cfg.objective = ObjectiveKind::Decoupled { lambda: v },
                    other => {
                        return Err(Error::Config(format!(
                            "lambda sweeps need the decoupled objective, config uses `{}`",
                            other.name()
                        )))
                    }
                },
            }
            Ok((format!("{name}={v}"), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    run_variants(&base, variants, name, "sweep_summary.csv", root)
}

fn cmd_compare(config: &Path, strategies: &[String], root: Option<&Path>) -> Result<()> {
    let base = load_config(config)?;
    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    for name in strategies {
        let mut strategy = StrategyKind::from_name(name)?;
        if variants.iter().any(|(n, _)| n == strategy.name()) {
            return Err(Error::Config(format!("strategy `{name}` listed twice")));
        }
        // keep the configured gate exponent when CAAL is the base strategy
        if let (StrategyKind::Caal { .. }, StrategyKind::Caal { beta }) = (strategy, base.strategy) {
            strategy = StrategyKind::Caal { beta };
        }
        let mut cfg = base.clone();
        cfg.strategy = strategy;
        variants.push((strategy.name().to_owned(), cfg));
    }
    run_variants(&base, variants, "strategy", "compare_summary.csv", root)
}

fn cmd_chi(path: &Path, grouping: Grouping, absorbing: Option<&str>) -> Result<()> {
    let (header, pop) = ParticlePopulation::from_csv(path)?;
    let grouping = match grouping {
        Grouping::Abundance => SpeciesGrouping::Abundance,
        Grouping::Optical => {
            let a = absorbing.ok_or_else(|| Error::Config("optical grouping needs --absorbing".into()))?;
            let idx = header
                .iter()
                .position(|h| h.trim() == a)
                .or_else(|| a.parse::<usize>().ok())
                .ok_or_else(|| Error::MissingColumn(a.to_owned()))?;
            SpeciesGrouping::Optical { absorbing: idx }
        }
    };
    let pop = pop.merge_species(&grouping.groups(pop.num_species())?)?;
    let r = mixing_state_index(&pop);
    println!("chi={}", r.chi);
    println!("d_alpha={}", r.d_alpha);
    println!("d_gamma={}", r.d_gamma);
    println!("h_alpha={}", r.h_alpha);
    println!("h_gamma={}", r.h_gamma);
    if r.degenerate {
        eprintln!("warning: single effective species, chi defined as 1");
    }
    Ok(())
}

fn cmd_vr(path: &Path) -> Result<()> {
    let (dp, dc) = aerosol::read_diameters(path)?;
    println!("vr={}", aerosol::coating_volume_ratio(&dp, &dc)?);
    Ok(())
}
