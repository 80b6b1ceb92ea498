//! `clad`: generate the benchmark, train, evaluate, sweep and draw saliency maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use clad::evalkit::{ablation_sweep, evaluate, smoothgrad, write_saliency, EvalSuite, SmoothGradConfig, SweepAxis};
use clad::netcore::checkpoint;
use clad::rng::{derive_seed, tag};
use clad::synthgen::{gen_base, read_dataset, split_train_test, write_dataset, DatasetSpec, Variant, VariantSet};
use clad::trainer::{apply_override, train, RunConfig};
use clad::{CladError, Encoder32};

#[derive(Parser)]
#[command(name = "clad", version, about = "Contrastive background debiasing lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test splits with all five variants.
    Gen {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model on `DATA/train/original`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from `gen`; generated in memory from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on every test variant.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train and evaluate across values of one axis and several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// lambda, queue_size or negative_mode
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// SmoothGrad maps for selected test samples.
    Saliency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Original")]
        variant: String,
        #[arg(long, default_value_t = 25)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Overrides {
    /// Override a config field, e.g. `--set loss.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn read_text(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(String::new()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Sibling path carrying the resolved configuration.
fn config_echo_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn load_spec(path: Option<&Path>, overrides: &[String]) -> Result<DatasetSpec> {
    let text = read_text(path)?;
    let mut value: Value = if text.trim().is_empty() {
        serde_json::to_value(DatasetSpec::default())?
    } else {
        serde_json::from_str(&text).map_err(CladError::from)?
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let spec: DatasetSpec = serde_json::from_value(value).map_err(CladError::from)?;
    spec.validate()?;
    Ok(spec)
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    Ok(RunConfig::from_json_with_overrides(&read_text(path)?, overrides)?)
}

/// Training split plus the five test variants, in memory or from a `gen` directory.
fn load_data(data: Option<&Path>, spec: &DatasetSpec) -> Result<(VariantSet, EvalSuite)> {
    match data {
        Some(dir) => {
            let train = read_dataset(&dir.join("train").join(Variant::Original.dir_name()))?;
            Ok((train, EvalSuite::load(&dir.join("test"))?))
        }
        None => {
            let (train, test) = split_train_test(&gen_base(spec)?, spec)?;
            Ok((train, EvalSuite::from_original(&test, spec.seed)?))
        }
    }
}

fn cmd_gen(spec: Option<&Path>, out: &Path, overrides: &[String]) -> Result<()> {
    let spec = load_spec(spec, overrides)?;
    let fp = spec.fingerprint();
    let (train, test) = split_train_test(&gen_base(&spec)?, &spec)?;
    let suites = [
        ("train", EvalSuite::from_original(&train, derive_seed(spec.seed, &[tag("train-split")]))?),
        ("test", EvalSuite::from_original(&test, spec.seed)?),
    ];
    for (split, suite) in &suites {
        for v in Variant::ALL {
            write_dataset(suite.get(v), &out.join(split).join(v.dir_name()), Some(&fp))?;
        }
    }
    write_text(&out.join("spec.json"), &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    println!("wrote {} train / {} test samples per variant to {} (fingerprint {fp})", train.len(), test.len(), out.display());
    Ok(())
}

fn cmd_train(config: Option<&Path>, data: Option<&Path>, out: &Path, log_path: Option<&Path>, overrides: &[String]) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let fp = cfg.fingerprint();
    write_text(&config_echo_path(out), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    let (train_set, _) = load_data(data, &cfg.dataset)?;
    log::info!("training {fp} on {} samples", train_set.len());
    let result = train::<f32>(&cfg, &train_set)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    checkpoint::save(&result.model, out, Some(&fp))?;
    if let Some(p) = log_path {
        write_text(p, &result.log.to_csv())?;
    }
    let last = result.log.epochs.last().expect("at least one epoch");
    println!("saved {} (fingerprint {fp}); final class loss {:.4}", out.display(), last.mean_class_loss);
    Ok(())
}

fn load_model(path: &Path) -> Result<(Encoder32, String)> {
    let (model, fp) = checkpoint::load::<f32>(path)?;
    Ok((model, fp.unwrap_or_else(|| "unknown".into())))
}

fn cmd_eval(model: &Path, data: &Path, report: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    let (model_net, fp) = load_model(model)?;
    let suite = EvalSuite::load(&data.join("test"))?;
    let name = model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let r = evaluate(&model_net, &suite, &name, &fp, None)?;
    if let Some(p) = report {
        write_text(p, &r.to_json()?)?;
    }
    if let Some(p) = csv {
        write_text(p, &r.to_csv())?;
    }
    for v in Variant::ALL {
        println!("{:<10} {:.4}", v.name(), r.accuracy.get(v));
    }
    println!(
        "bg_gap {:.4}  feature_similarity {:.4}  decision_consistency {:.4}  corner_crop_drop {:.2}",
        r.bg_gap, r.feature_similarity, r.decision_consistency, r.corner_crop_drop
    );
    Ok(())
}

fn cmd_ablate(
    config: Option<&Path>,
    data: Option<&Path>,
    axis: &str,
    values: &[String],
    seeds: usize,
    out: &Path,
    overrides: &[String],
) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let axis: SweepAxis = axis.parse()?;
    write_text(&config_echo_path(out), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    let (train_set, suite) = load_data(data, &cfg.dataset)?;
    let table = ablation_sweep(&cfg, axis, values, seeds, |cell| {
        let trained = train::<f32>(cell, &train_set)?;
        evaluate(&trained.model, &suite, &cell.fingerprint(), &cell.fingerprint(), Some(cell.seeds))
    })?;
    write_text(out, &table.to_csv())?;
    print!("{}", table.to_csv());
    if table.rows.iter().any(|r| r.report.is_none()) {
        log::warn!("some sweep rows failed; see the log above");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_saliency(model: &Path, data: &Path, ids: &[u64], out: &Path, variant: &str, cfg: SmoothGradConfig) -> Result<()> {
    let (net, fp) = load_model(model)?;
    let variant: Variant = variant.parse()?;
    let set = read_dataset(&data.join("test").join(variant.dir_name()))?;
    let mut maps = Vec::new();
    for &id in ids {
        let Some(s) = set.samples.iter().find(|s| s.id == id) else {
            bail!(CladError::Validation {
                id,
                reason: format!("no such sample in the {variant} test split"),
            });
        };
        let map = smoothgrad(&net, &(&s.image).into(), s.fg_label, &cfg)?;
        maps.push((id, s.fg_label, &s.image, map));
    }
    write_saliency(out, &maps, &cfg, &fp)?;
    println!("wrote {} saliency maps to {}", maps.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out, overrides } => cmd_gen(spec.as_deref(), &out, &overrides.set),
        Command::Train {
            config,
            data,
            out,
            log,
            overrides,
        } => cmd_train(config.as_deref(), data.as_deref(), &out, log.as_deref(), &overrides.set),
        Command::Eval { model, data, report, csv } => cmd_eval(&model, &data, report.as_deref(), csv.as_deref()),
        Command::Ablate {
            config,
            data,
            axis,
            values,
            seeds,
            out,
            overrides,
        } => cmd_ablate(config.as_deref(), data.as_deref(), &axis, &values, seeds, &out, &overrides.set),
        Command::Saliency {
            model,
            data,
            ids,
            out,
            variant,
            samples,
            sigma,
            seed,
        } => cmd_saliency(
            &model,
            &data,
            &ids,
            &out,
            &variant,
            SmoothGradConfig {
                n_samples: samples,
                sigma,
                seed,
            },
        ),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CLAD_THREADS") {
        let n: usize = v.parse().map_err(|_| CladError::Config(format!("CLAD_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CladError>() {
        Some(e) if e.is_numeric() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
