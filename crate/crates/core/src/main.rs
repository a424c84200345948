use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use bgnn::checkpoint::Checkpoint;
use bgnn::config::RunConfig;
use bgnn::eval::EvalMode;
use bgnn::harness::{model_gradcheck, GradcheckOptions};
use bgnn::proposals::{generate_synthetic_dataset, DatasetManifest, Split};
use bgnn::sampling::Sampler;
use bgnn::train::{evaluate, train, worker_count};
use bgnn::{Error, Result};

#[derive(Parser)]
#[command(name = "bgnn", version, about = "Bipartite graph network for scene graph generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Predcls,
    Sgcls,
    Sggen,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Predcls => EvalMode::PredCls,
            Mode::Sgcls => EvalMode::SgCls,
            Mode::Sggen => EvalMode::SgGen,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Final checkpoint path; the training log goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sgcls")]
        mode: Mode,
        /// Metrics JSON destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-image prediction dump.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generate a synthetic long-tail manifest.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo statistics of the bi-level sampler.
    AuditSampler {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10_000)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every trainable parameter on a toy image.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Corrupt the analytic gradients (negative control).
        #[arg(long)]
        inject_bug: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_manifest(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = flag.or_else(|| cfg.manifest.clone()).ok_or_else(|| Error::Config("no manifest given (--manifest or `manifest` in the config)".into()))?;
    DatasetManifest::load(&path)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Returns `Ok(false)` when a check ran and failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, manifest, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let manifest = load_manifest(manifest, &cfg)?;
            let outcome = train(&cfg, &manifest, |model, step| {
                let path = sibling(&out, &format!(".step{step}"));
                Checkpoint::from_model(model, &cfg, step).save(&path)?;
                info!("wrote {}", path.display());
                Ok(())
            })?;
            Checkpoint::from_model(&outcome.model, &cfg, outcome.steps).save(&out)?;
            write_json(&sibling(&out, ".log.json"), &outcome.log)?;
            println!("trained {} steps over {} epochs, checkpoint {}", outcome.steps, outcome.epochs, out.display());
            Ok(true)
        }
        Command::Eval { checkpoint, manifest, mode, out, predictions } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let model = ck.to_model()?;
            let manifest = load_manifest(manifest, &ck.config)?;
            let (report, preds) = evaluate(&model, &manifest, Split::Test, mode.into(), &ck.config.eval, worker_count())?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            if let Some(p) = predictions {
                write_json(&p, &preds)?;
            }
            Ok(true)
        }
        Command::GenSynth { config, seed, out } => {
            let mut cfg = load_config(config.as_deref(), None)?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let manifest = generate_synthetic_dataset(&cfg.synth)?;
            manifest.save(&out)?;
            println!("wrote {} images to {}", manifest.images.len(), out.display());
            Ok(true)
        }
        Command::AuditSampler { config, manifest, seed, epochs, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let manifest = load_manifest(manifest, &cfg)?;
            let report = Sampler::from_manifest(&manifest, cfg.sampler.clone())?.audit(epochs, cfg.seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(true)
        }
        Command::Gradcheck { config, seed, inject_bug, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let outcome = model_gradcheck(&cfg, &GradcheckOptions { inject_bug, ..Default::default() })?;
            println!(
                "{}: max rel. err {:.3e} over {} tensors ({} elements, {} skipped at kinks)",
                if outcome.passed { "PASS" } else { "FAIL" },
                outcome.max_rel_err,
                outcome.num_params,
                outcome.num_elements,
                outcome.skipped.len()
            );
            for name in &outcome.offenders {
                println!("  offending: {name}");
            }
            for s in &outcome.skipped {
                println!("  skipped: {}[{}]", s.name, s.index);
            }
            if let Some(p) = out {
                write_json(&p, &outcome)?;
            }
            Ok(outcome.passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
