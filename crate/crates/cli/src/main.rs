use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kqgc::config::{PipelineConfig, Preset};
use kqgc::pipeline::{self, FeatureSource};

/// Synthetic knowledge-graph pipeline: generate, pre-train TransE, train
/// the knowledge-query convolution, evaluate downstream PR-AUC.
#[derive(Parser)]
#[command(name = "kqgc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic graph, brand labels and baseline features.
    Gen(Common),
    /// Pre-train TransE; --checkpoint resumes from a snapshot.
    TrainKge(Common),
    /// Train the convolution; --checkpoint picks the TransE input table.
    TrainKqgc {
        #[command(flatten)]
        common: Common,
        /// Continue from a saved params.bin.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score feature sets and write report.txt and metrics.tsv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Extra feature set as NAME=CHECKPOINT; replaces the defaults.
        #[arg(long = "features", value_name = "NAME=PATH")]
        features: Vec<String>,
    },
    /// Write the entity rows of --checkpoint as TSV.
    Export {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to the checkpoint path with `.tsv`.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// gen, train-kge, train-kqgc and eval in one go.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["paper", "desk"], default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["mean", "attn1", "attn2"])]
    aggregator: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Any configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut overrides = BTreeMap::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            overrides.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(s) = self.seed {
            overrides.insert("seed".into(), s.to_string());
        }
        if let Some(o) = &self.out {
            overrides.insert("out".into(), o.display().to_string());
        }
        if let Some(a) = &self.aggregator {
            overrides.insert("aggregator".into(), a.clone());
        }
        if let Some(l) = self.layers {
            overrides.insert("layers".into(), l.to_string());
        }
        let preset: Preset = self.preset.parse()?;
        Ok(PipelineConfig::load(preset, self.config.as_deref(), &overrides)?)
    }
}

fn parse_features(specs: &[String]) -> Result<Vec<FeatureSource>> {
    specs
        .iter()
        .map(|s| {
            let (name, path) = s
                .split_once('=')
                .with_context(|| format!("--features expects NAME=PATH, got {s:?}"))?;
            Ok(FeatureSource {
                name: name.to_string(),
                path: PathBuf::from(path),
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => pipeline::cmd_gen(&c.config()?)?,
        Command::TrainKge(c) => {
            let path = pipeline::cmd_train_kge(&c.config()?, c.checkpoint.as_deref())?;
            println!("{}", path.display());
        }
        Command::TrainKqgc { common, resume } => {
            let path =
                pipeline::cmd_train_kqgc(&common.config()?, common.checkpoint.as_deref(), resume.as_deref())?;
            println!("{}", path.display());
        }
        Command::Eval { common, features } => {
            let cfg = common.config()?;
            let sources = if features.is_empty() {
                pipeline::default_feature_sources(&cfg)
            } else {
                parse_features(&features)?
            };
            pipeline::cmd_eval(&cfg, &sources)?;
            print!("{}", std::fs::read_to_string(pipeline::Layout::new(&cfg.out_dir).report())?);
        }
        Command::Export { common, tsv } => {
            let Some(ckpt) = common.checkpoint else {
                bail!("export needs --checkpoint PATH");
            };
            let tsv = tsv.unwrap_or_else(|| ckpt.with_extension("tsv"));
            pipeline::cmd_export(&ckpt, &tsv)?;
            println!("{}", tsv.display());
        }
        Command::Pipeline(c) => {
            let cfg = c.config()?;
            pipeline::run_pipeline(&cfg)?;
            print!("{}", std::fs::read_to_string(pipeline::Layout::new(&cfg.out_dir).report())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KQGC_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
