//! File-based pipeline stages. Every stage reads its inputs from and writes
//! its outputs to the configured output directory:
//!
//! ```text
//! kg.tsv  labels.tsv  baseline.tsv  config.cfg
//! kge/epoch-000100.ckpt  kge/final.ckpt        (+ .cfg sidecars)
//! kqgc/params.bin  kqgc/embeddings.ckpt        (+ .cfg sidecars)
//! report.txt  metrics.tsv  curves/*.csv
//! ```

use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{
    load_embeddings, load_params, read_sidecar, read_tsv, save_embeddings, save_params, sidecar_path,
    write_sidecar, write_tsv,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{brand_pr_auc, format_report, metric_lines, pr_curve_csv, select_rows, concat_features, FeatureSetReport};
use crate::graph::{IdMode, KnowledgeGraph};
use crate::layer::{train_kqgc_from, KqgcParams, PairDataset};
use crate::synth::{generate_cluster_kg, read_labels, write_labels, PURCHASE};
use crate::transe::{init_kge, train_kge_from, EmbeddingTable};

/// Seed offset for the convolution's parameter initialization.
const PARAM_INIT_SALT: u64 = 0x7061_7261_6d73;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn kg(&self) -> PathBuf {
        self.root.join("kg.tsv")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.tsv")
    }

    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline.tsv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.cfg")
    }

    pub fn kge_epoch(&self, epoch: usize) -> PathBuf {
        self.root.join("kge").join(format!("epoch-{epoch:06}.ckpt"))
    }

    pub fn kge_final(&self) -> PathBuf {
        self.root.join("kge").join("final.ckpt")
    }

    pub fn kqgc_params(&self) -> PathBuf {
        self.root.join("kqgc").join("params.bin")
    }

    pub fn kqgc_embeddings(&self) -> PathBuf {
        self.root.join("kqgc").join("embeddings.ckpt")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.tsv")
    }

    pub fn curve(&self, set: &str, brand: usize) -> PathBuf {
        let safe: String = set
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        self.root.join("curves").join(format!("{safe}-brand{brand}.csv"))
    }
}

fn layout(cfg: &PipelineConfig) -> Layout {
    Layout::new(&cfg.out_dir)
}

/// Config as persisted next to outputs. The output directory is left out
/// so identical runs in different directories produce identical files.
fn persisted_config(cfg: &PipelineConfig) -> Vec<(String, String)> {
    cfg.to_key_values().into_iter().filter(|(k, _)| k != "out").collect()
}

fn sidecar_entries(cfg: &PipelineConfig, epoch: usize) -> Vec<(String, String)> {
    let mut kv = persisted_config(cfg);
    kv.push(("epoch".into(), epoch.to_string()));
    kv
}

/// Epoch recorded in a checkpoint's sidecar.
pub fn checkpoint_epoch(checkpoint: &Path) -> Result<usize> {
    let side = sidecar_path(checkpoint);
    let kv = read_sidecar(&side)?;
    let raw = kv
        .get("epoch")
        .ok_or_else(|| Error::config("epoch", format!("missing in {}", side.display())))?;
    raw.parse()
        .map_err(|_| Error::config("epoch", format!("cannot parse {raw:?} in {}", side.display())))
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::load_triples(path, IdMode::Integer)?;
    kg.build_message_graph();
    Ok(kg)
}

/// Writes the synthetic graph, brand labels and baseline features.
pub fn cmd_gen(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let out = layout(cfg);
    std::fs::create_dir_all(&out.root).map_err(|e| Error::io(&out.root, e))?;
    let bench = generate_cluster_kg(&cfg.synth)?;
    bench.graph.write_triples(out.kg())?;
    write_labels(out.labels(), &bench.datasets)?;
    write_tsv(out.baseline(), bench.baseline.view())?;
    write_sidecar(out.config(), &persisted_config(cfg))?;
    info!(
        "gen: {} entities, {} triples, {} brands -> {}",
        bench.graph.num_entities,
        bench.graph.triples.len(),
        bench.datasets.len(),
        out.root.display()
    );
    Ok(())
}

/// Trains TransE on `kg.tsv`, writing a snapshot every `checkpoint_every`
/// epochs and `final.ckpt`. With `resume`, training continues after the
/// epoch stored in that checkpoint's sidecar.
pub fn cmd_train_kge(cfg: &PipelineConfig, resume: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out = layout(cfg);
    let kg = load_graph(&out.kg())?;
    let (table, start) = match resume {
        Some(path) => {
            let table = load_embeddings(path)?;
            let epoch = checkpoint_epoch(path)?;
            info!("train-kge: resuming from {} at epoch {epoch}", path.display());
            (table, epoch)
        }
        None => (init_kge(&kg, &cfg.kge), 0),
    };
    if start > cfg.kge.epochs {
        return Err(Error::config(
            "kge_epochs",
            format!("checkpoint is at epoch {start}, past the configured {}", cfg.kge.epochs),
        ));
    }
    let (table, losses) = train_kge_from(&kg, &cfg.kge, table, start, &mut |epoch, t| {
        let path = out.kge_epoch(epoch);
        save_embeddings(&path, t)?;
        write_sidecar(sidecar_path(&path), &sidecar_entries(cfg, epoch))?;
        info!("train-kge: epoch {epoch} -> {}", path.display());
        Ok(())
    })?;
    if let Some(last) = losses.last() {
        info!("train-kge: final epoch loss {last:.6}");
    }
    let path = out.kge_final();
    save_embeddings(&path, &table)?;
    write_sidecar(sidecar_path(&path), &sidecar_entries(cfg, cfg.kge.epochs))?;
    Ok(path)
}

/// TransE table the convolution consumes under this config.
pub fn kqgc_input_path(cfg: &PipelineConfig) -> PathBuf {
    let out = layout(cfg);
    match cfg.kqgc_input_epoch {
        0 => out.kge_final(),
        e if e == cfg.kge.epochs => out.kge_final(),
        e => out.kge_epoch(e),
    }
}

pub fn initial_params(cfg: &PipelineConfig) -> KqgcParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PARAM_INIT_SALT);
    let dims = vec![cfg.kge.dim; cfg.layers + 1];
    let mut params = KqgcParams::xavier(&dims, cfg.aggregator, &mut rng);
    for l in &mut params.layers {
        l.coefficient_rule = cfg.coefficient_rule;
    }
    params
}

/// Trains the convolution on the purchase pairs of `kg.tsv` with the
/// TransE table `input` (default: [`kqgc_input_path`]) frozen. Writes
/// `params.bin` and the full-neighborhood output `embeddings.ckpt`.
/// `resume` continues from a saved `params.bin`.
pub fn cmd_train_kqgc(cfg: &PipelineConfig, input: Option<&Path>, resume: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out = layout(cfg);
    let kg = load_graph(&out.kg())?;
    let input = input.map_or_else(|| kqgc_input_path(cfg), Path::to_path_buf);
    let pretrained = load_embeddings(&input)?;
    let pairs = PairDataset::from_graph(&kg, PURCHASE)?;
    let (params, start) = match resume {
        Some(path) => (load_params(path)?, checkpoint_epoch(path)?),
        None => (initial_params(cfg), 0),
    };
    if start > cfg.kqgc.epochs {
        return Err(Error::config(
            "kqgc_epochs",
            format!("checkpoint is at epoch {start}, past the configured {}", cfg.kqgc.epochs),
        ));
    }
    info!("train-kqgc: input {}", input.display());
    let run = train_kqgc_from(&kg, &pretrained, &pairs, params, &cfg.kqgc, start)?;
    let path = out.kqgc_params();
    save_params(&path, &run.params)?;
    write_sidecar(sidecar_path(&path), &sidecar_entries(cfg, cfg.kqgc.epochs))?;
    save_embeddings(out.kqgc_embeddings(), &run.state.into_table())?;
    Ok(path)
}

/// A named embedding table to concatenate with the baseline features.
#[derive(Debug, Clone)]
pub struct FeatureSource {
    pub name: String,
    pub path: PathBuf,
}

/// Baseline, TransE input and convolution output, as produced by the
/// earlier stages.
pub fn default_feature_sources(cfg: &PipelineConfig) -> Vec<FeatureSource> {
    vec![
        FeatureSource {
            name: "transe+baseline".into(),
            path: kqgc_input_path(cfg),
        },
        FeatureSource {
            name: format!("kqgc({})+baseline", cfg.aggregator.name()),
            path: layout(cfg).kqgc_embeddings(),
        },
    ]
}

/// Scores the baseline alone and each source concatenated with it; writes
/// `report.txt` and `metrics.tsv` and returns the per-set results.
pub fn cmd_eval(cfg: &PipelineConfig, sources: &[FeatureSource]) -> Result<Vec<FeatureSetReport>> {
    cfg.validate()?;
    let out = layout(cfg);
    let datasets = read_labels(out.labels())?;
    let baseline = read_tsv(out.baseline())?;
    let mut sets = Vec::with_capacity(sources.len() + 1);
    let mut score = |name: &str, features: ndarray::ArrayView2<f64>| -> Result<()> {
        let results = brand_pr_auc(features, &datasets, &cfg.classifier)?;
        if cfg.pr_curves {
            for (brand, r) in &results {
                let path = out.curve(name, *brand);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                std::fs::write(&path, pr_curve_csv(r)).map_err(|e| Error::io(&path, e))?;
            }
        }
        sets.push(FeatureSetReport::from_results(name, &results));
        Ok(())
    };
    score("baseline", baseline.view())?;
    let users: Vec<usize> = (0..baseline.nrows()).collect();
    for src in sources {
        let table: EmbeddingTable = load_embeddings(&src.path)?;
        let rows = select_rows(table.entities.view(), &users)?;
        let features = concat_features(&[rows.view(), baseline.view()])?;
        score(&src.name, features.view())?;
    }
    let report = format_report(&sets)?;
    write_text(&out.report(), &report)?;
    write_text(&out.metrics(), &metric_lines(&sets))?;
    log::debug!("eval:\n{report}");
    Ok(sets)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the entity rows of a checkpoint as TSV.
pub fn cmd_export(checkpoint: &Path, tsv: &Path) -> Result<()> {
    let table = load_embeddings(checkpoint)?;
    write_tsv(tsv, table.entities.view())
}

/// gen, train-kge, train-kqgc and eval in sequence.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<FeatureSetReport>> {
    cmd_gen(cfg)?;
    cmd_train_kge(cfg, None)?;
    cmd_train_kqgc(cfg, None, None)?;
    cmd_eval(cfg, &default_feature_sources(cfg))
}
