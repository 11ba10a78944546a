//! Library stages wired together by hand, without the pipeline module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kqgc::eval::{brand_pr_auc, concat_features, select_rows, ClassifierConfig};
use kqgc::layer::train_kqgc;
use kqgc::synth::{generate_cluster_kg, parse_labels, write_labels, SyntheticSpec};
use kqgc::transe::train_kge;
use kqgc::{Aggregator, EntityKind, IdMode, KnowledgeGraph, KqgcParams, PairDataset, TrainConfig};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        num_users: 120,
        num_items: 100,
        num_attributes: 20,
        intra_cluster_purchase_prob: 0.08,
        cross_cluster_purchase_prob: 0.01,
        seed: 5,
        ..SyntheticSpec::desk()
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 128,
        learning_rate: 0.01,
        margin: 1.0,
        neg_ratio: 1,
        dim: 8,
        seed: 5,
        checkpoint_every: 10,
        normalize_entities: true,
        fan_out: 10,
    }
}

#[test]
fn files_reload_to_the_same_graph_and_labels() {
    let bench = generate_cluster_kg(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let kg_path = dir.path().join("kg.tsv");
    bench.graph.write_triples(&kg_path).unwrap();
    let back = KnowledgeGraph::load_triples(&kg_path, IdMode::Integer).unwrap();
    assert_eq!(back.triples, bench.graph.triples);
    assert_eq!(back.num_entities, bench.graph.num_entities);
    assert_eq!(back.entities_of_kind(EntityKind::User).len(), 120);

    let labels = dir.path().join("labels.tsv");
    write_labels(&labels, &bench.datasets).unwrap();
    let text = std::fs::read_to_string(&labels).unwrap();
    assert_eq!(parse_labels(&text).unwrap(), bench.datasets);
}

#[test]
fn pretrain_convolve_and_score() {
    let bench = generate_cluster_kg(&spec()).unwrap();
    let mut kg = bench.graph.clone();
    let cfg = train_cfg();
    let kge = train_kge(&kg, &cfg).unwrap();
    assert_eq!(kge.epoch_losses.len(), cfg.epochs);
    assert!(kge.epoch_losses.last().unwrap() < kge.epoch_losses.first().unwrap());
    assert_eq!(kge.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), [10, 20, 30]);

    kg.build_message_graph();
    let pairs = PairDataset::from_graph(&kg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = KqgcParams::xavier(&[8, 8], Aggregator::AttnDot, &mut rng);
    let run = train_kqgc(&kg, &kge.table, &pairs, params, &TrainConfig { epochs: 3, neg_ratio: 3, ..cfg }).unwrap();
    assert_eq!(run.epoch_losses.len(), 3);
    assert!(run.state.is_finite());
    assert_eq!(run.state.nodes.dim(), (kg.num_entities, 8));

    let users: Vec<usize> = (0..bench.baseline.nrows()).collect();
    let rows = select_rows(run.state.nodes.view(), &users).unwrap();
    let features = concat_features(&[rows.view(), bench.baseline.view()]).unwrap();
    let results = brand_pr_auc(features.view(), &bench.datasets, &ClassifierConfig::default()).unwrap();
    assert_eq!(results.len(), bench.datasets.len());
    for (_, r) in &results {
        assert!((0.0..=1.0).contains(&r.pr_auc));
        assert!(r.num_positives > 0);
    }
}
