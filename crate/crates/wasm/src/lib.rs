//! Browser bindings for three small demos: one convolution layer over a
//! 2-D translation graph, attention coefficients for a hand-placed
//! neighborhood, and a PR curve for pasted scores.
//!
//! Every export returns a JSON string. The `*_json` functions hold the
//! logic so they can be tested natively.

use ndarray::{Array1, Array2};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use kqgc::eval::{pr_auc, smoothing_report};
use kqgc::layer::{aggregate_attention, aggregate_mean, attention_coefficients, forward_full, AttentionScore};
use kqgc::synth::generate_translation_kg;
use kqgc::{Aggregator, CoefficientRule, KqgcParams, LayerParams, LayerState};

fn parse_aggregator(name: &str) -> Result<Aggregator, String> {
    Aggregator::parse(name).ok_or_else(|| format!("unknown aggregator {name:?}"))
}

fn parse_rule(name: &str) -> Result<CoefficientRule, String> {
    match name {
        "ratio" => Ok(CoefficientRule::Ratio),
        "softmax" => Ok(CoefficientRule::Softmax),
        _ => Err(format!("unknown coefficient rule {name:?}")),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn rows(m: &Array2<f64>) -> Vec<[f64; 2]> {
    m.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

#[derive(Serialize)]
struct SmoothingDemo {
    input: Vec<[f64; 2]>,
    output: Vec<[f64; 2]>,
    relations: Vec<[f64; 2]>,
    edges: Vec<[usize; 3]>,
    distance_before: f64,
    distance_after: f64,
    cosine_before: f64,
    cosine_after: f64,
}

pub fn smoothing_json(entities: usize, relations: usize, noise: f64, aggregator: &str, seed: u64) -> Result<String, String> {
    let agg = parse_aggregator(aggregator)?;
    let tkg = generate_translation_kg(entities, relations, 2, noise, seed).map_err(|e| e.to_string())?;
    let mut kg = tkg.graph;
    kg.build_message_graph();
    let input = LayerState::from_table(&tkg.planted);
    let params = KqgcParams {
        layers: vec![LayerParams::identity(2, agg)],
    };
    let out = forward_full(&kg, &input, &params).map_err(|e| e.to_string())?;
    let before = smoothing_report(&kg, &input).map_err(|e| e.to_string())?;
    let after = smoothing_report(&kg, &out).map_err(|e| e.to_string())?;
    to_json(&SmoothingDemo {
        input: rows(&input.nodes),
        output: rows(&unit_rows(&out.nodes)),
        relations: rows(&input.relations),
        edges: kg.triples.iter().map(|t| [t.head, t.relation, t.tail]).collect(),
        distance_before: before.query_distance,
        distance_after: after.query_distance,
        cosine_before: before.neighbor_cosine,
        cosine_after: after.neighbor_cosine,
    })
}

/// Generates a 2-D translation graph, runs one identity-weight layer and
/// returns input and (unit-scaled) output positions with alignment stats.
#[wasm_bindgen]
pub fn smoothing(entities: usize, relations: usize, noise: f64, aggregator: &str, seed: u64) -> Result<String, JsError> {
    smoothing_json(entities, relations, noise, aggregator, seed).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct AttentionDemo {
    raw: Vec<f64>,
    alpha: Vec<f64>,
    guarded: bool,
    attention: Vec<f64>,
    mean: Vec<f64>,
}

/// `queries` is a flat `k x 2` array, `target` the destination row and
/// `a` (length 4) the learned score vector, ignored by `attn1`.
pub fn attention_json(queries: &[f64], target: &[f64], a: &[f64], aggregator: &str, rule: &str) -> Result<String, String> {
    if queries.is_empty() || !queries.len().is_multiple_of(2) || target.len() != 2 {
        return Err("need k x 2 queries and a 2-D target".into());
    }
    let q = Array2::from_shape_vec((queries.len() / 2, 2), queries.to_vec()).map_err(|e| e.to_string())?;
    let h_v = Array1::from_vec(target.to_vec());
    let a = Array1::from_vec(a.to_vec());
    let score = match parse_aggregator(aggregator)? {
        Aggregator::AttnDot => AttentionScore::Dot,
        Aggregator::AttnLearned => AttentionScore::Learned {
            a: a.view(),
            leaky_slope: 0.01,
        },
        Aggregator::Mean => return Err("mean has no coefficients; pick attn1 or attn2".into()),
    };
    let c = attention_coefficients(q.view(), h_v.view(), score, parse_rule(rule)?).map_err(|e| e.to_string())?;
    let attention = aggregate_attention(q.view(), &c.alpha).map_err(|e| e.to_string())?;
    to_json(&AttentionDemo {
        attention: attention.to_vec(),
        mean: aggregate_mean(q.view()).to_vec(),
        raw: c.raw,
        alpha: c.alpha,
        guarded: c.guarded,
    })
}

/// Attention coefficients and aggregates for a hand-placed neighborhood.
#[wasm_bindgen]
pub fn attention(queries: &[f64], target: &[f64], a: &[f64], aggregator: &str, rule: &str) -> Result<String, JsError> {
    attention_json(queries, target, a, aggregator, rule).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct PrDemo {
    pr_auc: f64,
    positives: usize,
    total: usize,
    recall: Vec<f64>,
    precision: Vec<f64>,
}

pub fn pr_curve_json(scores: &[f64], labels: &[u8]) -> Result<String, String> {
    let r = pr_auc(scores, labels).map_err(|e| e.to_string())?;
    to_json(&PrDemo {
        pr_auc: r.pr_auc,
        positives: r.num_positives,
        total: r.num_total,
        recall: r.points.iter().map(|p| p.recall).collect(),
        precision: r.points.iter().map(|p| p.precision).collect(),
    })
}

/// Average precision and the precision/recall points for the given scores.
#[wasm_bindgen]
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<String, JsError> {
    pr_curve_json(scores, labels).map_err(|e| JsError::new(&e))
}
