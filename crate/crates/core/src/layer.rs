//! Knowledge-query graph convolution.
//!
//! Each destination node aggregates the knowledge queries `h_src ± h_rel` of
//! its incoming message edges (minus for reverse edges), then applies a
//! shared linear map to both nodes and relations:
//!
//! ```text
//! h_v' = W (h_v + m_v) + b
//! r'   = W r + b
//! ```
//!
//! No activation is applied between layers. Gradients for the collaborative
//! filtering loss are computed by a hand-written reverse pass over a tape
//! recorded during the forward pass.

use log::{debug, info};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{check_index, KnowledgeGraph, MessageEdge};
use crate::transe::{epoch_rng, EmbeddingTable, TrainConfig};

/// Guard below which a ratio-normalized attention denominator is treated
/// as zero and coefficients fall back to uniform.
pub const ATTENTION_GUARD: f64 = 1e-8;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Mean,
    /// Raw score is the inner product of the query and the destination.
    AttnDot,
    /// Raw score is `LeakyReLU(a . [query || destination])`.
    AttnLearned,
}

impl Aggregator {
    pub fn code(self) -> u64 {
        match self {
            Aggregator::Mean => 0,
            Aggregator::AttnDot => 1,
            Aggregator::AttnLearned => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Aggregator::Mean),
            1 => Some(Aggregator::AttnDot),
            2 => Some(Aggregator::AttnLearned),
            _ => None,
        }
    }

    /// CLI spelling: `mean`, `attn1`, `attn2`.
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::AttnDot => "attn1",
            Aggregator::AttnLearned => "attn2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Aggregator::Mean),
            "attn1" | "attn_dot" => Some(Aggregator::AttnDot),
            "attn2" | "attn_learned" => Some(Aggregator::AttnLearned),
            _ => None,
        }
    }
}

/// How raw attention scores become coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CoefficientRule {
    /// `alpha_i = e_i / sum_k e_k`, uniform when the sum is below the guard.
    #[default]
    Ratio,
    Softmax,
}

impl CoefficientRule {
    pub fn code(self) -> u64 {
        match self {
            CoefficientRule::Ratio => 0,
            CoefficientRule::Softmax => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(CoefficientRule::Ratio),
            1 => Some(CoefficientRule::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `H_out x H_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub aggregator: Aggregator,
    /// Length `2 * H_in`; present iff the aggregator is `AttnLearned`.
    pub attention: Option<Array1<f64>>,
    pub leaky_slope: f64,
    pub coefficient_rule: CoefficientRule,
}

impl LayerParams {
    pub fn identity(dim: usize, aggregator: Aggregator) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
            aggregator,
            attention: (aggregator == Aggregator::AttnLearned).then(|| Array1::zeros(2 * dim)),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            coefficient_rule: CoefficientRule::Ratio,
        }
    }

    /// Xavier-normal initialization: `W` and `b` with std
    /// `sqrt(2 / (H_in + H_out))`, `a` treated as a `1 x 2H_in` matrix.
    pub fn xavier<R: Rng + ?Sized>(
        dim_in: usize,
        dim_out: usize,
        aggregator: Aggregator,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (dim_in + dim_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Array2::from_shape_fn((dim_out, dim_in), |_| normal.sample(rng));
        let bias = Array1::from_shape_fn(dim_out, |_| normal.sample(rng));
        let attention = (aggregator == Aggregator::AttnLearned).then(|| {
            let std_a = (2.0 / (1 + 2 * dim_in) as f64).sqrt();
            let normal_a = Normal::new(0.0, std_a).expect("finite std");
            Array1::from_shape_fn(2 * dim_in, |_| normal_a.sample(rng))
        });
        Self {
            weight,
            bias,
            aggregator,
            attention,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            coefficient_rule: CoefficientRule::Ratio,
        }
    }

    pub fn dim_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.weight.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.bias.len() != self.dim_out() {
            return Err(Error::Shape(format!(
                "bias length {} != output dim {}",
                self.bias.len(),
                self.dim_out()
            )));
        }
        match (&self.attention, self.aggregator) {
            (Some(a), Aggregator::AttnLearned) if a.len() == 2 * self.dim_in() => {}
            (None, Aggregator::Mean | Aggregator::AttnDot) => {}
            (Some(a), Aggregator::AttnLearned) => {
                return Err(Error::Shape(format!(
                    "attention vector length {} != 2 x {}",
                    a.len(),
                    self.dim_in()
                )))
            }
            (None, Aggregator::AttnLearned) => {
                return Err(Error::Shape("attn2 layer without attention vector".into()))
            }
            (Some(_), _) => {
                return Err(Error::Shape("attention vector on a non-attn2 layer".into()))
            }
        }
        Ok(())
    }

    fn num_values(&self) -> usize {
        self.weight.len() + self.bias.len() + self.attention.as_ref().map_or(0, |a| a.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KqgcParams {
    pub layers: Vec<LayerParams>,
}

impl KqgcParams {
    /// `dims = [H_0, H_1, ..., H_L]` gives `L` layers.
    pub fn xavier<R: Rng + ?Sized>(dims: &[usize], aggregator: Aggregator, rng: &mut R) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| LayerParams::xavier(w[0], w[1], aggregator, rng))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if let Some(next) = self.layers.get(i + 1) {
                if next.dim_in() != layer.dim_out() {
                    return Err(Error::Shape(format!(
                        "layer {i} outputs {} but layer {} takes {}",
                        layer.dim_out(),
                        i + 1,
                        next.dim_in()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Per layer: `W` row-major, `b`, then `a` when present.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(a) = &l.attention {
                out.extend(a.iter());
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
            if let Some(a) = &mut l.attention {
                a.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(LayerParams::num_values).sum()
    }
}

/// Node and relation embeddings entering or leaving a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub nodes: Array2<f64>,
    pub relations: Array2<f64>,
}

impl LayerState {
    pub fn from_table(table: &EmbeddingTable) -> Self {
        Self {
            nodes: table.entities.clone(),
            relations: table.relations.clone(),
        }
    }

    pub fn into_table(self) -> EmbeddingTable {
        EmbeddingTable {
            entities: self.nodes,
            relations: self.relations,
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().chain(self.relations.iter()).all(|v| v.is_finite())
    }
}

/// `h_src + h_r` for a forward edge, `h_src - h_r` for a reverse edge.
pub fn knowledge_query(state: &LayerState, edge: &MessageEdge) -> Result<Array1<f64>> {
    check_index("entity", edge.source, state.nodes.nrows())?;
    check_index("relation", edge.relation, state.relations.nrows())?;
    Ok(query_unchecked(state, edge))
}

fn query_unchecked(state: &LayerState, edge: &MessageEdge) -> Array1<f64> {
    let sign = edge.direction.sign();
    let src = state.nodes.row(edge.source);
    let rel = state.relations.row(edge.relation);
    Array1::from_shape_fn(src.len(), |d| src[d] + sign * rel[d])
}

/// `sum_i w_i q_i`, accumulated in row order.
fn weighted_sum(queries: ArrayView2<f64>, weights: &[f64]) -> Array1<f64> {
    let mut out = Array1::zeros(queries.ncols());
    for (q, &w) in queries.rows().into_iter().zip(weights) {
        out.scaled_add(w, &q);
    }
    out
}

fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Elementwise mean of the query rows; an empty neighborhood yields zeros.
///
/// Computed as a weighted sum with weights `1/k`, the same kernel as
/// [`aggregate_attention`], so uniform attention reproduces it bit for bit.
pub fn aggregate_mean(queries: ArrayView2<f64>) -> Array1<f64> {
    weighted_sum(queries, &uniform_weights(queries.nrows()))
}

/// Raw-score rule for attention aggregators.
#[derive(Debug, Clone, Copy)]
pub enum AttentionScore<'a> {
    Dot,
    Learned { a: ArrayView1<'a, f64>, leaky_slope: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub alpha: Vec<f64>,
    pub raw: Vec<f64>,
    /// True when the ratio denominator fell below [`ATTENTION_GUARD`].
    pub guarded: bool,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Pre-activation `a . [q || h_v]` for the learned score.
fn learned_preactivation(a: ArrayView1<f64>, q: ArrayView1<f64>, h_v: ArrayView1<f64>) -> f64 {
    let h = q.len();
    a.slice(s![..h]).dot(&q) + a.slice(s![h..]).dot(&h_v)
}

pub fn attention_coefficients(
    queries: ArrayView2<f64>,
    h_v: ArrayView1<f64>,
    score: AttentionScore<'_>,
    rule: CoefficientRule,
) -> Result<Coefficients> {
    if queries.nrows() == 0 {
        return Err(Error::Invalid(
            "attention over an empty neighborhood".into(),
        ));
    }
    if queries.ncols() != h_v.len() {
        return Err(Error::Shape(format!(
            "query dim {} != destination dim {}",
            queries.ncols(),
            h_v.len()
        )));
    }
    let raw: Vec<f64> = match score {
        AttentionScore::Dot => queries.rows().into_iter().map(|q| q.dot(&h_v)).collect(),
        AttentionScore::Learned { a, leaky_slope } => {
            if a.len() != 2 * h_v.len() {
                return Err(Error::Shape(format!(
                    "attention vector length {} != 2 x {}",
                    a.len(),
                    h_v.len()
                )));
            }
            queries
                .rows()
                .into_iter()
                .map(|q| leaky(learned_preactivation(a, q, h_v), leaky_slope))
                .collect()
        }
    };
    Ok(normalize_scores(raw, rule))
}

fn normalize_scores(raw: Vec<f64>, rule: CoefficientRule) -> Coefficients {
    let k = raw.len();
    match rule {
        CoefficientRule::Ratio => {
            let total: f64 = raw.iter().sum();
            if total.abs() < ATTENTION_GUARD {
                Coefficients {
                    alpha: uniform_weights(k),
                    raw,
                    guarded: true,
                }
            } else {
                Coefficients {
                    alpha: raw.iter().map(|e| e / total).collect(),
                    raw,
                    guarded: false,
                }
            }
        }
        CoefficientRule::Softmax => {
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = raw.iter().map(|e| (e - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            Coefficients {
                alpha: exp.iter().map(|e| e / total).collect(),
                raw,
                guarded: false,
            }
        }
    }
}

/// `sum_i alpha_i q_i`.
pub fn aggregate_attention(queries: ArrayView2<f64>, alpha: &[f64]) -> Result<Array1<f64>> {
    if queries.nrows() != alpha.len() {
        return Err(Error::LengthMismatch {
            left: queries.nrows(),
            right: alpha.len(),
            context: "queries vs coefficients",
        });
    }
    Ok(weighted_sum(queries, alpha))
}

/// `W (h_v + m) + b`, strictly linear.
pub fn update_node(
    h_v: ArrayView1<f64>,
    m: ArrayView1<f64>,
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if h_v.len() != m.len() || weight.ncols() != h_v.len() || weight.nrows() != bias.len() {
        return Err(Error::Shape(format!(
            "h {} / m {} / W {}x{} / b {}",
            h_v.len(),
            m.len(),
            weight.nrows(),
            weight.ncols(),
            bias.len()
        )));
    }
    let z = &h_v + &m;
    Ok(weight.dot(&z) + bias)
}

/// `r -> W r + b` for every relation row.
pub fn update_relations(
    relations: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    if weight.ncols() != relations.ncols() || weight.nrows() != bias.len() {
        return Err(Error::Shape(format!(
            "relations {}x{} / W {}x{} / b {}",
            relations.nrows(),
            relations.ncols(),
            weight.nrows(),
            weight.ncols(),
            bias.len()
        )));
    }
    Ok(relations.dot(&weight.t()) + &bias)
}

/// Neighbor sampling applied during training.
pub struct Sampling<'r, R: Rng + ?Sized> {
    pub fan_out: usize,
    pub rng: &'r mut R,
}

/// Per-node record of one layer's aggregation.
#[derive(Debug, Clone)]
struct NodeTape {
    edges: Vec<MessageEdge>,
    queries: Array2<f64>,
    alpha: Vec<f64>,
    raw: Vec<f64>,
    /// LeakyReLU inputs of the learned score; empty otherwise.
    preact: Vec<f64>,
    guarded: bool,
    z: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: LayerState,
    nodes: Vec<NodeTape>,
}

fn layer_forward(
    input: &LayerState,
    params: &LayerParams,
    edges_of: &[Vec<MessageEdge>],
    keep_tape: bool,
) -> Result<(LayerState, Option<LayerTape>)> {
    let n = input.nodes.nrows();
    let mut out_nodes = Array2::zeros((n, params.dim_out()));
    let mut tapes = Vec::with_capacity(if keep_tape { n } else { 0 });
    for v in 0..n {
        let edges = &edges_of[v];
        let h_v = input.nodes.row(v);
        let mut queries = Array2::zeros((edges.len(), input.dim()));
        for (mut row, e) in queries.rows_mut().into_iter().zip(edges) {
            row.assign(&query_unchecked(input, e));
        }
        let (m, alpha, raw, preact, guarded) = if edges.is_empty() {
            (Array1::zeros(input.dim()), Vec::new(), Vec::new(), Vec::new(), false)
        } else {
            match params.aggregator {
                Aggregator::Mean => {
                    let w = uniform_weights(edges.len());
                    (weighted_sum(queries.view(), &w), w, Vec::new(), Vec::new(), false)
                }
                Aggregator::AttnDot | Aggregator::AttnLearned => {
                    let score = match (&params.attention, params.aggregator) {
                        (Some(a), Aggregator::AttnLearned) => AttentionScore::Learned {
                            a: a.view(),
                            leaky_slope: params.leaky_slope,
                        },
                        _ => AttentionScore::Dot,
                    };
                    let c = attention_coefficients(
                        queries.view(),
                        h_v,
                        score,
                        params.coefficient_rule,
                    )?;
                    let preact = match score {
                        AttentionScore::Learned { a, .. } => queries
                            .rows()
                            .into_iter()
                            .map(|q| learned_preactivation(a, q, h_v))
                            .collect(),
                        AttentionScore::Dot => Vec::new(),
                    };
                    let m = weighted_sum(queries.view(), &c.alpha);
                    (m, c.alpha, c.raw, preact, c.guarded)
                }
            }
        };
        let z = &h_v + &m;
        out_nodes
            .row_mut(v)
            .assign(&(params.weight.dot(&z) + &params.bias));
        if keep_tape {
            tapes.push(NodeTape {
                edges: edges.clone(),
                queries,
                alpha,
                raw,
                preact,
                guarded,
                z,
            });
        }
    }
    let out_relations = update_relations(input.relations.view(), params.weight.view(), params.bias.view())?;
    let tape = keep_tape.then(|| LayerTape {
        input: input.clone(),
        nodes: tapes,
    });
    Ok((
        LayerState {
            nodes: out_nodes,
            relations: out_relations,
        },
        tape,
    ))
}

fn check_forward_inputs(kg: &KnowledgeGraph, state: &LayerState, params: &KqgcParams) -> Result<()> {
    params.validate()?;
    if !kg.has_message_graph() {
        return Err(Error::Invalid("message graph not built".into()));
    }
    if state.nodes.nrows() != kg.num_entities || state.relations.nrows() != kg.num_relations {
        return Err(Error::Shape(format!(
            "state has {} nodes / {} relations, graph has {} / {}",
            state.nodes.nrows(),
            state.relations.nrows(),
            kg.num_entities,
            kg.num_relations
        )));
    }
    if state.dim() != params.layers[0].dim_in() || state.relations.ncols() != state.dim() {
        return Err(Error::Shape(format!(
            "state dim {} != first layer input dim {}",
            state.dim(),
            params.layers[0].dim_in()
        )));
    }
    Ok(())
}

/// Message edges used by each node: the full neighborhood, or a fresh
/// fan-out sample per node when sampling.
fn neighborhoods<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    sampling: &mut Option<Sampling<'_, R>>,
) -> Result<Vec<Vec<MessageEdge>>> {
    match sampling {
        None => Ok(kg.incoming.clone()),
        Some(s) => (0..kg.num_entities)
            .map(|v| kg.neighbor_sample(v, s.fan_out, s.rng))
            .collect(),
    }
}

fn run_forward<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    state0: &LayerState,
    params: &KqgcParams,
    mut sampling: Option<Sampling<'_, R>>,
    keep_tape: bool,
) -> Result<(LayerState, Vec<LayerTape>)> {
    check_forward_inputs(kg, state0, params)?;
    let mut state = state0.clone();
    let mut tapes = Vec::new();
    for layer in &params.layers {
        let edges = neighborhoods(kg, &mut sampling)?;
        let (next, tape) = layer_forward(&state, layer, &edges, keep_tape)?;
        tapes.extend(tape);
        state = next;
    }
    Ok((state, tapes))
}

/// Multi-layer forward pass. With `sampling`, each layer draws its own
/// neighborhoods; without it every incoming edge is used.
pub fn forward<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    state0: &LayerState,
    params: &KqgcParams,
    sampling: Option<Sampling<'_, R>>,
) -> Result<LayerState> {
    run_forward(kg, state0, params, sampling, false).map(|(s, _)| s)
}

/// Full-neighborhood forward pass.
pub fn forward_full(kg: &KnowledgeGraph, state0: &LayerState, params: &KqgcParams) -> Result<LayerState> {
    forward::<rand_chacha::ChaCha8Rng>(kg, state0, params, None)
}

/// Positive user-item purchase pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub positives: Vec<(usize, usize)>,
    pub purchase_relation: usize,
}

impl PairDataset {
    /// Every `(user, relation, item)` triple of `purchase_relation`.
    pub fn from_graph(kg: &KnowledgeGraph, purchase_relation: usize) -> Result<Self> {
        check_index("relation", purchase_relation, kg.num_relations)?;
        let positives: Vec<_> = kg
            .triples
            .iter()
            .filter(|t| t.relation == purchase_relation)
            .map(|t| (t.head, t.tail))
            .collect();
        if positives.is_empty() {
            return Err(Error::Invalid(format!(
                "no triples with relation {purchase_relation}"
            )));
        }
        Ok(Self {
            positives,
            purchase_relation,
        })
    }

    /// Sorted distinct items appearing in the positives.
    pub fn item_pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self.positives.iter().map(|p| p.1).collect();
        pool.sort_unstable();
        pool.dedup();
        pool
    }
}

/// Replaces the item of `pos` by a different item drawn uniformly from the
/// sorted, deduplicated `item_pool`.
pub fn sample_negative_pair<R: Rng + ?Sized>(
    pos: (usize, usize),
    rng: &mut R,
    item_pool: &[usize],
) -> Result<(usize, usize)> {
    if item_pool.len() < 2 {
        return Err(Error::Invalid(format!(
            "negative item pool needs at least 2 items, got {}",
            item_pool.len()
        )));
    }
    let item = match item_pool.binary_search(&pos.1) {
        Ok(skip) => {
            let mut i = rng.gen_range(0..item_pool.len() - 1);
            if i >= skip {
                i += 1;
            }
            item_pool[i]
        }
        Err(_) => item_pool[rng.gen_range(0..item_pool.len())],
    };
    Ok((pos.0, item))
}

/// Gradients of the CF loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub attention: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KqgcGrad {
    pub layers: Vec<LayerGrad>,
}

impl KqgcGrad {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(a) = &l.attention {
                out.extend(a.iter());
            }
        }
        out
    }
}

fn cf_residual(state: &LayerState, user: usize, item: usize, rel: usize) -> Array1<f64> {
    &state.nodes.row(user) + &state.relations.row(rel) - &state.nodes.row(item)
}

fn check_pairs(state: &LayerState, pairs: &[(usize, usize)]) -> Result<()> {
    for &(u, i) in pairs {
        check_index("entity", u, state.nodes.nrows())?;
        check_index("entity", i, state.nodes.nrows())?;
    }
    Ok(())
}

fn pair_ratio(pos: usize, neg: usize) -> Result<usize> {
    if pos == 0 || neg == 0 || !neg.is_multiple_of(pos) {
        return Err(Error::LengthMismatch {
            left: pos,
            right: neg,
            context: "negative pairs must be a positive multiple of positive pairs",
        });
    }
    Ok(neg / pos)
}

/// Margin loss over aligned pairs on an output state, with `L1` scores
/// `||h_u + h_purchase - h_i||_1`. `neg[j]` pairs with `pos[j / ratio]`.
pub fn cf_loss(
    state: &LayerState,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    purchase_rel: usize,
    margin: f64,
) -> Result<f64> {
    cf_loss_and_output_grad(state, pos, neg, purchase_rel, margin).map(|(l, _)| l)
}

/// Loss plus its gradient with respect to the output state.
fn cf_loss_and_output_grad(
    state: &LayerState,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    purchase_rel: usize,
    margin: f64,
) -> Result<(f64, LayerState)> {
    let ratio = pair_ratio(pos.len(), neg.len())?;
    check_pairs(state, pos)?;
    check_pairs(state, neg)?;
    check_index("relation", purchase_rel, state.relations.nrows())?;
    let mut grad = LayerState {
        nodes: Array2::zeros(state.nodes.raw_dim()),
        relations: Array2::zeros(state.relations.raw_dim()),
    };
    let pos_res: Vec<Array1<f64>> = pos
        .iter()
        .map(|&(u, i)| cf_residual(state, u, i, purchase_rel))
        .collect();
    let mut loss = 0.0;
    for (j, &(nu, ni)) in neg.iter().enumerate() {
        let (pu, pi) = pos[j / ratio];
        let pr = &pos_res[j / ratio];
        let nr = cf_residual(state, nu, ni, purchase_rel);
        let pair = margin + pr.mapv(f64::abs).sum() - nr.mapv(f64::abs).sum();
        if pair <= 0.0 {
            continue;
        }
        loss += pair;
        let sp = pr.mapv(f64::signum_or_zero);
        let sn = nr.mapv(f64::signum_or_zero);
        grad.nodes.row_mut(pu).scaled_add(1.0, &sp);
        grad.nodes.row_mut(pi).scaled_add(-1.0, &sp);
        grad.nodes.row_mut(nu).scaled_add(-1.0, &sn);
        grad.nodes.row_mut(ni).scaled_add(1.0, &sn);
        let mut r = grad.relations.row_mut(purchase_rel);
        r.scaled_add(1.0, &sp);
        r.scaled_add(-1.0, &sn);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    Ok((loss, grad))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

fn layer_backward(
    params: &LayerParams,
    tape: &LayerTape,
    d_out: &LayerState,
) -> (LayerGrad, LayerState) {
    let input = &tape.input;
    let w = &params.weight;
    let dim_in = params.dim_in();
    let mut g = LayerGrad {
        weight: Array2::zeros(w.raw_dim()),
        bias: Array1::zeros(params.dim_out()),
        attention: params.attention.as_ref().map(|a| Array1::zeros(a.len())),
    };
    let mut d_in = LayerState {
        nodes: Array2::zeros(input.nodes.raw_dim()),
        relations: Array2::zeros(input.relations.raw_dim()),
    };

    for (r, d_r) in d_out.relations.axis_iter(Axis(0)).enumerate() {
        if d_r.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = input.relations.row(r);
        outer_add(&mut g.weight, d_r, x);
        g.bias += &d_r;
        d_in.relations.row_mut(r).scaled_add(1.0, &w.t().dot(&d_r));
    }

    for (v, d_v) in d_out.nodes.axis_iter(Axis(0)).enumerate() {
        if d_v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let node = &tape.nodes[v];
        outer_add(&mut g.weight, d_v, node.z.view());
        g.bias += &d_v;
        let dz = w.t().dot(&d_v);
        d_in.nodes.row_mut(v).scaled_add(1.0, &dz);
        if node.edges.is_empty() {
            continue;
        }
        let h_v = input.nodes.row(v);
        // dL/dq_i, starting with the weighted-sum term.
        let mut dq: Array2<f64> = Array2::zeros((node.edges.len(), dim_in));
        for (mut row, &a) in dq.rows_mut().into_iter().zip(&node.alpha) {
            row.scaled_add(a, &dz);
        }
        if params.aggregator != Aggregator::Mean {
            let d_alpha: Vec<f64> = node.queries.rows().into_iter().map(|q| q.dot(&dz)).collect();
            let d_raw = coefficient_backward(params.coefficient_rule, node, &d_alpha);
            match (params.aggregator, &params.attention) {
                (Aggregator::AttnLearned, Some(a)) => {
                    let (a_q, a_h) = (a.slice(s![..dim_in]), a.slice(s![dim_in..]));
                    let ga = g.attention.as_mut().expect("attention grad");
                    for (i, q) in node.queries.rows().into_iter().enumerate() {
                        let ds = d_raw[i] * leaky_grad(node.preact[i], params.leaky_slope);
                        if ds == 0.0 {
                            continue;
                        }
                        ga.slice_mut(s![..dim_in]).scaled_add(ds, &q);
                        ga.slice_mut(s![dim_in..]).scaled_add(ds, &h_v);
                        dq.row_mut(i).scaled_add(ds, &a_q);
                        d_in.nodes.row_mut(v).scaled_add(ds, &a_h);
                    }
                }
                _ => {
                    for (i, q) in node.queries.rows().into_iter().enumerate() {
                        if d_raw[i] == 0.0 {
                            continue;
                        }
                        dq.row_mut(i).scaled_add(d_raw[i], &h_v);
                        d_in.nodes.row_mut(v).scaled_add(d_raw[i], &q);
                    }
                }
            }
        }
        for (e, dqi) in node.edges.iter().zip(dq.rows()) {
            d_in.nodes.row_mut(e.source).scaled_add(1.0, &dqi);
            d_in
                .relations
                .row_mut(e.relation)
                .scaled_add(e.direction.sign(), &dqi);
        }
    }
    (g, d_in)
}

/// Gradient with respect to raw scores given the gradient with respect to
/// coefficients.
fn coefficient_backward(rule: CoefficientRule, node: &NodeTape, d_alpha: &[f64]) -> Vec<f64> {
    let weighted: f64 = node.alpha.iter().zip(d_alpha).map(|(a, d)| a * d).sum();
    match rule {
        CoefficientRule::Ratio if node.guarded => vec![0.0; d_alpha.len()],
        CoefficientRule::Ratio => {
            // alpha_j = e_j / S  =>  dL/de_j = (dL/dalpha_j - sum_i alpha_i dL/dalpha_i) / S
            let raw_sum: f64 = node.raw.iter().sum();
            d_alpha.iter().map(|d| (d - weighted) / raw_sum).collect()
        }
        CoefficientRule::Softmax => node
            .alpha
            .iter()
            .zip(d_alpha)
            .map(|(a, d)| a * (d - weighted))
            .collect(),
    }
}

fn outer_add(target: &mut Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) {
    for (mut row, &l) in target.rows_mut().into_iter().zip(left.iter()) {
        if l != 0.0 {
            row.scaled_add(l, &right);
        }
    }
}

/// CF loss through the convolution and its gradient with respect to every
/// `W`, `b` and `a`. The input state is treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn cf_loss_and_grad<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    state0: &LayerState,
    params: &KqgcParams,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    purchase_rel: usize,
    margin: f64,
    sampling: Option<Sampling<'_, R>>,
) -> Result<(f64, KqgcGrad)> {
    let (out, tapes) = run_forward(kg, state0, params, sampling, true)?;
    let (loss, mut d_state) = cf_loss_and_output_grad(&out, pos, neg, purchase_rel, margin)?;
    let mut grads = Vec::with_capacity(params.layers.len());
    for (layer, tape) in params.layers.iter().zip(&tapes).rev() {
        let (g, d_in) = layer_backward(layer, tape, &d_state);
        grads.push(g);
        d_state = d_in;
    }
    grads.reverse();
    Ok((loss, KqgcGrad { layers: grads }))
}

/// Values whose sign changes mark non-differentiable points of the CF
/// loss: hinge arguments, L1 residual coordinates, LeakyReLU inputs, and
/// ratio denominators shifted by the guard.
pub fn cf_kink_values(
    kg: &KnowledgeGraph,
    state0: &LayerState,
    params: &KqgcParams,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    purchase_rel: usize,
    margin: f64,
) -> Result<Vec<f64>> {
    let (out, tapes) = run_forward::<rand_chacha::ChaCha8Rng>(kg, state0, params, None, true)?;
    let ratio = pair_ratio(pos.len(), neg.len())?;
    let mut vals = Vec::new();
    for tape in &tapes {
        for node in &tape.nodes {
            vals.extend(node.preact.iter());
            if !node.raw.is_empty() {
                let total: f64 = node.raw.iter().sum();
                vals.push(total.abs() - ATTENTION_GUARD);
            }
        }
    }
    for (j, &(nu, ni)) in neg.iter().enumerate() {
        let (pu, pi) = pos[j / ratio];
        let pr = cf_residual(&out, pu, pi, purchase_rel);
        let nr = cf_residual(&out, nu, ni, purchase_rel);
        vals.push(margin + pr.mapv(f64::abs).sum() - nr.mapv(f64::abs).sum());
        vals.extend(pr.iter());
        vals.extend(nr.iter());
    }
    Ok(vals)
}

/// Output of [`train_kqgc`].
#[derive(Debug, Clone)]
pub struct KqgcRun {
    pub params: KqgcParams,
    /// Full-neighborhood forward output with the trained parameters.
    pub state: LayerState,
    pub epoch_losses: Vec<f64>,
}

/// Seed offset separating convolution training streams from TransE ones.
const KQGC_STREAM_SALT: u64 = 0x4b51_4743_0000_0000;

/// Draws `ratio` negatives per positive.
pub fn negatives_for<R: Rng + ?Sized>(
    positives: &[(usize, usize)],
    ratio: usize,
    pool: &[usize],
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(positives.len() * ratio);
    for &p in positives {
        for _ in 0..ratio {
            out.push(sample_negative_pair(p, rng, pool)?);
        }
    }
    Ok(out)
}

/// SGD on the CF loss with the pre-trained embeddings frozen. Training
/// forwards use fan-out sampling; the returned state uses full
/// neighborhoods.
pub fn train_kqgc(
    kg: &KnowledgeGraph,
    pretrained: &EmbeddingTable,
    pairs: &PairDataset,
    params0: KqgcParams,
    cfg: &TrainConfig,
) -> Result<KqgcRun> {
    train_kqgc_from(kg, pretrained, pairs, params0, cfg, 0)
}

/// Continues training at epoch `start_epoch + 1`.
pub fn train_kqgc_from(
    kg: &KnowledgeGraph,
    pretrained: &EmbeddingTable,
    pairs: &PairDataset,
    params0: KqgcParams,
    cfg: &TrainConfig,
    start_epoch: usize,
) -> Result<KqgcRun> {
    cfg.validate()?;
    let state0 = LayerState::from_table(pretrained);
    check_forward_inputs(kg, &state0, &params0)?;
    let pool = pairs.item_pool();
    let mut params = params0;
    let mut order: Vec<usize> = (0..pairs.positives.len()).collect();
    let mut losses = Vec::new();
    info!(
        "kqgc: {} layer(s), {} aggregator, {} positive pairs, epochs {}..={}",
        params.layers.len(),
        params.layers[0].aggregator.name(),
        pairs.positives.len(),
        start_epoch + 1,
        cfg.epochs
    );

    for epoch in start_epoch + 1..=cfg.epochs {
        let mut rng = epoch_rng(cfg.seed ^ KQGC_STREAM_SALT, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pos: Vec<_> = chunk.iter().map(|&i| pairs.positives[i]).collect();
            let neg = negatives_for(&pos, cfg.neg_ratio, &pool, &mut rng)?;
            let sampling = Sampling {
                fan_out: cfg.fan_out,
                rng: &mut rng,
            };
            let (loss, grad) = cf_loss_and_grad(
                kg,
                &state0,
                &params,
                &pos,
                &neg,
                pairs.purchase_relation,
                cfg.margin,
                Some(sampling),
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch },
                other => other,
            })?;
            epoch_loss += loss;
            let mut flat = params.to_flat();
            for (p, g) in flat.iter_mut().zip(grad.to_flat()) {
                *p -= cfg.learning_rate * g;
            }
            params.set_flat(&flat);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
        }
        debug!("kqgc epoch {epoch}: loss {epoch_loss:.6}");
        losses.push(epoch_loss);
    }
    let state = forward_full(kg, &state0, &params)?;
    Ok(KqgcRun {
        params,
        state,
        epoch_losses: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Direction, Triple};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(nodes: Array2<f64>, relations: Array2<f64>) -> LayerState {
        LayerState { nodes, relations }
    }

    #[test]
    fn query_sign_follows_direction() {
        let st = state(array![[0.5, 0.5]], array![[0.1, -0.1]]);
        let fwd = MessageEdge {
            source: 0,
            relation: 0,
            direction: Direction::Forward,
        };
        let rev = MessageEdge {
            direction: Direction::Reverse,
            ..fwd
        };
        let q = knowledge_query(&st, &fwd).unwrap();
        assert_abs_diff_eq!(q[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.4, epsilon = 1e-15);
        let q = knowledge_query(&st, &rev).unwrap();
        assert_abs_diff_eq!(q[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.6, epsilon = 1e-15);

        let zero = state(array![[0.5, 0.5]], array![[0.0, 0.0]]);
        assert_eq!(knowledge_query(&zero, &fwd).unwrap(), array![0.5, 0.5]);
        assert_eq!(knowledge_query(&zero, &rev).unwrap(), array![0.5, 0.5]);
    }

    #[test]
    fn mean_aggregation() {
        assert_eq!(aggregate_mean(array![[1.0, 0.0], [0.0, 1.0]].view()), array![0.5, 0.5]);
        assert_eq!(aggregate_mean(array![[0.3, -2.0]].view()), array![0.3, -2.0]);
        assert_eq!(aggregate_mean(Array2::zeros((0, 2)).view()), array![0.0, 0.0]);
    }

    #[test]
    fn dot_attention_by_hand() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let c = attention_coefficients(
            q.view(),
            array![1.0, 0.0].view(),
            AttentionScore::Dot,
            CoefficientRule::Ratio,
        )
        .unwrap();
        assert_eq!(c.raw, vec![1.0, 0.0]);
        assert_eq!(c.alpha, vec![1.0, 0.0]);
        assert!(!c.guarded);

        let same = array![[1.0, 0.0], [1.0, 0.0]];
        let c = attention_coefficients(
            same.view(),
            array![0.7, -3.0].view(),
            AttentionScore::Dot,
            CoefficientRule::Ratio,
        )
        .unwrap();
        assert_eq!(c.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_attention_vector_triggers_guard() {
        let q = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let a = Array1::zeros(4);
        let c = attention_coefficients(
            q.view(),
            array![1.0, 1.0].view(),
            AttentionScore::Learned {
                a: a.view(),
                leaky_slope: DEFAULT_LEAKY_SLOPE,
            },
            CoefficientRule::Ratio,
        )
        .unwrap();
        assert!(c.guarded);
        assert_eq!(c.alpha, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn empty_attention_is_error() {
        let q: Array2<f64> = Array2::zeros((0, 2));
        assert!(attention_coefficients(
            q.view(),
            array![1.0, 0.0].view(),
            AttentionScore::Dot,
            CoefficientRule::Ratio
        )
        .is_err());
    }

    #[test]
    fn softmax_rule_sums_to_one() {
        let q = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let c = attention_coefficients(
            q.view(),
            array![2.0, 0.5].view(),
            AttentionScore::Dot,
            CoefficientRule::Softmax,
        )
        .unwrap();
        assert_abs_diff_eq!(c.alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(c.alpha.iter().all(|&a| a > 0.0));
        assert!(c.alpha[0] > c.alpha[1] && c.alpha[1] > c.alpha[2]);
    }

    #[test]
    fn attention_aggregation() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(aggregate_attention(q.view(), &[1.0, 0.0]).unwrap(), array![1.0, 0.0]);
        let q2 = array![[2.0, 0.0], [0.0, 2.0]];
        assert_eq!(aggregate_attention(q2.view(), &[0.5, 0.5]).unwrap(), array![1.0, 1.0]);
        assert!(aggregate_attention(q.view(), &[1.0]).is_err());
        let q3 = array![[0.1, 0.7], [0.3, -0.2], [0.9, 0.4]];
        assert_eq!(
            aggregate_attention(q3.view(), &uniform_weights(3)).unwrap(),
            aggregate_mean(q3.view())
        );
    }

    #[test]
    fn node_update() {
        let eye = Array2::eye(2);
        let zero = Array1::zeros(2);
        let h = array![1.0, 0.0];
        let m = array![0.0, 1.0];
        assert_eq!(
            update_node(h.view(), m.view(), eye.view(), zero.view()).unwrap(),
            array![1.0, 1.0]
        );
        assert_eq!(
            update_node(h.view(), zero.view(), eye.view(), zero.view()).unwrap(),
            h
        );
        let two = &eye * 2.0;
        assert_eq!(
            update_node(h.view(), m.view(), two.view(), array![1.0, 1.0].view()).unwrap(),
            array![3.0, 3.0]
        );
        assert!(update_node(h.view(), array![1.0].view(), eye.view(), zero.view()).is_err());
    }

    #[test]
    fn relation_update() {
        let eye = Array2::eye(2);
        let rel = array![[1.0, 1.0], [0.0, 0.0], [-0.5, 2.0]];
        assert_eq!(
            update_relations(rel.view(), eye.view(), Array1::zeros(2).view()).unwrap(),
            rel
        );
        let out = update_relations(rel.view(), eye.view(), array![0.5, 0.5].view()).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.5, 1.5]);
        let out = update_relations(rel.view(), eye.view(), Array1::zeros(2).view()).unwrap();
        assert_eq!(out.row(1).to_vec(), vec![0.0, 0.0]);
        assert!(update_relations(rel.view(), Array2::eye(3).view(), Array1::zeros(3).view()).is_err());
    }

    fn star_graph() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::from_triples(
            5,
            2,
            [Triple::new(0, 0, 1), Triple::new(0, 1, 2), Triple::new(3, 0, 1)],
        )
        .unwrap();
        kg.build_message_graph();
        kg
    }

    #[test]
    fn isolated_node_passes_through() {
        let kg = star_graph();
        let st = state(
            Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 * 0.1),
            array![[0.1, 0.2], [0.3, -0.4]],
        );
        let params = KqgcParams {
            layers: vec![LayerParams::identity(2, Aggregator::Mean)],
        };
        let out = forward_full(&kg, &st, &params).unwrap();
        assert_eq!(out.nodes.row(4), st.nodes.row(4));
        assert_eq!(out.relations, st.relations);
    }

    #[test]
    fn forward_rejects_mismatched_dims() {
        let kg = star_graph();
        let st = state(Array2::zeros((5, 3)), Array2::zeros((2, 3)));
        let params = KqgcParams {
            layers: vec![LayerParams::identity(2, Aggregator::Mean)],
        };
        assert!(matches!(forward_full(&kg, &st, &params), Err(Error::Shape(_))));

        let mut unbuilt = kg.clone();
        unbuilt.incoming.clear();
        let st = state(Array2::zeros((5, 2)), Array2::zeros((2, 2)));
        assert!(forward_full(&unbuilt, &st, &params).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let kg = star_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = state(
            Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0)),
        );
        let params = KqgcParams::xavier(&[2, 3, 2], Aggregator::AttnLearned, &mut rng);
        assert_eq!(
            forward_full(&kg, &st, &params).unwrap(),
            forward_full(&kg, &st, &params).unwrap()
        );
        let sampled = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            forward(
                &kg,
                &st,
                &params,
                Some(Sampling {
                    fan_out: 1,
                    rng: &mut r,
                }),
            )
            .unwrap()
        };
        assert_eq!(sampled(7), sampled(7));
    }

    #[test]
    fn negative_pair_forced_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_negative_pair((9, 3), &mut rng, &[3, 4]).unwrap(), (9, 4));
        }
        assert!(sample_negative_pair((9, 3), &mut rng, &[3]).is_err());
    }

    #[test]
    fn collapsed_parameters_give_margin_per_pair() {
        let kg = star_graph();
        let st = state(
            Array2::from_shape_fn((5, 2), |(i, j)| i as f64 - j as f64),
            array![[0.1, 0.2], [0.3, -0.4]],
        );
        let mut layer = LayerParams::identity(2, Aggregator::Mean);
        layer.weight.fill(0.0);
        let params = KqgcParams {
            layers: vec![layer],
        };
        let pos = [(0, 1), (3, 1)];
        let neg = [(0, 2), (0, 4), (3, 2), (3, 0)];
        let (loss, _) = cf_loss_and_grad::<ChaCha8Rng>(&kg, &st, &params, &pos, &neg, 0, 1.0, None)
            .unwrap();
        assert_eq!(loss, 4.0);
    }

    #[test]
    fn cf_pair_loss_by_hand() {
        // f(pos) = 0.2, f(neg) = 0.8 with the purchase relation at zero.
        let st = state(
            array![[0.0, 0.0], [0.1, 0.1], [0.4, 0.4]],
            array![[0.0, 0.0]],
        );
        let loss = cf_loss(&st, &[(0, 1)], &[(0, 2)], 0, 1.0).unwrap();
        assert_abs_diff_eq!(loss, 0.4, epsilon = 1e-12);
        assert!(cf_loss(&st, &[(0, 1)], &[], 0, 1.0).is_err());
    }

    #[test]
    fn params_flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = KqgcParams::xavier(&[3, 4, 2], Aggregator::AttnLearned, &mut rng);
        let flat = params.to_flat();
        assert_eq!(flat.len(), 3 * 4 + 4 + 6 + 4 * 2 + 2 + 8);
        let mut other = params.clone();
        other.set_flat(&vec![0.0; flat.len()]);
        other.set_flat(&flat);
        assert_eq!(other, params);
    }

    #[test]
    fn zero_epochs_return_initial_params() {
        let kg = star_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = EmbeddingTable::random_uniform(5, 2, 2, &mut rng);
        let params0 = KqgcParams::xavier(&[2, 2], Aggregator::Mean, &mut rng);
        let pairs = PairDataset::from_graph(&kg, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::paper()
        };
        let run = train_kqgc(&kg, &table, &pairs, params0.clone(), &cfg).unwrap();
        assert_eq!(run.params, params0);
        assert!(run.epoch_losses.is_empty());
    }
}
