//! Evaluation: PR-AUC, a logistic-regression stand-in classifier, filtered
//! link ranking, smoothing statistics and a finite-difference gradient
//! checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::layer::LayerState;
use crate::synth::{LabeledDataset, Split};
use crate::transe::{score_triple, EmbeddingTable};

/// Seed of the shuffle applied before the stable sort, so tied scores
/// always resolve the same way.
pub const PR_TIE_SEED: u64 = 0x7072_5f61_7563;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrResult {
    pub pr_auc: f64,
    pub num_positives: usize,
    pub num_total: usize,
    /// One point per rank in score-descending order.
    pub points: Vec<PrPoint>,
}

/// Ranking order used by [`pr_auc`]: indices sorted by score descending,
/// ties kept in the order of a fixed-seed shuffle.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(PR_TIE_SEED));
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average precision: mean over positives of the precision at their rank.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<PrResult> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
            context: "scores vs labels",
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("score {i} is not finite")));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Invalid(format!("label {i} is {}, expected 0 or 1", labels[i])));
    }
    let num_positives = labels.iter().filter(|&&l| l == 1).count();
    if num_positives == 0 {
        return Err(Error::Invalid("PR-AUC needs at least one positive".into()));
    }

    let order = ranking_order(scores);
    let mut points = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
        points.push(PrPoint {
            threshold: scores[i],
            precision: tp as f64 / (rank + 1) as f64,
            recall: tp as f64 / num_positives as f64,
        });
    }
    Ok(PrResult {
        pr_auc: sum / num_positives as f64,
        num_positives,
        num_total: scores.len(),
        points,
    })
}

/// `threshold,precision,recall` lines with a header.
pub fn pr_curve_csv(result: &PrResult) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &result.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            l2: 1e-4,
            iterations: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    /// Objective before the first step and after every step.
    pub losses: Vec<f64>,
}

impl LinearModel {
    /// Positive-class probabilities.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.weights.len() {
            return Err(Error::Shape(format!(
                "model has {} weights but features have {} columns",
                self.weights.len(),
                features.ncols()
            )));
        }
        Ok((features.dot(&self.weights) + self.bias).mapv(sigmoid))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_objective(
    x: ArrayView2<f64>,
    y: &Array1<f64>,
    w: &Array1<f64>,
    b: f64,
    l2: f64,
) -> (f64, Array1<f64>) {
    let z = x.dot(w) + b;
    let m = x.nrows() as f64;
    let loss = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum::<f64>()
        / m
        + 0.5 * l2 * w.dot(w);
    (loss, z)
}

/// Full-batch gradient descent on mean logistic loss plus `l2 / 2 * |w|^2`,
/// starting from zero.
pub fn train_linear_classifier(
    features: ArrayView2<f64>,
    labels: &[u8],
    cfg: &ClassifierConfig,
) -> Result<LinearModel> {
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: labels.len(),
            context: "feature rows vs labels",
        });
    }
    if features.nrows() == 0 {
        return Err(Error::Invalid("classifier needs at least one example".into()));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid("classifier features must be finite".into()));
    }
    let y: Array1<f64> = labels.iter().map(|&l| f64::from(l.min(1))).collect();
    let m = features.nrows() as f64;
    let mut w = Array1::<f64>::zeros(features.ncols());
    let mut b = 0.0;
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let (mut loss, mut z) = logistic_objective(features, &y, &w, b, cfg.l2);
    losses.push(loss);
    for it in 0..cfg.iterations {
        let resid: Array1<f64> = z.mapv(sigmoid) - &y;
        let gw = features.t().dot(&resid) / m + &w * cfg.l2;
        let gb = resid.sum() / m;
        w.scaled_add(-cfg.learning_rate, &gw);
        b -= cfg.learning_rate * gb;
        (loss, z) = logistic_objective(features, &y, &w, b, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: it, batch: 0 });
        }
        losses.push(loss);
    }
    Ok(LinearModel {
        weights: w,
        bias: b,
        losses,
    })
}

/// Per-column z-scoring with statistics from a fitting set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let mean = x
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::Invalid("cannot standardize zero rows".into()))?;
        // Constant columns keep scale 1 so they map to zero.
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Column-wise concatenation of feature blocks with matching row counts.
pub fn concat_features(blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    if blocks.is_empty() {
        return Err(Error::Invalid("no feature blocks to concatenate".into()));
    }
    concatenate(Axis(1), blocks).map_err(|e| Error::Shape(format!("feature concatenation: {e}")))
}

/// Rows `rows[i]` of `table`, in order.
pub fn select_rows(table: ArrayView2<f64>, rows: &[usize]) -> Result<Array2<f64>> {
    for &r in rows {
        crate::graph::check_index("row", r, table.nrows())?;
    }
    Ok(table.select(Axis(0), rows))
}

/// Trains the stand-in classifier on each brand's training split and
/// returns the test-split PR-AUC per brand. `features` has one row per
/// user id; columns are standardized with training-split statistics.
pub fn brand_pr_auc(
    features: ArrayView2<f64>,
    datasets: &[LabeledDataset],
    cfg: &ClassifierConfig,
) -> Result<Vec<(usize, PrResult)>> {
    let mut out = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let gather = |split: Split| -> (Vec<usize>, Vec<u8>) {
            ds.split(split).map(|r| (r.user, r.label)).unzip()
        };
        let (train_users, train_labels) = gather(Split::Train);
        let (test_users, test_labels) = gather(Split::Test);
        let train_x = select_rows(features, &train_users)?;
        let test_x = select_rows(features, &test_users)?;
        let scaler = Standardizer::fit(train_x.view())?;
        let model = train_linear_classifier(scaler.apply(train_x.view()).view(), &train_labels, cfg)?;
        let scores = model.predict(scaler.apply(test_x.view()).view())?;
        let result = pr_auc(scores.as_slice().expect("contiguous"), &test_labels)?;
        log::debug!("brand {}: test PR-AUC {:.4}", ds.brand, result.pr_auc);
        out.push((ds.brand, result));
    }
    Ok(out)
}

/// Per-brand PR-AUC of one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSetReport {
    pub name: String,
    pub per_brand: Vec<(usize, f64)>,
}

impl FeatureSetReport {
    pub fn from_results(name: impl Into<String>, results: &[(usize, PrResult)]) -> Self {
        FeatureSetReport {
            name: name.into(),
            per_brand: results.iter().map(|(b, r)| (*b, r.pr_auc)).collect(),
        }
    }

    pub fn average(&self) -> f64 {
        if self.per_brand.is_empty() {
            return f64::NAN;
        }
        self.per_brand.iter().map(|(_, v)| v).sum::<f64>() / self.per_brand.len() as f64
    }
}

/// Relative change of `candidate` over `baseline`, in percent.
pub fn improvement_rate(candidate: f64, baseline: f64) -> f64 {
    if candidate == baseline {
        return 0.0;
    }
    (candidate - baseline) / baseline * 100.0
}

/// Table with one row per brand plus an `AVG` row and one column per
/// feature set. Columns after the first carry the improvement rate over
/// the first in parentheses.
pub fn format_report(sets: &[FeatureSetReport]) -> Result<String> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Invalid("report needs at least one feature set".into()))?;
    let brands: Vec<usize> = first.per_brand.iter().map(|(b, _)| *b).collect();
    for s in sets {
        let theirs: Vec<usize> = s.per_brand.iter().map(|(b, _)| *b).collect();
        if theirs != brands {
            return Err(Error::Invalid(format!("feature set {} covers different brands", s.name)));
        }
    }
    let cell = |value: f64, base: f64, col: usize| -> String {
        if col == 0 {
            format!("{value:.4}")
        } else {
            format!("{value:.4} ({:+.2})", improvement_rate(value, base))
        }
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["brand".to_string()];
    header.extend(sets.iter().map(|s| s.name.clone()));
    rows.push(header);
    for (i, b) in brands.iter().enumerate() {
        let base = first.per_brand[i].1;
        let mut row = vec![format!("Brand {b}")];
        row.extend(sets.iter().enumerate().map(|(c, s)| cell(s.per_brand[i].1, base, c)));
        rows.push(row);
    }
    let base = first.average();
    let mut avg = vec!["AVG".to_string()];
    avg.extend(sets.iter().enumerate().map(|(c, s)| cell(s.average(), base, c)));
    rows.push(avg);

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    Ok(out)
}

/// `metric<TAB>brand<TAB>value` lines: `pr_auc/<set>` per brand and `avg`,
/// and `improvement/<set>` against the first set.
pub fn metric_lines(sets: &[FeatureSetReport]) -> String {
    let mut out = String::new();
    let base = sets.first();
    for s in sets {
        for (b, v) in &s.per_brand {
            let _ = writeln!(out, "pr_auc/{}\t{b}\t{v}", s.name);
        }
        let _ = writeln!(out, "pr_auc/{}\tavg\t{}", s.name, s.average());
    }
    if let Some(base) = base {
        for s in &sets[1..] {
            let rate = improvement_rate(s.average(), base.average());
            let _ = writeln!(out, "improvement/{}\tavg\t{rate}", s.name);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRank {
    pub hits_at_k: f64,
    pub mean_rank: f64,
    pub num_queries: usize,
}

/// Filtered tail ranking: every entity is a candidate except other known
/// true tails of `(h, r)`. Ties count against the true tail.
pub fn link_rank_eval(
    emb: &EmbeddingTable,
    held_out: &[Triple],
    known: &[Triple],
    k: usize,
) -> Result<LinkRank> {
    if held_out.is_empty() {
        return Err(Error::Invalid("no held-out triples to rank".into()));
    }
    let mut true_tails: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in known.iter().chain(held_out) {
        emb.check_triple(t)?;
        true_tails.entry((t.head, t.relation)).or_default().insert(t.tail);
    }
    let n = emb.num_entities();
    let mut hits = 0usize;
    let mut rank_sum = 0.0;
    for t in held_out {
        let target = score_triple(emb, t)?;
        let filtered = &true_tails[&(t.head, t.relation)];
        let query = &emb.entities.row(t.head) + &emb.relations.row(t.relation);
        let mut rank = 1usize;
        for e in 0..n {
            if e == t.tail || filtered.contains(&e) {
                continue;
            }
            let s: f64 = query
                .iter()
                .zip(emb.entities.row(e))
                .map(|(q, x)| (q - x).abs())
                .sum();
            if s <= target {
                rank += 1;
            }
        }
        if rank <= k {
            hits += 1;
        }
        rank_sum += rank as f64;
    }
    Ok(LinkRank {
        hits_at_k: hits as f64 / held_out.len() as f64,
        mean_rank: rank_sum / held_out.len() as f64,
        num_queries: held_out.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingReport {
    /// Mean `||(h_src + r) - h_dst||_1` with node rows scaled to unit norm.
    pub query_distance: f64,
    /// Mean cosine similarity of `(h_src, h_dst)`.
    pub neighbor_cosine: f64,
    pub num_edges: usize,
}

/// Statistics over the forward triples of `kg`. Zero node rows stay zero
/// and contribute cosine 0.
pub fn smoothing_report(kg: &KnowledgeGraph, state: &LayerState) -> Result<SmoothingReport> {
    if state.nodes.nrows() != kg.num_entities || state.relations.nrows() != kg.num_relations {
        return Err(Error::Shape(format!(
            "state has {} nodes / {} relations, graph has {} / {}",
            state.nodes.nrows(),
            state.relations.nrows(),
            kg.num_entities,
            kg.num_relations
        )));
    }
    if state.nodes.ncols() != state.relations.ncols() {
        return Err(Error::Shape("node and relation widths differ".into()));
    }
    let mut unit = state.nodes.clone();
    for mut row in unit.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    let mut dist = 0.0;
    let mut cos = 0.0;
    for t in &kg.triples {
        let (src, rel, dst) = (unit.row(t.head), state.relations.row(t.relation), unit.row(t.tail));
        dist += src
            .iter()
            .zip(rel)
            .zip(dst)
            .map(|((s, r), d)| (s + r - d).abs())
            .sum::<f64>();
        cos += src.dot(&dst);
    }
    let m = kg.triples.len().max(1) as f64;
    Ok(SmoothingReport {
        query_distance: dist / m,
        neighbor_cosine: cos / m,
        num_edges: kg.triples.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    /// `max_rel_error > tol`.
    pub flagged: bool,
}

/// Smallest probe distance used for kink detection.
pub const KINK_RADIUS: f64 = 1e-3;

/// Central differences per coordinate; relative error is
/// `|analytic - numeric| / max(1, |numeric|)`. When `kinks` is given, it
/// returns the inner expressions of every `abs`/`max` in the loss; a
/// coordinate is skipped if any of them changes sign when that coordinate
/// moves by `max(step, KINK_RADIUS)` either way.
pub fn grad_check(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    step: f64,
    tol: f64,
    mut kinks: Option<&mut dyn FnMut(&[f64]) -> Vec<f64>>,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::config("step", "must be > 0"));
    }
    if analytic.len() != point.len() {
        return Err(Error::LengthMismatch {
            left: analytic.len(),
            right: point.len(),
            context: "analytic gradient vs point",
        });
    }
    let radius = step.max(KINK_RADIUS);
    let mut x = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        flagged: false,
    };
    for i in 0..x.len() {
        if let Some(probe) = kinks.as_mut() {
            x[i] = point[i] - radius;
            let lo = probe(&x);
            x[i] = point[i] + radius;
            let hi = probe(&x);
            x[i] = point[i];
            let mid = probe(&x);
            let crosses = lo
                .iter()
                .zip(&hi)
                .zip(&mid)
                .any(|((a, b), c)| a.signum() != b.signum() || a.signum() != c.signum());
            if crosses {
                report.skipped += 1;
                continue;
            }
        }
        x[i] = point[i] + step;
        let up = loss(&x);
        x[i] = point[i] - step;
        let down = loss(&x);
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report.flagged = report.max_rel_error > tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transe::kge_loss_and_grad;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    // Independent average precision: area under the step PR curve.
    fn step_area(labels_in_rank_order: &[u8]) -> f64 {
        let p = labels_in_rank_order.iter().filter(|&&l| l == 1).count() as f64;
        let mut tp = 0.0;
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for (k, &l) in labels_in_rank_order.iter().enumerate() {
            tp += f64::from(l);
            let recall = tp / p;
            area += (recall - prev_recall) * tp / (k + 1) as f64;
            prev_recall = recall;
        }
        area
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn perfect_separation_is_one() {
        let r = pr_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.pr_auc, 1.0);
        assert_eq!(r.num_positives, 2);
        assert_eq!(r.points.len(), 4);
    }

    #[test]
    fn reversed_single_positive_is_one_over_n() {
        for n in 1..20 {
            let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut labels = vec![0u8; n];
            labels[0] = 1;
            assert_eq!(pr_auc(&scores, &labels).unwrap().pr_auc, 1.0 / n as f64);
        }
    }

    #[test]
    fn all_tied_scores_land_near_prevalence() {
        // Brute force over all orderings of the tied items.
        let labels = [1u8, 0, 0, 1, 0, 0, 0, 0];
        let p = 2.0 / 8.0;
        let perms = permutations(labels.len());
        let aps: Vec<f64> = perms
            .iter()
            .map(|perm| step_area(&perm.iter().map(|&i| labels[i]).collect::<Vec<_>>()))
            .collect();
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        let lo = aps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = aps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r = pr_auc(&[0.5; 8], &labels).unwrap();
        assert!(r.pr_auc >= lo && r.pr_auc <= hi);
        assert!((mean - p).abs() < 0.2, "mean {mean}");
        // The value matches the ordering the tie-break shuffle produced.
        let order = ranking_order(&[0.5; 8]);
        let ranked: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
        assert_abs_diff_eq!(r.pr_auc, step_area(&ranked), epsilon = 1e-15);
    }

    #[test]
    fn pr_auc_errors() {
        assert!(pr_auc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(pr_auc(&[0.1], &[0, 1]).is_err());
        assert!(pr_auc(&[f64::NAN], &[1]).is_err());
        assert!(pr_auc(&[0.1], &[2]).is_err());
    }

    #[test]
    fn recall_is_non_decreasing() {
        let r = pr_auc(&[0.3, 0.9, 0.1, 0.5, 0.7], &[1, 0, 1, 0, 1]).unwrap();
        assert!(r.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert_eq!(r.points.last().unwrap().recall, 1.0);
        assert!(pr_curve_csv(&r).starts_with("threshold,precision,recall\n"));
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let x = array![[-2.0, 0.1], [-1.0, -0.3], [-1.5, 0.2], [1.0, 0.0], [2.0, 0.5], [1.5, -0.2]];
        let y = [0u8, 0, 0, 1, 1, 1];
        let m = train_linear_classifier(x.view(), &y, &ClassifierConfig::default()).unwrap();
        let p = m.predict(x.view()).unwrap();
        let correct = p.iter().zip(&y).filter(|(p, &y)| (**p > 0.5) == (y == 1)).count();
        assert_eq!(correct, 6);
        assert!(m.losses.last().unwrap() <= &m.losses[0]);
        assert_abs_diff_eq!(m.losses[0], std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn zero_iterations_keep_zero_model() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let cfg = ClassifierConfig {
            iterations: 0,
            ..Default::default()
        };
        let m = train_linear_classifier(x.view(), &[0, 1], &cfg).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.bias, 0.0);
        assert!(m.predict(x.view()).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn classifier_rejects_bad_input() {
        let x = array![[1.0], [f64::INFINITY]];
        assert!(train_linear_classifier(x.view(), &[0, 1], &ClassifierConfig::default()).is_err());
        let x = array![[1.0]];
        assert!(train_linear_classifier(x.view(), &[0, 1], &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn standardizer_uses_fit_statistics() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.apply(x.view());
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn improvement_rate_self_comparison_is_zero() {
        assert_eq!(improvement_rate(0.7, 0.7), 0.0);
        assert_abs_diff_eq!(improvement_rate(0.711, 0.689), 3.193, epsilon = 1e-3);
    }

    #[test]
    fn report_has_brand_rows_and_avg() {
        let base = FeatureSetReport {
            name: "baseline".into(),
            per_brand: (0..5).map(|b| (b, 0.5 + b as f64 * 0.01)).collect(),
        };
        let same = FeatureSetReport {
            name: "copy".into(),
            ..base.clone()
        };
        let text = format_report(&[base.clone(), same.clone()]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("Brand 0"));
        assert!(lines[6].starts_with("AVG"));
        assert!(lines[6].contains("(+0.00)"));
        let metrics = metric_lines(&[base, same]);
        assert!(metrics.contains("improvement/copy\tavg\t0\n"));
        assert_eq!(metrics.lines().filter(|l| l.starts_with("pr_auc/")).count(), 12);
    }

    fn random_table(n: usize, r: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::random_uniform(n, r, dim, &mut rng)
    }

    #[test]
    fn hits_at_n_is_one() {
        let emb = random_table(12, 2, 3, 1);
        let held = vec![Triple::new(0, 0, 1), Triple::new(3, 1, 7), Triple::new(5, 0, 11)];
        let known = vec![Triple::new(0, 0, 2)];
        let r = link_rank_eval(&emb, &held, &known, 12).unwrap();
        assert_eq!(r.hits_at_k, 1.0);
        assert!(r.mean_rank <= 12.0);
    }

    #[test]
    fn random_embeddings_rank_near_middle() {
        let n = 50;
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let emb = random_table(n, 3, 4, 100 + seed);
            let held: Vec<Triple> = (0..40)
                .map(|_| {
                    let h = rng.gen_range(0..n);
                    let t = (h + rng.gen_range(1..n)) % n;
                    Triple::new(h, rng.gen_range(0..3), t)
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            // One query per (h, r) so filtering removes nothing.
            let mut seen = BTreeSet::new();
            let held: Vec<Triple> = held.into_iter().filter(|t| seen.insert((t.head, t.relation))).collect();
            total += link_rank_eval(&emb, &held, &[], 10).unwrap().mean_rank;
        }
        let mean = total / 20.0;
        let expected = (n as f64 + 1.0) / 2.0;
        assert!((mean - expected).abs() < 2.5, "{mean} vs {expected}");
    }

    #[test]
    fn filtering_removes_other_true_tails() {
        // Tails 1 and 2 are equally good; the known one must not push the
        // held-out one down.
        let entities = array![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [5.0, 5.0]];
        let relations = array![[1.0, 0.0]];
        let emb = EmbeddingTable::new(entities, relations).unwrap();
        let held = [Triple::new(0, 0, 1)];
        let unfiltered = link_rank_eval(&emb, &held, &[], 1).unwrap();
        assert_eq!(unfiltered.mean_rank, 2.0);
        let filtered = link_rank_eval(&emb, &held, &[Triple::new(0, 0, 2)], 1).unwrap();
        assert_eq!(filtered.mean_rank, 1.0);
        assert_eq!(filtered.hits_at_k, 1.0);
    }

    fn chain_graph(n: usize) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(n, 1, (0..n - 1).map(|i| Triple::new(i, 0, i + 1))).unwrap()
    }

    #[test]
    fn degenerate_state_is_smooth() {
        let kg = chain_graph(6);
        let state = LayerState {
            nodes: Array2::from_elem((6, 3), 0.7),
            relations: Array2::zeros((1, 3)),
        };
        let r = smoothing_report(&kg, &state).unwrap();
        assert_eq!(r.query_distance, 0.0);
        assert_abs_diff_eq!(r.neighbor_cosine, 1.0, epsilon = 1e-12);
        assert_eq!(r.num_edges, 5);
    }

    #[test]
    fn random_unit_rows_are_uncorrelated() {
        let n = 1001;
        let kg = chain_graph(n);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let state = LayerState {
            nodes,
            relations: Array2::zeros((1, 2)),
        };
        let r = smoothing_report(&kg, &state).unwrap();
        assert_eq!(r.num_edges, 1000);
        assert!(r.neighbor_cosine.abs() < 0.1, "{}", r.neighbor_cosine);
    }

    #[test]
    fn smoothing_rejects_wrong_shape() {
        let kg = chain_graph(3);
        let state = LayerState {
            nodes: Array2::zeros((2, 2)),
            relations: Array2::zeros((1, 2)),
        };
        assert!(smoothing_report(&kg, &state).is_err());
    }

    #[test]
    fn quadratic_gradient_checks_out() {
        let point = [0.3, -1.2, 2.5, 0.0];
        let grad: Vec<f64> = point.iter().map(|x| 2.0 * x).collect();
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = grad_check(&mut f, &grad, &point, 1e-5, 1e-6, None).unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
        assert!(!r.flagged);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        // f = x^2 / 2 so numeric = x; analytic 2x; error |x| / max(1, |x|).
        let point = [0.5, -0.25, 0.1];
        let grad: Vec<f64> = point.iter().map(|x| 2.0 * x).collect();
        let mut f = |x: &[f64]| x.iter().map(|v| 0.5 * v * v).sum::<f64>();
        let r = grad_check(&mut f, &grad, &point, 1e-5, 1e-4, None).unwrap();
        assert_abs_diff_eq!(r.max_rel_error, 0.5, epsilon = 1e-8);
        assert_eq!(r.worst_index, Some(0));
        assert!(r.flagged);
    }

    #[test]
    fn kink_coordinates_are_skipped() {
        let point = [0.0, 0.8];
        let grad = [0.0, 1.0];
        let mut f = |x: &[f64]| x[0].abs() + x[1].abs();
        let mut kinks = |x: &[f64]| x.to_vec();
        let r = grad_check(&mut f, &grad, &point, 1e-5, 1e-6, Some(&mut kinks)).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(!r.flagged);
        assert!(grad_check(&mut f, &grad, &point, 0.0, 1e-6, None).is_err());
    }

    #[test]
    fn kge_gradient_at_random_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let emb = random_table(6, 2, 4, 5);
        let pos = vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3)];
        let neg = vec![Triple::new(0, 0, 4), Triple::new(5, 1, 3)];
        let margin = 2.0 + rng.gen_range(0.0..0.1);
        let (_, grad) = kge_loss_and_grad(&emb, &pos, &neg, margin).unwrap();
        let analytic = grad.to_flat(6, 2, 4);
        let point = emb.to_flat();
        let mut f = |x: &[f64]| {
            let e = EmbeddingTable::from_flat(6, 2, 4, x);
            kge_loss_and_grad(&e, &pos, &neg, margin).unwrap().0
        };
        let mut kinks = |x: &[f64]| {
            let e = EmbeddingTable::from_flat(6, 2, 4, x);
            let mut v = Vec::new();
            for (p, n) in pos.iter().zip(&neg) {
                let sp = score_triple(&e, p).unwrap();
                let sn = score_triple(&e, n).unwrap();
                v.push(margin + sp - sn);
                v.extend(e.residual(p));
                v.extend(e.residual(n));
            }
            v
        };
        let r = grad_check(&mut f, &analytic, &point, 1e-5, 1e-4, Some(&mut kinks)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 0);
    }
}
