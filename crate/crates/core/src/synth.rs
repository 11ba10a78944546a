//! Synthetic benchmarks.
//!
//! [`generate_cluster_kg`] builds a user/item/attribute purchase graph with
//! planted clusters standing in for client brands, plus one labeled user
//! dataset per cluster. [`generate_translation_kg`] builds a graph whose
//! triples are (near-)exact translations under a planted embedding table.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{EntityKind, KnowledgeGraph, Triple};
use crate::transe::EmbeddingTable;

pub const PURCHASE: usize = 0;
pub const HAS_ATTRIBUTE: usize = 1;
pub const USER_ATTRIBUTE: usize = 2;
pub const RELATION_NAMES: [&str; 3] = ["purchase", "has_attribute", "user_attribute"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_attributes: usize,
    pub num_clusters: usize,
    pub intra_cluster_purchase_prob: f64,
    pub cross_cluster_purchase_prob: f64,
    pub attr_per_item: usize,
    pub attr_per_user: usize,
    /// Probability that an attribute is drawn outside the entity's cluster
    /// pool.
    pub attr_noise: f64,
    /// Noise on the stand-in baseline features.
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn desk() -> Self {
        Self {
            num_users: 600,
            num_items: 500,
            num_attributes: 50,
            num_clusters: 5,
            intra_cluster_purchase_prob: 0.02,
            cross_cluster_purchase_prob: 0.006,
            attr_per_item: 2,
            attr_per_user: 1,
            attr_noise: 0.3,
            noise_std: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_attributes", self.num_attributes),
            ("num_clusters", self.num_clusters),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        for (field, v) in [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_attributes", self.num_attributes),
        ] {
            if v < self.num_clusters {
                return Err(Error::config(
                    field,
                    format!("must be at least num_clusters ({})", self.num_clusters),
                ));
            }
        }
        for (field, p) in [
            ("intra_cluster_purchase_prob", self.intra_cluster_purchase_prob),
            ("cross_cluster_purchase_prob", self.cross_cluster_purchase_prob),
            ("attr_noise", self.attr_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if self.intra_cluster_purchase_prob <= self.cross_cluster_purchase_prob {
            return Err(Error::config(
                "intra_cluster_purchase_prob",
                "must exceed cross_cluster_purchase_prob",
            ));
        }
        let pool = self.num_attributes / self.num_clusters;
        if self.attr_per_item > pool || self.attr_per_user > pool {
            return Err(Error::config(
                "attr_per_item",
                format!(
                    "attr_per_item ({}) and attr_per_user ({}) must not exceed the per-cluster attribute pool ({pool})",
                    self.attr_per_item, self.attr_per_user
                ),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items + self.num_attributes
    }

    pub fn user_entity(&self, u: usize) -> usize {
        u
    }

    pub fn item_entity(&self, i: usize) -> usize {
        self.num_users + i
    }

    pub fn attribute_entity(&self, a: usize) -> usize {
        self.num_users + self.num_items + a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "valid" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledUser {
    /// Entity index of the user.
    pub user: usize,
    pub label: u8,
    pub split: Split,
}

/// Binary user labels for one brand.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub brand: usize,
    pub records: Vec<LabeledUser>,
}

impl LabeledDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledUser> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split, label: u8) -> usize {
        self.split(split).filter(|r| r.label == label).count()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterBenchmark {
    pub graph: KnowledgeGraph,
    /// Cluster of every user, by user number.
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
    pub datasets: Vec<LabeledDataset>,
    /// Stand-in baseline features per user entity (`num_users x D`).
    pub baseline: Array2<f64>,
}

/// Contiguous blocks: index `i` of `n` goes to cluster `i * c / n`.
fn block_cluster(i: usize, n: usize, c: usize) -> usize {
    i * c / n
}

/// Fraction of users whose labels come from the later, test-only window.
const TEST_WINDOW: f64 = 0.25;
const NEGATIVES_PER_POSITIVE: usize = 3;
/// Baseline dims beyond the noisy cluster indicators.
const BASELINE_NOISE_DIMS: usize = 3;

pub fn generate_cluster_kg(spec: &SyntheticSpec) -> Result<ClusterBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_clusters;
    let user_cluster: Vec<usize> = (0..spec.num_users)
        .map(|u| block_cluster(u, spec.num_users, c))
        .collect();
    let item_cluster: Vec<usize> = (0..spec.num_items)
        .map(|i| block_cluster(i, spec.num_items, c))
        .collect();
    let attr_cluster: Vec<usize> = (0..spec.num_attributes)
        .map(|a| block_cluster(a, spec.num_attributes, c))
        .collect();
    let pools: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..spec.num_attributes).filter(|&a| attr_cluster[a] == k).collect())
        .collect();

    let mut triples = Vec::new();
    for u in 0..spec.num_users {
        for i in 0..spec.num_items {
            let p = if user_cluster[u] == item_cluster[i] {
                spec.intra_cluster_purchase_prob
            } else {
                spec.cross_cluster_purchase_prob
            };
            if rng.gen_bool(p) {
                triples.push(Triple::new(spec.user_entity(u), PURCHASE, spec.item_entity(i)));
            }
        }
    }
    let draw_attrs = |cluster: usize, count: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut chosen = Vec::with_capacity(count);
        while chosen.len() < count {
            let a = if rng.gen_bool(spec.attr_noise) {
                rng.gen_range(0..spec.num_attributes)
            } else {
                pools[cluster][rng.gen_range(0..pools[cluster].len())]
            };
            if !chosen.contains(&a) {
                chosen.push(a);
            }
        }
        chosen
    };
    for i in 0..spec.num_items {
        for a in draw_attrs(item_cluster[i], spec.attr_per_item, &mut rng) {
            triples.push(Triple::new(
                spec.item_entity(i),
                HAS_ATTRIBUTE,
                spec.attribute_entity(a),
            ));
        }
    }
    for u in 0..spec.num_users {
        for a in draw_attrs(user_cluster[u], spec.attr_per_user, &mut rng) {
            triples.push(Triple::new(
                spec.user_entity(u),
                USER_ATTRIBUTE,
                spec.attribute_entity(a),
            ));
        }
    }
    connect_clusters(spec, &user_cluster, &item_cluster, &attr_cluster, &mut triples);

    let mut kinds = vec![EntityKind::User; spec.num_users];
    kinds.extend(std::iter::repeat_n(EntityKind::Item, spec.num_items));
    kinds.extend(std::iter::repeat_n(EntityKind::Attribute, spec.num_attributes));
    let graph = KnowledgeGraph::from_triples(spec.num_entities(), RELATION_NAMES.len(), triples)?
        .with_kinds(kinds)?
        .with_relation_names(RELATION_NAMES.iter().map(|s| s.to_string()).collect())?;

    let datasets = brand_datasets(spec, &user_cluster, &mut rng)?;
    let baseline = baseline_features(spec, &user_cluster, &mut rng);
    Ok(ClusterBenchmark {
        graph,
        user_cluster,
        item_cluster,
        datasets,
        baseline,
    })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Number of weakly connected components, isolated entities included.
pub fn count_components(kg: &KnowledgeGraph) -> usize {
    let mut uf = UnionFind::new(kg.num_entities);
    let mut count = kg.num_entities;
    for t in &kg.triples {
        if uf.union(t.head, t.tail) {
            count -= 1;
        }
    }
    count
}

/// Joins the pieces of each cluster's subgraph with extra intra-cluster
/// edges from the cluster's first user so every cluster is internally
/// connected: users through the cluster's first attribute, items by a
/// purchase, attributes by a user_attribute edge.
fn connect_clusters(
    spec: &SyntheticSpec,
    user_cluster: &[usize],
    item_cluster: &[usize],
    attr_cluster: &[usize],
    triples: &mut Vec<Triple>,
) {
    let mut uf = UnionFind::new(spec.num_entities());
    for t in triples.iter() {
        uf.union(t.head, t.tail);
    }
    for k in 0..spec.num_clusters {
        let first = |clusters: &[usize]| clusters.iter().position(|&c| c == k).expect("non-empty cluster");
        let anchor = spec.user_entity(first(user_cluster));
        let anchor_attr = spec.attribute_entity(first(attr_cluster));
        let members = (0..spec.num_users)
            .filter(|&u| user_cluster[u] == k)
            .map(|u| spec.user_entity(u))
            .chain(
                (0..spec.num_items)
                    .filter(|&i| item_cluster[i] == k)
                    .map(|i| spec.item_entity(i)),
            )
            .chain(
                (0..spec.num_attributes)
                    .filter(|&a| attr_cluster[a] == k)
                    .map(|a| spec.attribute_entity(a)),
            )
            .collect::<Vec<_>>();
        for m in members {
            if uf.find(m) == uf.find(anchor) {
                continue;
            }
            let edge = if m < spec.num_users {
                if uf.find(anchor_attr) != uf.find(anchor) {
                    triples.push(Triple::new(anchor, USER_ATTRIBUTE, anchor_attr));
                    uf.union(anchor, anchor_attr);
                }
                Triple::new(m, USER_ATTRIBUTE, anchor_attr)
            } else if m < spec.num_users + spec.num_items {
                Triple::new(anchor, PURCHASE, m)
            } else {
                Triple::new(anchor, USER_ATTRIBUTE, m)
            };
            triples.push(edge);
            uf.union(edge.head, edge.tail);
        }
    }
}

fn brand_datasets(
    spec: &SyntheticSpec,
    user_cluster: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledDataset>> {
    // Per-cluster share of users held out for the test window.
    let mut train_window = Vec::new();
    let mut test_window = Vec::new();
    for k in 0..spec.num_clusters {
        let mut members: Vec<usize> = (0..spec.num_users).filter(|&u| user_cluster[u] == k).collect();
        members.shuffle(rng);
        let n_test = ((members.len() as f64) * TEST_WINDOW).round() as usize;
        test_window.extend_from_slice(&members[..n_test]);
        train_window.extend_from_slice(&members[n_test..]);
    }
    train_window.sort_unstable();
    test_window.sort_unstable();

    let mut datasets = Vec::with_capacity(spec.num_clusters);
    for brand in 0..spec.num_clusters {
        let mut records = Vec::new();
        for (window, is_test) in [(&train_window, false), (&test_window, true)] {
            let pos: Vec<usize> = window.iter().copied().filter(|&u| user_cluster[u] == brand).collect();
            let others: Vec<usize> = window.iter().copied().filter(|&u| user_cluster[u] != brand).collect();
            let want = NEGATIVES_PER_POSITIVE * pos.len();
            if pos.is_empty() || others.len() < want {
                return Err(Error::config(
                    "num_clusters",
                    format!(
                        "brand {brand}: {} positives need {want} negatives but only {} other users exist; use more clusters or users",
                        pos.len(),
                        others.len()
                    ),
                ));
            }
            let neg: Vec<usize> = index::sample(rng, others.len(), want)
                .into_iter()
                .map(|i| others[i])
                .collect();
            if is_test {
                records.extend(pos.iter().map(|&u| labeled(spec, u, 1, Split::Test)));
                records.extend(neg.iter().map(|&u| labeled(spec, u, 0, Split::Test)));
            } else {
                // stratified 6:4 train/validation
                for (group, label) in [(pos, 1u8), (neg, 0u8)] {
                    let mut group = group;
                    group.shuffle(rng);
                    let n_train = (group.len() * 6 + 5) / 10;
                    for (j, &u) in group.iter().enumerate() {
                        let split = if j < n_train { Split::Train } else { Split::Validation };
                        records.push(labeled(spec, u, label, split));
                    }
                }
            }
        }
        records.sort_by_key(|r| (r.split as u8, r.user));
        datasets.push(LabeledDataset { brand, records });
    }
    Ok(datasets)
}

fn labeled(spec: &SyntheticSpec, u: usize, label: u8, split: Split) -> LabeledUser {
    LabeledUser {
        user: spec.user_entity(u),
        label,
        split,
    }
}

/// Noisy cluster one-hot plus pure-noise columns, one row per user.
fn baseline_features(spec: &SyntheticSpec, user_cluster: &[usize], rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dims = spec.num_clusters + BASELINE_NOISE_DIMS;
    let mut out = Array2::zeros((spec.num_users, dims));
    for u in 0..spec.num_users {
        for d in 0..dims {
            let signal = if d == user_cluster[u] { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(rng);
            out[[u, d]] = if d < spec.num_clusters {
                signal + spec.noise_std * z
            } else {
                z
            };
        }
    }
    out
}

/// Writes `user_index<TAB>label<TAB>split<TAB>brand` lines.
pub fn write_labels(path: impl AsRef<Path>, datasets: &[LabeledDataset]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# user_index\tlabel\tsplit\tbrand\n");
    for ds in datasets {
        for r in &ds.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.user, r.label, r.split.as_str(), ds.brand));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabeledDataset>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<LabeledDataset>> {
    let mut datasets: Vec<LabeledDataset> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let user = fields[0].parse().map_err(|_| bad(format!("bad user index '{}'", fields[0])))?;
        let label = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label must be 0 or 1, got '{other}'"))),
        };
        let split = Split::parse(fields[2]).ok_or_else(|| bad(format!("unknown split '{}'", fields[2])))?;
        let brand: usize = fields[3].parse().map_err(|_| bad(format!("bad brand '{}'", fields[3])))?;
        let pos = match datasets.iter().position(|d| d.brand == brand) {
            Some(p) => p,
            None => {
                datasets.push(LabeledDataset {
                    brand,
                    records: Vec::new(),
                });
                datasets.len() - 1
            }
        };
        datasets[pos].records.push(LabeledUser { user, label, split });
    }
    if datasets.is_empty() {
        return Err(Error::Invalid("labels file has no records".into()));
    }
    datasets.sort_by_key(|d| d.brand);
    Ok(datasets)
}

/// Output of [`generate_translation_kg`].
#[derive(Debug, Clone)]
pub struct TranslationKg {
    pub graph: KnowledgeGraph,
    pub planted: EmbeddingTable,
    pub threshold: f64,
}

const RELATION_SCALE: f64 = 0.5;
const MAX_CUBE_DIMS: usize = 6;
const MIN_MEAN_DEGREE: f64 = 2.0;
const MAX_MEAN_DEGREE: f64 = 10.0;

/// Plants unit-norm entities on hypercube blocks `h + sum_{j in S} r_j`
/// where the first relations are mutually orthogonal and each block base
/// satisfies `h . r_j = -|r_j|^2 / 2`, so every corner stays on the unit
/// sphere and cube edges are exact translations. Entities are perturbed by
/// `noise_std` Gaussian noise (then renormalized), and every `(h, r, t)`
/// with `||e_h + e_r - e_t||_1` below a threshold is emitted. The threshold
/// sits in the widest score gap that keeps the mean out-degree in `[2, 10]`.
/// Cube blocks of `d` relations give degree `d / 2`, so exact fixtures need
/// `num_relations >= 4` and `dim >= 5`.
pub fn generate_translation_kg(
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    noise_std: f64,
    seed: u64,
) -> Result<TranslationKg> {
    if dim < 2 {
        return Err(Error::config("dim", "must be >= 2"));
    }
    if num_entities < 2 || num_relations == 0 {
        return Err(Error::config("num_entities", "need >= 2 entities and >= 1 relation"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config("noise_std", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> Array1<f64> {
        Array1::from_shape_fn(dim, |_| StandardNormal.sample(rng))
    };

    // Orthonormal directions for the cube relations via Gram-Schmidt.
    let cube_dims = num_relations.min(dim - 1).min(MAX_CUBE_DIMS);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(cube_dims);
    while basis.len() < cube_dims {
        let v = orthogonalize(gaussian(&mut rng), &basis);
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let mut relations = Array2::zeros((num_relations, dim));
    for r in 0..num_relations {
        let dir = if r < cube_dims {
            basis[r].clone()
        } else {
            let v = gaussian(&mut rng);
            let n = v.dot(&v).sqrt().max(1e-12);
            v / n
        };
        relations.row_mut(r).assign(&(dir * RELATION_SCALE));
    }

    // Shared in-span part of every block base: -sum r_j / 2.
    let mut centre = Array1::<f64>::zeros(dim);
    for j in 0..cube_dims {
        centre.scaled_add(-0.5, &relations.row(j));
    }
    let free_norm = (1.0 - centre.dot(&centre)).sqrt();

    let block = 1usize << cube_dims;
    let mut entities = Array2::zeros((num_entities, dim));
    let mut base = centre.clone();
    for e in 0..num_entities {
        let corner = e % block;
        if corner == 0 {
            let mut u = orthogonalize(gaussian(&mut rng), &basis);
            while u.dot(&u).sqrt() < 1e-6 {
                u = orthogonalize(gaussian(&mut rng), &basis);
            }
            let n = u.dot(&u).sqrt();
            base = &centre + &(u * (free_norm / n));
        }
        let mut pos = base.clone();
        for j in 0..cube_dims {
            if corner >> j & 1 == 1 {
                pos += &relations.row(j);
            }
        }
        entities.row_mut(e).assign(&pos);
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        entities.mapv_inplace(|v| v + normal.sample(&mut rng));
        for mut row in entities.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 1e-12 {
                row /= n;
            }
        }
    }
    let planted = EmbeddingTable::new(entities, relations)?;

    // Brute-force scores of all candidate triples.
    let mut scored: Vec<(f64, Triple)> = Vec::with_capacity(num_entities * num_entities * num_relations);
    for h in 0..num_entities {
        for r in 0..num_relations {
            let q = &planted.entities.row(h) + &planted.relations.row(r);
            for t in 0..num_entities {
                if t == h {
                    continue;
                }
                let s: f64 = q.iter().zip(planted.entities.row(t)).map(|(a, b)| (a - b).abs()).sum();
                scored.push((s, Triple::new(h, r, t)));
            }
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let lo = (MIN_MEAN_DEGREE * num_entities as f64).ceil() as usize;
    let hi = ((MAX_MEAN_DEGREE * num_entities as f64).floor() as usize).min(scored.len() - 1);
    if lo > hi || lo == 0 {
        return Err(Error::Invalid(format!(
            "cannot reach a mean out-degree in [{MIN_MEAN_DEGREE}, {MAX_MEAN_DEGREE}] with {num_entities} entities and {num_relations} relations; add relations or entities"
        )));
    }
    let cut = (lo..=hi)
        .max_by(|&a, &b| {
            let ga = scored[a].0 - scored[a - 1].0;
            let gb = scored[b].0 - scored[b - 1].0;
            ga.total_cmp(&gb).then(b.cmp(&a))
        })
        .expect("non-empty range");
    let (below, above) = (scored[cut - 1].0, scored[cut].0);
    if above <= below {
        return Err(Error::Invalid(
            "threshold search found no score gap; change noise_std or seed".into(),
        ));
    }
    let threshold = 0.5 * (below + above);
    let triples: Vec<Triple> = scored[..cut].iter().map(|(_, t)| *t).collect();
    let graph = KnowledgeGraph::from_triples(num_entities, num_relations, triples)?;
    Ok(TranslationKg {
        graph,
        planted,
        threshold,
    })
}

fn orthogonalize(mut v: Array1<f64>, basis: &[Array1<f64>]) -> Array1<f64> {
    for q in basis {
        let c = v.dot(q);
        v.scaled_add(-c, q);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_users: 100,
            num_items: 120,
            num_attributes: 20,
            num_clusters: 5,
            intra_cluster_purchase_prob: 0.1,
            cross_cluster_purchase_prob: 0.01,
            attr_per_item: 2,
            attr_per_user: 1,
            attr_noise: 0.2,
            noise_std: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn spec_validation_names_field() {
        let mut spec = small_spec();
        spec.attr_per_item = 50;
        match generate_cluster_kg(&spec) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "attr_per_item"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = small_spec();
        spec.cross_cluster_purchase_prob = 0.5;
        assert!(matches!(
            generate_cluster_kg(&spec),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn cluster_kg_is_deterministic() {
        let a = generate_cluster_kg(&small_spec()).unwrap();
        let b = generate_cluster_kg(&small_spec()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.datasets, b.datasets);
        assert_eq!(a.baseline, b.baseline);
    }

    #[test]
    fn zero_cross_noise_gives_cluster_components() {
        let mut spec = small_spec();
        spec.cross_cluster_purchase_prob = 0.0;
        spec.attr_noise = 0.0;
        let bench = generate_cluster_kg(&spec).unwrap();
        assert_eq!(count_components(&bench.graph), spec.num_clusters);
        for t in &bench.graph.triples {
            if t.relation == PURCHASE {
                let u = t.head;
                let i = t.tail - spec.num_users;
                assert_eq!(bench.user_cluster[u], bench.item_cluster[i]);
            }
        }
    }

    #[test]
    fn brand_datasets_have_one_to_three_ratio() {
        let bench = generate_cluster_kg(&small_spec()).unwrap();
        assert_eq!(bench.datasets.len(), 5);
        for ds in &bench.datasets {
            let pos = ds.records.iter().filter(|r| r.label == 1).count();
            let neg = ds.records.len() - pos;
            assert!((neg as i64 - 3 * pos as i64).abs() <= 1, "{pos} {neg}");
            let test_users: std::collections::HashSet<_> = ds.split(Split::Test).map(|r| r.user).collect();
            assert!(ds
                .records
                .iter()
                .filter(|r| r.split != Split::Test)
                .all(|r| !test_users.contains(&r.user)));
            for r in &ds.records {
                assert_eq!(r.label == 1, bench.user_cluster[r.user] == ds.brand);
            }
            let (tr, va) = (ds.count(Split::Train, 1), ds.count(Split::Validation, 1));
            assert!(tr > va, "train {tr} validation {va}");
        }
    }

    #[test]
    fn generated_graph_is_simple() {
        let bench = generate_cluster_kg(&small_spec()).unwrap();
        let set: std::collections::HashSet<_> = bench.graph.triples.iter().collect();
        assert_eq!(set.len(), bench.graph.triples.len());
        assert!(bench.graph.triples.iter().all(|t| t.head != t.tail));
    }

    #[test]
    fn labels_roundtrip() {
        let bench = generate_cluster_kg(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        write_labels(&path, &bench.datasets).unwrap();
        assert_eq!(read_labels(&path).unwrap(), bench.datasets);
        assert!(matches!(
            parse_labels("1\t2\ttrain\t0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn perfect_translation_fixture() {
        let tkg = generate_translation_kg(100, 5, 8, 0.0, 3).unwrap();
        for row in tkg.planted.entities.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        let n = tkg.graph.num_entities as f64;
        let degree = tkg.graph.triples.len() as f64 / n;
        assert!((2.0..=10.0).contains(&degree), "{degree}");
        for t in &tkg.graph.triples {
            let s = crate::transe::score_triple(&tkg.planted, t).unwrap();
            assert!(s < tkg.threshold);
            assert!(s < 1e-12, "{s}");
        }
        let again = generate_translation_kg(100, 5, 8, 0.0, 3).unwrap();
        assert_eq!(again.graph, tkg.graph);
        assert_eq!(again.planted, tkg.planted);
    }

    #[test]
    fn translation_kg_rejects_small_dim() {
        assert!(generate_translation_kg(50, 3, 1, 0.0, 0).is_err());
    }
}
