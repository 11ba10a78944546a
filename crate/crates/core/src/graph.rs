//! Knowledge-graph data model.
//!
//! Triples are ingested into dense entity/relation indices. The message graph
//! materializes one incoming edge per triple endpoint: the tail receives a
//! forward edge from the head and the head receives a reverse edge from the
//! tail, so that the sign of the relation in a knowledge query is explicit.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// A `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EntityKind {
    User,
    #[default]
    Item,
    Attribute,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Attribute => "attribute",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "user" => Ok(EntityKind::User),
            "item" => Ok(EntityKind::Item),
            "attribute" | "attr" => Ok(EntityKind::Attribute),
            other => Err(format!("unknown entity kind '{other}'")),
        }
    }
}

/// Direction of a message edge relative to the triple it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// The destination is the tail of `(source, relation, destination)`.
    Forward,
    /// The destination is the head of `(destination, relation, source)`.
    Reverse,
}

impl Direction {
    /// Sign applied to the relation embedding inside a knowledge query.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageEdge {
    pub source: usize,
    pub relation: usize,
    pub direction: Direction,
}

/// How entity and relation identifiers in a triple file map to indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdMode {
    /// Arbitrary strings, interned in first-appearance order.
    StringInterned,
    /// Non-negative integers used directly as indices.
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub num_entities: usize,
    pub num_relations: usize,
    pub triples: Vec<Triple>,
    /// Incoming message edges per destination; empty until
    /// [`KnowledgeGraph::build_message_graph`] runs.
    pub incoming: Vec<Vec<MessageEdge>>,
    pub entity_kind: Vec<EntityKind>,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
}

impl KnowledgeGraph {
    /// Builds a graph from index triples, rejecting out-of-range indices and
    /// self-loops and dropping duplicates (first occurrence wins).
    pub fn from_triples(
        num_entities: usize,
        num_relations: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut self_loops = 0;
        let mut first_loop = 0;
        for (i, t) in triples.into_iter().enumerate() {
            check_index("entity", t.head, num_entities)?;
            check_index("entity", t.tail, num_entities)?;
            check_index("relation", t.relation, num_relations)?;
            if t.head == t.tail {
                if self_loops == 0 {
                    first_loop = i + 1;
                }
                self_loops += 1;
                continue;
            }
            if seen.insert(t) {
                kept.push(t);
            }
        }
        if self_loops > 0 {
            return Err(Error::SelfLoops {
                count: self_loops,
                first_line: first_loop,
            });
        }
        Ok(Self {
            num_entities,
            num_relations,
            triples: kept,
            incoming: Vec::new(),
            entity_kind: vec![EntityKind::Item; num_entities],
            entity_names: (0..num_entities).map(|i| i.to_string()).collect(),
            relation_names: (0..num_relations).map(|i| i.to_string()).collect(),
        })
    }

    pub fn with_kinds(mut self, kinds: Vec<EntityKind>) -> Result<Self> {
        if kinds.len() != self.num_entities {
            return Err(Error::LengthMismatch {
                left: kinds.len(),
                right: self.num_entities,
                context: "entity kinds vs entities",
            });
        }
        self.entity_kind = kinds;
        Ok(self)
    }

    pub fn with_relation_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_relations {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: self.num_relations,
                context: "relation names vs relations",
            });
        }
        self.relation_names = names;
        Ok(self)
    }

    /// Reads a triple file. Lines are `head<TAB>relation<TAB>tail[<TAB>kind]`;
    /// blank lines and lines starting with `#` are skipped.
    ///
    /// The optional kind field is either a single tag applied to the head or
    /// `head_kind,tail_kind`.
    pub fn load_triples(path: impl AsRef<Path>, id_mode: IdMode) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_triples(&text, id_mode)
    }

    pub fn parse_triples(text: &str, id_mode: IdMode) -> Result<Self> {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let mut kinds: HashMap<usize, (EntityKind, usize)> = HashMap::new();
        let mut triples = Vec::new();
        let mut lines_of = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = if line.contains('\t') {
                line.split('\t').collect()
            } else {
                line.split_whitespace().collect()
            };
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 3 or 4 fields, found {}", fields.len()),
                });
            }
            let intern = |interner: &mut Interner, field: &str| -> Result<usize> {
                let field = field.trim();
                if field.is_empty() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "empty identifier".into(),
                    });
                }
                match id_mode {
                    IdMode::StringInterned => Ok(interner.intern(field)),
                    IdMode::Integer => field.parse::<usize>().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("'{field}' is not a non-negative integer"),
                    }),
                }
            };
            let head = intern(&mut entities, fields[0])?;
            let relation = intern(&mut relations, fields[1])?;
            let tail = intern(&mut entities, fields[2])?;

            if let Some(tag) = fields.get(3) {
                let parse_kind = |s: &str| {
                    s.trim()
                        .parse::<EntityKind>()
                        .map_err(|message| Error::Parse {
                            line: lineno,
                            message,
                        })
                };
                let mut parts = tag.split(',');
                let head_kind = parse_kind(parts.next().unwrap_or(""))?;
                let tail_kind = parts.next().map(parse_kind).transpose()?;
                if parts.next().is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("malformed kind field '{tag}'"),
                    });
                }
                let mut assign = |entity: usize, kind: EntityKind| -> Result<()> {
                    match kinds.get(&entity) {
                        Some(&(prev, prev_line)) if prev != kind => Err(Error::Parse {
                            line: lineno,
                            message: format!(
                                "entity '{}' tagged {kind} but was {prev} at line {prev_line}",
                                fields[if entity == head { 0 } else { 2 }].trim()
                            ),
                        }),
                        Some(_) => Ok(()),
                        None => {
                            kinds.insert(entity, (kind, lineno));
                            Ok(())
                        }
                    }
                };
                assign(head, head_kind)?;
                if let Some(k) = tail_kind {
                    assign(tail, k)?;
                }
            }
            triples.push(Triple::new(head, relation, tail));
            lines_of.push(lineno);
        }

        if triples.is_empty() {
            return Err(Error::EmptyGraph);
        }

        let loops: Vec<usize> = triples
            .iter()
            .zip(&lines_of)
            .filter(|(t, _)| t.head == t.tail)
            .map(|(_, &l)| l)
            .collect();
        if let Some(&first_line) = loops.first() {
            return Err(Error::SelfLoops {
                count: loops.len(),
                first_line,
            });
        }

        let (num_entities, num_relations, entity_names, relation_names) = match id_mode {
            IdMode::StringInterned => (
                entities.names.len(),
                relations.names.len(),
                entities.names,
                relations.names,
            ),
            IdMode::Integer => {
                let ne = triples.iter().map(|t| t.head.max(t.tail)).max().unwrap_or(0) + 1;
                let nr = triples.iter().map(|t| t.relation).max().unwrap_or(0) + 1;
                (
                    ne,
                    nr,
                    (0..ne).map(|i| i.to_string()).collect(),
                    (0..nr).map(|i| i.to_string()).collect(),
                )
            }
        };

        let mut kg = Self::from_triples(num_entities, num_relations, triples)?;
        for (entity, (kind, _)) in kinds {
            kg.entity_kind[entity] = kind;
        }
        kg.entity_names = entity_names;
        kg.relation_names = relation_names;
        Ok(kg)
    }

    /// Writes the graph in triple-file format with indices as identifiers
    /// and `head_kind,tail_kind` tags, so `IdMode::Integer` reloads it with
    /// the same indices.
    pub fn write_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str("# head\trelation\ttail\tkinds\n");
        for t in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{},{}\n",
                t.head,
                t.relation,
                t.tail,
                self.entity_kind[t.head],
                self.entity_kind[t.tail]
            ));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Populates `incoming` from `triples`. Rebuilds from scratch, so calling
    /// it repeatedly yields the same adjacency.
    pub fn build_message_graph(&mut self) {
        let mut incoming = vec![Vec::new(); self.num_entities];
        for t in &self.triples {
            incoming[t.tail].push(MessageEdge {
                source: t.head,
                relation: t.relation,
                direction: Direction::Forward,
            });
            incoming[t.head].push(MessageEdge {
                source: t.tail,
                relation: t.relation,
                direction: Direction::Reverse,
            });
        }
        for list in &mut incoming {
            list.sort_unstable();
        }
        self.incoming = incoming;
    }

    pub fn has_message_graph(&self) -> bool {
        self.incoming.len() == self.num_entities
    }

    /// Incoming edges of `v`, or an error if `v` is out of range.
    pub fn incoming_of(&self, v: usize) -> Result<&[MessageEdge]> {
        check_index("entity", v, self.num_entities)?;
        Ok(self.incoming.get(v).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Returns all incoming edges of `v` when there are at most `k`,
    /// otherwise a uniform sample of `k` without replacement (in adjacency
    /// order).
    pub fn neighbor_sample<R: Rng + ?Sized>(
        &self,
        v: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<MessageEdge>> {
        if k == 0 {
            return Err(Error::config("fan_out", "must be at least 1"));
        }
        let edges = self.incoming_of(v)?;
        if edges.len() <= k {
            return Ok(edges.to_vec());
        }
        let mut picked = index::sample(rng, edges.len(), k).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| edges[i]).collect())
    }

    /// Entities of the given kind, in index order.
    pub fn entities_of_kind(&self, kind: EntityKind) -> Vec<usize> {
        self.entity_kind
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_names.iter().position(|n| n == name)
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, size })
    }
}

#[derive(Default)]
struct Interner {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.lookup.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.lookup.insert(name.to_owned(), i);
        i
    }
}
