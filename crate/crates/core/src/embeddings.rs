//! TransE embeddings of the KB's triple view.
//!
//! Individuals and classes are entities; roles plus the two reserved
//! predicates `type` and `subclassof` are relations.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::LearningProblem;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::tensor::Tensor;

pub const TYPE_PREDICATE: &str = "type";
pub const SUBCLASS_PREDICATE: &str = "subclassof";

/// `(subject, predicate, object)` by entity and relation id.
pub type Triple = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleStore {
    pub triples: Vec<Triple>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    *index.entry(name.to_string()).or_insert_with(|| {
        names.push(name.to_string());
        names.len() - 1
    })
}

/// Role assertions, then class assertions, then atomic subclass axioms, each
/// in KB order. Entities are numbered individuals first.
pub fn kb_to_triples(kb: &KnowledgeBase) -> Result<TripleStore> {
    for reserved in [TYPE_PREDICATE, SUBCLASS_PREDICATE] {
        if kb.role_id(reserved).is_some() {
            return Err(Error::Data(format!(
                "role name `{reserved}` clashes with a reserved predicate"
            )));
        }
    }
    let (mut entities, mut ent_index) = (Vec::new(), HashMap::new());
    let (mut relations, mut rel_index) = (Vec::new(), HashMap::new());
    for ind in kb.individuals() {
        intern(&mut entities, &mut ent_index, ind);
    }
    for role in kb.roles() {
        intern(&mut relations, &mut rel_index, role);
    }
    let type_rel = intern(&mut relations, &mut rel_index, TYPE_PREDICATE);
    let sub_rel = intern(&mut relations, &mut rel_index, SUBCLASS_PREDICATE);

    let mut triples = Vec::new();
    for &(a, r, b) in kb.abox_roles() {
        triples.push((a, r, b));
    }
    for &(a, c) in kb.abox_types() {
        let c = intern(&mut entities, &mut ent_index, &kb.classes()[c]);
        triples.push((a, type_rel, c));
    }
    for (a, b) in kb.atomic_subclass_pairs() {
        let a = intern(&mut entities, &mut ent_index, &kb.classes()[a]);
        let b = intern(&mut entities, &mut ent_index, &kb.classes()[b]);
        triples.push((a, sub_rel, b));
    }
    let mut seen = HashSet::new();
    triples.retain(|t| seen.insert(*t));
    Ok(TripleStore {
        triples,
        entities,
        relations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 40,
            epochs: 100,
            margin: 1.0,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    entity_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    entities: Tensor,
    relation_names: Vec<String>,
    relations: Tensor,
}

impl EmbeddingTable {
    pub fn new(
        entity_names: Vec<String>,
        entities: Tensor,
        relation_names: Vec<String>,
        relations: Tensor,
    ) -> Result<Self> {
        if entities.rows() != entity_names.len()
            || relations.rows() != relation_names.len()
            || entities.cols() != relations.cols()
        {
            return Err(Error::shape(
                "embedding table",
                &entities.shape(),
                &relations.shape(),
            ));
        }
        let mut entity_index = HashMap::new();
        for (i, n) in entity_names.iter().enumerate() {
            if entity_index.insert(n.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate entity `{n}`")));
            }
        }
        Ok(EmbeddingTable {
            entity_names,
            entity_index,
            entities,
            relation_names,
            relations,
        })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_vectors(&self) -> &Tensor {
        &self.entities
    }

    pub fn relation_vectors(&self) -> &Tensor {
        &self.relations
    }

    pub fn entity(&self, name: &str) -> Option<&[f64]> {
        self.entity_index.get(name).map(|&i| self.entities.row(i))
    }

    /// `‖s + p − o‖` for a triple over this table's ids.
    pub fn distance(&self, (s, p, o): Triple) -> f64 {
        distance(self.entities.row(s), self.relations.row(p), self.entities.row(o))
    }

    /// Mean `max(0, margin + d(pos) − d(neg))` over triple pairs.
    pub fn margin_loss(&self, pairs: &[(Triple, Triple)], margin: f64) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let total: f64 = pairs
            .iter()
            .map(|&(p, n)| (margin + self.distance(p) - self.distance(n)).max(0.0))
            .sum();
        total / pairs.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("d {}\n# entities\n", self.dim());
        let line = |out: &mut String, name: &str, v: &[f64]| {
            out.push_str(name);
            for x in v {
                let _ = write!(out, " {x:.16e}");
            }
            out.push('\n');
        };
        for (i, n) in self.entity_names.iter().enumerate() {
            line(&mut out, n, self.entities.row(i));
        }
        out.push_str("# relations\n");
        for (i, n) in self.relation_names.iter().enumerate() {
            line(&mut out, n, self.relations.row(i));
        }
        out
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Data(format!("embedding file line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let dim: usize = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("d ")
                .and_then(|d| d.trim().parse().ok())
                .ok_or_else(|| bad(1, format!("expected `d <dim>`, found `{l}`")))?,
            None => return Err(bad(1, "empty file".into())),
        };
        let mut section = None;
        let (mut ents, mut ent_data, mut rels, mut rel_data) = (vec![], vec![], vec![], vec![]);
        for (i, l) in lines {
            match l.trim() {
                "" => continue,
                "# entities" => section = Some(true),
                "# relations" => section = Some(false),
                l => {
                    let mut fields = l.split_whitespace();
                    let name = fields.next().expect("non-empty line").to_string();
                    let values = fields
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(i + 1, e.to_string()))?;
                    if values.len() != dim {
                        return Err(bad(i + 1, format!("expected {dim} values, found {}", values.len())));
                    }
                    match section {
                        Some(true) => {
                            ents.push(name);
                            ent_data.extend(values);
                        }
                        Some(false) => {
                            rels.push(name);
                            rel_data.extend(values);
                        }
                        None => return Err(bad(i + 1, "vector before a section marker".into())),
                    }
                }
            }
        }
        let entities = Tensor::from_vec(ents.len(), dim, ent_data)?;
        let relations = Tensor::from_vec(rels.len(), dim, rel_data)?;
        Self::new(ents, entities, rels, relations)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Embeddings of `names` as rows, in list order.
    pub fn lookup(&self, names: &[String]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(names.len() * self.dim());
        for n in names {
            let v = self.entity(n).ok_or_else(|| Error::UnknownName {
                kind: "individual",
                name: n.clone(),
            })?;
            data.extend_from_slice(v);
        }
        Tensor::from_vec(names.len(), self.dim(), data)
    }
}

/// Positive and negative example matrices of a problem, rows in list order.
pub fn lookup_examples(table: &EmbeddingTable, problem: &LearningProblem) -> Result<(Tensor, Tensor)> {
    if problem.positives.is_empty() || problem.negatives.is_empty() {
        return Err(Error::Data(
            "learning problem needs at least one positive and one negative example".into(),
        ));
    }
    Ok((table.lookup(&problem.positives)?, table.lookup(&problem.negatives)?))
}

fn distance(s: &[f64], p: &[f64], o: &[f64]) -> f64 {
    s.iter()
        .zip(p)
        .zip(o)
        .map(|((s, p), o)| (s + p - o) * (s + p - o))
        .sum::<f64>()
        .sqrt()
}

fn normalize_rows(t: &mut Tensor) {
    let cols = t.cols();
    for row in t.data_mut().chunks_mut(cols) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

const MAX_CORRUPTION_TRIES: usize = 100;

/// Replaces head or tail (probability ½ each) by a uniformly drawn entity,
/// redrawing while the result is a known triple. `None` when every draw
/// collided.
pub fn corrupt(
    store: &TripleStore,
    known: &HashSet<Triple>,
    (s, p, o): Triple,
    rng: &mut impl Rng,
) -> Option<Triple> {
    let n = store.entities.len();
    for _ in 0..MAX_CORRUPTION_TRIES {
        let e = rng.gen_range(0..n);
        let t = if rng.gen_bool(0.5) { (e, p, o) } else { (s, p, e) };
        if !known.contains(&t) {
            return Some(t);
        }
    }
    None
}

/// A fixed set of (true, corrupted) pairs, one per triple, for comparing
/// losses before and after training.
pub fn corruption_pairs(store: &TripleStore, seed: u64) -> Vec<(Triple, Triple)> {
    let known: HashSet<Triple> = store.triples.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store
        .triples
        .iter()
        .filter_map(|&t| corrupt(store, &known, t, &mut rng).map(|c| (t, c)))
        .collect()
}

/// Seeded initialization: uniform in `±6/√d`, entity rows normalized.
pub fn init_table(store: &TripleStore, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 6.0 / (dim as f64).sqrt();
    let mut draw = |rows: usize| {
        let data = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(rows, dim, data)
    };
    let mut entities = draw(store.entities.len())?;
    normalize_rows(&mut entities);
    let relations = draw(store.relations.len())?;
    EmbeddingTable::new(store.entities.clone(), entities, store.relations.clone(), relations)
}

/// SGD on the margin-ranking objective with one filtered corruption per
/// triple per epoch. Returns the table and the mean loss of each epoch.
pub fn train_transe(store: &TripleStore, config: &TransEConfig, seed: u64) -> Result<(EmbeddingTable, Vec<f64>)> {
    if store.triples.is_empty() {
        return Err(Error::Data("no triples to embed".into()));
    }
    if config.dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
    }
    let mut table = init_table(store, config.dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let known: HashSet<Triple> = store.triples.iter().copied().collect();
    let mut order: Vec<usize> = (0..store.triples.len()).collect();
    let dim = config.dim;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let pos = store.triples[k];
            let Some(neg) = corrupt(store, &known, pos, &mut rng) else { continue };
            let (dp, dn) = (table.distance(pos), table.distance(neg));
            let loss = config.margin + dp - dn;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "TransE loss is {loss} at epoch {epoch}, triple {k}"
                )));
            }
            if loss <= 0.0 {
                continue;
            }
            total += loss;
            // d‖x‖/dx = x/‖x‖ with x = s + p − o; the corrupted term enters negated.
            for (triple, d, sign) in [(pos, dp, 1.0), (neg, dn, -1.0)] {
                if d == 0.0 {
                    continue;
                }
                let (s, p, o) = triple;
                let unit: Vec<f64> = (0..dim)
                    .map(|j| {
                        (table.entities.get(s, j) + table.relations.get(p, j) - table.entities.get(o, j)) / d
                    })
                    .collect();
                let step = config.lr * sign;
                for (j, u) in unit.iter().enumerate() {
                    let e = table.entities.data_mut();
                    e[s * dim + j] -= step * u;
                    e[o * dim + j] += step * u;
                    table.relations.data_mut()[p * dim + j] -= step * u;
                }
            }
        }
        normalize_rows(&mut table.entities);
        let mean = total / store.triples.len() as f64;
        debug!("transe epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    Ok((table, history))
}
