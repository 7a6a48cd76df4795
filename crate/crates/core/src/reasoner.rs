//! Closed-world instance retrieval by set operations.
//!
//! The domain is the KB's individual list. Atomic classes denote their asserted
//! members closed under atomic-to-atomic subclass axioms; complex TBox axioms
//! are kept in the KB but do not affect retrieval.

use std::collections::VecDeque;

use fixedbitset::FixedBitSet;

use crate::error::{Error, Result};
use crate::expr::ConceptExpr;
use crate::kb::KnowledgeBase;

/// A subset of the KB's individuals, by individual id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstanceSet {
    bits: FixedBitSet,
}

impl InstanceSet {
    pub fn empty(universe_size: usize) -> Self {
        InstanceSet {
            bits: FixedBitSet::with_capacity(universe_size),
        }
    }

    pub fn full(universe_size: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(universe_size);
        bits.insert_range(..);
        InstanceSet { bits }
    }

    pub fn from_ids(universe_size: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::empty(universe_size);
        for id in ids {
            set.bits.insert(id);
        }
        set
    }

    pub fn universe_size(&self) -> usize {
        self.bits.len()
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.universe_size()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.bits.contains(id)
    }

    pub fn insert(&mut self, id: usize) {
        self.bits.insert(id);
    }

    /// Member ids in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn complement(&self) -> Self {
        let mut bits = self.bits.clone();
        bits.toggle_range(..);
        InstanceSet { bits }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        InstanceSet { bits }
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        InstanceSet { bits }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.is_subset(&other.bits)
    }
}

/// Instance retrieval over one KB. Atomic extensions are materialized up front,
/// so a `Reasoner` is read-only and can be shared between threads.
#[derive(Clone, Debug)]
pub struct Reasoner<'kb> {
    kb: &'kb KnowledgeBase,
    extensions: Vec<InstanceSet>,
    /// successors[role][individual]
    successors: Vec<Vec<Vec<usize>>>,
}

impl<'kb> Reasoner<'kb> {
    pub fn new(kb: &'kb KnowledgeBase) -> Self {
        let n = kb.num_individuals();
        let num_classes = kb.classes().len();

        let mut direct = vec![InstanceSet::empty(n); num_classes];
        for &(a, c) in kb.abox_types() {
            direct[c].insert(a);
        }
        // subclasses[b] = classes a with a declared `a ⊑ b`.
        let mut subclasses = vec![Vec::new(); num_classes];
        for (a, b) in kb.atomic_subclass_pairs() {
            subclasses[b].push(a);
        }
        let extensions = (0..num_classes)
            .map(|class| {
                let mut ext = direct[class].clone();
                let mut seen = vec![false; num_classes];
                seen[class] = true;
                let mut queue = VecDeque::from([class]);
                while let Some(c) = queue.pop_front() {
                    for &sub in &subclasses[c] {
                        if !seen[sub] {
                            seen[sub] = true;
                            ext = ext.union(&direct[sub]);
                            queue.push_back(sub);
                        }
                    }
                }
                ext
            })
            .collect();

        let mut successors = vec![vec![Vec::new(); n]; kb.roles().len()];
        for &(a, r, b) in kb.abox_roles() {
            successors[r][a].push(b);
        }

        Reasoner {
            kb,
            extensions,
            successors,
        }
    }

    pub fn kb(&self) -> &'kb KnowledgeBase {
        self.kb
    }

    pub fn universe_size(&self) -> usize {
        self.kb.num_individuals()
    }

    pub fn atomic_extension(&self, class: &str) -> Result<&InstanceSet> {
        let id = self.kb.class_id(class).ok_or_else(|| Error::UnknownName {
            kind: "class",
            name: class.to_string(),
        })?;
        Ok(&self.extensions[id])
    }

    pub fn retrieve(&self, expr: &ConceptExpr) -> Result<InstanceSet> {
        let n = self.universe_size();
        Ok(match expr {
            ConceptExpr::Top => InstanceSet::full(n),
            ConceptExpr::Bottom => InstanceSet::empty(n),
            ConceptExpr::Atomic(name) => self.atomic_extension(name)?.clone(),
            ConceptExpr::Not(c) => self.retrieve(c)?.complement(),
            ConceptExpr::And(l, r) => self.retrieve(l)?.intersection(&self.retrieve(r)?),
            ConceptExpr::Or(l, r) => self.retrieve(l)?.union(&self.retrieve(r)?),
            ConceptExpr::Exists(role, c) => {
                let succ = self.role_successors(role)?;
                let filler = self.retrieve(c)?;
                InstanceSet::from_ids(
                    n,
                    (0..n).filter(|&a| succ[a].iter().any(|&b| filler.contains(b))),
                )
            }
            ConceptExpr::Forall(role, c) => {
                let succ = self.role_successors(role)?;
                let filler = self.retrieve(c)?;
                InstanceSet::from_ids(
                    n,
                    (0..n).filter(|&a| succ[a].iter().all(|&b| filler.contains(b))),
                )
            }
        })
    }

    fn role_successors(&self, role: &str) -> Result<&[Vec<usize>]> {
        let id = self.kb.role_id(role).ok_or_else(|| Error::UnknownName {
            kind: "role",
            name: role.to_string(),
        })?;
        Ok(&self.successors[id])
    }
}

pub fn retrieve_instances(kb: &KnowledgeBase, expr: &ConceptExpr) -> Result<InstanceSet> {
    Reasoner::new(kb).retrieve(expr)
}

pub fn atomic_extension(kb: &KnowledgeBase, class: &str) -> Result<InstanceSet> {
    Reasoner::new(kb).atomic_extension(class).cloned()
}
