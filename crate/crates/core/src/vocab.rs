//! The synthesis vocabulary: class names, role names, then the syntactic atoms.
//! Token id `len()` is reserved for padding.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::{ConceptExpr, Signature, SPECIAL_ATOMS};
use crate::kb::KnowledgeBase;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    atoms: Vec<String>,
    index: HashMap<String, usize>,
    num_classes: usize,
    num_roles: usize,
}

impl Vocabulary {
    pub fn from_kb(kb: &KnowledgeBase) -> Result<Self> {
        Self::new(kb.classes(), kb.roles())
    }

    pub fn new(classes: &[String], roles: &[String]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(classes.len() + roles.len() + SPECIAL_ATOMS.len());
        let mut index = HashMap::new();
        let names = classes.iter().map(String::as_str).chain(roles.iter().map(String::as_str));
        for atom in names.chain(SPECIAL_ATOMS) {
            if index.insert(atom.to_string(), atoms.len()).is_some() {
                return Err(Error::DuplicateAtom(atom.to_string()));
            }
            atoms.push(atom.to_string());
        }
        Ok(Vocabulary {
            atoms,
            index,
            num_classes: classes.len(),
            num_roles: roles.len(),
        })
    }

    /// Number of atoms, i.e. `|classes| + |roles| + 11`.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Size of the token id space, atoms plus PAD.
    pub fn num_tokens(&self) -> usize {
        self.atoms.len() + 1
    }

    pub fn pad_id(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn atom(&self, id: usize) -> Option<&str> {
        self.atoms.get(id).map(String::as_str)
    }

    pub fn id(&self, atom: &str) -> Option<usize> {
        self.index.get(atom).copied()
    }

    /// Hex SHA-256 of the atom list, used to tie checkpoints to a vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for atom in &self.atoms {
            hasher.update(atom.as_bytes());
            hasher.update([0u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Token ids of the canonical rendering of `expr`.
    pub fn tokenize(&self, expr: &ConceptExpr) -> Result<Vec<usize>> {
        expr.atoms()
            .into_iter()
            .map(|a| self.id(a).ok_or_else(|| Error::MissingAtom(a.to_string())))
            .collect()
    }

    /// Tokens padded (or rejected) to exactly `length` positions.
    pub fn tokenize_padded(&self, expr: &ConceptExpr, length: usize) -> Result<Vec<usize>> {
        let mut ids = self.tokenize(expr)?;
        if ids.len() > length {
            return Err(Error::InvalidArgument(format!(
                "expression `{expr}` has {} tokens, more than the output length {length}",
                ids.len()
            )));
        }
        ids.resize(length, self.pad_id());
        Ok(ids)
    }

    /// Joins atoms; PAD and out-of-range ids are skipped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.atom(i)).collect()
    }
}

impl Signature for Vocabulary {
    fn has_class(&self, name: &str) -> bool {
        self.id(name).is_some_and(|i| i < self.num_classes)
    }

    fn has_role(&self, name: &str) -> bool {
        self.id(name)
            .is_some_and(|i| i >= self.num_classes && i < self.num_classes + self.num_roles)
    }
}
