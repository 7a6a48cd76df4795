//! Knowledge bases in a restricted line-based text format.
//!
//! ```text
//! # comment
//! class Atom
//! role inBond
//! type d1 Compound
//! role_assert d1 hasAtom d1_1
//! sub Carbon-17 Carbon
//! ```
//!
//! `type` and `role_assert` declare the names they mention; `role a r b` is
//! accepted as a shorthand for `role_assert a r b`. Names in `sub` axioms must
//! be declared somewhere in the file.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::expr::{is_name_char, parse_with, AnyNames, ConceptExpr, Signature};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Axiom {
    pub sub: ConceptExpr,
    pub sup: ConceptExpr,
}

#[derive(Clone, Debug, Default)]
struct NameIndex {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl NameIndex {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// An ALC knowledge base. Names are indexed in order of first appearance.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    individuals: NameIndex,
    classes: NameIndex,
    roles: NameIndex,
    tbox: Vec<Axiom>,
    abox_types: Vec<(usize, usize)>,
    abox_roles: Vec<(usize, usize, usize)>,
    seen_types: HashSet<(usize, usize)>,
    seen_roles: HashSet<(usize, usize, usize)>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Parses KB text; `origin` only labels error messages.
    pub fn parse_str(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let parse_err = |line: usize, message: String| Error::KbParse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut kb = KnowledgeBase::new();
        let mut pending_axioms: Vec<(usize, &str)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            if keyword == "sub" {
                pending_axioms.push((line_no, line[3..].trim()));
                continue;
            }
            let args: Vec<&str> = parts.collect();
            if let Some(bad) = args.iter().find(|a| !valid_name(a)) {
                return Err(parse_err(line_no, format!("invalid name `{bad}`")));
            }
            match (keyword, args.as_slice()) {
                ("class", [name]) => {
                    kb.declare_class(name);
                }
                ("role", [name]) => {
                    kb.declare_role(name);
                }
                ("type", [ind, class]) => kb.add_type(ind, class),
                ("role_assert" | "role", [a, r, b]) => kb.add_role_assertion(a, r, b),
                ("class" | "role" | "type" | "role_assert", _) => {
                    return Err(parse_err(
                        line_no,
                        format!("wrong number of arguments for `{keyword}`"),
                    ))
                }
                _ => return Err(parse_err(line_no, format!("unknown statement `{keyword}`"))),
            }
        }

        for (line_no, rest) in pending_axioms {
            let (sub, sup) = split_axiom(rest).map_err(|m| parse_err(line_no, m))?;
            kb.add_axiom_text(sub, sup).map_err(|e| match e {
                Error::UnknownName { kind, name } => Error::KbReference {
                    path: origin.to_path_buf(),
                    line: line_no,
                    kind,
                    name,
                },
                other => parse_err(line_no, other.to_string()),
            })?;
        }
        Ok(kb)
    }

    pub fn declare_class(&mut self, name: &str) -> usize {
        self.classes.intern(name)
    }

    pub fn declare_role(&mut self, name: &str) -> usize {
        self.roles.intern(name)
    }

    pub fn declare_individual(&mut self, name: &str) -> usize {
        self.individuals.intern(name)
    }

    pub fn add_type(&mut self, individual: &str, class: &str) {
        let a = self.individuals.intern(individual);
        let c = self.classes.intern(class);
        if self.seen_types.insert((a, c)) {
            self.abox_types.push((a, c));
        }
    }

    pub fn add_role_assertion(&mut self, subject: &str, role: &str, object: &str) {
        let a = self.individuals.intern(subject);
        let r = self.roles.intern(role);
        let b = self.individuals.intern(object);
        if self.seen_roles.insert((a, r, b)) {
            self.abox_roles.push((a, r, b));
        }
    }

    /// Adds `sub ⊑ sup`; every name must already be declared.
    pub fn add_axiom(&mut self, sub: ConceptExpr, sup: ConceptExpr) -> Result<()> {
        for e in [&sub, &sup] {
            for c in e.class_names() {
                if !self.has_class(c) {
                    return Err(Error::UnknownName {
                        kind: "class",
                        name: c.to_string(),
                    });
                }
            }
            for r in e.role_names() {
                if !self.has_role(r) {
                    return Err(Error::UnknownName {
                        kind: "role",
                        name: r.to_string(),
                    });
                }
            }
        }
        self.tbox.push(Axiom { sub, sup });
        Ok(())
    }

    fn add_axiom_text(&mut self, sub: &str, sup: &str) -> Result<()> {
        let sub = parse_with(sub, self)?;
        let sup = parse_with(sup, self)?;
        self.add_axiom(sub, sup)
    }

    pub fn individuals(&self) -> &[String] {
        &self.individuals.names
    }

    pub fn classes(&self) -> &[String] {
        &self.classes.names
    }

    pub fn roles(&self) -> &[String] {
        &self.roles.names
    }

    pub fn tbox(&self) -> &[Axiom] {
        &self.tbox
    }

    /// Class assertions as (individual id, class id).
    pub fn abox_types(&self) -> &[(usize, usize)] {
        &self.abox_types
    }

    /// Role assertions as (subject id, role id, object id).
    pub fn abox_roles(&self) -> &[(usize, usize, usize)] {
        &self.abox_roles
    }

    pub fn individual_id(&self, name: &str) -> Option<usize> {
        self.individuals.get(name)
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.get(name)
    }

    pub fn role_id(&self, name: &str) -> Option<usize> {
        self.roles.get(name)
    }

    pub fn num_individuals(&self) -> usize {
        self.individuals.names.len()
    }

    /// Atomic-to-atomic subclass axioms as (sub class id, super class id).
    pub fn atomic_subclass_pairs(&self) -> Vec<(usize, usize)> {
        self.tbox
            .iter()
            .filter_map(|ax| match (&ax.sub, &ax.sup) {
                (ConceptExpr::Atomic(a), ConceptExpr::Atomic(b)) => {
                    Some((self.classes.get(a)?, self.classes.get(b)?))
                }
                _ => None,
            })
            .collect()
    }

    /// Serializes back to the text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.classes() {
            out.push_str(&format!("class {c}\n"));
        }
        for r in self.roles() {
            out.push_str(&format!("role {r}\n"));
        }
        for &(a, c) in &self.abox_types {
            out.push_str(&format!("type {} {}\n", self.individuals()[a], self.classes()[c]));
        }
        for &(a, r, b) in &self.abox_roles {
            out.push_str(&format!(
                "role_assert {} {} {}\n",
                self.individuals()[a],
                self.roles()[r],
                self.individuals()[b]
            ));
        }
        for ax in &self.tbox {
            out.push_str(&format!("sub {} {}\n", ax.sub, ax.sup));
        }
        out
    }
}

impl Signature for KnowledgeBase {
    fn has_class(&self, name: &str) -> bool {
        self.classes.get(name).is_some()
    }

    fn has_role(&self, name: &str) -> bool {
        self.roles.get(name).is_some()
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_name_char)
}

/// Splits `<expr> <expr>` at the unique whitespace position where both sides
/// parse.
fn split_axiom(rest: &str) -> std::result::Result<(&str, &str), String> {
    let mut found = None;
    for (i, c) in rest.char_indices() {
        if !c.is_whitespace() {
            continue;
        }
        let (l, r) = (rest[..i].trim(), rest[i..].trim());
        if l.is_empty() || r.is_empty() {
            continue;
        }
        if parse_with(l, &AnyNames).is_ok() && parse_with(r, &AnyNames).is_ok() {
            match found {
                Some((fl, _)) if fl == l => {}
                Some(_) => return Err("ambiguous subclass axiom".into()),
                None => found = Some((l, r)),
            }
        }
    }
    found.ok_or_else(|| "expected two class expressions after `sub`".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb(text: &str) -> Result<KnowledgeBase> {
        KnowledgeBase::parse_str(text, "test.kb")
    }

    #[test]
    fn minimal_file() {
        let k = kb("type a A\nrole a r b\n").unwrap();
        assert_eq!(k.individuals(), ["a", "b"]);
        assert_eq!(k.classes(), ["A"]);
        assert_eq!(k.roles(), ["r"]);
        assert_eq!(k.abox_roles(), [(0, 0, 1)]);
    }

    #[test]
    fn empty_file() {
        let k = kb("").unwrap();
        assert!(k.individuals().is_empty() && k.classes().is_empty() && k.roles().is_empty());
    }

    #[test]
    fn first_appearance_order_and_dedup() {
        let k = kb("# header\nclass Z\ntype c B\ntype a A\ntype c B\nrole_assert a r c\n").unwrap();
        assert_eq!(k.individuals(), ["c", "a"]);
        assert_eq!(k.classes(), ["Z", "B", "A"]);
        assert_eq!(k.abox_types().len(), 2);
    }

    #[test]
    fn subclass_axioms() {
        let k = kb("class A\nclass B\nrole r\nsub A B\nsub ∃ r.A ⊓ B ¬A\n").unwrap();
        assert_eq!(k.tbox().len(), 2);
        assert_eq!(k.atomic_subclass_pairs(), vec![(0, 1)]);
        assert_eq!(k.tbox()[1].sup, ConceptExpr::not(ConceptExpr::atomic("A")));
    }

    #[test]
    fn axioms_may_reference_later_declarations() {
        let k = kb("sub A B\nclass A\nclass B\n").unwrap();
        assert_eq!(k.tbox().len(), 1);
    }

    #[test]
    fn errors_name_line_numbers() {
        match kb("class A\n\ntype a\n") {
            Err(Error::KbParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match kb("class A\nfrobnicate x\n") {
            Err(Error::KbParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match kb("class A\nsub A Missing\n") {
            Err(Error::KbReference { line, name, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(name, "Missing");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(kb("type a A!\n"), Err(Error::KbParse { line: 1, .. })));
        assert!(matches!(kb("class A\nsub A\n"), Err(Error::KbParse { line: 2, .. })));
    }

    #[test]
    fn text_round_trip() {
        let k = kb("class A\nclass B\nrole r\ntype x A\nrole_assert x r y\nsub A B\n").unwrap();
        let again = kb(&k.to_text()).unwrap();
        assert_eq!(again.individuals(), k.individuals());
        assert_eq!(again.classes(), k.classes());
        assert_eq!(again.roles(), k.roles());
        assert_eq!(again.tbox(), k.tbox());
        assert_eq!(again.abox_types(), k.abox_types());
        assert_eq!(again.abox_roles(), k.abox_roles());
    }
}
