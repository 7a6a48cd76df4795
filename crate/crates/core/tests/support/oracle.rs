//! Random small knowledge bases and expressions, and a naive evaluator that
//! checks one individual at a time straight from the assertions.

use nces_core::{ConceptExpr, KnowledgeBase};
use rand::Rng;

pub fn random_kb(rng: &mut impl Rng) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    let individuals = rng.gen_range(1..=12);
    let classes = rng.gen_range(1..=4);
    let roles = rng.gen_range(0..=2);
    for c in 0..classes {
        kb.declare_class(&format!("A{c}"));
    }
    for r in 0..roles {
        kb.declare_role(&format!("r{r}"));
    }
    for i in 0..individuals {
        kb.declare_individual(&format!("x{i}"));
    }
    for i in 0..individuals {
        for c in 0..classes {
            if rng.gen_bool(0.35) {
                kb.add_type(&format!("x{i}"), &format!("A{c}"));
            }
        }
        for r in 0..roles {
            for j in 0..individuals {
                if rng.gen_bool(0.2) {
                    kb.add_role_assertion(&format!("x{i}"), &format!("r{r}"), &format!("x{j}"));
                }
            }
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(0..classes), rng.gen_range(0..classes));
        if a != b {
            kb.add_axiom(
                ConceptExpr::atomic(format!("A{a}")),
                ConceptExpr::atomic(format!("A{b}")),
            )
            .unwrap();
        }
    }
    kb
}

fn random_node(rng: &mut impl Rng, kb: &KnowledgeBase, depth: usize) -> ConceptExpr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..10) {
            0 => ConceptExpr::Top,
            1 => ConceptExpr::Bottom,
            _ => ConceptExpr::atomic(kb.classes()[rng.gen_range(0..kb.classes().len())].as_str()),
        };
    }
    let roles = kb.roles();
    let kinds = if roles.is_empty() { 3 } else { 5 };
    match rng.gen_range(0..kinds) {
        0 => ConceptExpr::not(random_node(rng, kb, depth - 1)),
        1 => ConceptExpr::and(random_node(rng, kb, depth - 1), random_node(rng, kb, depth - 1)),
        2 => ConceptExpr::or(random_node(rng, kb, depth - 1), random_node(rng, kb, depth - 1)),
        3 => ConceptExpr::exists(roles[rng.gen_range(0..roles.len())].as_str(), random_node(rng, kb, depth - 1)),
        _ => ConceptExpr::forall(roles[rng.gen_range(0..roles.len())].as_str(), random_node(rng, kb, depth - 1)),
    }
}

/// A random expression over the KB's names with at most `max_tokens` tokens.
pub fn random_expr(rng: &mut impl Rng, kb: &KnowledgeBase, max_tokens: usize) -> ConceptExpr {
    loop {
        let e = random_node(rng, kb, 4);
        if e.token_len() <= max_tokens {
            return e;
        }
    }
}

fn is_instance_of_class(kb: &KnowledgeBase, individual: &str, class: &str) -> bool {
    // Classes the individual is asserted to, closed upward under atomic axioms.
    let mut reached: Vec<&str> = kb
        .abox_types()
        .iter()
        .filter(|&&(a, _)| kb.individuals()[a] == individual)
        .map(|&(_, c)| kb.classes()[c].as_str())
        .collect();
    let pairs = kb.atomic_subclass_pairs();
    let mut i = 0;
    while i < reached.len() {
        let current = reached[i];
        for &(sub, sup) in &pairs {
            let (sub, sup) = (kb.classes()[sub].as_str(), kb.classes()[sup].as_str());
            if sub == current && !reached.contains(&sup) {
                reached.push(sup);
            }
        }
        i += 1;
    }
    reached.contains(&class)
}

fn successors<'a>(kb: &'a KnowledgeBase, individual: &str, role: &str) -> Vec<&'a str> {
    kb.abox_roles()
        .iter()
        .filter(|&&(a, r, _)| kb.individuals()[a] == individual && kb.roles()[r] == role)
        .map(|&(_, _, b)| kb.individuals()[b].as_str())
        .collect()
}

pub fn holds(kb: &KnowledgeBase, individual: &str, expr: &ConceptExpr) -> bool {
    match expr {
        ConceptExpr::Top => true,
        ConceptExpr::Bottom => false,
        ConceptExpr::Atomic(c) => is_instance_of_class(kb, individual, c),
        ConceptExpr::Not(c) => !holds(kb, individual, c),
        ConceptExpr::And(l, r) => holds(kb, individual, l) && holds(kb, individual, r),
        ConceptExpr::Or(l, r) => holds(kb, individual, l) || holds(kb, individual, r),
        ConceptExpr::Exists(role, c) => successors(kb, individual, role).iter().any(|b| holds(kb, b, c)),
        ConceptExpr::Forall(role, c) => successors(kb, individual, role).iter().all(|b| holds(kb, b, c)),
    }
}

/// Membership of every individual, in individual order.
pub fn naive_members(kb: &KnowledgeBase, expr: &ConceptExpr) -> Vec<bool> {
    kb.individuals().iter().map(|a| holds(kb, a, expr)).collect()
}
