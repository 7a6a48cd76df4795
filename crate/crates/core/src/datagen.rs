//! Learning-problem generation: candidate expressions, redundancy filtering,
//! example sampling and train/test splitting.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{parse_with, ConceptExpr, Signature};
use crate::kb::KnowledgeBase;
use crate::reasoner::{InstanceSet, Reasoner};

/// Positive and negative example individuals, with the generating expression
/// when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearningProblem {
    pub target: Option<ConceptExpr>,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

/// Default total example count per problem: `min(|individuals| / 2, 1000)`.
pub fn default_example_count(num_individuals: usize) -> usize {
    (num_individuals / 2).min(1000)
}

/// Generates up to `budget` distinct expressions of at most `max_len` tokens,
/// each with an instance set that is neither empty nor the whole domain.
///
/// Atomic classes and their negations come first; the rest are built by
/// repeatedly combining earlier expressions with `⊓`/`⊔` or wrapping them in
/// `∃ r.`/`∀ r.`, each construction chosen uniformly.
pub fn generate_expressions(
    kb: &KnowledgeBase,
    max_len: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<ConceptExpr>> {
    if max_len == 0 || budget == 0 {
        return Err(Error::InvalidArgument(
            "max_len and budget must be at least 1".into(),
        ));
    }
    if kb.classes().is_empty() {
        return Err(Error::Data("knowledge base has no classes to generate from".into()));
    }
    let reasoner = Reasoner::new(kb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut accepted: Vec<ConceptExpr> = Vec::new();
    // Building blocks include degenerate atoms: `∃ r.A` can be informative even
    // when `A` covers everything.
    let mut pool: Vec<ConceptExpr> = Vec::new();

    let mut admit = |e: ConceptExpr,
                     pool: &mut Vec<ConceptExpr>,
                     accepted: &mut Vec<ConceptExpr>,
                     force_pool: bool|
     -> Result<()> {
        if e.token_len() > max_len || !seen.insert(e.render()) {
            return Ok(());
        }
        let set = reasoner.retrieve(&e)?;
        let informative = !set.is_empty() && !set.is_full();
        if informative || force_pool {
            pool.push(e.clone());
        }
        if informative {
            accepted.push(e);
        }
        Ok(())
    };

    for class in kb.classes() {
        admit(ConceptExpr::atomic(class.as_str()), &mut pool, &mut accepted, true)?;
    }
    for class in kb.classes() {
        admit(
            ConceptExpr::not(ConceptExpr::atomic(class.as_str())),
            &mut pool,
            &mut accepted,
            true,
        )?;
    }

    let roles = kb.roles();
    let constructions = if roles.is_empty() { 2 } else { 4 };
    let max_attempts = budget.saturating_mul(50);
    let mut attempts = 0;
    while accepted.len() < budget && attempts < max_attempts && !pool.is_empty() {
        attempts += 1;
        let first = pool[rng.gen_range(0..pool.len())].clone();
        let candidate = match rng.gen_range(0..constructions) {
            0 => ConceptExpr::and(first, pool[rng.gen_range(0..pool.len())].clone()),
            1 => ConceptExpr::or(first, pool[rng.gen_range(0..pool.len())].clone()),
            2 => ConceptExpr::exists(roles[rng.gen_range(0..roles.len())].as_str(), first),
            _ => ConceptExpr::forall(roles[rng.gen_range(0..roles.len())].as_str(), first),
        };
        admit(candidate, &mut pool, &mut accepted, false)?;
    }
    accepted.truncate(budget);
    Ok(accepted)
}

/// Keeps one expression per distinct instance set: the one with the fewest
/// tokens, ties broken by the lexicographically smallest rendering. Groups
/// are emitted in order of their first occurrence.
pub fn filter_redundant(kb: &KnowledgeBase, exprs: &[ConceptExpr]) -> Result<Vec<ConceptExpr>> {
    let reasoner = Reasoner::new(kb);
    let mut groups: HashMap<InstanceSet, usize> = HashMap::new();
    let mut best: Vec<(usize, String, &ConceptExpr)> = Vec::new();
    for e in exprs {
        let set = reasoner.retrieve(e)?;
        let key = (e.token_len(), e.render());
        match groups.get(&set) {
            Some(&slot) => {
                let cur = &best[slot];
                if (key.0, &key.1) < (cur.0, &cur.1) {
                    best[slot] = (key.0, key.1, e);
                }
            }
            None => {
                groups.insert(set, best.len());
                best.push((key.0, key.1, e));
            }
        }
    }
    Ok(best.into_iter().map(|(_, _, e)| e.clone()).collect())
}

/// Splits a budget of `n` examples between positives and negatives: half each,
/// with the shortfall of a scarce side given to the other.
pub fn example_split(n: usize, pos_available: usize, neg_available: usize) -> (usize, usize) {
    let half = n / 2;
    let (mut n1, mut n2) = (half, n - half);
    if pos_available < n1 {
        n1 = pos_available;
        n2 = (n - n1).min(neg_available);
    } else if neg_available < n2 {
        n2 = neg_available;
        n1 = (n - n2).min(pos_available);
    }
    (n1, n2)
}

/// Samples examples for each expression: positives from its instance set and
/// negatives from the complement, without replacement.
pub fn make_learning_problems(
    kb: &KnowledgeBase,
    exprs: &[ConceptExpr],
    n: usize,
    seed: u64,
) -> Result<Vec<LearningProblem>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "example count must be at least 2, got {n}"
        )));
    }
    let reasoner = Reasoner::new(kb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = kb.individuals();
    let mut problems = Vec::with_capacity(exprs.len());
    for e in exprs {
        let set = reasoner.retrieve(e)?;
        let pos_pool: Vec<usize> = set.iter().collect();
        let neg_pool: Vec<usize> = set.complement().iter().collect();
        if pos_pool.is_empty() || neg_pool.is_empty() {
            warn!("skipping `{e}`: no positive or no negative examples");
            continue;
        }
        let (n1, n2) = example_split(n, pos_pool.len(), neg_pool.len());
        let mut sample = |pool: &[usize], k: usize| -> Vec<String> {
            index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|i| names[pool[i]].clone())
                .collect()
        };
        let positives = sample(&pos_pool, n1);
        let negatives = sample(&neg_pool, n2);
        problems.push(LearningProblem {
            target: Some(e.clone()),
            positives,
            negatives,
        });
    }
    Ok(problems)
}

/// Random split with `|test| = round((1 - ratio) * len)`. Both parts keep
/// the input order.
pub fn split_train_test<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    if items.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 problems to split, got {}",
            items.len()
        )));
    }
    let test_len = ((1.0 - ratio) * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; items.len()];
    for &i in &order[..test_len] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, t) in items.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

/// One dataset line: `target<TAB>pos:a,b<TAB>neg:c,d`. The target field is
/// empty for problems without a known target.
pub fn format_problem(p: &LearningProblem) -> String {
    let mut line = String::new();
    if let Some(t) = &p.target {
        let _ = write!(line, "{t}");
    }
    let _ = write!(
        line,
        "\tpos:{}\tneg:{}",
        p.positives.join(","),
        p.negatives.join(",")
    );
    line
}

pub fn parse_problem(line: &str, names: &dyn Signature) -> Result<LearningProblem> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [target, pos, neg] = fields.as_slice() else {
        return Err(Error::Data(format!(
            "expected 3 tab-separated fields, found {}",
            fields.len()
        )));
    };
    let list = |field: &str, prefix: &str| -> Result<Vec<String>> {
        let body = field
            .strip_prefix(prefix)
            .ok_or_else(|| Error::Data(format!("field `{field}` lacks prefix `{prefix}`")))?;
        Ok(body
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect())
    };
    let target = if target.trim().is_empty() {
        None
    } else {
        Some(parse_with(target, names)?)
    };
    Ok(LearningProblem {
        target,
        positives: list(pos, "pos:")?,
        negatives: list(neg, "neg:")?,
    })
}

pub fn write_dataset(path: impl AsRef<Path>, problems: &[LearningProblem]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in problems {
        text.push_str(&format_problem(p));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>, names: &dyn Signature) -> Result<Vec<LearningProblem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_problem(l, names).map_err(|e| {
                Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// A random typed KB for experiments and tests: classes `C0..`, roles `r0..`,
/// individuals `i0..`. The first `ceil(classes / 2)` classes are disjoint
/// kinds and each remaining class `Ck` is a subclass of kind `k mod kinds`.
/// Every individual belongs to one kind and, with probability 0.5, to each
/// subclass of it. Role `rj` links an individual of kind `k` to zero to three
/// individuals of kind `(k + j + 1) mod kinds`.
pub fn synthetic_kb(num_individuals: usize, num_classes: usize, num_roles: usize, seed: u64) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kb = KnowledgeBase::new();
    let classes: Vec<String> = (0..num_classes).map(|i| format!("C{i}")).collect();
    let roles: Vec<String> = (0..num_roles).map(|i| format!("r{i}")).collect();
    let inds: Vec<String> = (0..num_individuals).map(|i| format!("i{i}")).collect();
    for c in &classes {
        kb.declare_class(c);
    }
    for r in &roles {
        kb.declare_role(r);
    }
    for a in &inds {
        kb.declare_individual(a);
    }
    let kinds = num_classes.div_ceil(2);
    for sub in kinds..num_classes {
        kb.add_axiom(
            ConceptExpr::atomic(classes[sub].as_str()),
            ConceptExpr::atomic(classes[sub % kinds].as_str()),
        )
        .expect("declared classes");
    }
    let kind_of: Vec<usize> = inds.iter().map(|_| if kinds == 0 { 0 } else { rng.gen_range(0..kinds) }).collect();
    if kinds > 0 {
        for (a, &k) in inds.iter().zip(&kind_of) {
            kb.add_type(a, &classes[k]);
            for sub in (kinds..num_classes).filter(|s| s % kinds == k) {
                if rng.gen_bool(0.5) {
                    kb.add_type(a, &classes[sub]);
                }
            }
        }
    }
    for (a, &k) in inds.iter().zip(&kind_of) {
        for (j, r) in roles.iter().enumerate() {
            let target = if kinds == 0 { 0 } else { (k + j + 1) % kinds };
            let candidates: Vec<&String> = inds.iter().zip(&kind_of).filter(|&(_, &t)| t == target).map(|(b, _)| b).collect();
            if candidates.is_empty() {
                continue;
            }
            for _ in 0..rng.gen_range(0..=3) {
                kb.add_role_assertion(a, r, candidates[rng.gen_range(0..candidates.len())]);
            }
        }
    }
    kb
}
