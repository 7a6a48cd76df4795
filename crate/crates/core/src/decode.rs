//! Decoding score tensors into expressions, ensembling, and quality metrics.

use std::collections::HashSet;
use std::hash::Hash;

use crate::datagen::LearningProblem;
use crate::error::{Error, Result};
use crate::expr::{parse_with, ConceptExpr};
use crate::kb::KnowledgeBase;
use crate::reasoner::Reasoner;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

/// Class scores of one problem as a `C × L` matrix, tagged with the
/// fingerprint of the vocabulary that indexes its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    pub scores: Tensor,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    /// Argmax ids up to, not including, the first PAD.
    pub token_ids: Vec<usize>,
    pub text: String,
    pub expression: Option<ConceptExpr>,
}

impl SynthesisResult {
    pub fn parse_ok(&self) -> bool {
        self.expression.is_some()
    }
}

/// Per-position argmax ids of a `C × L` matrix; ties go to the smaller id.
pub fn argmax_ids(scores: &Tensor) -> Vec<usize> {
    (0..scores.cols())
        .map(|j| {
            let mut best = 0;
            for c in 1..scores.rows() {
                if scores.get(c, j) > scores.get(best, j) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Greedy decode: argmax per position, cut at the first PAD, join atoms and
/// try to parse. Ungrammatical output is a result, not an error.
pub fn decode(scores: &Tensor, vocab: &Vocabulary) -> Result<SynthesisResult> {
    if scores.rows() != vocab.num_tokens() {
        return Err(Error::shape("decode", &scores.shape(), &[vocab.num_tokens()]));
    }
    let token_ids: Vec<usize> = argmax_ids(scores)
        .into_iter()
        .take_while(|&id| id != vocab.pad_id())
        .collect();
    let text = vocab.detokenize(&token_ids);
    let expression = parse_with(&text, vocab).ok();
    Ok(SynthesisResult {
        token_ids,
        text,
        expression,
    })
}

/// Element-wise mean of at least two score tensors of one vocabulary.
pub fn ensemble(members: &[ScoreTensor]) -> Result<ScoreTensor> {
    if members.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least 2 members, got {}",
            members.len()
        )));
    }
    let first = &members[0];
    let mut sum = Tensor::zeros(first.scores.rows(), first.scores.cols());
    for m in members {
        if m.scores.shape() != first.scores.shape() {
            return Err(Error::shape("ensemble", &first.scores.shape(), &m.scores.shape()));
        }
        if m.fingerprint != first.fingerprint {
            return Err(Error::Data(format!(
                "ensemble members use different vocabularies ({} vs {})",
                first.fingerprint, m.fingerprint
            )));
        }
        for (s, x) in sum.data_mut().iter_mut().zip(m.scores.data()) {
            *s += x;
        }
    }
    let k = members.len() as f64;
    sum.data_mut().iter_mut().for_each(|s| *s /= k);
    Ok(ScoreTensor {
        scores: sum,
        fingerprint: first.fingerprint.clone(),
    })
}

/// `|T ∩ P| / |T ∪ P|` over the sets of atoms; 1 when both are empty.
pub fn soft_accuracy_tokens<T: Eq + Hash>(target: &[T], predicted: &[T]) -> f64 {
    let t: HashSet<&T> = target.iter().collect();
    let p: HashSet<&T> = predicted.iter().collect();
    let union = t.union(&p).count();
    if union == 0 {
        return 1.0;
    }
    t.intersection(&p).count() as f64 / union as f64
}

/// Position-wise matches over `max(l1, l2)`; 1 when both are empty.
pub fn hard_accuracy_tokens<T: Eq>(target: &[T], predicted: &[T]) -> f64 {
    let longest = target.len().max(predicted.len());
    if longest == 0 {
        return 1.0;
    }
    let hits = target.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / longest as f64
}

pub fn soft_accuracy(target: &ConceptExpr, predicted: &ConceptExpr) -> f64 {
    soft_accuracy_tokens(&target.atoms(), &predicted.atoms())
}

pub fn hard_accuracy(target: &ConceptExpr, predicted: &ConceptExpr) -> f64 {
    hard_accuracy_tokens(&target.atoms(), &predicted.atoms())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub f1: f64,
    pub accuracy: f64,
    /// False when there was no parsable prediction; both scores are then 0.
    pub parse_ok: bool,
}

/// F1 and accuracy of a prediction against the problem's examples.
pub fn semantic_quality(
    reasoner: &Reasoner,
    problem: &LearningProblem,
    predicted: Option<&ConceptExpr>,
) -> Result<Quality> {
    if problem.positives.is_empty() && problem.negatives.is_empty() {
        return Err(Error::Data("learning problem has no examples".into()));
    }
    let Some(expr) = predicted else {
        return Ok(Quality {
            f1: 0.0,
            accuracy: 0.0,
            parse_ok: false,
        });
    };
    let retrieved = match reasoner.retrieve(expr) {
        Ok(r) => r,
        Err(Error::UnknownName { .. }) => {
            return Ok(Quality {
                f1: 0.0,
                accuracy: 0.0,
                parse_ok: false,
            })
        }
        Err(e) => return Err(e),
    };
    let kb = reasoner.kb();
    let member = |name: &String| -> Result<bool> {
        let id = kb.individual_id(name).ok_or_else(|| Error::UnknownName {
            kind: "individual",
            name: name.clone(),
        })?;
        Ok(retrieved.contains(id))
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    for p in &problem.positives {
        tp += usize::from(member(p)?);
    }
    for n in &problem.negatives {
        fp += usize::from(member(n)?);
    }
    let fn_ = problem.positives.len() - tp;
    let tn = problem.negatives.len() - fp;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    let accuracy = (tp + tn) as f64 / (problem.positives.len() + problem.negatives.len()) as f64;
    Ok(Quality {
        f1,
        accuracy,
        parse_ok: true,
    })
}

/// Convenience wrapper that builds a reasoner for a single evaluation.
pub fn semantic_quality_in(kb: &KnowledgeBase, problem: &LearningProblem, predicted: Option<&ConceptExpr>) -> Result<Quality> {
    semantic_quality(&Reasoner::new(kb), problem, predicted)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
