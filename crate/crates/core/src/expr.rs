//! ALC class expressions: syntax tree, canonical rendering and parsing.
//!
//! Canonical rendering puts one space around `⊓` and `⊔`, one space between a
//! quantifier and its role, and no other spaces. Parentheses appear only where
//! precedence requires them (`¬`/`∃`/`∀` bind tightest, then `⊓`, then `⊔`;
//! binary operators associate to the left).

use std::fmt;

use crate::error::{Error, Result};

pub const SPACE: &str = " ";
pub const DOT: &str = ".";
pub const OR: &str = "⊔";
pub const AND: &str = "⊓";
pub const EXISTS: &str = "∃";
pub const FORALL: &str = "∀";
pub const NOT: &str = "¬";
pub const LPAREN: &str = "(";
pub const RPAREN: &str = ")";
pub const TOP: &str = "⊤";
pub const BOTTOM: &str = "⊥";

/// The syntactic atoms, in vocabulary order.
pub const SPECIAL_ATOMS: [&str; 11] = [
    SPACE, DOT, OR, AND, EXISTS, FORALL, NOT, LPAREN, RPAREN, TOP, BOTTOM,
];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ConceptExpr {
    Top,
    Bottom,
    Atomic(String),
    Not(Box<ConceptExpr>),
    And(Box<ConceptExpr>, Box<ConceptExpr>),
    Or(Box<ConceptExpr>, Box<ConceptExpr>),
    Exists(String, Box<ConceptExpr>),
    Forall(String, Box<ConceptExpr>),
}

impl ConceptExpr {
    pub fn atomic(name: impl Into<String>) -> Self {
        ConceptExpr::Atomic(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(child: ConceptExpr) -> Self {
        ConceptExpr::Not(Box::new(child))
    }

    pub fn and(left: ConceptExpr, right: ConceptExpr) -> Self {
        ConceptExpr::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: ConceptExpr, right: ConceptExpr) -> Self {
        ConceptExpr::Or(Box::new(left), Box::new(right))
    }

    pub fn exists(role: impl Into<String>, child: ConceptExpr) -> Self {
        ConceptExpr::Exists(role.into(), Box::new(child))
    }

    pub fn forall(role: impl Into<String>, child: ConceptExpr) -> Self {
        ConceptExpr::Forall(role.into(), Box::new(child))
    }

    fn precedence(&self) -> u8 {
        match self {
            ConceptExpr::Or(..) => 1,
            ConceptExpr::And(..) => 2,
            _ => 3,
        }
    }

    /// The canonical rendering split into atoms, in order of appearance.
    pub fn atoms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.push_atoms(&mut out);
        out
    }

    /// Number of atoms in the canonical rendering, spaces included.
    pub fn token_len(&self) -> usize {
        self.atoms().len()
    }

    pub fn render(&self) -> String {
        self.atoms().concat()
    }

    fn push_atoms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConceptExpr::Top => out.push(TOP),
            ConceptExpr::Bottom => out.push(BOTTOM),
            ConceptExpr::Atomic(name) => out.push(name),
            ConceptExpr::Not(child) => {
                out.push(NOT);
                child.push_operand(3, out);
            }
            ConceptExpr::And(l, r) | ConceptExpr::Or(l, r) => {
                let (op, level) = if matches!(self, ConceptExpr::And(..)) {
                    (AND, 2)
                } else {
                    (OR, 1)
                };
                l.push_operand(level, out);
                out.extend([SPACE, op, SPACE]);
                // Right operands at the same level need parentheses to keep
                // left associativity on re-parse.
                r.push_operand(level + 1, out);
            }
            ConceptExpr::Exists(role, child) | ConceptExpr::Forall(role, child) => {
                let q = if matches!(self, ConceptExpr::Exists(..)) {
                    EXISTS
                } else {
                    FORALL
                };
                out.extend([q, SPACE, role.as_str(), DOT]);
                child.push_operand(3, out);
            }
        }
    }

    fn push_operand<'a>(&'a self, min_precedence: u8, out: &mut Vec<&'a str>) {
        if self.precedence() < min_precedence {
            out.push(LPAREN);
            self.push_atoms(out);
            out.push(RPAREN);
        } else {
            self.push_atoms(out);
        }
    }

    /// Atomic class names used anywhere in the expression.
    pub fn class_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let ConceptExpr::Atomic(name) = e {
                out.push(name.as_str());
            }
        });
        out
    }

    /// Role names used anywhere in the expression.
    pub fn role_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| match e {
            ConceptExpr::Exists(role, _) | ConceptExpr::Forall(role, _) => out.push(role.as_str()),
            _ => {}
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a ConceptExpr)) {
        f(self);
        match self {
            ConceptExpr::Top | ConceptExpr::Bottom | ConceptExpr::Atomic(_) => {}
            ConceptExpr::Not(c) | ConceptExpr::Exists(_, c) | ConceptExpr::Forall(_, c) => {
                c.visit(f)
            }
            ConceptExpr::And(l, r) | ConceptExpr::Or(l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }
}

impl fmt::Display for ConceptExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for atom in self.atoms() {
            f.write_str(atom)?;
        }
        Ok(())
    }
}

/// Name lookup used by the parser to validate atomic classes and roles.
pub trait Signature {
    fn has_class(&self, name: &str) -> bool;
    fn has_role(&self, name: &str) -> bool;
}

/// Accepts every syntactically valid name.
pub struct AnyNames;

impl Signature for AnyNames {
    fn has_class(&self, _: &str) -> bool {
        true
    }
    fn has_role(&self, _: &str) -> bool {
        true
    }
}

pub fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

#[derive(Clone, Debug, PartialEq)]
enum Token<'a> {
    Name(&'a str),
    Or,
    And,
    Not,
    Exists,
    Forall,
    Dot,
    LParen,
    RParen,
    Top,
    Bottom,
}

fn lex(text: &str) -> Result<Vec<(usize, Token<'_>)>> {
    let mut tokens = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some(&(pos, c)) = iter.peek() {
        if c.is_whitespace() {
            iter.next();
            continue;
        }
        if is_name_char(c) {
            let mut end = pos;
            while let Some(&(p, c)) = iter.peek() {
                if !is_name_char(c) {
                    break;
                }
                end = p + c.len_utf8();
                iter.next();
            }
            tokens.push((pos, Token::Name(&text[pos..end])));
            continue;
        }
        let tok = match c {
            '⊔' => Token::Or,
            '⊓' => Token::And,
            '¬' => Token::Not,
            '∃' => Token::Exists,
            '∀' => Token::Forall,
            '.' => Token::Dot,
            '(' => Token::LParen,
            ')' => Token::RParen,
            '⊤' => Token::Top,
            '⊥' => Token::Bottom,
            other => {
                return Err(Error::Syntax {
                    offset: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        tokens.push((pos, tok));
        iter.next();
    }
    Ok(tokens)
}

struct Parser<'a, 's> {
    tokens: Vec<(usize, Token<'a>)>,
    pos: usize,
    end: usize,
    names: &'s dyn Signature,
}

impl<'a> Parser<'a, '_> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn disjunction(&mut self) -> Result<ConceptExpr> {
        let mut left = self.conjunction()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let right = self.conjunction()?;
            left = ConceptExpr::or(left, right);
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<ConceptExpr> {
        let mut left = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let right = self.unary()?;
            left = ConceptExpr::and(left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<ConceptExpr> {
        let Some(tok) = self.peek().cloned() else {
            return self.err("expected operand, found end of input");
        };
        match tok {
            Token::Top => {
                self.pos += 1;
                Ok(ConceptExpr::Top)
            }
            Token::Bottom => {
                self.pos += 1;
                Ok(ConceptExpr::Bottom)
            }
            Token::Name(name) => {
                if !self.names.has_class(name) {
                    return Err(Error::UnknownName {
                        kind: "class",
                        name: name.to_string(),
                    });
                }
                self.pos += 1;
                Ok(ConceptExpr::atomic(name))
            }
            Token::Not => {
                self.pos += 1;
                Ok(ConceptExpr::not(self.unary()?))
            }
            Token::Exists | Token::Forall => {
                self.pos += 1;
                let role = match self.peek() {
                    Some(Token::Name(role)) => *role,
                    _ => return self.err("expected role name after quantifier"),
                };
                if !self.names.has_role(role) {
                    return Err(Error::UnknownName {
                        kind: "role",
                        name: role.to_string(),
                    });
                }
                self.pos += 1;
                if self.peek() != Some(&Token::Dot) {
                    return self.err("expected `.` after role name");
                }
                self.pos += 1;
                let child = self.unary()?;
                Ok(if tok == Token::Exists {
                    ConceptExpr::exists(role, child)
                } else {
                    ConceptExpr::forall(role, child)
                })
            }
            Token::LParen => {
                self.pos += 1;
                let inner = self.disjunction()?;
                if self.peek() != Some(&Token::RParen) {
                    return self.err("unbalanced parentheses: expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Token::RParen => self.err("unbalanced parentheses: unexpected `)`"),
            Token::Or | Token::And | Token::Dot => self.err("expected operand"),
        }
    }
}

/// Parses `text`, checking every name against `names`.
pub fn parse_with(text: &str, names: &dyn Signature) -> Result<ConceptExpr> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        names,
    };
    let expr = parser.disjunction()?;
    if parser.pos != parser.tokens.len() {
        return match parser.peek() {
            Some(Token::RParen) => parser.err("unbalanced parentheses: unexpected `)`"),
            _ => parser.err("trailing input after expression"),
        };
    }
    Ok(expr)
}
