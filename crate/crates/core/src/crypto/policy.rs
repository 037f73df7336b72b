//! Monotone boolean access formulas.
//!
//! ```text
//! formula := term ('OR' term)*
//! term    := factor ('AND' factor)*
//! factor  := ATTR | '(' formula ')'
//! ATTR    := [A-Za-z0-9_]+
//! ```
//!
//! Parsed formulas are canonical: nested gates of the same kind are
//! flattened, duplicate children removed, and children sorted by their
//! rendered form, so equivalent spellings produce the same share matrix.

use std::collections::BTreeSet;
use std::fmt;

use super::CryptoError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Attr(String),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Attr(String),
    And,
    Or,
    Open,
    Close,
}

fn tokenize(s: &str) -> Result<Vec<Token>, CryptoError> {
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' {
            out.push(Token::Open);
            chars.next();
        } else if c == ')' {
            out.push(Token::Close);
            chars.next();
        } else if c.is_ascii_alphanumeric() || c == '_' {
            let mut word = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    word.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(match word.as_str() {
                "AND" => Token::And,
                "OR" => Token::Or,
                _ => Token::Attr(word),
            });
        } else {
            return Err(CryptoError::MalformedFormula(format!(
                "unexpected character `{c}` at offset {i}"
            )));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn formula(&mut self) -> Result<Formula, CryptoError> {
        let mut terms = vec![self.term()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            terms.push(self.term()?);
        }
        Ok(Formula::gate(false, terms))
    }

    fn term(&mut self) -> Result<Formula, CryptoError> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(Formula::gate(true, factors))
    }

    fn factor(&mut self) -> Result<Formula, CryptoError> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Attr(a)) => {
                self.pos += 1;
                Ok(Formula::Attr(a))
            }
            Some(Token::Open) => {
                self.pos += 1;
                let f = self.formula()?;
                if self.peek() != Some(&Token::Close) {
                    return Err(CryptoError::MalformedFormula(
                        "unbalanced parenthesis".into(),
                    ));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(t) => Err(CryptoError::MalformedFormula(format!(
                "unexpected token {t:?}"
            ))),
            None => Err(CryptoError::MalformedFormula(
                "unexpected end of formula".into(),
            )),
        }
    }
}

impl Formula {
    pub fn parse(s: &str) -> Result<Self, CryptoError> {
        let tokens = tokenize(s)?;
        if tokens.is_empty() {
            return Err(CryptoError::MalformedFormula("empty formula".into()));
        }
        let mut p = Parser { tokens, pos: 0 };
        let f = p.formula()?;
        if p.pos != p.tokens.len() {
            return Err(CryptoError::MalformedFormula(format!(
                "trailing tokens starting at {:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(f)
    }

    /// Builds a canonical AND (`is_and`) or OR gate.
    fn gate(is_and: bool, children: Vec<Formula>) -> Formula {
        let mut flat = BTreeSet::new();
        for c in children {
            match c {
                Formula::And(inner) if is_and => flat.extend(inner),
                Formula::Or(inner) if !is_and => flat.extend(inner),
                other => {
                    flat.insert(other);
                }
            }
        }
        let mut v: Vec<Formula> = flat.into_iter().collect();
        v.sort_by_cached_key(|f| f.to_string());
        if v.len() == 1 {
            v.pop().unwrap()
        } else if is_and {
            Formula::And(v)
        } else {
            Formula::Or(v)
        }
    }

    pub fn evaluate(&self, attrs: &BTreeSet<String>) -> bool {
        match self {
            Formula::Attr(a) => attrs.contains(a),
            Formula::And(cs) => cs.iter().all(|c| c.evaluate(attrs)),
            Formula::Or(cs) => cs.iter().any(|c| c.evaluate(attrs)),
        }
    }

    /// Distinct attributes mentioned by the formula.
    pub fn attributes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_leaves(&mut |a| {
            out.insert(a.to_string());
        });
        out
    }

    /// Leaf attributes in left-to-right order; one per share-matrix row.
    pub fn leaves(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |a| out.push(a.to_string()));
        out
    }

    fn visit_leaves(&self, f: &mut impl FnMut(&str)) {
        match self {
            Formula::Attr(a) => f(a),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.visit_leaves(f)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Formula::Attr(_) => 1,
            Formula::And(cs) | Formula::Or(cs) => cs.iter().map(Formula::leaf_count).sum(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(c: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match c {
                Formula::Attr(a) => f.write_str(a),
                _ => write!(f, "({c})"),
            }
        }
        match self {
            Formula::Attr(a) => f.write_str(a),
            Formula::And(cs) | Formula::Or(cs) => {
                let op = if matches!(self, Formula::And(_)) {
                    " AND "
                } else {
                    " OR "
                };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    child(c, f)?;
                }
                Ok(())
            }
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Formula::parse(s)
    }
}
