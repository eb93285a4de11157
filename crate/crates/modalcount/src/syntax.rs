//! Formula AST, parser, printer, and structural measures.
//!
//! The core language has five constructors: atoms `P(x)`, negation,
//! conjunction, the diamond, and the counting quantifier `E[<=c] x` ("at most
//! c objects satisfy the body"). Everything else in the surface grammar
//! (`|`, `->`, `<->`, `[]`, `E x`, `A x`, `E[>=c] x`, `E[=c] x`) is desugared
//! by the parser, so downstream code only ever sees the five core forms.

use num_bigint::BigUint;
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// A formula of the one-variable counting language, in desugared core form.
///
/// The single object variable `x` is implicit: an atom stores only its
/// predicate name, and `CountLeq(c, body)` reads "at most `c` objects of the
/// current world's domain satisfy `body`".
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Formula {
    Atom(String),
    Neg(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Diamond(Box<Formula>),
    CountLeq(BigUint, Box<Formula>),
}

/// How counting bounds are measured when computing formula size.
///
/// The mode never influences parsing, truth, or satisfiability; it only
/// changes the `size` field of [`FormulaMetrics`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EncodingMode {
    Unary,
    Binary,
}

/// Structural measures of a formula: symbol size, subformula count, modal
/// depth, and the largest counting bound.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FormulaMetrics {
    /// AST node count plus the encoding length of every counting bound.
    pub size: BigUint,
    /// Number of distinct subformulas, the formula itself included.
    pub n_sub: usize,
    /// Maximum nesting depth of `Diamond`.
    pub modal_depth: usize,
    /// Largest `CountLeq` bound in the tree, 0 if there is none.
    pub capacity: BigUint,
}

/// Parse or construction failure, with a byte position where one applies.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SyntaxError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("fresh symbol {0} already occurs in the body")]
    FreshCollision(String),
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

pub fn atom(name: &str) -> Formula {
    Formula::Atom(name.to_string())
}

pub fn neg(f: Formula) -> Formula {
    Formula::Neg(Box::new(f))
}

pub fn and(a: Formula, b: Formula) -> Formula {
    Formula::And(Box::new(a), Box::new(b))
}

pub fn diamond(f: Formula) -> Formula {
    Formula::Diamond(Box::new(f))
}

pub fn count_leq<C: Into<BigUint>>(c: C, f: Formula) -> Formula {
    Formula::CountLeq(c.into(), Box::new(f))
}

/// Left-associated conjunction of a nonempty list.
pub fn and_all(mut parts: Vec<Formula>) -> Formula {
    assert!(!parts.is_empty(), "and_all needs at least one conjunct");
    let first = parts.remove(0);
    parts.into_iter().fold(first, and)
}

pub fn or(a: Formula, b: Formula) -> Formula {
    neg(and(neg(a), neg(b)))
}

pub fn implies(a: Formula, b: Formula) -> Formula {
    neg(and(a, neg(b)))
}

pub fn iff(a: Formula, b: Formula) -> Formula {
    and(implies(a.clone(), b.clone()), implies(b, a))
}

/// `[] f`, i.e. `~<>~f`.
pub fn boxm(f: Formula) -> Formula {
    neg(diamond(neg(f)))
}

/// `E x f`, i.e. `~E[<=0] x f`.
pub fn exists(f: Formula) -> Formula {
    neg(count_leq(0u32, f))
}

/// `A x f`, i.e. `E[<=0] x ~f`.
pub fn forall(f: Formula) -> Formula {
    count_leq(0u32, neg(f))
}

/// `E[>=c] x f` for `c >= 1`, i.e. `~E[<=c-1] x f`.
///
/// `c = 0` is rejected: the abbreviation needs `c-1`, and the vacuously true
/// `E[>=0]` has no core rendering without inventing a truth constant.
pub fn count_geq(c: &BigUint, f: Formula) -> Result<Formula, SyntaxError> {
    if c.bits() == 0 {
        return Err(SyntaxError::Parse {
            pos: 0,
            msg: "E[>=0] has no core form (it is vacuously true); use a tautology explicitly"
                .to_string(),
        });
    }
    Ok(neg(count_leq(c - 1u32, f)))
}

/// `[]^k f`: `k` nested boxes.
pub fn box_pow(k: usize, f: Formula) -> Formula {
    (0..k).fold(f, |acc, _| boxm(acc))
}

/// `[]^{<=m} f`: the conjunction of `[]^0 f, ..., []^m f`, left-associated.
pub fn box_upto(m: usize, f: Formula) -> Formula {
    and_all((0..=m).map(|k| box_pow(k, f.clone())).collect())
}

/// Expands `E[=c] x body` with a fresh predicate: "at most c objects are Q,
/// at least c objects are Q, and Q holds exactly where the body does". For
/// `c = 0` the vacuous at-least conjunct is dropped.
pub fn desugar_count_eq(
    c: &BigUint,
    body: &Formula,
    fresh: &str,
) -> Result<Formula, SyntaxError> {
    if predicates(body).contains(fresh) {
        return Err(SyntaxError::FreshCollision(fresh.to_string()));
    }
    let q = atom(fresh);
    let at_most = count_leq(c.clone(), q.clone());
    let definition = forall(iff(q.clone(), body.clone()));
    if c.bits() == 0 {
        Ok(and(at_most, definition))
    } else {
        let at_least = neg(count_leq(c - 1u32, q));
        Ok(and(and(at_most, at_least), definition))
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Number of AST nodes, counted with multiplicity.
pub fn ast_size(f: &Formula) -> usize {
    match f {
        Formula::Atom(_) => 1,
        Formula::Neg(g) | Formula::Diamond(g) | Formula::CountLeq(_, g) => 1 + ast_size(g),
        Formula::And(a, b) => 1 + ast_size(a) + ast_size(b),
    }
}

/// Maximum nesting depth of `Diamond`.
pub fn modal_depth(f: &Formula) -> usize {
    match f {
        Formula::Atom(_) => 0,
        Formula::Neg(g) | Formula::CountLeq(_, g) => modal_depth(g),
        Formula::Diamond(g) => 1 + modal_depth(g),
        Formula::And(a, b) => modal_depth(a).max(modal_depth(b)),
    }
}

/// Largest `CountLeq` bound occurring in the formula, 0 if none occurs.
pub fn capacity(f: &Formula) -> BigUint {
    match f {
        Formula::Atom(_) => BigUint::from(0u32),
        Formula::Neg(g) | Formula::Diamond(g) => capacity(g),
        Formula::CountLeq(c, g) => c.clone().max(capacity(g)),
        Formula::And(a, b) => capacity(a).max(capacity(b)),
    }
}

/// Set of predicate names occurring in the formula.
pub fn predicates(f: &Formula) -> BTreeSet<String> {
    fn walk(f: &Formula, acc: &mut BTreeSet<String>) {
        match f {
            Formula::Atom(p) => {
                acc.insert(p.clone());
            }
            Formula::Neg(g) | Formula::Diamond(g) | Formula::CountLeq(_, g) => walk(g, acc),
            Formula::And(a, b) => {
                walk(a, acc);
                walk(b, acc);
            }
        }
    }
    let mut acc = BTreeSet::new();
    walk(f, &mut acc);
    acc
}

fn bound_len(c: &BigUint, mode: EncodingMode) -> BigUint {
    let one = BigUint::from(1u32);
    match mode {
        EncodingMode::Unary => c.clone().max(one),
        // ceil(log2(c+1)) = bit length of c; writing down 0 still takes one symbol.
        EncodingMode::Binary => BigUint::from(c.bits()).max(one),
    }
}

/// Computes all structural measures in one pass over the tree.
pub fn metrics(f: &Formula, mode: EncodingMode) -> FormulaMetrics {
    fn size(f: &Formula, mode: EncodingMode) -> BigUint {
        match f {
            Formula::Atom(_) => BigUint::from(1u32),
            Formula::Neg(g) | Formula::Diamond(g) => BigUint::from(1u32) + size(g, mode),
            Formula::CountLeq(c, g) => BigUint::from(1u32) + bound_len(c, mode) + size(g, mode),
            Formula::And(a, b) => BigUint::from(1u32) + size(a, mode) + size(b, mode),
        }
    }
    FormulaMetrics {
        size: size(f, mode),
        n_sub: subformulas(f).len(),
        modal_depth: modal_depth(f),
        capacity: capacity(f),
    }
}

/// All distinct subformulas of `f`, including `f` itself, in canonical order:
/// ascending AST size, ties broken by the printed string. Every proper
/// subformula therefore precedes each formula containing it, which downstream
/// enumeration relies on.
pub fn subformulas(f: &Formula) -> Vec<Formula> {
    fn walk(f: &Formula, acc: &mut BTreeSet<Formula>) {
        match f {
            Formula::Atom(_) => {}
            Formula::Neg(g) | Formula::Diamond(g) | Formula::CountLeq(_, g) => walk(g, acc),
            Formula::And(a, b) => {
                walk(a, acc);
                walk(b, acc);
            }
        }
        acc.insert(f.clone());
    }
    let mut set = BTreeSet::new();
    walk(f, &mut set);
    let mut out: Vec<Formula> = set.into_iter().collect();
    out.sort_by_cached_key(|g| (ast_size(g), print(g)));
    out
}

// `Formula` needs a total order so it can live in BTreeSets; the derived
// order is structural and carries no semantic meaning.
impl PartialOrd for Formula {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Formula {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn rank(f: &Formula) -> u8 {
            match f {
                Formula::Atom(_) => 0,
                Formula::Neg(_) => 1,
                Formula::And(_, _) => 2,
                Formula::Diamond(_) => 3,
                Formula::CountLeq(_, _) => 4,
            }
        }
        match (self, other) {
            (Formula::Atom(a), Formula::Atom(b)) => a.cmp(b),
            (Formula::Neg(a), Formula::Neg(b)) | (Formula::Diamond(a), Formula::Diamond(b)) => {
                a.cmp(b)
            }
            (Formula::And(a1, a2), Formula::And(b1, b2)) => {
                a1.cmp(b1).then_with(|| a2.cmp(b2))
            }
            (Formula::CountLeq(c, a), Formula::CountLeq(d, b)) => {
                c.cmp(d).then_with(|| a.cmp(b))
            }
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

/// Prints the core formula in the ASCII surface syntax; `parse` inverts it.
pub fn print(f: &Formula) -> String {
    let mut s = String::new();
    write_prec(f, &mut s);
    s
}

// Core printing needs only two precedence tiers: `&` and the prefix forms.
// A conjunction nested under a prefix operator or on the right of another
// conjunction gets parentheses; prefix operators chain without them.
fn write_prec(f: &Formula, out: &mut String) {
    match f {
        Formula::Atom(p) => {
            out.push_str(p);
            out.push_str("(x)");
        }
        Formula::Neg(g) => {
            out.push('~');
            write_prefix_arg(g, out);
        }
        Formula::Diamond(g) => {
            out.push_str("<>");
            write_prefix_arg(g, out);
        }
        Formula::CountLeq(c, g) => {
            out.push_str("E[<=");
            out.push_str(&c.to_string());
            out.push_str("] x ");
            write_prefix_arg(g, out);
        }
        Formula::And(a, b) => {
            // Left-associated chains print flat; a right-nested `&` keeps its
            // parentheses so the tree round-trips exactly.
            write_prec(a, out);
            out.push_str(" & ");
            if matches!(b.as_ref(), Formula::And(_, _)) {
                out.push('(');
                write_prec(b, out);
                out.push(')');
            } else {
                write_prec(b, out);
            }
        }
    }
}

fn write_prefix_arg(f: &Formula, out: &mut String) {
    if matches!(f, Formula::And(_, _)) {
        out.push('(');
        write_prec(f, out);
        out.push(')');
    } else {
        write_prec(f, out);
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    VarX,
    Tilde,
    Amp,
    Pipe,
    Arrow,
    DoubleArrow,
    DiamondOp,
    BoxOp,
    LParen,
    RParen,
    /// `E` as a quantifier head (not part of an identifier).
    QuantE,
    /// `A` as a quantifier head.
    QuantA,
    /// `[<=c]`, `[>=c]`, or `[=c]` immediately after a quantifier `E`.
    BoundSpec(BoundKind, BigUint),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BoundKind {
    Leq,
    Geq,
    Eq,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, msg: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
                self.pos += 1;
            }
            let start = self.pos;
            let Some(b) = self.peek() else { break };
            let tok = match b {
                b'~' => {
                    self.pos += 1;
                    Tok::Tilde
                }
                b'&' => {
                    self.pos += 1;
                    Tok::Amp
                }
                b'|' => {
                    self.pos += 1;
                    Tok::Pipe
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b'-' => {
                    if self.src.get(self.pos + 1) == Some(&b'>') {
                        self.pos += 2;
                        Tok::Arrow
                    } else {
                        return self.err("expected '->'");
                    }
                }
                b'<' => match self.src.get(self.pos + 1) {
                    Some(b'>') => {
                        self.pos += 2;
                        Tok::DiamondOp
                    }
                    Some(b'-') => {
                        if self.src.get(self.pos + 2) == Some(&b'>') {
                            self.pos += 3;
                            Tok::DoubleArrow
                        } else {
                            return self.err("expected '<->'");
                        }
                    }
                    _ => return self.err("expected '<>' or '<->'"),
                },
                b'[' => {
                    // Either the box `[]` or a bound spec following `E`.
                    if self.src.get(self.pos + 1) == Some(&b']') {
                        self.pos += 2;
                        Tok::BoxOp
                    } else {
                        self.lex_bound_spec()?
                    }
                }
                b'x' => {
                    self.pos += 1;
                    if matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                        return self.err("identifiers may not start with 'x'");
                    }
                    Tok::VarX
                }
                c if c.is_ascii_alphabetic() => self.lex_word()?,
                _ => return self.err("unexpected character"),
            };
            out.push((start, tok));
        }
        Ok(out)
    }

    fn lex_bound_spec(&mut self) -> Result<Tok, SyntaxError> {
        self.pos += 1; // consume '['
        let kind = match self.peek() {
            Some(b'<') => {
                if self.src.get(self.pos + 1) == Some(&b'=') {
                    self.pos += 2;
                    BoundKind::Leq
                } else {
                    return self.err("expected '<=' in bound");
                }
            }
            Some(b'>') => {
                if self.src.get(self.pos + 1) == Some(&b'=') {
                    self.pos += 2;
                    BoundKind::Geq
                } else {
                    return self.err("expected '>=' in bound");
                }
            }
            Some(b'=') => {
                self.pos += 1;
                BoundKind::Eq
            }
            Some(b'-') => return self.err("negative bound literal rejected"),
            _ => return self.err("expected '<=', '>=' or '=' in bound"),
        };
        if self.peek() == Some(b'-') {
            return self.err("negative bound literal rejected");
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return self.err("expected decimal bound");
        }
        let digits = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
        let value: BigUint = digits.parse().unwrap();
        if self.peek() != Some(b']') {
            return self.err("expected ']' after bound");
        }
        self.pos += 1;
        Ok(Tok::BoundSpec(kind, value))
    }

    fn lex_word(&mut self) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        match word.as_str() {
            "E" => Ok(Tok::QuantE),
            "A" => Ok(Tok::QuantA),
            _ => {
                let valid_user = word.starts_with('P')
                    && word.len() > 1
                    && word[1..].bytes().all(|c| c.is_ascii_digit());
                let valid_internal = ["E_", "Q_", "S_", "T_"]
                    .iter()
                    .any(|p| word.starts_with(p));
                if valid_user || valid_internal {
                    Ok(Tok::Ident(word))
                } else {
                    self.pos = start;
                    self.err("predicate names are P<digits> or E_/Q_/S_/T_-prefixed")
                }
            }
        }
    }
}

// Surface tree: the parser builds this first, then desugars. Keeping the
// surface form around lets `E[=c]` pick the spec'd expansion (duplicate the
// body at top level, introduce a definition predicate when nested).
enum Surface {
    Atom(String),
    Neg(Box<Surface>),
    BinOp(BinKind, Box<Surface>, Box<Surface>),
    Diamond(Box<Surface>),
    Box(Box<Surface>),
    Exists(Box<Surface>),
    Forall(Box<Surface>),
    Count(BoundKind, BigUint, Box<Surface>),
}

enum BinKind {
    And,
    Or,
    Imp,
    Iff,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end_pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end_pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn err<T>(&self, msg: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError::Parse {
            pos: self.pos(),
            msg: msg.to_string(),
        })
    }

    fn expect(&mut self, want: Tok, msg: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(&want) {
            self.at += 1;
            Ok(())
        } else {
            self.err(msg)
        }
    }

    fn formula(&mut self) -> Result<Surface, SyntaxError> {
        self.iff()
    }

    fn iff(&mut self) -> Result<Surface, SyntaxError> {
        let lhs = self.imp()?;
        if self.peek() == Some(&Tok::DoubleArrow) {
            self.at += 1;
            let rhs = self.iff()?;
            Ok(Surface::BinOp(BinKind::Iff, Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn imp(&mut self) -> Result<Surface, SyntaxError> {
        let lhs = self.or()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.at += 1;
            let rhs = self.imp()?;
            Ok(Surface::BinOp(BinKind::Imp, Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn or(&mut self) -> Result<Surface, SyntaxError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Pipe) {
            self.at += 1;
            let rhs = self.and()?;
            lhs = Surface::BinOp(BinKind::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Surface, SyntaxError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Amp) {
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Surface::BinOp(BinKind::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Surface, SyntaxError> {
        match self.peek() {
            Some(Tok::Tilde) => {
                self.at += 1;
                Ok(Surface::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::DiamondOp) => {
                self.at += 1;
                Ok(Surface::Diamond(Box::new(self.unary()?)))
            }
            Some(Tok::BoxOp) => {
                self.at += 1;
                Ok(Surface::Box(Box::new(self.unary()?)))
            }
            Some(Tok::QuantE) => {
                self.at += 1;
                match self.bump() {
                    Some(Tok::VarX) => Ok(Surface::Exists(Box::new(self.unary()?))),
                    Some(Tok::BoundSpec(kind, c)) => {
                        self.expect(Tok::VarX, "expected 'x' after counting bound")?;
                        Ok(Surface::Count(kind, c, Box::new(self.unary()?)))
                    }
                    _ => {
                        self.at -= 1;
                        self.err("expected 'x' or '[<=c]' after 'E'")
                    }
                }
            }
            Some(Tok::QuantA) => {
                self.at += 1;
                self.expect(Tok::VarX, "expected 'x' after 'A'")?;
                Ok(Surface::Forall(Box::new(self.unary()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Surface, SyntaxError> {
        match self.bump() {
            Some(Tok::Ident(name)) => {
                self.expect(Tok::LParen, "expected '(x)' after predicate name")?;
                self.expect(Tok::VarX, "expected '(x)' after predicate name")?;
                self.expect(Tok::RParen, "expected ')' closing atom")?;
                Ok(Surface::Atom(name))
            }
            Some(Tok::LParen) => {
                let inner = self.formula()?;
                self.expect(Tok::RParen, "expected ')'")?;
                Ok(inner)
            }
            _ => {
                self.at = self.at.saturating_sub(1);
                self.err("expected a formula")
            }
        }
    }
}

struct FreshNames {
    taken: BTreeSet<String>,
    next: usize,
}

impl FreshNames {
    fn next_eq_name(&mut self) -> String {
        loop {
            let cand = format!("Q_eq{}", self.next);
            self.next += 1;
            if !self.taken.contains(&cand) {
                self.taken.insert(cand.clone());
                return cand;
            }
        }
    }
}

fn desugar(s: &Surface, top: bool, fresh: &mut FreshNames) -> Result<Formula, SyntaxError> {
    Ok(match s {
        Surface::Atom(p) => atom(p),
        Surface::Neg(g) => neg(desugar(g, false, fresh)?),
        Surface::Diamond(g) => diamond(desugar(g, false, fresh)?),
        Surface::Box(g) => boxm(desugar(g, false, fresh)?),
        Surface::Exists(g) => exists(desugar(g, false, fresh)?),
        Surface::Forall(g) => forall(desugar(g, false, fresh)?),
        Surface::BinOp(kind, a, b) => {
            let a = desugar(a, false, fresh)?;
            let b = desugar(b, false, fresh)?;
            match kind {
                BinKind::And => and(a, b),
                BinKind::Or => or(a, b),
                BinKind::Imp => implies(a, b),
                BinKind::Iff => iff(a, b),
            }
        }
        Surface::Count(BoundKind::Leq, c, g) => count_leq(c.clone(), desugar(g, false, fresh)?),
        Surface::Count(BoundKind::Geq, c, g) => count_geq(c, desugar(g, false, fresh)?)?,
        Surface::Count(BoundKind::Eq, c, g) => {
            let body = desugar(g, false, fresh)?;
            if top {
                // At top level the two-conjunct expansion avoids the fresh
                // predicate: at-most-c and (for c >= 1) at-least-c directly.
                if c.bits() == 0 {
                    count_leq(0u32, body)
                } else {
                    and(
                        count_leq(c.clone(), body.clone()),
                        neg(count_leq(c - 1u32, body)),
                    )
                }
            } else {
                let name = fresh.next_eq_name();
                desugar_count_eq(c, &body, &name)?
            }
        }
    })
}

/// Parses the ASCII surface syntax into the desugared core AST.
pub fn parse(text: &str) -> Result<Formula, SyntaxError> {
    let lexer = Lexer {
        src: text.as_bytes(),
        pos: 0,
    };
    let toks = lexer.tokens()?;
    let taken: BTreeSet<String> = toks
        .iter()
        .filter_map(|(_, t)| match t {
            Tok::Ident(name) => Some(name.clone()),
            _ => None,
        })
        .collect();
    let end_pos = text.len();
    let mut parser = Parser {
        toks,
        at: 0,
        end_pos,
    };
    let surface = parser.formula()?;
    if parser.peek().is_some() {
        return parser.err("trailing input after formula");
    }
    let mut fresh = FreshNames { taken, next: 0 };
    desugar(&surface, true, &mut fresh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p0() -> Formula {
        atom("P0")
    }

    #[test]
    fn exists_desugars_to_negated_count() {
        assert_eq!(parse("E x P0(x)").unwrap(), neg(count_leq(0u32, p0())));
    }

    #[test]
    fn forall_desugars_to_count_of_negation() {
        assert_eq!(parse("A x P0(x)").unwrap(), count_leq(0u32, neg(p0())));
    }

    #[test]
    fn diamond_over_counting() {
        assert_eq!(
            parse("<>(E[<=2] x P1(x))").unwrap(),
            diamond(count_leq(2u32, atom("P1")))
        );
    }

    #[test]
    fn box_desugars() {
        assert_eq!(parse("[]P0(x)").unwrap(), neg(diamond(neg(p0()))));
    }

    #[test]
    fn geq_desugars_with_decremented_bound() {
        assert_eq!(
            parse("E[>=2] x P0(x)").unwrap(),
            neg(count_leq(1u32, p0()))
        );
    }

    #[test]
    fn geq_zero_is_rejected() {
        assert!(parse("E[>=0] x P0(x)").is_err());
    }

    #[test]
    fn negative_bound_rejected() {
        assert!(parse("E[<=-1] x P0(x)").is_err());
    }

    #[test]
    fn count_eq_at_top_level_duplicates_body() {
        let f = parse("E[=1] x P0(x)").unwrap();
        assert_eq!(
            f,
            and(count_leq(1u32, p0()), neg(count_leq(0u32, p0())))
        );
    }

    #[test]
    fn count_eq_nested_introduces_fresh_predicate() {
        let f = parse("<>E[=1] x P0(x)").unwrap();
        let q = atom("Q_eq0");
        let expected = diamond(and(
            and(count_leq(1u32, q.clone()), neg(count_leq(0u32, q.clone()))),
            forall(iff(q, p0())),
        ));
        assert_eq!(f, expected);
    }

    #[test]
    fn count_eq_fresh_name_avoids_taken_names() {
        let f = parse("<>E[=1] x Q_eq0(x)").unwrap();
        assert!(predicates(&f).contains("Q_eq1"));
    }

    #[test]
    fn desugar_count_eq_zero_drops_at_least_conjunct() {
        let out = desugar_count_eq(&BigUint::from(0u32), &p0(), "Q_d").unwrap();
        assert_eq!(
            out,
            and(count_leq(0u32, atom("Q_d")), forall(iff(atom("Q_d"), p0())))
        );
    }

    #[test]
    fn desugar_count_eq_one_has_three_conjuncts() {
        let out = desugar_count_eq(&BigUint::from(1u32), &p0(), "Q_d").unwrap();
        let q = atom("Q_d");
        assert_eq!(
            out,
            and(
                and(count_leq(1u32, q.clone()), neg(count_leq(0u32, q.clone()))),
                forall(iff(q, p0()))
            )
        );
    }

    #[test]
    fn desugar_count_eq_rejects_collision() {
        assert!(desugar_count_eq(&BigUint::from(1u32), &p0(), "P0").is_err());
    }

    #[test]
    fn printing_canonical_forms() {
        assert_eq!(print(&count_leq(0u32, p0())), "E[<=0] x P0(x)");
        assert_eq!(print(&neg(p0())), "~P0(x)");
        assert_eq!(print(&diamond(diamond(atom("P1")))), "<><>P1(x)");
    }

    #[test]
    fn printing_parenthesizes_conjunction_under_prefix() {
        let f = neg(and(p0(), atom("P1")));
        assert_eq!(print(&f), "~(P0(x) & P1(x))");
        assert_eq!(parse(&print(&f)).unwrap(), f);
    }

    #[test]
    fn precedence_tilde_binds_tighter_than_and() {
        assert_eq!(
            parse("~P0(x) & P1(x)").unwrap(),
            and(neg(p0()), atom("P1"))
        );
    }

    #[test]
    fn precedence_and_over_or_over_arrow() {
        let f = parse("P0(x) | P1(x) -> P2(x)").unwrap();
        let lhs = or(p0(), atom("P1"));
        assert_eq!(f, implies(lhs, atom("P2")));
    }

    #[test]
    fn quantifier_binds_tightest_following_formula() {
        let f = parse("E[<=1] x P0(x) & P1(x)").unwrap();
        assert_eq!(f, and(count_leq(1u32, p0()), atom("P1")));
    }

    #[test]
    fn metrics_atom() {
        let m = metrics(&p0(), EncodingMode::Unary);
        assert_eq!(m.size, BigUint::from(1u32));
        assert_eq!(m.n_sub, 1);
        assert_eq!(m.modal_depth, 0);
        assert_eq!(m.capacity, BigUint::from(0u32));
    }

    #[test]
    fn metrics_diamond_count() {
        let f = diamond(count_leq(4u32, p0()));
        let m = metrics(&f, EncodingMode::Unary);
        assert_eq!(m.modal_depth, 1);
        assert_eq!(m.capacity, BigUint::from(4u32));
    }

    #[test]
    fn metrics_bound_encoding_lengths() {
        let f = count_leq(8u32, p0());
        let unary = metrics(&f, EncodingMode::Unary);
        let binary = metrics(&f, EncodingMode::Binary);
        // Two AST nodes plus the bound written in 8 unary or 4 binary symbols.
        assert_eq!(unary.size, BigUint::from(10u32));
        assert_eq!(binary.size, BigUint::from(6u32));
    }

    #[test]
    fn metrics_zero_bound_costs_one_symbol_both_modes() {
        let f = count_leq(0u32, p0());
        assert_eq!(metrics(&f, EncodingMode::Unary).size, BigUint::from(3u32));
        assert_eq!(metrics(&f, EncodingMode::Binary).size, BigUint::from(3u32));
    }

    #[test]
    fn subformulas_counts_and_order() {
        assert_eq!(subformulas(&neg(p0())).len(), 2);
        assert_eq!(subformulas(&and(p0(), p0())).len(), 2);
        assert_eq!(subformulas(&diamond(neg(p0()))).len(), 3);
        let subs = subformulas(&and(diamond(p0()), neg(p0())));
        for (i, f) in subs.iter().enumerate() {
            for g in &subs[..i] {
                assert!(ast_size(g) <= ast_size(f));
            }
        }
        assert_eq!(subs[0], p0());
    }

    #[test]
    fn subformula_measures_monotone_in_parent() {
        let f = parse("<>(P0(x) & E[<=2] x ~P1(x))").unwrap();
        let pm = metrics(&f, EncodingMode::Unary);
        for sub in subformulas(&f) {
            let sm = metrics(&sub, EncodingMode::Unary);
            assert!(sm.n_sub <= pm.n_sub);
            assert!(sm.modal_depth <= pm.modal_depth);
            assert!(sm.capacity <= pm.capacity);
        }
    }

    #[test]
    fn parse_error_carries_position() {
        match parse("P0(x) & @") {
            Err(SyntaxError::Parse { pos, .. }) => assert_eq!(pos, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn reserved_prefix_identifiers_parse() {
        assert_eq!(parse("E_dom(x)").unwrap(), atom("E_dom"));
        assert_eq!(parse("S_mk(x) & T_mk(x)").unwrap(), and(atom("S_mk"), atom("T_mk")));
    }

    #[test]
    fn unknown_identifier_shapes_rejected() {
        assert!(parse("Px(x)").is_err());
        assert!(parse("R0(x)").is_err());
    }
}
