//! Satisfiability-preserving translations around the one-variable counting
//! language: compiling varying domain regimes into constant domains, pinning
//! exact domain sizes, embedding the modal logic K with a universal modality
//! into decreasing domains, embedding products of K with S5 or with the
//! difference logic of "elsewhere", and generating the formula family that
//! forces large root domains. Small brute-force oracles for the bimodal
//! source logics supply independent ground truth for the translation tests.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use crate::semantics::{domain_fns, frames_for, DomainRegime, KripkeModel, SearchBounds};
use crate::syntax::{
    and, and_all, atom, box_pow, box_upto, boxm, count_leq, diamond, exists, forall, iff, implies,
    modal_depth, neg, or, predicates, Formula, SyntaxError,
};

// ---------------------------------------------------------------------------
// Relativization and domain-regime axioms
// ---------------------------------------------------------------------------

/// Provenance tag for a predicate symbol introduced by a translation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FreshRole {
    /// Existence predicate carving the active domain (`E_dom`).
    Existence,
    /// Truth of the source subformula at this canonical position (`Q_<k>`).
    Subformula(usize),
    /// Marks, at each world, the one object naming that world (`S_mk`).
    SourceMark,
    /// Marks, at each world, the objects naming its successors (`T_mk`).
    TargetMark,
}

/// Output of a translation: the final formula together with its two halves
/// and the predicate symbols the translation invented.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TranslationResult {
    /// `zeta & core`, the formula whose satisfiability mirrors the source.
    pub formula: Formula,
    /// Axioms pinning down the fresh predicates and, where applicable, the
    /// shape of the domains.
    pub zeta: Formula,
    /// The structural image of the source formula alone.
    pub core: Formula,
    /// Introduced predicate names with their roles, disjoint from the
    /// source formula's own predicates.
    pub fresh_symbols: Vec<(String, FreshRole)>,
}

/// Relativizes counting to an existence predicate: the body of `E[<=c] x f`
/// becomes `e(x) & f'`, so every count ranges over the marked objects only.
/// Atoms, connectives and diamonds map through unchanged. Fails if `e`
/// already occurs in `f`.
pub fn relativize(f: &Formula, e: &str) -> Result<Formula, SyntaxError> {
    if predicates(f).contains(e) {
        return Err(SyntaxError::FreshCollision(e.to_string()));
    }
    Ok(rel(f, e, false))
}

// Shared worker. The public map keeps atoms bare; the regime reductions
// additionally guard atoms with `e`, because predicate extensions live
// inside each world's domain: after carving the domain down to the marked
// objects, an atom must come out false at an unmarked object, which the
// bare atom in the wider model would not guarantee.
fn rel(f: &Formula, e: &str, guard_atoms: bool) -> Formula {
    match f {
        Formula::Atom(p) => {
            if guard_atoms {
                and(atom(e), atom(p))
            } else {
                atom(p)
            }
        }
        Formula::Neg(g) => neg(rel(g, e, guard_atoms)),
        Formula::And(a, b) => and(rel(a, e, guard_atoms), rel(b, e, guard_atoms)),
        Formula::Diamond(g) => diamond(rel(g, e, guard_atoms)),
        Formula::CountLeq(c, g) => count_leq(c.clone(), and(atom(e), rel(g, e, guard_atoms))),
    }
}

/// Axiom making an existence predicate behave like the chosen regime's
/// domains throughout modal reach `m`: expanding keeps `e` true along every
/// edge, decreasing lets it only shrink.
///
/// # Panics
/// On `Constant` or `Varying`, which have no such axiom.
pub fn zeta_regime(regime: DomainRegime, m: usize, e: &str) -> Formula {
    match regime {
        DomainRegime::Expanding => box_upto(m, forall(implies(atom(e), boxm(atom(e))))),
        DomainRegime::Decreasing => forall(box_upto(m, implies(diamond(atom(e)), atom(e)))),
        other => panic!("no regime axiom for {other} domains"),
    }
}

// First existence-predicate name not occurring in `f`. User predicates are
// `P<digits>`, so `E_dom` is normally free; the suffix loop keeps the
// reductions total on inputs that already use reserved-prefix names.
fn existence_name(f: &Formula) -> String {
    let taken = predicates(f);
    if !taken.contains("E_dom") {
        return "E_dom".to_string();
    }
    let mut i = 0usize;
    loop {
        let cand = format!("E_dom{i}");
        if !taken.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

/// Compiles a varying domain regime away: the output is satisfiable over
/// constant domains exactly when `f` is satisfiable over `regime`, within
/// matching search bounds. A fresh existence predicate carves the varying
/// domains out of the constant one; the axioms force it regime-shaped and
/// nonempty throughout the modal reach of `f` and true of the evaluation
/// object, and the core is the guarded relativization of `f`, so that atoms,
/// like counts, see carved objects only.
pub fn reduce_to_constant(f: &Formula, regime: DomainRegime) -> TranslationResult {
    let e = existence_name(f);
    let m = modal_depth(f);
    let zeta = and_all(vec![
        zeta_regime(regime, m, &e),
        box_upto(m, neg(count_leq(0u32, atom(&e)))),
        atom(&e),
    ]);
    let core = rel(f, &e, true);
    TranslationResult {
        formula: and(zeta.clone(), core.clone()),
        zeta,
        core,
        fresh_symbols: vec![(e, FreshRole::Existence)],
    }
}

/// The witness direction of [`reduce_to_constant`]: carves a model of the
/// original formula out of a constant-domain model of the reduction, at the
/// point `(w, a)` where the reduction holds.
///
/// Keeps the subtree under `w` truncated `depth` levels down (the reduction
/// axioms constrain the existence predicate only that far), reads the
/// existence extension as the new domains, intersects every predicate with
/// them, and drops the existence predicate and any object left in no
/// domain. Returns `None` when the input was not actually a witness, for
/// example when `a` falls outside the carved domain of `w`; callers treat
/// that as an internal inconsistency.
pub fn recover_reduced_witness(
    m: &KripkeModel,
    w: usize,
    a: usize,
    depth: usize,
    existence: &str,
) -> Option<(KripkeModel, usize, usize)> {
    if w >= m.n_worlds() || a >= m.n_objects() {
        return None;
    }
    // The worlds to keep, ascending; every frame here numbers children
    // after parents, so a BFS from `w` only moves to larger indices.
    let mut level = vec![w];
    let mut kept = vec![w];
    for _ in 0..depth {
        let next: Vec<usize> = level
            .iter()
            .flat_map(|&u| m.successors(u).iter().copied())
            .collect();
        kept.extend(next.iter().copied());
        level = next;
    }
    kept.sort_unstable();
    kept.dedup();
    let rank_w: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let domains_old: Vec<u64> = kept.iter().map(|&u| m.interp_mask(existence, u)).collect();
    if domains_old[rank_w[&w]] >> a & 1 == 0 {
        return None;
    }
    let used = domains_old.iter().fold(0u64, |acc, &d| acc | d);
    let objects: Vec<usize> = (0..m.n_objects()).filter(|&b| used >> b & 1 == 1).collect();
    let rank_o: BTreeMap<usize, usize> = objects.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let squeeze = |mask: u64| -> u64 {
        objects
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | (mask >> b & 1) << i)
    };
    let domains: Vec<u64> = domains_old.iter().map(|&d| squeeze(d)).collect();
    let mut edges = Vec::new();
    for &u in &kept {
        for &v in m.successors(u) {
            if let Some(&rv) = rank_w.get(&v) {
                edges.push((rank_w[&u], rv));
            }
        }
    }
    let mut interp = BTreeMap::new();
    for pred in m.predicates() {
        if pred == existence {
            continue;
        }
        let masks: Vec<u64> = kept
            .iter()
            .enumerate()
            .map(|(i, &u)| squeeze(m.interp_mask(pred, u)) & domains[i])
            .collect();
        interp.insert(pred.to_string(), masks);
    }
    let model = KripkeModel::new(
        kept.iter().map(|&u| m.world_names()[u].clone()).collect(),
        edges,
        objects.iter().map(|&b| m.object_names()[b].clone()).collect(),
        domains,
        interp,
    )
    .ok()?;
    Some((model, rank_w[&w], rank_o[&a]))
}

/// Pins every reachable domain to exactly `n` objects on top of the full
/// constant-domain reduction: the output is satisfiable over the expanding
/// regime (equally, the decreasing one) exactly when `f` is satisfiable
/// over constant domains drawn from at most `n` objects. Both regime axioms
/// appear together, so the carved domains can neither grow nor shrink. The
/// pin counts the tautology `P0(x) | ~P0(x)`; its subscripts keep the
/// output size logarithmic in `n` under the binary bound measure.
///
/// # Panics
/// If `n` is zero. Domains are nonempty, so no pin can demand zero objects.
pub fn pin_domain<C: Into<BigUint>>(f: &Formula, n: C) -> Formula {
    let n: BigUint = n.into();
    assert!(n.bits() > 0, "pin_domain needs n >= 1");
    let e = existence_name(f);
    let m = modal_depth(f);
    let top = or(atom("P0"), neg(atom("P0")));
    let pin = forall(box_upto(
        m,
        forall(and(
            count_leq(n.clone(), top.clone()),
            neg(count_leq(&n - 1u32, top)),
        )),
    ));
    let zeta = and_all(vec![
        zeta_regime(DomainRegime::Expanding, m, &e),
        zeta_regime(DomainRegime::Decreasing, m, &e),
        pin,
        box_upto(m, neg(count_leq(0u32, atom(&e)))),
        atom(&e),
    ]);
    and(zeta, rel(f, &e, true))
}

// ---------------------------------------------------------------------------
// Bimodal formulas
// ---------------------------------------------------------------------------

/// A propositional bimodal formula in core form: negation, conjunction and
/// three diamonds. `DiamondH` steps along the first accessibility relation,
/// `DiamondV` along the second, `DiamondU` reaches every world. Surface
/// boxes, `|` and `->` desugar at parse time, mirroring the one-variable
/// language. Each translation accepts `<h>` plus one of the other two.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum BimodalFormula {
    Var(usize),
    Neg(Box<BimodalFormula>),
    And(Box<BimodalFormula>, Box<BimodalFormula>),
    DiamondH(Box<BimodalFormula>),
    DiamondV(Box<BimodalFormula>),
    DiamondU(Box<BimodalFormula>),
}

fn bneg(f: BimodalFormula) -> BimodalFormula {
    BimodalFormula::Neg(Box::new(f))
}

fn band(a: BimodalFormula, b: BimodalFormula) -> BimodalFormula {
    BimodalFormula::And(Box::new(a), Box::new(b))
}

/// AST node count.
pub fn bimodal_size(f: &BimodalFormula) -> usize {
    match f {
        BimodalFormula::Var(_) => 1,
        BimodalFormula::Neg(g)
        | BimodalFormula::DiamondH(g)
        | BimodalFormula::DiamondV(g)
        | BimodalFormula::DiamondU(g) => 1 + bimodal_size(g),
        BimodalFormula::And(a, b) => 1 + bimodal_size(a) + bimodal_size(b),
    }
}

/// All distinct subformulas, the formula itself included, in canonical
/// order: ascending size, ties broken by the printed string. Translations
/// index their per-subformula predicates by position in this list.
pub fn bimodal_subformulas(f: &BimodalFormula) -> Vec<BimodalFormula> {
    fn walk(f: &BimodalFormula, out: &mut Vec<BimodalFormula>) {
        match f {
            BimodalFormula::Var(_) => {}
            BimodalFormula::Neg(g)
            | BimodalFormula::DiamondH(g)
            | BimodalFormula::DiamondV(g)
            | BimodalFormula::DiamondU(g) => walk(g, out),
            BimodalFormula::And(a, b) => {
                walk(a, out);
                walk(b, out);
            }
        }
        out.push(f.clone());
    }
    let mut all = Vec::new();
    walk(f, &mut all);
    all.sort_by_cached_key(|g| (bimodal_size(g), print_bimodal(g)));
    all.dedup();
    all
}

/// Prints the ASCII surface form; [`parse_bimodal`] inverts it.
pub fn print_bimodal(f: &BimodalFormula) -> String {
    let mut s = String::new();
    bwrite(f, &mut s);
    s
}

// Same two precedence tiers as the one-variable printer: a conjunction
// nested under a prefix operator or on the right of another conjunction
// keeps its parentheses; prefix operators chain bare.
fn bwrite(f: &BimodalFormula, out: &mut String) {
    match f {
        BimodalFormula::Var(i) => {
            out.push('p');
            out.push_str(&i.to_string());
        }
        BimodalFormula::Neg(g) => {
            out.push('~');
            bwrite_prefix_arg(g, out);
        }
        BimodalFormula::DiamondH(g) => {
            out.push_str("<h>");
            bwrite_prefix_arg(g, out);
        }
        BimodalFormula::DiamondV(g) => {
            out.push_str("<v>");
            bwrite_prefix_arg(g, out);
        }
        BimodalFormula::DiamondU(g) => {
            out.push_str("<u>");
            bwrite_prefix_arg(g, out);
        }
        BimodalFormula::And(a, b) => {
            bwrite(a, out);
            out.push_str(" & ");
            if matches!(b.as_ref(), BimodalFormula::And(_, _)) {
                out.push('(');
                bwrite(b, out);
                out.push(')');
            } else {
                bwrite(b, out);
            }
        }
    }
}

fn bwrite_prefix_arg(f: &BimodalFormula, out: &mut String) {
    if matches!(f, BimodalFormula::And(_, _)) {
        out.push('(');
        bwrite(f, out);
        out.push(')');
    } else {
        bwrite(f, out);
    }
}

impl fmt::Display for BimodalFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_bimodal(self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BModality {
    H,
    V,
    U,
}

#[derive(Clone, Debug, PartialEq)]
enum BTok {
    Var(usize),
    Tilde,
    Amp,
    Pipe,
    Arrow,
    Dia(BModality),
    Boxed(BModality),
    LParen,
    RParen,
}

struct BLexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> BLexer<'a> {
    fn err<T>(&self, msg: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn modality(&mut self, close: u8, what: &str) -> Result<BModality, SyntaxError> {
        let m = match self.peek() {
            Some(b'h') => BModality::H,
            Some(b'v') => BModality::V,
            Some(b'u') => BModality::U,
            _ => return self.err(what),
        };
        self.pos += 1;
        if self.peek() != Some(close) {
            return self.err(what);
        }
        self.pos += 1;
        Ok(m)
    }

    fn tokens(mut self) -> Result<Vec<(usize, BTok)>, SyntaxError> {
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
                    BTok::Tilde
                }
                b'&' => {
                    self.pos += 1;
                    BTok::Amp
                }
                b'|' => {
                    self.pos += 1;
                    BTok::Pipe
                }
                b'(' => {
                    self.pos += 1;
                    BTok::LParen
                }
                b')' => {
                    self.pos += 1;
                    BTok::RParen
                }
                b'-' => {
                    if self.src.get(self.pos + 1) == Some(&b'>') {
                        self.pos += 2;
                        BTok::Arrow
                    } else {
                        return self.err("expected '->'");
                    }
                }
                b'<' => {
                    self.pos += 1;
                    BTok::Dia(self.modality(b'>', "expected '<h>', '<v>' or '<u>'")?)
                }
                b'[' => {
                    self.pos += 1;
                    BTok::Boxed(self.modality(b']', "expected '[h]', '[v]' or '[u]'")?)
                }
                b'p' => {
                    self.pos += 1;
                    let digits_start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                    if self.pos == digits_start {
                        return self.err("expected digits after 'p'");
                    }
                    if matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                        return self.err("variables are written p<digits>");
                    }
                    let digits = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
                    match digits.parse::<usize>() {
                        Ok(i) => BTok::Var(i),
                        Err(_) => return self.err("variable index too large"),
                    }
                }
                c if c.is_ascii_alphabetic() => {
                    return self.err("variables are written p<digits>")
                }
                _ => return self.err("unexpected character"),
            };
            out.push((start, tok));
        }
        Ok(out)
    }
}

struct BParser {
    toks: Vec<(usize, BTok)>,
    at: usize,
    end_pos: usize,
}

impl BParser {
    fn peek(&self) -> Option<&BTok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end_pos)
    }

    fn err<T>(&self, msg: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError::Parse {
            pos: self.pos(),
            msg: msg.to_string(),
        })
    }

    fn imp(&mut self) -> Result<BimodalFormula, SyntaxError> {
        let lhs = self.or()?;
        if self.peek() == Some(&BTok::Arrow) {
            self.at += 1;
            let rhs = self.imp()?;
            // a -> b is ~(a & ~b), as in the one-variable language.
            Ok(bneg(band(lhs, bneg(rhs))))
        } else {
            Ok(lhs)
        }
    }

    fn or(&mut self) -> Result<BimodalFormula, SyntaxError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&BTok::Pipe) {
            self.at += 1;
            let rhs = self.and()?;
            lhs = bneg(band(bneg(lhs), bneg(rhs)));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<BimodalFormula, SyntaxError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&BTok::Amp) {
            self.at += 1;
            let rhs = self.unary()?;
            lhs = band(lhs, rhs);
        }
        Ok(lhs)
    }

    fn diamond_of(m: BModality, g: BimodalFormula) -> BimodalFormula {
        match m {
            BModality::H => BimodalFormula::DiamondH(Box::new(g)),
            BModality::V => BimodalFormula::DiamondV(Box::new(g)),
            BModality::U => BimodalFormula::DiamondU(Box::new(g)),
        }
    }

    fn unary(&mut self) -> Result<BimodalFormula, SyntaxError> {
        match self.peek() {
            Some(BTok::Tilde) => {
                self.at += 1;
                Ok(bneg(self.unary()?))
            }
            Some(&BTok::Dia(m)) => {
                self.at += 1;
                Ok(Self::diamond_of(m, self.unary()?))
            }
            Some(&BTok::Boxed(m)) => {
                self.at += 1;
                Ok(bneg(Self::diamond_of(m, bneg(self.unary()?))))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<BimodalFormula, SyntaxError> {
        match self.peek() {
            Some(&BTok::Var(i)) => {
                self.at += 1;
                Ok(BimodalFormula::Var(i))
            }
            Some(BTok::LParen) => {
                self.at += 1;
                let inner = self.imp()?;
                if self.peek() == Some(&BTok::RParen) {
                    self.at += 1;
                    Ok(inner)
                } else {
                    self.err("expected ')'")
                }
            }
            _ => self.err("expected a formula"),
        }
    }
}

/// Parses the bimodal surface syntax (`p<digits>`, `~`, `&`, `|`, `->`,
/// `<h>`, `[h]`, `<v>`, `[v]`, `<u>`, `[u]`) into core form; boxes, `|` and
/// `->` desugar while parsing.
pub fn parse_bimodal(text: &str) -> Result<BimodalFormula, SyntaxError> {
    let toks = BLexer { src: text.as_bytes(), pos: 0 }.tokens()?;
    let mut p = BParser { toks, at: 0, end_pos: text.len() };
    let f = p.imp()?;
    if p.at < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

/// Which diamond accompanies `<h>` in an exhaustively enumerated battery.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SecondDiamond {
    V,
    U,
}

/// Every formula over `~`, `&`, `<h>` and the chosen second diamond with at
/// most `max_connectives` connectives over the variables `p0` and `p1`, in
/// ascending connective count. Distinct trees are generated once, so the
/// list is duplicate-free. This is the exhaustive battery the translation
/// cross-checks sweep.
pub fn bimodal_battery(max_connectives: usize, second: SecondDiamond) -> Vec<BimodalFormula> {
    let mut layers: Vec<Vec<BimodalFormula>> =
        vec![vec![BimodalFormula::Var(0), BimodalFormula::Var(1)]];
    for n in 1..=max_connectives {
        let mut layer = Vec::new();
        for g in &layers[n - 1] {
            layer.push(bneg(g.clone()));
            layer.push(BimodalFormula::DiamondH(Box::new(g.clone())));
            layer.push(match second {
                SecondDiamond::V => BimodalFormula::DiamondV(Box::new(g.clone())),
                SecondDiamond::U => BimodalFormula::DiamondU(Box::new(g.clone())),
            });
        }
        for i in 0..n {
            for a in &layers[i] {
                for b in &layers[n - 1 - i] {
                    layer.push(band(a.clone(), b.clone()));
                }
            }
        }
        layers.push(layer);
    }
    layers.into_iter().flatten().collect()
}

// ---------------------------------------------------------------------------
// Translations from the bimodal logics
// ---------------------------------------------------------------------------

/// Rejection of a bimodal input whose modalities fall outside the
/// translation's source language.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TranslationError {
    #[error("{op} accepts formulas over {allowed} only; the input uses {found}")]
    ForeignModality {
        op: &'static str,
        allowed: &'static str,
        found: &'static str,
    },
}

fn uses_v(f: &BimodalFormula) -> bool {
    match f {
        BimodalFormula::Var(_) => false,
        BimodalFormula::DiamondV(_) => true,
        BimodalFormula::Neg(g) | BimodalFormula::DiamondH(g) | BimodalFormula::DiamondU(g) => {
            uses_v(g)
        }
        BimodalFormula::And(a, b) => uses_v(a) || uses_v(b),
    }
}

fn uses_u(f: &BimodalFormula) -> bool {
    match f {
        BimodalFormula::Var(_) => false,
        BimodalFormula::DiamondU(_) => true,
        BimodalFormula::Neg(g) | BimodalFormula::DiamondH(g) | BimodalFormula::DiamondV(g) => {
            uses_u(g)
        }
        BimodalFormula::And(a, b) => uses_u(a) || uses_u(b),
    }
}

fn q_name(ix: usize) -> String {
    format!("Q_{ix}")
}

fn sub_position(subs: &[BimodalFormula], g: &BimodalFormula) -> usize {
    subs.iter().position(|s| s == g).expect("every subformula is listed")
}

/// Embeds the modal logic K extended with a universal modality into the
/// one-variable language over decreasing domains. `<h>` is the K diamond
/// and `<u>` the universal one; `<v>` is rejected. Worlds of the source
/// model become domain objects: `S_mk` marks, at each world, the object
/// naming that world, `T_mk` the objects naming its successors, and `Q_<k>`
/// records where the k-th canonical subformula holds. A diamond re-enters
/// the frame through a single modal step, so the whole output has modal
/// depth 1 regardless of the source nesting.
pub fn translate_ku(f: &BimodalFormula) -> Result<TranslationResult, TranslationError> {
    if uses_v(f) {
        return Err(TranslationError::ForeignModality {
            op: "translate_ku",
            allowed: "<h> and <u>",
            found: "<v>",
        });
    }
    fn image(g: &BimodalFormula, subs: &[BimodalFormula]) -> Formula {
        match g {
            BimodalFormula::Var(i) => atom(&format!("P{i}")),
            BimodalFormula::Neg(h) => neg(image(h, subs)),
            BimodalFormula::And(a, b) => and(image(a, subs), image(b, subs)),
            BimodalFormula::DiamondH(h) => {
                let q = q_name(sub_position(subs, h));
                diamond(and(atom("S_mk"), exists(and(atom("T_mk"), atom(&q)))))
            }
            BimodalFormula::DiamondU(h) => exists(image(h, subs)),
            BimodalFormula::DiamondV(_) => unreachable!("rejected above"),
        }
    }
    let subs = bimodal_subformulas(f);
    let core = image(f, &subs);
    // Two axiom groups per subformula: truth spreads its mark to every
    // successor world, and any marked successor certifies truth.
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for (ix, psi) in subs.iter().enumerate() {
        let psi_image = image(psi, &subs);
        forward.push(forall(implies(psi_image.clone(), boxm(atom(&q_name(ix))))));
        backward.push(forall(implies(diamond(atom(&q_name(ix))), psi_image)));
    }
    let zeta = and(and_all(forward), and_all(backward));
    let mut fresh_symbols: Vec<(String, FreshRole)> = (0..subs.len())
        .map(|ix| (q_name(ix), FreshRole::Subformula(ix)))
        .collect();
    if subs.iter().any(|s| matches!(s, BimodalFormula::DiamondH(_))) {
        fresh_symbols.push(("S_mk".to_string(), FreshRole::SourceMark));
        fresh_symbols.push(("T_mk".to_string(), FreshRole::TargetMark));
    }
    Ok(TranslationResult {
        formula: and(zeta.clone(), core.clone()),
        zeta,
        core,
        fresh_symbols,
    })
}

/// Embeds the product of K (horizontal) with S5 (vertical) into the
/// one-variable language: `<h>` becomes the modal diamond and `<v>` the
/// existential quantifier, so vertical points become domain objects. The
/// output is counting-free and needs no axioms. `<u>` is rejected.
pub fn translate_product_s5(f: &BimodalFormula) -> Result<Formula, TranslationError> {
    if uses_u(f) {
        return Err(TranslationError::ForeignModality {
            op: "translate_product_s5",
            allowed: "<h> and <v>",
            found: "<u>",
        });
    }
    fn image(g: &BimodalFormula) -> Formula {
        match g {
            BimodalFormula::Var(i) => atom(&format!("P{i}")),
            BimodalFormula::Neg(h) => neg(image(h)),
            BimodalFormula::And(a, b) => and(image(a), image(b)),
            BimodalFormula::DiamondH(h) => diamond(image(h)),
            BimodalFormula::DiamondV(h) => exists(image(h)),
            BimodalFormula::DiamondU(_) => unreachable!("rejected above"),
        }
    }
    Ok(image(f))
}

/// "Some domain object other than the current one satisfies `chi`": either
/// the current object fails `chi` while at least one object satisfies it,
/// or at least two objects do.
pub fn exists_other(chi: &Formula) -> Formula {
    or(
        and(neg(chi.clone()), neg(count_leq(0u32, chi.clone()))),
        neg(count_leq(1u32, chi.clone())),
    )
}

/// Embeds the product of K with the difference logic, where `<v>` reaches
/// every point other than the current one, using a single counting level:
/// `<v> psi` maps to a fresh atom `Q_<k>`, and the axioms tie each such
/// atom, at the evaluation world, to "some other domain object satisfies
/// the image of psi". Every counting subscript in the output is at most 1.
/// `<u>` is rejected.
pub fn translate_product_diff(f: &BimodalFormula) -> Result<TranslationResult, TranslationError> {
    if uses_u(f) {
        return Err(TranslationError::ForeignModality {
            op: "translate_product_diff",
            allowed: "<h> and <v>",
            found: "<u>",
        });
    }
    fn image(g: &BimodalFormula, subs: &[BimodalFormula]) -> Formula {
        match g {
            BimodalFormula::Var(i) => atom(&format!("P{i}")),
            BimodalFormula::Neg(h) => neg(image(h, subs)),
            BimodalFormula::And(a, b) => and(image(a, subs), image(b, subs)),
            BimodalFormula::DiamondH(h) => diamond(image(h, subs)),
            BimodalFormula::DiamondV(h) => atom(&q_name(sub_position(subs, h))),
            BimodalFormula::DiamondU(_) => unreachable!("rejected above"),
        }
    }
    let subs = bimodal_subformulas(f);
    let core = image(f, &subs);
    let clauses: Vec<Formula> = subs
        .iter()
        .enumerate()
        .map(|(ix, psi)| forall(iff(atom(&q_name(ix)), exists_other(&image(psi, &subs)))))
        .collect();
    let zeta = and_all(clauses);
    let fresh_symbols = (0..subs.len())
        .map(|ix| (q_name(ix), FreshRole::Subformula(ix)))
        .collect();
    Ok(TranslationResult {
        formula: and(zeta.clone(), core.clone()),
        zeta,
        core,
        fresh_symbols,
    })
}

// ---------------------------------------------------------------------------
// Bimodal oracles
// ---------------------------------------------------------------------------

/// The vertical component of a product oracle run.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VerticalLogic {
    /// Universal relation: `<v>` reaches every point of the current slice.
    S5,
    /// Inequality relation: `<v>` reaches every other point of the slice.
    Diff,
}

impl fmt::Display for VerticalLogic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerticalLogic::S5 => "s5",
            VerticalLogic::Diff => "diff",
        })
    }
}

fn bimodal_vars(f: &BimodalFormula) -> Vec<usize> {
    fn walk(f: &BimodalFormula, out: &mut Vec<usize>) {
        match f {
            BimodalFormula::Var(i) => out.push(*i),
            BimodalFormula::Neg(g)
            | BimodalFormula::DiamondH(g)
            | BimodalFormula::DiamondV(g)
            | BimodalFormula::DiamondU(g) => walk(g, out),
            BimodalFormula::And(a, b) => {
                walk(a, out);
                walk(b, out);
            }
        }
    }
    let mut vars = Vec::new();
    walk(f, &mut vars);
    vars.sort_unstable();
    vars.dedup();
    vars
}

/// Brute-force satisfiability for formulas over `<h>` and `<u>`: every
/// model with at most `max_worlds` worlds, every accessibility relation for
/// `<h>` (`<u>` ranges over all worlds regardless), every valuation, every
/// evaluation world. Cost grows as `2^(worlds^2)`, so the world cap is
/// limited to 5.
///
/// # Panics
/// If the formula mentions `<v>`, or `max_worlds` exceeds 5.
pub fn ku_oracle(f: &BimodalFormula, max_worlds: usize) -> bool {
    assert!(!uses_v(f), "ku_oracle expects formulas over <h> and <u>");
    assert!(max_worlds <= 5, "ku_oracle enumerates relations; cap the worlds at 5");
    let vars = bimodal_vars(f);
    for n in 1..=max_worlds {
        let mut rel = vec![0u64; n];
        for rel_code in 0u64..1 << (n * n) {
            for (w, row) in rel.iter_mut().enumerate() {
                *row = rel_code >> (w * n) & ((1 << n) - 1);
            }
            let mut masks = vec![0u64; vars.len()];
            for val_code in 0u64..1 << (vars.len() * n) {
                for (k, m) in masks.iter_mut().enumerate() {
                    *m = val_code >> (k * n) & ((1 << n) - 1);
                }
                if (0..n).any(|w| ku_eval(f, w, n, &rel, &vars, &masks)) {
                    return true;
                }
            }
        }
    }
    false
}

fn ku_eval(
    f: &BimodalFormula,
    w: usize,
    n: usize,
    rel: &[u64],
    vars: &[usize],
    masks: &[u64],
) -> bool {
    match f {
        BimodalFormula::Var(i) => {
            let k = vars.binary_search(i).expect("collected variable");
            masks[k] >> w & 1 == 1
        }
        BimodalFormula::Neg(g) => !ku_eval(g, w, n, rel, vars, masks),
        BimodalFormula::And(a, b) => {
            ku_eval(a, w, n, rel, vars, masks) && ku_eval(b, w, n, rel, vars, masks)
        }
        BimodalFormula::DiamondH(g) => {
            (0..n).any(|v| rel[w] >> v & 1 == 1 && ku_eval(g, v, n, rel, vars, masks))
        }
        BimodalFormula::DiamondU(g) => (0..n).any(|v| ku_eval(g, v, n, rel, vars, masks)),
        BimodalFormula::DiamondV(_) => unreachable!("checked at entry"),
    }
}

/// An explicit subframe-of-a-product model: a horizontal K frame, a set of
/// vertical points, the kept pairs as one vertical mask ("slice") per
/// horizontal world, and a valuation. The two relations move orthogonally:
/// `<h>` steps to a horizontal successor holding the vertical point fixed
/// and lands only on kept pairs, `<v>` moves inside the current slice.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BimodalModel {
    /// Horizontal successor lists.
    pub succ_h: Vec<Vec<usize>>,
    /// Number of vertical points.
    pub points: usize,
    /// Bit `v` of `slices[u]` says the pair `(u, v)` is a world.
    pub slices: Vec<u64>,
    /// Per variable, one vertical mask per horizontal world.
    pub valuation: BTreeMap<usize, Vec<u64>>,
}

impl BimodalModel {
    /// Truth at the pair `(u, v)`, which must be kept. `<v>` is read off
    /// `vertical`; `<u>` has no product reading and panics.
    pub fn holds(&self, vertical: VerticalLogic, f: &BimodalFormula, u: usize, v: usize) -> bool {
        debug_assert!(self.slices[u] >> v & 1 == 1, "evaluation off the subframe");
        match f {
            BimodalFormula::Var(i) => self
                .valuation
                .get(i)
                .map(|rows| rows[u] >> v & 1 == 1)
                .unwrap_or(false),
            BimodalFormula::Neg(g) => !self.holds(vertical, g, u, v),
            BimodalFormula::And(a, b) => {
                self.holds(vertical, a, u, v) && self.holds(vertical, b, u, v)
            }
            BimodalFormula::DiamondH(g) => self.succ_h[u]
                .iter()
                .any(|&c| self.slices[c] >> v & 1 == 1 && self.holds(vertical, g, c, v)),
            BimodalFormula::DiamondV(g) => (0..self.points).any(|v2| {
                self.slices[u] >> v2 & 1 == 1
                    && (vertical == VerticalLogic::S5 || v2 != v)
                    && self.holds(vertical, g, u, v2)
            }),
            BimodalFormula::DiamondU(_) => {
                panic!("product models interpret <h> and <v> only")
            }
        }
    }
}

// Lazy valuation search for one (frame, slices) candidate: evaluation is
// three-valued over a partial valuation, and the solver branches only on
// the first bit whose absence blocked a verdict. Small formulas touch few
// bits, which keeps the sweep far below full valuation enumeration.
struct ProductEval<'a> {
    f: &'a BimodalFormula,
    children: &'a [Vec<usize>],
    slices: &'a [u64],
    p: usize,
    vertical: VerticalLogic,
    vars: &'a [usize],
    bits: Vec<Option<bool>>,
}

impl<'a> ProductEval<'a> {
    fn idx(&self, var_pos: usize, u: usize, v: usize) -> usize {
        (var_pos * self.slices.len() + u) * self.p + v
    }

    fn eval3(
        &self,
        g: &BimodalFormula,
        u: usize,
        v: usize,
        unknown: &mut Option<usize>,
    ) -> Option<bool> {
        match g {
            BimodalFormula::Var(i) => {
                let k = self.vars.binary_search(i).expect("collected variable");
                let ix = self.idx(k, u, v);
                let b = self.bits[ix];
                if b.is_none() && unknown.is_none() {
                    *unknown = Some(ix);
                }
                b
            }
            BimodalFormula::Neg(h) => self.eval3(h, u, v, unknown).map(|b| !b),
            BimodalFormula::And(a, b) => {
                let left = self.eval3(a, u, v, unknown);
                if left == Some(false) {
                    return Some(false);
                }
                let right = self.eval3(b, u, v, unknown);
                if right == Some(false) {
                    return Some(false);
                }
                match (left, right) {
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                }
            }
            BimodalFormula::DiamondH(h) => {
                let mut open = false;
                for &c in &self.children[u] {
                    if self.slices[c] >> v & 1 == 0 {
                        continue;
                    }
                    match self.eval3(h, c, v, unknown) {
                        Some(true) => return Some(true),
                        Some(false) => {}
                        None => open = true,
                    }
                }
                if open {
                    None
                } else {
                    Some(false)
                }
            }
            BimodalFormula::DiamondV(h) => {
                let mut open = false;
                for v2 in 0..self.p {
                    if self.slices[u] >> v2 & 1 == 0 {
                        continue;
                    }
                    if self.vertical == VerticalLogic::Diff && v2 == v {
                        continue;
                    }
                    match self.eval3(h, u, v2, unknown) {
                        Some(true) => return Some(true),
                        Some(false) => {}
                        None => open = true,
                    }
                }
                if open {
                    None
                } else {
                    Some(false)
                }
            }
            BimodalFormula::DiamondU(_) => unreachable!("checked at entry"),
        }
    }

    fn solve(&mut self, u: usize, v: usize) -> bool {
        let f = self.f;
        let mut unknown = None;
        match self.eval3(f, u, v, &mut unknown) {
            Some(t) => t,
            None => {
                let ix = unknown.expect("an open verdict names a bit");
                for b in [false, true] {
                    self.bits[ix] = Some(b);
                    if self.solve(u, v) {
                        return true;
                    }
                }
                self.bits[ix] = None;
                false
            }
        }
    }

    fn into_model(self) -> BimodalModel {
        let mut valuation = BTreeMap::new();
        for (k, &var) in self.vars.iter().enumerate() {
            let mut rows = vec![0u64; self.slices.len()];
            for (u, row) in rows.iter_mut().enumerate() {
                for v in 0..self.p {
                    if self.bits[self.idx(k, u, v)] == Some(true) {
                        *row |= 1 << v;
                    }
                }
            }
            valuation.insert(var, rows);
        }
        BimodalModel {
            succ_h: self.children.to_vec(),
            points: self.p,
            slices: self.slices.to_vec(),
            valuation,
        }
    }
}

/// Brute-force satisfiability over subframes of products of a K frame with
/// an S5 or difference frame. Horizontal frames are the tree frames of the
/// model search within `bounds` (worlds, depth, branching); vertical frames
/// are point sets of size up to `bounds.max_objects`. Slices are nonempty,
/// jointly use every point, and follow `regime` along horizontal edges,
/// with `Constant` meaning every slice is full. Successful searches are
/// re-verified on an explicit [`BimodalModel`] before reporting.
///
/// # Panics
/// If the formula mentions `<u>`.
pub fn product_oracle(
    f: &BimodalFormula,
    vertical: VerticalLogic,
    regime: DomainRegime,
    bounds: &SearchBounds,
) -> bool {
    assert!(!uses_u(f), "product_oracle expects formulas over <h> and <v>");
    let vars = bimodal_vars(f);
    for frame in frames_for(bounds) {
        for p in 1..=bounds.max_objects {
            for slices in domain_fns(&frame, p, regime) {
                let mut search = ProductEval {
                    f,
                    children: &frame.children,
                    slices: &slices,
                    p,
                    vertical,
                    vars: &vars,
                    bits: vec![None; vars.len() * frame.k() * p],
                };
                for v0 in 0..p {
                    if slices[0] >> v0 & 1 == 1 && search.solve(0, v0) {
                        let model = search.into_model();
                        assert!(
                            model.holds(vertical, f, 0, v0),
                            "product witness fails re-verification"
                        );
                        return true;
                    }
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Domain-forcing family
// ---------------------------------------------------------------------------

/// The n-th member of the counting-free family whose decreasing-domain
/// models need large root domains: for each level `k` up to `n`, every
/// object at depth `k` sees successors splitting `P_k` both ways, while the
/// levels below `k` are frozen per object across the next step. All
/// quantifiers are plain, so the capacity is 0.
pub fn gen_theta(n: usize) -> Formula {
    let pred = |i: usize| atom(&format!("P{i}"));
    let mut levels = Vec::new();
    for k in 0..=n {
        let split = and(
            diamond(exists(pred(k))),
            diamond(exists(neg(pred(k)))),
        );
        let mut parts = vec![split];
        for l in 0..k {
            parts.push(and(
                implies(pred(l), boxm(forall(pred(l)))),
                implies(neg(pred(l)), boxm(forall(neg(pred(l))))),
            ));
        }
        levels.push(forall(box_pow(k, and_all(parts))));
    }
    and_all(levels)
}
