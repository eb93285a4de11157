//! Finite Kripke models with world-relative domains, the satisfaction
//! relation, domain-regime validation, and a brute-force satisfiability
//! oracle by exhaustive model enumeration.
//!
//! A model consists of a set of worlds with an accessibility relation, a
//! global object pool, a non-empty domain `d(w)` per world, and per-world
//! predicate extensions contained in `d(w)`. Quantifiers range over `d(w)`
//! by default (actualist quantification); [`CountScope::Pool`] switches the
//! counting clause to the whole pool for experimentation. Atoms involving an
//! object absent from `d(w)` are false.
//!
//! Models serialize to a line-oriented text format; see [`KripkeModel::to_text`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use crate::syntax::{subformulas, Formula};

mod enumerate;

pub use enumerate::{enumerate_models, oracle_sat, oracle_sat_scoped, oracle_sat_unpruned, ModelStream};
pub(crate) use enumerate::{
    decode_frame_assignment, domain_fns, encode_frame, frames_for, object_name, world_name,
    FrameGoal,
};

/// Restriction on how domains may change along the accessibility relation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum DomainRegime {
    /// Every world has the same domain.
    Constant,
    /// Domains grow along edges: `w R v` implies `d(w) ⊆ d(v)`.
    Expanding,
    /// Domains shrink along edges: `w R v` implies `d(w) ⊇ d(v)`.
    Decreasing,
    /// No restriction beyond non-emptiness.
    Varying,
}

impl DomainRegime {
    pub fn name(self) -> &'static str {
        match self {
            DomainRegime::Constant => "constant",
            DomainRegime::Expanding => "expanding",
            DomainRegime::Decreasing => "decreasing",
            DomainRegime::Varying => "varying",
        }
    }
}

impl fmt::Display for DomainRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which objects the counting clause ranges over.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum CountScope {
    /// Count over `d(w)`, the domain of the current world. This is the
    /// reading under which the relativization results hold, and the default
    /// everywhere.
    #[default]
    Domain,
    /// Count over the whole object pool, a compatibility switch for
    /// experimenting with the strict global-domain reading. Atoms are still
    /// false outside `d(w)`, so the two scopes agree on constant-domain
    /// models where the pool is fully used.
    Pool,
}

/// Caps for the bounded model search. Enumeration is meant for desk scale;
/// full sweeps stay comfortable up to roughly 4 worlds and 3 objects, beyond
/// that the stream is still correct but may be impractically long.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SearchBounds {
    pub max_worlds: usize,
    pub max_objects: usize,
    pub max_depth: usize,
    pub max_branching: usize,
}

impl SearchBounds {
    /// Arguments follow the field order: worlds, objects, depth, branching.
    pub fn new(max_worlds: usize, max_objects: usize, max_depth: usize, max_branching: usize) -> Self {
        SearchBounds { max_worlds, max_objects, max_depth, max_branching }
    }
}

impl fmt::Display for SearchBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "worlds<={} objects<={} depth<={} branching<={}",
            self.max_worlds, self.max_objects, self.max_depth, self.max_branching
        )
    }
}

pub(crate) const MAX_POOL: usize = 64;

/// All-ones mask over a pool of `p` objects.
pub(crate) fn mask_all(p: usize) -> u64 {
    if p == 0 {
        0
    } else {
        u64::MAX >> (64 - p)
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("missing {0} declaration")]
    Missing(&'static str),
    #[error("model has no worlds")]
    NoWorlds,
    #[error("too many objects: {0} exceeds the pool limit of {}", MAX_POOL)]
    TooManyObjects(usize),
    #[error("invalid name {0:?} (use letters, digits and underscores)")]
    BadName(String),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("unknown world {0:?}")]
    UnknownWorld(String),
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("{what} for {which} out of range")]
    OutOfRange { what: &'static str, which: String },
    #[error("{0} list has the wrong length")]
    LengthMismatch(&'static str),
}

/// A finite first-order Kripke model. Immutable after construction; the
/// checker's tables are per-call, so sharing a model across threads is safe.
///
/// Object sets (domains, predicate extensions) are stored as bit masks over
/// the pool, which caps the pool at 64 objects: far beyond anything the
/// bounded searches can sweep.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KripkeModel {
    world_names: Vec<String>,
    object_names: Vec<String>,
    succ: Vec<Vec<usize>>,
    domains: Vec<u64>,
    interp: BTreeMap<String, Vec<u64>>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_names(names: &[String]) -> Result<(), ModelError> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !valid_name(n) {
            return Err(ModelError::BadName(n.clone()));
        }
        if !seen.insert(n.as_str()) {
            return Err(ModelError::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

impl KripkeModel {
    /// Builds a model from index-based parts. Edges use world indices;
    /// `domains` and each interpretation vector are per-world bit masks over
    /// the object pool. Structural soundness (non-empty domains, extensions
    /// within domains) is *not* required here; that is [`validate_model`]'s
    /// job, so that defective models can be loaded and diagnosed.
    pub fn new(
        world_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        object_names: Vec<String>,
        domains: Vec<u64>,
        interp: BTreeMap<String, Vec<u64>>,
    ) -> Result<KripkeModel, ModelError> {
        if world_names.is_empty() {
            return Err(ModelError::NoWorlds);
        }
        if object_names.len() > MAX_POOL {
            return Err(ModelError::TooManyObjects(object_names.len()));
        }
        check_names(&world_names)?;
        check_names(&object_names)?;
        let k = world_names.len();
        let p = object_names.len();
        if domains.len() != k {
            return Err(ModelError::LengthMismatch("domain"));
        }
        let in_pool = mask_all(p);
        for (w, &d) in domains.iter().enumerate() {
            if d & !in_pool != 0 {
                return Err(ModelError::OutOfRange { what: "domain mask", which: world_names[w].clone() });
            }
        }
        let mut succ = vec![Vec::new(); k];
        for (u, v) in edges {
            if u >= k || v >= k {
                return Err(ModelError::OutOfRange { what: "edge", which: format!("{u}->{v}") });
            }
            succ[u].push(v);
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        let mut clean = BTreeMap::new();
        for (pred, masks) in interp {
            if !valid_name(&pred) {
                return Err(ModelError::BadName(pred));
            }
            if masks.len() != k {
                return Err(ModelError::LengthMismatch("interpretation"));
            }
            for m in &masks {
                if m & !in_pool != 0 {
                    return Err(ModelError::OutOfRange { what: "interpretation mask", which: pred.clone() });
                }
            }
            // Predicates empty at every world are equivalent to absent ones;
            // normalize so that equality and printing agree.
            if masks.iter().any(|&m| m != 0) {
                clean.insert(pred, masks);
            }
        }
        Ok(KripkeModel { world_names, object_names, succ, domains, interp: clean })
    }

    /// Name-based convenience constructor for tests and examples.
    /// `interp` entries are (predicate, world, members).
    pub fn build(
        worlds: &[&str],
        edges: &[(&str, &str)],
        objects: &[&str],
        domains: &[(&str, &[&str])],
        interp: &[(&str, &str, &[&str])],
    ) -> Result<KripkeModel, ModelError> {
        let world_names: Vec<String> = worlds.iter().map(|s| s.to_string()).collect();
        let object_names: Vec<String> = objects.iter().map(|s| s.to_string()).collect();
        let widx = |name: &str| {
            worlds
                .iter()
                .position(|w| *w == name)
                .ok_or_else(|| ModelError::UnknownWorld(name.to_string()))
        };
        let omask = |members: &[&str]| -> Result<u64, ModelError> {
            let mut m = 0u64;
            for o in members {
                let i = objects
                    .iter()
                    .position(|x| x == o)
                    .ok_or_else(|| ModelError::UnknownObject(o.to_string()))?;
                m |= 1 << i;
            }
            Ok(m)
        };
        let mut edge_idx = Vec::new();
        for (u, v) in edges {
            edge_idx.push((widx(u)?, widx(v)?));
        }
        let mut dom = vec![0u64; worlds.len()];
        for (w, members) in domains {
            dom[widx(w)?] = omask(members)?;
        }
        let mut int: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for (pred, w, members) in interp {
            let entry = int.entry(pred.to_string()).or_insert_with(|| vec![0; worlds.len()]);
            entry[widx(w)?] |= omask(members)?;
        }
        KripkeModel::new(world_names, edge_idx, object_names, dom, int)
    }

    pub fn n_worlds(&self) -> usize {
        self.world_names.len()
    }

    pub fn n_objects(&self) -> usize {
        self.object_names.len()
    }

    pub fn world_names(&self) -> &[String] {
        &self.world_names
    }

    pub fn object_names(&self) -> &[String] {
        &self.object_names
    }

    pub fn world_index(&self, name: &str) -> Option<usize> {
        self.world_names.iter().position(|w| w == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_names.iter().position(|o| o == name)
    }

    pub fn successors(&self, w: usize) -> &[usize] {
        &self.succ[w]
    }

    /// All edges as index pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, vs) in self.succ.iter().enumerate() {
            for &v in vs {
                out.push((u, v));
            }
        }
        out
    }

    pub fn domain_mask(&self, w: usize) -> u64 {
        self.domains[w]
    }

    pub fn domain_contains(&self, w: usize, a: usize) -> bool {
        self.domains[w] >> a & 1 == 1
    }

    pub fn domain_size(&self, w: usize) -> usize {
        self.domains[w].count_ones() as usize
    }

    /// Predicates with a non-empty extension somewhere, in sorted order.
    pub fn predicates(&self) -> impl Iterator<Item = &str> {
        self.interp.keys().map(|s| s.as_str())
    }

    /// Extension of `pred` at world `w` as a bit mask; absent predicates are
    /// empty everywhere.
    pub fn interp_mask(&self, pred: &str, w: usize) -> u64 {
        self.interp.get(pred).map_or(0, |masks| masks[w])
    }

    /// Flips one membership bit. Only used by the command-line tool's hidden
    /// self-test hook that provokes an internal-inconsistency report.
    pub(crate) fn flip_interp_bit(&mut self, pred: &str, w: usize, a: usize) {
        let masks = self.interp.entry(pred.to_string()).or_insert_with(|| vec![0; self.world_names.len()]);
        masks[w] ^= 1 << a;
    }

    /// Serializes to the line-oriented text format:
    ///
    /// ```text
    /// worlds: w0 w1
    /// edges: w0->w1
    /// objects: a b
    /// domain w0: a b
    /// domain w1: a
    /// pred P0 w0: a
    /// ```
    ///
    /// All name lists are sorted and single-space separated, so equal models
    /// print identically. `# comments` are accepted when reading but never
    /// written. Predicates that are empty at a world get no line.
    pub fn to_text(&self) -> String {
        let mut wsorted: Vec<usize> = (0..self.n_worlds()).collect();
        wsorted.sort_by(|&i, &j| self.world_names[i].cmp(&self.world_names[j]));
        let mut osorted: Vec<usize> = (0..self.n_objects()).collect();
        osorted.sort_by(|&i, &j| self.object_names[i].cmp(&self.object_names[j]));

        let names = |mask: u64| -> String {
            osorted
                .iter()
                .filter(|&&o| mask >> o & 1 == 1)
                .map(|&o| self.object_names[o].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let line = |header: String, rest: String, out: &mut String| {
            out.push_str(&header);
            out.push(':');
            if !rest.is_empty() {
                out.push(' ');
                out.push_str(&rest);
            }
            out.push('\n');
        };

        let mut out = String::new();
        let wnames: Vec<&str> = wsorted.iter().map(|&w| self.world_names[w].as_str()).collect();
        line("worlds".to_string(), wnames.join(" "), &mut out);
        let mut edges: Vec<String> = self
            .edges()
            .into_iter()
            .map(|(u, v)| format!("{}->{}", self.world_names[u], self.world_names[v]))
            .collect();
        edges.sort();
        line("edges".to_string(), edges.join(" "), &mut out);
        let onames: Vec<&str> = osorted.iter().map(|&o| self.object_names[o].as_str()).collect();
        line("objects".to_string(), onames.join(" "), &mut out);
        for &w in &wsorted {
            line(format!("domain {}", self.world_names[w]), names(self.domains[w]), &mut out);
        }
        for (pred, masks) in &self.interp {
            for &w in &wsorted {
                if masks[w] != 0 {
                    line(format!("pred {pred} {}", self.world_names[w]), names(masks[w]), &mut out);
                }
            }
        }
        out
    }

    /// Parses the text format produced by [`KripkeModel::to_text`].
    /// Declarations must precede use: `worlds:` and `objects:` before any
    /// `domain`/`pred` line. Worlds and objects take their indices from
    /// declaration order. Worlds without a `domain` line get an empty domain,
    /// which [`validate_model`] will then flag.
    pub fn from_text(text: &str) -> Result<KripkeModel, ModelError> {
        let mut world_names: Option<Vec<String>> = None;
        let mut object_names: Option<Vec<String>> = None;
        let mut edge_names: Vec<(String, String, usize)> = Vec::new();
        let mut saw_edges = false;
        let mut domain_lines: Vec<(String, Vec<String>, usize)> = Vec::new();
        let mut pred_lines: Vec<(String, String, Vec<String>, usize)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| ModelError::Format { line: ln, msg: "expected ':'".to_string() })?;
            let head_toks: Vec<&str> = head.split_whitespace().collect();
            let items: Vec<String> = rest.split_whitespace().map(|s| s.to_string()).collect();
            match head_toks.as_slice() {
                ["worlds"] => {
                    if world_names.replace(items).is_some() {
                        return Err(ModelError::Format { line: ln, msg: "repeated worlds line".to_string() });
                    }
                }
                ["objects"] => {
                    if object_names.replace(items).is_some() {
                        return Err(ModelError::Format { line: ln, msg: "repeated objects line".to_string() });
                    }
                }
                ["edges"] => {
                    if saw_edges {
                        return Err(ModelError::Format { line: ln, msg: "repeated edges line".to_string() });
                    }
                    saw_edges = true;
                    for item in items {
                        let (u, v) = item.split_once("->").ok_or_else(|| ModelError::Format {
                            line: ln,
                            msg: format!("edge {item:?} is not of the form u->v"),
                        })?;
                        edge_names.push((u.to_string(), v.to_string(), ln));
                    }
                }
                ["domain", w] => domain_lines.push((w.to_string(), items, ln)),
                ["pred", p, w] => pred_lines.push((p.to_string(), w.to_string(), items, ln)),
                _ => {
                    return Err(ModelError::Format { line: ln, msg: format!("unrecognized line {line:?}") });
                }
            }
        }

        let world_names = world_names.ok_or(ModelError::Missing("worlds"))?;
        let object_names = object_names.ok_or(ModelError::Missing("objects"))?;
        let widx: HashMap<&str, usize> =
            world_names.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let oidx: HashMap<&str, usize> =
            object_names.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();
        let lookup_w = |name: &str| widx.get(name).copied().ok_or_else(|| ModelError::UnknownWorld(name.to_string()));
        let mask_of = |items: &[String]| -> Result<u64, ModelError> {
            let mut m = 0u64;
            for o in items {
                m |= 1 << oidx.get(o.as_str()).copied().ok_or_else(|| ModelError::UnknownObject(o.clone()))?;
            }
            Ok(m)
        };

        let mut edges = Vec::new();
        for (u, v, _ln) in &edge_names {
            edges.push((lookup_w(u)?, lookup_w(v)?));
        }
        let mut domains = vec![None; world_names.len()];
        for (w, items, ln) in &domain_lines {
            let wi = lookup_w(w)?;
            if domains[wi].replace(mask_of(items)?).is_some() {
                return Err(ModelError::Format { line: *ln, msg: format!("repeated domain line for {w}") });
            }
        }
        let mut interp: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut seen_pred_world = std::collections::HashSet::new();
        for (p, w, items, ln) in &pred_lines {
            let wi = lookup_w(w)?;
            if !seen_pred_world.insert((p.clone(), wi)) {
                return Err(ModelError::Format { line: *ln, msg: format!("repeated pred line for {p} at {w}") });
            }
            let entry = interp.entry(p.clone()).or_insert_with(|| vec![0; world_names.len()]);
            entry[wi] = mask_of(items)?;
        }
        KripkeModel::new(
            world_names,
            edges,
            object_names,
            domains.into_iter().map(|d| d.unwrap_or(0)).collect(),
            interp,
        )
    }
}

impl fmt::Display for KripkeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// A violated model invariant, describing the offending rule and instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelViolation {
    /// Short rule identifier, e.g. `nonempty-domain`.
    pub rule: &'static str,
    /// Human-readable account of the violating instance.
    pub detail: String,
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Checks the structural invariants (non-empty domains, extensions within
/// domains) and the regime condition. Returns the first violation found, in
/// a fixed order, so diagnostics are deterministic.
pub fn validate_model(m: &KripkeModel, regime: DomainRegime) -> Result<(), ModelViolation> {
    for w in 0..m.n_worlds() {
        if m.domain_mask(w) == 0 {
            return Err(ModelViolation {
                rule: "nonempty-domain",
                detail: format!("domain of {} is empty", m.world_names[w]),
            });
        }
    }
    for pred in m.interp.keys() {
        for w in 0..m.n_worlds() {
            let stray = m.interp_mask(pred, w) & !m.domain_mask(w);
            if stray != 0 {
                let o = stray.trailing_zeros() as usize;
                return Err(ModelViolation {
                    rule: "interp-within-domain",
                    detail: format!(
                        "{pred} at {} includes {} which is outside the domain",
                        m.world_names[w], m.object_names[o]
                    ),
                });
            }
        }
    }
    match regime {
        DomainRegime::Constant => {
            for w in 1..m.n_worlds() {
                if m.domain_mask(w) != m.domain_mask(0) {
                    return Err(ModelViolation {
                        rule: "constant-domain",
                        detail: format!(
                            "domains of {} and {} differ",
                            m.world_names[0], m.world_names[w]
                        ),
                    });
                }
            }
        }
        DomainRegime::Expanding => {
            for (u, v) in m.edges() {
                let lost = m.domain_mask(u) & !m.domain_mask(v);
                if lost != 0 {
                    let o = lost.trailing_zeros() as usize;
                    return Err(ModelViolation {
                        rule: "expanding-domain",
                        detail: format!(
                            "edge {}->{} loses object {}",
                            m.world_names[u], m.world_names[v], m.object_names[o]
                        ),
                    });
                }
            }
        }
        DomainRegime::Decreasing => {
            for (u, v) in m.edges() {
                let gained = m.domain_mask(v) & !m.domain_mask(u);
                if gained != 0 {
                    let o = gained.trailing_zeros() as usize;
                    return Err(ModelViolation {
                        rule: "decreasing-domain",
                        detail: format!(
                            "edge {}->{} gains object {}",
                            m.world_names[u], m.world_names[v], m.object_names[o]
                        ),
                    });
                }
            }
        }
        DomainRegime::Varying => {}
    }
    Ok(())
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum CheckError {
    #[error("world index {0} out of range")]
    WorldOutOfRange(usize),
    #[error("object index {0} out of range")]
    ObjectOutOfRange(usize),
    #[error("object {object} is not in the domain of {world}")]
    NotInDomain { world: String, object: String },
}

fn entry_checks(m: &KripkeModel, w: usize, a: usize) -> Result<(), CheckError> {
    if w >= m.n_worlds() {
        return Err(CheckError::WorldOutOfRange(w));
    }
    if a >= m.n_objects() {
        return Err(CheckError::ObjectOutOfRange(a));
    }
    if !m.domain_contains(w, a) {
        return Err(CheckError::NotInDomain {
            world: m.world_names[w].clone(),
            object: m.object_names[a].clone(),
        });
    }
    Ok(())
}

/// Does `f` hold at world `w` under assignment `x := a`?
///
/// The entry call requires `w` in range and `a` in `d(w)`; during evaluation
/// the object may leave the domain of deeper worlds, where atoms then come
/// out false. Truth of every subformula at every (world, object) pair is
/// tabulated once, so the cost is linear in `|W| * |sub(f)|`.
pub fn check(m: &KripkeModel, w: usize, a: usize, f: &Formula) -> Result<bool, CheckError> {
    check_scoped(m, w, a, f, CountScope::Domain)
}

/// [`check`] with an explicit counting scope.
pub fn check_scoped(
    m: &KripkeModel,
    w: usize,
    a: usize,
    f: &Formula,
    scope: CountScope,
) -> Result<bool, CheckError> {
    entry_checks(m, w, a)?;
    let cf = compile(f);
    let table = truth_table(m, &cf, scope);
    Ok(table[cf.target][w] >> a & 1 == 1)
}

/// Independent reference evaluator: plain recursion, no tables, counting by
/// iterating the scope set. Exists to cross-check [`check`]; keep the two
/// implementations structurally different.
pub fn evaluate_plain(
    m: &KripkeModel,
    w: usize,
    a: usize,
    f: &Formula,
    scope: CountScope,
) -> Result<bool, CheckError> {
    entry_checks(m, w, a)?;
    Ok(plain_rec(m, w, a, f, scope))
}

fn plain_rec(m: &KripkeModel, w: usize, a: usize, f: &Formula, scope: CountScope) -> bool {
    match f {
        Formula::Atom(p) => m.domain_contains(w, a) && m.interp_mask(p, w) >> a & 1 == 1,
        Formula::Neg(g) => !plain_rec(m, w, a, g, scope),
        Formula::And(g, h) => plain_rec(m, w, a, g, scope) && plain_rec(m, w, a, h, scope),
        Formula::Diamond(g) => m.successors(w).iter().any(|&v| plain_rec(m, v, a, g, scope)),
        Formula::CountLeq(c, g) => {
            let members = (0..m.n_objects()).filter(|&b| match scope {
                CountScope::Domain => m.domain_contains(w, b),
                CountScope::Pool => true,
            });
            let cnt = members.filter(|&b| plain_rec(m, w, b, g, scope)).count();
            BigUint::from(cnt) <= *c
        }
    }
}

/// A formula flattened to its canonical subformula list, with child links
/// resolved to indices. Children precede parents, so a single forward pass
/// can fill truth tables bottom-up.
pub(crate) struct CompiledFormula {
    pub subs: Vec<Formula>,
    pub nodes: Vec<Node>,
    /// Sorted predicate signature.
    pub preds: Vec<String>,
    /// Index of the whole formula.
    pub target: usize,
    /// Indices of subformulas appearing directly under a Diamond.
    pub diamond_bodies: Vec<usize>,
}

pub(crate) enum Node {
    Atom(usize),
    Neg(usize),
    And(usize, usize),
    Diamond(usize),
    /// Bound saturated to u64; counts never exceed the pool size, so any
    /// larger bound behaves like "always satisfied".
    CountLeq(u64, usize),
}

pub(crate) fn compile(f: &Formula) -> CompiledFormula {
    let subs = subformulas(f);
    let idx: HashMap<&Formula, usize> = subs.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let mut preds: Vec<String> = Vec::new();
    for g in &subs {
        if let Formula::Atom(p) = g {
            preds.push(p.clone());
        }
    }
    preds.sort();
    preds.dedup();
    let mut nodes = Vec::with_capacity(subs.len());
    let mut diamond_bodies = Vec::new();
    for g in &subs {
        nodes.push(match g {
            Formula::Atom(p) => Node::Atom(preds.binary_search(p).unwrap()),
            Formula::Neg(c) => Node::Neg(idx[c.as_ref()]),
            Formula::And(c, d) => Node::And(idx[c.as_ref()], idx[d.as_ref()]),
            Formula::Diamond(c) => {
                diamond_bodies.push(idx[c.as_ref()]);
                Node::Diamond(idx[c.as_ref()])
            }
            Formula::CountLeq(c, d) => {
                Node::CountLeq(u64::try_from(c.clone()).unwrap_or(u64::MAX), idx[d.as_ref()])
            }
        });
    }
    diamond_bodies.sort_unstable();
    diamond_bodies.dedup();
    let target = idx[f];
    CompiledFormula { subs, nodes, preds, target, diamond_bodies }
}

pub(crate) fn truth_table(m: &KripkeModel, cf: &CompiledFormula, scope: CountScope) -> Vec<Vec<u64>> {
    let pool = mask_all(m.n_objects());
    rows_generic(
        cf,
        m.n_worlds(),
        |w| m.successors(w),
        |w| m.domain_mask(w),
        pool,
        scope,
        |pi, w| m.interp_mask(&cf.preds[pi], w),
    )
}

/// Shared row evaluator: the checker and the enumeration stream both feed it,
/// with their own storage behind the closures.
pub(crate) fn rows_generic<'a>(
    cf: &CompiledFormula,
    n_worlds: usize,
    succ: impl Fn(usize) -> &'a [usize],
    domain: impl Fn(usize) -> u64,
    pool: u64,
    scope: CountScope,
    interp: impl Fn(usize, usize) -> u64,
) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = vec![vec![0; n_worlds]; cf.nodes.len()];
    for (i, node) in cf.nodes.iter().enumerate() {
        for w in 0..n_worlds {
            rows[i][w] = match *node {
                Node::Atom(pi) => interp(pi, w) & domain(w),
                Node::Neg(c) => !rows[c][w] & pool,
                Node::And(c, d) => rows[c][w] & rows[d][w],
                Node::Diamond(c) => {
                    let mut r = 0;
                    for &v in succ(w) {
                        r |= rows[c][v];
                    }
                    r
                }
                Node::CountLeq(bound, c) => {
                    let smask = match scope {
                        CountScope::Domain => domain(w),
                        CountScope::Pool => pool,
                    };
                    if u64::from((rows[c][w] & smask).count_ones()) <= bound {
                        pool
                    } else {
                        0
                    }
                }
            };
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{self, parse};

    fn two_world_decreasing() -> KripkeModel {
        KripkeModel::build(
            &["w0", "w1"],
            &[("w0", "w1")],
            &["a", "b"],
            &[("w0", &["a", "b"]), ("w1", &["a"])],
            &[("P0", "w1", &["a"])],
        )
        .unwrap()
    }

    #[test]
    fn build_and_accessors() {
        let m = two_world_decreasing();
        assert_eq!(m.n_worlds(), 2);
        assert_eq!(m.n_objects(), 2);
        assert_eq!(m.successors(0), &[1]);
        assert_eq!(m.successors(1), &[] as &[usize]);
        assert_eq!(m.domain_mask(0), 0b11);
        assert_eq!(m.domain_mask(1), 0b01);
        assert_eq!(m.interp_mask("P0", 1), 0b01);
        assert_eq!(m.interp_mask("P0", 0), 0);
        assert_eq!(m.interp_mask("P9", 0), 0);
        assert_eq!(m.world_index("w1"), Some(1));
        assert_eq!(m.object_index("b"), Some(1));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = two_world_decreasing();
        let text = m.to_text();
        assert_eq!(
            text,
            "worlds: w0 w1\n\
             edges: w0->w1\n\
             objects: a b\n\
             domain w0: a b\n\
             domain w1: a\n\
             pred P0 w1: a\n"
        );
        let back = KripkeModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn from_text_accepts_comments_and_blank_lines() {
        let text = "# a model\nworlds: w0\nedges:\n\nobjects: a  # the only object\ndomain w0: a\n";
        let m = KripkeModel::from_text(text).unwrap();
        assert_eq!(m.n_worlds(), 1);
        assert_eq!(m.domain_mask(0), 1);
    }

    #[test]
    fn from_text_errors() {
        let e = KripkeModel::from_text("worlds: w0\nobjects: a\ndomain w9: a\n").unwrap_err();
        assert_eq!(e, ModelError::UnknownWorld("w9".to_string()));
        let e = KripkeModel::from_text("objects: a\ndomain w0: a\n").unwrap_err();
        assert_eq!(e, ModelError::Missing("worlds"));
        let e = KripkeModel::from_text("worlds: w0\nobjects: a\nnonsense here\n").unwrap_err();
        assert!(matches!(e, ModelError::Format { line: 3, .. }));
        let e = KripkeModel::from_text("worlds: w0\nobjects: a\nedges: w0\n").unwrap_err();
        assert!(matches!(e, ModelError::Format { line: 3, .. }));
        let e = KripkeModel::from_text("worlds: w0 w0\nobjects: a\n").unwrap_err();
        assert_eq!(e, ModelError::DuplicateName("w0".to_string()));
        let e = KripkeModel::from_text("worlds: w0\nobjects: a\npred P0 w0: a\npred P0 w0: a\n")
            .unwrap_err();
        assert!(matches!(e, ModelError::Format { line: 4, .. }));
    }

    #[test]
    fn validate_regimes() {
        let single = KripkeModel::build(&["w0"], &[], &["a"], &[("w0", &["a"])], &[]).unwrap();
        for regime in [
            DomainRegime::Constant,
            DomainRegime::Expanding,
            DomainRegime::Decreasing,
            DomainRegime::Varying,
        ] {
            assert!(validate_model(&single, regime).is_ok(), "{regime}");
        }

        let m = two_world_decreasing();
        assert!(validate_model(&m, DomainRegime::Decreasing).is_ok());
        assert!(validate_model(&m, DomainRegime::Varying).is_ok());
        let v = validate_model(&m, DomainRegime::Expanding).unwrap_err();
        assert_eq!(v.rule, "expanding-domain");
        assert!(v.detail.contains("w0->w1") && v.detail.contains('b'), "{v}");
        let v = validate_model(&m, DomainRegime::Constant).unwrap_err();
        assert_eq!(v.rule, "constant-domain");
    }

    #[test]
    fn validate_structural_violations() {
        let empty_dom =
            KripkeModel::build(&["w0", "w1"], &[], &["a"], &[("w0", &["a"])], &[]).unwrap();
        let v = validate_model(&empty_dom, DomainRegime::Varying).unwrap_err();
        assert_eq!(v.rule, "nonempty-domain");
        assert!(v.detail.contains("w1"));

        let stray = KripkeModel::build(
            &["w0"],
            &[],
            &["a", "b"],
            &[("w0", &["a"])],
            &[("P0", "w0", &["b"])],
        )
        .unwrap();
        let v = validate_model(&stray, DomainRegime::Varying).unwrap_err();
        assert_eq!(v.rule, "interp-within-domain");
        assert!(v.detail.contains("P0") && v.detail.contains('b'), "{v}");
    }

    #[test]
    fn check_clause_instances() {
        let m = KripkeModel::build(
            &["w0"],
            &[],
            &["a", "b"],
            &[("w0", &["a", "b"])],
            &[("P0", "w0", &["a", "b"])],
        )
        .unwrap();
        assert_eq!(check(&m, 0, 0, &parse("P0(x)").unwrap()), Ok(true));
        // Two objects satisfy P0, so "at most one" fails.
        assert_eq!(check(&m, 0, 0, &parse("E[<=1] x P0(x)").unwrap()), Ok(false));
        assert_eq!(check(&m, 0, 0, &parse("E[<=2] x P0(x)").unwrap()), Ok(true));

        let m2 = two_world_decreasing();
        assert_eq!(check(&m2, 0, 0, &parse("<> P0(x)").unwrap()), Ok(true));
        // b drops out of the domain at w1, so its atoms are false there...
        assert_eq!(check(&m2, 0, 1, &parse("<> P0(x)").unwrap()), Ok(false));
        // ...which makes their negations true.
        assert_eq!(check(&m2, 0, 1, &parse("<> ~P0(x)").unwrap()), Ok(true));
    }

    #[test]
    fn check_entry_errors() {
        let m = two_world_decreasing();
        let f = parse("P0(x)").unwrap();
        assert_eq!(check(&m, 5, 0, &f), Err(CheckError::WorldOutOfRange(5)));
        assert_eq!(check(&m, 0, 9, &f), Err(CheckError::ObjectOutOfRange(9)));
        assert_eq!(
            check(&m, 1, 1, &f),
            Err(CheckError::NotInDomain { world: "w1".to_string(), object: "b".to_string() })
        );
    }

    #[test]
    fn counting_scope_switch_changes_counts() {
        // Pool {a,b}, domain {a}, P0 = {a}. Over the domain no object
        // falsifies P0; over the pool, b does (atoms are false off-domain).
        let m = KripkeModel::build(
            &["w0"],
            &[],
            &["a", "b"],
            &[("w0", &["a"])],
            &[("P0", "w0", &["a"])],
        )
        .unwrap();
        let f = parse("E[<=0] x ~P0(x)").unwrap();
        assert_eq!(check_scoped(&m, 0, 0, &f, CountScope::Domain), Ok(true));
        assert_eq!(check_scoped(&m, 0, 0, &f, CountScope::Pool), Ok(false));
    }

    #[test]
    fn generalized_barcan_instance_on_decreasing_model() {
        // E[<=1]x <>P0(x) -> <>E[<=1]x P0(x) on a decreasing model: both
        // checkers must agree on the value at the root.
        let m = KripkeModel::build(
            &["w0", "w1"],
            &[("w0", "w1")],
            &["a", "b"],
            &[("w0", &["a", "b"]), ("w1", &["a", "b"])],
            &[("P0", "w1", &["a", "b"])],
        )
        .unwrap();
        assert!(validate_model(&m, DomainRegime::Decreasing).is_ok());
        let f = parse("E[<=1] x <>P0(x) -> <> E[<=1] x P0(x)").unwrap();
        let fast = check(&m, 0, 0, &f).unwrap();
        let slow = evaluate_plain(&m, 0, 0, &f, CountScope::Domain).unwrap();
        assert_eq!(fast, slow);
        // Both P0-objects at w1 falsify the antecedent's bound, making the
        // implication true vacuously at w0.
        assert!(fast);
    }

    #[test]
    fn checkers_agree_on_cyclic_user_models() {
        // Generated frames are trees, but user models may have cycles.
        let m = KripkeModel::build(
            &["u", "v"],
            &[("u", "v"), ("v", "u"), ("u", "u")],
            &["a"],
            &[("u", &["a"]), ("v", &["a"])],
            &[("P0", "u", &["a"])],
        )
        .unwrap();
        for text in ["<><>P0(x)", "<><><>~P0(x)", "[]<>P0(x)", "E[<=0] x <>~P0(x)"] {
            let f = parse(text).unwrap();
            assert_eq!(
                check(&m, 0, 0, &f).unwrap(),
                evaluate_plain(&m, 0, 0, &f, CountScope::Domain).unwrap(),
                "{text}"
            );
        }
    }

    /// Adds a fresh object mirroring `a` in every domain and every extension.
    fn clone_object(m: &KripkeModel, a: usize) -> KripkeModel {
        let p = m.n_objects();
        let mut objects: Vec<String> = m.object_names().to_vec();
        objects.push(format!("c{p}"));
        let lift = |mask: u64| mask | ((mask >> a & 1) << p);
        let domains = (0..m.n_worlds()).map(|w| lift(m.domain_mask(w))).collect();
        let mut interp = BTreeMap::new();
        for pred in m.predicates() {
            let masks = (0..m.n_worlds()).map(|w| lift(m.interp_mask(pred, w))).collect();
            interp.insert(pred.to_string(), masks);
        }
        KripkeModel::new(
            m.world_names().to_vec(),
            m.edges(),
            objects,
            domains,
            interp,
        )
        .unwrap()
    }

    #[test]
    fn duplicate_objects_beyond_capacity_change_nothing() {
        // Once cpt(f)+1 objects share a's full behavior, further copies of a
        // cannot tip any counting threshold.
        let base = two_world_decreasing();
        let formulas = [
            "E[<=1] x P0(x)",
            "<> E[<=2] x P0(x) & ~E[<=0] x ~P0(x)",
            "E[<=0] x (P0(x) & <>~P0(x))",
            "A x <> (P0(x) | ~P0(x))",
        ];
        for text in formulas {
            let f = parse(text).unwrap();
            let cap = usize::try_from(syntax::capacity(&f)).unwrap();
            let mut m = base.clone();
            for _ in 0..=cap {
                m = clone_object(&m, 0);
            }
            let before = check(&m, 0, 0, &f).unwrap();
            let bigger = clone_object(&m, 0);
            let after = check(&bigger, 0, 0, &f).unwrap();
            assert_eq!(before, after, "{text}");
        }
    }
}
