//! Types, quasistates and runs: a finite combinatorial abstraction of
//! constant-domain tree models.
//!
//! A *type* records which subformulas an object satisfies at a world, as a
//! bit-vector over the canonical subformula order. A *quasistate* is the set
//! of types realized at a world, each with a multiplicity saturated at one
//! past the largest counting bound, which is as far as the counting
//! quantifiers can see. A *quasimodel* arranges quasistates over a tree and
//! threads *runs* through them, one type per world per run, so that every
//! diamond is answered by a child and the multiplicities match the runs.
//!
//! The validators make those conditions executable and explain the first
//! failure they meet. [`model_to_quasimodel`] and [`quasimodel_to_model`]
//! convert between models and quasimodels without losing satisfaction, cell
//! by cell. [`prune`] squeezes any valid quasimodel below an explicit size
//! ceiling. [`sat_constant`] is the bounded constant-domain satisfiability
//! search itself; it works on models directly and leaves the quasimodel
//! calculus as its auditing layer.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use crate::propsearch::solve_first;
use crate::semantics::{
    compile, decode_frame_assignment, encode_frame, frames_for, mask_all, object_name,
    truth_table, validate_model, world_name, CompiledFormula, CountScope, DomainRegime, FrameGoal,
    KripkeModel, ModelError, ModelViolation, Node, SearchBounds, MAX_POOL,
};
use crate::syntax::{capacity, modal_depth, print, subformulas, Formula};

/// Which subformulas an object satisfies at a world, as a bit-vector over
/// the canonical subformula order of the formula under study.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TypeSet {
    n: usize,
    bits: Vec<u64>,
}

impl TypeSet {
    /// The all-false decision vector over `n_formulas` subformulas.
    pub fn empty(n_formulas: usize) -> TypeSet {
        TypeSet { n: n_formulas, bits: vec![0; (n_formulas + 63) / 64] }
    }

    /// A type with exactly the given subformula indices set.
    pub fn from_indices(n_formulas: usize, members: &[usize]) -> TypeSet {
        let mut t = TypeSet::empty(n_formulas);
        for &i in members {
            t.insert(i);
        }
        t
    }

    pub fn contains(&self, i: usize) -> bool {
        assert!(i < self.n, "subformula index {i} out of range (have {})", self.n);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "subformula index {i} out of range (have {})", self.n);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        assert!(i < self.n, "subformula index {i} out of range (have {})", self.n);
        self.bits[i / 64] &= !(1 << (i % 64));
    }

    /// How many subformulas the vector decides (the length, not the count
    /// of positive decisions; for that see [`TypeSet::card`]).
    pub fn n_formulas(&self) -> usize {
        self.n
    }

    pub fn card(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// The member subformula indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.contains(i)).collect()
    }
}

impl fmt::Display for TypeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        for i in 0..self.n {
            if self.contains(i) {
                if !first {
                    f.write_str(",")?;
                }
                write!(f, "{i}")?;
                first = false;
            }
        }
        f.write_str("}")
    }
}

/// The types realized at one world, each mapped to its multiplicity: how
/// many objects realize it, saturated at one past the largest counting
/// bound of the formula.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Quasistate {
    pub multiplicity: BTreeMap<TypeSet, u64>,
}

impl Quasistate {
    pub fn new() -> Quasistate {
        Quasistate::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (TypeSet, u64)>>(pairs: I) -> Quasistate {
        Quasistate { multiplicity: pairs.into_iter().collect() }
    }

    /// The realized types, in their canonical order.
    pub fn types(&self) -> impl Iterator<Item = &TypeSet> {
        self.multiplicity.keys()
    }
}

/// Quasistates over a tree of worlds, threaded by runs: `runs[i][w]` is the
/// type abstract object `i` realizes at world `w`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Quasimodel {
    /// Parent of each world; exactly one world, the root, has none.
    pub parent: Vec<Option<usize>>,
    /// The quasistate at each world.
    pub states: Vec<Quasistate>,
    /// One type per world for each abstract object index.
    pub runs: Vec<Vec<TypeSet>>,
}

/// A violated quasimodel invariant, mirroring [`ModelViolation`]: a short
/// rule identifier plus the offending instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuasiViolation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for QuasiViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Why a quasimodel operation could not run.
#[derive(Error, Debug, PartialEq, Eq)]
pub enum QuasiError {
    #[error("invalid quasimodel: {0}")]
    Invalid(QuasiViolation),
    #[error("model is not constant-domain: {0}")]
    Regime(ModelViolation),
    #[error("model is not a tree: {0}")]
    NotATree(String),
    #[error("model depth {depth} exceeds the formula's modal depth {limit}")]
    TooDeep { depth: usize, limit: usize },
    #[error("could not rebuild a model: {0}")]
    Build(#[from] ModelError),
}

/// Everything the validators need to know about the formula.
struct Ctx {
    cf: CompiledFormula,
    /// Largest counting bound, saturated to u64.
    cap: u64,
    md: usize,
}

fn ctx(f: &Formula) -> Ctx {
    Ctx {
        cf: compile(f),
        cap: u64::try_from(capacity(f)).unwrap_or(u64::MAX),
        md: modal_depth(f),
    }
}

fn diamond_nodes(cf: &CompiledFormula) -> Vec<(usize, usize)> {
    cf.nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match n {
            Node::Diamond(c) => Some((i, *c)),
            _ => None,
        })
        .collect()
}

fn type_problem(t: &TypeSet, cf: &CompiledFormula) -> Option<String> {
    if t.n_formulas() != cf.nodes.len() {
        return Some(format!(
            "decides {} subformulas, the formula has {}",
            t.n_formulas(),
            cf.nodes.len()
        ));
    }
    for (i, node) in cf.nodes.iter().enumerate() {
        match *node {
            Node::Neg(c) => {
                if t.contains(i) == t.contains(c) {
                    return Some(format!(
                        "{} and {} must disagree",
                        print(&cf.subs[i]),
                        print(&cf.subs[c])
                    ));
                }
            }
            Node::And(c, d) => {
                if t.contains(i) != (t.contains(c) && t.contains(d)) {
                    return Some(format!("{} disagrees with its conjuncts", print(&cf.subs[i])));
                }
            }
            _ => {}
        }
    }
    None
}

/// A type must decide every subformula, read each negation as the flip of
/// its body, and read each conjunction as the meet of its conjuncts.
pub fn validate_type(t: &TypeSet, f: &Formula) -> bool {
    type_problem(t, &compile(f)).is_none()
}

fn state_problem(q: &Quasistate, cf: &CompiledFormula, cap: u64) -> Option<(&'static str, String)> {
    for t in q.types() {
        if let Some(msg) = type_problem(t, cf) {
            return Some(("type-boolean", format!("type {t}: {msg}")));
        }
    }
    if q.multiplicity.is_empty() {
        return Some(("state-empty", "no types".to_string()));
    }
    let ceiling = cap.saturating_add(1);
    for (t, &mu) in &q.multiplicity {
        if mu == 0 || mu > ceiling {
            return Some((
                "multiplicity-range",
                format!("type {t} has multiplicity {mu}, allowed 1..={ceiling}"),
            ));
        }
    }
    for (i, node) in cf.nodes.iter().enumerate() {
        if let Node::CountLeq(bound, body) = *node {
            let realized = q
                .multiplicity
                .iter()
                .filter(|(t, _)| t.contains(body))
                .fold(0u64, |acc, (_, &mu)| acc.saturating_add(mu));
            let holds = realized <= bound;
            for t in q.types() {
                if t.contains(i) != holds {
                    return Some((
                        "count-saturation",
                        format!(
                            "type {t} {} {} but {realized} objects realize {}",
                            if t.contains(i) { "contains" } else { "lacks" },
                            print(&cf.subs[i]),
                            print(&cf.subs[body]),
                        ),
                    ));
                }
            }
        }
    }
    None
}

/// A quasistate must be a non-empty set of valid types with multiplicities
/// in range, and every type must agree with the state's own counting
/// verdicts: a counting quantifier belongs to a type exactly when the
/// summed multiplicity of the types realizing its body stays within the
/// bound.
pub fn validate_quasistate(q: &Quasistate, f: &Formula) -> bool {
    let cx = ctx(f);
    state_problem(q, &cx.cf, cx.cap).is_none()
}

/// Resolves the tree structure: the root, sorted child lists, and the
/// depth. Rejects multiple roots, dangling or cyclic parent links, and
/// length mismatches between the parallel vectors.
fn tree_shape(q: &Quasimodel) -> Result<(usize, Vec<Vec<usize>>, usize), QuasiViolation> {
    let shape = |detail: String| QuasiViolation { rule: "shape", detail };
    let k = q.states.len();
    if k == 0 {
        return Err(shape("no worlds".to_string()));
    }
    if q.parent.len() != k {
        return Err(shape(format!(
            "parent list covers {} worlds, states cover {k}",
            q.parent.len()
        )));
    }
    let mut root = None;
    let mut children = vec![Vec::new(); k];
    for (w, &p) in q.parent.iter().enumerate() {
        match p {
            None => {
                if let Some(r) = root {
                    return Err(shape(format!("two roots, w{r} and w{w}")));
                }
                root = Some(w);
            }
            Some(p) => {
                if p >= k {
                    return Err(shape(format!("parent of w{w} out of range")));
                }
                if p == w {
                    return Err(shape(format!("w{w} is its own parent")));
                }
                children[p].push(w);
            }
        }
    }
    let root = root.ok_or_else(|| shape("no root".to_string()))?;
    let mut depth_of = vec![usize::MAX; k];
    depth_of[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut depth = 0;
    while let Some(u) = queue.pop_front() {
        for &c in &children[u] {
            depth_of[c] = depth_of[u] + 1;
            depth = depth.max(depth_of[c]);
            queue.push_back(c);
        }
    }
    if let Some(w) = (0..k).find(|&w| depth_of[w] == usize::MAX) {
        return Err(shape(format!("w{w} is not reachable from the root")));
    }
    Ok((root, children, depth))
}

/// Checks a quasimodel end to end, in a fixed order: tree shape and depth,
/// every quasistate (types first), runs landing inside their quasistates, a
/// witness for the goal formula, diamond coherence and saturation along the
/// tree, and finally the multiplicity law tying run counts to quasistates.
/// The first violation found is returned, so diagnostics are deterministic.
pub fn validate_quasimodel(q: &Quasimodel, f: &Formula) -> Result<(), QuasiViolation> {
    let cx = ctx(f);
    let (_, children, depth) = tree_shape(q)?;
    if depth > cx.md {
        return Err(QuasiViolation {
            rule: "shape",
            detail: format!("depth {depth} exceeds the formula's modal depth {}", cx.md),
        });
    }
    let k = q.states.len();
    for (i, run) in q.runs.iter().enumerate() {
        if run.len() != k {
            return Err(QuasiViolation {
                rule: "shape",
                detail: format!("run r{i} visits {} worlds, expected {k}", run.len()),
            });
        }
    }
    for (w, st) in q.states.iter().enumerate() {
        if let Some((rule, detail)) = state_problem(st, &cx.cf, cx.cap) {
            return Err(QuasiViolation { rule, detail: format!("world w{w}: {detail}") });
        }
    }
    for (i, run) in q.runs.iter().enumerate() {
        for (w, t) in run.iter().enumerate() {
            if !q.states[w].multiplicity.contains_key(t) {
                return Err(QuasiViolation {
                    rule: "run-off-state",
                    detail: format!("run r{i} at world w{w} has type {t} outside the quasistate"),
                });
            }
        }
    }
    if !q.states.iter().any(|st| st.types().any(|t| t.contains(cx.cf.target))) {
        return Err(QuasiViolation {
            rule: "goal-unwitnessed",
            detail: "no type at any world contains the goal formula".to_string(),
        });
    }
    let diamonds = diamond_nodes(&cx.cf);
    for (i, run) in q.runs.iter().enumerate() {
        for w in 0..k {
            for &(d, body) in &diamonds {
                let has = run[w].contains(d);
                let answered = children[w].iter().any(|&v| run[v].contains(body));
                if answered && !has {
                    return Err(QuasiViolation {
                        rule: "diamond-unclaimed",
                        detail: format!(
                            "run r{i}: a child of w{w} realizes {} but w{w} lacks {}",
                            print(&cx.cf.subs[body]),
                            print(&cx.cf.subs[d]),
                        ),
                    });
                }
                if has && !answered {
                    return Err(QuasiViolation {
                        rule: "diamond-unwitnessed",
                        detail: format!(
                            "run r{i} at world w{w} contains {} but no child realizes {}",
                            print(&cx.cf.subs[d]),
                            print(&cx.cf.subs[body]),
                        ),
                    });
                }
            }
        }
    }
    let ceiling = cx.cap.saturating_add(1);
    for (w, st) in q.states.iter().enumerate() {
        let mut count: BTreeMap<&TypeSet, u64> = BTreeMap::new();
        for run in &q.runs {
            *count.entry(&run[w]).or_insert(0) += 1;
        }
        for (t, &mu) in &st.multiplicity {
            let c = count.get(t).copied().unwrap_or(0);
            if mu != c.min(ceiling) {
                return Err(QuasiViolation {
                    rule: "multiplicity-law",
                    detail: format!(
                        "world w{w} type {t}: multiplicity {mu}, but {c} runs pass through \
                         (saturation ceiling {ceiling})"
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Reads a quasimodel off a constant-domain tree model: one run per object,
/// each run's type at a world being the set of subformulas the object
/// satisfies there, with per-world multiplicities saturated at one past the
/// counting cap. The input must be constant-domain, a tree, and no deeper
/// than the formula's modal depth.
pub fn model_to_quasimodel(m: &KripkeModel, f: &Formula) -> Result<Quasimodel, QuasiError> {
    validate_model(m, DomainRegime::Constant).map_err(QuasiError::Regime)?;
    let cx = ctx(f);
    let k = m.n_worlds();
    let mut parent: Vec<Option<usize>> = vec![None; k];
    for (u, v) in m.edges() {
        if u == v {
            return Err(QuasiError::NotATree(format!("{} points at itself", m.world_names()[u])));
        }
        if parent[v].is_some() {
            return Err(QuasiError::NotATree(format!("{} has two parents", m.world_names()[v])));
        }
        parent[v] = Some(u);
    }
    let roots: Vec<usize> = (0..k).filter(|&w| parent[w].is_none()).collect();
    if roots.len() != 1 {
        return Err(QuasiError::NotATree(format!("{} parentless worlds", roots.len())));
    }
    let mut depth_of = vec![usize::MAX; k];
    depth_of[roots[0]] = 0;
    let mut queue = VecDeque::from([roots[0]]);
    let mut depth = 0;
    while let Some(u) = queue.pop_front() {
        for &v in m.successors(u) {
            depth_of[v] = depth_of[u] + 1;
            depth = depth.max(depth_of[v]);
            queue.push_back(v);
        }
    }
    if let Some(w) = (0..k).find(|&w| depth_of[w] == usize::MAX) {
        return Err(QuasiError::NotATree(format!(
            "{} is not reachable from the root",
            m.world_names()[w]
        )));
    }
    if depth > cx.md {
        return Err(QuasiError::TooDeep { depth, limit: cx.md });
    }
    let rows = truth_table(m, &cx.cf, CountScope::Domain);
    let n = cx.cf.nodes.len();
    let p = m.n_objects();
    let runs: Vec<Vec<TypeSet>> = (0..p)
        .map(|a| {
            (0..k)
                .map(|w| {
                    let mut t = TypeSet::empty(n);
                    for idx in 0..n {
                        if rows[idx][w] >> a & 1 == 1 {
                            t.insert(idx);
                        }
                    }
                    t
                })
                .collect()
        })
        .collect();
    let ceiling = cx.cap.saturating_add(1);
    let states: Vec<Quasistate> = (0..k)
        .map(|w| {
            let mut multiplicity: BTreeMap<TypeSet, u64> = BTreeMap::new();
            for run in &runs {
                *multiplicity.entry(run[w].clone()).or_insert(0) += 1;
            }
            for mu in multiplicity.values_mut() {
                *mu = (*mu).min(ceiling);
            }
            Quasistate { multiplicity }
        })
        .collect();
    Ok(Quasimodel { parent, states, runs })
}

/// Rebuilds a constant-domain model from a valid quasimodel: worlds and
/// tree as given, one object per run, atoms read off the runs. Returns the
/// model with the first world and run witnessing the goal formula. Every
/// subformula then holds at (world, object) exactly when it belongs to that
/// run's type there, so in particular the goal holds at the witness.
pub fn quasimodel_to_model(
    q: &Quasimodel,
    f: &Formula,
) -> Result<(KripkeModel, usize, usize), QuasiError> {
    validate_quasimodel(q, f).map_err(QuasiError::Invalid)?;
    let cx = ctx(f);
    let k = q.states.len();
    let p = q.runs.len();
    if p > MAX_POOL {
        return Err(QuasiError::Build(ModelError::TooManyObjects(p)));
    }
    let edges: Vec<(usize, usize)> =
        q.parent.iter().enumerate().filter_map(|(w, &pa)| pa.map(|u| (u, w))).collect();
    let mut interp: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (idx, node) in cx.cf.nodes.iter().enumerate() {
        if let Node::Atom(pi) = node {
            let masks: Vec<u64> = (0..k)
                .map(|w| {
                    let mut mask = 0u64;
                    for (i, run) in q.runs.iter().enumerate() {
                        if run[w].contains(idx) {
                            mask |= 1 << i;
                        }
                    }
                    mask
                })
                .collect();
            interp.insert(cx.cf.preds[*pi].clone(), masks);
        }
    }
    let model = KripkeModel::new(
        (0..k).map(world_name).collect(),
        edges,
        (0..p).map(object_name).collect(),
        vec![mask_all(p); k],
        interp,
    )
    .map_err(QuasiError::Build)?;
    for w in 0..k {
        for (i, run) in q.runs.iter().enumerate() {
            if run[w].contains(cx.cf.target) {
                return Ok((model, w, i));
            }
        }
    }
    unreachable!("validated quasimodels witness the goal formula");
}

/// Shrinks a valid quasimodel below an explicit size ceiling without losing
/// validity or the goal witness.
///
/// Stage one re-roots at the first world witnessing the goal and walks down
/// level by level, keeping for each kept world and type only the first
/// child answering each diamond of the type's canonical witness run, and
/// then only the first runs realizing each multiplicity. That alone can
/// strand diamonds of non-witness runs, so stage two repairs saturation by
/// duplicating each kept world once per transposition its parent may apply:
/// a child under the swap (i, s) lets run i borrow the witness run s's
/// subtree. Run counts per type are unchanged by swapping, so the
/// multiplicity law survives. Permutations stay sparse, as the list of
/// swaps accumulated along the branch, never as full tables.
///
/// The output sizes are asserted, with exact big-integer arithmetic,
/// against the ceilings m^2 * 2^(8nm) * C worlds and m * 2^(5nm) * C runs,
/// for n subformulas, modal depth m and counting cap C with the degenerate
/// factors clamped to one; the stage-one world count is likewise held under
/// m * 2^(3nm).
pub fn prune(q: &Quasimodel, f: &Formula) -> Result<Quasimodel, QuasiError> {
    validate_quasimodel(q, f).map_err(QuasiError::Invalid)?;
    let cx = ctx(f);
    let n = cx.cf.nodes.len();
    let (_, children, _) = tree_shape(q).expect("just validated");
    let diamonds = diamond_nodes(&cx.cf);

    let w0 = (0..q.states.len())
        .find(|&w| q.states[w].types().any(|t| t.contains(cx.cf.target)))
        .expect("validated quasimodels witness the goal formula");

    // The canonical witness run of each (world, type): the first run
    // through it.
    let s_run: Vec<BTreeMap<&TypeSet, usize>> = (0..q.states.len())
        .map(|w| {
            let mut first: BTreeMap<&TypeSet, usize> = BTreeMap::new();
            for (i, run) in q.runs.iter().enumerate() {
                first.entry(&run[w]).or_insert(i);
            }
            first
        })
        .collect();

    // Stage one, worlds: from the witness world down, each level keeps the
    // first child answering every diamond of every kept type.
    let mut order: Vec<usize> = vec![w0];
    let mut frontier: Vec<usize> = vec![w0];
    for _ in 0..cx.md {
        let mut next: BTreeSet<usize> = BTreeSet::new();
        for &w in &frontier {
            for t in q.states[w].types() {
                let si = s_run[w][t];
                for &(d, body) in &diamonds {
                    if t.contains(d) {
                        let v = children[w]
                            .iter()
                            .copied()
                            .find(|&v| q.runs[si][v].contains(body))
                            .expect("validated saturation answers every diamond");
                        next.insert(v);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next.into_iter().collect();
        order.extend_from_slice(&frontier);
    }
    let k1 = order.len();
    let mut new_id = vec![usize::MAX; q.states.len()];
    for (x, &w) in order.iter().enumerate() {
        new_id[w] = x;
    }

    let mh = cx.md.max(1);
    let ch = cx.cap.max(1);
    let two = BigUint::from(2u32);
    let exp = |factor: usize| u32::try_from(factor * n * mh).expect("size exponent fits in u32");
    let stage1_cap = BigUint::from(mh) * two.pow(exp(3));
    assert!(BigUint::from(k1) <= stage1_cap, "stage one kept {k1} worlds, above its ceiling");

    // Stage one, runs: for each kept (world, type), the first
    // multiplicity-many runs through it; the union is the new index set.
    let mut picked: BTreeSet<usize> = BTreeSet::new();
    for &w in &order {
        for (t, &mu) in &q.states[w].multiplicity {
            let mut left = mu;
            for (i, run) in q.runs.iter().enumerate() {
                if left == 0 {
                    break;
                }
                if run[w] == *t {
                    picked.insert(i);
                    left -= 1;
                }
            }
        }
    }
    let sel: Vec<usize> = picked.into_iter().collect();
    let r1 = sel.len();
    let runs_cap = BigUint::from(mh) * two.pow(exp(5)) * BigUint::from(ch);
    assert!(BigUint::from(r1) <= runs_cap, "stage one kept {r1} runs, above its ceiling");

    let runs1: Vec<Vec<TypeSet>> =
        sel.iter().map(|&i| order.iter().map(|&w| q.runs[i][w].clone()).collect()).collect();
    let children1: Vec<Vec<usize>> = order
        .iter()
        .map(|&w| children[w].iter().filter(|&&v| new_id[v] != usize::MAX).map(|&v| new_id[v]).collect())
        .collect();

    // Witness runs and transpositions in stage-one labels. Swapping a run
    // with the witness run of its own type at w never changes any run's
    // type at w, which is what keeps coherence and counts intact below.
    let s1: Vec<BTreeMap<&TypeSet, usize>> = (0..k1)
        .map(|x| {
            let mut first: BTreeMap<&TypeSet, usize> = BTreeMap::new();
            for (j, run) in runs1.iter().enumerate() {
                first.entry(&run[x]).or_insert(j);
            }
            first
        })
        .collect();
    let trans: Vec<Vec<Option<(usize, usize)>>> = (0..k1)
        .map(|x| {
            let mut set: BTreeSet<Option<(usize, usize)>> = BTreeSet::new();
            for (j, run) in runs1.iter().enumerate() {
                let s = s1[x][&run[x]];
                set.insert(if j == s { None } else { Some((j.min(s), j.max(s))) });
            }
            set.into_iter().collect()
        })
        .collect();

    // Stage two: unfold (world, permutation) pairs into a tree. A node's
    // permutation is the swap list accumulated from the root; distinct
    // swaps at the same parent always give distinct permutations, so no
    // deduplication is needed.
    struct PathNode {
        w: usize,
        swaps: Vec<(usize, usize)>,
        parent: Option<usize>,
    }
    let mut nodes = vec![PathNode { w: 0, swaps: Vec::new(), parent: None }];
    let mut level: Vec<usize> = vec![0];
    while !level.is_empty() {
        let mut next_level = Vec::new();
        for &ni in &level {
            let (w, swaps) = (nodes[ni].w, nodes[ni].swaps.clone());
            for &v in &children1[w] {
                for tau in &trans[w] {
                    let mut composed = swaps.clone();
                    if let Some(pair) = tau {
                        composed.push(*pair);
                    }
                    next_level.push(nodes.len());
                    nodes.push(PathNode { w: v, swaps: composed, parent: Some(ni) });
                }
            }
        }
        level = next_level;
    }
    let k2 = nodes.len();
    let worlds_cap = BigUint::from(mh * mh) * two.pow(exp(8)) * BigUint::from(ch);
    assert!(BigUint::from(k2) <= worlds_cap, "stage two built {k2} worlds, above its ceiling");

    fn apply(swaps: &[(usize, usize)], mut i: usize) -> usize {
        for &(a, b) in swaps {
            if i == a {
                i = b;
            } else if i == b {
                i = a;
            }
        }
        i
    }

    let out = Quasimodel {
        parent: nodes.iter().map(|nd| nd.parent).collect(),
        states: nodes.iter().map(|nd| q.states[order[nd.w]].clone()).collect(),
        runs: (0..r1)
            .map(|j| nodes.iter().map(|nd| runs1[apply(&nd.swaps, j)][nd.w].clone()).collect())
            .collect(),
    };
    debug_assert!(validate_quasimodel(&out, f).is_ok());
    Ok(out)
}

/// Deterministic iterative-deepening search for a constant-domain model,
/// reported with the witness world (always the root) and object.
///
/// Frames are trees no deeper than the formula's modal depth. The ladder
/// ascends (branching, objects) lexicographically, and at each rung tries
/// only the frames whose widest node has exactly that branching, so every
/// (frame, pool) combination is attempted once, smallest first. Per frame
/// the interpretations are searched as clauses; the first solution in the
/// fixed (world, object, subformula) order decodes to the witness model,
/// and the goal is re-checked at the root before returning.
///
/// Complete only relative to the bounds: `None` means no model within
/// them, not unsatisfiability.
pub fn sat_constant(f: &Formula, bounds: &SearchBounds) -> Option<(KripkeModel, usize, usize)> {
    let cx = ctx(f);
    let depth = cx.md.min(bounds.max_depth);
    let max_o = bounds.max_objects.min(MAX_POOL);
    for b in 1..=bounds.max_branching.max(1) {
        let eff = b.min(bounds.max_branching);
        let rung = SearchBounds::new(bounds.max_worlds, max_o, depth, eff);
        let frames: Vec<_> = frames_for(&rung)
            .into_iter()
            .filter(|fr| if b == 1 { true } else { fr.branching() == b })
            .collect();
        if frames.is_empty() {
            continue;
        }
        for o in 1..=max_o {
            for frame in &frames {
                let domains = vec![mask_all(o); frame.k()];
                let (cnf, vars) = encode_frame(
                    &cx.cf,
                    &frame.children,
                    &domains,
                    o,
                    CountScope::Domain,
                    FrameGoal::RootWitness,
                );
                if let Some(assign) = solve_first(&cnf) {
                    let model =
                        decode_frame_assignment(&cx.cf, &frame.children, &domains, o, &assign, &vars);
                    let rows = truth_table(&model, &cx.cf, CountScope::Domain);
                    let a = (0..o)
                        .find(|&a| rows[cx.cf.target][0] >> a & 1 == 1)
                        .expect("clause solutions survive re-checking");
                    return Some((model, 0, a));
                }
            }
        }
    }
    None
}

/// The documented default ladder for [`sat_constant`]: depth up to the
/// modal depth, branching up to the subformula count, objects up to
/// subformulas times one past the counting cap, worlds capped at eight.
/// Heuristic and incomplete; the theoretical world ceiling is exponential,
/// these defaults keep unbounded callers at desk scale.
pub fn default_bounds(f: &Formula) -> SearchBounds {
    let n = subformulas(f).len();
    let md = modal_depth(f);
    let cap = usize::try_from(capacity(f)).unwrap_or(usize::MAX);
    let objects = n.saturating_mul(cap.saturating_add(1)).min(MAX_POOL);
    let mut worlds = 1usize;
    let mut layer = 1usize;
    for _ in 0..md {
        layer = layer.saturating_mul(n);
        worlds = worlds.saturating_add(layer);
    }
    SearchBounds::new(worlds.min(8), objects, md, n)
}

impl Quasimodel {
    pub fn n_worlds(&self) -> usize {
        self.states.len()
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    /// Serializes to the diagnostic dump format: the world list, parent
    /// links, per-world types as subformula index sets with multiplicities,
    /// and per run the position of its type in each world's list. A type a
    /// run takes outside its world's list prints as `?`; such dumps do not
    /// read back, matching their invalidity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("worlds:");
        for w in 0..self.n_worlds() {
            out.push(' ');
            out.push_str(&world_name(w));
        }
        out.push('\n');
        for (w, &p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                out.push_str(&format!("parent w{w}: w{p}\n"));
            }
        }
        for (w, st) in self.states.iter().enumerate() {
            out.push_str(&format!("types w{w}:"));
            for (t, mu) in &st.multiplicity {
                out.push_str(&format!(" {t}x{mu}"));
            }
            out.push('\n');
        }
        for (i, run) in self.runs.iter().enumerate() {
            out.push_str(&format!("run r{i}:"));
            for (w, t) in run.iter().enumerate() {
                match self.states[w].multiplicity.keys().position(|u| u == t) {
                    Some(x) => out.push_str(&format!(" {x}")),
                    None => out.push_str(" ?"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses the dump format back. The subformula count sizes the type
    /// bit-vectors; the `worlds:` line must come first and name the worlds
    /// `w0 w1 ...` in order.
    pub fn from_text(text: &str, n_formulas: usize) -> Result<Quasimodel, ModelError> {
        fn bad(line: usize, msg: impl Into<String>) -> ModelError {
            ModelError::Format { line, msg: msg.into() }
        }
        fn world_of(tok: &str, k: usize, lno: usize) -> Result<usize, ModelError> {
            tok.strip_prefix('w')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&w| w < k)
                .ok_or_else(|| bad(lno, format!("unknown world {tok:?}")))
        }
        fn type_token(
            tok: &str,
            n_formulas: usize,
            lno: usize,
        ) -> Result<(TypeSet, u64), ModelError> {
            let rest = tok
                .strip_prefix('{')
                .ok_or_else(|| bad(lno, format!("expected a type like {{0,2}}x1, found {tok:?}")))?;
            let (inner, mult) =
                rest.split_once('}').ok_or_else(|| bad(lno, "unterminated type"))?;
            let mult = mult
                .strip_prefix('x')
                .ok_or_else(|| bad(lno, "expected xCOUNT after the type"))?;
            let mu: u64 = mult.parse().map_err(|_| bad(lno, "bad multiplicity"))?;
            let mut t = TypeSet::empty(n_formulas);
            if !inner.is_empty() {
                for part in inner.split(',') {
                    let i: usize =
                        part.parse().map_err(|_| bad(lno, "bad subformula index"))?;
                    if i >= n_formulas {
                        return Err(bad(lno, format!("subformula index {i} out of range")));
                    }
                    t.insert(i);
                }
            }
            Ok((t, mu))
        }

        let mut world_count: Option<usize> = None;
        let mut parent_lines: Vec<(usize, usize, usize)> = Vec::new();
        let mut type_lists: BTreeMap<usize, Vec<(TypeSet, u64)>> = BTreeMap::new();
        let mut run_lines: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) =
                line.split_once(':').ok_or_else(|| bad(lno, "expected a ':' after the header"))?;
            let head_tokens: Vec<&str> = head.split_whitespace().collect();
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if head_tokens.as_slice() != ["worlds"] && world_count.is_none() {
                return Err(bad(lno, "the worlds line must come first"));
            }
            match head_tokens.as_slice() {
                ["worlds"] => {
                    if world_count.is_some() {
                        return Err(bad(lno, "duplicate worlds line"));
                    }
                    for (w, tok) in fields.iter().enumerate() {
                        if *tok != world_name(w) {
                            return Err(bad(lno, format!("expected w{w}, found {tok:?}")));
                        }
                    }
                    world_count = Some(fields.len());
                }
                ["parent", wtok] => {
                    let k = world_count.unwrap();
                    let w = world_of(wtok, k, lno)?;
                    if fields.len() != 1 {
                        return Err(bad(lno, "parent lines name exactly one world"));
                    }
                    let p = world_of(fields[0], k, lno)?;
                    parent_lines.push((lno, w, p));
                }
                ["types", wtok] => {
                    let k = world_count.unwrap();
                    let w = world_of(wtok, k, lno)?;
                    if type_lists.contains_key(&w) {
                        return Err(bad(lno, format!("duplicate types line for w{w}")));
                    }
                    let mut list = Vec::new();
                    for tok in &fields {
                        let (t, mu) = type_token(tok, n_formulas, lno)?;
                        if list.iter().any(|(u, _)| *u == t) {
                            return Err(bad(lno, format!("repeated type {t}")));
                        }
                        list.push((t, mu));
                    }
                    type_lists.insert(w, list);
                }
                ["run", rtok] => {
                    let k = world_count.unwrap();
                    let r: usize = rtok
                        .strip_prefix('r')
                        .and_then(|d| d.parse().ok())
                        .ok_or_else(|| bad(lno, format!("bad run name {rtok:?}")))?;
                    if run_lines.contains_key(&r) {
                        return Err(bad(lno, format!("duplicate run r{r}")));
                    }
                    if fields.len() != k {
                        return Err(ModelError::LengthMismatch("run"));
                    }
                    let mut positions = Vec::with_capacity(k);
                    for tok in &fields {
                        positions
                            .push(tok.parse().map_err(|_| bad(lno, "bad type position"))?);
                    }
                    run_lines.insert(r, (lno, positions));
                }
                _ => return Err(bad(lno, format!("unknown header {head:?}"))),
            }
        }
        let k = world_count.ok_or(ModelError::Missing("worlds"))?;
        if k == 0 {
            return Err(ModelError::NoWorlds);
        }
        let mut parent: Vec<Option<usize>> = vec![None; k];
        for (lno, w, p) in parent_lines {
            if parent[w].is_some() {
                return Err(bad(lno, format!("duplicate parent line for w{w}")));
            }
            parent[w] = Some(p);
        }
        let lists: Vec<Vec<(TypeSet, u64)>> =
            (0..k).map(|w| type_lists.remove(&w).unwrap_or_default()).collect();
        let states: Vec<Quasistate> = lists
            .iter()
            .map(|list| Quasistate { multiplicity: list.iter().cloned().collect() })
            .collect();
        let mut runs = Vec::with_capacity(run_lines.len());
        for (expect, (r, (lno, positions))) in run_lines.into_iter().enumerate() {
            if r != expect {
                return Err(bad(lno, format!("runs must be numbered in order, found r{r}")));
            }
            let mut run = Vec::with_capacity(k);
            for (w, &pos) in positions.iter().enumerate() {
                let list = &lists[w];
                if pos >= list.len() {
                    return Err(bad(lno, format!("type position {pos} out of range for w{w}")));
                }
                run.push(list[pos].0.clone());
            }
            runs.push(run);
        }
        Ok(Quasimodel { parent, states, runs })
    }
}

impl fmt::Display for Quasimodel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{check, oracle_sat};
    use crate::syntax::parse;

    fn ff(s: &str) -> Formula {
        parse(s).unwrap()
    }

    fn bounds(w: usize, o: usize, d: usize, b: usize) -> SearchBounds {
        SearchBounds::new(w, o, d, b)
    }

    fn model(
        worlds: usize,
        edges: &[(usize, usize)],
        objects: usize,
        interp: &[(&str, &[u64])],
    ) -> KripkeModel {
        KripkeModel::new(
            (0..worlds).map(world_name).collect(),
            edges.to_vec(),
            (0..objects).map(object_name).collect(),
            vec![mask_all(objects); worlds],
            interp.iter().map(|(p, masks)| (p.to_string(), masks.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn type_sets_print_and_index() {
        let t = TypeSet::from_indices(3, &[0, 2]);
        assert_eq!(t.indices(), vec![0, 2]);
        assert_eq!(t.card(), 2);
        assert_eq!(t.n_formulas(), 3);
        assert_eq!(t.to_string(), "{0,2}");
        assert_eq!(TypeSet::empty(3).to_string(), "{}");
        let mut u = t.clone();
        u.remove(2);
        u.insert(1);
        assert_eq!(u, TypeSet::from_indices(3, &[0, 1]));
    }

    #[test]
    fn type_validation_examples() {
        let f = ff("~P0(x)");
        assert!(!validate_type(&TypeSet::from_indices(1, &[0]), &f));
        assert!(validate_type(&TypeSet::from_indices(2, &[0]), &f));
        assert!(validate_type(&TypeSet::from_indices(2, &[1]), &f));
        assert!(!validate_type(&TypeSet::from_indices(2, &[0, 1]), &f));
        assert!(!validate_type(&TypeSet::empty(2), &f));

        let g = ff("P0(x) & P1(x)");
        assert!(!validate_type(&TypeSet::from_indices(3, &[0, 2]), &g));
        assert!(validate_type(&TypeSet::from_indices(3, &[0, 1, 2]), &g));
        assert!(validate_type(&TypeSet::from_indices(3, &[1]), &g));
    }

    #[test]
    fn quasistate_counting_examples() {
        let f = ff("E[<=1] x P0(x)");
        let t_in = TypeSet::from_indices(2, &[0, 1]);
        let t_out = TypeSet::from_indices(2, &[1]);
        let t_over = TypeSet::from_indices(2, &[0]);

        let ok = Quasistate::from_pairs([(t_in.clone(), 1), (t_out.clone(), 2)]);
        assert!(validate_quasistate(&ok, &f));
        let too_many = Quasistate::from_pairs([(t_in.clone(), 2), (t_out, 1)]);
        assert!(!validate_quasistate(&too_many, &f));
        let capped = Quasistate::from_pairs([(t_over, 2)]);
        assert!(validate_quasistate(&capped, &f));
        let lying = Quasistate::from_pairs([(t_in.clone(), 2)]);
        assert!(!validate_quasistate(&lying, &f));
        assert!(!validate_quasistate(&Quasistate::from_pairs([(t_in.clone(), 0)]), &f));
        assert!(!validate_quasistate(&Quasistate::from_pairs([(t_in, 3)]), &f));
        assert!(!validate_quasistate(&Quasistate::new(), &f));
    }

    #[test]
    fn extraction_from_single_world_model() {
        let f = ff("E x P0(x)");
        let m = model(1, &[], 1, &[("P0", &[1])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        assert_eq!(q.n_worlds(), 1);
        assert_eq!(q.n_runs(), 1);
        assert_eq!(q.states[0].multiplicity.len(), 1);
        validate_quasimodel(&q, &f).unwrap();

        let (m2, w, a) = quasimodel_to_model(&q, &f).unwrap();
        assert_eq!((w, a), (0, 0));
        assert_eq!(m2.n_objects(), 1);
        assert!(check(&m2, w, a, &f).unwrap());
    }

    #[test]
    fn multiplicity_caps_one_past_the_bound() {
        let f = ff("E[<=1] x P0(x)");
        let m = model(1, &[], 3, &[("P0", &[0])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        assert_eq!(q.n_runs(), 3);
        let mus: Vec<u64> = q.states[0].multiplicity.values().copied().collect();
        assert_eq!(mus, vec![2]);
        validate_quasimodel(&q, &f).unwrap();
    }

    #[test]
    fn deleting_a_run_breaks_the_multiplicity_law() {
        let f = ff("E[<=2] x P0(x)");
        let m = model(1, &[], 2, &[("P0", &[0b11])]);
        let mut q = model_to_quasimodel(&m, &f).unwrap();
        validate_quasimodel(&q, &f).unwrap();
        q.runs.pop();
        assert_eq!(validate_quasimodel(&q, &f).unwrap_err().rule, "multiplicity-law");
    }

    #[test]
    fn flipping_a_diamond_decision() {
        let f = ff("<>P0(x)");
        let m = model(2, &[(0, 1)], 2, &[("P0", &[0, 0b11])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        validate_quasimodel(&q, &f).unwrap();
        let t_dia = TypeSet::from_indices(2, &[1]);
        let t_blank = TypeSet::empty(2);

        // Drop the diamond from one run while a child still realizes the body.
        let mut unclaimed = q.clone();
        unclaimed.runs[1][0] = t_blank.clone();
        unclaimed.states[0] = Quasistate::from_pairs([(t_dia, 1), (t_blank.clone(), 1)]);
        assert_eq!(validate_quasimodel(&unclaimed, &f).unwrap_err().rule, "diamond-unclaimed");

        // Keep the diamond while the run's child stops realizing the body.
        let mut unwitnessed = q.clone();
        unwitnessed.runs[1][1] = t_blank.clone();
        unwitnessed.states[1] =
            Quasistate::from_pairs([(TypeSet::from_indices(2, &[0]), 1), (t_blank, 1)]);
        assert_eq!(validate_quasimodel(&unwitnessed, &f).unwrap_err().rule, "diamond-unwitnessed");
    }

    #[test]
    fn goal_must_be_witnessed() {
        let f = ff("E x P0(x)");
        let m = model(1, &[], 1, &[("P0", &[0])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        assert_eq!(validate_quasimodel(&q, &f).unwrap_err().rule, "goal-unwitnessed");
    }

    #[test]
    fn runs_stay_inside_their_quasistates() {
        let f = ff("~P0(x)");
        let m = model(1, &[], 1, &[("P0", &[0])]);
        let mut q = model_to_quasimodel(&m, &f).unwrap();
        q.runs[0][0] = TypeSet::from_indices(2, &[0]);
        assert_eq!(validate_quasimodel(&q, &f).unwrap_err().rule, "run-off-state");
    }

    #[test]
    fn run_length_must_match_world_count() {
        let f = ff("E x P0(x)");
        let m = model(1, &[], 1, &[("P0", &[1])]);
        let mut q = model_to_quasimodel(&m, &f).unwrap();
        let extra = q.runs[0][0].clone();
        q.runs[0].push(extra);
        assert_eq!(validate_quasimodel(&q, &f).unwrap_err().rule, "shape");
    }

    #[test]
    fn round_trip_preserves_satisfaction() {
        let samples = [
            "E x P0(x)",
            "A x P0(x)",
            "E[<=1] x P0(x)",
            "E[>=2] x P0(x)",
            "E[=1] x P0(x)",
            "<>E x P0(x)",
            "<> <> P0(x)",
            "<>P0(x) & E[<=1] x P0(x)",
            "~E x (P0(x) & ~P0(x))",
        ];
        for src in samples {
            let f = ff(src);
            let b = bounds(4, 2, modal_depth(&f), 2);
            let (m, w, a) = oracle_sat(&f, DomainRegime::Constant, &b)
                .unwrap_or_else(|| panic!("{src} should have a small witness"));
            let q = model_to_quasimodel(&m, &f).expect(src);
            validate_quasimodel(&q, &f).expect(src);
            let cf = compile(&f);
            for st in &q.states {
                assert!(st.multiplicity.len() <= 1 << cf.nodes.len());
            }
            assert!(q.runs[a][w].contains(cf.target), "{src}");

            let (m2, w2, a2) = quasimodel_to_model(&q, &f).expect(src);
            assert!(check(&m2, w2, a2, &f).unwrap(), "{src}");
            for (idx, sub) in cf.subs.iter().enumerate() {
                for ww in 0..m2.n_worlds() {
                    for (i, run) in q.runs.iter().enumerate() {
                        assert_eq!(
                            check(&m2, ww, i, sub).unwrap(),
                            run[ww].contains(idx),
                            "{src} at world {ww}, object {i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn prune_on_extracted_witnesses() {
        let samples =
            ["<>E x P0(x)", "<> <> P0(x)", "<>E[>=2] x P0(x)", "E[<=1] x P0(x) & <>P0(x)"];
        for src in samples {
            let f = ff(src);
            let b = bounds(4, 2, modal_depth(&f), 2);
            let (m, _, _) = oracle_sat(&f, DomainRegime::Constant, &b)
                .unwrap_or_else(|| panic!("{src} should have a small witness"));
            let q = model_to_quasimodel(&m, &f).expect(src);
            let p = prune(&q, &f).expect(src);
            validate_quasimodel(&p, &f).expect(src);
            assert_eq!(p.parent[0], None, "{src}");
            let target = compile(&f).target;
            assert!(p.states[0].types().any(|t| t.contains(target)), "{src}");

            let n = u32::try_from(subformulas(&f).len()).unwrap();
            let mh = modal_depth(&f).max(1);
            let ch = u64::try_from(capacity(&f)).unwrap_or(u64::MAX).max(1);
            let mhe = u32::try_from(mh).unwrap();
            let world_cap =
                BigUint::from(mh * mh) * BigUint::from(2u32).pow(8 * n * mhe) * BigUint::from(ch);
            let run_cap =
                BigUint::from(mh) * BigUint::from(2u32).pow(5 * n * mhe) * BigUint::from(ch);
            assert!(BigUint::from(p.n_worlds()) <= world_cap, "{src}");
            assert!(BigUint::from(p.n_runs()) <= run_cap, "{src}");

            let (m2, w2, a2) = quasimodel_to_model(&p, &f).expect(src);
            assert!(check(&m2, w2, a2, &f).unwrap(), "{src}");
            assert_eq!(prune(&q, &f).unwrap(), p, "{src}");
        }
    }

    #[test]
    fn prune_with_a_single_run_never_grows() {
        let samples = ["<>P0(x)", "<> <> P0(x)", "<>(P0(x) & <>P0(x))"];
        for src in samples {
            let f = ff(src);
            let b = bounds(5, 1, modal_depth(&f), 2);
            let (m, _, _) = oracle_sat(&f, DomainRegime::Constant, &b)
                .unwrap_or_else(|| panic!("{src} should have a small witness"));
            let q = model_to_quasimodel(&m, &f).expect(src);
            let p = prune(&q, &f).expect(src);
            assert_eq!(p.n_runs(), 1, "{src}");
            assert!(p.n_worlds() <= q.n_worlds(), "{src}");
        }
    }

    #[test]
    fn prune_duplicates_worlds_for_interchangeable_objects() {
        let f = ff("<>E[<=2] x P0(x)");
        let m = model(2, &[(0, 1)], 2, &[("P0", &[0, 0b11])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        validate_quasimodel(&q, &f).unwrap();
        assert_eq!(q.n_worlds(), 2);

        // Both objects share every type, so the child world is kept once per
        // choice of which run may borrow the witness subtree there.
        let p = prune(&q, &f).unwrap();
        validate_quasimodel(&p, &f).unwrap();
        assert_eq!(p.n_worlds(), 3);
        assert_eq!(p.n_runs(), 2);
    }

    #[test]
    fn sat_constant_examples() {
        assert!(sat_constant(&ff("E x (P0(x) & ~P0(x))"), &bounds(4, 3, 2, 2)).is_none());

        let f = ff("E x P0(x)");
        let (m, w, a) = sat_constant(&f, &bounds(4, 3, 2, 2)).unwrap();
        assert_eq!((m.n_worlds(), m.n_objects(), w, a), (1, 1, 0, 0));
        assert!(check(&m, w, a, &f).unwrap());

        let g = ff("<>E[>=2] x (P1(x) & P2(x))");
        let (m, w, a) = sat_constant(&g, &bounds(4, 3, 2, 2)).unwrap();
        assert_eq!(w, 0);
        assert_eq!(m.n_worlds(), 2);
        assert_eq!(m.n_objects(), 2);
        assert!(check(&m, w, a, &g).unwrap());
        validate_model(&m, DomainRegime::Constant).unwrap();
    }

    #[test]
    fn sat_constant_agrees_with_the_oracle() {
        let samples = [
            "P0(x)",
            "~P0(x)",
            "P0(x) & ~P0(x)",
            "E x P0(x)",
            "A x P0(x)",
            "E[<=0] x P0(x)",
            "E[>=2] x P0(x)",
            "E[>=4] x P0(x)",
            "E[=1] x P0(x)",
            "<>P0(x)",
            "<>~E x P0(x)",
            "[]P0(x) & <>~P0(x)",
            "<> <> E[>=2] x P0(x)",
        ];
        let b = bounds(4, 3, 2, 2);
        for src in samples {
            let f = ff(src);
            let found = sat_constant(&f, &b);
            assert_eq!(
                found.is_some(),
                oracle_sat(&f, DomainRegime::Constant, &b).is_some(),
                "{src}"
            );
            if let Some((m, w, a)) = found {
                assert!(check(&m, w, a, &f).unwrap(), "{src}");
                validate_model(&m, DomainRegime::Constant).unwrap();
            }
        }
    }

    #[test]
    fn default_bounds_read_the_formula() {
        assert_eq!(default_bounds(&ff("E[<=1] x P0(x)")), bounds(1, 4, 0, 2));
        assert_eq!(default_bounds(&ff("<>P0(x)")), bounds(3, 2, 1, 2));
    }

    #[test]
    fn dump_round_trip() {
        let f = ff("<>E[<=1] x P0(x)");
        let m = model(2, &[(0, 1)], 2, &[("P0", &[0, 0b01])]);
        let q = model_to_quasimodel(&m, &f).unwrap();
        let text = q.to_text();
        let expected = "worlds: w0 w1\n\
                        parent w1: w0\n\
                        types w0: {1,2}x2\n\
                        types w1: {1}x1 {0,1}x1\n\
                        run r0: 0 1\n\
                        run r1: 0 0\n";
        assert_eq!(text, expected);
        assert_eq!(Quasimodel::from_text(&text, 3).unwrap(), q);
        assert_eq!(format!("{q}"), text);

        let commented = format!("# diagnostic dump\n{text}\n");
        assert_eq!(Quasimodel::from_text(&commented, 3).unwrap(), q);

        let reordered = "parent w1: w0\nworlds: w0 w1\n";
        assert!(matches!(Quasimodel::from_text(reordered, 3), Err(ModelError::Format { .. })));
        let bad_pos = text.replace("run r1: 0 0", "run r1: 0 5");
        assert!(matches!(Quasimodel::from_text(&bad_pos, 3), Err(ModelError::Format { .. })));
        let bad_names = text.replace("worlds: w0 w1", "worlds: w0 w5");
        assert!(matches!(Quasimodel::from_text(&bad_names, 3), Err(ModelError::Format { .. })));
    }

    #[test]
    fn structural_errors() {
        let f = ff("<>P0(x)");

        let cyclic = model(2, &[(0, 1), (1, 0)], 1, &[("P0", &[0, 1])]);
        assert!(matches!(model_to_quasimodel(&cyclic, &f), Err(QuasiError::NotATree(_))));

        let shared = model(3, &[(0, 2), (1, 2)], 1, &[("P0", &[0, 0, 1])]);
        assert!(matches!(model_to_quasimodel(&shared, &f), Err(QuasiError::NotATree(_))));

        let flat = ff("P0(x)");
        let chain = model(2, &[(0, 1)], 1, &[("P0", &[1, 1])]);
        assert_eq!(
            model_to_quasimodel(&chain, &flat),
            Err(QuasiError::TooDeep { depth: 1, limit: 0 })
        );

        let shrinking = KripkeModel::new(
            vec!["w0".into(), "w1".into()],
            vec![(0, 1)],
            vec!["a".into(), "b".into()],
            vec![0b11, 0b01],
            [("P0".to_string(), vec![0, 0])].into_iter().collect(),
        )
        .unwrap();
        assert!(matches!(model_to_quasimodel(&shrinking, &f), Err(QuasiError::Regime(_))));

        let starved =
            Quasimodel { parent: vec![None], states: vec![Quasistate::new()], runs: Vec::new() };
        match quasimodel_to_model(&starved, &flat) {
            Err(QuasiError::Invalid(v)) => assert_eq!(v.rule, "state-empty"),
            other => panic!("expected a state-empty violation, got {other:?}"),
        }
    }
}
