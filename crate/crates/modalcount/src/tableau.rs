//! A recursive tableau deciding expanding-domain satisfiability.
//!
//! Over expanding domains every satisfiable formula has a tree model whose
//! domains stay within the polynomial cap [`domain_cap`]. The tableau
//! searches those models world by world without ever materializing one: a
//! world is described by a [`TableauLabel`] assigning each domain index the
//! set of subformulas it satisfies, [`check_local`] screens a label against
//! the Boolean and counting conditions that hold inside a single world, and
//! [`qkworld`] recursively demands a coherent successor label for every
//! diamond, shrinking the remaining depth until it exhausts the formula's
//! modal depth. [`sat_expanding`] drives the search from the root and
//! rebuilds an explicit expanding-domain witness model from the successful
//! recursion, re-checking it before returning.
//!
//! The search is a deterministic backtracking realization of a
//! nondeterministic procedure: candidate labels are enumerated in a fixed
//! canonical order, results are memoized per canonical label (the memo can
//! be switched off to observe the raw recursion), and redundant candidates
//! are skipped only where a domain-shrinking argument shows a smaller
//! candidate succeeds whenever a larger one does.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::semantics::{
    check, compile, mask_all, object_name, validate_model, world_name, CompiledFormula,
    DomainRegime, KripkeModel, Node, MAX_POOL,
};
use crate::syntax::{capacity, modal_depth, subformulas, Formula};

/// The global domain-size cap: subformula count times modal depth times one
/// past the largest counting bound, with a zero modal depth treated as one
/// so the cap never drops below the subformula count. Any formula
/// satisfiable over expanding domains has a tree model whose domains stay
/// within this bound.
pub fn domain_cap(f: &Formula) -> usize {
    let n = subformulas(f).len();
    let m = modal_depth(f).max(1);
    let c1 = usize::try_from(capacity(f)).unwrap_or(usize::MAX).saturating_add(1);
    n.saturating_mul(m).saturating_mul(c1)
}

/// The fixed inputs of a tableau run: the formula's subformula closure, the
/// global domain cap, and the recursion depth budget.
pub struct TableauParams {
    pub(crate) cf: CompiledFormula,
    /// Largest domain size any label may reach.
    pub cap: usize,
    /// Remaining recursion depth at the root, normally the modal depth.
    pub depth: usize,
}

impl TableauParams {
    pub fn new(f: &Formula) -> TableauParams {
        let cf = compile(f);
        assert!(
            cf.nodes.len() <= 64,
            "formulas with more than 64 subformulas exceed the label word width"
        );
        TableauParams { cf, cap: domain_cap(f), depth: modal_depth(f) }
    }

    /// Same closure with a different domain cap, for monotonicity checks.
    pub fn with_cap(mut self, cap: usize) -> TableauParams {
        self.cap = cap;
        self
    }

    /// Same closure with a different depth budget.
    pub fn with_depth(mut self, depth: usize) -> TableauParams {
        self.depth = depth;
        self
    }

    pub fn n_formulas(&self) -> usize {
        self.cf.nodes.len()
    }
}

/// A world description: domain index `i` satisfies exactly the subformulas
/// whose bits are set in `sets[i]`, in the canonical subformula order. The
/// label's domain is `0..sets.len()`, so the domain size is implicit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TableauLabel {
    pub sets: Vec<u64>,
}

impl TableauLabel {
    pub fn new(sets: Vec<u64>) -> TableauLabel {
        TableauLabel { sets }
    }

    /// Builds a label from explicit member lists of subformula indices, one
    /// list per domain index.
    pub fn from_members(members: &[&[usize]]) -> TableauLabel {
        TableauLabel {
            sets: members
                .iter()
                .map(|idxs| {
                    idxs.iter().fold(0u64, |m, &i| {
                        assert!(i < 64, "subformula index {i} out of the label word width");
                        m | 1 << i
                    })
                })
                .collect(),
        }
    }

    /// The number of domain indices the label covers.
    pub fn t(&self) -> usize {
        self.sets.len()
    }

    /// The label as a list of (index, subformula) pairs, its most compact
    /// serial form.
    pub fn graph(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, &s) in self.sets.iter().enumerate() {
            for idx in 0..64 {
                if s >> idx & 1 == 1 {
                    pairs.push((i, idx));
                }
            }
        }
        pairs
    }
}

fn boolean_ok(cf: &CompiledFormula, mask: u64) -> bool {
    let bit = |i: usize| mask >> i & 1 == 1;
    cf.nodes.iter().enumerate().all(|(i, node)| match *node {
        Node::Neg(c) => bit(i) != bit(c),
        Node::And(c, d) => bit(i) == (bit(c) && bit(d)),
        _ => true,
    })
}

/// The within-world screen: every index's set must be Boolean saturated
/// (negations flip membership, conjunctions are the meet of their
/// conjuncts) and the counting verdicts must be uniform and truthful: a
/// counting quantifier belongs to any index's set exactly when the number
/// of indices satisfying its body stays within the bound. Labels must cover
/// at least one index; an empty label fails.
pub fn check_local(params: &TableauParams, label: &TableauLabel) -> bool {
    let cf = &params.cf;
    let n = cf.nodes.len();
    if label.sets.is_empty() {
        return false;
    }
    if n < 64 && label.sets.iter().any(|&s| s >> n != 0) {
        return false;
    }
    if label.sets.iter().any(|&s| !boolean_ok(cf, s)) {
        return false;
    }
    for (i, node) in cf.nodes.iter().enumerate() {
        if let Node::CountLeq(c, body) = *node {
            let realized = label.sets.iter().filter(|&&s| s >> body & 1 == 1).count() as u64;
            let holds = realized <= c;
            if label.sets.iter().any(|&s| (s >> i & 1 == 1) != holds) {
                return false;
            }
        }
    }
    true
}

/// Statistics and trace from an instrumented tableau run.
pub struct TableauRun {
    pub verdict: bool,
    /// Recursive label checks performed, memo hits included.
    pub calls: usize,
    /// Distinct canonical labels cached, zero when memoization is off.
    pub memo_entries: usize,
    /// Deepest recursion level reached below the entry call.
    pub max_depth: usize,
    /// One line per label check when tracing was on.
    pub trace: Vec<String>,
}

/// The recursive tableau check. Returns true exactly when the label, read
/// as a description of a root world, can be extended to an expanding-domain
/// tree model of depth at most the remaining budget: the label passes
/// [`check_local`], and, while budget remains, every diamond at every index
/// is answered by a successor label that keeps the index's body, never
/// claims a modalized formula at an old index whose set lacks the matching
/// diamond, and recursively checks with one less level. Domain sizes above
/// the cap fail outright.
pub fn qkworld(params: &TableauParams, label: &TableauLabel) -> bool {
    qkworld_instrumented(params, label, true, false).verdict
}

/// [`qkworld`] with switchable memoization and tracing.
pub fn qkworld_instrumented(
    params: &TableauParams,
    label: &TableauLabel,
    memoize: bool,
    trace: bool,
) -> TableauRun {
    assert!(!label.sets.is_empty(), "labels cover at least one domain index");
    let n = params.cf.nodes.len();
    let mut search = Search::new(params, memoize, trace);
    let in_range = n >= 64 || label.sets.iter().all(|&s| s >> n == 0);
    let verdict = in_range && search.qkworld_ms(params.depth, &to_multiset(&label.sets));
    TableauRun {
        verdict,
        calls: search.calls,
        memo_entries: search.memo.as_ref().map_or(0, HashMap::len),
        max_depth: search.max_depth,
        trace: search.trace.unwrap_or_default(),
    }
}

/// Decides expanding-domain satisfiability by the tableau, with no bounds
/// beyond the formula's own cap, and reconstructs a witness. The root
/// domain size ascends from one; the first successful root label is
/// expanded, via the memoized recursion, into an explicit tree model whose
/// worlds are the recursion nodes and whose domains are index prefixes. The
/// model is validated as expanding and the formula re-checked at the
/// witness before returning (world 0, the witnessing object index).
pub fn sat_expanding(f: &Formula) -> Option<(KripkeModel, usize, usize)> {
    sat_expanding_traced(f, false).0
}

/// [`sat_expanding`] with the label-check trace exposed.
pub fn sat_expanding_traced(
    f: &Formula,
    trace: bool,
) -> (Option<(KripkeModel, usize, usize)>, Vec<String>) {
    let params = TableauParams::new(f);
    let mut search = Search::new(&params, true, trace);
    let t_max = search.level_growth.max(1);
    let k = params.depth;
    for t in 1..=t_max {
        if let Some((_, fresh)) = search.root_search::<Pick>(k, t) {
            let sets = expand_pairs(&fresh);
            let root = search.materialize(k, sets);
            let witness = build_model(&params, &root, f);
            let trace_out = search.trace.take().unwrap_or_default();
            return (Some(witness), trace_out);
        }
    }
    let trace_out = search.trace.take().unwrap_or_default();
    (None, trace_out)
}

/// Canonical label form: distinct sets with multiplicities, sorted. The
/// tableau conditions are invariant under permuting domain indices, so this
/// is the memo key and the working representation.
type Multiset = Vec<(u64, usize)>;

fn to_multiset(sets: &[u64]) -> Multiset {
    let mut m: BTreeMap<u64, usize> = BTreeMap::new();
    for &s in sets {
        *m.entry(s).or_insert(0) += 1;
    }
    m.into_iter().collect()
}

fn expand_pairs(pairs: &[(u64, usize)]) -> Vec<u64> {
    pairs.iter().flat_map(|&(s, m)| std::iter::repeat(s).take(m)).collect()
}

fn graph_hash(ms: &Multiset) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &(s, m) in ms {
        for word in [s, m as u64] {
            h ^= word;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// One old-index group of a label under search: all indices sharing a set,
/// with the successor sets its members may take. The coherence condition
/// depends only on the shared set, so the filtered pool is per group.
struct Group {
    #[allow(dead_code)]
    set: u64,
    mult: usize,
    pool: Vec<u64>,
}

/// Mutable state threaded through the successor-label backtracking.
struct SuccState {
    /// Chosen (set, count) pairs per old-index group, canonical order.
    assign: Vec<Vec<(u64, usize)>>,
    /// Chosen (set, count) pairs for fresh indices.
    fresh: Vec<(u64, usize)>,
    /// The successor label assembled so far.
    child_counts: BTreeMap<u64, usize>,
    /// Running per-counting-subformula body counts.
    body_counts: Vec<u64>,
    /// Counting-verdict bits shared by every member placed so far.
    sig: Option<u64>,
    /// Whether the required witness set has been placed.
    target_hit: bool,
}

impl SuccState {
    fn new(n_counts: usize) -> SuccState {
        SuccState {
            assign: Vec::new(),
            fresh: Vec::new(),
            child_counts: BTreeMap::new(),
            body_counts: vec![0; n_counts],
            sig: None,
            target_hit: false,
        }
    }
}

/// How the backtracking reports a fully assembled candidate label: either a
/// bare existence check or the first successful assignment, for witness
/// reconstruction. Both recurse through the same memoized check, so they
/// agree on which candidate is first.
trait SuccMode {
    type Hit;
    fn on_label(search: &mut Search, rec_k: usize, ms: &Multiset, st: &SuccState)
        -> Option<Self::Hit>;
}

struct Exists;

impl SuccMode for Exists {
    type Hit = ();
    fn on_label(search: &mut Search, rec_k: usize, ms: &Multiset, _st: &SuccState) -> Option<()> {
        search.recurse(rec_k, ms).then_some(())
    }
}

struct Pick;

impl SuccMode for Pick {
    type Hit = (Vec<Vec<(u64, usize)>>, Vec<(u64, usize)>);
    fn on_label(
        search: &mut Search,
        rec_k: usize,
        ms: &Multiset,
        st: &SuccState,
    ) -> Option<Self::Hit> {
        search.recurse(rec_k, ms).then(|| (st.assign.clone(), st.fresh.clone()))
    }
}

/// The inputs that stay fixed while backtracking over one counting-verdict
/// class: the per-group set slices, the fresh slice, and the static
/// optimistic bounds used to cut branches that can no longer exceed an
/// unsatisfied counting bound.
struct ClassCtx<'g> {
    rec_k: usize,
    groups: &'g [Group],
    /// Per-group pools restricted to the class.
    slices: Vec<Vec<u64>>,
    /// The whole pool restricted to the class, for fresh indices.
    fresh_slice: Vec<u64>,
    sig: u64,
    /// Group that must place a set containing `psi`; `usize::MAX` at the
    /// root, where the goal-formula requirement is checked instead.
    target: usize,
    psi: usize,
    /// Maximum number of fresh indices (root: the exact label size).
    budget: usize,
    /// Per counting subformula, the largest body count groups from
    /// position g onward can still contribute.
    group_suffix: Vec<Vec<u64>>,
    /// Per counting subformula, the largest body count fresh sets from
    /// slice position c onward can still contribute, budget ignored.
    fresh_suffix: Vec<Vec<u64>>,
}

/// A node of the reconstructed witness tree.
struct NodeT {
    sets: Vec<u64>,
    children: Vec<NodeT>,
}

struct Search<'a> {
    cf: &'a CompiledFormula,
    cap: usize,
    /// Every Boolean-saturated subformula set, ascending.
    pool: Vec<u64>,
    /// (membership bit, bound, body) per counting subformula.
    counts: Vec<(usize, u64, usize)>,
    /// (membership bit, body) per diamond subformula.
    diamonds: Vec<(usize, usize)>,
    /// Bits of all counting subformulas, for the uniformity signature.
    count_mask: u64,
    /// Distinct counting-verdict patterns over the pool, ascending. Every
    /// candidate label lives inside one class, so the search iterates class
    /// by class instead of discovering mismatches member by member.
    classes: Vec<u64>,
    /// Per-set multiplicity cap for fresh indices and root labels: one past
    /// the counting bound, beyond which extra copies can be dropped from
    /// the world that introduced them without changing any verdict.
    per_set: usize,
    /// Cap on fresh indices per level and on the root domain size; a
    /// satisfying model can always be thinned until each world adds at most
    /// this many objects.
    level_growth: usize,
    memo: Option<HashMap<(usize, Multiset), bool>>,
    calls: usize,
    depth_now: usize,
    max_depth: usize,
    trace: Option<Vec<String>>,
}

impl<'a> Search<'a> {
    fn new(params: &'a TableauParams, memoize: bool, trace: bool) -> Search<'a> {
        let cf = &params.cf;
        let mut free = Vec::new();
        let mut counts = Vec::new();
        let mut diamonds = Vec::new();
        let mut count_mask = 0u64;
        for (i, node) in cf.nodes.iter().enumerate() {
            match *node {
                Node::Atom(_) => free.push(i),
                Node::Diamond(body) => {
                    free.push(i);
                    diamonds.push((i, body));
                }
                Node::CountLeq(c, body) => {
                    free.push(i);
                    counts.push((i, c, body));
                    count_mask |= 1 << i;
                }
                Node::Neg(_) | Node::And(_, _) => {}
            }
        }
        assert!(free.len() <= 24, "the saturated label pool would be astronomically large");
        let mut pool = Vec::with_capacity(1 << free.len());
        for pat in 0u64..(1u64 << free.len()) {
            let mut mask = 0u64;
            for (b, &idx) in free.iter().enumerate() {
                if pat >> b & 1 == 1 {
                    mask |= 1 << idx;
                }
            }
            for (i, node) in cf.nodes.iter().enumerate() {
                match *node {
                    Node::Neg(c) => {
                        if mask >> c & 1 == 0 {
                            mask |= 1 << i;
                        }
                    }
                    Node::And(c, d) => {
                        if mask >> c & 1 == 1 && mask >> d & 1 == 1 {
                            mask |= 1 << i;
                        }
                    }
                    _ => {}
                }
            }
            pool.push(mask);
        }
        pool.sort_unstable();
        let classes: Vec<u64> = {
            let mut cs: Vec<u64> = pool.iter().map(|&p| p & count_mask).collect();
            cs.sort_unstable();
            cs.dedup();
            cs
        };
        let c1 = counts
            .iter()
            .map(|&(_, c, _)| c)
            .max()
            .unwrap_or(0)
            .saturating_add(1);
        let c1 = usize::try_from(c1).unwrap_or(usize::MAX);
        let per_set = c1.min(params.cap.max(1));
        let level_growth = cf.nodes.len().saturating_mul(c1).min(params.cap);
        Search {
            cf,
            cap: params.cap,
            pool,
            counts,
            diamonds,
            count_mask,
            classes,
            per_set,
            level_growth,
            memo: memoize.then(HashMap::new),
            calls: 0,
            depth_now: 0,
            max_depth: 0,
            trace: trace.then(Vec::new),
        }
    }

    fn recurse(&mut self, k: usize, ms: &Multiset) -> bool {
        self.depth_now += 1;
        let v = self.qkworld_ms(k, ms);
        self.depth_now -= 1;
        v
    }

    fn qkworld_ms(&mut self, k: usize, ms: &Multiset) -> bool {
        self.calls += 1;
        self.max_depth = self.max_depth.max(self.depth_now);
        let t: usize = ms.iter().map(|&(_, m)| m).sum();
        let key = (k, ms.clone());
        if let Some(memo) = &self.memo {
            if let Some(&v) = memo.get(&key) {
                self.trace_line(k, t, ms, v);
                return v;
            }
        }
        let verdict = self.qkworld_eval(k, ms, t);
        if let Some(memo) = &mut self.memo {
            memo.insert(key, verdict);
        }
        self.trace_line(k, t, ms, verdict);
        verdict
    }

    fn trace_line(&mut self, k: usize, t: usize, ms: &Multiset, verdict: bool) {
        if let Some(tr) = &mut self.trace {
            tr.push(format!(
                "k={k} t={t} g={:#018x} {}",
                graph_hash(ms),
                if verdict { "TRUE" } else { "FALSE" }
            ));
        }
    }

    fn qkworld_eval(&mut self, k: usize, ms: &Multiset, t: usize) -> bool {
        if t == 0 || t > self.cap {
            return false;
        }
        if !self.check_ms(ms) {
            return false;
        }
        if k == 0 {
            return true;
        }
        let groups = self.groups_for(ms);
        let diamonds = self.diamonds.clone();
        for (gi, &(set, _)) in ms.iter().enumerate() {
            for &(dflag, dbody) in &diamonds {
                if set >> dflag & 1 == 1
                    && self.successor::<Exists>(k - 1, &groups, t, gi, dbody).is_none()
                {
                    return false;
                }
            }
        }
        true
    }

    fn check_ms(&self, ms: &Multiset) -> bool {
        if ms.iter().any(|&(s, _)| !boolean_ok(self.cf, s)) {
            return false;
        }
        for &(ci, c, body) in &self.counts {
            let realized: u64 =
                ms.iter().filter(|&&(s, _)| s >> body & 1 == 1).map(|&(_, m)| m as u64).sum();
            let holds = realized <= c;
            if ms.iter().any(|&(s, _)| (s >> ci & 1 == 1) != holds) {
                return false;
            }
        }
        true
    }

    fn groups_for(&self, ms: &Multiset) -> Vec<Group> {
        ms.iter()
            .map(|&(set, mult)| {
                let pool = self
                    .pool
                    .iter()
                    .copied()
                    .filter(|&p| {
                        self.diamonds
                            .iter()
                            .all(|&(dflag, dbody)| p >> dbody & 1 == 0 || set >> dflag & 1 == 1)
                    })
                    .collect();
                Group { set, mult, pool }
            })
            .collect()
    }

    /// Adds `m` copies of `set` to the candidate label, refusing when the
    /// counting signature disagrees or a within-bound count would overflow.
    /// The caller saves and restores `sig` and `target_hit`.
    fn add_members(&self, set: u64, m: usize, st: &mut SuccState) -> bool {
        let s_sig = set & self.count_mask;
        if let Some(sig) = st.sig {
            if sig != s_sig {
                return false;
            }
        }
        for (ix, &(ci, c, body)) in self.counts.iter().enumerate() {
            if set >> body & 1 == 1 && s_sig >> ci & 1 == 1 && st.body_counts[ix] + m as u64 > c {
                return false;
            }
        }
        st.sig = Some(s_sig);
        for (ix, &(_, _, body)) in self.counts.iter().enumerate() {
            if set >> body & 1 == 1 {
                st.body_counts[ix] += m as u64;
            }
        }
        *st.child_counts.entry(set).or_insert(0) += m;
        true
    }

    fn remove_members(&self, set: u64, m: usize, st: &mut SuccState) {
        for (ix, &(_, _, body)) in self.counts.iter().enumerate() {
            if set >> body & 1 == 1 {
                st.body_counts[ix] -= m as u64;
            }
        }
        let e = st.child_counts.get_mut(&set).expect("removing placed members");
        *e -= m;
        if *e == 0 {
            st.child_counts.remove(&set);
        }
    }

    /// Final screen on an assembled candidate: the unsatisfied-bound side
    /// of the counting verdicts, which can only be judged once every member
    /// is placed.
    fn finish<M: SuccMode>(&mut self, rec_k: usize, st: &mut SuccState) -> Option<M::Hit> {
        let sig = st.sig.expect("assembled labels have at least one member");
        for (ix, &(ci, c, _)) in self.counts.iter().enumerate() {
            if (sig >> ci & 1 == 1) != (st.body_counts[ix] <= c) {
                return None;
            }
        }
        let ms: Multiset = st.child_counts.iter().map(|(&s, &m)| (s, m)).collect();
        M::on_label(self, rec_k, &ms, st)
    }

    /// Searches for a successor label answering the diamond body `psi` at
    /// an index of group `target`, one counting-verdict class at a time.
    /// Classes that cannot host every group, cannot witness `psi`, or
    /// cannot meet their own counting verdicts are skipped without any
    /// backtracking.
    fn successor<M: SuccMode>(
        &mut self,
        rec_k: usize,
        groups: &[Group],
        old_t: usize,
        target: usize,
        psi: usize,
    ) -> Option<M::Hit> {
        let budget = self.level_growth.min(self.cap.saturating_sub(old_t));
        let classes = self.classes.clone();
        for sig in classes {
            let slices: Vec<Vec<u64>> = groups
                .iter()
                .map(|g| g.pool.iter().copied().filter(|&p| p & self.count_mask == sig).collect())
                .collect();
            if slices.iter().any(Vec::is_empty) {
                continue;
            }
            if !slices[target].iter().any(|&p| p >> psi & 1 == 1) {
                continue;
            }
            let fresh_slice: Vec<u64> =
                self.pool.iter().copied().filter(|&p| p & self.count_mask == sig).collect();
            let Some(ctx) = self.class_ctx(
                rec_k,
                groups,
                slices,
                fresh_slice,
                sig,
                target,
                psi,
                budget,
                false,
            ) else {
                continue;
            };
            let mut st = SuccState::new(self.counts.len());
            st.assign = vec![Vec::new(); groups.len()];
            let hit = self.assign_group::<M>(&ctx, 0, &mut st);
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Searches for a root label of exactly `t` indices, one of which must
    /// carry the goal formula, class by class.
    fn root_search<M: SuccMode>(&mut self, k: usize, t: usize) -> Option<M::Hit> {
        let classes = self.classes.clone();
        for sig in classes {
            let fresh_slice: Vec<u64> =
                self.pool.iter().copied().filter(|&p| p & self.count_mask == sig).collect();
            if !fresh_slice.iter().any(|&p| p >> self.cf.target & 1 == 1) {
                continue;
            }
            let Some(ctx) = self.class_ctx(
                k,
                &[],
                Vec::new(),
                fresh_slice,
                sig,
                usize::MAX,
                self.cf.target,
                t,
                true,
            ) else {
                continue;
            };
            let mut st = SuccState::new(self.counts.len());
            let hit = self.root_label::<M>(&ctx, 0, t, &mut st);
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Screens a counting-verdict class for feasibility and precomputes the
    /// optimistic suffix bounds. `exact` marks root mode, where the fresh
    /// stage must produce exactly `budget` members instead of at most.
    /// Returns None when some counting verdict of the class is already
    /// impossible: a satisfied bound that forced placements alone must
    /// overrun, or an unsatisfied bound that even the most generous
    /// placement cannot exceed.
    #[allow(clippy::too_many_arguments)]
    fn class_ctx<'g>(
        &self,
        rec_k: usize,
        groups: &'g [Group],
        slices: Vec<Vec<u64>>,
        fresh_slice: Vec<u64>,
        sig: u64,
        target: usize,
        psi: usize,
        budget: usize,
        exact: bool,
    ) -> Option<ClassCtx<'g>> {
        let n_items = self.counts.len();
        let mut group_suffix = vec![vec![0u64; groups.len() + 1]; n_items];
        let mut fresh_suffix = vec![vec![0u64; fresh_slice.len() + 1]; n_items];
        for (ix, &(ci, c, body)) in self.counts.iter().enumerate() {
            let has_body = |s: &[u64]| s.iter().any(|&p| p >> body & 1 == 1);
            for g in (0..groups.len()).rev() {
                group_suffix[ix][g] = group_suffix[ix][g + 1]
                    + if has_body(&slices[g]) { groups[g].mult as u64 } else { 0 };
            }
            for cpos in (0..fresh_slice.len()).rev() {
                fresh_suffix[ix][cpos] = fresh_suffix[ix][cpos + 1]
                    + if fresh_slice[cpos] >> body & 1 == 1 { self.per_set as u64 } else { 0 };
            }
            let holds = sig >> ci & 1 == 1;
            if holds {
                let mut forced: u64 = (0..groups.len())
                    .filter(|&g| slices[g].iter().all(|&p| p >> body & 1 == 1))
                    .map(|g| groups[g].mult as u64)
                    .sum();
                if exact {
                    let spill = fresh_slice.iter().filter(|&&p| p >> body & 1 == 0).count();
                    forced += (budget as u64)
                        .saturating_sub((self.per_set as u64).saturating_mul(spill as u64));
                }
                if forced > c {
                    return None;
                }
            } else {
                let best = group_suffix[ix][0] + fresh_suffix[ix][0].min(budget as u64);
                if best <= c {
                    return None;
                }
            }
        }
        Some(ClassCtx {
            rec_k,
            groups,
            slices,
            fresh_slice,
            sig,
            target,
            psi,
            budget,
            group_suffix,
            fresh_suffix,
        })
    }

    /// True when some unsatisfied counting bound can no longer be exceeded
    /// even if everything still to be placed lands on body sets.
    fn beyond_reach(&self, ctx: &ClassCtx, st: &SuccState, rest: impl Fn(usize) -> u64) -> bool {
        self.counts.iter().enumerate().any(|(ix, &(ci, c, _))| {
            ctx.sig >> ci & 1 == 0 && st.body_counts[ix] + rest(ix) <= c
        })
    }

    /// Chooses the successor sets of one old-index group after another,
    /// then hands over to the fresh extension.
    fn assign_group<M: SuccMode>(
        &mut self,
        ctx: &ClassCtx,
        gi: usize,
        st: &mut SuccState,
    ) -> Option<M::Hit> {
        if gi > ctx.target && !st.target_hit {
            return None;
        }
        if self
            .beyond_reach(ctx, st, |ix| {
                ctx.group_suffix[ix][gi] + ctx.fresh_suffix[ix][0].min(ctx.budget as u64)
            })
        {
            return None;
        }
        if gi == ctx.groups.len() {
            return self.extend_fresh::<M>(ctx, 0, ctx.budget, st);
        }
        self.place_members::<M>(ctx, gi, 0, ctx.groups[gi].mult, st)
    }

    /// Distributes the remaining members of group `gi` over its class
    /// slice from `cursor` on, trying multiplicities in ascending order.
    fn place_members<M: SuccMode>(
        &mut self,
        ctx: &ClassCtx,
        gi: usize,
        cursor: usize,
        remaining: usize,
        st: &mut SuccState,
    ) -> Option<M::Hit> {
        if remaining == 0 {
            return self.assign_group::<M>(ctx, gi + 1, st);
        }
        if cursor == ctx.slices[gi].len() {
            return None;
        }
        let set = ctx.slices[gi][cursor];
        let prev_sig = st.sig;
        let prev_hit = st.target_hit;
        for m in 0..=remaining {
            if m > 0 {
                if !self.add_members(set, m, st) {
                    break;
                }
                if gi == ctx.target && set >> ctx.psi & 1 == 1 {
                    st.target_hit = true;
                }
                st.assign[gi].push((set, m));
            }
            let hit = self.place_members::<M>(ctx, gi, cursor + 1, remaining - m, st);
            if m > 0 {
                st.assign[gi].pop();
                self.remove_members(set, m, st);
                st.sig = prev_sig;
                st.target_hit = prev_hit;
            }
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Appends fresh domain indices, at most `per_set` copies of any set
    /// beyond what the old indices already contribute, within the level
    /// budget.
    fn extend_fresh<M: SuccMode>(
        &mut self,
        ctx: &ClassCtx,
        cursor: usize,
        budget: usize,
        st: &mut SuccState,
    ) -> Option<M::Hit> {
        if self.beyond_reach(ctx, st, |ix| ctx.fresh_suffix[ix][cursor].min(budget as u64)) {
            return None;
        }
        if cursor == ctx.fresh_slice.len() {
            return self.finish::<M>(ctx.rec_k, st);
        }
        let set = ctx.fresh_slice[cursor];
        let already = st.child_counts.get(&set).copied().unwrap_or(0);
        let cap_here = self.per_set.saturating_sub(already).min(budget);
        let prev_sig = st.sig;
        for m in 0..=cap_here {
            if m > 0 {
                if !self.add_members(set, m, st) {
                    break;
                }
                st.fresh.push((set, m));
            }
            let hit = self.extend_fresh::<M>(ctx, cursor + 1, budget - m, st);
            if m > 0 {
                st.fresh.pop();
                self.remove_members(set, m, st);
                st.sig = prev_sig;
            }
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Builds root labels of exactly `remaining` more indices from slice
    /// position `cursor` on; at least one member must carry the goal
    /// formula.
    fn root_label<M: SuccMode>(
        &mut self,
        ctx: &ClassCtx,
        cursor: usize,
        remaining: usize,
        st: &mut SuccState,
    ) -> Option<M::Hit> {
        if self.beyond_reach(ctx, st, |ix| ctx.fresh_suffix[ix][cursor].min(remaining as u64)) {
            return None;
        }
        if remaining == 0 {
            if !st.target_hit {
                return None;
            }
            return self.finish::<M>(ctx.rec_k, st);
        }
        if cursor == ctx.fresh_slice.len()
            || (ctx.fresh_slice.len() - cursor).saturating_mul(self.per_set) < remaining
        {
            return None;
        }
        let set = ctx.fresh_slice[cursor];
        let prev_sig = st.sig;
        let prev_hit = st.target_hit;
        for m in 0..=self.per_set.min(remaining) {
            if m > 0 {
                if !self.add_members(set, m, st) {
                    break;
                }
                if set >> self.cf.target & 1 == 1 {
                    st.target_hit = true;
                }
                st.fresh.push((set, m));
            }
            let hit = self.root_label::<M>(ctx, cursor + 1, remaining - m, st);
            if m > 0 {
                st.fresh.pop();
                self.remove_members(set, m, st);
                st.sig = prev_sig;
                st.target_hit = prev_hit;
            }
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Expands a certified label into the witness tree, rerunning the
    /// successor search in pick mode; the memo makes the reruns cheap.
    fn materialize(&mut self, k: usize, sets: Vec<u64>) -> NodeT {
        let mut children = Vec::new();
        if k > 0 {
            let ms = to_multiset(&sets);
            let groups = self.groups_for(&ms);
            let gidx: Vec<usize> = sets
                .iter()
                .map(|s| ms.iter().position(|&(g, _)| g == *s).expect("own set"))
                .collect();
            let t = sets.len();
            let diamonds = self.diamonds.clone();
            for i in 0..t {
                for &(dflag, dbody) in &diamonds {
                    if sets[i] >> dflag & 1 == 1 {
                        let (assign, fresh) = self
                            .successor::<Pick>(k - 1, &groups, t, gidx[i], dbody)
                            .expect("certified labels admit successors");
                        let child =
                            materialize_assignment(&ms, &sets, &assign, &fresh, i, dbody, gidx[i]);
                        children.push(self.materialize(k - 1, child));
                    }
                }
            }
        }
        NodeT { sets, children }
    }
}

/// Turns a group-wise successor assignment into a per-index label: each
/// group's indices take its chosen sets in canonical order, except that the
/// index demanding the diamond body receives a set containing it; fresh
/// indices follow.
fn materialize_assignment(
    ms: &Multiset,
    parent_sets: &[u64],
    assign: &[Vec<(u64, usize)>],
    fresh: &[(u64, usize)],
    wit_index: usize,
    psi: usize,
    wit_group: usize,
) -> Vec<u64> {
    let t = parent_sets.len();
    let mut child = vec![0u64; t];
    for (g, &(gset, _)) in ms.iter().enumerate() {
        let idxs: Vec<usize> = (0..t).filter(|&j| parent_sets[j] == gset).collect();
        let mut slots = expand_pairs(&assign[g]);
        if g == wit_group {
            let pos = idxs.iter().position(|&j| j == wit_index).expect("witness in its group");
            let psi_slot =
                slots.iter().position(|&s| s >> psi & 1 == 1).expect("assignment keeps the body");
            slots.swap(pos, psi_slot);
        }
        for (j, s) in idxs.into_iter().zip(slots) {
            child[j] = s;
        }
    }
    child.extend(expand_pairs(fresh));
    child
}

/// Converts the recursion tree into an explicit expanding-domain model:
/// worlds in breadth-first order, domains as index prefixes, atoms read off
/// the labels. Validates the result and re-checks the formula at the first
/// root index carrying it.
fn build_model(params: &TableauParams, root: &NodeT, f: &Formula) -> (KripkeModel, usize, usize) {
    let cf = &params.cf;
    let mut order: Vec<&NodeT> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut queue: VecDeque<(usize, &NodeT)> = VecDeque::new();
    order.push(root);
    queue.push_back((0, root));
    while let Some((w, node)) = queue.pop_front() {
        for child in &node.children {
            let v = order.len();
            order.push(child);
            edges.push((w, v));
            queue.push_back((v, child));
        }
    }
    let pool = order.iter().map(|nd| nd.sets.len()).max().unwrap_or(1);
    assert!(pool <= MAX_POOL, "witness domain of {pool} objects exceeds the model pool limit");
    let domains: Vec<u64> = order.iter().map(|nd| mask_all(nd.sets.len())).collect();
    let mut interp: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (idx, node) in cf.nodes.iter().enumerate() {
        if let Node::Atom(pi) = node {
            let masks = order
                .iter()
                .map(|nd| {
                    nd.sets
                        .iter()
                        .enumerate()
                        .filter(|&(_, s)| s >> idx & 1 == 1)
                        .fold(0u64, |m, (i, _)| m | 1 << i)
                })
                .collect();
            interp.insert(cf.preds[*pi].clone(), masks);
        }
    }
    let model = KripkeModel::new(
        (0..order.len()).map(world_name).collect(),
        edges,
        (0..pool).map(object_name).collect(),
        domains,
        interp,
    )
    .expect("reconstructed witness models are well formed");
    let wit = (0..root.sets.len())
        .find(|&i| root.sets[i] >> cf.target & 1 == 1)
        .expect("the root label carries the goal formula");
    assert!(
        validate_model(&model, DomainRegime::Expanding).is_ok(),
        "reconstructed witness must be an expanding-domain model"
    );
    assert!(
        check(&model, 0, wit, f).expect("reconstructed witness evaluates cleanly"),
        "reconstructed witness must satisfy the formula"
    );
    (model, 0, wit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{enumerate_models, oracle_sat, SearchBounds};
    use crate::syntax::parse;
    use std::collections::HashSet;

    fn ff(s: &str) -> Formula {
        parse(s).unwrap()
    }

    #[test]
    fn domain_cap_examples() {
        assert_eq!(domain_cap(&ff("<>~P0(x)")), 3);
        assert_eq!(domain_cap(&ff("<> <> ~E[<=2] x P0(x)")), 30);
        assert_eq!(domain_cap(&ff("E[<=1] x P0(x)")), 4);
    }

    #[test]
    fn check_local_examples() {
        let f = ff("E[<=0] x P0(x)");
        let p = TableauParams::new(&f);
        assert!(check_local(&p, &TableauLabel::from_members(&[&[1]])));
        assert!(!check_local(&p, &TableauLabel::from_members(&[&[0, 1]])));
        assert!(check_local(&p, &TableauLabel::from_members(&[&[0]])));
        assert!(!check_local(&p, &TableauLabel::new(Vec::new())));

        let g = ff("E[<=1] x P0(x)");
        let q = TableauParams::new(&g);
        assert!(!check_local(&q, &TableauLabel::from_members(&[&[0, 1], &[0]])));
        assert!(!check_local(&q, &TableauLabel::from_members(&[&[1], &[]])));
        assert!(check_local(&q, &TableauLabel::from_members(&[&[0, 1], &[1]])));

        let h = ff("~P0(x)");
        let r = TableauParams::new(&h);
        assert!(!check_local(&r, &TableauLabel::from_members(&[&[0, 1]])));
        assert!(check_local(&r, &TableauLabel::from_members(&[&[1]])));
    }

    #[test]
    fn depth_zero_accepts_any_locally_consistent_label() {
        let f = ff("<>P0(x)");
        let p = TableauParams::new(&f).with_depth(0);
        assert!(qkworld(&p, &TableauLabel::from_members(&[&[1]])));
        assert!(!qkworld(&p, &TableauLabel::from_members(&[&[63]])));
    }

    #[test]
    fn diamonds_demand_successors() {
        let f = ff("<>P0(x)");
        let p = TableauParams::new(&f);
        assert!(qkworld(&p, &TableauLabel::from_members(&[&[1]])));
        assert!(qkworld(&p, &TableauLabel::from_members(&[&[]])));

        // Canonical subformula order: P0(x), <>P0(x), ~P0(x), <>~P0(x),
        // then the conjunction.
        let g = ff("<>P0(x) & <>~P0(x)");
        let q = TableauParams::new(&g);
        assert!(qkworld(&q, &TableauLabel::from_members(&[&[0, 1, 3, 4]])));

        let h = ff("<>(P0(x) & ~P0(x))");
        let r = TableauParams::new(&h);
        assert!(!qkworld(&r, &TableauLabel::from_members(&[&[0, 3]])));
    }

    #[test]
    fn coherence_filter_blocks_unclaimed_bodies() {
        // The root denies <>P1(x), so no successor may give P1 to an
        // inherited index, which starves the conjunction under the other
        // diamond.
        let f = ff("<>(P0(x) & P1(x)) & ~<>P1(x)");
        let p = TableauParams::new(&f);
        assert!(!qkworld(&p, &TableauLabel::from_members(&[&[4, 5, 6]])));
    }

    #[test]
    fn sat_expanding_examples() {
        assert!(sat_expanding(&ff("A x P0(x) & E x ~P0(x)")).is_none());
        assert!(sat_expanding(&ff("P0(x) & ~P0(x)")).is_none());

        let f = ff("E x <>P0(x) & E x <>~P0(x)");
        let (m, w, a) = sat_expanding(&f).expect("two diverging objects fit a small tree");
        assert_eq!(w, 0);
        assert!(check(&m, w, a, &f).unwrap());
        validate_model(&m, DomainRegime::Expanding).unwrap();
    }

    #[test]
    fn witnesses_can_grow_domains() {
        let f = ff("<>E[>=2] x P0(x)");
        let (m, w, a) = sat_expanding(&f).expect("a growing chain works");
        assert_eq!((w, a), (0, 0));
        assert_eq!(m.n_worlds(), 2);
        assert_eq!(m.domain_mask(0).count_ones(), 1);
        assert_eq!(m.domain_mask(1).count_ones(), 2);
        assert!(check(&m, 0, a, &f).unwrap());
        validate_model(&m, DomainRegime::Expanding).unwrap();

        assert_eq!(sat_expanding(&f), Some((m, w, a)));
    }

    /// The realized (root domain size, root type multiset) pairs of every
    /// expanding tree model within the bounds.
    fn realized_roots(
        f: &Formula,
        bounds: &SearchBounds,
    ) -> HashSet<(usize, Vec<u64>)> {
        let subs = subformulas(f);
        let preds: Vec<String> = crate::syntax::predicates(f).into_iter().collect();
        let mut seen = HashSet::new();
        for m in enumerate_models(&preds, bounds, DomainRegime::Expanding) {
            let dom = m.domain_mask(0);
            let mut masks: Vec<u64> = (0..m.n_objects())
                .filter(|&i| dom >> i & 1 == 1)
                .map(|i| {
                    subs.iter()
                        .enumerate()
                        .filter(|(_, sub)| check(&m, 0, i, sub).unwrap())
                        .fold(0u64, |acc, (idx, _)| acc | 1 << idx)
                })
                .collect();
            masks.sort_unstable();
            seen.insert((masks.len(), masks));
        }
        seen
    }

    #[test]
    fn verdicts_match_exhaustive_model_search() {
        // Small enough that the brute-force side provably covers every
        // model the tableau could describe, so the equivalence (at the full
        // modal depth) is checked on both sides for every label.
        let f = ff("<>P0(x)");
        let p = TableauParams::new(&f);
        let realized = realized_roots(&f, &SearchBounds::new(3, 2, 1, 2));
        for t in 1..=p.cap {
            let mut digits = vec![0u64; t];
            loop {
                let label = TableauLabel::new(digits.clone());
                let mut sorted = digits.clone();
                sorted.sort_unstable();
                assert_eq!(
                    qkworld(&p, &label),
                    realized.contains(&(t, sorted)),
                    "label {digits:?}"
                );
                let mut pos = 0;
                loop {
                    if pos == t {
                        break;
                    }
                    digits[pos] += 1;
                    if digits[pos] < 1 << p.n_formulas() {
                        break;
                    }
                    digits[pos] = 0;
                    pos += 1;
                }
                if pos == t {
                    break;
                }
            }
        }

        let g = ff("E[<=1] x P0(x)");
        let q = TableauParams::new(&g);
        let realized = realized_roots(&g, &SearchBounds::new(1, 4, 0, 1));
        for t in 1..=q.cap {
            let mut digits = vec![0u64; t];
            loop {
                let label = TableauLabel::new(digits.clone());
                let mut sorted = digits.clone();
                sorted.sort_unstable();
                assert_eq!(
                    qkworld(&q, &label),
                    realized.contains(&(t, sorted)),
                    "label {digits:?}"
                );
                let mut pos = 0;
                loop {
                    if pos == t {
                        break;
                    }
                    digits[pos] += 1;
                    if digits[pos] < 1 << q.n_formulas() {
                        break;
                    }
                    digits[pos] = 0;
                    pos += 1;
                }
                if pos == t {
                    break;
                }
            }
        }
    }

    #[test]
    fn success_is_monotone_in_the_cap() {
        for src in ["<>P0(x)", "<>E[>=2] x P0(x)", "<>P0(x) & <>~P0(x)"] {
            let f = ff(src);
            let base = TableauParams::new(&f);
            let n = base.n_formulas();
            let cap = base.cap;
            for mask in 0u64..(1 << n) {
                let label = TableauLabel::new(vec![mask]);
                if qkworld(&TableauParams::new(&f), &label) {
                    let wider = TableauParams::new(&f).with_cap(cap + 3);
                    assert!(qkworld(&wider, &label), "{src} lost {mask:#x} under a wider cap");
                }
            }
        }
    }

    #[test]
    fn memoization_only_prunes_work() {
        let f = ff("<> <> P0(x)");
        let p = TableauParams::new(&f);
        let label = TableauLabel::from_members(&[&[2]]);
        let plain = qkworld_instrumented(&p, &label, false, false);
        let memo = qkworld_instrumented(&p, &label, true, false);
        assert!(plain.verdict && memo.verdict);
        assert!(memo.calls <= plain.calls);
        assert_eq!(plain.memo_entries, 0);
        assert!(memo.memo_entries <= memo.calls);
        assert!(plain.max_depth <= p.depth);
        assert!(memo.max_depth <= p.depth);
    }

    #[test]
    fn trace_reports_every_label_check() {
        let f = ff("<>P0(x)");
        let p = TableauParams::new(&f);
        let run = qkworld_instrumented(&p, &TableauLabel::from_members(&[&[1]]), true, true);
        assert!(run.verdict);
        assert_eq!(run.trace.len(), run.calls);
        for line in &run.trace {
            assert!(line.starts_with("k="), "{line}");
            assert!(line.contains(" t=") && line.contains(" g=0x"), "{line}");
            assert!(line.ends_with("TRUE") || line.ends_with("FALSE"), "{line}");
        }

        let (found, trace) = sat_expanding_traced(&f, true);
        assert!(found.is_some());
        assert!(!trace.is_empty());
    }

    #[test]
    fn agreement_with_the_expanding_oracle() {
        let samples = [
            "P0(x)",
            "~P0(x)",
            "P0(x) & ~P0(x)",
            "E x P0(x)",
            "A x P0(x) & E x ~P0(x)",
            "<>P0(x)",
            "<>~E x P0(x)",
            "[]P0(x) & <>~P0(x)",
            "E[>=2] x P0(x)",
            "<>E[>=2] x P0(x)",
            "E[<=1] x P0(x) & <>P0(x)",
            "<>(P0(x) & P1(x)) & ~<>P1(x)",
        ];
        let b = SearchBounds::new(4, 3, 2, 2);
        for src in samples {
            let f = ff(src);
            let found = sat_expanding(&f);
            assert_eq!(
                found.is_some(),
                oracle_sat(&f, DomainRegime::Expanding, &b).is_some(),
                "{src}"
            );
            if let Some((m, w, a)) = found {
                assert!(check(&m, w, a, &f).unwrap(), "{src}");
                validate_model(&m, DomainRegime::Expanding).unwrap();
            }
        }
    }
}
