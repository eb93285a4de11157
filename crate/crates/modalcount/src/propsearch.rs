//! Minimal propositional clause solver used internally by the bounded
//! satisfiability engines.
//!
//! Frame-level searches reduce "does some interpretation of this frame make
//! the target formula true" to clause satisfiability over per
//! (world, object, subformula) truth bits. The instances are small (hundreds
//! of variables, thousands of clauses), but refuting one can still visit far
//! too many assignments under plain chronological backtracking, because most
//! bits in a block are irrelevant to any particular conflict. The search is
//! therefore conflict-driven: each dead end is analyzed back to a single
//! implication point, recorded as a learned clause, and the search jumps
//! straight to the level where that clause forces a new assignment.
//! Decisions take unassigned variables in ascending order trying `false`
//! first, and every rule is fixed, so the result is deterministic for a
//! fixed clause set, though not necessarily the lexicographically least
//! model once conflicts occur.

/// Literal: positive `v` means variable `v` true, negative means false.
/// Variables are numbered from 1.
pub type Lit = i32;

#[derive(Default, Clone)]
pub struct Cnf {
    pub n_vars: usize,
    pub clauses: Vec<Vec<Lit>>,
}

impl Cnf {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a new variable and returns its index (1-based).
    pub fn fresh_var(&mut self) -> usize {
        self.n_vars += 1;
        self.n_vars
    }

    pub fn add_clause(&mut self, lits: Vec<Lit>) {
        debug_assert!(lits.iter().all(|&l| l != 0 && l.unsigned_abs() as usize <= self.n_vars));
        self.clauses.push(lits);
    }

    /// Adds `lit <-> (a AND b)`.
    pub fn add_and(&mut self, lit: Lit, a: Lit, b: Lit) {
        self.add_clause(vec![-lit, a]);
        self.add_clause(vec![-lit, b]);
        self.add_clause(vec![lit, -a, -b]);
    }

    /// Adds `lit <-> NOT a`.
    pub fn add_not(&mut self, lit: Lit, a: Lit) {
        self.add_clause(vec![-lit, -a]);
        self.add_clause(vec![lit, a]);
    }

    /// Adds `lit <-> (a1 OR ... OR ak)`; an empty disjunction forces `lit`
    /// false.
    pub fn add_or_def(&mut self, lit: Lit, disjuncts: &[Lit]) {
        if disjuncts.is_empty() {
            self.add_clause(vec![-lit]);
            return;
        }
        let mut big = Vec::with_capacity(disjuncts.len() + 1);
        big.push(-lit);
        big.extend_from_slice(disjuncts);
        self.add_clause(big);
        for &d in disjuncts {
            self.add_clause(vec![lit, -d]);
        }
    }

    /// Adds `lit <-> (at most k of the given literals are true)`, by
    /// expanding subsets. Only sensible for very small literal lists; the
    /// model encodings never pass more than a handful.
    pub fn add_at_most_def(&mut self, lit: Lit, lits: &[Lit], k: usize) {
        let n = lits.len();
        if k >= n {
            self.add_clause(vec![lit]);
            return;
        }
        // lit -> every (k+1)-subset contains a false literal.
        for subset in subsets_of_size(n, k + 1) {
            let mut clause = vec![-lit];
            clause.extend(subset.iter().map(|&i| -lits[i]));
            self.add_clause(clause);
        }
        // NOT lit -> at least k+1 true: every (n-k)-subset contains a true one.
        for subset in subsets_of_size(n, n - k) {
            let mut clause = vec![lit];
            clause.extend(subset.iter().map(|&i| lits[i]));
            self.add_clause(clause);
        }
    }
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Val {
    Unset,
    True,
    False,
}

struct Solver {
    n_vars: usize,
    /// Original clauses followed by learned ones.
    clauses: Vec<Vec<Lit>>,
    /// Per variable, the clauses mentioning it.
    occurs: Vec<Vec<usize>>,
    vals: Vec<Val>,
    /// Decision level at which each variable was assigned.
    level: Vec<usize>,
    /// Clause that forced the assignment; `None` for decisions.
    reason: Vec<Option<usize>>,
    /// Assigned variables in assignment order.
    trail: Vec<usize>,
    /// Trail length at each decision, so `lims.len()` is the current level.
    lims: Vec<usize>,
    /// Next trail position to propagate from.
    prop_head: usize,
    /// Scratch marks for conflict analysis.
    seen: Vec<bool>,
}

/// Returns a satisfying assignment, or `None` if the clause set is
/// unsatisfiable. Deterministic for a fixed clause set.
pub fn solve_first(cnf: &Cnf) -> Option<Vec<bool>> {
    let mut occurs: Vec<Vec<usize>> = vec![Vec::new(); cnf.n_vars + 1];
    for (ci, clause) in cnf.clauses.iter().enumerate() {
        for &l in clause {
            occurs[l.unsigned_abs() as usize].push(ci);
        }
    }
    let solver = Solver {
        n_vars: cnf.n_vars,
        clauses: cnf.clauses.clone(),
        occurs,
        vals: vec![Val::Unset; cnf.n_vars + 1],
        level: vec![0; cnf.n_vars + 1],
        reason: vec![None; cnf.n_vars + 1],
        trail: Vec::new(),
        lims: Vec::new(),
        prop_head: 0,
        seen: vec![false; cnf.n_vars + 1],
    };
    solver.run()
}

fn lit_val(vals: &[Val], l: Lit) -> Val {
    match vals[l.unsigned_abs() as usize] {
        Val::Unset => Val::Unset,
        Val::True => {
            if l > 0 {
                Val::True
            } else {
                Val::False
            }
        }
        Val::False => {
            if l > 0 {
                Val::False
            } else {
                Val::True
            }
        }
    }
}

impl Solver {
    fn assign(&mut self, l: Lit, reason: Option<usize>) {
        let v = l.unsigned_abs() as usize;
        debug_assert!(self.vals[v] == Val::Unset);
        self.vals[v] = if l > 0 { Val::True } else { Val::False };
        self.level[v] = self.lims.len();
        self.reason[v] = reason;
        self.trail.push(v);
    }

    /// Exhausts unit propagation from the trail head. Returns a falsified
    /// clause on conflict.
    fn propagate(&mut self) -> Option<usize> {
        while self.prop_head < self.trail.len() {
            let v = self.trail[self.prop_head];
            self.prop_head += 1;
            for oi in 0..self.occurs[v].len() {
                let ci = self.occurs[v][oi];
                let clause = &self.clauses[ci];
                let mut unset: Option<Lit> = None;
                let mut n_unset = 0;
                let mut satisfied = false;
                for &l in clause {
                    match lit_val(&self.vals, l) {
                        Val::True => {
                            satisfied = true;
                            break;
                        }
                        Val::Unset => {
                            n_unset += 1;
                            unset = Some(l);
                        }
                        Val::False => {}
                    }
                }
                if satisfied {
                    continue;
                }
                match n_unset {
                    0 => return Some(ci),
                    1 => self.assign(unset.unwrap(), Some(ci)),
                    _ => {}
                }
            }
        }
        None
    }

    /// First-implication-point conflict analysis: resolves the falsified
    /// clause backwards along the trail until one literal of the current
    /// level remains. Returns the learned clause, asserting literal first,
    /// with the level to jump back to.
    fn analyze(&mut self, conflict: usize) -> (Vec<Lit>, usize) {
        let cur = self.lims.len();
        let mut learned: Vec<Lit> = vec![0];
        let mut to_clear: Vec<usize> = Vec::new();
        let mut counter = 0usize;
        let mut next_clause = Some(conflict);
        let mut idx = self.trail.len();
        let asserting = loop {
            if let Some(ci) = next_clause {
                for i in 0..self.clauses[ci].len() {
                    let l = self.clauses[ci][i];
                    let v = l.unsigned_abs() as usize;
                    // Root facts drop out of every resolvent; marks also
                    // keep the variable under resolution from re-entering
                    // through its own reason clause.
                    if self.seen[v] || self.level[v] == 0 {
                        continue;
                    }
                    self.seen[v] = true;
                    to_clear.push(v);
                    if self.level[v] == cur {
                        counter += 1;
                    } else {
                        learned.push(l);
                    }
                }
            }
            // The nearest marked trail entry is at the current level: the
            // level's variables sit on top of the trail, and marked ones
            // remain above the walk until consumed.
            loop {
                idx -= 1;
                if self.seen[self.trail[idx]] {
                    break;
                }
            }
            let v = self.trail[idx];
            counter -= 1;
            if counter == 0 {
                break if self.vals[v] == Val::True { -(v as Lit) } else { v as Lit };
            }
            next_clause = self.reason[v];
            debug_assert!(next_clause.is_some(), "only the decision can end the walk");
        };
        learned[0] = asserting;
        let mut back = 0;
        for &l in &learned[1..] {
            back = back.max(self.level[l.unsigned_abs() as usize]);
        }
        for v in to_clear {
            self.seen[v] = false;
        }
        (learned, back)
    }

    /// Unassigns everything above the given decision level.
    fn backjump(&mut self, to_level: usize) {
        let keep = self.lims[to_level];
        for &v in &self.trail[keep..] {
            self.vals[v] = Val::Unset;
            self.reason[v] = None;
        }
        self.trail.truncate(keep);
        self.lims.truncate(to_level);
        self.prop_head = self.trail.len();
    }

    fn run(mut self) -> Option<Vec<bool>> {
        // Seed the trail from the original unit clauses.
        for ci in 0..self.clauses.len() {
            match self.clauses[ci][..] {
                [] => return None,
                [l] => match lit_val(&self.vals, l) {
                    Val::True => {}
                    Val::False => return None,
                    Val::Unset => self.assign(l, Some(ci)),
                },
                _ => {}
            }
        }
        let mut next_decision = 1usize;
        loop {
            if let Some(conflict) = self.propagate() {
                if self.lims.is_empty() {
                    return None;
                }
                let (learned, back) = self.analyze(conflict);
                self.backjump(back);
                let ci = self.clauses.len();
                for &l in &learned {
                    self.occurs[l.unsigned_abs() as usize].push(ci);
                }
                let asserting = learned[0];
                self.clauses.push(learned);
                self.assign(asserting, Some(ci));
                // Assignments below the jump may have freed earlier
                // variables for future decisions.
                next_decision = 1;
            } else {
                while next_decision <= self.n_vars && self.vals[next_decision] != Val::Unset {
                    next_decision += 1;
                }
                if next_decision > self.n_vars {
                    return Some(self.vals[1..].iter().map(|&v| v == Val::True).collect());
                }
                self.lims.push(self.trail.len());
                self.assign(-(next_decision as Lit), None);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_sat_and_unsat() {
        let mut cnf = Cnf::new();
        let a = cnf.fresh_var() as Lit;
        let b = cnf.fresh_var() as Lit;
        cnf.add_clause(vec![a, b]);
        cnf.add_clause(vec![-a]);
        let m = solve_first(&cnf).unwrap();
        assert!(!m[0] && m[1]);
        cnf.add_clause(vec![-b]);
        assert!(solve_first(&cnf).is_none());
    }

    #[test]
    fn conflict_free_instances_keep_the_decision_order() {
        // (a OR b): the search tries a=false first, then propagation forces
        // b, so the model is the lexicographically least one.
        let mut cnf = Cnf::new();
        let a = cnf.fresh_var() as Lit;
        let b = cnf.fresh_var() as Lit;
        cnf.add_clause(vec![a, b]);
        let m = solve_first(&cnf).unwrap();
        assert_eq!(m, vec![false, true]);
    }

    #[test]
    fn at_most_definition_bidirectional() {
        // lit <-> at most 1 of {a, b} true, exhaustively checked.
        for bits in 0..4u8 {
            let mut cnf = Cnf::new();
            let lit = cnf.fresh_var() as Lit;
            let a = cnf.fresh_var() as Lit;
            let b = cnf.fresh_var() as Lit;
            cnf.add_at_most_def(lit, &[a, b], 1);
            cnf.add_clause(vec![if bits & 1 != 0 { a } else { -a }]);
            cnf.add_clause(vec![if bits & 2 != 0 { b } else { -b }]);
            let m = solve_first(&cnf).expect("constraints on a,b alone are satisfiable");
            let expect = (bits & 1 != 0) as usize + (bits & 2 != 0) as usize <= 1;
            assert_eq!(m[0], expect, "bits {bits:02b}");
        }
    }

    #[test]
    fn pigeonhole_unsat() {
        // x[i][j]: pigeon i in hole j. Each pigeon somewhere; no hole twice.
        // Exercises learning: chronological search alone degrades sharply on
        // larger instances of this family.
        for holes in 2..6usize {
            let pigeons = holes + 1;
            let mut cnf = Cnf::new();
            let mut x = vec![vec![0i32; holes]; pigeons];
            for row in x.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = cnf.fresh_var() as Lit;
                }
            }
            for row in &x {
                cnf.add_clause(row.to_vec());
            }
            for j in 0..holes {
                for i1 in 0..pigeons {
                    for i2 in (i1 + 1)..pigeons {
                        cnf.add_clause(vec![-x[i1][j], -x[i2][j]]);
                    }
                }
            }
            assert!(solve_first(&cnf).is_none(), "{pigeons} into {holes}");
        }
    }

    // Brute-force satisfiability reference.
    fn reference_sat(cnf: &Cnf) -> bool {
        let n = cnf.n_vars;
        assert!(n <= 20);
        'outer: for code in 0u64..1 << n {
            for clause in &cnf.clauses {
                let sat = clause.iter().any(|&l| {
                    let v = code >> (l.unsigned_abs() - 1) & 1 == 1;
                    if l > 0 {
                        v
                    } else {
                        !v
                    }
                });
                if !sat {
                    continue 'outer;
                }
            }
            return true;
        }
        false
    }

    #[test]
    fn agrees_with_truth_tables_on_random_instances() {
        // Deterministic linear congruential stream; no external RNG needed.
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for round in 0..500 {
            let n_vars = 3 + (next() % 10) as usize;
            let n_clauses = 2 + (next() % 30) as usize;
            let mut cnf = Cnf::new();
            cnf.n_vars = n_vars;
            for _ in 0..n_clauses {
                let len = 1 + (next() % 3) as usize;
                let clause: Vec<Lit> = (0..len)
                    .map(|_| {
                        let v = 1 + (next() % n_vars as u64) as Lit;
                        if next() % 2 == 0 {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect();
                cnf.add_clause(clause);
            }
            let got = solve_first(&cnf);
            assert_eq!(got.is_some(), reference_sat(&cnf), "round {round}: {:?}", cnf.clauses);
            if let Some(model) = got {
                for clause in &cnf.clauses {
                    assert!(
                        clause.iter().any(|&l| {
                            let v = model[(l.unsigned_abs() - 1) as usize];
                            if l > 0 {
                                v
                            } else {
                                !v
                            }
                        }),
                        "round {round}: model violates {clause:?}"
                    );
                }
            }
        }
    }
}
