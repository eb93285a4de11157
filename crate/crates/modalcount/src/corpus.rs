//! Seeded corpus of small formulas for the cross-validation suites.
//!
//! The generator draws random formula trees inside a fixed profile (at most
//! [`MAX_NODES`] AST nodes, modal depth at most [`MAX_DEPTH`], counting
//! bounds at most [`MAX_CAPACITY`], predicates drawn from `P0`/`P1`) and
//! keeps the first `size` distinct ones. The draw is a pure function of the
//! seed, so every suite that says "the corpus" sees the same formulas.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::syntax::{
    and, ast_size, atom, capacity, count_leq, diamond, modal_depth, neg, predicates, print, Formula,
};

/// Admission cap on AST nodes.
pub const MAX_NODES: usize = 8;
/// Admission cap on modal depth.
pub const MAX_DEPTH: usize = 2;
/// Admission cap on counting bounds.
pub const MAX_CAPACITY: u32 = 2;
/// Predicates the generator draws from.
pub const PRED_NAMES: [&str; 2] = ["P0", "P1"];

/// Whether a formula lies inside the corpus profile. The generator only
/// emits such formulas; suites assert it rather than trust them.
pub fn fits_profile(f: &Formula) -> bool {
    ast_size(f) <= MAX_NODES
        && modal_depth(f) <= MAX_DEPTH
        && capacity(f) <= MAX_CAPACITY.into()
        && predicates(f)
            .iter()
            .all(|p| PRED_NAMES.contains(&p.as_str()))
}

/// The first `size` distinct formulas drawn from `seed`, in draw order.
/// Identical calls return identical corpora byte for byte.
pub fn corpus(seed: u64, size: usize) -> Vec<Formula> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let nodes = rng.gen_range(1..=MAX_NODES);
        let f = draw(&mut rng, nodes, MAX_DEPTH);
        debug_assert!(fits_profile(&f), "generator left the profile: {}", print(&f));
        if seen.insert(print(&f)) {
            out.push(f);
        }
    }
    out
}

/// One random tree with exactly `nodes` AST nodes and modal depth at most
/// `depth`. Connective weights favor variety over uniformity: plain chains
/// of negations say nothing new, so binary splits and modalities are drawn
/// more often than their share of the grammar.
fn draw(rng: &mut ChaCha8Rng, nodes: usize, depth: usize) -> Formula {
    if nodes == 1 {
        return atom(PRED_NAMES[rng.gen_range(0..PRED_NAMES.len())]);
    }
    // And needs one node for itself plus one per side.
    let can_split = nodes >= 3;
    loop {
        match rng.gen_range(0..10) {
            0 | 1 => return neg(draw(rng, nodes - 1, depth)),
            2..=4 if depth > 0 => return diamond(draw(rng, nodes - 1, depth - 1)),
            5 | 6 => {
                let bound = rng.gen_range(0..=MAX_CAPACITY);
                return count_leq(bound, draw(rng, nodes - 1, depth));
            }
            7..=9 if can_split => {
                let left = rng.gen_range(1..=nodes - 2);
                return and(draw(rng, left, depth), draw(rng, nodes - 1 - left, depth));
            }
            _ => continue,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    #[test]
    fn same_seed_same_corpus() {
        let a = corpus(7, 100);
        let b = corpus(7, 100);
        assert_eq!(a, b);
        let c = corpus(8, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn all_formulas_fit_the_profile_and_are_distinct() {
        let fs = corpus(7, 300);
        assert_eq!(fs.len(), 300);
        let mut texts = std::collections::BTreeSet::new();
        for f in &fs {
            assert!(fits_profile(f), "{}", print(f));
            assert!(texts.insert(print(f)), "duplicate {}", print(f));
        }
    }

    #[test]
    fn the_profile_is_actually_reached() {
        // The caps are suprema, not just bounds: some formula attains each.
        let fs = corpus(7, 300);
        assert!(fs.iter().any(|f| ast_size(f) == MAX_NODES));
        assert!(fs.iter().any(|f| modal_depth(f) == MAX_DEPTH));
        assert!(fs.iter().any(|f| capacity(f) == MAX_CAPACITY.into()));
        assert!(fs.iter().any(|f| predicates(f).len() == 2));
    }

    #[test]
    fn corpus_formulas_round_trip_through_the_printer() {
        for f in corpus(7, 300) {
            assert_eq!(parse(&print(&f)).unwrap(), f, "{}", print(&f));
        }
    }
}
