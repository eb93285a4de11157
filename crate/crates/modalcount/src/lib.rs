//! Satisfiability tooling for the one-variable fragment of first-order modal
//! logic with counting quantifiers.
//!
//! The language has a single variable `x`, unary predicates `P0(x), P1(x), ...`,
//! Boolean connectives, the modal diamond `<>`, and counting quantifiers
//! `E[<=c] x` ("at most c objects satisfy"). Everything else (`∃`, `∀`, `[]`,
//! `|`, `->`, `<->`, `E[>=c]`, `E[=c]`) is definable sugar. Formulas are decided
//! over finite Kripke models with per-world domains that may be constant,
//! expanding, decreasing, or unrestricted along the accessibility relation.
//!
//! The crate is organized around cross-validating decision procedures:
//!
//! * [`syntax`]: AST, parser, printer, structural metrics, subformula closure.
//! * [`semantics`]: Kripke models, a model file format, a memoized checker plus
//!   an independent plain evaluator, canonical bounded model enumeration, and a
//!   brute-force satisfiability oracle.
//! * [`quasimodel`]: the type/quasistate/run calculus used to certify
//!   constant-domain satisfiability, with validators, round-trip constructions
//!   between models and quasimodels, a pruning procedure with explicit size
//!   bounds, and the direct bounded search `sat_constant`.
//! * [`tableau`]: a depth-first tableau for expanding-domain satisfiability
//!   with a polynomial domain cap.
//! * [`reductions`]: satisfiability-preserving translations: relativization to
//!   an existence predicate, expanding/decreasing-to-constant reduction, domain
//!   pinning, translations from bimodal logics (a universal-modality logic and
//!   products with S5 and the difference logic), the θ_n family, and bimodal
//!   oracles used to test the translations.
//! * [`cli`]: the `modalcount` command-line interface.
//! * [`corpus`]: the seeded random formula corpus used by the test batteries.
//!
//! Each major capability has a runnable example; start with
//! `cargo run --example parse_and_print` and `cargo run --example solve_basic`,
//! or list the `examples/` directory.

pub mod cli;
pub mod corpus;
mod propsearch;
pub mod quasimodel;
pub mod reductions;
pub mod semantics;
pub mod syntax;
pub mod tableau;
