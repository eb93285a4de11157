//! Command-line front end: parsing, model checking, bounded satisfiability
//! across regimes and engines, translations, and generators.
//!
//! Exit codes form the interface contract: 0 reports success (SAT for the
//! `sat` subcommand), 1 reports UNSAT within the stated bounds, 2 an input
//! error, 3 an engine refusal (a cap the run refuses to exceed), and 4 an
//! internal inconsistency (a witness the independent checker rejects, which
//! means a bug, never a property of the input). Every SAT verdict is
//! re-validated with the checker before the process exits 0, and all output
//! is deterministic byte for byte for fixed inputs, flags, and seed.

use std::io::Read;

use clap::{Parser, Subcommand, ValueEnum};

use crate::corpus::corpus;
use crate::quasimodel::sat_constant;
use crate::reductions::{
    gen_theta, parse_bimodal, pin_domain, recover_reduced_witness, reduce_to_constant, relativize,
    translate_ku, translate_product_diff, translate_product_s5,
};
use crate::semantics::{
    check, oracle_sat, validate_model, DomainRegime, KripkeModel, SearchBounds,
};
use crate::syntax::{metrics, modal_depth, parse, predicates, print, EncodingMode, Formula};
use crate::tableau::{domain_cap, sat_expanding_traced};

#[derive(Parser)]
#[command(
    name = "modalcount",
    about = "Bounded satisfiability tooling for one-variable modal logic with counting",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Formula arguments are inline text; `-` reads standard input and a
/// leading `@` names a file.
const INPUT_HELP: &str = "Formula text; '-' reads stdin, '@PATH' reads a file";

#[derive(Subcommand)]
enum Cmd {
    /// Parse a formula and print its canonical form and measures
    Parse {
        #[arg(help = INPUT_HELP)]
        input: String,
    },
    /// Evaluate a formula in a model file at a world and object
    Check {
        /// Model file in the line-oriented text format
        #[arg(long)]
        model: String,
        #[arg(help = INPUT_HELP)]
        input: String,
        /// World name; omit for a table over all pairs
        #[arg(long)]
        world: Option<String>,
        /// Object name; omit for a table over all pairs
        #[arg(long)]
        object: Option<String>,
    },
    /// Decide bounded satisfiability and print a re-validated witness
    Sat {
        #[arg(help = INPUT_HELP)]
        input: String,
        #[arg(long, value_enum, default_value_t = RegimeArg::Constant)]
        regime: RegimeArg,
        #[arg(long, value_enum, default_value_t = EngineArg::Oracle)]
        engine: EngineArg,
        #[arg(long, default_value_t = 8)]
        max_worlds: usize,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
        #[arg(long, default_value_t = 2)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        max_branching: usize,
        /// Counting-bound size measure used in trace output
        #[arg(long, value_enum, default_value_t = EncodingArg::Unary)]
        encoding: EncodingArg,
        /// Progress notes on standard error
        #[arg(long)]
        trace: bool,
        /// Refuse tableau runs whose derived domain cap exceeds this
        #[arg(long, default_value_t = 64)]
        n_cap: usize,
        /// Self-test hook: corrupt the witness before re-validation
        #[arg(long, hide = true)]
        corrupt_witness: bool,
    },
    /// Translate from a source logic or apply a domain transformation
    Translate {
        #[arg(value_enum)]
        source: SourceArg,
        #[arg(help = INPUT_HELP)]
        input: String,
        /// Also print the axiom part on its own line
        #[arg(long)]
        zeta: bool,
        /// Domain size for the pin transformation
        #[arg(long)]
        n: Option<u64>,
    },
    /// Generate formula families
    Gen {
        #[command(subcommand)]
        what: GenCmd,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Print the domain-forcing formula with index N
    Theta { n: usize },
    /// Print a seeded corpus, one formula per line
    Corpus {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        size: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Constant,
    Expanding,
    Decreasing,
    Varying,
}

impl From<RegimeArg> for DomainRegime {
    fn from(r: RegimeArg) -> DomainRegime {
        match r {
            RegimeArg::Constant => DomainRegime::Constant,
            RegimeArg::Expanding => DomainRegime::Expanding,
            RegimeArg::Decreasing => DomainRegime::Decreasing,
            RegimeArg::Varying => DomainRegime::Varying,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    /// Exhaustive bounded model enumeration, any regime
    Oracle,
    /// Clause search over candidate frames, constant domains
    Search,
    /// Depth-bounded tableau, expanding domains
    Tableau,
    /// Constant-domain reduction plus search, expanding or decreasing
    Reduction,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Unary,
    Binary,
}

impl From<EncodingArg> for EncodingMode {
    fn from(e: EncodingArg) -> EncodingMode {
        match e {
            EncodingArg::Unary => EncodingMode::Unary,
            EncodingArg::Binary => EncodingMode::Binary,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    /// Modal logic K with a universal modality, over `<h>`/`<u>`
    Ku,
    /// Product of K with S5, over `<h>`/`<v>`
    Kxs5,
    /// Product of K with the difference logic, over `<h>`/`<v>`
    Kxdiff,
    /// Pin every reachable domain to exactly N objects
    Pin,
    /// Guard quantifiers with a fresh existence predicate
    Relativize,
}

const EXIT_SAT: i32 = 0;
const EXIT_UNSAT: i32 = 1;
const EXIT_INPUT: i32 = 2;
const EXIT_REFUSAL: i32 = 3;
const EXIT_INTERNAL: i32 = 4;

/// Parses the process arguments and runs one subcommand, returning the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // an input error.
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match cli.cmd {
        Cmd::Parse { input } => cmd_parse(&input),
        Cmd::Check { model, input, world, object } => cmd_check(&model, &input, world, object),
        Cmd::Sat {
            input,
            regime,
            engine,
            max_worlds,
            max_objects,
            max_depth,
            max_branching,
            encoding,
            trace,
            n_cap,
            corrupt_witness,
        } => cmd_sat(SatConfig {
            input,
            regime: regime.into(),
            engine,
            bounds: SearchBounds::new(max_worlds, max_objects, max_depth, max_branching),
            encoding: encoding.into(),
            trace,
            n_cap,
            corrupt_witness,
        }),
        Cmd::Translate { source, input, zeta, n } => cmd_translate(source, &input, zeta, n),
        Cmd::Gen { what } => cmd_gen(what),
    }
}

/// Resolves a formula argument: inline text, `-` for stdin, `@path` for a
/// file.
fn read_input(arg: &str) -> Result<String, String> {
    if arg == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| format!("reading stdin: {e}"))?;
        Ok(s)
    } else if let Some(path) = arg.strip_prefix('@') {
        std::fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))
    } else {
        Ok(arg.to_string())
    }
}

fn parse_arg(arg: &str) -> Result<Formula, String> {
    let text = read_input(arg)?;
    parse(text.trim()).map_err(|e| e.to_string())
}

fn cmd_parse(input: &str) -> i32 {
    let f = match parse_arg(input) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let unary = metrics(&f, EncodingMode::Unary);
    let binary = metrics(&f, EncodingMode::Binary);
    println!("{}", print(&f));
    println!("modal depth: {}", unary.modal_depth);
    println!("capacity: {}", unary.capacity);
    println!("subformulas: {}", unary.n_sub);
    println!("size (unary): {}", unary.size);
    println!("size (binary): {}", binary.size);
    EXIT_SAT
}

fn cmd_check(model_path: &str, input: &str, world: Option<String>, object: Option<String>) -> i32 {
    let text = match std::fs::read_to_string(model_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {model_path}: {e}");
            return EXIT_INPUT;
        }
    };
    let m = match KripkeModel::from_text(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {model_path}: {e}");
            return EXIT_INPUT;
        }
    };
    let f = match parse_arg(input) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let resolve_world = |name: &str| {
        m.world_index(name)
            .ok_or_else(|| format!("unknown world {name:?}"))
    };
    let resolve_object = |name: &str| {
        m.object_index(name)
            .ok_or_else(|| format!("unknown object {name:?}"))
    };
    match (world, object) {
        (Some(wn), Some(on)) => {
            let (w, a) = match (resolve_world(&wn), resolve_object(&on)) {
                (Ok(w), Ok(a)) => (w, a),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return EXIT_INPUT;
                }
            };
            match check(&m, w, a, &f) {
                Ok(v) => {
                    println!("{v}");
                    EXIT_SAT
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INPUT
                }
            }
        }
        (world, object) => {
            // Table mode: every requested (world, object) pair, with `-`
            // where the object is outside the world's domain.
            let ws: Vec<usize> = match world {
                Some(wn) => match resolve_world(&wn) {
                    Ok(w) => vec![w],
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_INPUT;
                    }
                },
                None => (0..m.n_worlds()).collect(),
            };
            let os: Vec<usize> = match object {
                Some(on) => match resolve_object(&on) {
                    Ok(a) => vec![a],
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_INPUT;
                    }
                },
                None => (0..m.n_objects()).collect(),
            };
            for &w in &ws {
                for &a in &os {
                    let cell = if m.domain_contains(w, a) {
                        match check(&m, w, a, &f) {
                            Ok(v) => v.to_string(),
                            Err(e) => {
                                eprintln!("error: {e}");
                                return EXIT_INTERNAL;
                            }
                        }
                    } else {
                        "-".to_string()
                    };
                    println!("{} {} {}", m.world_names()[w], m.object_names()[a], cell);
                }
            }
            EXIT_SAT
        }
    }
}

struct SatConfig {
    input: String,
    regime: DomainRegime,
    engine: EngineArg,
    bounds: SearchBounds,
    encoding: EncodingMode,
    trace: bool,
    n_cap: usize,
    corrupt_witness: bool,
}

fn cmd_sat(cfg: SatConfig) -> i32 {
    let f = match parse_arg(&cfg.input) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    match (cfg.engine, cfg.regime) {
        (EngineArg::Search, r) if r != DomainRegime::Constant => {
            eprintln!("error: the search engine decides constant domains only");
            return EXIT_INPUT;
        }
        (EngineArg::Tableau, r) if r != DomainRegime::Expanding => {
            eprintln!("error: the tableau engine decides expanding domains only");
            return EXIT_INPUT;
        }
        (EngineArg::Reduction, r)
            if r != DomainRegime::Expanding && r != DomainRegime::Decreasing =>
        {
            eprintln!(
                "error: the reduction engine decides expanding or decreasing domains only"
            );
            return EXIT_INPUT;
        }
        _ => {}
    }
    if cfg.trace {
        let ms = metrics(&f, cfg.encoding);
        eprintln!(
            "formula: {} (size {}, modal depth {}, capacity {}, {} subformulas)",
            print(&f),
            ms.size,
            ms.modal_depth,
            ms.capacity,
            ms.n_sub
        );
    }
    let b = &cfg.bounds;
    let bounds_line = format!(
        "max worlds {}, max objects {}, max depth {}, max branching {}",
        b.max_worlds, b.max_objects, b.max_depth, b.max_branching
    );
    let t0 = std::time::Instant::now();
    // Each arm yields the witness triple, the formula the witness must
    // satisfy, and the bounds text for the UNSAT report.
    let (hit, checked, unsat_bounds): (Option<(KripkeModel, usize, usize)>, Formula, String) =
        match cfg.engine {
            EngineArg::Oracle => (
                oracle_sat(&f, cfg.regime, b),
                f.clone(),
                bounds_line,
            ),
            EngineArg::Search => (sat_constant(&f, b), f.clone(), bounds_line),
            EngineArg::Tableau => {
                let cap = domain_cap(&f);
                if cap > cfg.n_cap {
                    eprintln!(
                        "refused: the tableau would need a domain cap of {cap}, above the \
                         configured ceiling of {} (raise --n-cap to proceed)",
                        cfg.n_cap
                    );
                    return EXIT_REFUSAL;
                }
                let (hit, trace_lines) = sat_expanding_traced(&f, cfg.trace);
                if cfg.trace {
                    for line in &trace_lines {
                        eprintln!("{line}");
                    }
                }
                let caps = format!("tableau depth {}, domain cap {cap}", modal_depth(&f));
                (hit, f.clone(), caps)
            }
            EngineArg::Reduction => {
                let out = reduce_to_constant(&f, cfg.regime);
                if cfg.trace {
                    eprintln!("reduced formula: {}", print(&out.formula));
                }
                let hit = sat_constant(&out.formula, b).and_then(|(m, w, a)| {
                    recover_reduced_witness(&m, w, a, modal_depth(&f), &out.fresh_symbols[0].0)
                });
                (hit, f.clone(), bounds_line)
            }
        };
    if cfg.trace {
        eprintln!("decided in {:?}", t0.elapsed());
    }
    match hit {
        Some((mut m, w, a)) => {
            if cfg.corrupt_witness {
                // Deterministic self-test corruption: flip the witness bit
                // of the formula's first predicate.
                let pred = predicates(&f)
                    .into_iter()
                    .next()
                    .expect("formulas have at least one atom");
                m.flip_interp_bit(&pred, w, a);
            }
            // The re-validation tripwire: the reported witness must pass
            // the structural rules and the independent checker.
            if let Err(e) = validate_model(&m, cfg.regime) {
                eprintln!("internal inconsistency: witness fails validation: {e}");
                return EXIT_INTERNAL;
            }
            if check(&m, w, a, &checked) != Ok(true) {
                eprintln!("internal inconsistency: witness fails the checker");
                return EXIT_INTERNAL;
            }
            println!("SAT");
            println!("world {} object {}", m.world_names()[w], m.object_names()[a]);
            print!("{}", m.to_text());
            EXIT_SAT
        }
        None => {
            println!("UNSAT within bounds ({unsat_bounds})");
            EXIT_UNSAT
        }
    }
}

fn cmd_translate(source: SourceArg, input: &str, zeta: bool, n: Option<u64>) -> i32 {
    match source {
        SourceArg::Ku | SourceArg::Kxs5 | SourceArg::Kxdiff => {
            let text = match read_input(input) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INPUT;
                }
            };
            let bf = match parse_bimodal(text.trim()) {
                Ok(bf) => bf,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INPUT;
                }
            };
            let (formula, zeta_part) = match source {
                SourceArg::Ku => match translate_ku(&bf) {
                    Ok(out) => (out.formula, Some(out.zeta)),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_INPUT;
                    }
                },
                SourceArg::Kxs5 => match translate_product_s5(&bf) {
                    Ok(formula) => (formula, None),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_INPUT;
                    }
                },
                SourceArg::Kxdiff => match translate_product_diff(&bf) {
                    Ok(out) => (out.formula, Some(out.zeta)),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_INPUT;
                    }
                },
                _ => unreachable!(),
            };
            println!("{}", print(&formula));
            if zeta {
                match zeta_part {
                    Some(z) => println!("{}", print(&z)),
                    None => {
                        eprintln!("error: this translation has no separate axiom part");
                        return EXIT_INPUT;
                    }
                }
            }
            EXIT_SAT
        }
        SourceArg::Pin => {
            let f = match parse_arg(input) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INPUT;
                }
            };
            let n = match n {
                Some(n) if n >= 1 => n,
                Some(_) => {
                    eprintln!("error: --n must be at least 1, domains are never empty");
                    return EXIT_INPUT;
                }
                None => {
                    eprintln!("error: the pin transformation needs --n");
                    return EXIT_INPUT;
                }
            };
            println!("{}", print(&pin_domain(&f, n)));
            EXIT_SAT
        }
        SourceArg::Relativize => {
            let f = match parse_arg(input) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INPUT;
                }
            };
            match relativize(&f, "E_dom") {
                Ok(g) => {
                    println!("{}", print(&g));
                    EXIT_SAT
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INPUT
                }
            }
        }
    }
}

fn cmd_gen(what: GenCmd) -> i32 {
    match what {
        GenCmd::Theta { n } => {
            println!("{}", print(&gen_theta(n)));
            EXIT_SAT
        }
        GenCmd::Corpus { seed, size } => {
            for f in corpus(seed, size) {
                println!("{}", print(&f));
            }
            EXIT_SAT
        }
    }
}
