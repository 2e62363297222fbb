//! `scalegeo`: batch front end for canonical weights, invariant tables,
//! equivalence checks and wild sets.
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a parse error.
//! Errors are reported on stderr as `{"error": <kind>, "message": <text>}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use serde::Serialize;
use serde_json::{json, Value};

use scalegeo_core::io::{read_gram_file, read_tuple_spec};
use scalegeo_core::rational::{format_rational, parse_rational};
use scalegeo_core::spectral::{
    canonical_weight, canonical_weight_exact, check_multiplicativity, inclusion_difference, invariant_table,
    pair_gram, power_iteration_norm, splice_tuple, GramPairTrunc, InvariantOptions, InvariantTable,
};
use scalegeo_core::weightfn::{equiv_check, inclusion_tail_norm, EquivVerdict, TailRule, Weight, WeightSpec};
use scalegeo_core::wildperm::{grow_wild_set, WildConfig};
use scalegeo_core::{Error, ScaleTupleTrunc};

#[derive(Debug, Parser)]
#[command(name = "scalegeo", version, about = "Canonical weights, invariant tables and wild permutation sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Output {
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Canonical weight of a Gram pair, or of the pair (ℓ², ℓ²_f)
    Canonicalize {
        #[arg(long, requires = "gram_w")]
        gram_h: Option<PathBuf>,
        #[arg(long, requires = "gram_h")]
        gram_w: Option<PathBuf>,
        /// Weight spec; used with --n instead of Gram files
        #[arg(long, conflicts_with = "gram_h")]
        f1: Option<String>,
        /// Truncation dimension for --f1
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Residual bound relative to ‖G_H‖
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Invariant table of a scale tuple and its multiplicativity check
    Invariant {
        /// Tuple JSON or a file containing it
        #[arg(long)]
        tuple: String,
        /// Truncation dimension for weight-based tuples
        #[arg(long)]
        n: Option<usize>,
        /// Relative tolerance for non-exact tables
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Grow a certified wild set
    Wild {
        #[arg(long)]
        f1: String,
        #[arg(long)]
        f2: String,
        /// Number of generators, including the identity
        #[arg(long, default_value_t = 2)]
        size: usize,
        /// Blocks generated eagerly per permutation
        #[arg(long, default_value_t = 5)]
        depth: usize,
        /// Index cap for scans and witnesses
        #[arg(long, default_value_t = 1_000_000)]
        cap: u64,
        /// Ratio threshold for pairwise witnesses
        #[arg(long, default_value = "10")]
        threshold: String,
        /// Rows of the growth curve (CSV output)
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Decide or test equivalence of two weights
    Equiv {
        #[arg(long, alias = "a")]
        f1: String,
        #[arg(long, alias = "b")]
        f2: String,
        #[arg(long, default_value_t = 1000)]
        window: u64,
        /// Ratio bound above which a witness is reported
        #[arg(long, default_value = "1000")]
        threshold: String,
        #[command(flatten)]
        output: Output,
    },
    /// Norm of the inclusion ℓ²_f → ℓ² minus its rank-n truncation
    Pairnorm {
        #[arg(long)]
        f1: String,
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Dimension of the power-iteration cross-check
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Splice a triple onto a tail tuple and report the invariant table
    Splice {
        /// Triple (tuple of length 3)
        #[arg(long)]
        tuple: String,
        /// Tail tuple
        #[arg(long)]
        tail: String,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
}

/// Weight from JSON, a file holding JSON, or shorthand such as `power:1`,
/// `exp:2`, `power_log:1:2` or `table:1,2,4`.
fn parse_weight(arg: &str) -> Result<Weight, Error> {
    let text = arg.trim();
    if text.starts_with('{') {
        let spec: WeightSpec = serde_json::from_str(text).map_err(|e| Error::Parse(format!("weight JSON: {e}")))?;
        return Weight::from_spec(&spec);
    }
    let path = Path::new(text);
    if path.is_file() {
        let body = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{text}: {e}")))?;
        return parse_weight(&body);
    }
    let parts: Vec<&str> = text.split(':').collect();
    let q = |s: &str| parse_rational(s);
    match parts.as_slice() {
        ["power", a] => Weight::power(q(a)?),
        ["exp", b] | ["exponential", b] => Weight::exponential(q(b)?),
        ["power_log", a, g] => Weight::power_log(q(a)?, q(g)?),
        ["table", values] | ["table", values, "linear"] => Weight::table(parse_list(values)?, TailRule::Linear),
        ["table", values, "error"] => Weight::table(parse_list(values)?, TailRule::Error),
        _ => Err(Error::Parse(format!("cannot read weight {text:?}"))),
    }
}

fn parse_list(values: &str) -> Result<Vec<BigRational>, Error> {
    values.split(',').map(parse_rational).collect()
}

fn read_tuple(arg: &str, size: Option<usize>) -> Result<ScaleTupleTrunc, Error> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Error::Parse(format!("{arg}: {e}")))?
    };
    read_tuple_spec(&text)?.build(size)
}

/// Shortest decimal that survives rounding to 12 significant digits.
fn tidy(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap_or(v)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::CapacityExceeded(format!("writing CSV: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::CapacityExceeded(format!("writing CSV: {e}")))
}

fn emit(output: &Output, bytes: &[u8]) -> Result<(), Error> {
    match &output.out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::CapacityExceeded(format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::CapacityExceeded(format!("stdout: {e}"))),
    }
}

fn table_json(table: &InvariantTable, tol: f64) -> Value {
    let entries: Vec<Value> = table
        .entries
        .iter()
        .map(|(&(i, j), values)| {
            let values: Vec<Value> = match &table.exact {
                Some(exact) => exact[&(i, j)].iter().map(|v| Value::String(format_rational(v))).collect(),
                None => values.iter().map(|v| json!(tidy(*v))).collect(),
            };
            json!({ "i": i, "j": j, "values": values })
        })
        .collect();
    let report = check_multiplicativity(table, tol);
    json!({
        "length": table.len,
        "dimension": table.dim,
        "entries": entries,
        "cross_check": table.cross_check,
        "multiplicativity": {
            "holds": report.holds,
            "exact": report.exact,
            "worst_ratio": report.worst_ratio,
            "worst_at": report.worst_at.map(|(i, j, nu)| json!({ "i": i, "j": j, "nu": nu })),
        },
    })
}

fn emit_table(table: &InvariantTable, tol: f64, output: &Output) -> Result<(), Error> {
    match output.format {
        Format::Json => emit(output, &to_json_bytes(&table_json(table, tol))),
        Format::Csv => {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            emit(output, &buf)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Canonicalize { gram_h, gram_w, f1, n, tol, output } => {
            let pair = match (gram_h, gram_w, f1) {
                (Some(h), Some(w), None) => GramPairTrunc::new(read_gram_file(&h)?, read_gram_file(&w)?)?,
                (None, None, Some(f)) => pair_gram(&parse_weight(&f)?, n)?,
                _ => return Err(Error::Parse("give either --gram-h and --gram-w, or --f1".into())),
            };
            let cw = canonical_weight(&pair)?;
            if cw.eigen.max_residual > tol {
                return Err(Error::ConvergenceFailure { sweeps: cw.eigen.sweeps, off_norm: cw.eigen.max_residual });
            }
            let exact = canonical_weight_exact(&pair);
            match output.format {
                Format::Json => {
                    let value = json!({
                        "dimension": pair.dim(),
                        "weight": cw.f.iter().map(|v| tidy(*v)).collect::<Vec<_>>(),
                        "exact": exact.as_ref().map(|e| e.iter().map(format_rational).collect::<Vec<_>>()),
                        "lambda": cw.eigen.lambda,
                        "max_residual": cw.eigen.max_residual,
                        "sweeps": cw.eigen.sweeps,
                        "degenerate": cw.degenerate,
                    });
                    emit(&output, &to_json_bytes(&value))
                }
                Format::Csv => {
                    let rows = cw
                        .f
                        .iter()
                        .enumerate()
                        .map(|(k, v)| vec![(k + 1).to_string(), tidy(*v).to_string()])
                        .collect();
                    emit(&output, &csv_bytes(&["nu", "weight"], rows)?)
                }
            }
        }
        Command::Invariant { tuple, n, tol, output } => {
            let tuple = read_tuple(&tuple, n)?;
            let table = invariant_table(&tuple, InvariantOptions::default())?;
            emit_table(&table, tol, &output)
        }
        Command::Wild { f1, f2, size, depth, cap, threshold, n, output } => {
            let (f1, f2) = (parse_weight(&f1)?, parse_weight(&f2)?);
            let c = parse_rational(&threshold)?;
            let config = WildConfig { depth, scan_cap: cap, ..WildConfig::default() };
            let set = grow_wild_set(&f1, &f2, size, &config, &c, cap)?;
            match output.format {
                Format::Json => emit(&output, &to_json_bytes(&set.to_json())),
                Format::Csv => {
                    let mut buf = Vec::new();
                    set.write_growth_csv(n, &mut buf)?;
                    emit(&output, &buf)
                }
            }
        }
        Command::Equiv { f1, f2, window, threshold, output } => {
            let (a, b) = (parse_weight(&f1)?, parse_weight(&f2)?);
            let verdict = equiv_check(&a, &b, window, &parse_rational(&threshold)?)?;
            let (kind, fields) = match &verdict {
                EquivVerdict::ExactDecision { equivalent } => {
                    ("ExactDecision", vec![("equivalent".to_string(), equivalent.to_string())])
                }
                EquivVerdict::BoundedRatio { c, window } => (
                    "BoundedRatio",
                    vec![("c".to_string(), format_rational(c)), ("window".to_string(), window.to_string())],
                ),
                EquivVerdict::DivergenceWitness { index, ratio } => (
                    "DivergenceWitness",
                    vec![("index".to_string(), index.to_string()), ("ratio".to_string(), format_rational(ratio))],
                ),
            };
            match output.format {
                Format::Json => {
                    let value = match verdict {
                        EquivVerdict::ExactDecision { equivalent } => {
                            json!({ "verdict": kind, "equivalent": equivalent })
                        }
                        EquivVerdict::BoundedRatio { c, window } => {
                            json!({ "verdict": kind, "c": format_rational(&c), "window": window })
                        }
                        EquivVerdict::DivergenceWitness { index, ratio } => {
                            json!({ "verdict": kind, "index": index, "ratio": format_rational(&ratio) })
                        }
                    };
                    emit(&output, &to_json_bytes(&value))
                }
                Format::Csv => {
                    let mut rows = vec![vec!["verdict".to_string(), kind.to_string()]];
                    rows.extend(fields.into_iter().map(|(k, v)| vec![k, v]));
                    emit(&output, &csv_bytes(&["field", "value"], rows)?)
                }
            }
        }
        Command::Pairnorm { f1, n, size, tol, output } => {
            let f = parse_weight(&f1)?;
            if n >= size {
                return Err(Error::Precondition(format!("n = {n} must be below the dimension {size}")));
            }
            let formula = inclusion_tail_norm(&f, n as u64)?;
            let measured = power_iteration_norm(&inclusion_difference(&f, n, size)?, tol, 1_000_000)?;
            match output.format {
                Format::Json => {
                    let value = json!({ "n": n, "dimension": size, "formula": formula, "power_iteration": measured });
                    emit(&output, &to_json_bytes(&value))
                }
                Format::Csv => {
                    let row = vec![n.to_string(), formula.to_string(), measured.to_string()];
                    emit(&output, &csv_bytes(&["n", "formula", "power_iteration"], vec![row])?)
                }
            }
        }
        Command::Splice { tuple, tail, n, output } => {
            let triple = read_tuple(&tuple, n)?;
            let tail = read_tuple(&tail, n)?;
            let spliced = splice_tuple(&triple, &tail)?;
            let table = invariant_table(&spliced, InvariantOptions::default())?;
            emit_table(&table, 0.0, &output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            if matches!(e, Error::Parse(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
