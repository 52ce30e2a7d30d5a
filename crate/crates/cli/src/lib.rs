//! `crbkit` command-line front end.
//!
//! Exit status: 0 on success, 2 for input errors (bad flags, malformed
//! documents, invalid families), 3 when the numerics reject the problem
//! (non-PSD matrix, unidentified parameters, ...).

pub mod doc;
pub mod render;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crbkit::bounds::{compare_bounds, trace_bound, BoundReport};
use crbkit::estimation::{attainability_study, EstimationRun};
use crbkit::information::{
    closed_form_qfim, compare_provenance, many_body_qfim, qfim, qfim_fd_oracle, InfoMatrix,
    ProvenanceComparison,
};
use crbkit::numerics::TolerancePolicy;
use crbkit::probes::{build_family, Povm};
use crbkit::reduction::{
    constraint_function, reduce_problem, support_decomposition, trace_consistency, ConstraintFunction,
    ReducedProblem, TraceConsistency,
};
use crbkit::strategy::{
    analyze_probe, AnalyzeOptions, CrossCheck, ProbeSpec, ProvenanceMode, Scenario, StrategyReport,
    FD_CHECK_TOL,
};
use serde::Serialize;

use crate::doc::{builtin_povm, parse_povm, parse_probe, DocError, ProbeDocument};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Name of the environment variable holding the default tolerance policy.
pub const TOL_ENV: &str = "CRB_TOL";

#[derive(Parser, Debug)]
#[command(
    name = "crbkit",
    version,
    about = "Cramér-Rao bounds for singular Fisher information matrices",
    after_help = "Tolerances: `1e-12` or `rel:1e-12` (relative to the largest eigenvalue), `abs:1e-12` (absolute).\nCRB_TOL sets the default; --tol wins."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the information matrix of a probe or spin model.
    Qfim(ProbeArgs),
    /// Full decision-flow report: invertibility, constraint, reduction, bounds.
    Analyze {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long, value_enum, default_value_t = ScenarioArg::Se)]
        scenario: ScenarioArg,
        /// Weight vector for distributed sensing, comma separated.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        weight: Option<Vector>,
        /// Point where the constraint function vanishes.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        anchor: Option<Vector>,
    },
    /// Exact and weak bounds for a weight vector.
    Bounds {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        weight: Option<Vector>,
    },
    /// Constraint function and reduced problem.
    Reduce {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        weight: Option<Vector>,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        anchor: Option<Vector>,
    },
    /// Monte Carlo maximum-likelihood study against the reduced bound.
    Simulate {
        #[command(flatten)]
        probe: ProbeArgs,
        /// POVM document, or `builtin:NAME` (plus_minus, pairwise, computational, identity).
        /// Defaults to `builtin:pairwise`.
        #[arg(long)]
        povm: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in probe families and spin models.
    Families,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    /// Probe document (JSON).
    #[arg(long)]
    probe: PathBuf,
    /// Parameter point, comma separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    x: Option<Vector>,
    /// Rank tolerance, e.g. `rel:1e-12` or `abs:1e-9`.
    #[arg(long)]
    tol: Option<String>,
    #[arg(long, value_enum, default_value_t = ProvenanceArg::Generic)]
    provenance: ProvenanceArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Se,
    Dqs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProvenanceArg {
    Generic,
    Closed,
    Both,
}

impl From<ProvenanceArg> for ProvenanceMode {
    fn from(p: ProvenanceArg) -> Self {
        match p {
            ProvenanceArg::Generic => ProvenanceMode::Generic,
            ProvenanceArg::Closed => ProvenanceMode::Closed,
            ProvenanceArg::Both => ProvenanceMode::Both,
        }
    }
}

/// Comma-separated decimals from the command line.
#[derive(Clone, Debug, PartialEq)]
struct Vector(Vec<f64>);

fn parse_vector(s: &str) -> Result<Vector, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite decimal"))
        })
        .collect::<Result<_, _>>()
        .map(Vector)
}

fn vec_of(v: &Option<Vector>) -> Option<Vec<f64>> {
    v.as_ref().map(|v| v.0.clone())
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<crbkit::Error> for Failure {
    fn from(e: crbkit::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CmdResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    artifact: &'static str,
    artifact_version: &'static str,
    command: &'a str,
    tolerance: String,
    probe: Option<ProbeEcho>,
    result: T,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct ProbeEcho {
    family: &'static str,
    n_params: usize,
    labels: Vec<String>,
    x: Vec<f64>,
}

#[derive(Serialize)]
struct QfimResult {
    information: InfoMatrix,
    closed_form: Option<InfoMatrix>,
    cross_checks: Vec<CrossCheck>,
    discrepancy: Option<ProvenanceComparison>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct BoundsResult {
    information: InfoMatrix,
    trace_bound: f64,
    bounds: BoundReport,
}

#[derive(Serialize)]
struct ReduceResult {
    information: InfoMatrix,
    dim: usize,
    rank: usize,
    eigenvalues: Vec<f64>,
    tolerance_used: f64,
    constraint: ConstraintFunction,
    constraint_equations: Vec<String>,
    reduced: ReducedProblem,
    trace_consistency: TraceConsistency,
}

#[derive(Serialize)]
struct SimulateResult {
    povm: String,
    n_outcomes: usize,
    run: EstimationRun,
}

#[derive(Serialize)]
struct FamilyInfo {
    family: &'static str,
    kind: &'static str,
    parameters: &'static str,
    example: &'static str,
}

const FAMILY_TABLE: [FamilyInfo; 6] = [
    FamilyInfo {
        family: "ghz_like",
        kind: "probe",
        parameters: "nu: real sequence (one phase per parameter)",
        example: r#"{"family": "ghz_like", "nu": [1, -2]}"#,
    },
    FamilyInfo {
        family: "noon_like",
        kind: "probe",
        parameters: "nu: nonzero real sequence",
        example: r#"{"family": "noon_like", "nu": [1, 1]}"#,
    },
    FamilyInfo {
        family: "cyclic_paired",
        kind: "probe",
        parameters: "m: integer >= 2",
        example: r#"{"family": "cyclic_paired", "m": 4}"#,
    },
    FamilyInfo {
        family: "custom",
        kind: "probe",
        parameters: "kets: [{label, re, im, encoding}], optional n_params",
        example: r#"{"family": "custom", "kets": [{"label": "a", "re": 0.6, "im": 0, "encoding": [1]}, {"label": "b", "re": 0.8, "im": 0, "encoding": [0]}]}"#,
    },
    FamilyInfo {
        family: "transverse_ising",
        kind: "spin model (omega, g)",
        parameters: "omega, g: real; n_sites: even integer >= 2",
        example: r#"{"family": "transverse_ising", "omega": 1, "g": 0.5, "n_sites": 4}"#,
    },
    FamilyInfo {
        family: "xy_three_site",
        kind: "spin model (lambda, gamma)",
        parameters: "lambda, gamma, h: real, 2h + lambda != 0",
        example: r#"{"family": "xy_three_site", "lambda": 0.8, "gamma": 1.1, "h": 0.5}"#,
    },
];

/// Parses `args` (including the program name) and runs the command, reading
/// the default tolerance from `CRB_TOL`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_tol = std::env::var(TOL_ENV).ok();
    run_with_env(args, env_tol.as_deref(), out, err)
}

/// As [`run`] with an explicit `CRB_TOL` value.
pub fn run_with_env<I, T>(args: I, env_tol: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_INPUT
                }
            };
        }
    };
    let mut warnings = Vec::new();
    let outcome = dispatch(&cli, env_tol, &mut warnings);
    for w in &warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    match outcome {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            EXIT_OK
        }
        Err(Failure::Input(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INPUT
        }
        Err(Failure::Numerical(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_NUMERICAL
        }
    }
}

fn emit<T: Serialize>(
    format: Format,
    command: &str,
    tol: Option<&TolerancePolicy>,
    probe: Option<ProbeEcho>,
    result: T,
    warnings: &[String],
) -> CmdResult<String> {
    let env = Envelope {
        artifact: "crbkit",
        artifact_version: env!("CARGO_PKG_VERSION"),
        command,
        tolerance: tol.map(ToString::to_string).unwrap_or_else(|| "-".into()),
        probe,
        result,
        warnings,
    };
    let value = serde_json::to_value(&env).map_err(|e| Failure::Numerical(format!("serializing report: {e}")))?;
    Ok(match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Text => render::render_text(&value),
    })
}

fn read_file(path: &Path, what: &str) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_probe(path: &Path) -> CmdResult<ProbeDocument> {
    let text = read_file(path, "probe document")?;
    parse_probe(&text).map_err(|e: DocError| Failure::Input(format!("{}: {e}", path.display())))
}

fn resolve_tol(flag: Option<&str>, env_tol: Option<&str>, dim: usize) -> CmdResult<TolerancePolicy> {
    if let Some(t) = flag {
        return TolerancePolicy::parse(t).map_err(|e| Failure::Input(format!("--tol: {e}")));
    }
    if let Some(t) = env_tol.filter(|t| !t.trim().is_empty()) {
        return TolerancePolicy::parse(t).map_err(|e| Failure::Input(format!("{TOL_ENV}: {e}")));
    }
    Ok(TolerancePolicy::machine(dim))
}

/// File value wins over the flag; both present is worth a warning.
fn merge(file: &Option<Vec<f64>>, flag: &Option<Vec<f64>>, name: &str, warnings: &mut Vec<String>) -> Option<Vec<f64>> {
    match (file, flag) {
        (Some(f), Some(_)) => {
            warnings.push(format!("probe document sets `{name}`; ignoring --{name}"));
            Some(f.clone())
        }
        (Some(f), None) => Some(f.clone()),
        (None, flag) => flag.clone(),
    }
}

fn check_len(v: &Option<Vec<f64>>, n: usize, name: &str) -> CmdResult<()> {
    match v {
        Some(v) if v.len() != n => Err(Failure::Input(format!("--{name}: expected {n} values, got {}", v.len()))),
        _ => Ok(()),
    }
}

struct Loaded {
    doc: ProbeDocument,
    x: Vec<f64>,
    labels: Vec<String>,
    tol: TolerancePolicy,
}

fn load(args: &ProbeArgs, env_tol: Option<&str>, warnings: &mut Vec<String>) -> CmdResult<Loaded> {
    let doc = load_probe(&args.probe)?;
    let n = doc.n_params();
    let flag_x = vec_of(&args.x);
    check_len(&flag_x, n, "x")?;
    let (x, labels) = match &doc.spec {
        ProbeSpec::Family(_) => (
            merge(&doc.x, &flag_x, "x", warnings).unwrap_or_else(|| vec![0.0; n]),
            doc.labels.clone().unwrap_or_else(|| crbkit::information::default_labels(n)),
        ),
        ProbeSpec::ManyBody(m) => {
            if flag_x.is_some() || doc.x.is_some() {
                warnings.push("spin models are evaluated at their own parameter point; ignoring x".into());
            }
            (m.point(), m.labels())
        }
    };
    let tol = resolve_tol(args.tol.as_deref(), env_tol, n)?;
    Ok(Loaded { doc, x, labels, tol })
}

fn echo(l: &Loaded) -> ProbeEcho {
    ProbeEcho {
        family: l.doc.family(),
        n_params: l.doc.n_params(),
        labels: l.labels.clone(),
        x: l.x.clone(),
    }
}

/// The matrix a command works on, plus everything computed to choose it.
fn information(l: &Loaded, provenance: ProvenanceArg) -> CmdResult<QfimResult> {
    let mut notes = Vec::new();
    match &l.doc.spec {
        ProbeSpec::ManyBody(m) => {
            if provenance != ProvenanceArg::Closed {
                notes.push("no generic engine for spin models; closed-form QFIM used".into());
            }
            Ok(QfimResult {
                information: many_body_qfim(m)?,
                closed_form: None,
                cross_checks: Vec::new(),
                discrepancy: None,
                notes,
            })
        }
        ProbeSpec::Family(f) => {
            let state = build_family(f)?;
            let generic = qfim(&state, &l.x)?.with_labels(l.labels.clone())?;
            let fd = qfim_fd_oracle(&state, &l.x, 1e-5)?;
            let closed = match closed_form_qfim(f) {
                Ok(c) => Some(c.with_labels(l.labels.clone())?),
                Err(crbkit::Error::NoClosedForm(_)) => None,
                Err(e) => return Err(e.into()),
            };
            let mut cross_checks = vec![CrossCheck::between("generic_vs_finite_difference", &generic, &fd, FD_CHECK_TOL)];
            if let Some(c) = &closed {
                cross_checks.push(CrossCheck::between("generic_vs_closed_form", &generic, c, 1e-10));
            }
            let (information, closed_form, discrepancy) = match provenance {
                ProvenanceArg::Generic => (generic, closed, None),
                ProvenanceArg::Closed => {
                    let c = closed.ok_or_else(|| Failure::Input(format!("no closed-form QFIM for family `{}`", f.name())))?;
                    (c, None, None)
                }
                ProvenanceArg::Both => {
                    let c = closed.ok_or_else(|| Failure::Input(format!("no closed-form QFIM for family `{}`", f.name())))?;
                    let cmp = compare_provenance(&c, &generic, &l.tol)?;
                    (generic, Some(c), Some(cmp))
                }
            };
            Ok(QfimResult {
                information,
                closed_form,
                cross_checks,
                discrepancy,
                notes,
            })
        }
    }
}

fn dispatch(cli: &Cli, env_tol: Option<&str>, warnings: &mut Vec<String>) -> CmdResult<String> {
    let format = cli.format;
    match &cli.command {
        Command::Families => emit(format, "families", None, None, &FAMILY_TABLE, warnings),
        Command::Qfim(args) => {
            let l = load(args, env_tol, warnings)?;
            let res = information(&l, args.provenance)?;
            emit(format, "qfim", Some(&l.tol), Some(echo(&l)), res, warnings)
        }
        Command::Analyze {
            probe,
            scenario,
            weight,
            anchor,
        } => {
            let l = load(probe, env_tol, warnings)?;
            let n = l.doc.n_params();
            let (weight, anchor) = (vec_of(weight), vec_of(anchor));
            check_len(&weight, n, "weight")?;
            check_len(&anchor, n, "anchor")?;
            let weight = merge(&l.doc.weight, &weight, "weight", warnings);
            let anchor = merge(&l.doc.anchor, &anchor, "anchor", warnings);
            let sc = match scenario {
                ScenarioArg::Se => {
                    if weight.is_some() {
                        warnings.push("weight ignored for simultaneous estimation".into());
                    }
                    Scenario::simultaneous()
                }
                ScenarioArg::Dqs => Scenario::distributed(
                    weight.ok_or_else(|| Failure::Input("--scenario dqs needs a weight (--weight or `weight` in the probe document)".into()))?,
                ),
            };
            let opts = AnalyzeOptions {
                provenance: probe.provenance.into(),
                tol: Some(l.tol),
                anchor,
                labels: Some(l.labels.clone()),
            };
            let report: StrategyReport = analyze_probe(&l.doc.spec, Some(&l.x), &sc, &opts)?;
            emit(format, "analyze", Some(&l.tol), Some(echo(&l)), report, warnings)
        }
        Command::Bounds { probe, weight } => {
            let l = load(probe, env_tol, warnings)?;
            let weight = vec_of(weight);
            check_len(&weight, l.doc.n_params(), "weight")?;
            let weight = merge(&l.doc.weight, &weight, "weight", warnings)
                .ok_or_else(|| Failure::Input("bounds needs a weight (--weight or `weight` in the probe document)".into()))?;
            let info = information(&l, probe.provenance)?;
            let f = info.information;
            let res = BoundsResult {
                trace_bound: trace_bound(&f, &l.tol)?,
                bounds: compare_bounds(&f, &weight, &l.tol)?,
                information: f,
            };
            emit(format, "bounds", Some(&l.tol), Some(echo(&l)), res, warnings)
        }
        Command::Reduce { probe, weight, anchor } => {
            let l = load(probe, env_tol, warnings)?;
            let n = l.doc.n_params();
            let (weight, anchor) = (vec_of(weight), vec_of(anchor));
            check_len(&weight, n, "weight")?;
            check_len(&anchor, n, "anchor")?;
            let weight = merge(&l.doc.weight, &weight, "weight", warnings);
            let default_anchor = match &l.doc.spec {
                ProbeSpec::Family(_) => vec![0.0; n],
                ProbeSpec::ManyBody(m) => m.point(),
            };
            let anchor = merge(&l.doc.anchor, &anchor, "anchor", warnings).unwrap_or(default_anchor);
            let f = information(&l, probe.provenance)?.information;
            let dec = support_decomposition(&f, &l.tol)?;
            let constraint = constraint_function(&dec, &anchor)?;
            let reduced = reduce_problem(&f, &dec, weight.as_deref())?.anchored(&constraint);
            let res = ReduceResult {
                dim: dec.dim,
                rank: dec.rank,
                eigenvalues: dec.eigenvalues.clone(),
                tolerance_used: dec.tolerance_used,
                constraint_equations: constraint.equations(&f.param_labels),
                constraint,
                reduced,
                trace_consistency: trace_consistency(&f, &l.tol)?,
                information: f,
            };
            emit(format, "reduce", Some(&l.tol), Some(echo(&l)), res, warnings)
        }
        Command::Simulate {
            probe,
            povm,
            shots,
            reps,
            seed,
        } => {
            let l = load(probe, env_tol, warnings)?;
            let ProbeSpec::Family(f) = &l.doc.spec else {
                return Err(Failure::Input("simulate needs a pure-state probe family, not a spin model".into()));
            };
            let state = build_family(f)?;
            let source = povm.clone().unwrap_or_else(|| "builtin:pairwise".into());
            let measurement: Povm = match source.strip_prefix("builtin:") {
                Some(name) => builtin_povm(name, state.dim()).map_err(Failure::Input)?,
                None => {
                    let path = Path::new(&source);
                    let text = read_file(path, "POVM document")?;
                    parse_povm(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
                }
            };
            let run = attainability_study(&state, &measurement, &l.x, *shots, *reps, *seed, &l.tol)?;
            let res = SimulateResult {
                povm: source,
                n_outcomes: measurement.n_outcomes(),
                run,
            };
            emit(format, "simulate", Some(&l.tol), Some(echo(&l)), res, warnings)
        }
    }
}
