#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process with `CRB_TOL` unset.
pub fn cli(args: &[&str]) -> Output {
    cli_env(args, None)
}

pub fn cli_env(args: &[&str], env_tol: Option<&str>) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("crbkit").chain(args.iter().copied());
    let code = crbkit_cli::run_with_env(argv, env_tol, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// One regression fixture per decision-flow branch: (golden name, probe, extra args).
pub const BRANCH_CASES: [(&str, &str, &[&str]); 5] = [
    ("se_invertible", "noon2.json", &["--scenario", "se"]),
    ("se_non_invertible", "ghz.json", &["--scenario", "se"]),
    ("dqs_invertible", "noon2.json", &["--scenario", "dqs", "--weight", "1,0"]),
    ("dqs_w_in_support", "ghz.json", &["--scenario", "dqs", "--weight", "0.3333333333,-0.6666666667"]),
    ("dqs_w_with_kernel_component", "ghz.json", &["--scenario", "dqs", "--weight", "2,1"]),
];

pub fn branch_report(probe: &str, extra: &[&str]) -> Output {
    let path = fixture(probe);
    let mut args = vec!["analyze", "--probe", path.as_str(), "--format", "json"];
    args.extend_from_slice(extra);
    cli(&args)
}
