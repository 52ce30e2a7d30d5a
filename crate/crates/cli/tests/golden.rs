//! Stored analyze reports, one per decision-flow branch.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p crbkit-cli --test golden`.

mod common;

use common::{branch_report, golden_dir, BRANCH_CASES};

#[test]
fn branch_reports_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, probe, extra) in BRANCH_CASES {
        let out = branch_report(probe, extra);
        assert_eq!(out.code, 0, "{name}: {}", out.stderr);
        let path = golden_dir().join(format!("{name}.json"));
        if update {
            std::fs::write(&path, &out.stdout).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()));
        assert!(out.stdout == want, "{name}: report differs from {}", path.display());
    }
}

#[test]
fn each_golden_file_is_on_its_branch() {
    let expected = [
        "SE/invertible",
        "SE/non-invertible",
        "DQS/invertible",
        "DQS/non-invertible/w-in-support",
        "DQS/non-invertible/w-with-kernel-component",
    ];
    for ((name, _, _), branch) in BRANCH_CASES.iter().zip(expected) {
        let text = std::fs::read_to_string(golden_dir().join(format!("{name}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["result"]["branch"], branch, "{name}");
    }
}
