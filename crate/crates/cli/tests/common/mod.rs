//! Shared helpers for CLI integration tests: fixture construction in temp
//! dirs and binary invocation.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajforge_core::backends::OutcomeLabel;
use trajforge_core::envstore::{Domain, EnvironmentBundle, ResourceLimits};

pub const PASS_CODE: &str = "mem 8\nset 0 5\nout 0\n";
pub const WRONG_CODE: &str = "mem 8\nset 0 7\nout 0\n";
pub const OVER_BUDGET_CODE: &str = "mem 16\nset 0 5\nout 0\n";
pub const BROKEN_CODE: &str = "mem 8\nfrob 1\n";

/// Write a reference-domain bundle expecting the single output `5`.
pub fn write_reference_bundle(dir: &Path, bundle_id: &str) -> EnvironmentBundle {
    let mut artifacts = BTreeMap::new();
    artifacts.insert("tests.expected".to_string(), b"5\n".to_vec());
    artifacts.insert(
        "task.txt".to_string(),
        b"Emit the value 5 within the resource limits.\n".to_vec(),
    );
    let bundle = EnvironmentBundle::from_parts(
        bundle_id,
        Domain::Reference,
        "reference",
        artifacts,
        ResourceLimits {
            memory_budget: 8,
            step_limit: 100,
            wall_time_ms: 1000,
        },
    )
    .unwrap();
    bundle.write_to_dir(&dir.join(bundle_id)).unwrap();
    bundle
}

/// Seeds file where every seed uses the bundle with the same id.
pub fn write_seeds(path: &Path, seed_ids: &[&str]) {
    let mut text = String::new();
    for seed_id in seed_ids {
        text.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "seed_id": seed_id,
                "domain": "reference",
                "description": "emit the value 5",
                "expected_interface": "out",
                "bundle": seed_id,
            })
        ));
    }
    fs::write(path, text).unwrap();
}

/// One scripted policy entry.
pub struct PolicyLine<'a> {
    pub seed_id: &'a str,
    pub prior: Option<OutcomeLabel>,
    pub turn: usize,
    pub reasoning: &'a str,
    pub code: &'a str,
}

/// Write a policy file plus its referenced reasoning/code files.
pub fn write_policy(dir: &Path, lines: &[PolicyLine<'_>]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut text = String::new();
    for (i, line) in lines.iter().enumerate() {
        let reasoning_file = format!("r{i}.txt");
        let code_file = format!("c{i}.txt");
        fs::write(dir.join(&reasoning_file), line.reasoning).unwrap();
        fs::write(dir.join(&code_file), line.code).unwrap();
        text.push_str(&format!(
            "{} | {} | {} | {} | {}\n",
            line.seed_id,
            line.prior.map(OutcomeLabel::as_str).unwrap_or("-"),
            line.turn,
            reasoning_file,
            code_file
        ));
    }
    let path = dir.join("policy.txt");
    fs::write(&path, text).unwrap();
    path
}

pub fn write_config(path: &Path, pairs: &[(&str, String)]) {
    let mut text = String::new();
    for (key, value) in pairs {
        text.push_str(&format!("{key} = {value}\n"));
    }
    fs::write(path, text).unwrap();
}

pub fn trajforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

/// A three-seed scripted fixture: one immediate pass, one fault-then-fix,
/// one never-passing.
pub fn standard_fixture(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let bundles = root.join("bundles");
    fs::create_dir_all(&bundles).unwrap();
    for seed in ["s-pass", "s-fix", "s-fail"] {
        write_reference_bundle(&bundles, seed);
    }
    let seeds = root.join("seeds.jsonl");
    write_seeds(&seeds, &["s-pass", "s-fix", "s-fail"]);

    let mut lines = vec![
        PolicyLine {
            seed_id: "s-pass",
            prior: None,
            turn: 0,
            reasoning: "direct solution",
            code: PASS_CODE,
        },
        PolicyLine {
            seed_id: "s-fix",
            prior: None,
            turn: 0,
            reasoning: "use a larger scratch area",
            code: OVER_BUDGET_CODE,
        },
        PolicyLine {
            seed_id: "s-fix",
            prior: Some(OutcomeLabel::MemoryFault),
            turn: 1,
            reasoning: "halve the declaration to fit the budget",
            code: PASS_CODE,
        },
        PolicyLine {
            seed_id: "s-fail",
            prior: None,
            turn: 0,
            reasoning: "guess",
            code: WRONG_CODE,
        },
    ];
    for k in 1..=6 {
        lines.push(PolicyLine {
            seed_id: "s-fail",
            prior: Some(OutcomeLabel::WrongOutput),
            turn: k,
            reasoning: "same guess again",
            code: WRONG_CODE,
        });
    }
    let policy = write_policy(&root.join("policy"), &lines);
    (seeds, bundles, policy)
}
