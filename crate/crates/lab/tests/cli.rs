//! Drives the `chemotaxis-lab` binary end to end and reads its files back.

use std::path::Path;
use std::process::{Command, Output};

use chemotaxis_lab::experiments::{run, REFINEMENT_COLUMNS, SWEEP_COLUMNS};
use chemotaxis_lab::output::{
    parse_verdicts, read_records, read_table, REFINEMENT_VERSION, SWEEP_VERSION,
};
use chemotaxis_lab::presets::{names, preset};
use chemotaxis_lab::{RunConfig, Status};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemotaxis-lab"))
        .args(args)
        .env_remove("CHEMOTAXIS_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, config: &RunConfig) -> String {
    let path = dir.join("run.ini");
    std::fs::write(&path, config.to_ini()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn presets_are_listed() {
    let out = lab(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in names() {
        assert!(text.contains(name), "{name} missing from listing");
    }
}

#[test]
fn run_writes_records_that_read_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("2d-smooth").unwrap();
    c.t_end = 0.01;
    c.record_stride = 3;
    let config = write_config(dir.path(), &c);
    let out_dir = dir.path().join("out");
    let out = lab(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    let records = read_records(&out_dir.join("records.csv")).unwrap();
    let expected = run(&c).unwrap().records;
    assert_eq!(records, expected);
    assert_eq!(records.first().unwrap().t, 0.0);
    assert_eq!(records.last().unwrap().t, 0.01);

    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    let verdicts = parse_verdicts(&manifest);
    assert!(verdicts
        .iter()
        .any(|(n, s)| n == "mass_conservation" && *s == Status::Pass));
    assert!(verdicts.iter().all(|(_, s)| *s != Status::Fail));
    assert!(manifest.contains("within_theorem_hypothesis = true"));
    assert!(manifest.contains("status = PASS"));
}

#[test]
fn failed_check_gives_exit_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("2d-coupled").unwrap();
    c.fixed_dt = Some(0.5);
    c.positivity_retries = 1;
    c.t_end = 1.0;
    let config = write_config(dir.path(), &c);
    let out_dir = dir.path().join("out");
    let out = lab(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(parse_verdicts(&manifest).contains(&("run_completed".to_string(), Status::Fail)));
}

#[test]
fn configuration_errors_give_exit_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    std::fs::write(&path, "cells = 8, 8\nchi1 = 1\nchii2 = 1\n").unwrap();
    let out = lab(&["check", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3") && err.contains("chii2"), "{err}");

    let out = lab(&["run", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lab(&["sweep-eps", "--preset", "smooth-1d"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "identity family cannot be swept"
    );
}

#[test]
fn check_prints_a_config_that_parses_back() {
    let out = lab(&["check", "--preset", "consumption-budget", "--seed", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = RunConfig::parse(&text).unwrap();
    let mut expected = preset("consumption-budget").unwrap();
    expected.seed = 7;
    assert_eq!(parsed, expected);
}

#[test]
fn sweep_and_refinement_tables_have_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("eps-sweep-3d").unwrap();
    c.cells = vec![6, 6, 6];
    c.t_end = 0.02;
    let config = write_config(dir.path(), &c);
    let sweep_dir = dir.path().join("sweep");
    let out = lab(&[
        "--threads",
        "2",
        "sweep-eps",
        "--config",
        &config,
        "--eps",
        "0.4,0.2,0.1",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.code().is_some_and(|c| c <= 1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_table(&sweep_dir.join("sweep.csv"), SWEEP_VERSION, &SWEEP_COLUMNS).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], Some(0.2));

    let mut c = preset("smooth-1d").unwrap();
    c.cells = vec![8];
    c.t_end = 0.01;
    let config = write_config(dir.path(), &c);
    let refine_dir = dir.path().join("refine");
    let out = lab(&[
        "refine",
        "--config",
        &config,
        "--levels",
        "3",
        "--out",
        refine_dir.to_str().unwrap(),
    ]);
    assert!(out.status.code().is_some_and(|c| c <= 1));
    let rows = read_table(
        &refine_dir.join("refinement.csv"),
        REFINEMENT_VERSION,
        &REFINEMENT_COLUMNS,
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][1], Some(32.0));
    assert_eq!(rows[2][9], None, "finest level has no difference");
    assert!(
        rows[1][10].is_some(),
        "middle level carries the observed order"
    );

    let out = lab(&[
        "refine",
        "--config",
        &config,
        "--levels",
        "3",
        "--cell-budget",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
