use std::fs;
use std::path::Path;
use std::process::Command;

use levi_kernel::cli::{list_checks, output_root, run, ExperimentConfig, Status};
use levi_kernel::Error;

const SMALL: &str = r#"
name = "small"
checks = ["mass", "closed_form", "model_validation"]

[model]
family = "cauchy"

[parametrix]
t_eval = [0.25, 0.5]

[parametrix.space]
dx = 0.05
n = 2048
half_width = 10.0

[settings.mass]
t = [0.25]
x = [0.0]
tolerance = 1e-5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levi-kernel"))
}

#[test]
fn config_errors_are_reported() {
    let with = |extra: &str| ExperimentConfig::parse(&SMALL.replace("[model]", &format!("{extra}\n[model]")));
    assert!(matches!(
        ExperimentConfig::parse(&SMALL.replace("\"mass\"", "\"masses\"")),
        Err(Error::Config(_))
    ));
    assert!(matches!(with("colour = 1"), Err(Error::Config(_))));
    let mc = SMALL.replace("\"mass\",", "\"mass\", \"mc_oracle\",");
    match ExperimentConfig::parse(&mc) {
        Err(Error::Config(m)) => assert!(m.contains("seed"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(ExperimentConfig::parse(&mc.replace("name = \"small\"", "name = \"small\"\nseed = 3")).is_ok());
    let sine = SMALL.replace(
        "family = \"cauchy\"",
        "family = \"sine_stable\"\nalpha = 1.5\nbase = 1.0\namplitude = 0.25\nbeta = 0.5",
    );
    assert!(matches!(ExperimentConfig::parse(&sine), Err(Error::Config(_))));
    assert!(ExperimentConfig::parse(&sine.replace("\"closed_form\", ", "")).is_ok());
    assert!(with("workers = 0").is_err());
    assert!(ExperimentConfig::parse(&SMALL.replace("\"small\"", "\"../up\"")).is_err());
}

#[test]
fn hash_tracks_content() {
    let a = ExperimentConfig::parse(SMALL).unwrap();
    let b = ExperimentConfig::parse(&format!("# comment\n{SMALL}")).unwrap();
    let c = ExperimentConfig::parse(&SMALL.replace("tolerance = 1e-5", "tolerance = 1e-4")).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn output_root_precedence() {
    let mut cfg = ExperimentConfig::parse(SMALL).unwrap();
    assert_eq!(output_root(&cfg, Some(Path::new("/x"))), Path::new("/x"));
    if std::env::var_os(levi_kernel::cli::OUTPUT_ROOT_ENV).is_none() {
        assert_eq!(output_root(&cfg, None), Path::new("runs"));
        cfg.output_root = Some("elsewhere".into());
        assert_eq!(output_root(&cfg, None), Path::new("elsewhere"));
    }
}

#[test]
fn runs_are_deterministic_and_cached() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let root = tempfile::tempdir().unwrap();
    let first = run(&cfg, root.path(), true).unwrap();
    assert!(!first.failed, "{:?}", first.summary);
    assert_eq!(first.exit_code(), 0);
    let mass = first.metric("mass", "max_deviation").expect("mass row");
    assert_eq!(mass.status, Status::Pass);
    assert!(mass.value < 1e-5);
    let read = |name: &str| fs::read_to_string(first.dir.join(name)).unwrap();
    let csvs = ["mass.csv", "closed_form.csv", "model_validation.csv", "summary.csv"];
    let before: Vec<String> = csvs.iter().map(|f| read(f)).collect();
    for text in &before {
        let head = text.lines().next().unwrap();
        assert_eq!(head, format!("# levi-kernel {} config_hash={}", levi_kernel::cli::VERSION, cfg.hash()));
    }
    assert!(read("run.log").contains("result: ok"));

    let second = run(&cfg, root.path(), true).unwrap();
    assert!(read("run.log").contains("(cached)"));
    assert_eq!(second.summary, first.summary);
    let other = tempfile::tempdir().unwrap();
    run(&cfg, other.path(), false).unwrap();
    assert!(!other.path().join(".cache").exists());
    for (name, text) in csvs.iter().zip(&before) {
        assert_eq!(&read(name), text);
        assert_eq!(&fs::read_to_string(other.path().join("small").join(name)).unwrap(), text);
    }
}

#[test]
fn binary_subcommands() {
    let out = bin().arg("list-checks").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (id, _) in list_checks() {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(id)), "{id}");
    }
    assert_eq!(list_checks().len(), 12);

    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("small.toml");
    fs::write(&good, SMALL).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("\"mass\"", "\"nope\"")).unwrap();
    assert!(bin().args(["validate"]).arg(&good).status().unwrap().success());
    assert_eq!(bin().args(["validate"]).arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["run"]).arg(&bad).status().unwrap().code(), Some(2));

    let root = dir.path().join("out");
    let st = bin().arg("run").arg(&good).arg("--output-root").arg(&root).arg("--no-cache").status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(root.join("small/summary.csv").exists());
    assert!(root.join("small/mass.csv").exists());
}
