use std::path::PathBuf;
use std::process::{Command, Output};

use blockadapt::blocks::{Block, BlockPartition};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blockadapt"));
    c.env_remove("BLOCKADAPT_CACHE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("blockadapt-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn last_field(line: &str) -> f64 {
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn constants_bilinear_inf() {
    let o = run(&["constants", "--op", "lagrange:equispaced:k=1:d=2", "--p", "inf"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "constant,value");
    let vals: Vec<f64> = rows[1..].iter().map(|l| last_field(l)).collect();
    assert_eq!(vals.len(), 3);
    for (v, e) in vals.iter().zip([0.5, 0.25, 0.5]) {
        assert!((v - e).abs() < 1e-4, "{text}");
    }
    assert!(!text.contains('\r'));
}

#[test]
fn verify_reports_l2_hypothesis() {
    let o = run(&["verify", "--op", "l2:Pk:k=1:d=2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("H_star,false"), "{text}");
    assert!(text.contains("k,1\n"));
    let o = run(&["verify", "--op", "lagrange:chebyshev:k=2:d=2"]);
    let text = stdout(&o);
    for h in ["H_pm", "H_sigma", "H_star", "H_star_star"] {
        assert!(text.contains(&format!("{h},true")), "{text}");
    }
}

#[test]
fn kfun_row() {
    let o = run(&[
        "kfun",
        "--op",
        "lagrange:equispaced:k=1:d=2",
        "--p",
        "inf",
        "--poly",
        "X1^2 + 4*X2^2",
        "--method",
        "closed-form",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!((row[0].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(row[1], "closed-form");
    let scales: Vec<f64> = row[2].split(';').map(|s| s.parse().unwrap()).collect();
    assert!((scales[0] - 2f64.sqrt()).abs() < 1e-9 && (scales[1] - 2f64.sqrt() / 2.0).abs() < 1e-9);
    assert_eq!(row[3], "2");
    let o = run(&[
        "kfun",
        "--op",
        "lagrange:equispaced:k=1:d=2",
        "--p",
        "inf",
        "--poly",
        "X1^2 + 4*X2^2",
        "--max-diam",
        "8",
    ]);
    assert!(o.status.success());
}

#[test]
fn partition_csv_reads_back() {
    let dir = scratch("partition");
    let out = dir.join("blocks.csv");
    let o = run(&[
        "partition",
        "--fn",
        "quad_aniso",
        "--op",
        "lagrange:equispaced:k=1:d=2",
        "--p",
        "inf",
        "--kind",
        "adaptive-cf",
        "--budget",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cells = BlockPartition::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    let part = BlockPartition::new(Block::unit_box(2), cells).unwrap();
    let stats = stdout(&o);
    let row: Vec<&str> = stats.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1].parse::<usize>().unwrap(), part.len());
    assert!(part.len() <= 2000);
    let p1: usize = row[2].parse().unwrap();
    let p2: usize = row[3].parse().unwrap();
    assert_eq!(p1 + p2, part.len());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn converge_exit_code_tracks_gates() {
    let args = [
        "converge",
        "--fn",
        "quad_aniso",
        "--op",
        "lagrange:equispaced:k=1:d=2",
        "--p",
        "inf",
        "--kind",
        "adaptive-cf",
        "--budgets",
        "100,400,1600,6400",
    ];
    let o = run(&args);
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kind,N,n,error,scaled,predicted,ratio");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.starts_with("adaptive-cf,")));
    let summary = String::from_utf8(o.stderr).unwrap();
    assert!(summary.contains("final ratio="));
    let any_fail = summary.contains("FAIL");
    assert_eq!(o.status.code(), Some(if any_fail { 1 } else { 0 }), "{summary}");
    let mut quiet = args.to_vec();
    quiet.push("--no-gates");
    let o = run(&quiet);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), csv);
}

#[test]
fn uniform_square_report() {
    let o = run(&[
        "converge",
        "--fn",
        "square_1d",
        "--op",
        "lagrange:k=1:d=1",
        "--p",
        "inf",
        "--kind",
        "uniform",
        "--budgets",
        "10,100,1000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for line in stdout(&o).lines().skip(1) {
        assert!((last_field(line) - 1.0).abs() < 1e-9, "{line}");
    }
}

#[test]
fn config_file_and_flag_override() {
    let dir = scratch("config");
    let cfg = dir.join("exp.json");
    let report = dir.join("report.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"operator": "lagrange:equispaced:k=1:d=2", "function": "quad_aniso", "p": "inf",
               "kind": "uniform", "budgets": [64, 256], "output": {:?}}}"#,
            report.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "converge"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 3);
    let o = run(&["--config", cfg.to_str().unwrap(), "converge", "--budgets", "16,64,256"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 4);

    std::fs::write(&cfg, r#"{"operatr": "x"}"#).unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "converge"]).status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn validation_errors_exit_two() {
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["constants", "--op", "lagrange:k=1:d=2", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["constants", "--op", "lagrange:k=1:d=2"]).status.code(), Some(2));
    assert_eq!(run(&["constants", "--op", "l2:Pk:k=1:d=2", "--p", "inf"]).status.code(), Some(2));
    let o = run(&[
        "converge",
        "--fn",
        "sin_prod",
        "--op",
        "lagrange:k=1:d=2",
        "--p",
        "inf",
        "--kind",
        "adaptive-cf",
        "--budgets",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adaptive-km"));
}

#[test]
fn constant_cache_persists() {
    let dir = scratch("cache");
    let args = ["constants", "--op", "lagrange:equispaced:k=1:d=2", "--p", "2"];
    let first = bin().args(args).env("BLOCKADAPT_CACHE_DIR", &dir).output().unwrap();
    assert!(first.status.success());
    let stored = std::fs::read_to_string(dir.join("constants.json")).unwrap();
    assert!(stored.contains("p=2"), "{stored}");
    let second = bin().args(args).env("BLOCKADAPT_CACHE_DIR", &dir).output().unwrap();
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(first.stdout, run(&args).stdout);
    std::fs::remove_dir_all(dir).unwrap();
}
