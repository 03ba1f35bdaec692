use std::path::PathBuf;
use std::process::{Command, Output};

fn ruinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ruinlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ruinlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn converge_is_byte_identical_across_thread_counts() {
    let run = |threads: &str, name: &str| {
        let out = scratch(name);
        let o = ruinlab(&[
            "converge",
            "--dim",
            "2",
            "--radius",
            "3",
            "--radius",
            "6",
            "--samples",
            "5000",
            "--seed",
            "5",
            "--oracle-max-states",
            "100",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(&out).unwrap(),
            std::fs::read_to_string(out.with_extension("csv.meta")).unwrap(),
        )
    };
    let (a, meta) = run("1", "a.csv");
    let (b, _) = run("3", "b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("param,scaled_moment,std_error,exact_value,limit_value,abs_gap,engine,seed\n3,"));
    assert!(text.contains(",oracle,5\n") && text.contains(",monte_carlo,6\n"));
    assert!(meta.contains("oracle.max_states=100"));
}

#[test]
fn flags_override_config() {
    let cfg = scratch("plan.ini");
    std::fs::write(&cfg, "dim = 3\nseed = 1\n[series]\nabs_tol = 1e-13\n").unwrap();
    let out = scratch("limits.csv");
    let o = ruinlab(&[
        "limits",
        "--config",
        cfg.to_str().unwrap(),
        "--dim",
        "2",
        "--arg",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let meta = std::fs::read_to_string(out.with_extension("csv.meta")).unwrap();
    assert!(meta.contains("dim=2\n") && meta.contains("seed=1\n") && meta.contains("series.abs_tol=1e-13\n"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.contains("exit_cdf,2,,1,"));
}

#[test]
fn identities_pass() {
    let o = ruinlab(&["identities"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("h_series_agreement,"));
}

#[test]
fn audit_exit_codes() {
    let ok = ruinlab(&[
        "audit-coupling",
        "--dim",
        "3",
        "--radius",
        "3",
        "--horizon",
        "100",
        "--samples",
        "2000",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = ruinlab(&["audit-coupling", "--dim", "3", "--samples", "500", "--negative-control"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ruinlab(&["converge", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ruinlab(&["converge", "--dim", "2"]).status.code(), Some(2));
    assert_eq!(
        ruinlab(&["converge", "--radius", "8", "--radius", "4"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ruinlab(&["simulate", "--radius", "4", "--samples", "10"]).status.code(),
        Some(2)
    );
    let cfg = scratch("bad.ini");
    std::fs::write(&cfg, "[series]\nnope = 1\n").unwrap();
    assert_eq!(
        ruinlab(&["identities", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn oracle_and_simulate_outputs() {
    let o = ruinlab(&["oracle", "--kind", "exit", "--dim", "1", "--radius", "3"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("expected_exit,1,3,1,,16,"));
    let o = ruinlab(&["oracle", "--kind", "max-cdf", "--dim", "1", "--horizon", "2"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("max_cdf,1,2,,1,0.5,0\n"));
    let o = ruinlab(&[
        "simulate",
        "--kind",
        "max",
        "--horizon",
        "1",
        "--samples",
        "200",
        "--moment",
        "3",
    ]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("max,1,1,3,1,0,200,0\n"));
}
