use std::path::Path;
use std::process::{Command, Output};

fn dblsh(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dblsh"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = dblsh(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str], dir: &Path) -> serde_json::Value {
    serde_json::from_str(&ok(args, dir)).unwrap()
}

fn gen_small(dir: &Path) {
    ok(
        &[
            "gen",
            "--n",
            "1500",
            "--d",
            "12",
            "--dist",
            "clusters:4,0.05",
            "--seed",
            "9",
            "-o",
            "data.fvecs",
            "--holdout",
            "10",
            "--queries-out",
            "queries.fvecs",
        ],
        dir,
    );
}

#[test]
fn gen_writes_requested_records_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen",
        "--n",
        "1000",
        "--d",
        "32",
        "--dist",
        "clusters:10,0.05",
        "--seed",
        "1",
        "-o",
        "a.fvecs",
    ];
    let stdout = ok(&args, dir.path());
    assert!(stdout.contains("n=1000") && stdout.contains("d=32") && stdout.contains("seed=1"));
    let a = std::fs::read(dir.path().join("a.fvecs")).unwrap();
    assert_eq!(a.len(), 1000 * (4 + 32 * 4));

    let mut again = args;
    again[10] = "b.fvecs";
    ok(&again, dir.path());
    assert_eq!(a, std::fs::read(dir.path().join("b.fvecs")).unwrap());
}

#[test]
fn gen_rejects_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dblsh(
        &["gen", "--n", "0", "--d", "3", "-o", "x.fvecs"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--n"));
    let out = dblsh(
        &[
            "gen", "--n", "5", "--d", "3", "--dist", "gauss", "-o", "x.fvecs",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn params_reports_theoretical_shape() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(
        &[
            "params", "--n", "10000", "--t", "10", "--c", "2", "--w0", "1",
        ],
        dir.path(),
    );
    assert_eq!(v["K"], 5);
    assert_eq!(v["L"], 60);
    assert_eq!(v["bound_holds"], true);
    for key in ["p1", "p2", "rho_star", "alpha"] {
        assert!(v[key].is_f64(), "{key} missing");
    }
}

#[test]
fn params_alpha_from_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&["params", "--gamma", "2", "--c", "2"], dir.path());
    assert!((v["alpha"].as_f64().unwrap() - 4.746).abs() < 1e-3);
    assert!(v.get("K").is_none());
}

#[test]
fn params_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["params", "--c", "1", "--w0", "1"][..],
        &["params", "--c", "2"],
        &["params", "--c", "2", "--w0", "1", "--n", "5", "--t", "10"],
        &["params", "--c", "2", "--w0", "1", "--n", "5"],
    ] {
        assert_eq!(dblsh(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn build_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let out = ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "p.idx",
            "--t",
            "20",
            "--rescale-nn",
            "--seed",
            "4",
        ],
        d,
    );
    assert!(out.contains("K=10") && out.contains("L=5") && out.contains("seed=4"));
    ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "p2.idx",
            "--t",
            "20",
            "--rescale-nn",
            "--seed",
            "4",
        ],
        d,
    );
    assert_eq!(
        std::fs::read(d.join("p.idx")).unwrap(),
        std::fs::read(d.join("p2.idx")).unwrap()
    );
    ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "t.idx",
            "--mode",
            "theoretical",
            "--t",
            "20",
            "--c",
            "2",
            "--w0",
            "4",
        ],
        d,
    );

    let v = json(
        &[
            "query",
            "--index",
            "p.idx",
            "--data",
            "data.fvecs",
            "--queries",
            "queries.fvecs",
            "--k",
            "50",
        ],
        d,
    );
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 10);
    for r in results {
        assert_eq!(r["neighbors"].as_array().unwrap().len(), 50);
        assert!(r["candidates_verified"].as_u64().unwrap() > 0);
        assert!(r["terminating_radius"].as_f64().unwrap() >= 1.0);
        assert!(r.get("trace").is_none());
    }

    let v = json(
        &[
            "query",
            "--index",
            "t.idx",
            "--data",
            "data.fvecs",
            "--queries",
            "queries.fvecs",
            "--fixed",
        ],
        d,
    );
    assert_eq!(v["bucketing"], "fixed");
    assert_eq!(v["results"].as_array().unwrap().len(), 10);
}

#[test]
fn query_for_a_data_point_finds_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "p.idx",
            "--t",
            "20",
            "--rescale-nn",
        ],
        d,
    );

    let bytes = std::fs::read(d.join("data.fvecs")).unwrap();
    let record = 4 + 12 * 4;
    let coords: Vec<String> = bytes[7 * record + 4..8 * record]
        .chunks(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())).to_string())
        .collect();
    let point = coords.join(",");
    let v = json(
        &[
            "query",
            "--index",
            "p.idx",
            "--data",
            "data.fvecs",
            "--point",
            &point,
            "--explain",
        ],
        d,
    );
    let first = &v["results"][0];
    assert_eq!(first["neighbors"][0]["id"], 7);
    assert_eq!(first["neighbors"][0]["distance"], 0.0);
    let trace = first["trace"].as_array().unwrap();
    assert!(!trace.is_empty());
    assert!(trace[0]["window_width"].as_f64().unwrap() > 0.0);
    assert!(trace[0]["per_table"].is_array());

    let out = dblsh(
        &[
            "query",
            "--index",
            "p.idx",
            "--data",
            "data.fvecs",
            "--point",
            "1,2,3",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let out = dblsh(
        &[
            "build",
            "--data",
            "missing.fvecs",
            "-o",
            "p.idx",
            "--t",
            "5",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(d.join("junk.idx"), b"garbage").unwrap();
    let out = dblsh(
        &[
            "query",
            "--index",
            "junk.idx",
            "--data",
            "data.fvecs",
            "--point",
            "0,0,0,0,0,0,0,0,0,0,0,0",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}

const GRID: &str = r#"
algorithms = ["db-lsh", "fb-lsh"]
c = 1.5
w0 = 9.0
t = [10, 30]
K = 8
L = 4
k = 10
n = 2000
d = 16
num_queries = 20
seed = 3
rescale_nn = 4.0
"#;

fn report(dir: &Path) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["rows"].as_array().unwrap().clone()
}

#[test]
fn bench_grid_reports_both_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("grid.toml"), GRID).unwrap();
    ok(&["bench", "--config", "grid.toml", "-o", "a"], d);
    let rows = report(&d.join("a"));
    assert_eq!(rows.len(), 4);
    for alg in ["db-lsh", "fb-lsh"] {
        assert!(rows.iter().any(|r| r["algorithm"] == alg));
    }
    assert!(d.join("a/report.csv").exists());
    assert!(d.join("a/curve.csv").exists());

    // same seeds, different thread count: identical quality columns
    ok(
        &[
            "bench",
            "--config",
            "grid.toml",
            "-o",
            "b",
            "--threads",
            "3",
        ],
        d,
    );
    let again = report(&d.join("b"));
    for (x, y) in rows.iter().zip(&again) {
        for col in [
            "recall",
            "overall_ratio",
            "mean_candidates",
            "algorithm",
            "t",
        ] {
            assert_eq!(x[col], y[col], "{col}");
        }
    }
}

#[test]
fn bench_exact_cell_has_full_recall() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("grid.toml"), GRID).unwrap();
    ok(
        &[
            "bench",
            "--config",
            "grid.toml",
            "-o",
            "e",
            "--algorithms",
            "exact",
        ],
        d,
    );
    let rows = report(&d.join("e"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["recall"], 1.0);
}

#[test]
fn bench_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("grid.toml"), GRID).unwrap();
    // some cells fail, others succeed
    ok(
        &[
            "bench",
            "--config",
            "grid.toml",
            "-o",
            "p",
            "--c",
            "0.5,1.5",
        ],
        d,
    );
    let rows = report(&d.join("p"));
    assert!(rows.iter().any(|r| !r["error"].is_null()));
    assert!(rows.iter().any(|r| r["error"].is_null()));

    let out = dblsh(
        &["bench", "--config", "grid.toml", "-o", "f", "--c", "0.5"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(d.join("bad.toml"), "colour = 3\n").unwrap();
    let out = dblsh(&["bench", "--config", "bad.toml", "-o", "x"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_rescales_unless_scale_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let default = ok(
        &["build", "--data", "data.fvecs", "-o", "a.idx", "--t", "5"],
        d,
    );
    let explicit = ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "b.idx",
            "--t",
            "5",
            "--rescale-nn",
            "4",
        ],
        d,
    );
    let scale_of = |s: &str| {
        s.split("scale=")
            .nth(1)
            .unwrap()
            .split(' ')
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(scale_of(&default), scale_of(&explicit));
    assert_ne!(scale_of(&default), "1");
    let off = ok(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "c.idx",
            "--t",
            "5",
            "--scale",
            "1",
        ],
        d,
    );
    assert_eq!(scale_of(&off), "1");
    let out = dblsh(
        &[
            "build",
            "--data",
            "data.fvecs",
            "-o",
            "c.idx",
            "--t",
            "5",
            "--scale",
            "-2",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
}
