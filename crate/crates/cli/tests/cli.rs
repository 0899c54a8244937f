use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semidyad"))
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check_schema(doc: &Value, schema: &str) {
    let schema = read_json(&schema_dir().join(schema));
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

/// Simulates a network under `dir/sim` and returns the data flags for it.
fn simulated(dir: &Path, extra: &[&str]) -> Vec<String> {
    let sim = dir.join("sim");
    let mut args = vec![
        "simulate",
        "--n",
        "20",
        "--seed",
        "11",
        "--output-dir",
        sim.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    vec![
        "--edges".into(),
        sim.join("edges.csv").to_str().unwrap().into(),
        "--covariates".into(),
        sim.join("covariates.csv").to_str().unwrap().into(),
        "--special-regressor".into(),
        "x1".into(),
        "--no-standardize".into(),
        "--sign".into(),
        "1".into(),
    ]
}

fn with<'a>(cmd: &'a str, data: &'a [String], rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(data.iter().map(String::as_str));
    v.extend_from_slice(rest);
    v
}

#[test]
fn simulate_writes_network_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let sim = dir.path().join("sim");
    assert_eq!(header(&sim.join("edges.csv")), "i,j,a");
    assert_eq!(header(&sim.join("covariates.csv")), "i,j,x1,z1,z2");
    assert_eq!(
        std::fs::read_to_string(sim.join("edges.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 20 * 19
    );
    check_schema(&read_json(&sim.join("truth.json")), "truth.schema.json");
}

#[test]
fn every_binary_subcommand_emits_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), &[]);
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let common = ["--seed", "3", "--output-dir", o];

    let mut a = with("fit", &data, &common);
    ok(&a);
    let fit = read_json(&out.join("fit.json"));
    check_schema(&fit, "fit.schema.json");
    assert_eq!(fit["n"], 20);
    assert_eq!(header(&out.join("params.csv")), "node,label,alpha,beta");
    assert_eq!(header(&out.join("eta.csv")), "covariate,eta");

    a = with("test-sparse", &data, &common);
    a.extend(["--which", "alpha", "--B", "300"]);
    ok(&a);
    let t = read_json(&out.join("test_sparse.json"));
    check_schema(&t, "test.schema.json");
    assert_eq!(t[0]["report"]["meta"]["draws"], 300);

    a = with("recover-support", &data, &common);
    a.extend(["--threshold-t", "1.5"]);
    ok(&a);
    check_schema(&read_json(&out.join("support.json")), "support.schema.json");
    assert_eq!(header(&out.join("support.csv")), "block,node,label");

    a = with("test-heterogeneity", &data, &common);
    a.extend(["--m-tilde", "2", "--B", "300", "--group", "1,2,3,4,5"]);
    ok(&a);
    let h = read_json(&out.join("test_heterogeneity.json"));
    check_schema(&h, "test.schema.json");
    assert_eq!(h[0]["report"]["meta"]["m_tilde"], 2);

    a = with("ci", &data, &common);
    a.extend([
        "--B",
        "300",
        "--target",
        "alpha:1",
        "--target",
        "eta:2",
        "--target",
        "alpha-diff:1:2",
    ]);
    ok(&a);
    let ci = read_json(&out.join("intervals.json"));
    check_schema(&ci, "intervals.schema.json");
    assert_eq!(ci.as_array().unwrap().len(), 3);
    assert_eq!(
        header(&out.join("intervals.csv")),
        "label,estimate,lower,upper,half_width,level"
    );

    let mut data_sel = data.clone();
    data_sel.truncate(data.len() - 2);
    a = with("select-bandwidth", &data_sel, &common);
    ok(&a);
    check_schema(
        &read_json(&out.join("bandwidth.json")),
        "bandwidth.schema.json",
    );
    assert_eq!(header(&out.join("bandwidth_losses.csv")), "bandwidth,loss");

    a = with("gof", &data, &common);
    ok(&a);
    let g = read_json(&out.join("gof.json"));
    check_schema(&g, "gof.schema.json");
    assert_eq!(
        header(&out.join("gof.csv")),
        "node,out_observed,out_fitted,in_observed,in_fitted"
    );

    // nothing but finished artifacts in the output directory
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(
            name.ends_with(".json") || name.ends_with(".csv"),
            "stray file {name}"
        );
    }
}

#[test]
fn seed_reproduces_resampled_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), &[]);
    let mut texts = Vec::new();
    for (k, seed) in ["5", "5", "6"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let mut a = with(
            "ci",
            &data,
            &["--B", "200", "--seed", seed, "--bandwidth", "0.9"],
        );
        a.extend(["--output-dir", out.to_str().unwrap()]);
        ok(&a);
        texts.push(std::fs::read_to_string(out.join("intervals.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert_ne!(texts[0], texts[2]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), &[]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "B = 150\nlevel = 0.1\nbandwidth = 1.0\n").unwrap();
    let out = dir.path().join("out");
    let mut a = with(
        "test-sparse",
        &data,
        &["--config", cfg.to_str().unwrap(), "--output-dir"],
    );
    a.push(out.to_str().unwrap());
    ok(&a);
    let t = read_json(&out.join("test_sparse.json"));
    assert_eq!(t[0]["report"]["meta"]["draws"], 150);
    assert_eq!(t[0]["report"]["meta"]["level"], 0.1);
    a.extend(["--B", "120"]);
    ok(&a);
    let t = read_json(&out.join("test_sparse.json"));
    assert_eq!(t[0]["report"]["meta"]["draws"], 120);
}

fn assert_exit(args: &[&str], code: i32, class: &str) {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err: Value = serde_json::from_slice(&out.stderr).expect("machine-readable error");
    check_schema(&err, "error.schema.json");
    assert_eq!(err["class"], class);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), &[]);
    let o = dir.path().join("out");
    let o = o.to_str().unwrap();

    assert_exit(
        &with("ci", &data, &["--level", "1.5", "--output-dir", o]),
        2,
        "usage",
    );
    assert_exit(
        &with("fit", &data, &["--bandwidth=-1", "--output-dir", o]),
        2,
        "usage",
    );
    // unparseable flags are usage errors too
    assert_eq!(run(&["fit", "--B", "ten"]).status.code(), Some(2));

    let edges = dir.path().join("loop.csv");
    std::fs::write(&edges, "i,j,a\n1,1,1\n").unwrap();
    let mut bad = data.clone();
    bad[1] = edges.to_str().unwrap().into();
    assert_exit(&with("fit", &bad, &["--output-dir", o]), 3, "data");

    // a constant covariate makes the projected design singular
    let cov = dir.path().join("sim/covariates.csv");
    let text = std::fs::read_to_string(&cov).unwrap();
    let flat: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(k, l)| {
            if k == 0 {
                l.to_string()
            } else {
                let mut f: Vec<&str> = l.split(',').collect();
                f[3] = "0";
                f.join(",")
            }
        })
        .collect();
    let flat_path = dir.path().join("flat.csv");
    std::fs::write(&flat_path, flat.join("\n") + "\n").unwrap();
    let mut sing = data.clone();
    sing[3] = flat_path.to_str().unwrap().into();
    assert_exit(
        &with("fit", &sing, &["--bandwidth", "1.0", "--output-dir", o]),
        4,
        "numerical",
    );
}

#[test]
fn node_attributes_with_constructors() {
    let dir = tempfile::tempdir().unwrap();
    let n = 15;
    let mut edges = String::from("i,j,a\n");
    let mut nodes = String::from("i,age,gender,years\n");
    for i in 1..=n {
        nodes += &format!("{i},{},{},{}\n", 20 + (i * 7) % 13, i % 2, (i * 5) % 9);
        for j in 1..=n {
            if i != j && (i + 2 * j) % 3 != 0 {
                edges += &format!("{i},{j},1\n");
            }
        }
    }
    let e = dir.path().join("edges.csv");
    let a = dir.path().join("nodes.csv");
    std::fs::write(&e, edges).unwrap();
    std::fs::write(&a, nodes).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "fit",
        "--edges",
        e.to_str().unwrap(),
        "--node-attributes",
        a.to_str().unwrap(),
        "--construct",
        "absdiff:age",
        "--construct",
        "equal:gender=same_gender",
        "--construct",
        "absdiff:years",
        "--special-regressor",
        "age",
        "--discrete",
        "same_gender",
        "--node-count",
        "15",
        "--sign",
        "-1",
        "--bandwidth",
        "1.5",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    let fit = read_json(&out.join("fit.json"));
    check_schema(&fit, "fit.schema.json");
    assert_eq!(
        fit["covariate_names"],
        serde_json::json!(["same_gender", "years"])
    );
    assert_eq!(fit["sign"], -1);
}

#[test]
fn weighted_fit_from_simulated_levels() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), &["--schedule", "weighted"]);
    let out = dir.path().join("out");
    let mut a = with(
        "fit-weighted",
        &data,
        &["--weighted-levels", "0,1,2,3,4,5,6", "--B", "200"],
    );
    a.extend(["--bandwidth", "1.1", "--output-dir", out.to_str().unwrap()]);
    ok(&a);
    let fit = read_json(&out.join("weighted_fit.json"));
    check_schema(&fit, "weighted_fit.schema.json");
    assert_eq!(fit["omega"].as_array().unwrap().len(), 6);
    let rows = std::fs::read_to_string(out.join("weighted_intervals.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 20 + 20 + 6 + 2);

    let mut missing = with("fit-weighted", &data, &["--output-dir"]);
    missing.push(out.to_str().unwrap());
    assert_exit(&missing, 2, "usage");
}

#[test]
fn montecarlo_study_file() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.toml");
    std::fs::write(
        &study,
        r#"
replications = 50
master_seed = 1

[dgp]
n = 12
noise = { kind = "normal", mean = 0.0, var = 1.0 }
schedule = { kind = "consistency", rho1 = 0.0 }

[bandwidth]
kind = "fixed"
bandwidth = 1.0

[task]
kind = "estimation"
targets = [{ kind = "eta", index = 0 }, { kind = "alpha", node = 0 }]
draws = 200
"#,
    )
    .unwrap();
    let out = dir.path().join("mc");
    let o = out.to_str().unwrap();
    ok(&[
        "montecarlo",
        "--study",
        study.to_str().unwrap(),
        "--reps",
        "6",
        "--workers",
        "2",
        "--output-dir",
        o,
    ]);
    let r = read_json(&out.join("mc_report.json"));
    check_schema(&r, "mc_report.schema.json");
    assert_eq!(r["replications"], 6);
    assert_eq!(
        header(&out.join("mc_targets.csv")),
        "label,truth,bias,sd,cp,count"
    );
    assert_eq!(
        header(&out.join("mc_tests.csv")),
        "label,rejections,count,rate"
    );
    let first = std::fs::read_to_string(out.join("mc_targets.csv")).unwrap();
    ok(&[
        "montecarlo",
        "--study",
        study.to_str().unwrap(),
        "--reps",
        "6",
        "--output-dir",
        o,
    ]);
    assert_eq!(
        first,
        std::fs::read_to_string(out.join("mc_targets.csv")).unwrap()
    );
}
