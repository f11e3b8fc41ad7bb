use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{name}.json"))
}

fn relmrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relmrf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn model_args<'a>(scheme: &'a Path, instance: &'a Path) -> Vec<&'a str> {
    vec!["--scheme", scheme.to_str().unwrap(), "--instance", instance.to_str().unwrap()]
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// `variable,value,probability` rows, keyed by variable and value.
fn marginals(csv: &str) -> (Vec<(String, String, f64)>, Option<f64>) {
    let mut rows = Vec::new();
    let mut log_z = None;
    for line in csv.lines().skip(1) {
        if let Some(z) = line.strip_prefix("logZ,,") {
            log_z = Some(z.parse().unwrap());
            continue;
        }
        let (rest, p) = line.rsplit_once(',').unwrap();
        let (var, val) = rest.rsplit_once(',').unwrap();
        rows.push((var.to_string(), val.to_string(), p.parse().unwrap()));
    }
    (rows, log_z)
}

#[test]
fn validate_exit_codes() {
    let (s, i) = (fixture("graph"), fixture("vertices_7"));
    let out = relmrf(&[&["validate"], &model_args(&s, &i)[..]].concat());
    assert_eq!(out.status.code(), Some(0));

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(&s).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["features"][1]["table"] = serde_json::json!([0.0, 1.0]);
    std::fs::write(&bad, doc.to_string()).unwrap();
    let out = relmrf(&[&["validate"], &model_args(&bad, &i)[..]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("F_t"));

    let missing = dir.path().join("missing.json");
    let out = relmrf(&[&["validate"], &model_args(&missing, &i)[..]].concat());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&bad, "{ not json").unwrap();
    let out = relmrf(&[&["validate"], &model_args(&bad, &i)[..]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infer_at_zero_is_uniform_for_every_backend() {
    let (s, i) = (fixture("graph"), fixture("vertices_4"));
    for backend in ["exact", "ground_bp_sync", "ground_bp_async", "template_bp", "gibbs"] {
        let mut args = vec!["infer", "--backend", backend, "--samples", "20000"];
        args.extend(model_args(&s, &i));
        let (rows, log_z) = marginals(&stdout(&relmrf(&args)));
        assert_eq!(rows.len(), 12);
        let tol = if backend == "gibbs" { 0.02 } else { 1e-12 };
        for (_, _, p) in &rows {
            assert!((p - 0.5).abs() <= tol, "{backend}: {p}");
        }
        match log_z {
            Some(z) => assert!((z - 6.0 * 2f64.ln()).abs() < 1e-12, "{backend}"),
            None => assert_eq!(backend, "gibbs"),
        }
    }
}

#[test]
fn template_output_matches_ground_sync() {
    let (s, i) = (fixture("graph"), fixture("vertices_7"));
    let run = |backend: &str| {
        let mut args = vec!["infer", "--backend", backend, "--theta", "F_e=-0.4", "--theta", "F_t=0.05"];
        args.extend(model_args(&s, &i));
        marginals(&stdout(&relmrf(&args)))
    };
    let (g, gz) = run("ground_bp_sync");
    let (t, tz) = run("template_bp");
    assert_eq!(g.len(), 42);
    for (a, b) in g.iter().zip(&t) {
        assert_eq!((&a.0, &a.1), (&b.0, &b.1));
        assert!((a.2 - b.2).abs() < 1e-9);
    }
    assert!((gz.unwrap() - tz.unwrap()).abs() < 1e-9);
}

#[test]
fn exact_triangle_fixture() {
    let (s, i) = (fixture("graph"), fixture("vertices_3"));
    let theta = format!("F_t={}", 2f64.ln() / 6.0);
    let mut args = vec!["infer", "--backend", "exact", "--theta", &theta];
    args.extend(model_args(&s, &i));
    let (rows, log_z) = marginals(&stdout(&relmrf(&args)));
    for (_, val, p) in &rows {
        let want = if val == "1" { 5.0 / 9.0 } else { 4.0 / 9.0 };
        assert!((p - want).abs() < 1e-12);
    }
    assert!((log_z.unwrap() - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn exact_over_cap_is_a_domain_failure() {
    let (s, i) = (fixture("graph"), fixture("vertices_20"));
    let mut args = vec!["infer", "--backend", "exact"];
    args.extend(model_args(&s, &i));
    let out = relmrf(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the cap"));
}

#[test]
fn bad_flags_exit_two() {
    let (s, i) = (fixture("graph"), fixture("vertices_3"));
    for extra in [
        vec!["--backend", "bp"],
        vec!["--backend", "exact", "--theta", "F_x=1"],
        vec!["--backend", "exact", "--mode", "some"],
        vec!["--backend", "exact", "--trace", "t.csv"],
    ] {
        let mut args = vec!["infer"];
        args.extend(extra.iter().copied());
        args.extend(model_args(&s, &i));
        assert_eq!(relmrf(&args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn compare_single_cell_at_zero() {
    let (s, i) = (fixture("graph"), fixture("vertices_4"));
    let mut args = vec!["compare", "--samples", "20000"];
    args.extend(model_args(&s, &i));
    let csv = stdout(&relmrf(&args));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for (k, name) in header.iter().enumerate() {
        if let Some(b) = name.strip_prefix("dev_") {
            for r in &rows {
                let dev: f64 = r[k].parse().unwrap();
                let tol = if b == "gibbs" { 0.02 } else { 1e-12 };
                assert!(dev <= tol, "{name} {dev}");
            }
        }
    }
}

#[test]
fn compare_large_instance_keeps_scalable_backends() {
    let (s, i) = (fixture("graph"), fixture("vertices_100"));
    let mut args = vec!["compare", "--samples", "2", "--burn-in", "1", "--mode", "canonical"];
    args.extend(model_args(&s, &i));
    let out = relmrf(&args);
    let csv = stdout(&out);
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "theta_F_e,theta_F_t,attribute,value,p_template_bp,p_gibbs,logz_template_bp,converged_template_bp"
    );
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("skipping exact") && log.contains("skipping ground_bp_sync"));
}

#[test]
fn compare_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let (s, i) = (fixture("graph"), fixture("vertices_4"));
    let output = dir.path().join("cmp.csv");
    let mut args = vec![
        "compare", "--grid", "F_e:-1:1:1", "--grid", "F_t:0:0.5:0.25", "--backend", "exact",
        "--backend", "template_bp", "--output", output.to_str().unwrap(),
    ];
    args.extend(model_args(&s, &i));
    stdout(&relmrf(&args));
    let csv = std::fs::read_to_string(&output).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "compare");
    assert_eq!(manifest["inputs"]["scheme"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["model"]["mode"], "all");
    assert!(manifest["timestamp"].is_u64());
}

#[test]
fn sample_then_learn_recovers_weights() {
    let dir = TempDir::new().unwrap();
    let (s, i) = (fixture("graph"), fixture("vertices_5"));
    let data = dir.path().join("data.json");
    let mut args = vec![
        "infer", "--backend", "gibbs", "--theta", "F_e=-0.5", "--theta", "F_t=0.1", "--samples", "3000",
        "--thinning", "5", "--seed", "3", "--samples-out", data.to_str().unwrap(),
    ];
    args.extend(model_args(&s, &i));
    stdout(&relmrf(&args));
    assert!(data.with_file_name("data.json.manifest.json").exists());

    let fitted = dir.path().join("fitted.json");
    let trace = dir.path().join("trace.csv");
    let mut args = vec![
        "learn", "--data", data.to_str().unwrap(), "--output", trace.to_str().unwrap(), "--model-out",
        fitted.to_str().unwrap(),
    ];
    args.extend(model_args(&s, &i));
    stdout(&relmrf(&args));
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fitted).unwrap()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(model["theta"].clone()).unwrap();
    assert!((theta[0] + 0.5).abs() < 0.2 && (theta[1] - 0.1).abs() < 0.2, "{theta:?}");
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iter,theta_F_e,theta_F_t,loglik,grad_norm");
}

#[test]
fn learn_with_empty_data_fails() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("empty.json");
    std::fs::write(&data, r#"{"assignments": []}"#).unwrap();
    let (s, i) = (fixture("graph"), fixture("vertices_3"));
    let mut args = vec!["learn", "--data", data.to_str().unwrap()];
    args.extend(model_args(&s, &i));
    assert_eq!(relmrf(&args).status.code(), Some(1));
}

#[test]
fn landscape_nine_by_nine() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.json");
    let edges = ["Exist(v1,v2)", "Exist(v1,v3)", "Exist(v2,v3)"];
    let full: serde_json::Map<String, serde_json::Value> =
        edges.iter().map(|e| (e.to_string(), "1".into())).collect();
    std::fs::write(&data, serde_json::json!({ "assignments": [full] }).to_string()).unwrap();
    let (s, i) = (fixture("graph"), fixture("vertices_3"));
    for backend in ["exact", "template_bp"] {
        let mut args = vec![
            "landscape", "--data", data.to_str().unwrap(), "--backend", backend, "--grid", "F_e:-1:1:0.25",
            "--grid", "F_t:-1:1:0.25",
        ];
        args.extend(model_args(&s, &i));
        let csv = stdout(&relmrf(&args));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "theta_F_e,theta_F_t,loglik,grad_F_e,grad_F_t,converged");
        assert_eq!(lines.count(), 81);
    }
}

#[test]
fn trace_file_for_bp() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("trace.csv");
    let (s, i) = (fixture("graph"), fixture("vertices_3"));
    let mut args = vec!["infer", "--backend", "ground_bp_sync", "--trace", trace.to_str().unwrap()];
    args.extend(model_args(&s, &i));
    stdout(&relmrf(&args));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "iter,direction,feature,port,attribute,factor,variable,value,log_message"
    );
    assert!(text.lines().count() > 1);
}
