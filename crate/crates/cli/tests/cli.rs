use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_solitonlab"));
    c.env_remove("SOLITONLAB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn nilsoliton_heisenberg_has_ratio_one_one_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "cert.json");
    let o = run(&["nilsoliton", "--algebra", "heis3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    assert_eq!(v["certified"], true);
    assert!((v["lambda"].as_f64().unwrap() + 0.5).abs() < 1e-9);
    let ev: Vec<f64> = v["derivation_eigenvalues"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((ev[1] / ev[0] - 1.0).abs() < 1e-7 && (ev[2] / ev[0] - 2.0).abs() < 1e-7);
    assert_eq!(v["meta"]["config"]["algebra"], "heis3");
    assert!(v["meta"]["tool_version"].is_string());
}

#[test]
fn nilsoliton_abelian_has_scalar_derivation() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "cert.json");
    let o = run(&["nilsoliton", "--algebra", "abelian:4", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let v = json(&out);
    let lambda = v["lambda"].as_f64().unwrap();
    let d = v["derivation"].as_array().unwrap();
    for (i, row) in d.iter().enumerate() {
        for (j, x) in row.as_array().unwrap().iter().enumerate() {
            let want = if i == j { lambda } else { 0.0 };
            assert!((x.as_f64().unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.json");
    std::fs::write(&bad, "{\"version\": 1, \"dim\": ").unwrap();
    let out = p(dir.path(), "x.json");
    assert_eq!(code(&run(&["nilsoliton", "--algebra", s(&bad), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["nilsoliton", "--algebra", "no-such-algebra", "--out", s(&out)])), 2);
    // not a Lie algebra: Jacobi fails
    let jac = p(dir.path(), "jac.json");
    std::fs::write(
        &jac,
        r#"{"version":1,"dim":3,"brackets":[{"i":1,"j":2,"k":3,"c":1.0},{"i":1,"j":3,"k":1,"c":1.0}]}"#,
    )
    .unwrap();
    assert_eq!(code(&run(&["nilsoliton", "--algebra", s(&jac), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["mesh", "validate", "--mesh", s(&bad)])), 2);
    let o = bin().env("SOLITONLAB_THREADS", "zero").args(["extend", "--out", s(&out)]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn base_with_zero_nu_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = p(dir.path(), "g2.json");
    let u = p(dir.path(), "u.json");
    assert_eq!(code(&run(&["mesh", "gen", "--kind", "genus2", "--subdiv", "1", "--out", s(&mesh)])), 0);
    let o = run(&["base", "--mesh", s(&mesh), "--nu", "zero", "--out", s(&u)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&u);
    let target = 0.5 * 2f64.ln();
    assert!(v["values"].as_array().unwrap().iter().all(|x| (x.as_f64().unwrap() - target).abs() < 1e-10));
    assert_eq!(v["kind"], "u");
    assert_eq!(v["meta"]["upstream"]["mesh"], v["mesh_hash"]);
}

#[test]
fn stages_chain_by_mesh_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (g2, torus, h, u, nu) = (p(d, "g2.json"), p(d, "t.json"), p(d, "h.json"), p(d, "u.json"), p(d, "nu.json"));
    assert_eq!(code(&run(&["mesh", "gen", "--subdiv", "1", "--rep", "uniformizing", "--out", s(&g2)])), 0);
    assert_eq!(code(&run(&["mesh", "gen", "--kind", "torus", "--out", s(&torus)])), 0);
    let o = run(&["harmonic", "--mesh", s(&g2), "--out", s(&h), "--trace-csv", s(&p(d, "trace.csv"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["base", "--mesh", s(&g2), "--field", s(&h), "--out", s(&u), "--nu-out", s(&nu)])), 0);
    // foreign mesh
    assert_eq!(code(&run(&["base", "--mesh", s(&torus), "--field", s(&h), "--out", s(&p(d, "x.json"))])), 2);
    assert_eq!(code(&run(&["base", "--mesh", s(&torus), "--nu", s(&nu), "--out", s(&p(d, "x.json"))])), 2);

    let rep = p(d, "report.json");
    let csv = p(d, "rows.csv");
    let o = run(&["assemble", "--mesh", s(&g2), "--field", s(&h), "--u", s(&u), "--out", s(&rep), "--csv", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&rep);
    assert!(v["report"]["vertical_residual"].as_f64().unwrap() < 1e-8);
    assert!(v["report"]["mixed_residual"].as_f64().unwrap() < 1e-10);
    for x in v["report"]["scal_g"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() + 1.0).abs() < 1e-8);
    }
    assert!(v["meta"]["upstream"]["field"].is_string());
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("vertex,cone,u,nu,tension"));
    assert_eq!(table.lines().count(), 31);

    let ext = p(d, "ext.json");
    let o = run(&["extend", "--algebra", "abelian:2", "--mesh", s(&g2), "--field", s(&h), "--u", s(&u), "--out", s(&ext)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&ext);
    assert!((v["assembled"]["trace_square"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!(v["assembled"]["identity_residual"].as_f64().unwrap().is_finite());
}

#[test]
fn pipeline_reports_gold_constants() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, rep) = (p(dir.path(), "g2.json"), p(dir.path(), "r.json"));
    assert_eq!(code(&run(&["mesh", "gen", "--subdiv", "1", "--rep", "uniformizing", "--out", s(&mesh)])), 0);
    let o = run(&["assemble", "--pipeline", "--mesh", s(&mesh), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&rep);
    assert!((v["pipeline"]["gold"]["constants"]["nu"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert_eq!(v["pipeline"]["flow"]["converged"], true);
}

#[test]
fn extend_heisenberg_fibre_is_einstein() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "ext.json");
    assert_eq!(code(&run(&["extend", "--algebra", "heis3", "--out", s(&out)])), 0);
    let v = json(&out);
    assert!(v["fibre"]["ricci_gap"].as_f64().unwrap() <= 1e-8);
    assert!((v["fibre"]["trace_square"].as_f64().unwrap() - 0.5).abs() <= 1e-12);
}

#[test]
fn non_convergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, h) = (p(dir.path(), "g2.json"), p(dir.path(), "h.json"));
    assert_eq!(code(&run(&["mesh", "gen", "--subdiv", "1", "--rep", "uniformizing", "--out", s(&mesh)])), 0);
    let o = run(&["harmonic", "--mesh", s(&mesh), "--flow-max-iters", "3", "--out", s(&h)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("did not converge"));
    let fil = p(dir.path(), "filiform5.json");
    std::fs::write(
        &fil,
        r#"{"version":1,"dim":5,"brackets":[{"i":1,"j":2,"k":3,"c":1.0},{"i":1,"j":3,"k":4,"c":1.0},{"i":1,"j":4,"k":5,"c":1.0}]}"#,
    )
    .unwrap();
    let o = run(&["nilsoliton", "--algebra", s(&fil), "--max-iters", "2", "--out", s(&p(dir.path(), "c.json"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn artifacts_are_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = p(dir.path(), "g2.json");
    assert_eq!(code(&run(&["mesh", "gen", "--subdiv", "1", "--rep", "uniformizing", "--out", s(&mesh)])), 0);
    let mut outs = Vec::new();
    // same relative out path, so the echoed config matches too
    for k in 0..2 {
        let run_dir = dir.path().join(format!("run{k}"));
        std::fs::create_dir(&run_dir).unwrap();
        let out = p(&run_dir, "h.json");
        let o = bin()
            .current_dir(&run_dir)
            .args(["harmonic", "--mesh", s(&mesh), "--init", "random", "--seed", "17", "--out", "h.json"])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        outs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn missing_output_directory_fails_fast() {
    let o = run(&["nilsoliton", "--algebra", "heis3", "--out", "/nonexistent-dir/cert.json"]);
    assert_eq!(code(&o), 2);
}
