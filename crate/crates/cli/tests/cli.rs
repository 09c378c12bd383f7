use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const STEP: &str = r#"{"coefficients": [[1.0, 0.0], [1.0, 0.0]], "support": 1.0, "kind": "finite"}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unicurrent"));
    c.env_remove("UNICURRENT_OUT_DIR");
    c
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_body(o: &Output) -> Value {
    serde_json::from_slice(o.stderr.trim_ascii()).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&o.stderr)))
}

fn summary(dir: &Path, stem: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap()).unwrap()
}

fn absorbing_config(seed: u64) -> String {
    format!(
        r#"{{"kind": "simulate-absorbing", "seed": {seed},
            "diffusion": {{"model": {{"name": "brownian", "sigma": 1.0}},
              "simulation": {{"boundary": 0.0, "t_max": 1.0, "dt_step": 0.01, "n_paths": 10000,
                "initial": {{"kind": "point", "x": -1.0}}, "times": [0.25, 0.5, 1.0]}}}}}}"#
    )
}

#[test]
fn shipped_sweep_configs_reproduce_their_exponents() {
    for (cfg, stem, target) in [
        ("zeno-continuous.cfg", "zeno-continuous", 1.5),
        ("anti-zeno-discontinuous.cfg", "anti-zeno-discontinuous", 0.5),
    ] {
        let dir = TempDir::new().unwrap();
        let o = bin().arg("--out-dir").arg(dir.path()).arg("run").arg(shipped(cfg)).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("exponent="));
        let s = summary(dir.path(), stem);
        let e = s["exponent"].as_f64().unwrap();
        assert!((e - target).abs() < 0.1, "{cfg}: {e}");
        assert_eq!(s["partial"], false);
        let csv = std::fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("# unicurrent ") && header.contains(s["config-hash"].as_str().unwrap()));
        assert_eq!(lines.next(), Some("control,value,error"));
        let gp = std::fs::read_to_string(dir.path().join(format!("{stem}.gp"))).unwrap();
        assert!(gp.contains("set logscale xy"));
        assert!(gp.contains(&format!("{stem}.csv")));
    }
}

#[test]
fn moments_prints_identities() {
    let dir = TempDir::new().unwrap();
    let o = bin().arg("--out-dir").arg(dir.path()).args(["moments", "--sigma", "1"]).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("0.75 0.5 0.25"), "{}", stdout(&o));
}

#[test]
fn zeno_subcommand_reports_both_laws() {
    let dir = TempDir::new().unwrap();
    let o = bin().arg("--out-dir").arg(dir.path()).arg("zeno").output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("exponent=-0.5000"), "{}", stdout(&o));
    let o = bin()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["zeno", "--law", "ANTIZENO_1_2", "--prefactor", "0.01"])
        .args(["--n", "1", "--n", "10", "--n", "100", "--n", "1000", "--n", "10000"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("exponent=0.5000"), "{}", stdout(&o));
    let o = bin()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["zeno", "--n", "1", "--n", "10", "--n", "100"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("fit=skipped"));
    assert!(summary(dir.path(), "zeno")["fit_skipped"].is_string());
    let o = bin().arg("--out-dir").arg(dir.path()).args(["zeno", "--law", "ZENO"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let run = |cfg: &Path| bin().arg("--out-dir").arg(d).arg("run").arg(cfg).output().unwrap();

    let o = run(&write(d, "bad.cfg", "{\"kind\": \"propagate\","));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_body(&o)["error"], "parse");

    let o = run(&write(d, "unknown.cfg", r#"{"kind": "moments", "sigma": 1}"#));
    assert_eq!(o.status.code(), Some(2));

    let o = run(&write(d, "empty.cfg", r#"{"kind": "propagate", "wavefunction": {}, "delta_t": 1e-3}"#));
    assert_eq!(o.status.code(), Some(3));
    let body = error_body(&o);
    assert_eq!(body["error"], "validation");
    assert_eq!(body["exit_code"], 3);

    let narrow = format!(
        r#"{{"kind": "sweep-dt", "wavefunction": {STEP},
            "sweep": {{"variable": "delta-t", "min": 1e-4, "max": 1e-3}}}}"#
    );
    let o = run(&write(d, "narrow.cfg", &narrow));
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_body(&o)["error"], "invalid-argument");
    // the points that were computed are still written, flagged partial
    let csv = std::fs::read_to_string(d.join("sweep-dt.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("# partial:"));
    assert_eq!(summary(d, "sweep-dt")["partial"], true);

    std::fs::write(d.join("plain"), "").unwrap();
    let o = bin().arg("--out-dir").arg(d.join("plain/sub")).arg("moments").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_body(&o)["error"], "io");

    let o = bin().arg("--tol").arg("1e-30").arg("moments").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn subcommand_rejects_config_of_other_kind() {
    let dir = TempDir::new().unwrap();
    let o = bin()
        .arg("--out-dir")
        .arg(dir.path())
        .arg("propagate")
        .arg("--config")
        .arg(shipped("zeno-continuous.cfg"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

fn config_hash(cfg: &Path, extra: &[&str]) -> String {
    let o = bin().args(extra).arg("validate-config").arg(cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.starts_with("valid kind="));
    line.trim().rsplit("config-hash=").next().unwrap().to_string()
}

#[test]
fn config_hash_ignores_layout_and_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let a = write(
        d,
        "a.cfg",
        &format!(r#"{{"kind": "mass-beyond", "delta_t": 1e-3, "wavefunction": {STEP}, "distances": [0.0, 0.5]}}"#),
    );
    let b = write(
        d,
        "b.cfg",
        r#"{
            "distances": [0.0, 0.5],
            "wavefunction": {"kind": "finite", "support": 1.0, "coefficients": [[1.0, 0.0], [1.0, 0.0]]},
            "delta_t": 0.001,
            "kind": "mass-beyond",
            "output": {"dir": "elsewhere", "stem": "other"}
        }"#,
    );
    let h = config_hash(&a, &[]);
    assert_eq!(h.len(), 64);
    assert_eq!(h, config_hash(&b, &[]));
    assert_ne!(h, config_hash(&a, &["--seed", "3"]));
    assert_ne!(h, config_hash(&a, &["--tol", "1e-6"]));
}

fn moments_lands_in(cwd: &Path, env: Option<&Path>, flag: Option<&Path>, cfg: Option<&Path>) {
    let mut c = bin();
    c.current_dir(cwd);
    if let Some(e) = env {
        c.env("UNICURRENT_OUT_DIR", e);
    }
    if let Some(f) = flag {
        c.arg("--out-dir").arg(f);
    }
    c.arg("moments");
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    assert!(c.output().unwrap().status.success());
}

#[test]
fn output_directory_precedence() {
    let root = TempDir::new().unwrap();
    let r = root.path();
    let [cwd, env, flag, conf] = ["cwd", "env", "flag", "conf"].map(|n| {
        let p = r.join(n);
        std::fs::create_dir(&p).unwrap();
        p
    });
    let cfg = write(
        r,
        "m.cfg",
        &format!(r#"{{"kind": "moments", "output": {{"dir": "{}"}}}}"#, conf.display()),
    );
    let has = |d: &Path| d.join("moments.csv").exists();
    let clear = || {
        for d in [&cwd, &env, &flag, &conf] {
            let _ = std::fs::remove_file(d.join("moments.csv"));
        }
    };

    moments_lands_in(&cwd, None, None, None);
    assert!(has(&cwd));
    clear();
    moments_lands_in(&cwd, Some(&env), None, None);
    assert!(has(&env) && !has(&cwd));
    clear();
    moments_lands_in(&cwd, Some(&env), None, Some(&cfg));
    assert!(has(&conf) && !has(&env));
    clear();
    moments_lands_in(&cwd, Some(&env), Some(&flag), Some(&cfg));
    assert!(has(&flag) && !has(&conf) && !has(&env));
}

#[test]
fn monte_carlo_artifacts_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let csv_for = |seed: u64, threads: &str, sub: &str| {
        let out = d.join(sub);
        let cfg = write(d, &format!("{sub}.cfg"), &absorbing_config(seed));
        let o = bin()
            .args(["--threads", threads, "--out-dir"])
            .arg(&out)
            .arg("run")
            .arg(cfg)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("simulate-absorbing.csv")).unwrap()
    };
    let a = csv_for(1, "1", "a");
    let b = csv_for(1, "4", "b");
    let c = csv_for(2, "2", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().nth(1), Some("t,S,stderr"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn paths_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.cfg", &absorbing_config(1));
    let o = bin()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["simulate-absorbing", "--paths", "100", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    // fewer paths than the minimum
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn propagate_writes_amplitude_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "p.cfg",
        &format!(r#"{{"kind": "propagate", "wavefunction": {STEP}, "delta_t": 1e-2}}"#),
    );
    let o = bin()
        .arg("--out-dir")
        .arg(dir.path())
        .args(["propagate", "--delta-t", "1e-3", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("propagate.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("y,re_psi,im_psi,abs_psi_sq"));
    assert!(csv.lines().count() > 100);
}
