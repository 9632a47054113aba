use std::fs;
use std::path::Path;
use std::process::Command;

const BL: &str = r#"
[problem]
epsilon = 0.001
kappa = 1.0
case = "boundary-layer"

[discretization]
degree = 1
mesh = { kind = "case", n = 32 }
"#;

const SWEEP: &str = r#"
[problem]
epsilon = 0.01
kappa = 1.0
case = "smooth-2d"

[discretization]
degree = 2
mesh = { kind = "case", n = 4 }

[experiment]
kind = "parameter"
kappa_h_over_eps = [1.0, 100.0, 10000.0]
"#;

fn eqflux(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eqflux")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn field(summary: &str, key: &str) -> f64 {
    let line = summary.lines().find(|l| l.starts_with(key)).unwrap();
    line.split(':').nth(1).unwrap().trim().parse().unwrap()
}

#[test]
fn estimate_bounds_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bl.toml", BL);
    let out = tmp.path().join("run");
    let o = eqflux(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary, String::from_utf8(o.stdout).unwrap());
    let eta = field(&summary, "eta:");
    let err = field(&summary, "error (exact):");
    assert!(eta >= err && field(&summary, "effectivity:") >= 1.0);
    for f in ["estimators.csv", "efficiency.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["problem"]["case"], "boundary-layer");
    assert!(manifest["constants"]["c_star"].as_f64().unwrap() > 1.0);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let bl = write(tmp.path(), "bl.toml", BL);
    let sw = write(tmp.path(), "sweep.toml", SWEEP);
    let jobs: [(&str, Option<&str>, &[&str]); 4] = [
        ("estimate", Some(&bl), &["estimators.csv", "efficiency.csv", "summary.txt", "manifest.json"]),
        ("sweep", Some(&sw), &["sweep.csv", "manifest.json"]),
        ("counterexample", None, &["counterexample.csv", "summary.txt"]),
        ("constants", None, &["constants.csv"]),
    ];
    for (cmd, cfg, files) in jobs {
        let runs: Vec<_> = ["1", "4"]
            .iter()
            .map(|t| {
                let out = tmp.path().join(format!("{cmd}-{t}"));
                let mut args = vec![cmd, "--threads", t, "--out", out.to_str().unwrap()];
                if let Some(c) = cfg {
                    args.extend(["--config", c]);
                }
                let o = eqflux(&args);
                assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
                out
            })
            .collect();
        for f in files {
            assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{cmd} {f}");
        }
    }
}

#[test]
fn malformed_config_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (body, needle) in [
        (format!("{BL}\nunknown = 1\n"), "line"),
        (BL.replace("degree = 1", "degree = 7"), "degree"),
        (BL.replace("epsilon = 0.001", "epsilon = -1.0"), "epsilon"),
        (BL.replace("kappa = 1.0", "kappa = \"one\""), "line 4"),
    ] {
        let cfg = write(tmp.path(), "bad.toml", &body);
        let o = eqflux(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{err}");
        assert!(!out.exists());
    }
    let stray: Vec<_> = fs::read_dir(tmp.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().starts_with(".eqflux")).collect();
    assert!(stray.is_empty());
}

#[test]
fn existing_foreign_directory_is_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mine");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep").unwrap();
    let o = eqflux(&["constants", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn reruns_replace_previous_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bl.toml", BL);
    let out = tmp.path().join("run");
    let o = eqflux(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let o = eqflux(&["residual", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("residual.csv").exists());
    assert!(!out.join("estimators.csv").exists());
}
