use std::path::Path;
use std::process::Command;

fn kppfront(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kppfront"))
        .args(args)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn list_checks_names_every_id() {
    let (code, text) = kppfront(&["list-checks"]);
    assert_eq!(code, 0);
    for c in kpp_fronts::experiment::CHECKS {
        assert!(text.contains(c.id) && text.contains(c.operation));
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        "schema_version = 1\nname = \"bad\"\nchecks = [\"no-such-check\"]\n",
    );
    let (code, text) = kppfront(&["verify", "--config", &bad]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("checks[0]"), "{text}");
    let (code, _) = kppfront(&["verify", "--config", "/nonexistent/x.toml"]);
    assert_eq!(code, 2);
    let (code, _) = kppfront(&["verify", "--config", "dirac-3", "--horizon", "5:-5"]);
    assert_eq!(code, 2);
}

#[test]
fn dirac_three_verifies_with_its_global_speed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, text) = kppfront(&["verify", "--config", "dirac-3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let global = summary["metrics"]["speeds"]["global"]["slope"].as_f64().unwrap();
    assert!((global - 3.0).abs() <= 0.02 * 3.0, "{global}");
    for f in ["trace.csv", "position.dat", "mean_speed.dat", "width.dat", "tail.dat"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let header = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(header.starts_with("t,X_0.1,X_0.5,X_0.9,width_0.1_0.9\n"));
}

#[test]
fn simulate_is_byte_reproducible_and_honours_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "short.toml",
        r#"schema_version = 1
name = "short"
checks = ["sandwich"]
[measure]
atoms = [{ speed = 2.5, mass = 1.0 }, { speed = 3.5, mass = 0.5 }]
[horizon]
t_start = -5.0
t_end = 5.0
warmup = 5.0
[grid]
dx = 0.1
dt = 4e-3
half_width = 60.0
[output]
formats = ["csv", "plot", "fields"]
"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let (code, text) = kppfront(&["simulate", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0, "{text}");
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 6);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?}");
    }

    let text = std::fs::read_to_string(&cfg).unwrap();
    let none = write(
        dir.path(),
        "none.toml",
        &text.replace(r#"formats = ["csv", "plot", "fields"]"#, "formats = []"),
    );
    let c = dir.path().join("c");
    let (code, _) = kppfront(&["verify", "--config", &none, "--out", c.to_str().unwrap()]);
    assert_eq!(code, 0);
    let files: Vec<_> = std::fs::read_dir(&c).unwrap().collect();
    assert_eq!(files.len(), 1);
}

#[test]
fn profile_subcommand_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = kppfront(&["profile", "--speed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let table = std::fs::read_to_string(dir.path().join("profile_c3.txt")).unwrap();
    let p = kpp_fronts::FrontProfile::read_text(table.as_bytes()).unwrap();
    assert_eq!(p.speed(), 3.0);
    let (code, _) = kppfront(&["profile", "--speed", "1.5"]);
    assert_eq!(code, 3);
}
