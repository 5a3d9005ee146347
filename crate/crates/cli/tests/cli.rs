use std::path::Path;
use std::process::{Command, Output};

fn tori(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tori"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TORI_CONFIG")
        .output()
        .expect("run tori")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn seed(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("seed.torus");
    let o = tori(&["seed", "--rho", "0.031865", "--out", out.to_str().unwrap()], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn dry_run_prints_resolved_configuration() {
    let d = tempfile::tempdir().unwrap();
    let o = tori(&["--dry-run", "--set", "eps=5e-8", "seed", "--rho", "0.031865", "--out", "x.torus"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("eps = 5e-8") || s.contains("eps = 0.00000005"), "{s}");
    assert!(s.contains("dry run"));
    assert!(!d.path().join("x.torus").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let o = tori(&["--set", "no_such_key=1", "index", "."], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no_such_key"));

    std::fs::write(d.path().join("bad.cfg"), "eps = 1e-8\nbogus = 3\n").unwrap();
    let o = tori(&["--config", "bad.cfg", "index", "."], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_tori"))
        .args(["index", "."])
        .current_dir(d.path())
        .env("TORI_CONFIG", "bad.cfg")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "environment config is honored");

    let o = tori(&["seed", "--rho", "0.25", "--out", "r.torus"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_input_exits_with_4() {
    let d = tempfile::tempdir().unwrap();
    let o = tori(&["observe", "nope.torus"], d.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn resumed_family_is_bitwise_identical() {
    let d = tempfile::tempdir().unwrap();
    let s = seed(d.path());
    let s = s.to_str().unwrap();
    std::fs::create_dir(d.path().join("a")).unwrap();
    std::fs::create_dir(d.path().join("b")).unwrap();
    let o = tori(&["continue", s, "--dir", "a/fam", "--max-tori", "5"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tori(&["continue", s, "--dir", "b/fam", "--max-tori", "3"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tori(&["continue", s, "--dir", "b/fam", "--max-tori", "3"], d.path());
    assert_eq!(code(&o), 2, "refuses to overwrite a family");
    let o = tori(&["continue", "--resume", "--dir", "b/fam", "--max-tori", "2"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for id in 0..5 {
        let name = format!("{id:06}.torus");
        let a = std::fs::read(d.path().join("a/fam").join(&name)).unwrap();
        let b = std::fs::read(d.path().join("b/fam").join(&name)).unwrap();
        assert!(a == b, "record {id} differs");
    }
    let ia = std::fs::read_to_string(d.path().join("a/fam/index.tsv")).unwrap();
    let ib = std::fs::read_to_string(d.path().join("b/fam/index.tsv")).unwrap();
    assert_eq!(ia, ib);
    assert_eq!(ia.lines().count(), 6);
}

#[test]
fn thread_count_does_not_change_records() {
    let d = tempfile::tempdir().unwrap();
    let one = d.path().join("one.torus");
    let four = d.path().join("four.torus");
    for (t, p) in [("1", &one), ("4", &four)] {
        let o = tori(&["--threads", t, "seed", "--rho", "0.031865", "--out", p.to_str().unwrap()], d.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert!(std::fs::read(&one).unwrap() == std::fs::read(&four).unwrap());
}

#[test]
fn post_processing_commands_run() {
    let d = tempfile::tempdir().unwrap();
    let s = seed(d.path());
    let s = s.to_str().unwrap();
    let o = tori(&["observe", s], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("Lu ")));
    let o = tori(&["export-surface", s, "--n1", "8", "--n2", "6", "--out", "surf.txt"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("surf.txt")).unwrap();
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() >= 48);
    let o = tori(&["diagnose", s, "--kind", "frame"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reduction_residual"));
    let o = tori(&["diagnose", s, "--kind", "twist"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tori(&["refine", s, "--mode", "isoenergetic", "--out", "r.torus"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
