use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ocp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocp")).args(args).output().expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(ocp(&["walks", "--out", out, "--set", "d=4", "--set", "samples=200", "--set", "horizon=50"]).status.code(), Some(0));
    let bad = ocp(&["walks", "--out", out, "--set", "sample=200"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown config keys: sample"));
    assert_eq!(ocp(&["walks", "--out", out, "--set", "d=1"]).status.code(), Some(2));
    assert_eq!(ocp(&["walks", "--out", out, "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
    assert_eq!(ocp(&["nosuch"]).status.code(), Some(2));
    let big = ocp(&["ratio", "--out", out, "--set", "d=8", "--set", "n=40", "--set", "walk_samples=10"]);
    assert_eq!(big.status.code(), Some(3));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = a.path().join("in.cfg");
    fs::write(&cfg, "# small run\nd = 3\nlambda = 0.4\nn_max = 5\nwalk_samples = 300\ndist.kind = two-point\ndist.a = 1.5\ndist.b = 0.5\ndist.p = 0.5\n").unwrap();
    let run_a = a.path().join("run");
    let st = ocp(&["moments", "--config", cfg.to_str().unwrap(), "--seed", "21", "--out", run_a.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let manifest = run_a.join("manifest.cfg");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("seed = 21") && text.contains("subcommand = moments") && text.contains("dist.a = 1.5"));
    let st = ocp(&["moments", "--config", manifest.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert!(st.status.success());
    assert_eq!(files(&run_a), files(b.path()));
    let csv = fs::read_to_string(b.path().join("moments.csv")).unwrap();
    let hash = text.lines().find_map(|l| l.strip_prefix("# hash ")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# manifest {hash}"));
    assert_eq!(csv.lines().count(), 2 + 5);
}

#[test]
fn manifest_for_other_subcommand_is_rejected() {
    let a = tempfile::tempdir().unwrap();
    let out = a.path().to_str().unwrap();
    assert!(ocp(&["zeta-check", "--out", out, "--set", "reps=20"]).status.success());
    let m = a.path().join("manifest.cfg");
    assert_eq!(ocp(&["duality", "--config", m.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let a = tempfile::tempdir().unwrap();
    let target = a.path().join("via-env");
    let st = Command::new(env!("CARGO_BIN_EXE_ocp"))
        .args(["zeta-check", "--set", "reps=10"])
        .env("OCP_OUT", &target)
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(target.join("zeta.json").exists());
}

#[test]
fn flags_override_config_values() {
    let a = tempfile::tempdir().unwrap();
    let cfg = a.path().join("c.cfg");
    fs::write(&cfg, "seed = 1\nreps = 10\n").unwrap();
    let out = a.path().join("o");
    let st = ocp(&["zeta-check", "--config", cfg.to_str().unwrap(), "--set", "reps=12", "--seed", "2", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert!(st.status.success());
    let m = fs::read_to_string(out.join("manifest.cfg")).unwrap();
    assert!(m.contains("seed = 2\n") && m.contains("reps = 12\n") && m.contains("jobs = 2\n"));
}
