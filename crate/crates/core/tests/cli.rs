use std::io::Write;

use spatperm::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("spatperm").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("spatperm-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn config_file_diagnostics_and_overrides() {
    let dir = scratch("cfg");
    let path = dir.join("run.cfg");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "# three dimensions\nbeta = 0.0795774715459477\nl_grid = 8").unwrap();
    let (code, out, _) = call(&["rho-c", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("\"finite_volume\""));
    let (_, printed, _) = call(&["rho-c", "--config", path.to_str().unwrap(), "--set", "l_grid=16", "--print-config"]);
    assert!(printed.contains("l_grid = 16  # --set"));
    assert!(printed.contains("run.cfg:2"));
    std::fs::write(&path, "beta = 1\nl_grid 8\n").unwrap();
    let (code, _, err) = call(&["rho-c", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("run.cfg:2"), "{err}");
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn out_file_and_manifest() {
    let dir = scratch("out");
    let out = dir.join("hn.jsonl");
    let (code, table, _) = call(&["hn", "--set", "hn_max=10", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(table.contains("log_h"));
    let text = std::fs::read_to_string(&out).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["command"], "hn");
    assert_eq!(header["config_sha256"].as_str().unwrap().len(), 64);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.manifest.json", out.display())).unwrap()).unwrap();
    assert!(manifest["finished_unix"].as_f64().unwrap() >= manifest["started_unix"].as_f64().unwrap());
    assert_eq!(manifest["config_sha256"], header["config_sha256"]);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn exit_codes() {
    assert_eq!(call(&["rho-c"]).0, 2);
    assert_eq!(call(&["selftest"]).0, 0);
    assert_eq!(call(&["hn", "--set", "weights=logarithmic"]).0, 2);
    let (code, _, err) = call(&["sample-fourier", "--set", "beta=0.08", "--set", "n=64"]);
    assert_eq!(code, 2);
    assert!(err.contains("side"), "{err}");
    assert_eq!(call(&["--version"]).0, 0);
}

#[test]
fn seeds_change_output() {
    let base = ["verify-pd", "--set", "sampler=nonspatial", "--set", "n=50", "--set", "draws=50", "--set", "reference_draws=100"];
    let with = |s: &str| {
        let mut a = base.to_vec();
        a.extend(["--seed", s]);
        call(&a).1
    };
    assert_eq!(with("3"), with("3"));
    assert_ne!(with("3"), with("4"));
}
