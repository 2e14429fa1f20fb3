use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rma");

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn rma(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).output().unwrap()
}

fn quick_design_config(dir: &Path, base: &str) -> String {
    let text = std::fs::read_to_string(config(base)).unwrap();
    let path = dir.join(base);
    std::fs::write(&path, text.replace("finite_size_c = 0.0", "finite_size_c = 0.0\nde = { max_generations = 20 }")).unwrap();
    path.to_str().unwrap().to_string()
}

/// One small invocation per subcommand.
fn invocations(dir: &Path) -> Vec<(&'static str, Vec<String>)> {
    let design = quick_design_config(dir, "two_groups.toml");
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        ("analyze", s(&["analyze", "--config", &config("two_groups.toml")])),
        ("simulate", s(&["simulate", "--config", &config("two_groups.toml"), "--trials", "8"])),
        ("design", s(&["design", "--config", &design])),
        ("dynamics", s(&["dynamics", "--frames", "150", "--lambda", "12"])),
        ("capacity", s(&["capacity", "--config", &config("dynamics_capacity.toml")])),
        ("oracle", s(&["oracle", "--config", &config("oracle_tiny.toml")])),
        ("sweep", s(&["sweep", "--config", &config("analyzer_vs_sim.toml"), "--trials", "10"])),
    ]
}

#[test]
fn csv_headers_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let expected = std::fs::read_to_string(golden("headers.txt")).unwrap();
    let runs = invocations(dir.path());
    for line in expected.lines() {
        let mut parts = line.splitn(3, ' ');
        let (cmd, file, header) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        let (_, args) = runs.iter().find(|(c, _)| *c == cmd).unwrap();
        let out_dir = dir.path().join(cmd);
        if !out_dir.join(file).exists() {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = rma(&args, &out_dir);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
        let text = std::fs::read_to_string(out_dir.join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{cmd} {file}");
    }
}

#[test]
fn oracle_output_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = rma(&["oracle", "--config", &config("oracle_tiny.toml")], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.4375");
    let got = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert_eq!(got, std::fs::read_to_string(golden("oracle_tiny.csv")).unwrap());
}

#[test]
fn knife_edge_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = rma(&["analyze", "--config", &config("knife_edge_sweep.toml")], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let eps_at = |g: &str| -> f64 {
        let row = csv.lines().find(|l| l.split(',').next() == Some(g)).unwrap();
        row.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!(eps_at("3.49") <= 0.05);
    assert!(eps_at("3.5") >= 0.5);
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn every_output_is_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, args) in invocations(dir.path()) {
        let out_dir = dir.path().join(format!("{cmd}-m"));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(rma(&args, &out_dir).status.success(), "{cmd}");
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["subcommand"], cmd);
        assert_eq!(manifest["seed"], 0);
        let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        let mut on_disk: Vec<String> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "manifest.json")
            .collect();
        on_disk.sort();
        let mut listed_sorted: Vec<String> = listed.iter().map(|s| s.to_string()).collect();
        listed_sorted.sort();
        assert_eq!(on_disk, listed_sorted, "{cmd}");
    }
}

#[test]
fn output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, args) in invocations(dir.path()) {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let mut contents = Vec::new();
        for jobs in ["1", "4"] {
            let out_dir = dir.path().join(format!("{cmd}-j{jobs}"));
            let mut a = args.clone();
            a.extend(["--jobs", jobs, "--seed", "11"]);
            let out = rma(&a, &out_dir);
            assert!(out.status.success(), "{cmd}");
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
                .unwrap()
                .map(|e| e.unwrap())
                .filter(|e| e.file_name() != "manifest.json")
                .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
                .collect();
            files.sort();
            contents.push((files, out.stdout));
        }
        assert!(contents[0] == contents[1], "{cmd} output changed with --jobs");
    }
}

#[test]
fn seed_changes_monte_carlo_output() {
    let dir = tempfile::tempdir().unwrap();
    let read = |seed: &str| {
        let out_dir = dir.path().join(seed);
        rma(&["simulate", "--config", &config("two_groups.toml"), "--trials", "4", "--seed", seed], &out_dir);
        std::fs::read_to_string(out_dir.join("aggregate.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = rma(&["analyze", "--config", "/no/such/file.toml"], &d.join("a"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));

    let out = Command::new(BIN).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN).args(["analyze", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "num_devices = 10\nnum_slot = 20\n").unwrap();
    let out = rma(&["analyze", "--config", bad.to_str().unwrap()], &d.join("b"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_slot"));

    let out = rma(&["dynamics", "--scheme", "aloha"], &d.join("c"));
    assert_eq!(out.status.code(), Some(2));

    // Oracle refuses instances beyond the enumeration limit.
    let out = rma(&["oracle", "--config", &config("two_groups.toml")], &d.join("e"));
    assert_eq!(out.status.code(), Some(2));

    let infeasible = quick_design_config(d, "three_groups_ack_all.toml");
    let out = rma(&["design", "--config", &infeasible], &d.join("f"));
    assert_eq!(out.status.code(), Some(3));
    // The best design found is still written.
    assert!(d.join("f/g.csv").exists());
    assert!(std::fs::read_to_string(d.join("f/design.txt")).unwrap().contains("feasible = false"));
}
