use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ogl-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn ogl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ogl"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "n = 12\nsteps = 300\nseed = 2\n\n[[schedule]]\nkind = \"state-change\"\nstep = 150\ntheta = 3\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn learn_writes_all_artifacts() {
    let dir = scratch("learn");
    let cfg = small_config(&dir);
    let out_dir = dir.join("out");
    let out = ogl(&["learn", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("final msd"));
    for f in [
        "config.toml",
        "true_graph.json",
        "model.json",
        "learned_graph.json",
        "msd.csv",
        "influence.json",
        "plot_msd.csv",
        "plot_map.csv",
        "plot_path.csv",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let msd = fs::read_to_string(out_dir.join("msd.csv")).unwrap();
    assert_eq!(msd.lines().count(), 301);
    assert!(msd.lines().nth(150).unwrap().ends_with("state-change"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = scratch("seed");
    let cfg = small_config(&dir);
    let a = dir.join("a");
    let b = dir.join("b");
    ok(&ogl(&[
        "learn",
        &cfg,
        "--seed",
        "7",
        "--out-dir",
        a.to_str().unwrap(),
    ]));
    ok(&ogl(&["learn", &cfg, "--out-dir", b.to_str().unwrap()]));
    let echoed = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));
    assert_ne!(
        fs::read(a.join("msd.csv")).unwrap(),
        fs::read(b.join("msd.csv")).unwrap()
    );
}

#[test]
fn simulate_and_compare_run() {
    let dir = scratch("sim");
    let cfg = small_config(&dir);
    let out_dir = dir.join("out");
    ok(&ogl(&[
        "simulate",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out_dir.join("beliefs.csv").exists());
    ok(&ogl(&[
        "compare",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let body = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    assert_eq!(body.lines().count(), 301);
}

#[test]
fn influence_and_path_on_a_saved_graph() {
    let dir = scratch("influence");
    let cfg = small_config(&dir);
    let out_dir = dir.join("out");
    let o = out_dir.to_str().unwrap();
    ok(&ogl(&["simulate", &cfg, "--out-dir", o]));
    let graph = out_dir.join("true_graph.json");
    let g = graph.to_str().unwrap();

    let out = ogl(&[
        "influence",
        &cfg,
        "--target",
        "4",
        "--graph",
        g,
        "--out-dir",
        o,
    ]);
    ok(&out);
    let map = fs::read_to_string(out_dir.join("map_4.csv")).unwrap();
    assert_eq!(map.lines().count(), 12);
    assert!(out_dir.join("influence_4.json").exists());

    let out = ogl(&[
        "path",
        &cfg,
        "--source",
        "1",
        "--target",
        "4",
        "--graph",
        g,
        "--out-dir",
        o,
    ]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("1-"), "{stdout}");
    let path = fs::read_to_string(out_dir.join("path_1_4.csv")).unwrap();
    assert_eq!(path.lines().count(), 2);
}

#[test]
fn bad_input_fails_with_one_line() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "delta = 2.0\n").unwrap();
    let out = ogl(&[
        "learn",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("delta"));

    let out = ogl(&["learn", dir.join("missing.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);

    let out = ogl(&[
        "influence",
        "--target",
        "99",
        "--graph",
        "/nonexistent.json",
    ]);
    assert!(!out.status.success());
}
