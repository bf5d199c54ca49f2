use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use feonet::experiments::ExperimentConfig;

fn feonet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feonet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn shipped_configs_match_the_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ExperimentConfig::preset_names() {
        let shipped = ExperimentConfig::load(dir.join(format!("{name}.toml"))).unwrap();
        assert_eq!(shipped, ExperimentConfig::preset(name).unwrap(), "{name}");
        let printed = feonet(&["preset", name]);
        assert!(printed.status.success());
        assert_eq!(ExperimentConfig::from_toml(&stdout(&printed)).unwrap(), shipped);
    }
}

#[test]
fn unknown_preset_is_a_config_error() {
    let o = feonet(&["preset", "nope"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error\tconfig\t"), "{}", stderr(&o));
}

#[test]
fn generated_meshes_pass_the_checker() {
    let dir = tempfile::tempdir().unwrap();
    let interval = dir.path().join("interval.txt");
    let o = feonet(&[
        "mesh",
        "gen",
        "--shape",
        "interval",
        "--elements",
        "8",
        "--family",
        "p2",
        "--bounds",
        "-1",
        "1",
        "--out",
        interval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let check = stdout(&feonet(&["mesh", "check", interval.to_str().unwrap()]));
    assert_eq!(check.lines().nth(1).unwrap(), "17,8,15,2.5e-1,2.5e-1,1e0");

    let square = dir.path().join("square.txt");
    let o = feonet(&[
        "mesh",
        "gen",
        "--shape",
        "square",
        "--elements",
        "8",
        "--hole",
        "0.375",
        "0.625",
        "0.375",
        "0.625",
        "--out",
        square.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let check = stdout(&feonet(&["mesh", "check", square.to_str().unwrap()]));
    let fields: Vec<&str> = check.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[1], "120");
}

#[test]
fn broken_mesh_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    fs::write(&path, "dim 1\nnode 0\nnode 1\nelem 0 5\n").unwrap();
    let o = feonet(&["mesh", "check", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(
        err.starts_with("error\tmesh_load\t") && err.contains("bad.txt:4:"),
        "{err}"
    );
}

#[test]
fn cond_run_prints_and_writes_the_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("cond").unwrap();
    cfg.sweep.values = vec![8.0, 16.0, 32.0];
    let path = dir.path().join("cond.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let out = dir.path().join("out");
    let o = feonet(&["cond", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(out.join("cond.csv")).unwrap());
    assert_eq!(stdout(&o).lines().count(), 4);
    assert!(stderr(&o).starts_with("kappa ~ h^"));
    // `run` dispatches on the scenario and agrees with the dedicated command
    let again = feonet(&["run", path.to_str().unwrap()]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("conv_diff_1d").unwrap();
    cfg.train.samples = 0;
    let path = dir.path().join("bad.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let o = feonet(&["run", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error\t"), "{}", stderr(&o));
}
