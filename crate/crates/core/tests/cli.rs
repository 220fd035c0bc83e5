use std::path::Path;
use std::process::{Command, Output};

use dynmri::phantom::PhantomConfig;
use dynmri::pipeline::{ArrayContainer, InputConfig, PipelineConfig};

fn dynmri(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynmri")).args(args).current_dir(cwd).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let cfg = PipelineConfig {
        input: InputConfig::Phantom(PhantomConfig { n_x: 32, n_y: 32, n_t: 4, ..PhantomConfig::default() }),
        ..PipelineConfig::default()
    };
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn phantom_subcommand_writes_readable_containers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PhantomConfig { n_x: 24, n_y: 24, n_t: 3, ..PhantomConfig::default() };
    std::fs::write(dir.path().join("p.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dynmri(&["phantom", "--config", "p.json", "--seed", "4", "--out", "ph"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k = ArrayContainer::load(&dir.path().join("ph/kspace.arr")).unwrap().into_c64().unwrap();
    assert_eq!(k.shape(), &[24, 24, cfg.n_c, 4]);
    let truth = ArrayContainer::load(&dir.path().join("ph/truth.arr")).unwrap().into_f64().unwrap();
    assert_eq!(truth.shape(), &[24, 24, 4]);
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dynmri(&["run", "--config", &cfg, "--scheme", "equispaced", "--acceleration", "4", "--out", "r"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["mask.arr", "recon.arr", "fields.arr", "warped.arr", "metrics.json", "metrics.csv", "timing.json"] {
        assert!(dir.path().join("r").join(f).exists(), "{f} missing");
    }
    let rep = dynmri(&["report", "--out", "r"], dir.path());
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("mean"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(dynmri(&["run", "--config", "missing.json"], dir.path()).status.code(), Some(2));
    assert_eq!(dynmri(&["run", "--config", &cfg, "--acceleration", "0.5"], dir.path()).status.code(), Some(2));
    assert_eq!(dynmri(&["run", "--scheme", "bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(dynmri(&["report", "--out", "nowhere"], dir.path()).status.code(), Some(3));
}
