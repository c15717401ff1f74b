use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svo_harness::export::read_metrics;

const SMALL: &str = r#"version = 1
seed = 3
episodes = 3

[episode]
agents = 12

[episode.scenario.geometry]
kind = "merge"

[sweep]
values = [0.0, 0.25, 0.5, 0.75, 1.0]
"#;

fn svo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svo"))
        .args(args)
        .env_remove(svo_harness::OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(s.trim_end().lines().count(), 1, "stderr: {s}");
    s.trim_end().to_string()
}

#[test]
fn simulate_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = svo(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 3 + 2);
    assert_eq!(ta, tb);
    let c = dir.path().join("c");
    let o = svo(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(tree(&c), ta);
}

#[test]
fn missing_config_exits_with_usage_status() {
    let o = svo(&["simulate", "--config", "/definitely/missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr_line(&o);
    assert!(line.starts_with("error: config: "), "{line}");
    assert!(line.contains("/definitely/missing.toml"), "{line}");
}

#[test]
fn malformed_config_exits_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "version = 1\nepisodes = \"many\"\n");
    let o = svo(&["evaluate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: config: "));
}

#[test]
fn unknown_flags_exit_with_usage_status() {
    for args in [
        &["simulate", "--config", "x.toml", "--bogus"][..],
        &["frobnicate"][..],
        &["simulate"][..],
        &["simulate", "--config", "x.toml", "--seed", "minus-one"][..],
    ] {
        let o = svo(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr_line(&o).starts_with("error: usage: "));
    }
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[policy]\nkind = \"learned\"\ncheckpoint = \"missing.ckpt\"\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = svo(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).starts_with("error: "));
}

#[test]
fn sweep_writes_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = svo(&[
        "sweep-svo",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metrics(&out.join("sweep.csv")).unwrap();
    let grid: Vec<Option<f64>> = rows.iter().map(|r| r.svo).collect();
    assert_eq!(grid, vec![Some(0.0), Some(0.25), Some(0.5), Some(0.75), Some(1.0)]);
    assert!(rows.iter().all(|r| r.metrics.episodes == 3));
    assert!(out.join("sweep.svg").exists());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let env_out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_svo"))
        .args(["evaluate", "--config", cfg.to_str().unwrap()])
        .env(svo_harness::OUT_DIR_ENV, &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_out.join("metrics.csv").exists());
    assert!(env_out.join("config.toml").exists());
}

#[test]
fn recognition_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"version = 1
seed = 1
episodes = 2

[episode]
agents = 6
horizon = 40

[episode.scenario.geometry]
kind = "merge"

[data]
episodes = 10
tick_stride = 10
eval_episodes = 10

[recognition_training.network]
d_model = 16
n_heads = 2
encoder_hidden = 8
decoder_hidden = 8

[recognition_training.train]
batch_size = 32
max_epochs = 2
"#;
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = svo(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dataset.jsonl").exists());

    let o = svo(&[
        "train-recog",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "recognition.ckpt",
        "recognition_training.csv",
        "recognition_tick_error.svg",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    let recog = text.replacen("episodes = 2\n", "episodes = 2\nmode = \"recog\"\n", 1)
        + &format!(
            "\n[recognition]\ncheckpoint = \"{}\"\n",
            out.join("recognition.ckpt").display()
        );
    let cfg2 = dir.path().join("recog.toml");
    std::fs::write(&cfg2, recog).unwrap();
    let eval_out = dir.path().join("eval");
    let o = svo(&[
        "evaluate",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metrics(&eval_out.join("metrics.csv")).unwrap();
    assert!(rows[0].metrics.mean_deviation_error.is_some());
    assert!(eval_out.join("recognition_tick_error.svg").exists());

    let o = svo(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn sac_training_writes_a_loadable_actor() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"version = 1
episodes = 2

[episode]
agents = 2
horizon = 20

[episode.scenario.geometry]
kind = "straight"

[sac]
episodes = 2
batch_size = 16
warmup_ticks = 10

[sac.network]
vehicle_dim = 8
svo_dim = 4
n_heads = 2
encoder_hidden = 8
decoder_hidden = 8
"#;
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = svo(&[
        "train-sac",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = format!(
        "{text}\n[policy]\nkind = \"learned\"\ncheckpoint = \"{}\"\n",
        out.join("actor.ckpt").display()
    );
    let cfg2 = dir.path().join("learned.toml");
    std::fs::write(&cfg2, eval).unwrap();
    let o = svo(&[
        "evaluate",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
