use std::path::Path;

use svo_agents::SvoMode;
use svo_harness::config::PolicyKind;
use svo_harness::{reference_config, RunConfig, CONFIG_VERSION};
use svo_sim::ScenarioSpec;

#[test]
fn checked_in_reference_config_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk, reference_config(), "regenerate with `svo reference-config`");
}

#[test]
fn reference_config_parses_to_defaults() {
    let cfg = RunConfig::parse(&reference_config()).unwrap();
    let mut expected = RunConfig::new(ScenarioSpec::merge());
    expected.seed = 7;
    assert_eq!(cfg, expected);
    assert_eq!(cfg.version, CONFIG_VERSION);
    assert_eq!(cfg.episodes, 200);
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = RunConfig::parse("version = 1\n[episode.scenario.geometry]\nkind = \"bottleneck\"\n").unwrap();
    assert_eq!(cfg, RunConfig::new(ScenarioSpec::bottleneck()));
    let back = RunConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = "[episode.scenario.geometry]\nkind = \"merge\"\n";
    let cases = [
        format!("version = 2\n{base}"),
        format!("version = 1\nmode = \"recog\"\n{base}"),
        format!("version = 1\nunknown = 3\n{base}"),
        format!("version = 1\n[policy]\nkind = \"learned\"\n{base}"),
        format!("version = 1\n[episode]\nhorizon = 0\n{base}"),
        format!("version = 1\n[sweep]\nvalues = [1.5]\n{base}"),
        "version = 1\n".to_string(),
    ];
    for text in &cases {
        assert!(RunConfig::parse(text).is_err(), "accepted:\n{text}");
    }
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "version = 1\nmode = \"recog\"\n[recognition]\ncheckpoint = \"nets/r.ckpt\"\n[policy]\nkind = \"random\"\n[episode.scenario.geometry]\nkind = \"merge\"\n",
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.mode, SvoMode::Recog);
    assert_eq!(cfg.policy.kind, PolicyKind::Random);
    assert_eq!(cfg.recognition.checkpoint.unwrap(), dir.path().join("nets/r.ckpt"));
}

#[test]
fn missing_config_error_names_the_path() {
    let err = RunConfig::load(Path::new("/no/such/run.toml")).unwrap_err();
    assert!(err.to_string().contains("/no/such/run.toml"));
    assert_eq!(err.kind(), "config");
}

#[test]
fn digest_tracks_content() {
    let a = RunConfig::new(ScenarioSpec::merge());
    let b = a.clone().with_seed(9);
    assert_eq!(a.digest(), a.clone().digest());
    assert_ne!(a.digest(), b.digest());
    assert_eq!(b.sac.seed, 9);
    assert_eq!(b.recognition_training.train.seed, 9);
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn output_dir_precedence() {
    let mut cfg = RunConfig::new(ScenarioSpec::merge());
    cfg.output_dir = Some("from-config".into());
    assert_eq!(cfg.resolve_output_dir(Some(Path::new("cli"))), Path::new("cli"));
    // the environment variable is only consulted when no flag is given
    if std::env::var_os(svo_harness::OUT_DIR_ENV).is_none() {
        assert_eq!(cfg.resolve_output_dir(None), Path::new("from-config"));
        cfg.output_dir = None;
        assert_eq!(cfg.resolve_output_dir(None), Path::new("svo-out"));
    }
}
