//! Implementations of the `svo` subcommands. Every command writes its
//! artifacts under an output directory and returns what it wrote.

use std::path::{Path, PathBuf};

use svo_agents::recognition::{episode_errors, tick_errors};
use svo_agents::{
    derive_seed, generate_dataset, sac_train, DatasetConfig, RecognitionConfig, RecognitionDataset, RecognitionNet,
    RecognitionVariant, SvoMode, TrainConfig, TrainReport,
};
use svo_sim::SvoDistribution;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::export::{write_metrics, write_plot, write_table, MetricsRow, Series};
use crate::metrics::{tick_error_curve, EpisodeStats, Estimate, Metrics};
use crate::run::{run_episodes, Driver};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommandOutput {
    /// One-line human summary.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn load_recognizer(config: &RunConfig) -> Result<Option<RecognitionNet>> {
    match (config.mode, &config.recognition.checkpoint) {
        (SvoMode::Recog, Some(path)) => Ok(Some(RecognitionNet::load(path)?)),
        (SvoMode::Recog, None) => Err(HarnessError::Invalid(
            "mode \"recog\" requires recognition.checkpoint".into(),
        )),
        _ => Ok(None),
    }
}

/// Runs `config.episodes` closed-loop episodes and reduces each log to its
/// statistics; logs are written to `log_dir` when given.
pub fn evaluate_config(config: &RunConfig, threads: usize, log_dir: Option<&Path>) -> Result<Vec<EpisodeStats>> {
    if config.episodes == 0 {
        return Err(HarnessError::Invalid("episodes must be at least 1".into()));
    }
    let driver = Driver::from_config(config)?;
    let recognizer = load_recognizer(config)?;
    run_episodes(config, &driver, recognizer.as_ref(), threads, |log| {
        if let Some(dir) = log_dir {
            log.save(&dir.join(format!("episode_{:05}.jsonl", log.header.episode)))?;
        }
        Ok(EpisodeStats::from_log(&log))
    })
}

fn summary_line(m: &Metrics) -> String {
    let mut s = format!(
        "{} episodes: success {:.1} ± {:.1} %, crash {:.1} ± {:.1} %, speed {:.1} %",
        m.episodes, m.success_rate.mean, m.success_rate.se, m.crash_rate.mean, m.crash_rate.se, m.speed_score.mean
    );
    if let Some(e) = m.mean_deviation_error {
        s.push_str(&format!(", mde {:.4} ± {:.4}", e.mean, e.se));
    }
    s
}

fn write_tick_curve(out: &Path, name: &str, title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> Result<Vec<PathBuf>> {
    let csv_path = out.join(format!("{name}.csv"));
    let svg_path = out.join(format!("{name}.svg"));
    let mut rows = Vec::new();
    for (label, pts) in curves {
        for &(t, e) in pts {
            rows.push(vec![label.clone(), t.to_string(), e.to_string()]);
        }
    }
    write_table(&csv_path, &["series", "tick", "mde"], &rows)?;
    let series: Vec<Series> = curves.iter().map(|(l, p)| Series::new(l.clone(), p.clone())).collect();
    write_plot(&svg_path, title, "tick", "mean deviation error", &series)?;
    Ok(vec![csv_path, svg_path])
}

fn curve_points(curve: &[Option<f64>]) -> Vec<(f64, f64)> {
    curve
        .iter()
        .enumerate()
        .filter_map(|(k, e)| e.map(|e| ((k + 1) as f64, e)))
        .collect()
}

pub fn simulate(config: &RunConfig, out: &Path, threads: usize) -> Result<CommandOutput> {
    let log_dir = out.join("logs");
    let stats = evaluate_config(config, threads, Some(&log_dir))?;
    let metrics = Metrics::from_stats(&stats);
    let table = out.join("metrics.csv");
    write_metrics(
        &table,
        &[MetricsRow {
            label: "simulate".into(),
            svo: None,
            metrics: metrics.clone(),
        }],
    )?;
    Ok(CommandOutput {
        summary: summary_line(&metrics),
        files: vec![log_dir, table],
    })
}

pub fn evaluate(config: &RunConfig, out: &Path, threads: usize) -> Result<CommandOutput> {
    let stats = evaluate_config(config, threads, None)?;
    let metrics = Metrics::from_stats(&stats);
    let table = out.join("metrics.csv");
    write_metrics(
        &table,
        &[MetricsRow {
            label: mode_label(config.mode).into(),
            svo: None,
            metrics: metrics.clone(),
        }],
    )?;
    let mut files = vec![table];
    if metrics.mean_deviation_error.is_some() {
        let pts = curve_points(&tick_error_curve(&stats));
        files.extend(write_tick_curve(
            out,
            "recognition_tick_error",
            "Recognition error per tick",
            &[(scenario_label(config), pts)],
        )?);
    }
    Ok(CommandOutput {
        summary: summary_line(&metrics),
        files,
    })
}

fn mode_label(mode: SvoMode) -> &'static str {
    match mode {
        SvoMode::TrueSvo => "true_svo",
        SvoMode::Recog => "recog",
        SvoMode::NoSvo => "no_svo",
    }
}

fn scenario_label(config: &RunConfig) -> String {
    format!("{:?}", config.episode.scenario.geometry.kind()).to_lowercase()
}

/// Fixed all-agent SVO grid; one metrics row per value.
pub fn sweep_rows(config: &RunConfig, threads: usize) -> Result<Vec<MetricsRow>> {
    config
        .sweep
        .values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            c.episode.scenario.svo = SvoDistribution::Fixed { value: v };
            let stats = evaluate_config(&c, threads, None)?;
            Ok(MetricsRow {
                label: format!("svo={v}"),
                svo: Some(v),
                metrics: Metrics::from_stats(&stats),
            })
        })
        .collect()
}

pub fn sweep_svo(config: &RunConfig, out: &Path, threads: usize) -> Result<CommandOutput> {
    let rows = sweep_rows(config, threads)?;
    let table = out.join("sweep.csv");
    write_metrics(&table, &rows)?;
    let pick = |f: fn(&Metrics) -> f64| {
        rows.iter()
            .map(|r| (r.svo.unwrap_or(f64::NAN), f(&r.metrics)))
            .collect()
    };
    let plot = out.join("sweep.svg");
    write_plot(
        &plot,
        &format!("Fixed-SVO sweep ({})", scenario_label(config)),
        "svo",
        "rate (%)",
        &[
            Series::new("success", pick(|m| m.success_rate.mean)),
            Series::new("crash", pick(|m| m.crash_rate.mean)),
            Series::new("speed", pick(|m| m.speed_score.mean)),
        ],
    )?;
    let summary = rows
        .iter()
        .map(|r| format!("{}: crash {:.1} %", r.label, r.metrics.crash_rate.mean))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(CommandOutput {
        summary,
        files: vec![table, plot],
    })
}

/// Dataset from `data.path` when configured, otherwise rolled out with the
/// configured policy.
pub fn training_dataset(config: &RunConfig) -> Result<RecognitionDataset> {
    match &config.data.path {
        Some(p) => Ok(RecognitionDataset::load(p)?),
        None => rollout_dataset(config, config.data.episodes, config.seed),
    }
}

pub fn rollout_dataset(config: &RunConfig, episodes: u64, seed: u64) -> Result<RecognitionDataset> {
    let driver = Driver::from_config(config)?;
    let mut policy = driver.for_episode(seed);
    let mut dc = DatasetConfig::new(config.episode.clone(), episodes, seed);
    dc.tick_stride = config.data.tick_stride;
    Ok(generate_dataset(policy.as_mut(), &dc)?)
}

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let ds = rollout_dataset(config, config.data.episodes, config.seed)?;
    let path = out.join("dataset.jsonl");
    ds.save(&path)?;
    Ok(CommandOutput {
        summary: format!(
            "{} samples, {} pairs from {} episodes",
            ds.len(),
            ds.pair_count(),
            config.data.episodes
        ),
        files: vec![path.clone(), svo_agents::dataset::index_path(&path)],
    })
}

/// Samples of the held-out episodes as their own dataset.
pub fn held_out(ds: &RecognitionDataset) -> RecognitionDataset {
    RecognitionDataset {
        header: ds.header.clone(),
        samples: ds.split().1.into_iter().cloned().collect(),
    }
}

pub fn train_recognizer(
    dataset: &RecognitionDataset,
    network: &RecognitionConfig,
    train: &TrainConfig,
) -> Result<(RecognitionNet, TrainReport)> {
    let mut net = RecognitionNet::new(network.clone())?;
    let report = svo_agents::train_recognition(&mut net, dataset, train)?;
    Ok((net, report))
}

fn write_training(out: &Path, name: &str, report: &TrainReport) -> Result<Vec<PathBuf>> {
    let csv_path = out.join(format!("{name}.csv"));
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.heldout_loss.to_string(),
                e.heldout_mde.to_string(),
            ]
        })
        .collect();
    write_table(
        &csv_path,
        &["epoch", "train_loss", "heldout_loss", "heldout_mde"],
        &rows,
    )?;
    let svg_path = out.join(format!("{name}.svg"));
    let col = |f: fn(&svo_agents::recognition::EpochStats) -> f64| {
        report.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect()
    };
    write_plot(
        &svg_path,
        "Recognition training",
        "epoch",
        "value",
        &[
            Series::new("train loss", col(|e| e.train_loss)),
            Series::new("held-out loss", col(|e| e.heldout_loss)),
            Series::new("held-out mde", col(|e| e.heldout_mde)),
        ],
    )?;
    Ok(vec![csv_path, svg_path])
}

pub fn train_recog(config: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let ds = training_dataset(config)?;
    let (net, report) = train_recognizer(
        &ds,
        &config.recognition_training.network,
        &config.recognition_training.train,
    )?;
    let ckpt = out.join("recognition.ckpt");
    net.save(&ckpt)?;
    let mut files = vec![ckpt];
    files.extend(write_training(out, "recognition_training", &report)?);
    let curve: Vec<(f64, f64)> = tick_errors(&net, &held_out(&ds))?
        .into_iter()
        .map(|(t, e)| (t as f64, e))
        .collect();
    files.extend(write_tick_curve(
        out,
        "recognition_tick_error",
        "Held-out recognition error per tick",
        &[(scenario_label(config), curve)],
    )?);
    let best = report
        .epochs
        .iter()
        .find(|e| e.epoch == report.best_epoch)
        .map(|e| e.heldout_mde)
        .unwrap_or(f64::NAN);
    Ok(CommandOutput {
        summary: format!(
            "{} samples, best epoch {} with held-out mde {best:.4}",
            ds.len(),
            report.best_epoch
        ),
        files,
    })
}

pub fn train_sac(config: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let (trainer, report) = sac_train(&config.episode, &config.sac)?;
    let ckpt = out.join("actor.ckpt");
    trainer.actor.save(&ckpt)?;
    let csv_path = out.join("sac_returns.csv");
    let rows: Vec<Vec<String>> = report
        .episode_returns
        .iter()
        .enumerate()
        .map(|(k, r)| vec![k.to_string(), r.to_string()])
        .collect();
    write_table(&csv_path, &["episode", "mean_return"], &rows)?;
    let svg_path = out.join("sac_returns.svg");
    let pts = report
        .episode_returns
        .iter()
        .enumerate()
        .map(|(k, &r)| (k as f64, r))
        .collect();
    write_plot(
        &svg_path,
        "SAC training",
        "episode",
        "mean return",
        &[Series::new("return", pts)],
    )?;
    let tail = report
        .episode_returns
        .iter()
        .rev()
        .take(10)
        .copied()
        .collect::<Vec<_>>();
    Ok(CommandOutput {
        summary: format!(
            "{} episodes, {} updates, last-10 mean return {:.3}",
            report.episode_returns.len(),
            report.updates,
            Estimate::of(&tail).mean
        ),
        files: vec![ckpt, csv_path, svg_path],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub variant: RecognitionVariant,
    /// Per-episode mean deviation error over the evaluation dataset.
    pub error: Estimate,
    pub episodes: usize,
    pub tick_curve: Vec<(u64, f64)>,
    pub report: TrainReport,
}

pub const ABLATION_VARIANTS: [RecognitionVariant; 3] = [
    RecognitionVariant::Full,
    RecognitionVariant::WithoutMap,
    RecognitionVariant::WithoutAttention,
];

pub fn variant_label(v: RecognitionVariant) -> &'static str {
    match v {
        RecognitionVariant::Full => "full",
        RecognitionVariant::WithoutMap => "without_map",
        RecognitionVariant::WithoutAttention => "without_attention",
    }
}

/// Trains every variant with the same data and budget and scores it on
/// `eval`.
pub fn ablation_study(
    train: &RecognitionDataset,
    eval: &RecognitionDataset,
    network: &RecognitionConfig,
    budget: &TrainConfig,
) -> Result<Vec<(AblationResult, RecognitionNet)>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&variant| {
            let cfg = RecognitionConfig {
                variant,
                ..network.clone()
            };
            let (net, report) = train_recognizer(train, &cfg, budget)?;
            let per: Vec<f64> = episode_errors(&net, eval)?.into_iter().map(|(_, e)| e).collect();
            let result = AblationResult {
                variant,
                error: Estimate::of(&per),
                episodes: per.len(),
                tick_curve: tick_errors(&net, eval)?,
                report,
            };
            Ok((result, net))
        })
        .collect()
}

pub fn ablate(config: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let train = training_dataset(config)?;
    let eval = rollout_dataset(config, config.data.eval_episodes, derive_seed(config.seed, 1))?;
    let results = ablation_study(
        &train,
        &eval,
        &config.recognition_training.network,
        &config.recognition_training.train,
    )?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (r, net) in &results {
        let label = variant_label(r.variant);
        let ckpt = out.join(format!("recognition_{label}.ckpt"));
        net.save(&ckpt)?;
        files.push(ckpt);
        rows.push(vec![
            label.to_string(),
            r.error.mean.to_string(),
            r.error.se.to_string(),
            r.episodes.to_string(),
        ]);
        curves.push((
            label.to_string(),
            r.tick_curve.iter().map(|&(t, e)| (t as f64, e)).collect(),
        ));
    }
    let table = out.join("ablation.csv");
    write_table(&table, &["variant", "mde", "mde_se", "episodes"], &rows)?;
    files.push(table);
    files.extend(write_tick_curve(
        out,
        "ablation_tick_error",
        "Recognition error per tick by variant",
        &curves,
    )?);
    let summary = results
        .iter()
        .map(|(r, _)| format!("{} {:.4} ± {:.4}", variant_label(r.variant), r.error.mean, r.error.se))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(CommandOutput { summary, files })
}
