//! Evaluation metrics computed from episode logs.

use std::collections::BTreeMap;

use svo_sim::{FailureCause, MAX_SPEED};

use crate::log::{EpisodeLog, Outcome};

/// Per-episode tallies; everything in [`Metrics`] is derived from these.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub agents: usize,
    pub successes: usize,
    pub crashes: usize,
    pub timeouts: usize,
    pub collisions: usize,
    pub off_zone: usize,
    pub off_path: usize,
    /// Sum of post-step speeds over agent-ticks in which the agent acted.
    pub speed_sum: f64,
    pub speed_count: usize,
    /// Absolute recognition errors: sum and count, overall and per tick.
    pub error_sum: f64,
    pub error_count: usize,
    pub tick_errors: Vec<(f64, usize)>,
    /// Mean over agents of the summed total reward.
    pub mean_return: f64,
}

impl EpisodeStats {
    pub fn from_log(log: &EpisodeLog) -> Self {
        let mut s = EpisodeStats {
            agents: log.summary.outcomes.len(),
            ..Default::default()
        };
        for o in &log.summary.outcomes {
            match o.outcome {
                Outcome::Success { .. } => s.successes += 1,
                Outcome::Timeout => s.timeouts += 1,
                Outcome::Crash { cause, .. } => {
                    s.crashes += 1;
                    match cause {
                        FailureCause::Collision => s.collisions += 1,
                        FailureCause::OffZone => s.off_zone += 1,
                        FailureCause::OffPath => s.off_path += 1,
                    }
                }
            }
        }
        let mut returns: BTreeMap<_, f64> = log.header.initial.iter().map(|v| (v.agent_id, 0.0)).collect();
        for t in &log.ticks {
            for a in &t.actions {
                if let Some(v) = t.vehicles.iter().find(|v| v.agent_id == a.agent_id) {
                    s.speed_sum += v.speed;
                    s.speed_count += 1;
                }
            }
            for r in &t.rewards {
                *returns.entry(r.agent_id).or_default() += r.reward.r_total;
            }
            let mut tick = (0.0, 0);
            for e in &t.estimates {
                for (est, truth) in e.estimates.iter().zip(&e.truths) {
                    tick.0 += (est - truth).abs();
                    tick.1 += 1;
                }
            }
            s.error_sum += tick.0;
            s.error_count += tick.1;
            let k = t.tick.saturating_sub(1) as usize;
            if s.tick_errors.len() <= k {
                s.tick_errors.resize(k + 1, (0.0, 0));
            }
            s.tick_errors[k].0 += tick.0;
            s.tick_errors[k].1 += tick.1;
        }
        if !returns.is_empty() {
            s.mean_return = returns.values().sum::<f64>() / returns.len() as f64;
        }
        s
    }

    fn pct(&self, n: usize) -> f64 {
        if self.agents == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.agents as f64
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.pct(self.successes)
    }

    pub fn crash_rate(&self) -> f64 {
        self.pct(self.crashes)
    }

    pub fn timeout_rate(&self) -> f64 {
        self.pct(self.timeouts)
    }

    /// Mean acting speed as a percentage of the speed cap.
    pub fn speed_score(&self) -> Option<f64> {
        (self.speed_count > 0).then(|| 100.0 * self.speed_sum / self.speed_count as f64 / MAX_SPEED)
    }

    pub fn mean_deviation_error(&self) -> Option<f64> {
        (self.error_count > 0).then(|| self.error_sum / self.error_count as f64)
    }
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

/// Aggregates over episodes; rates are percentages of agents per episode,
/// averaged over episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: Estimate,
    pub crash_rate: Estimate,
    pub timeout_rate: Estimate,
    pub collision_rate: Estimate,
    pub off_zone_rate: Estimate,
    pub off_path_rate: Estimate,
    pub speed_score: Estimate,
    /// Over episodes that recorded recognition estimates.
    pub mean_deviation_error: Option<Estimate>,
    pub mean_return: Estimate,
}

impl Metrics {
    pub fn from_stats(stats: &[EpisodeStats]) -> Self {
        let col = |f: &dyn Fn(&EpisodeStats) -> f64| Estimate::of(&stats.iter().map(f).collect::<Vec<_>>());
        let speeds: Vec<f64> = stats.iter().filter_map(|s| s.speed_score()).collect();
        let errors: Vec<f64> = stats.iter().filter_map(|s| s.mean_deviation_error()).collect();
        Metrics {
            episodes: stats.len(),
            success_rate: col(&|s| s.success_rate()),
            crash_rate: col(&|s| s.crash_rate()),
            timeout_rate: col(&|s| s.timeout_rate()),
            collision_rate: col(&|s| s.pct(s.collisions)),
            off_zone_rate: col(&|s| s.pct(s.off_zone)),
            off_path_rate: col(&|s| s.pct(s.off_path)),
            speed_score: Estimate::of(&speeds),
            mean_deviation_error: (!errors.is_empty()).then(|| Estimate::of(&errors)),
            mean_return: col(&|s| s.mean_return),
        }
    }

    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        Self::from_stats(&logs.iter().map(EpisodeStats::from_log).collect::<Vec<_>>())
    }
}

/// Pooled mean absolute recognition error per tick (index 0 is tick 1);
/// `None` where no estimate was made.
pub fn tick_error_curve(stats: &[EpisodeStats]) -> Vec<Option<f64>> {
    let len = stats.iter().map(|s| s.tick_errors.len()).max().unwrap_or(0);
    let mut acc = vec![(0.0, 0usize); len];
    for s in stats {
        for (a, &(sum, n)) in acc.iter_mut().zip(&s.tick_errors) {
            a.0 += sum;
            a.1 += n;
        }
    }
    acc.into_iter()
        .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_samples() {
        let e = Estimate::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample sd = sqrt(5/3), se = sd / 2
        assert!((e.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Estimate::of(&[7.0]), Estimate { mean: 7.0, se: 0.0 });
        assert_eq!(Estimate::of(&[]), Estimate::default());
    }
}
