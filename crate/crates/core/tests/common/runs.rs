//! Train-then-evaluate runs on the synthetic preset.

use std::time::Instant;

use tripnet::config::{Config, Prepared};
use tripnet::eval::{evaluate, EvalReport, ModelAgent, RandomAgent};
use tripnet::policy::SelectMode;
use tripnet::trainer::{train, TrainLogRecord};

pub struct Run {
    pub report: EvalReport,
    pub log: Vec<TrainLogRecord>,
    pub window: usize,
    pub train_secs: f64,
}

/// The preset file with `key=value` overrides applied.
pub fn preset(overrides: &[String]) -> Config {
    let mut cfg = Config::load(&super::preset_path()).unwrap();
    for o in overrides {
        cfg.apply_override(o).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

pub fn train_and_eval(cfg: &Config) -> Run {
    let data = cfg.prepare().unwrap();
    let started = Instant::now();
    let out = train(&cfg.train_config(), &data.train, &data.vocab(), None).unwrap();
    let train_secs = started.elapsed().as_secs_f64();
    let mode = if cfg.greedy { SelectMode::Greedy } else { SelectMode::Sample };
    let agent = ModelAgent::new(out.params, data.vocab(), mode).unwrap();
    let report = evaluate(&agent, &data.test, cfg.env_config(out.window), &cfg.alphas, cfg.seed).unwrap();
    Run {
        report,
        log: out.log,
        window: out.window,
        train_secs,
    }
}

/// IoU@`alpha` of the uniform-random policy on the test split, averaged
/// over `repeats` rollout seeds.
pub fn random_policy_accuracy(cfg: &Config, data: &Prepared, alpha: f64, repeats: u64) -> f64 {
    let window = cfg.resolve_window(&data.train).unwrap();
    let env = cfg.env_config(window);
    let total: f64 = (0..repeats)
        .map(|s| {
            evaluate(&RandomAgent, &data.test, env, &[alpha], 1000 + s)
                .unwrap()
                .accuracy_at(alpha)
                .unwrap()
        })
        .sum();
    total / repeats as f64
}

/// Mean clamped IoU of the first and last `n` logged episodes.
pub fn curve_ends(log: &[TrainLogRecord], n: usize) -> (f64, f64) {
    let n = n.min(log.len());
    let mean = |rs: &[TrainLogRecord]| rs.iter().map(|r| r.iou).sum::<f64>() / rs.len() as f64;
    (mean(&log[..n]), mean(&log[log.len() - n..]))
}
