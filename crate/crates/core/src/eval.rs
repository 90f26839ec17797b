//! Accuracy and efficiency evaluation.
//!
//! A prediction is correct at threshold α when its clamped IoU with the
//! ground truth is at least α. Frames used counts unique frames covered by
//! observed feature units; action counts include Terminate.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{tokenize, Annotation, Dataset, FeatureVideo, Vocab};
use crate::env::{clamped_iou, ActionKind, Env, EnvConfig, Trace, Window, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ndcore::ParamSet;
use crate::policy::{sample_action, SelectMode};
use crate::trainer::{run_episode, StepRecord, Trajectory};

pub const DEFAULT_ALPHAS: [f64; 3] = [0.3, 0.5, 0.7];

/// Something that can run one localization episode.
pub trait Agent: Sync {
    fn run(&self, video: &FeatureVideo, annotation: &Annotation, env: EnvConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory>;
}

/// A trained network with its vocabulary.
pub struct ModelAgent {
    pub model: Model,
    pub params: ParamSet,
    pub vocab: Vocab,
    pub mode: SelectMode,
}

impl ModelAgent {
    pub fn new(params: ParamSet, vocab: Vocab, mode: SelectMode) -> Result<Self> {
        let model = Model::for_params(&params)?;
        if model.config.vocab_size != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} embedding rows but the vocabulary has {} entries",
                model.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            model,
            params,
            vocab,
            mode,
        })
    }
}

impl Agent for ModelAgent {
    fn run(&self, video: &FeatureVideo, ann: &Annotation, env: EnvConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let tokens = self.vocab.encode(&ann.tokens);
        run_episode(&self.model, &self.params, video, &tokens, ann.gt, env, self.mode, rng)
    }
}

/// Picks each action uniformly at random.
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn run(&self, video: &FeatureVideo, ann: &Annotation, env: EnvConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let probs = [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS];
        scripted_episode(video, ann.gt, env, |_| sample_action(&probs, SelectMode::Sample, rng))
    }
}

/// Runs an episode whose actions come from `next`, which sees the
/// environment before each step.
pub fn scripted_episode(
    video: &FeatureVideo,
    gt: Window,
    cfg: EnvConfig,
    mut next: impl FnMut(&Env) -> Result<ActionKind>,
) -> Result<Trajectory> {
    let mut env = Env::new(video.timeline(), gt, cfg)?;
    let mut steps = Vec::new();
    let p = 1.0 / NUM_ACTIONS as f64;
    while !env.is_done() {
        let action = next(&env)?;
        let out = env.step(action)?;
        steps.push(StepRecord {
            action,
            reward: out.reward,
            value: 0.0,
            log_prob: p.ln(),
            entropy: -(p.ln()),
            probs: [p; NUM_ACTIONS],
        });
    }
    Ok(Trajectory {
        steps,
        prediction: env.window(),
        gt,
        forced: env.state().forced,
        frames_used_pct: 100.0 * env.frames_used_fraction(),
        compute_secs: 0.0,
        trace: env.into_trace(),
    })
}

/// Best clamped IoU any width-`x` window inside `[0, n)` can reach.
pub fn oracle_ceiling(gt: Window, x: usize, n: usize) -> f64 {
    let x = x.min(n) as f64;
    let g = gt.len() as f64;
    x.min(g) / x.max(g)
}

/// Mean percentage of frames used and mean action count.
pub fn efficiency_metrics(trajectories: &[Trajectory]) -> (f64, f64) {
    if trajectories.is_empty() {
        return (0.0, 0.0);
    }
    let n = trajectories.len() as f64;
    let pct = trajectories.iter().map(|t| t.frames_used_pct).sum::<f64>() / n;
    let acts = trajectories.iter().map(|t| t.num_actions() as f64).sum::<f64>() / n;
    (pct, acts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub video_id: String,
    pub query: String,
    pub gt: Window,
    pub prediction: Window,
    pub iou: f64,
    pub ceiling: f64,
    pub actions: usize,
    pub frames_used_pct: f64,
    pub forced: bool,
    pub compute_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(α, fraction correct)` in the order requested.
    pub accuracy: Vec<(f64, f64)>,
    pub mean_iou: f64,
    pub mean_frames_used_pct: f64,
    pub mean_actions: f64,
    pub mean_compute_secs: f64,
    pub mean_ceiling: f64,
    /// Fraction of items whose ceiling reaches each α.
    pub ceiling_accuracy: Vec<(f64, f64)>,
    pub forced_fraction: f64,
    pub wall_secs: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn accuracy_at(&self, alpha: f64) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|(a, _)| (a - alpha).abs() < 1e-12)
            .map(|&(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "items                 {}", self.records.len()).unwrap();
        for ((a, acc), (_, ceil)) in self.accuracy.iter().zip(&self.ceiling_accuracy) {
            writeln!(s, "IoU@{a:<4}              {acc:.4}   (ceiling {ceil:.4})").unwrap();
        }
        writeln!(s, "mean IoU              {:.4}", self.mean_iou).unwrap();
        writeln!(s, "mean ceiling          {:.4}", self.mean_ceiling).unwrap();
        writeln!(s, "frames used (%)       {:.2}", self.mean_frames_used_pct).unwrap();
        writeln!(s, "avg actions           {:.2}", self.mean_actions).unwrap();
        writeln!(s, "forced stops          {:.4}", self.forced_fraction).unwrap();
        writeln!(s, "compute per item (s)  {:.6}", self.mean_compute_secs).unwrap();
        writeln!(s, "wall time (s)         {:.3}", self.wall_secs).unwrap();
        s
    }

    /// One tab-separated line per item, with a header.
    pub fn records_to_text(&self) -> String {
        let mut s = String::from(
            "# video\tgt_start\tgt_end\tpred_start\tpred_end\tiou\tceiling\tactions\tframes_used_pct\tforced\tquery\n",
        );
        for r in &self.records {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:?}\t{:?}\t{}\t{:?}\t{}\t{}",
                r.video_id,
                r.gt.start(),
                r.gt.end(),
                r.prediction.start(),
                r.prediction.end(),
                r.iou,
                r.ceiling,
                r.actions,
                r.frames_used_pct,
                r.forced,
                r.query
            )
            .unwrap();
        }
        s
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Config(format!("alphas must be non-empty and in [0, 1], got {alphas:?}")));
    }
    Ok(())
}

fn episode_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Runs one episode per annotation in parallel. Per-item generators are
/// derived from `seed`, so results do not depend on scheduling.
pub fn evaluate(agent: &dyn Agent, data: &Dataset, env: EnvConfig, alphas: &[f64], seed: u64) -> Result<EvalReport> {
    check_alphas(alphas)?;
    if data.annotations.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    for a in &data.annotations {
        data.video(&a.video_id)?;
    }
    let started = Instant::now();
    let trajs: Vec<Trajectory> = data
        .annotations
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
            agent.run(data.video(&a.video_id)?, a, env, &mut rng)
        })
        .collect::<Result<_>>()?;
    let wall_secs = started.elapsed().as_secs_f64();
    let records: Vec<EvalRecord> = data
        .annotations
        .iter()
        .zip(&trajs)
        .map(|(a, t)| {
            let n = data.videos[&a.video_id].frames;
            EvalRecord {
                video_id: a.video_id.clone(),
                query: a.text.clone(),
                gt: a.gt,
                prediction: t.prediction,
                iou: t.final_iou(),
                ceiling: oracle_ceiling(a.gt, env.window, n),
                actions: t.num_actions(),
                frames_used_pct: t.frames_used_pct,
                forced: t.forced,
                compute_secs: t.compute_secs,
            }
        })
        .collect();
    let n = records.len() as f64;
    let frac = |f: &dyn Fn(&EvalRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    let accuracy = alphas.iter().map(|&a| (a, frac(&|r| r.iou >= a))).collect();
    let ceiling_accuracy = alphas.iter().map(|&a| (a, frac(&|r| r.ceiling >= a))).collect();
    let (mean_frames_used_pct, mean_actions) = efficiency_metrics(&trajs);
    Ok(EvalReport {
        accuracy,
        mean_iou: records.iter().map(|r| r.iou).sum::<f64>() / n,
        mean_frames_used_pct,
        mean_actions,
        mean_compute_secs: records.iter().map(|r| r.compute_secs).sum::<f64>() / n,
        mean_ceiling: records.iter().map(|r| r.ceiling).sum::<f64>() / n,
        ceiling_accuracy,
        forced_fraction: frac(&|r| r.forced),
        wall_secs,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceBaseline {
    pub accuracy: Vec<(f64, f64)>,
    pub mean_iou: f64,
    pub samples: usize,
}

/// Accuracy of uniformly random window placements: each sample picks an
/// annotation and a start uniformly from all in-bounds positions.
pub fn chance_baseline(data: &Dataset, window: usize, alphas: &[f64], samples: usize, seed: u64) -> Result<ChanceBaseline> {
    check_alphas(alphas)?;
    if data.annotations.is_empty() || samples == 0 || window == 0 {
        return Err(Error::Invalid("chance baseline needs annotations, samples and a window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; alphas.len()];
    let mut total = 0.0;
    for _ in 0..samples {
        let a = &data.annotations[rng.random_range(0..data.annotations.len())];
        let n = data.video(&a.video_id)?.frames;
        let x = window.min(n);
        let s = rng.random_range(0..=n - x);
        let iou = clamped_iou(Window::new(s, s + x)?, a.gt);
        total += iou;
        for (h, &al) in hits.iter_mut().zip(alphas) {
            if iou >= al {
                *h += 1;
            }
        }
    }
    Ok(ChanceBaseline {
        accuracy: alphas
            .iter()
            .zip(&hits)
            .map(|(&a, &h)| (a, h as f64 / samples as f64))
            .collect(),
        mean_iou: total / samples as f64,
        samples,
    })
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub window: Window,
    pub start_secs: f64,
    pub end_secs: f64,
    pub trace: Trace,
    pub forced: bool,
}

/// Greedy localization of a free-text query. Without a reference interval
/// the trace's IoU column is measured against the whole video.
pub fn localize(agent: &ModelAgent, video: &FeatureVideo, query: &str, reference: Option<Window>, env: EnvConfig) -> Result<Localization> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(Error::Invalid(format!("query {query:?} has no tokens")));
    }
    let gt = match reference {
        Some(w) => w,
        None => Window::new(0, video.frames)?,
    };
    let ids = agent.vocab.encode(&tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = run_episode(&agent.model, &agent.params, video, &ids, gt, env, SelectMode::Greedy, &mut rng)?;
    Ok(Localization {
        window: t.prediction,
        start_secs: t.prediction.start() as f64 / video.fps,
        end_secs: t.prediction.end() as f64 / video.fps,
        trace: t.trace,
        forced: t.forced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: usize, e: usize) -> Window {
        Window::new(s, e).unwrap()
    }

    fn brute_ceiling(gt: Window, x: usize, n: usize) -> f64 {
        let x = x.min(n);
        (0..=n - x)
            .map(|s| clamped_iou(w(s, s + x), gt))
            .fold(0.0, f64::max)
    }

    #[test]
    fn ceiling_examples() {
        assert_eq!(oracle_ceiling(w(100, 260), 160, 1000), 1.0);
        assert_eq!(oracle_ceiling(w(100, 180), 160, 1000), 0.5);
        assert_eq!(oracle_ceiling(w(100, 200), 50, 1000), 0.5);
        assert_eq!(oracle_ceiling(w(0, 80), 160, 100), 0.8);
    }

    #[test]
    fn ceiling_matches_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.random_range(1..120);
            let x = rng.random_range(1..150);
            let s = rng.random_range(0..n);
            let e = rng.random_range(s + 1..=n);
            let gt = w(s, e);
            assert!((oracle_ceiling(gt, x, n) - brute_ceiling(gt, x, n)).abs() < 1e-12);
        }
    }

    fn video(frames: usize) -> FeatureVideo {
        FeatureVideo::new("v", frames, 24.0, 1, 1, vec![0.0; frames]).unwrap()
    }

    #[test]
    fn immediate_terminate_efficiency() {
        let v = video(1000);
        let t = scripted_episode(&v, w(400, 500), EnvConfig::new(160), |_| Ok(ActionKind::Terminate)).unwrap();
        assert_eq!(t.prediction, w(0, 160));
        let (pct, acts) = efficiency_metrics(&[t]);
        assert!((pct - 16.0).abs() < 1e-12);
        assert_eq!(acts, 1.0);
    }

    #[test]
    fn capped_clamped_script_is_forced() {
        let v = video(1000);
        let t = scripted_episode(&v, w(400, 500), EnvConfig::new(160), |_| Ok(ActionKind::BackJ)).unwrap();
        assert_eq!(t.prediction, w(0, 160));
        assert!(t.forced);
        assert_eq!(t.num_actions(), 30);
    }

    #[test]
    fn alphas_validated() {
        assert!(check_alphas(&[]).is_err());
        assert!(check_alphas(&[1.5]).is_err());
        check_alphas(&DEFAULT_ALPHAS).unwrap();
    }
}
