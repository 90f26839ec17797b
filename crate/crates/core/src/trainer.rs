//! Episode rollouts and asynchronous actor-critic training.
//!
//! Each worker repeatedly snapshots the shared parameters, runs one full
//! episode with sampled actions, builds the episode loss on its own tape
//! and applies the clipped gradient to the shared parameters in one atomic
//! step. Log records flow to a single collector that also writes
//! checkpoints.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Annotation, Dataset, FeatureVideo, Vocab};
use crate::env::{clamped_iou, ActionKind, Env, EnvConfig, Trace, Window, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::fusion::pool_window_features;
use crate::model::{init_params, Model, ModelConfig, Variant};
use crate::ndcore::optim::clip_grad_norm;
use crate::ndcore::{Bound, ParamSet, SharedParams, Tape};
use crate::policy::{discounted_returns, episode_loss, gae, sample_action, SelectMode, StepVars, TrainHyper};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: ActionKind,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub entropy: f64,
    pub probs: [f64; NUM_ACTIONS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub prediction: Window,
    pub gt: Window,
    /// Ended by the step cap rather than Terminate.
    pub forced: bool,
    /// Percentage of the video's frames covered by observed units.
    pub frames_used_pct: f64,
    /// Seconds spent pooling features and running the network.
    pub compute_secs: f64,
    pub trace: Trace,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn final_iou(&self) -> f64 {
        clamped_iou(self.prediction, self.gt)
    }

    pub fn num_actions(&self) -> usize {
        self.steps.len()
    }
}

/// A finished episode together with the tape that produced it.
pub struct Rollout {
    pub tape: Tape,
    pub bound: Bound,
    pub vars: Vec<StepVars>,
    pub trajectory: Trajectory,
}

/// Runs one episode. With `trainable`, parameters are tape leaves that
/// collect gradients; otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    model: &Model,
    params: &ParamSet,
    video: &FeatureVideo,
    tokens: &[usize],
    gt: Window,
    env_cfg: EnvConfig,
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
    trainable: bool,
) -> Result<Rollout> {
    let mut env = Env::new(video.timeline(), gt, env_cfg)?;
    let mut tape = Tape::new();
    let bound = if trainable {
        params.bind(&mut tape)
    } else {
        params.bind_frozen(&mut tape)
    };
    let started = Instant::now();
    let mut state = model.begin(&mut tape, &bound, tokens)?;
    let mut compute = started.elapsed().as_secs_f64();
    let mut steps = Vec::new();
    let mut vars = Vec::new();
    while !env.is_done() {
        let t0 = Instant::now();
        let pooled = pool_window_features(video, env.window())?;
        let out = model.step(&mut tape, &bound, &pooled, &mut state)?;
        let probs = out.prob_values(&tape);
        let action = sample_action(&probs, mode, rng)?;
        let ent = out.entropy(&mut tape)?;
        let log_prob = tape.pick(out.log_probs, action.index())?;
        compute += t0.elapsed().as_secs_f64();
        let outcome = env.step(action)?;
        steps.push(StepRecord {
            action,
            reward: outcome.reward,
            value: out.value_of(&tape),
            log_prob: tape.value(log_prob).data()[0],
            entropy: tape.value(ent).data()[0],
            probs,
        });
        vars.push(StepVars {
            log_prob,
            entropy: ent,
            value: out.value,
        });
    }
    let trajectory = Trajectory {
        steps,
        prediction: env.window(),
        gt,
        forced: env.state().forced,
        frames_used_pct: 100.0 * env.frames_used_fraction(),
        compute_secs: compute,
        trace: env.into_trace(),
    };
    Ok(Rollout {
        tape,
        bound,
        vars,
        trajectory,
    })
}

/// Non-recording episode.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    model: &Model,
    params: &ParamSet,
    video: &FeatureVideo,
    tokens: &[usize],
    gt: Window,
    env_cfg: EnvConfig,
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    rollout(model, params, video, tokens, gt, env_cfg, mode, rng, false).map(|r| r.trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub version: u64,
}

/// Backpropagates the episode loss through the rollout's tape and returns
/// the clipped gradients with loss statistics.
pub fn episode_gradients(rollout: &mut Rollout, hyper: &TrainHyper) -> Result<(crate::ndcore::Gradients, UpdateStats)> {
    let traj = &rollout.trajectory;
    let rewards = traj.rewards();
    let returns = discounted_returns(&rewards, hyper.discount);
    let adv = gae(&rewards, &traj.values(), hyper.discount, hyper.gae_lambda)?;
    let terms = episode_loss(&mut rollout.tape, &rollout.vars, &returns, &adv, hyper.gamma0, hyper.gamma1)?;
    let total = rollout.tape.value(terms.total).data()[0];
    if !total.is_finite() {
        log::warn!("non-finite loss {total}; trajectory:\n{}", traj.trace.to_text());
        return Err(Error::NonFinite(total));
    }
    rollout.tape.backward(terms.total)?;
    let mut grads = rollout.bound.gradients(&rollout.tape);
    let grad_norm = clip_grad_norm(&mut grads, hyper.clip_norm);
    if !grad_norm.is_finite() {
        log::warn!("non-finite gradient norm; trajectory:\n{}", traj.trace.to_text());
        return Err(Error::NonFinite(grad_norm));
    }
    Ok((
        grads,
        UpdateStats {
            policy_loss: terms.policy,
            value_loss: terms.value,
            entropy: terms.entropy,
            grad_norm,
            version: 0,
        },
    ))
}

/// Computes the episode gradient and applies it to the shared parameters.
pub fn worker_update(rollout: &mut Rollout, global: &SharedParams, hyper: &TrainHyper) -> Result<UpdateStats> {
    let (grads, mut stats) = episode_gradients(rollout, hyper)?;
    let (version, _) = global.apply_gradients(&grads, hyper.lr, false)?;
    stats.version = version;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: TrainHyper,
    pub variant: Variant,
    pub embed_dim: usize,
    pub query_hidden: usize,
    pub fc_dim: usize,
    pub lstm_hidden: usize,
    pub seed: u64,
    pub total_episodes: usize,
    /// Episodes between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Window width in frames; `None` uses the training mean clip length.
    pub window: Option<usize>,
    pub terminal_reward: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: TrainHyper::default(),
            variant: Variant::GatedAttention,
            embed_dim: 64,
            query_hidden: 256,
            fc_dim: 256,
            lstm_hidden: 256,
            seed: 7,
            total_episodes: 20_000,
            checkpoint_every: 0,
            window: None,
            terminal_reward: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.total_episodes == 0 {
            return Err(Error::Config("total_episodes must be at least 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be at least one frame".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            feature_dim,
            vocab_size,
            embed_dim: self.embed_dim,
            query_hidden: self.query_hidden,
            fc_dim: self.fc_dim,
            lstm_hidden: self.lstm_hidden,
        }
    }

    pub fn env_config(&self, window: usize) -> EnvConfig {
        EnvConfig {
            window,
            t_max: self.hyper.t_max,
            beta: self.hyper.beta,
            terminal_reward: self.terminal_reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    /// Position in the global episode sequence.
    pub episode: usize,
    pub worker: usize,
    pub iou: f64,
    pub length: usize,
    pub reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    /// Parameter version after the update; 0 if the update was skipped.
    pub version: u64,
}

impl TrainLogRecord {
    pub const HEADER: &'static str =
        "# episode worker iou length reward policy_loss value_loss entropy grad_norm version";
}

impl fmt::Display for TrainLogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:?} {} {:?} {:?} {:?} {:?} {:?} {}",
            self.episode,
            self.worker,
            self.iou,
            self.length,
            self.reward,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.grad_norm,
            self.version
        )
    }
}

impl FromStr for TrainLogRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Invalid(format!("malformed log record {s:?}"));
        if f.len() != 10 {
            return Err(bad());
        }
        let u = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
        let r = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            episode: u(0)? as usize,
            worker: u(1)? as usize,
            iou: r(2)?,
            length: u(3)? as usize,
            reward: r(4)?,
            policy_loss: r(5)?,
            value_loss: r(6)?,
            entropy: r(7)?,
            grad_norm: r(8)?,
            version: u(9)?,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub model: ModelConfig,
    pub window: usize,
    /// Records in collector arrival order.
    pub log: Vec<TrainLogRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub skipped_updates: usize,
}

/// Where checkpoints and the log go; `None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

pub const LOG_FILE: &str = "train_log.txt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn checkpoint_name(episodes: usize) -> String {
    format!("ckpt_{episodes:07}.ckpt")
}

/// Per-worker seed derived from the master seed.
pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(worker as u64 + 1))
}

struct Item<'a> {
    video: &'a FeatureVideo,
    tokens: Vec<usize>,
    gt: Window,
}

fn items<'a>(data: &'a Dataset, vocab: &Vocab) -> Result<Vec<Item<'a>>> {
    data.annotations
        .iter()
        .map(|a: &Annotation| {
            Ok(Item {
                video: data.video(&a.video_id)?,
                tokens: vocab.encode(&a.tokens),
                gt: a.gt,
            })
        })
        .collect()
}

enum Msg {
    /// A finished episode, with the parameters right after its update when
    /// it closes a checkpoint interval.
    Record(TrainLogRecord, Option<ParamSet>),
    Failed(Error),
}

/// Trains on every annotation of `train`. With `workers == 1` the result
/// is a pure function of the inputs.
pub fn train(cfg: &TrainConfig, train: &Dataset, vocab: &Vocab, output: Option<&TrainOutput>) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    if train.annotations.is_empty() {
        return Err(Error::Data("training split has no annotations".into()));
    }
    let dim = train
        .feature_dim()
        .ok_or_else(|| Error::Data("training split has no videos".into()))?;
    let window = match cfg.window {
        Some(w) => w,
        None => crate::data::mean_clip_length(&train.annotations)?,
    };
    let model_cfg = cfg.model_config(dim, vocab.len());
    let model = Model::new(model_cfg)?;
    let items = items(train, vocab)?;
    let env_cfg = cfg.env_config(window);
    if let Some(out) = output {
        std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
        vocab.save(&out.dir.join(VOCAB_FILE))?;
    }

    let global = SharedParams::new(init_params(&model_cfg, cfg.seed)?);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Msg>();
    let workers = cfg.hyper.workers;
    log::info!(
        "training {} model on {} annotations: {} episodes, {} workers, window {window}",
        cfg.variant,
        items.len(),
        cfg.total_episodes,
        workers
    );

    let collected = std::thread::scope(|scope| -> Result<(Vec<TrainLogRecord>, Vec<PathBuf>, usize)> {
        for w in 0..workers {
            let tx = tx.clone();
            let (items, global, next, model) = (&items, &global, &next, &model);
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(cfg.seed, w));
                let mut order: Vec<usize> = Vec::new();
                loop {
                    let episode = next.fetch_add(1, Ordering::SeqCst);
                    if episode >= cfg.total_episodes {
                        break;
                    }
                    if order.is_empty() {
                        order = (0..items.len()).collect();
                        order.shuffle(&mut rng);
                    }
                    let item = &items[order.pop().expect("refilled")];
                    let ckpt = output.is_some()
                        && cfg.checkpoint_every > 0
                        && (episode + 1) % cfg.checkpoint_every == 0
                        && episode + 1 < cfg.total_episodes;
                    let msg = run_one(model, global, item, env_cfg, &cfg.hyper, &mut rng, episode, w, ckpt);
                    let stop = matches!(msg, Msg::Failed(_));
                    if tx.send(msg).is_err() || stop {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut log = Vec::with_capacity(cfg.total_episodes);
        let mut ckpts = Vec::new();
        let mut skipped = 0;
        let mut writer = match output {
            Some(out) => {
                let p = out.dir.join(LOG_FILE);
                let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                let mut w = std::io::BufWriter::new(f);
                use std::io::Write;
                writeln!(w, "{}", TrainLogRecord::HEADER).map_err(|e| Error::io(&p, e))?;
                Some((w, p))
            }
            None => None,
        };
        let mut failure = None;
        for msg in rx {
            let (rec, snapshot) = match msg {
                Msg::Record(r, s) => (r, s),
                Msg::Failed(e) => {
                    next.store(cfg.total_episodes, Ordering::SeqCst);
                    failure.get_or_insert(e);
                    continue;
                }
            };
            if rec.version == 0 {
                skipped += 1;
            }
            if let Some((w, p)) = writer.as_mut() {
                use std::io::Write;
                writeln!(w, "{rec}").map_err(|e| Error::io(&*p, e))?;
            }
            if let (Some(out), Some(ps)) = (output, snapshot) {
                let p = out.dir.join(checkpoint_name(rec.episode + 1));
                ps.save(&p)?;
                ckpts.push(p);
            }
            log.push(rec);
            let done = log.len();
            if done % 500 == 0 {
                let tail = &log[done - 500..];
                let mean = tail.iter().map(|r| r.iou).sum::<f64>() / 500.0;
                log::info!("{done} episodes, mean IoU of last 500: {mean:.3}");
            }
        }
        if let Some((mut w, p)) = writer {
            use std::io::Write;
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        match failure {
            Some(e) => Err(e),
            None => Ok((log, ckpts, skipped)),
        }
    })?;
    let (log, mut checkpoints, skipped_updates) = collected;
    let params = global.into_inner();
    if let Some(out) = output {
        let p = out.dir.join(FINAL_CHECKPOINT);
        params.save(&p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome {
        params,
        model: model_cfg,
        window,
        log,
        checkpoints,
        skipped_updates,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    model: &Model,
    global: &SharedParams,
    item: &Item<'_>,
    env_cfg: EnvConfig,
    hyper: &TrainHyper,
    rng: &mut ChaCha8Rng,
    episode: usize,
    worker: usize,
    want_snapshot: bool,
) -> Msg {
    let snapshot = global.snapshot();
    let mut ro = match rollout(model, &snapshot, item.video, &item.tokens, item.gt, env_cfg, SelectMode::Sample, rng, true) {
        Ok(r) => r,
        Err(e) => return Msg::Failed(e),
    };
    let traj = &ro.trajectory;
    let mut rec = TrainLogRecord {
        episode,
        worker,
        iou: traj.final_iou(),
        length: traj.num_actions(),
        reward: traj.total_reward(),
        policy_loss: f64::NAN,
        value_loss: f64::NAN,
        entropy: f64::NAN,
        grad_norm: f64::NAN,
        version: 0,
    };
    let snapshot = match episode_gradients(&mut ro, hyper) {
        Ok((grads, s)) => {
            let (version, snap) = match global.apply_gradients(&grads, hyper.lr, want_snapshot) {
                Ok(v) => v,
                Err(e) => return Msg::Failed(e),
            };
            rec.policy_loss = s.policy_loss;
            rec.value_loss = s.value_loss;
            rec.entropy = s.entropy;
            rec.grad_norm = s.grad_norm;
            rec.version = version;
            snap
        }
        Err(Error::NonFinite(v)) => {
            log::warn!("episode {episode}: update skipped (non-finite {v})");
            want_snapshot.then(|| global.snapshot())
        }
        Err(e) => return Msg::Failed(e),
    };
    Msg::Record(rec, snapshot)
}

/// Reads a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            hyper: TrainHyper {
                workers: 1,
                lr: 0.01,
                ..TrainHyper::default()
            },
            embed_dim: 4,
            query_hidden: 6,
            fc_dim: 6,
            lstm_hidden: 6,
            total_episodes: 10,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> (Dataset, Vocab) {
        let ds = generate_synthetic(&SyntheticSpec {
            num_videos: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let vocab = Vocab::build(&ds.annotations);
        (ds, vocab)
    }

    #[test]
    fn single_worker_is_reproducible() {
        let (ds, vocab) = tiny_data();
        let a = train(&tiny_cfg(), &ds, &vocab, None).unwrap();
        let b = train(&tiny_cfg(), &ds, &vocab, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert_eq!(a.log.len(), 10);
        assert_eq!(a.params.version(), 10);
    }

    #[test]
    fn log_lines_round_trip() {
        let (ds, vocab) = tiny_data();
        let out = train(&tiny_cfg(), &ds, &vocab, None).unwrap();
        for r in &out.log {
            assert_eq!(&r.to_string().parse::<TrainLogRecord>().unwrap(), r);
        }
    }

    #[test]
    fn rejects_empty_training_set() {
        let (ds, vocab) = tiny_data();
        let empty = ds.with_annotations(Vec::new());
        assert!(train(&tiny_cfg(), &empty, &vocab, None).is_err());
        let bad = TrainConfig {
            total_episodes: 0,
            ..tiny_cfg()
        };
        assert!(train(&bad, &ds, &vocab, None).is_err());
    }
}
