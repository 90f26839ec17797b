//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! model.variant = ga
//! trainer.lr = 0.0005
//! eval.alphas = 0.3,0.5,0.7
//! ```
//!
//! Keys are dotted paths; unknown keys are errors. Overrides use the same
//! `key=value` syntax and are applied after the file. `to_text` writes every
//! key, so a snapshot fully determines a run together with its inputs.
//! Empty `data.dir` selects the synthetic generator; `env.window = 0`
//! means the mean clip length of the training split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{generate_synthetic, load_dataset, split_fractional, Dataset, SyntheticSpec, Vocab};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::policy::TrainHyper;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub synthetic: SyntheticSpec,
    pub variant: Variant,
    pub embed_dim: usize,
    pub query_hidden: usize,
    pub fc_dim: usize,
    pub lstm_hidden: usize,
    pub window: usize,
    pub terminal_reward: bool,
    pub hyper: TrainHyper,
    pub episodes: usize,
    pub checkpoint_every: usize,
    pub alphas: Vec<f64>,
    pub greedy: bool,
    pub chance_samples: usize,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 7,
            data_dir: None,
            split: [0.5, 0.25, 0.25],
            split_seed: 7,
            synthetic: SyntheticSpec::default(),
            variant: t.variant,
            embed_dim: t.embed_dim,
            query_hidden: t.query_hidden,
            fc_dim: t.fc_dim,
            lstm_hidden: t.lstm_hidden,
            window: 0,
            terminal_reward: false,
            hyper: t.hyper,
            episodes: t.total_episodes,
            checkpoint_every: 0,
            alphas: crate::eval::DEFAULT_ALPHAS.to_vec(),
            greedy: true,
            chance_samples: 10_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn reals(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synthetic;
        let h = &mut self.hyper;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.split" => {
                self.split = reals(key, v)?
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three fractions")))?
            }
            "data.split_seed" => self.split_seed = parse(key, v)?,
            "synthetic.num_videos" => s.num_videos = parse(key, v)?,
            "synthetic.frames" => s.frames = parse(key, v)?,
            "synthetic.fps" => s.fps = parse(key, v)?,
            "synthetic.dim" => s.dim = parse(key, v)?,
            "synthetic.vocab_size" => s.vocab_size = parse(key, v)?,
            "synthetic.clip_mean" => s.clip_mean = parse(key, v)?,
            "synthetic.clip_jitter" => s.clip_jitter = parse(key, v)?,
            "synthetic.signal_strength" => s.signal_strength = parse(key, v)?,
            "synthetic.noise_scale" => s.noise_scale = parse(key, v)?,
            "synthetic.query_len" => s.query_len = parse(key, v)?,
            "synthetic.query_pool" => s.query_pool = parse(key, v)?,
            "synthetic.channels_per_token" => s.channels_per_token = parse(key, v)?,
            "synthetic.distractors" => s.distractors = parse(key, v)?,
            "synthetic.seed" => s.seed = parse(key, v)?,
            "model.variant" => self.variant = v.parse()?,
            "model.embed_dim" => self.embed_dim = parse(key, v)?,
            "model.query_hidden" => self.query_hidden = parse(key, v)?,
            "model.fc_dim" => self.fc_dim = parse(key, v)?,
            "model.lstm_hidden" => self.lstm_hidden = parse(key, v)?,
            "env.window" => self.window = parse(key, v)?,
            "env.t_max" => h.t_max = parse(key, v)?,
            "env.beta" => h.beta = parse(key, v)?,
            "env.terminal_reward" => self.terminal_reward = parse(key, v)?,
            "trainer.workers" => h.workers = parse(key, v)?,
            "trainer.episodes" => self.episodes = parse(key, v)?,
            "trainer.lr" => h.lr = parse(key, v)?,
            "trainer.gamma0" => h.gamma0 = parse(key, v)?,
            "trainer.gamma1" => h.gamma1 = parse(key, v)?,
            "trainer.discount" => h.discount = parse(key, v)?,
            "trainer.gae_lambda" => h.gae_lambda = parse(key, v)?,
            "trainer.clip_norm" => h.clip_norm = parse(key, v)?,
            "trainer.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval.alphas" => self.alphas = reals(key, v)?,
            "eval.greedy" => self.greedy = parse(key, v)?,
            "eval.chance_samples" => self.chance_samples = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synthetic;
        let h = &self.hyper;
        let dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        vec![
            ("seed", self.seed.to_string()),
            ("data.dir", dir),
            ("data.split", join(&self.split)),
            ("data.split_seed", self.split_seed.to_string()),
            ("synthetic.num_videos", s.num_videos.to_string()),
            ("synthetic.frames", s.frames.to_string()),
            ("synthetic.fps", format!("{:?}", s.fps)),
            ("synthetic.dim", s.dim.to_string()),
            ("synthetic.vocab_size", s.vocab_size.to_string()),
            ("synthetic.clip_mean", s.clip_mean.to_string()),
            ("synthetic.clip_jitter", s.clip_jitter.to_string()),
            ("synthetic.signal_strength", format!("{:?}", s.signal_strength)),
            ("synthetic.noise_scale", format!("{:?}", s.noise_scale)),
            ("synthetic.query_len", s.query_len.to_string()),
            ("synthetic.query_pool", s.query_pool.to_string()),
            ("synthetic.channels_per_token", s.channels_per_token.to_string()),
            ("synthetic.distractors", s.distractors.to_string()),
            ("synthetic.seed", s.seed.to_string()),
            ("model.variant", self.variant.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.query_hidden", self.query_hidden.to_string()),
            ("model.fc_dim", self.fc_dim.to_string()),
            ("model.lstm_hidden", self.lstm_hidden.to_string()),
            ("env.window", self.window.to_string()),
            ("env.t_max", h.t_max.to_string()),
            ("env.beta", format!("{:?}", h.beta)),
            ("env.terminal_reward", self.terminal_reward.to_string()),
            ("trainer.workers", h.workers.to_string()),
            ("trainer.episodes", self.episodes.to_string()),
            ("trainer.lr", format!("{:?}", h.lr)),
            ("trainer.gamma0", format!("{:?}", h.gamma0)),
            ("trainer.gamma1", format!("{:?}", h.gamma1)),
            ("trainer.discount", format!("{:?}", h.discount)),
            ("trainer.gae_lambda", format!("{:?}", h.gae_lambda)),
            ("trainer.clip_norm", format!("{:?}", h.clip_norm)),
            ("trainer.checkpoint_every", self.checkpoint_every.to_string()),
            ("eval.alphas", join(&self.alphas)),
            ("eval.greedy", self.greedy.to_string()),
            ("eval.chance_samples", self.chance_samples.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# tripnet resolved configuration\n");
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Applies `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`, got {line:?}", source.display(), i + 1))
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("{}:{}: {e}", source.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, source)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.data_dir.is_none() {
            self.synthetic.validate()?;
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config(format!("eval.alphas {:?} must be in [0, 1]", self.alphas)));
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::Config(format!("data.split {:?} must be non-negative and sum to 1", self.split)));
        }
        if self.chance_samples == 0 {
            return Err(Error::Config("eval.chance_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hyper: self.hyper.clone(),
            variant: self.variant,
            embed_dim: self.embed_dim,
            query_hidden: self.query_hidden,
            fc_dim: self.fc_dim,
            lstm_hidden: self.lstm_hidden,
            seed: self.seed,
            total_episodes: self.episodes,
            checkpoint_every: self.checkpoint_every,
            window: (self.window > 0).then_some(self.window),
            terminal_reward: self.terminal_reward,
        }
    }

    /// Loads the configured dataset and splits it.
    pub fn prepare(&self) -> Result<Prepared> {
        let full = match &self.data_dir {
            Some(dir) => load_dataset(dir)?,
            None => generate_synthetic(&self.synthetic)?,
        };
        let split = split_fractional(&full.annotations, self.split, self.split_seed)?;
        Ok(Prepared {
            train: full.with_annotations(split.train),
            val: full.with_annotations(split.val),
            test: full.with_annotations(split.test),
        })
    }

    /// Window width: the configured value, else the training mean.
    pub fn resolve_window(&self, train: &Dataset) -> Result<usize> {
        if self.window > 0 {
            Ok(self.window)
        } else {
            crate::data::mean_clip_length(&train.annotations)
        }
    }

    pub fn env_config(&self, window: usize) -> EnvConfig {
        self.train_config().env_config(window)
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Prepared {
    pub fn vocab(&self) -> Vocab {
        Vocab::build(&self.train.annotations)
    }

    pub fn get(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!("unknown split {name:?} (train, val or test)"))),
        }
    }
}
