//! The full network: query encoder, fusion and actor-critic head.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::fusion::{self, concat_fuse, encode_query, gated_fuse};
use crate::ndcore::layers::{init_gru, init_linear, init_lstm, uniform_matrix};
use crate::ndcore::{Bound, ParamSet, Tape, Tensor, Var};
use crate::policy::{self, initial_state, policy_forward, LstmState, PolicyOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Sigmoid gate from the query, multiplied into the pooled features.
    GatedAttention,
    /// Self-gated features concatenated with the query, then projected.
    Concat,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::GatedAttention => "ga",
            Variant::Concat => "concat",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ga" => Ok(Variant::GatedAttention),
            "concat" => Ok(Variant::Concat),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected ga or concat)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Feature dimension D; also the width of the fused state.
    pub feature_dim: usize,
    /// Embedding rows, including the unknown-word row 0.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub query_hidden: usize,
    pub fc_dim: usize,
    pub lstm_hidden: usize,
}

impl ModelConfig {
    /// Sizes used for full-scale features: embedding 64, GRU, FC and LSTM 256.
    pub fn new(variant: Variant, feature_dim: usize, vocab_size: usize) -> Self {
        Self {
            variant,
            feature_dim,
            vocab_size,
            embed_dim: 64,
            query_hidden: 256,
            fc_dim: 256,
            lstm_hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("query_hidden", self.query_hidden),
            ("fc_dim", self.fc_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Recovers the configuration from parameter names and shapes.
    pub fn infer(ps: &ParamSet) -> Result<Self> {
        let shape = |name: &str| {
            ps.get(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let variant = if ps.contains(&format!("{}.W", fusion::GATE)) {
            Variant::GatedAttention
        } else if ps.contains(&format!("{}.W", fusion::PROJ)) {
            Variant::Concat
        } else {
            return Err(Error::Checkpoint("no fusion parameters found".into()));
        };
        let embed = shape(fusion::EMBED)?;
        let gru = shape(&format!("{}.U_z", fusion::QUERY_GRU))?;
        let fc = shape(&format!("{}.W", policy::FC))?;
        let lstm = shape(&format!("{}.U_i", policy::LSTM))?;
        let cfg = Self {
            variant,
            feature_dim: fc[1],
            vocab_size: embed[0],
            embed_dim: embed[1],
            query_hidden: gru[0],
            fc_dim: fc[0],
            lstm_hidden: lstm[0],
        };
        let expected = init_params(&cfg, 0)?;
        for (name, t) in expected.iter() {
            let got = shape(name)?;
            if got != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {got:?}, expected {:?}",
                    t.shape()
                )));
            }
        }
        if ps.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {} for a {} model",
                ps.len(),
                expected.len(),
                cfg.variant
            )));
        }
        Ok(cfg)
    }
}

/// Seeded initial parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let d = cfg.feature_dim;
    ps.insert(fusion::EMBED, uniform_matrix(cfg.vocab_size, cfg.embed_dim, &mut rng))?;
    init_gru(&mut ps, fusion::QUERY_GRU, cfg.embed_dim, cfg.query_hidden, &mut rng)?;
    match cfg.variant {
        Variant::GatedAttention => init_linear(&mut ps, fusion::GATE, cfg.query_hidden, d, &mut rng)?,
        Variant::Concat => {
            init_linear(&mut ps, fusion::SELF_GATE, d, d, &mut rng)?;
            init_linear(&mut ps, fusion::PROJ, d + cfg.query_hidden, d, &mut rng)?;
        }
    }
    init_linear(&mut ps, policy::FC, d, cfg.fc_dim, &mut rng)?;
    init_lstm(&mut ps, policy::LSTM, cfg.fc_dim, cfg.lstm_hidden, &mut rng)?;
    init_linear(&mut ps, policy::PI, cfg.lstm_hidden, NUM_ACTIONS, &mut rng)?;
    init_linear(&mut ps, policy::VALUE, cfg.lstm_hidden, 1, &mut rng)?;
    Ok(ps)
}

/// Per-episode network state on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeState {
    pub query: Var,
    pub lstm: LstmState,
}

#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub config: ModelConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Builds a model whose configuration matches `ps`.
    pub fn for_params(ps: &ParamSet) -> Result<Self> {
        Ok(Self {
            config: ModelConfig::infer(ps)?,
        })
    }

    /// Encodes the query and zeroes the recurrent state.
    pub fn begin(&self, tape: &mut Tape, p: &Bound, tokens: &[usize]) -> Result<EpisodeState> {
        Ok(EpisodeState {
            query: encode_query(tape, p, tokens)?,
            lstm: initial_state(tape, p)?,
        })
    }

    pub fn fuse(&self, tape: &mut Tape, p: &Bound, pooled: &[f64], query: Var) -> Result<Var> {
        if pooled.len() != self.config.feature_dim {
            return Err(Error::shape("fuse", &[pooled.len()], &[self.config.feature_dim]));
        }
        let x_m = tape.constant(Tensor::vector(pooled.to_vec()));
        match self.config.variant {
            Variant::GatedAttention => gated_fuse(tape, p, x_m, query),
            Variant::Concat => concat_fuse(tape, p, x_m, query),
        }
    }

    /// One decision step; advances `state.lstm`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, pooled: &[f64], state: &mut EpisodeState) -> Result<PolicyOutput> {
        let s = self.fuse(tape, p, pooled, state.query)?;
        let out = policy_forward(tape, p, s, state.lstm)?;
        state.lstm = out.state;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            query_hidden: 5,
            fc_dim: 6,
            lstm_hidden: 7,
            ..ModelConfig::new(variant, 3, 10)
        }
    }

    #[test]
    fn infer_round_trips() {
        for v in [Variant::GatedAttention, Variant::Concat] {
            let cfg = small(v);
            let ps = init_params(&cfg, 3).unwrap();
            assert_eq!(ModelConfig::infer(&ps).unwrap(), cfg);
        }
        let mut ps = init_params(&small(Variant::GatedAttention), 3).unwrap();
        ps.insert("extra", Tensor::scalar(1.0)).unwrap();
        assert!(ModelConfig::infer(&ps).is_err());
        assert!(ModelConfig::infer(&ParamSet::new()).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small(Variant::Concat);
        assert_eq!(init_params(&cfg, 1).unwrap().to_bytes(), init_params(&cfg, 1).unwrap().to_bytes());
        assert_ne!(init_params(&cfg, 1).unwrap().to_bytes(), init_params(&cfg, 2).unwrap().to_bytes());
    }

    #[test]
    fn step_is_pure() {
        let cfg = small(Variant::GatedAttention);
        let model = Model::new(cfg).unwrap();
        let ps = init_params(&cfg, 5).unwrap();
        let run = || {
            let mut t = Tape::new();
            let b = ps.bind_frozen(&mut t);
            let mut st = model.begin(&mut t, &b, &[1, 2, 3]).unwrap();
            let a = model.step(&mut t, &b, &[0.1, 0.2, 0.3], &mut st).unwrap();
            let b2 = model.step(&mut t, &b, &[0.3, 0.2, 0.1], &mut st).unwrap();
            (a.prob_values(&t), b2.prob_values(&t), b2.value_of(&t))
        };
        assert_eq!(run(), run());
        let mut t = Tape::new();
        let b = ps.bind_frozen(&mut t);
        let mut st = model.begin(&mut t, &b, &[1]).unwrap();
        assert!(model.step(&mut t, &b, &[0.0; 4], &mut st).is_err());
    }

    #[test]
    fn variant_names() {
        for v in [Variant::GatedAttention, Variant::Concat] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("gated".parse::<Variant>().is_err());
    }
}
