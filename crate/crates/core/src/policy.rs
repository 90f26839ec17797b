//! Actor-critic head and the training objective.
//!
//! The network is `FC -> LSTM -> {policy logits, value}`. The objective per
//! episode, summed over steps:
//!
//! ```text
//! value loss   γ1 · Σ (R_t − v_t)²
//! policy loss  −Σ log π(a_t|s_t) · A_t − γ0 · Σ H(π(·|s_t))
//! total        policy loss + value loss
//! ```
//!
//! `R_t` are discounted returns and `A_t` generalized advantages, both
//! treated as constants.

use rand::Rng;

use crate::env::{ActionKind, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::ndcore::layers::{linear, lstm_cell};
use crate::ndcore::{Bound, Tape, Tensor, Var};

pub const FC: &str = "policy.fc";
pub const LSTM: &str = "policy.lstm";
pub const PI: &str = "policy.pi";
pub const VALUE: &str = "policy.v";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub beta: f64,
    /// Entropy weight.
    pub gamma0: f64,
    /// Value-loss weight.
    pub gamma1: f64,
    pub lr: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub workers: usize,
    pub t_max: usize,
    /// Global-norm gradient clip applied before each update.
    pub clip_norm: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            beta: 0.01,
            gamma0: 0.5,
            gamma1: 0.5,
            lr: 0.0005,
            discount: 0.99,
            gae_lambda: 0.95,
            workers: 8,
            t_max: 30,
            clip_norm: 40.0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("beta", self.beta), ("gamma0", self.gamma0), ("gamma1", self.gamma1)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [("discount", self.discount), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.workers == 0 || self.t_max == 0 {
            return Err(Error::Config("workers and t_max must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

/// Recurrent state carried across the steps of one episode.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Zero LSTM state sized from the bound parameters.
pub fn initial_state(tape: &mut Tape, p: &Bound) -> Result<LstmState> {
    let hidden = tape.shape(p.var(&format!("{LSTM}.U_i"))?)[0];
    Ok(LstmState {
        h: tape.constant(Tensor::zeros(&[hidden])),
        c: tape.constant(Tensor::zeros(&[hidden])),
    })
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// Log-probabilities over actions in `ActionKind` order.
    pub log_probs: Var,
    pub probs: Var,
    /// Scalar state value.
    pub value: Var,
    pub state: LstmState,
}

impl PolicyOutput {
    pub fn prob_values(&self, tape: &Tape) -> [f64; NUM_ACTIONS] {
        tape.value(self.probs).data().try_into().expect("seven actions")
    }

    pub fn value_of(&self, tape: &Tape) -> f64 {
        tape.value(self.value).data()[0]
    }

    /// Entropy `−Σ p log p` as a tape scalar.
    pub fn entropy(&self, tape: &mut Tape) -> Result<Var> {
        let plogp = tape.mul(self.probs, self.log_probs)?;
        let s = tape.sum(plogp);
        Ok(tape.neg(s))
    }
}

pub fn policy_forward(tape: &mut Tape, p: &Bound, s: Var, state: LstmState) -> Result<PolicyOutput> {
    let x = linear(tape, p, FC, s)?;
    let (h, c) = lstm_cell(tape, p, LSTM, x, state.h, state.c)?;
    let logits = linear(tape, p, PI, h)?;
    if tape.shape(logits) != [NUM_ACTIONS] {
        return Err(Error::shape("policy_forward", tape.shape(logits), &[NUM_ACTIONS]));
    }
    let log_probs = tape.log_softmax(logits)?;
    let probs = tape.softmax(logits)?;
    let v = linear(tape, p, VALUE, h)?;
    let value = tape.pick(v, 0)?;
    Ok(PolicyOutput {
        log_probs,
        probs,
        value,
        state: LstmState { h, c },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Categorical sample; used while training.
    Sample,
    /// Highest-probability action, first index on ties.
    Greedy,
}

pub fn sample_action(probs: &[f64], mode: SelectMode, rng: &mut impl Rng) -> Result<ActionKind> {
    if probs.len() != NUM_ACTIONS {
        return Err(Error::Invalid(format!("expected {NUM_ACTIONS} probabilities, got {}", probs.len())));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Invalid(format!("invalid action distribution {probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("action probabilities sum to {total}")));
    }
    let idx = match mode {
        SelectMode::Greedy => probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best }),
        SelectMode::Sample => {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            probs
                .iter()
                .position(|&p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        }
    };
    Ok(ActionKind::from_index(idx).expect("index below NUM_ACTIONS"))
}

/// `R_t = r_t + γ R_{t+1}` with zero after the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Generalized advantages with a zero terminal bootstrap.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::Invalid(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    let mut next_v = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
        next_v = values[t];
    }
    Ok(out)
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what}: lengths {a} and {b} differ")))
    }
}

pub fn value_loss(returns: &[f64], values: &[f64], gamma1: f64) -> Result<f64> {
    same_len(returns.len(), values.len(), "value_loss")?;
    Ok(gamma1 * returns.iter().zip(values).map(|(r, v)| (r - v).powi(2)).sum::<f64>())
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn policy_loss(log_probs: &[f64], advantages: &[f64], entropies: &[f64], gamma0: f64) -> Result<f64> {
    same_len(log_probs.len(), advantages.len(), "policy_loss")?;
    same_len(log_probs.len(), entropies.len(), "policy_loss")?;
    let pg: f64 = log_probs.iter().zip(advantages).map(|(l, a)| l * a).sum();
    Ok(-pg - gamma0 * entropies.iter().sum::<f64>())
}

pub fn total_loss(policy_loss: f64, value_loss: f64) -> f64 {
    policy_loss + value_loss
}

/// Tape handles recorded for one step of an episode.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// Log-probability of the action taken.
    pub log_prob: Var,
    pub entropy: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Builds the episode loss on `tape`. Returns and advantages enter as
/// constants, so no gradient reaches them.
pub fn episode_loss(
    tape: &mut Tape,
    steps: &[StepVars],
    returns: &[f64],
    advantages: &[f64],
    gamma0: f64,
    gamma1: f64,
) -> Result<LossTerms> {
    if steps.is_empty() {
        return Err(Error::Invalid("empty trajectory".into()));
    }
    same_len(steps.len(), returns.len(), "episode_loss")?;
    same_len(steps.len(), advantages.len(), "episode_loss")?;
    let mut pg_terms = Vec::with_capacity(steps.len());
    let mut ent_terms = Vec::with_capacity(steps.len());
    let mut v_terms = Vec::with_capacity(steps.len());
    for ((s, &r), &a) in steps.iter().zip(returns).zip(advantages) {
        pg_terms.push(tape.scale(s.log_prob, -a));
        ent_terms.push(s.entropy);
        let neg_v = tape.neg(s.value);
        let err = tape.shift(neg_v, r);
        v_terms.push(tape.mul(err, err)?);
    }
    let pg = sum_all(tape, &pg_terms)?;
    let ent = sum_all(tape, &ent_terms)?;
    let sq = sum_all(tape, &v_terms)?;
    let ent_bonus = tape.scale(ent, -gamma0);
    let policy = tape.add(pg, ent_bonus)?;
    let value = tape.scale(sq, gamma1);
    let total = tape.add(policy, value)?;
    Ok(LossTerms {
        total,
        policy: tape.value(policy).data()[0],
        value: tape.value(value).data()[0],
        entropy: tape.value(ent).data()[0],
    })
}

fn sum_all(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}
