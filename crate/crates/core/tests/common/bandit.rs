//! One-step bandit driven through the actor-critic update path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tripnet::env::{ActionKind, NUM_ACTIONS};
use tripnet::ndcore::layers::{init_linear, init_lstm};
use tripnet::ndcore::optim::clip_grad_norm;
use tripnet::ndcore::{ParamSet, SharedParams, Tape, Tensor};
use tripnet::policy::{
    self, discounted_returns, episode_loss, gae, initial_state, policy_forward, sample_action, SelectMode, StepVars,
    TrainHyper,
};

pub const REWARDED: ActionKind = ActionKind::FwdJ;
pub const UPDATES: usize = 500;

pub fn bandit_hyper() -> TrainHyper {
    TrainHyper {
        gamma0: 0.01,
        lr: 0.1,
        ..TrainHyper::default()
    }
}

fn params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    init_linear(&mut ps, policy::FC, 8, 16, &mut rng).unwrap();
    init_lstm(&mut ps, policy::LSTM, 16, 16, &mut rng).unwrap();
    init_linear(&mut ps, policy::PI, 16, NUM_ACTIONS, &mut rng).unwrap();
    init_linear(&mut ps, policy::VALUE, 16, 1, &mut rng).unwrap();
    ps
}

fn state_input() -> Tensor {
    Tensor::vector((0..8).map(|i| (i as f64 * 0.7).sin()).collect())
}

/// Probability of the rewarded action under `ps`.
pub fn rewarded_prob(ps: &ParamSet) -> f64 {
    let mut tape = Tape::new();
    let p = ps.bind_frozen(&mut tape);
    let s = tape.constant(state_input());
    let st = initial_state(&mut tape, &p).unwrap();
    let out = policy_forward(&mut tape, &p, s, st).unwrap();
    out.prob_values(&tape)[REWARDED.index()]
}

/// Probability of the rewarded action after each update.
pub fn run(seed: u64, hyper: &TrainHyper, updates: usize) -> Vec<f64> {
    let global = SharedParams::new(params(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut curve = Vec::with_capacity(updates);
    for _ in 0..updates {
        let local = global.snapshot();
        let mut tape = Tape::new();
        let p = local.bind(&mut tape);
        let s = tape.constant(state_input());
        let st = initial_state(&mut tape, &p).unwrap();
        let out = policy_forward(&mut tape, &p, s, st).unwrap();
        let probs = out.prob_values(&tape);
        let a = sample_action(&probs, SelectMode::Sample, &mut rng).unwrap();
        let r = if a == REWARDED { 1.0 } else { 0.0 };
        let v = out.value_of(&tape);
        let returns = discounted_returns(&[r], hyper.discount);
        let adv = gae(&[r], &[v], hyper.discount, hyper.gae_lambda).unwrap();
        let step = StepVars {
            log_prob: tape.pick(out.log_probs, a.index()).unwrap(),
            entropy: out.entropy(&mut tape).unwrap(),
            value: out.value,
        };
        let loss = episode_loss(&mut tape, &[step], &returns, &adv, hyper.gamma0, hyper.gamma1).unwrap();
        tape.backward(loss.total).unwrap();
        let mut grads = p.gradients(&tape);
        clip_grad_norm(&mut grads, hyper.clip_norm);
        global.apply_gradients(&grads, hyper.lr, false).unwrap();
        curve.push(rewarded_prob(&global.snapshot()));
    }
    curve
}
