//! Central finite-difference check of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tripnet::fusion::{self, concat_fuse, encode_query, gated_fuse};
use tripnet::model::{init_params, Model, ModelConfig, Variant};
use tripnet::ndcore::layers::{gru_cell, init_gru, init_linear, init_lstm, linear, lstm_cell};
use tripnet::ndcore::{Bound, ParamSet, Tape, Tensor, Var};
use tripnet::policy::{self, episode_loss, policy_forward, LstmState, StepVars};
use tripnet::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const CASES: u64 = 20;
/// Denominator floor so that gradients within rounding of zero compare
/// absolutely.
pub const FLOOR: f64 = 1e-6;

type Build<'a> = dyn Fn(&mut Tape, &Bound, &[Var]) -> Result<Vec<Var>> + 'a;

pub struct Case {
    pub params: ParamSet,
    pub inputs: Vec<Tensor>,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product::<usize>().max(1);
    let data = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Replaces every parameter value with a fresh Gaussian draw.
fn randomize(ps: &ParamSet, rng: &mut ChaCha8Rng, scale: f64) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in ps.iter() {
        out.insert(name, normal(rng, t.shape(), scale)).unwrap();
    }
    out
}

fn weighted_loss(tape: &mut Tape, outs: &[Var], weights: &[Tensor]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&o, w) in outs.iter().zip(weights) {
        let wv = tape.constant(w.clone());
        let m = tape.mul(o, wv)?;
        let s = tape.sum(m);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one output"))
}

fn frozen_loss(case: &Case, weights: &[Tensor], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let bound = case.params.bind_frozen(&mut tape);
    let inputs: Vec<Var> = case.inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let outs = f(&mut tape, &bound, &inputs).unwrap();
    let l = weighted_loss(&mut tape, &outs, weights).unwrap();
    tape.value(l).data()[0]
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error between analytic and numeric gradients over
/// every parameter and input entry.
pub fn max_rel_error(case: &Case, seed: u64, f: &Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut tape = Tape::new();
    let bound = case.params.bind(&mut tape);
    let inputs: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let outs = f(&mut tape, &bound, &inputs).unwrap();
    let weights: Vec<Tensor> = outs
        .iter()
        .map(|&o| normal(&mut rng, &tape.shape(o).to_vec(), 1.0))
        .collect();
    let loss = weighted_loss(&mut tape, &outs, &weights).unwrap();
    tape.backward(loss).unwrap();
    let grads = bound.gradients(&tape);

    let mut worst = 0.0f64;
    for (name, value) in case.params.iter() {
        let analytic = grads.get(name).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; value.len()]);
        for i in 0..value.len() {
            let mut probe = Case {
                params: case.params.clone(),
                inputs: case.inputs.clone(),
            };
            probe.params.get_mut(name).unwrap().data_mut()[i] += STEP;
            let up = frozen_loss(&probe, &weights, f);
            probe.params.get_mut(name).unwrap().data_mut()[i] -= 2.0 * STEP;
            let down = frozen_loss(&probe, &weights, f);
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
        }
    }
    for (k, x) in case.inputs.iter().enumerate() {
        let analytic = tape.grad(inputs[k]).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; x.len()]);
        for i in 0..x.len() {
            let mut probe = Case {
                params: case.params.clone(),
                inputs: case.inputs.clone(),
            };
            probe.inputs[k].data_mut()[i] += STEP;
            let up = frozen_loss(&probe, &weights, f);
            probe.inputs[k].data_mut()[i] -= 2.0 * STEP;
            let down = frozen_loss(&probe, &weights, f);
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

const IN: usize = 4;
const HID: usize = 3;
const D: usize = 5;
const QH: usize = 3;

fn linear_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_linear(&mut ps, "lin", IN, HID, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[IN], 1.0)],
    }
}

fn gru_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_gru(&mut ps, "gru", IN, HID, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[IN], 1.0), normal(rng, &[HID], 0.7)],
    }
}

fn lstm_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_lstm(&mut ps, "lstm", IN, HID, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[IN], 1.0), normal(rng, &[HID], 0.7), normal(rng, &[HID], 1.0)],
    }
}

fn gated_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_linear(&mut ps, fusion::GATE, QH, D, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[D], 1.0), normal(rng, &[QH], 1.0)],
    }
}

fn concat_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_linear(&mut ps, fusion::SELF_GATE, D, D, rng).unwrap();
    init_linear(&mut ps, fusion::PROJ, D + QH, D, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[D], 1.0), normal(rng, &[QH], 1.0)],
    }
}

fn heads_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    init_linear(&mut ps, policy::FC, D, IN, rng).unwrap();
    init_lstm(&mut ps, policy::LSTM, IN, HID, rng).unwrap();
    init_linear(&mut ps, policy::PI, HID, 7, rng).unwrap();
    init_linear(&mut ps, policy::VALUE, HID, 1, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![normal(rng, &[D], 1.0), normal(rng, &[HID], 0.7), normal(rng, &[HID], 1.0)],
    }
}

fn query_case(rng: &mut ChaCha8Rng) -> Case {
    let mut ps = ParamSet::new();
    ps.insert(fusion::EMBED, normal(rng, &[6, IN], 1.0)).unwrap();
    init_gru(&mut ps, fusion::QUERY_GRU, IN, QH, rng).unwrap();
    Case {
        params: randomize(&ps, rng, 0.7),
        inputs: vec![],
    }
}

fn model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        feature_dim: D,
        vocab_size: 6,
        embed_dim: IN,
        query_hidden: QH,
        fc_dim: IN,
        lstm_hidden: HID,
    }
}

fn episode_case(rng: &mut ChaCha8Rng, variant: Variant) -> Case {
    let ps = init_params(&model_config(variant), rng.random()).unwrap();
    Case {
        params: randomize(&ps, rng, 0.5),
        inputs: vec![],
    }
}

fn build_linear(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![linear(t, p, "lin", x[0])?])
}

fn build_gru(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![gru_cell(t, p, "gru", x[0], x[1])?])
}

fn build_lstm(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    let (h, c) = lstm_cell(t, p, "lstm", x[0], x[1], x[2])?;
    Ok(vec![h, c])
}

fn build_gated(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![gated_fuse(t, p, x[0], x[1])?])
}

fn build_concat(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![concat_fuse(t, p, x[0], x[1])?])
}

fn build_heads(t: &mut Tape, p: &Bound, x: &[Var]) -> Result<Vec<Var>> {
    let out = policy_forward(t, p, x[0], LstmState { h: x[1], c: x[2] })?;
    let ent = out.entropy(t)?;
    Ok(vec![out.log_probs, out.probs, out.value, out.state.h, out.state.c, ent])
}

fn build_query(t: &mut Tape, p: &Bound, _: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![encode_query(t, p, &[1, 4, 2, 9])?])
}

/// Three-step episode through the whole network into the training loss.
fn episode_builder(variant: Variant, seed: u64) -> impl Fn(&mut Tape, &Bound, &[Var]) -> Result<Vec<Var>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooled: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..D).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let returns: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let adv: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..7)).collect();
    move |t: &mut Tape, p: &Bound, _: &[Var]| {
        let model = Model::new(model_config(variant))?;
        let mut state = model.begin(t, p, &[3, 1])?;
        let mut steps = Vec::new();
        for (x, &a) in pooled.iter().zip(&actions) {
            let out = model.step(t, p, x, &mut state)?;
            steps.push(StepVars {
                log_prob: t.pick(out.log_probs, a)?,
                entropy: out.entropy(t)?,
                value: out.value,
            });
        }
        let terms = episode_loss(t, &steps, &returns, &adv, 0.5, 0.5)?;
        Ok(vec![terms.total])
    }
}

/// Component name and the worst relative error over `CASES` seeded cases.
pub fn component(name: &str) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let err = match name {
            "linear" => max_rel_error(&linear_case(&mut rng), seed, &build_linear),
            "gru cell" => max_rel_error(&gru_case(&mut rng), seed, &build_gru),
            "lstm cell" => max_rel_error(&lstm_case(&mut rng), seed, &build_lstm),
            "gated fusion" => max_rel_error(&gated_case(&mut rng), seed, &build_gated),
            "concat fusion" => max_rel_error(&concat_case(&mut rng), seed, &build_concat),
            "policy/value heads" => max_rel_error(&heads_case(&mut rng), seed, &build_heads),
            "query encoder" => max_rel_error(&query_case(&mut rng), seed, &build_query),
            "episode loss (ga)" => {
                let case = episode_case(&mut rng, Variant::GatedAttention);
                max_rel_error(&case, seed, &episode_builder(Variant::GatedAttention, seed))
            }
            "episode loss (concat)" => {
                let case = episode_case(&mut rng, Variant::Concat);
                max_rel_error(&case, seed, &episode_builder(Variant::Concat, seed))
            }
            other => panic!("unknown component {other}"),
        };
        worst = worst.max(err);
    }
    worst
}

pub const COMPONENTS: [&str; 9] = [
    "linear",
    "gru cell",
    "lstm cell",
    "gated fusion",
    "concat fusion",
    "policy/value heads",
    "query encoder",
    "episode loss (ga)",
    "episode loss (concat)",
];
